//! Detector adapters and per-scene verdicts.

pub mod remote;
pub mod scripted;

use std::cmp::Ordering;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Detection, EvalOutcome, SceneSample, GT_CLASS};
use crate::RealBox;

pub use remote::RemoteDetector;
pub use scripted::{Condition, Op, ScriptOutcome, ScriptRule, ScriptedDetector};

/// Thresholds deciding which detections count as covering the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub score_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_threshold: 0.5,
            score_threshold: 0.5,
        }
    }
}

impl MatchConfig {
    pub fn new(iou_threshold: f64, score_threshold: f64) -> Result<Self> {
        let c = MatchConfig {
            iou_threshold,
            score_threshold,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::config(format!("iou_threshold {} not in (0, 1]", self.iou_threshold)));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::config(format!("score_threshold {} not in [0, 1]", self.score_threshold)));
        }
        Ok(())
    }
}

/// Decision order among surviving detections: higher score, then larger
/// IoU, then the lexicographically smaller label.
fn precedence(a: &(f64, &Detection), b: &(f64, &Detection)) -> Ordering {
    b.1.score
        .total_cmp(&a.1.score)
        .then(b.0.total_cmp(&a.0))
        .then_with(|| a.1.class_label.cmp(&b.1.class_label))
}

/// Verdict of the single top-ranked detection overlapping the object.
pub fn evaluate_sample(dets: &[Detection], sample: &SceneSample, cfg: &MatchConfig) -> EvalOutcome {
    let gt: RealBox = sample.gt_bbox().cast();
    let best = dets
        .iter()
        .filter(|d| d.score >= cfg.score_threshold)
        .map(|d| (d.bbox.iou::<f64>(&gt), d))
        .filter(|(iou, _)| *iou >= cfg.iou_threshold)
        .min_by(precedence);
    match best {
        None => EvalOutcome::FalseNegative,
        Some((_, d)) if d.class_label == sample.gt_class() => EvalOutcome::Correct,
        Some((_, d)) => EvalOutcome::WrongClass {
            label: d.class_label.clone(),
        },
    }
}

/// An object detector. Failures are plain messages; the adapter attaches
/// the detector id.
pub trait Detector: Send + Sync {
    fn detector_id(&self) -> &str;

    fn class_vocabulary(&self) -> &[String];

    fn detect(&self, scene: &SceneSample) -> std::result::Result<Vec<Detection>, String>;
}

/// Counting gate bounding concurrent calls into one detector.
struct Gate {
    max: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.max {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

/// A detector plus the policy the evaluator applies to it.
#[derive(Clone)]
pub struct DetectorAdapter {
    detector: Arc<dyn Detector>,
    pub score_threshold: f64,
    gate: Arc<Gate>,
}

impl fmt::Debug for DetectorAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DetectorAdapter")
            .field("detector_id", &self.detector_id())
            .field("score_threshold", &self.score_threshold)
            .field("max_in_flight", &self.gate.max)
            .finish()
    }
}

impl DetectorAdapter {
    pub fn new(detector: Arc<dyn Detector>, score_threshold: f64, max_in_flight: usize) -> Result<Self> {
        let id = detector.detector_id().to_string();
        if !detector.class_vocabulary().iter().any(|c| c == GT_CLASS) {
            return Err(Error::config(format!("detector `{id}` cannot predict `{GT_CLASS}`")));
        }
        if !(0.0..=1.0).contains(&score_threshold) {
            return Err(Error::config(format!("detector `{id}`: score_threshold {score_threshold} not in [0, 1]")));
        }
        if max_in_flight == 0 {
            return Err(Error::config(format!("detector `{id}`: max_in_flight must be positive")));
        }
        Ok(DetectorAdapter {
            detector,
            score_threshold,
            gate: Arc::new(Gate {
                max: max_in_flight,
                busy: Mutex::new(0),
                freed: Condvar::new(),
            }),
        })
    }

    pub fn detector_id(&self) -> &str {
        self.detector.detector_id()
    }

    pub fn class_vocabulary(&self) -> &[String] {
        self.detector.class_vocabulary()
    }

    pub fn max_in_flight(&self) -> usize {
        self.gate.max
    }
}

/// Runs the detector on one scene; detections below the adapter's score
/// threshold are dropped.
pub fn run_detector(adapter: &DetectorAdapter, scene: &SceneSample) -> Result<Vec<Detection>> {
    let id = adapter.detector_id();
    let dets = {
        let _g = adapter.gate.enter();
        adapter.detector.detect(scene).map_err(|m| Error::detector(id, m))?
    };
    for d in &dets {
        d.validate().map_err(|e| Error::detector(id, e.to_string()))?;
    }
    Ok(dets.into_iter().filter(|d| d.score >= adapter.score_threshold).collect())
}

/// Labels the bundled detectors may emit.
pub fn default_vocabulary() -> Vec<String> {
    [
        "person",
        "bicycle",
        "car",
        "motorcycle",
        "airplane",
        "bus",
        "train",
        "truck",
        "boat",
        "traffic light",
    ]
    .map(String::from)
    .to_vec()
}

/// How to build a detector, as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorBackend {
    Scripted {
        #[serde(default)]
        rules: Vec<ScriptRule>,
    },
    Remote {
        /// Literal endpoint URL.
        #[serde(default)]
        endpoint: Option<String>,
        /// Environment variable holding the endpoint URL.
        #[serde(default)]
        endpoint_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub id: String,
    #[serde(default)]
    pub score_threshold: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub vocabulary: Option<Vec<String>>,
    pub backend: DetectorBackend,
}

impl DetectorSpec {
    pub fn build(&self) -> Result<DetectorAdapter> {
        let vocab = self.vocabulary.clone().unwrap_or_else(default_vocabulary);
        let det: Arc<dyn Detector> = match &self.backend {
            DetectorBackend::Scripted { rules } => Arc::new(ScriptedDetector::new(&self.id, vocab, rules.clone())?),
            DetectorBackend::Remote {
                endpoint,
                endpoint_env,
                timeout_ms,
            } => {
                let url = match (endpoint, endpoint_env) {
                    (Some(u), _) => u.clone(),
                    (None, Some(var)) => std::env::var(var).map_err(|_| {
                        Error::config(format!("detector `{}`: environment variable `{var}` is not set", self.id))
                    })?,
                    (None, None) => {
                        return Err(Error::config(format!(
                            "detector `{}` needs `endpoint` or `endpoint_env`",
                            self.id
                        )))
                    }
                };
                Arc::new(RemoteDetector::new(&self.id, url, vocab, Duration::from_millis(*timeout_ms)))
            }
        };
        DetectorAdapter::new(det, self.score_threshold, self.max_in_flight)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AttributeVector, Background, ObjectColor};
    use crate::PixelBox;
    use image::RgbImage;

    pub(crate) fn sample() -> SceneSample {
        let attrs = AttributeVector {
            object_type: "sedan".into(),
            object_color: ObjectColor::Original,
            orientation_deg: 0.0,
            scale_factor: 1.0,
            location: [0.5, 0.5],
            background: Background::Plain("grey".into()),
        };
        SceneSample::new(RgbImage::new(100, 100), PixelBox::new(10, 10, 50, 50), attrs, 0, vec![]).unwrap()
    }

    fn det(label: &str, score: f64, b: [f64; 4]) -> Detection {
        Detection::new(label, score, RealBox::from(b))
    }

    #[test]
    fn exact_match_is_correct() {
        let s = sample();
        let d = [det("car", 0.9, [10.0, 10.0, 50.0, 50.0])];
        assert_eq!(evaluate_sample(&d, &s, &MatchConfig::default()), EvalOutcome::Correct);
    }

    #[test]
    fn highest_score_decides() {
        let s = sample();
        let d = [det("car", 0.6, [10.0, 10.0, 50.0, 50.0]), det("boat", 0.8, [10.0, 10.0, 50.0, 50.0])];
        assert_eq!(
            evaluate_sample(&d, &s, &MatchConfig::default()),
            EvalOutcome::WrongClass { label: "boat".into() }
        );
    }

    #[test]
    fn ties_prefer_iou_then_label() {
        let s = sample();
        let tight = [10.0, 10.0, 50.0, 50.0];
        let loose = [10.0, 10.0, 50.0, 60.0];
        let d = [det("truck", 0.8, loose), det("bus", 0.8, tight)];
        assert_eq!(
            evaluate_sample(&d, &s, &MatchConfig::default()),
            EvalOutcome::WrongClass { label: "bus".into() }
        );
        let d = [det("truck", 0.8, tight), det("bus", 0.8, tight)];
        assert_eq!(
            evaluate_sample(&d, &s, &MatchConfig::default()),
            EvalOutcome::WrongClass { label: "bus".into() }
        );
    }

    #[test]
    fn low_score_or_far_box_is_a_miss() {
        let s = sample();
        assert_eq!(
            evaluate_sample(&[det("car", 0.4, [10.0, 10.0, 50.0, 50.0])], &s, &MatchConfig::default()),
            EvalOutcome::FalseNegative
        );
        assert_eq!(
            evaluate_sample(&[det("car", 0.9, [60.0, 60.0, 90.0, 90.0])], &s, &MatchConfig::default()),
            EvalOutcome::FalseNegative
        );
    }

    #[test]
    fn adapter_requires_the_target_class() {
        assert!(ScriptedDetector::new("x", vec!["boat".into()], vec![]).is_err());
    }
}
