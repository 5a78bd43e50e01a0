//! Rule-table mock detector.
//!
//! Rules are tried in order; the first whose conditions all hold decides the
//! output. A scene no rule matches gets a perfect `car` detection on its
//! ground-truth box.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Detector;
use crate::error::{Error, Result};
use crate::scene::{AttrName, AttrValue, AttributeVector, Detection, SceneSample, GT_CLASS};
use crate::RealBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
}

/// `attr op value`. `attr` is an attribute name or `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub attr: String,
    pub op: Op,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
enum Subject {
    Attr(AttrName),
    Seed,
}

fn subject(attr: &str) -> Result<Subject> {
    if attr == "seed" {
        Ok(Subject::Seed)
    } else {
        Ok(Subject::Attr(attr.parse()?))
    }
}

fn operand(name: AttrName, v: &Value) -> Result<AttrValue> {
    match v {
        Value::String(s) => AttrValue::parse(name, s),
        other => AttrValue::from_json(name, other),
    }
}

impl Condition {
    pub fn new(attr: &str, op: Op, value: impl Into<Value>) -> Self {
        Condition {
            attr: attr.to_string(),
            op,
            value: value.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let subj = subject(&self.attr)?;
        let values: Vec<&Value> = match (&self.op, &self.value) {
            (Op::In, Value::Array(a)) => a.iter().collect(),
            (Op::In, _) => return Err(Error::config(format!("`in` needs a list for `{}`", self.attr))),
            (_, v) => vec![v],
        };
        for v in values {
            match subj {
                Subject::Seed => {
                    v.as_u64().ok_or_else(|| Error::config(format!("seed condition needs integers, got {v}")))?;
                }
                Subject::Attr(name) => {
                    let parsed = operand(name, v)?;
                    let ordered = matches!(self.op, Op::Lt | Op::Le | Op::Gt | Op::Ge);
                    if ordered && !matches!(parsed, AttrValue::Number(_)) {
                        return Err(Error::config(format!("`{}` cannot be compared with {:?}", self.attr, self.op)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn holds(&self, attrs: &AttributeVector, seed: u64) -> bool {
        let (lhs, parse): (AttrValue, Box<dyn Fn(&Value) -> Option<AttrValue>>) = match subject(&self.attr) {
            Ok(Subject::Seed) => (
                AttrValue::Number(seed as f64),
                Box::new(|v: &Value| v.as_u64().map(|s| AttrValue::Number(s as f64))),
            ),
            Ok(Subject::Attr(name)) => (attrs.get(name), Box::new(move |v: &Value| operand(name, v).ok())),
            Err(_) => return false,
        };
        let cmp = |rhs: &AttrValue| match (&lhs, rhs) {
            (AttrValue::Number(a), AttrValue::Number(b)) => a.partial_cmp(b),
            (a, b) => (a == b).then_some(std::cmp::Ordering::Equal),
        };
        match self.op {
            Op::In => self
                .value
                .as_array()
                .is_some_and(|a| a.iter().filter_map(|v| parse(v)).any(|r| lhs == r)),
            op => {
                let Some(rhs) = parse(&self.value) else { return false };
                let ord = cmp(&rhs);
                match op {
                    Op::Eq => lhs == rhs,
                    Op::Ne => lhs != rhs,
                    Op::Lt => ord.is_some_and(|o| o.is_lt()),
                    Op::Le => ord.is_some_and(|o| o.is_le()),
                    Op::Gt => ord.is_some_and(|o| o.is_gt()),
                    Op::Ge => ord.is_some_and(|o| o.is_ge()),
                    Op::In => unreachable!(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptOutcome {
    /// One detection on the ground-truth box.
    Detect { label: String, score: f64 },
    /// No detections at all.
    Miss,
    /// The detector call fails.
    Fail { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub when: Vec<Condition>,
    pub then: ScriptOutcome,
}

impl ScriptRule {
    pub fn new(when: Vec<Condition>, then: ScriptOutcome) -> Self {
        ScriptRule { when, then }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedDetector {
    id: String,
    vocabulary: Vec<String>,
    rules: Vec<ScriptRule>,
}

impl ScriptedDetector {
    pub fn new(id: impl Into<String>, vocabulary: Vec<String>, rules: Vec<ScriptRule>) -> Result<Self> {
        let id = id.into();
        let knows = |l: &str| vocabulary.iter().any(|v| v == l);
        if !knows(GT_CLASS) {
            return Err(Error::config(format!("detector `{id}` cannot predict `{GT_CLASS}`")));
        }
        for r in &rules {
            for c in &r.when {
                c.validate()?;
            }
            if let ScriptOutcome::Detect { label, score } = &r.then {
                if !knows(label) {
                    return Err(Error::config(format!("detector `{id}`: label `{label}` not in its vocabulary")));
                }
                if !(0.0..=1.0).contains(score) {
                    return Err(Error::config(format!("detector `{id}`: score {score} not in [0, 1]")));
                }
            }
        }
        Ok(ScriptedDetector { id, vocabulary, rules })
    }

    /// Detector that is right on every scene.
    pub fn always_correct(id: impl Into<String>) -> Self {
        ScriptedDetector::new(id, super::default_vocabulary(), vec![]).expect("default vocabulary has the target")
    }

    /// The outcome the rule table assigns to `(attrs, seed)`.
    pub fn outcome_for(&self, attrs: &AttributeVector, seed: u64) -> ScriptOutcome {
        self.rules
            .iter()
            .find(|r| r.when.iter().all(|c| c.holds(attrs, seed)))
            .map(|r| r.then.clone())
            .unwrap_or(ScriptOutcome::Detect {
                label: GT_CLASS.to_string(),
                score: 1.0,
            })
    }
}

impl Detector for ScriptedDetector {
    fn detector_id(&self) -> &str {
        &self.id
    }

    fn class_vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn detect(&self, scene: &SceneSample) -> std::result::Result<Vec<Detection>, String> {
        match self.outcome_for(scene.attributes(), scene.seed()) {
            ScriptOutcome::Detect { label, score } => {
                let b: RealBox = scene.gt_bbox().cast();
                Ok(vec![Detection::new(label, score, b)])
            }
            ScriptOutcome::Miss => Ok(vec![]),
            ScriptOutcome::Fail { message } => Err(message),
        }
    }
}
