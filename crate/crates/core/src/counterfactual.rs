//! Search for small attribute edits that make a failing subgroup pass.
//!
//! Edits are enumerated in a fixed order: single-attribute edits before
//! pairs, attributes in canonical order, steps in the order configured. The
//! first edit whose re-evaluated error rate is at most the flip threshold is
//! returned. Every evaluation lands in the results store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detect::DetectorAdapter;
use crate::error::{Error, Result};
use crate::num::{format_percent, format_ratio, rate_at_least, rate_at_most, Rate};
use crate::palette;
use crate::scene::{AttrName, AttrValue, AttributeVector, Background, ObjectColor, SubgroupSpec};
use crate::sweep::aggregate::{aggregate, Counts};
use crate::sweep::store::key_of;
use crate::sweep::Evaluator;

/// Allowed edits per attribute. Numeric attributes take additive steps,
/// categorical ones are replaced by substitutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub scale_factor: Vec<f64>,
    pub orientation_deg: Vec<f64>,
    pub object_color: Vec<ObjectColor>,
    pub background: Vec<Background>,
    pub object_type: Vec<String>,
    /// Offsets added to both location coordinates.
    pub location: Vec<[f64; 2]>,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            scale_factor: vec![-0.5, 0.5, -1.0, 1.0, -2.0, 2.0],
            orientation_deg: vec![-10.0, 10.0],
            object_color: palette::names().map(ObjectColor::named).collect(),
            background: palette::names().map(|n| Background::Plain(n.to_string())).collect(),
            object_type: Vec::new(),
            location: Vec::new(),
        }
    }
}

/// One change to one attribute.
#[derive(Debug, Clone, PartialEq)]
pub enum Change {
    Step(f64),
    Offset([f64; 2]),
    Set(AttrValue),
}

impl Change {
    fn apply(&self, name: AttrName, current: &AttrValue) -> Option<AttrValue> {
        let out = match (self, current) {
            (Change::Step(d), AttrValue::Number(x)) => AttrValue::Number(x + d),
            (Change::Offset(d), AttrValue::Pair(p)) => AttrValue::Pair([p[0] + d[0], p[1] + d[1]]),
            (Change::Set(v), cur) if v != cur => v.clone(),
            _ => return None,
        };
        // out-of-range results are discarded
        let probe = AttributeVector {
            object_type: "probe".into(),
            object_color: ObjectColor::Original,
            orientation_deg: 0.0,
            scale_factor: 1.0,
            location: [0.5, 0.5],
            background: Background::Plain("grey".into()),
        };
        probe.with(name, out.clone()).ok()?.validate().ok()?;
        Some(out)
    }

    fn to_json(&self) -> Value {
        match self {
            Change::Step(d) => Value::from(*d),
            Change::Offset(d) => Value::from(vec![d[0], d[1]]),
            Change::Set(v) => v.to_json(),
        }
    }
}

/// Edits of one or two attributes, as `(attribute, change)` pairs.
pub type Edit = Vec<(AttrName, Change)>;

pub fn edit_json(edit: &Edit) -> BTreeMap<String, Value> {
    edit.iter().map(|(a, c)| (a.as_str().to_string(), c.to_json())).collect()
}

impl PerturbationSpec {
    pub fn changes(&self, name: AttrName) -> Vec<Change> {
        match name {
            AttrName::ScaleFactor => self.scale_factor.iter().map(|d| Change::Step(*d)).collect(),
            AttrName::Orientation => self.orientation_deg.iter().map(|d| Change::Step(*d)).collect(),
            AttrName::ObjectColor => self.object_color.iter().map(|c| Change::Set(AttrValue::Color(c.clone()))).collect(),
            AttrName::Background => self
                .background
                .iter()
                .map(|b| Change::Set(AttrValue::Background(b.clone())))
                .collect(),
            AttrName::ObjectType => self.object_type.iter().map(|t| Change::Set(AttrValue::Text(t.clone()))).collect(),
            AttrName::Location => self.location.iter().map(|d| Change::Offset(*d)).collect(),
        }
    }
}

/// Valid edits of exactly `order` of the given attributes, each applied to
/// `values`, paired with the edited values.
fn edits_of(
    values: &BTreeMap<AttrName, AttrValue>,
    spec: &PerturbationSpec,
    order: usize,
) -> Result<Vec<(Edit, BTreeMap<AttrName, AttrValue>)>> {
    if !(1..=2).contains(&order) {
        return Err(Error::config(format!("neighbor order must be 1 or 2, got {order}")));
    }
    let attrs: Vec<AttrName> = AttrName::ALL.into_iter().filter(|a| values.contains_key(a)).collect();
    let single = |a: AttrName| -> Vec<((AttrName, Change), AttrValue)> {
        let mut seen: Vec<AttrValue> = Vec::new();
        spec.changes(a)
            .into_iter()
            .filter_map(|c| {
                let v = c.apply(a, &values[&a])?;
                if seen.contains(&v) {
                    return None;
                }
                seen.push(v.clone());
                Some(((a, c), v))
            })
            .collect()
    };
    let mut out = Vec::new();
    if order == 1 {
        for a in &attrs {
            for (ch, v) in single(*a) {
                let mut m = values.clone();
                m.insert(*a, v);
                out.push((vec![ch], m));
            }
        }
    } else {
        for (i, a) in attrs.iter().enumerate() {
            for b in &attrs[i + 1..] {
                let sb = single(*b);
                for (cha, va) in single(*a) {
                    for (chb, vb) in &sb {
                        let mut m = values.clone();
                        m.insert(*a, va.clone());
                        m.insert(*b, vb.clone());
                        out.push((vec![cha.clone(), chb.clone()], m));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Distinct vectors differing from `v` in exactly `order` attributes.
pub fn neighbors(v: &AttributeVector, spec: &PerturbationSpec, order: usize) -> Result<Vec<AttributeVector>> {
    let values: BTreeMap<AttrName, AttrValue> = AttrName::ALL.into_iter().map(|a| (a, v.get(a))).collect();
    let mut out: Vec<AttributeVector> = Vec::new();
    for (_, m) in edits_of(&values, spec, order)? {
        let mut n = v.clone();
        for (a, val) in m {
            n = n.with(a, val)?;
        }
        if !out.contains(&n) {
            out.push(n);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub n_samples: u64,
    pub n_errors: u64,
    /// Exact `errors/samples`, reduced.
    pub error_rate: String,
    pub percent: String,
}

impl RateSummary {
    fn from_counts(c: &Counts) -> Option<Self> {
        (c.n_samples > 0).then(|| {
            let r = Rate::new(c.n_errors, c.n_samples);
            RateSummary {
                n_samples: c.n_samples,
                n_errors: c.n_errors,
                error_rate: format_ratio(&r),
                percent: format_percent(&r),
            }
        })
    }

    pub fn rate(&self) -> Rate {
        Rate::new(self.n_errors, self.n_samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub source_subgroup: SubgroupSpec,
    pub detector_id: String,
    pub before: RateSummary,
    /// `"flipped"` or `"none found"`.
    pub status: String,
    pub perturbation: Option<BTreeMap<String, Value>>,
    pub order: Option<usize>,
    pub flipped_subgroup: Option<SubgroupSpec>,
    pub after: Option<RateSummary>,
    pub seeds_evaluated: Vec<u64>,
    pub neighbors_evaluated: usize,
    pub budget: usize,
    pub flip_threshold: f64,
}

impl FlipReport {
    pub fn found(&self) -> bool {
        self.perturbation.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipConfig {
    pub flip_threshold: f64,
    pub budget: usize,
    pub tau_high: f64,
    pub max_order: usize,
}

impl Default for FlipConfig {
    fn default() -> Self {
        FlipConfig {
            flip_threshold: 3.0 / 16.0,
            budget: 200,
            tau_high: 0.9,
            max_order: 2,
        }
    }
}

/// Looks for the first edit of the subgroup's pinned attributes that brings
/// `detector`'s error rate down to `cfg.flip_threshold`.
pub fn find_flip(
    eval: &Evaluator<'_>,
    subgroup: &SubgroupSpec,
    detector: &DetectorAdapter,
    spec: &PerturbationSpec,
    cfg: &FlipConfig,
) -> Result<FlipReport> {
    if !(0.0..1.0).contains(&cfg.flip_threshold) {
        return Err(Error::config(format!("flip_threshold {} not in [0, 1)", cfg.flip_threshold)));
    }
    let det_id = detector.detector_id().to_string();
    let snapshot = eval.store.snapshot();
    let before = aggregate(&snapshot, subgroup, &det_id)?;
    if !rate_at_least(&before.error_rate, cfg.tau_high) {
        return Err(Error::Precondition(format!(
            "subgroup {} has error rate {} for `{det_id}`, below tau_high {}",
            subgroup.label(),
            format_percent(&before.error_rate),
            cfg.tau_high
        )));
    }
    let mut members: Vec<AttributeVector> = Vec::new();
    for (r, _) in crate::sweep::aggregate::matching(&snapshot, subgroup, &det_id) {
        if !members.contains(&r.attributes) {
            members.push(r.attributes.clone());
        }
    }
    let seeds = subgroup.seeds.clone();
    let mut report = FlipReport {
        source_subgroup: subgroup.clone(),
        detector_id: det_id.clone(),
        before: RateSummary::from_counts(&Counts {
            n_samples: before.n_samples,
            n_errors: before.n_errors,
            wrong: Default::default(),
        })
        .expect("nonempty subgroup"),
        status: "none found".into(),
        perturbation: None,
        order: None,
        flipped_subgroup: None,
        after: None,
        seeds_evaluated: seeds.clone(),
        neighbors_evaluated: 0,
        budget: cfg.budget,
        flip_threshold: cfg.flip_threshold,
    };

    for order in 1..=cfg.max_order.min(2) {
        for (edit, fixed) in edits_of(&subgroup.fixed, spec, order)? {
            if report.neighbors_evaluated >= cfg.budget {
                return Ok(report);
            }
            let mut targets: Vec<AttributeVector> = Vec::new();
            for m in &members {
                let mut v = m.clone();
                for (a, val) in &fixed {
                    v = v.with(*a, val.clone())?;
                }
                if v.validate().is_ok() && !targets.contains(&v) {
                    targets.push(v);
                }
            }
            if targets.is_empty() {
                continue;
            }
            report.neighbors_evaluated += 1;
            let units: Vec<(AttributeVector, u64)> =
                targets.iter().flat_map(|t| seeds.iter().map(move |s| (t.clone(), *s))).collect();
            eval.run_units(&units, std::slice::from_ref(detector), None)?;
            let snap = eval.store.snapshot();
            let wanted: std::collections::HashSet<_> = units.iter().map(|(v, s)| key_of(v, *s, &det_id)).collect();
            let mut counts = Counts::default();
            for r in snap.iter().filter(|r| wanted.contains(&r.key())) {
                if let Some(o) = r.outcome() {
                    counts.add(o);
                }
            }
            let Some(after) = RateSummary::from_counts(&counts) else { continue };
            if rate_at_most(&after.rate(), cfg.flip_threshold) {
                report.status = "flipped".into();
                report.perturbation = Some(edit_json(&edit));
                report.order = Some(order);
                report.flipped_subgroup = Some(SubgroupSpec::new(fixed, subgroup.marginalized.clone(), seeds.clone())?);
                report.after = Some(after);
                return Ok(report);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> AttributeVector {
        AttributeVector {
            object_type: "sedan".into(),
            object_color: ObjectColor::named("pink"),
            orientation_deg: -80.0,
            scale_factor: 6.0,
            location: [0.5, 0.5],
            background: Background::Plain("grey".into()),
        }
    }

    fn only(name: AttrName, spec: PerturbationSpec) -> PerturbationSpec {
        let mut s = PerturbationSpec {
            scale_factor: vec![],
            orientation_deg: vec![],
            object_color: vec![],
            background: vec![],
            object_type: vec![],
            location: vec![],
        };
        match name {
            AttrName::Orientation => s.orientation_deg = spec.orientation_deg,
            AttrName::ObjectColor => s.object_color = spec.object_color,
            _ => unreachable!(),
        }
        s
    }

    #[test]
    fn rotation_step() {
        let spec = only(
            AttrName::Orientation,
            PerturbationSpec {
                orientation_deg: vec![10.0],
                ..Default::default()
            },
        );
        let n = neighbors(&v(), &spec, 1).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].orientation_deg, -70.0);
    }

    #[test]
    fn color_substitute() {
        let spec = only(
            AttrName::ObjectColor,
            PerturbationSpec {
                object_color: vec![ObjectColor::named("black")],
                ..Default::default()
            },
        );
        let n = neighbors(&v(), &spec, 1).unwrap();
        assert_eq!(n[0].object_color, ObjectColor::named("black"));
    }

    #[test]
    fn out_of_range_is_discarded() {
        let mut a = v();
        a.scale_factor = 1.0;
        a.orientation_deg = 175.0;
        let spec = PerturbationSpec {
            object_color: vec![],
            background: vec![],
            ..Default::default()
        };
        let n = neighbors(&a, &spec, 1).unwrap();
        // scale: +0.5, +1, +2 survive; angle: -10 survives
        assert_eq!(n.len(), 4);
        assert!(neighbors(&a, &spec, 3).is_err());
    }

    #[test]
    fn order_two_is_the_pair_product() {
        let spec = PerturbationSpec::default();
        let n1 = neighbors(&v(), &spec, 1).unwrap();
        let n2 = neighbors(&v(), &spec, 2).unwrap();
        // scale 6, angle 2, color 10 (pink excluded), background 10 (grey excluded)
        assert_eq!(n1.len(), 6 + 2 + 10 + 10);
        assert_eq!(n2.len(), 6 * 2 + 6 * 10 + 6 * 10 + 2 * 10 + 2 * 10 + 10 * 10);
    }
}
