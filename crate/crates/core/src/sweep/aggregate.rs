//! Subgroup statistics over a store snapshot, in exact integer arithmetic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;

use super::store::CellResult;
use crate::error::{Error, Result};
use crate::num::{mean_rate, rate_at_least, rate_at_most};
use crate::scene::{AttrName, AttrValue, AttributeVector, EvalOutcome, SubgroupResult, SubgroupSpec};

/// Raw counts behind a [`SubgroupResult`]. Counts from disjoint record sets
/// merge by addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counts {
    pub n_samples: u64,
    pub n_errors: u64,
    pub wrong: BTreeMap<String, u64>,
}

impl Counts {
    pub fn add(&mut self, outcome: &EvalOutcome) {
        self.n_samples += 1;
        if outcome.is_error() {
            self.n_errors += 1;
        }
        if let EvalOutcome::WrongClass { label } = outcome {
            *self.wrong.entry(label.clone()).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        self.n_samples += other.n_samples;
        self.n_errors += other.n_errors;
        for (l, c) in &other.wrong {
            *self.wrong.entry(l.clone()).or_default() += c;
        }
    }

    /// Most frequent wrong label; ties go to the smaller label.
    pub fn top_wrong_class(&self) -> Option<(String, u64)> {
        self.wrong
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(l, c)| (l.clone(), *c))
    }
}

/// Evaluated records of `detector_id` inside the subgroup. Skipped records
/// are not samples.
pub fn matching<'a>(
    results: &'a [CellResult],
    subgroup: &'a SubgroupSpec,
    detector_id: &'a str,
) -> impl Iterator<Item = (&'a CellResult, &'a EvalOutcome)> + 'a {
    results.iter().filter_map(move |r| {
        let o = r.outcome()?;
        (r.detector_id == detector_id && subgroup.covers_seed(r.seed) && subgroup.matches(&r.attributes))
            .then_some((r, o))
    })
}

pub fn counts(results: &[CellResult], subgroup: &SubgroupSpec, detector_id: &str) -> Counts {
    let mut c = Counts::default();
    for (_, o) in matching(results, subgroup, detector_id) {
        c.add(o);
    }
    c
}

pub fn aggregate(results: &[CellResult], subgroup: &SubgroupSpec, detector_id: &str) -> Result<SubgroupResult> {
    let c = counts(results, subgroup, detector_id);
    if c.n_samples == 0 {
        return Err(Error::EmptySubgroup(format!("{} for detector `{detector_id}`", subgroup.label())));
    }
    SubgroupResult::new(subgroup.clone(), detector_id, c.n_samples, c.n_errors, c.top_wrong_class())
}

/// Descending error rate, then more samples, then canonical attribute order.
pub fn rank_order(a: &SubgroupResult, b: &SubgroupResult) -> Ordering {
    b.error_rate
        .cmp(&a.error_rate)
        .then(b.n_samples.cmp(&a.n_samples))
        .then_with(|| a.subgroup.canonical_cmp(&b.subgroup))
}

/// The `k` worst non-empty candidates for `detector_id`.
pub fn rank_subgroups(
    results: &[CellResult],
    candidates: &[SubgroupSpec],
    k: usize,
    detector_id: &str,
) -> Result<Vec<SubgroupResult>> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let mut all: Vec<SubgroupResult> = candidates
        .iter()
        .filter_map(|s| aggregate(results, s, detector_id).ok())
        .collect();
    all.sort_by(rank_order);
    all.truncate(k);
    Ok(all)
}

pub fn check_taus(tau_high: f64, tau_low: f64) -> Result<()> {
    if !(0.0 <= tau_low && tau_low < tau_high && tau_high <= 1.0) {
        return Err(Error::config(format!(
            "need 0 <= tau_low < tau_high <= 1, got tau_low={tau_low} tau_high={tau_high}"
        )));
    }
    Ok(())
}

/// The target fails at `>= tau_high` while every other detector stays at
/// `<= tau_low` on the same subgroup.
pub fn detector_specific(
    results: &[CellResult],
    subgroup: &SubgroupSpec,
    target_id: &str,
    others: &[&str],
    tau_high: f64,
    tau_low: f64,
) -> Result<bool> {
    check_taus(tau_high, tau_low)?;
    let target = aggregate(results, subgroup, target_id)?;
    if !rate_at_least(&target.error_rate, tau_high) {
        return Ok(false);
    }
    for o in others.iter().filter(|o| **o != target_id) {
        let r = aggregate(results, subgroup, o)?;
        if !rate_at_most(&r.error_rate, tau_low) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Unweighted mean of the subgroups' error rates.
pub fn average_error_rate(results: &[CellResult], subgroups: &[SubgroupSpec], detector_id: &str) -> Result<BigRational> {
    let rates = subgroups
        .iter()
        .map(|s| aggregate(results, s, detector_id).map(|r| r.error_rate))
        .collect::<Result<Vec<_>>>()?;
    mean_rate(&rates).ok_or_else(|| Error::EmptySubgroup(format!("no subgroups to average for `{detector_id}`")))
}

/// Distinct values per attribute over `cells`, in canonical value order.
pub fn attribute_values(cells: &[AttributeVector]) -> BTreeMap<AttrName, Vec<AttrValue>> {
    let mut out: BTreeMap<AttrName, Vec<AttrValue>> = BTreeMap::new();
    for c in cells {
        for a in AttrName::ALL {
            let v = c.get(a);
            let list = out.entry(a).or_default();
            if !list.contains(&v) {
                list.push(v);
            }
        }
    }
    for list in out.values_mut() {
        list.sort_by(|x, y| x.canonical_cmp(y));
    }
    out
}

fn subsets(items: &[AttrName], max: usize) -> Vec<Vec<AttrName>> {
    let mut out = vec![vec![]];
    for a in items {
        let ext: Vec<Vec<AttrName>> = out
            .iter()
            .filter(|s| s.len() < max)
            .map(|s| {
                let mut t = s.clone();
                t.push(*a);
                t
            })
            .collect();
        out.extend(ext);
    }
    out
}

/// Every cell, plus every marginalization of up to `depth` attributes.
///
/// Only attributes that take at least two values over `cells` are
/// marginalized; aggregating over a single value would just duplicate the
/// cell. The result is in canonical order without duplicates.
pub fn subgroup_universe(cells: &[AttributeVector], seeds: &[u64], depth: usize) -> Result<Vec<SubgroupSpec>> {
    let values = attribute_values(cells);
    let varying: Vec<AttrName> = AttrName::ALL
        .into_iter()
        .filter(|a| values.get(a).is_some_and(|v| v.len() > 1))
        .collect();
    let mut out: Vec<SubgroupSpec> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for m in subsets(&varying, depth) {
        let marginalized: BTreeSet<AttrName> = m.into_iter().collect();
        for c in cells {
            let fixed = AttrName::ALL
                .into_iter()
                .filter(|a| !marginalized.contains(a))
                .map(|a| (a, c.get(a)))
                .collect();
            let s = SubgroupSpec::new(fixed, marginalized.clone(), seeds.to_vec())?;
            if seen.insert(s.label()) {
                out.push(s);
            }
        }
    }
    out.sort_by(|a, b| a.canonical_cmp(b));
    Ok(out)
}
