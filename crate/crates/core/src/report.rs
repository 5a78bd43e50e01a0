//! Ranked subgroup tables in Markdown and JSON.
//!
//! Both renderings come from one [`Report`] value, so a percentage in the
//! table is always the rounding of the exact rate next to it in the JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_rational::BigRational;
use serde::Serialize;
use serde_json::Value;

use crate::config::{AveragePopulation, ReportOptions};
use crate::error::{Error, Result};
use crate::imageio;
use crate::num::{big_percent, format_percent, format_ratio};
use crate::scene::{AttrName, AttrValue, AttributeVector, SubgroupResult, SubgroupSpec};
use crate::sweep::aggregate::{aggregate, average_error_rate, detector_specific, rank_subgroups, subgroup_universe};
use crate::sweep::CellResult;

pub const ROUNDING: &str = "integer percent, half away from zero";
pub const MARKDOWN_FILE: &str = "report.md";
pub const JSON_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCell {
    pub n_samples: u64,
    pub n_errors: u64,
    pub error_rate: String,
    pub percent: String,
    pub top_wrong_class: Option<String>,
    pub top_wrong_count: Option<u64>,
}

impl RateCell {
    fn from_result(r: &SubgroupResult) -> Self {
        RateCell {
            n_samples: r.n_samples,
            n_errors: r.n_errors,
            error_rate: format_ratio(&r.error_rate),
            percent: format_percent(&r.error_rate),
            top_wrong_class: r.top_wrong_class.as_ref().map(|t| t.0.clone()),
            top_wrong_count: r.top_wrong_class.as_ref().map(|t| t.1),
        }
    }

    /// `"100% (truck)"`, or just the percentage when no wrong class was seen.
    pub fn display(&self) -> String {
        match &self.top_wrong_class {
            Some(c) => format!("{} ({c})", self.percent),
            None => self.percent.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub subgroup: SubgroupSpec,
    pub label: String,
    pub ranked_for: String,
    pub rank: usize,
    /// Missing for detectors without samples in the subgroup.
    pub rates: BTreeMap<String, Option<RateCell>>,
    pub detector_specific: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageCell {
    pub error_rate: String,
    pub percent: String,
    pub n_subgroups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub options: ReportOptions,
    pub rounding: String,
    pub detectors: Vec<String>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub n_cells: usize,
    pub seeds: Vec<u64>,
    pub universe_size: usize,
    /// Attributes that vary across the evaluated cells.
    pub varying: Vec<AttrName>,
    pub rows: Vec<ReportRow>,
    pub average: BTreeMap<String, AverageCell>,
    /// Run manifest of the store, when available.
    pub config: Option<Value>,
}

fn big_ratio_text(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn specific(results: &[CellResult], sg: &SubgroupSpec, target: &str, all: &[&str], opts: &ReportOptions) -> Result<bool> {
    match detector_specific(results, sg, target, all, opts.tau_high, opts.tau_low) {
        Ok(b) => Ok(b),
        Err(Error::EmptySubgroup(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Aggregates `results` into a ranked report.
///
/// For each ranked detector the `top_k` worst subgroups with at least one
/// error are listed; a subgroup ranked for several detectors appears once.
/// `detectors` fixes the column order; when empty the detectors found in the
/// records are used, sorted.
pub fn build_report(
    results: &[CellResult],
    detectors: &[String],
    opts: &ReportOptions,
    config: Option<Value>,
) -> Result<Report> {
    opts.validate()?;
    let evaluated: Vec<&CellResult> = results.iter().filter(|r| r.outcome().is_some()).collect();
    if evaluated.is_empty() {
        return Err(Error::Report(format!(
            "no evaluated records ({} skipped)",
            results.len()
        )));
    }
    let detectors: Vec<String> = if detectors.is_empty() {
        evaluated.iter().map(|r| r.detector_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        detectors.to_vec()
    };
    let mut cells: Vec<AttributeVector> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut seeds: BTreeSet<u64> = BTreeSet::new();
    for r in &evaluated {
        if seen.insert(r.attr_hash.clone()) {
            cells.push(r.attributes.clone());
        }
        seeds.insert(r.seed);
    }
    let seeds: Vec<u64> = seeds.into_iter().collect();
    let universe = subgroup_universe(&cells, &seeds, opts.universe_depth)?;
    let varying: Vec<AttrName> = crate::sweep::aggregate::attribute_values(&cells)
        .into_iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(a, _)| a)
        .collect();

    let ranked: Vec<String> = match &opts.rank_detector {
        Some(d) => vec![d.clone()],
        None => detectors.clone(),
    };
    let all: Vec<&str> = detectors.iter().map(String::as_str).collect();
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut listed: BTreeSet<String> = BTreeSet::new();
    for det in &ranked {
        let top = rank_subgroups(results, &universe, opts.top_k, det)?;
        for (i, r) in top.into_iter().enumerate().filter(|(_, r)| r.n_errors > 0) {
            let label = r.subgroup.label();
            if !listed.insert(label.clone()) {
                continue;
            }
            let mut rates = BTreeMap::new();
            let mut flags = Vec::new();
            for d in &detectors {
                let cell = match aggregate(results, &r.subgroup, d) {
                    Ok(a) => Some(RateCell::from_result(&a)),
                    Err(Error::EmptySubgroup(_)) => None,
                    Err(e) => return Err(e),
                };
                rates.insert(d.clone(), cell);
                if specific(results, &r.subgroup, d, &all, opts)? {
                    flags.push(d.clone());
                }
            }
            rows.push(ReportRow {
                subgroup: r.subgroup,
                label,
                ranked_for: det.clone(),
                rank: i + 1,
                rates,
                detector_specific: flags,
            });
        }
    }

    let population: Vec<SubgroupSpec> = match opts.average {
        AveragePopulation::Cells => universe.iter().filter(|s| s.marginalized.is_empty()).cloned().collect(),
        AveragePopulation::Universe => universe.clone(),
    };
    let mut average = BTreeMap::new();
    for d in &detectors {
        let members: Vec<SubgroupSpec> = population
            .iter()
            .filter(|s| aggregate(results, s, d).is_ok())
            .cloned()
            .collect();
        if members.is_empty() {
            continue;
        }
        let mean = average_error_rate(results, &members, d)?;
        average.insert(
            d.clone(),
            AverageCell {
                error_rate: big_ratio_text(&mean),
                percent: format!("{}%", big_percent(&mean)),
                n_subgroups: members.len(),
            },
        );
    }

    Ok(Report {
        options: opts.clone(),
        rounding: ROUNDING.to_string(),
        detectors,
        n_evaluated: evaluated.len(),
        n_skipped: results.len() - evaluated.len(),
        n_cells: cells.len(),
        seeds,
        universe_size: universe.len(),
        varying,
        rows,
        average,
        config,
    })
}

fn column_value(name: AttrName, v: &AttrValue) -> String {
    match (name, v) {
        (AttrName::Orientation, AttrValue::Number(x)) if x.fract() == 0.0 => format!("{x:.0}"),
        _ => v.short(),
    }
}

impl Report {
    fn columns(&self) -> Vec<AttrName> {
        let mut cols = vec![
            AttrName::ScaleFactor,
            AttrName::Orientation,
            AttrName::ObjectColor,
            AttrName::Background,
            AttrName::ObjectType,
        ];
        if self.varying.contains(&AttrName::Location) {
            cols.push(AttrName::Location);
        }
        cols
    }

    /// Attribute cell text: the pinned value, or "-" when marginalized.
    pub fn attribute_cell(row: &ReportRow, name: AttrName) -> String {
        match row.subgroup.fixed.get(&name) {
            Some(v) => column_value(name, v),
            None if row.subgroup.marginalized.contains(&name) => "-".to_string(),
            None => "*".to_string(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let mut s = String::new();
        let _ = writeln!(s, "# Detector error report\n");
        let _ = writeln!(
            s,
            "{} evaluated records ({} skipped) over {} cells and {} seeds; {} candidate subgroups.\n",
            self.n_evaluated,
            self.n_skipped,
            self.n_cells,
            self.seeds.len(),
            self.universe_size
        );
        let _ = writeln!(
            s,
            "tau_high = {}, tau_low = {}, top_k = {}, universe depth = {}, average over {}; {}.\n",
            self.options.tau_high,
            self.options.tau_low,
            self.options.top_k,
            self.options.universe_depth,
            match self.options.average {
                AveragePopulation::Cells => "cells",
                AveragePopulation::Universe => "all subgroups",
            },
            self.rounding
        );
        let mut header: Vec<String> = cols.iter().map(|c| c.column().to_string()).collect();
        header.extend(self.detectors.iter().cloned());
        header.push("ranked for".into());
        header.push("detector-specific".into());
        let _ = writeln!(s, "| {} |", header.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
        for row in &self.rows {
            let mut cells: Vec<String> = cols.iter().map(|c| Self::attribute_cell(row, *c)).collect();
            for d in &self.detectors {
                cells.push(match row.rates.get(d).and_then(Option::as_ref) {
                    Some(c) => c.display(),
                    None => "n/a".into(),
                });
            }
            cells.push(format!("{} #{}", row.ranked_for, row.rank));
            cells.push(row.detector_specific.join(", "));
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        let mut avg: Vec<String> = vec!["**Average Error Rate**".into()];
        avg.extend(std::iter::repeat_n(String::new(), cols.len() - 1));
        for d in &self.detectors {
            avg.push(self.average.get(d).map(|a| a.percent.clone()).unwrap_or_else(|| "n/a".into()));
        }
        avg.push(String::new());
        avg.push(String::new());
        let _ = writeln!(s, "| {} |", avg.join(" | "));
        s
    }

    /// Writes `report.md` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let md = dir.join(MARKDOWN_FILE);
        std::fs::write(&md, self.to_markdown()).map_err(|e| Error::io(&md, e))?;
        let json = dir.join(JSON_FILE);
        imageio::write_json(&json, self)?;
        Ok((md, json))
    }
}
