//! Attribute grids, the sweep runner and subgroup aggregation.

pub mod aggregate;
pub mod store;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{evaluate_sample, run_detector, DetectorAdapter, MatchConfig};
use crate::error::{Error, Result};
use crate::scene::{AttributeVector, Background, ObjectColor, SceneSample};
use crate::synth::{render, BackendRegistry, PipelineConfig};

pub use aggregate::{
    aggregate, average_error_rate, detector_specific, rank_subgroups, subgroup_universe, Counts,
};
pub use store::{load_results, CellResult, CellStatus, RecordKey, ResultsStore, SkipSource};

/// Per-attribute value lists, seeds and detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub object_type: Vec<String>,
    pub object_color: Vec<ObjectColor>,
    pub orientation_deg: Vec<f64>,
    pub scale_factor: Vec<f64>,
    pub location: Vec<[f64; 2]>,
    pub background: Vec<Background>,
    pub seeds: Vec<u64>,
    pub detectors: Vec<String>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let lens = [
            ("object_type", self.object_type.len()),
            ("object_color", self.object_color.len()),
            ("orientation_deg", self.orientation_deg.len()),
            ("scale_factor", self.scale_factor.len()),
            ("location", self.location.len()),
            ("background", self.background.len()),
            ("seeds", self.seeds.len()),
            ("detectors", self.detectors.len()),
        ];
        if let Some((name, _)) = lens.iter().find(|(_, n)| *n == 0) {
            return Err(Error::config(format!("grid list `{name}` is empty")));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::config("grid seeds must be distinct"));
        }
        let mut dets = self.detectors.clone();
        dets.sort();
        dets.dedup();
        if dets.len() != self.detectors.len() {
            return Err(Error::config("grid detectors must be distinct"));
        }
        Ok(())
    }

    /// Number of attribute cells (seeds and detectors excluded).
    pub fn n_cells(&self) -> usize {
        self.object_type.len()
            * self.object_color.len()
            * self.orientation_deg.len()
            * self.scale_factor.len()
            * self.location.len()
            * self.background.len()
    }
}

/// Cartesian product in declaration order, the last list varying fastest.
pub fn expand_grid(grid: &GridSpec) -> Result<Vec<AttributeVector>> {
    grid.validate()?;
    let mut out = Vec::with_capacity(grid.n_cells());
    for t in &grid.object_type {
        for c in &grid.object_color {
            for o in &grid.orientation_deg {
                for s in &grid.scale_factor {
                    for l in &grid.location {
                        for b in &grid.background {
                            let v = AttributeVector {
                                object_type: t.clone(),
                                object_color: c.clone(),
                                orientation_deg: *o,
                                scale_factor: *s,
                                location: *l,
                                background: b.clone(),
                            };
                            v.validate()?;
                            out.push(v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Everything needed to turn (cell, seed) units into store records.
pub struct Evaluator<'a> {
    pub registry: &'a BackendRegistry,
    pub pipeline: &'a PipelineConfig,
    pub match_cfg: MatchConfig,
    pub store: &'a ResultsStore,
    pub workers: usize,
    pub save_scenes: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitStats {
    /// Records written by this call, in append order.
    pub appended: Vec<CellResult>,
    /// Pipeline executions.
    pub renders: usize,
}

impl Evaluator<'_> {
    fn artifact_name(attrs: &AttributeVector, seed: u64) -> String {
        format!("scenes/{}_{seed}.png", attrs.key_hash())
    }

    fn unit_records(&self, attrs: &AttributeVector, seed: u64, pending: &[&DetectorAdapter], renders: &AtomicUsize) -> Vec<CellResult> {
        renders.fetch_add(1, Ordering::Relaxed);
        let scene: Result<(SceneSample, Option<String>)> = render(self.registry, self.pipeline, attrs, seed).and_then(|s| {
            if self.save_scenes {
                let name = Self::artifact_name(attrs, seed);
                s.save(&self.store.dir().join(&name))?;
                Ok((s, Some(name)))
            } else {
                Ok((s, None))
            }
        });
        pending
            .iter()
            .map(|det| {
                let id = det.detector_id();
                match &scene {
                    Err(e) => {
                        warn!("render of {} seed {seed} failed: {e}", attrs.key_hash());
                        CellResult::new(
                            attrs.clone(),
                            seed,
                            id,
                            CellStatus::Skipped {
                                reason: e.to_string(),
                                source: SkipSource::Render,
                            },
                        )
                    }
                    Ok((s, artifact)) => {
                        let status = match run_detector(det, s) {
                            Ok(dets) => CellStatus::Evaluated {
                                outcome: evaluate_sample(&dets, s, &self.match_cfg),
                            },
                            Err(e) => CellStatus::Skipped {
                                reason: e.to_string(),
                                source: SkipSource::Detector,
                            },
                        };
                        let mut r = CellResult::new(attrs.clone(), seed, id, status);
                        r.artifact = artifact.clone();
                        r
                    }
                }
            })
            .collect()
    }

    /// Evaluates every (unit, detector) pair missing from the store. Each
    /// unit is rendered at most once and shared by its detectors. At most
    /// `max_units` units needing work are processed.
    pub fn run_units(
        &self,
        units: &[(AttributeVector, u64)],
        detectors: &[DetectorAdapter],
        max_units: Option<usize>,
    ) -> Result<UnitStats> {
        let mut work: Vec<(&AttributeVector, u64, Vec<&DetectorAdapter>)> = units
            .iter()
            .filter_map(|(a, s)| {
                let hash = a.key_hash();
                let pending: Vec<&DetectorAdapter> = detectors
                    .iter()
                    .filter(|d| {
                        !self.store.contains(&RecordKey {
                            attr_hash: hash.clone(),
                            seed: *s,
                            detector_id: d.detector_id().to_string(),
                        })
                    })
                    .collect();
                (!pending.is_empty()).then_some((a, *s, pending))
            })
            .collect();
        if let Some(m) = max_units {
            work.truncate(m);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        let renders = AtomicUsize::new(0);
        let mut stats = UnitStats::default();
        let chunk = self.workers.max(1) * 8;
        for batch in work.chunks(chunk) {
            let produced: Vec<Vec<CellResult>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|(a, s, pending)| self.unit_records(a, *s, pending, &renders))
                    .collect()
            });
            for r in produced.into_iter().flatten() {
                if self.store.append(r.clone())? {
                    stats.appended.push(r);
                }
            }
        }
        stats.renders = renders.into_inner();
        Ok(stats)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub workers: usize,
    pub save_scenes: bool,
    /// Stop after this many (cell, seed) units; used to checkpoint long runs.
    pub max_units: Option<usize>,
    /// Hash of the full run configuration, recorded in the manifest.
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub stats: UnitStats,
    pub expected_records: usize,
    pub total_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub grid: GridSpec,
    pub match_config: MatchConfig,
    pub pipeline: PipelineConfig,
    pub backend_versions: BTreeMap<String, String>,
    pub detectors: Vec<String>,
    pub tool_version: String,
}

pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Renders every grid cell for every seed and evaluates every detector,
/// skipping keys already in the store.
pub fn run_sweep(
    grid: &GridSpec,
    pipeline: &PipelineConfig,
    registry: &BackendRegistry,
    detectors: &[DetectorAdapter],
    match_cfg: &MatchConfig,
    store: &ResultsStore,
    opts: &SweepOptions,
) -> Result<SweepSummary> {
    match_cfg.validate()?;
    let cells = expand_grid(grid)?;
    let chosen: Vec<DetectorAdapter> = grid
        .detectors
        .iter()
        .map(|id| {
            detectors
                .iter()
                .find(|d| d.detector_id() == id)
                .cloned()
                .ok_or_else(|| Error::config(format!("grid names unknown detector `{id}`")))
        })
        .collect::<Result<_>>()?;
    for c in &cells {
        for a in pipeline.adapters.required_for(c) {
            registry.check(a)?;
        }
    }
    // catch names the renderer will reject before spending a sweep on them
    for t in &grid.object_type {
        crate::synth::glyph::GlyphSpec::for_type(t)?;
    }
    for b in &grid.background {
        if let Background::Plain(c) = b {
            crate::palette::lookup(c)?;
        }
    }
    if pipeline.adapters.recolor.backend_id == crate::synth::reference::REFERENCE_ID {
        for c in &grid.object_color {
            if let ObjectColor::Named(n) = c {
                crate::palette::reference_hue(n)?;
            }
        }
    }

    let config_hash = match &opts.config_hash {
        Some(h) => h.clone(),
        None => hash_json(&(grid, match_cfg, pipeline))?,
    };
    if let Some(old) = store.read_manifest()? {
        if old.get("config_hash").and_then(|v| v.as_str()) != Some(config_hash.as_str()) {
            return Err(Error::config(format!(
                "{} was written by a different configuration",
                store.dir().display()
            )));
        }
    }
    let backend_versions = pipeline
        .adapters
        .all()
        .iter()
        .filter_map(|a| registry.version_of(&a.backend_id).map(|v| (a.backend_id.clone(), v)))
        .collect();
    store.write_manifest(&Manifest {
        config_hash,
        grid: grid.clone(),
        match_config: *match_cfg,
        pipeline: pipeline.clone(),
        backend_versions,
        detectors: grid.detectors.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    })?;

    let units: Vec<(AttributeVector, u64)> = cells
        .iter()
        .flat_map(|c| grid.seeds.iter().map(move |s| (c.clone(), *s)))
        .collect();
    let eval = Evaluator {
        registry,
        pipeline,
        match_cfg: *match_cfg,
        store,
        workers: if opts.workers == 0 { default_workers() } else { opts.workers },
        save_scenes: opts.save_scenes,
    };
    let stats = eval.run_units(&units, &chosen, opts.max_units)?;
    info!(
        "sweep: {} records appended, {} renders, {} in store",
        stats.appended.len(),
        stats.renders,
        store.len()
    );
    Ok(SweepSummary {
        stats,
        expected_records: cells.len() * grid.seeds.len() * chosen.len(),
        total_records: store.len(),
    })
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}
