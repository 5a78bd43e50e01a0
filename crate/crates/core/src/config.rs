//! TOML run and prep configurations.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::counterfactual::{FlipConfig, PerturbationSpec};
use crate::detect::{DetectorAdapter, DetectorSpec, MatchConfig};
use crate::error::{Error, Result};
use crate::outpaint_prep::{CorpusReader, CorpusSource, PrepOptions, RelevantClassFilter, TrainConfig};
use crate::sweep::aggregate::check_taus;
use crate::sweep::{hash_json, GridSpec};
use crate::synth::{BackendRegistry, PipelineConfig, RemoteStageBackend, StageAdapter, StageKind};

/// A stage backend served over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteStageSpec {
    pub id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub endpoint_env: Option<String>,
    pub stages: Vec<StageKind>,
    #[serde(default = "default_stage_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub single_flight: bool,
}

fn default_stage_timeout_ms() -> u64 {
    120_000
}

impl RemoteStageSpec {
    fn endpoint(&self) -> Result<String> {
        match (&self.endpoint, &self.endpoint_env) {
            (Some(u), _) => Ok(u.clone()),
            (None, Some(var)) => std::env::var(var)
                .map_err(|_| Error::config(format!("stage backend `{}`: `{var}` is not set", self.id))),
            (None, None) => Err(Error::config(format!("stage backend `{}` needs `endpoint` or `endpoint_env`", self.id))),
        }
    }
}

pub fn build_registry(remotes: &[RemoteStageSpec]) -> Result<BackendRegistry> {
    let mut reg = BackendRegistry::with_reference();
    for r in remotes {
        if reg.contains(&r.id) {
            return Err(Error::config(format!("stage backend `{}` registered twice", r.id)));
        }
        let b = RemoteStageBackend::new(&r.id, r.endpoint()?, r.stages.clone(), Duration::from_millis(r.timeout_ms))
            .single_flight(r.single_flight);
        reg.register(Arc::new(b));
    }
    Ok(reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragePopulation {
    /// Every fully specified grid cell.
    #[default]
    Cells,
    /// Every subgroup of the universe, marginalized ones included.
    Universe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub top_k: usize,
    pub tau_high: f64,
    pub tau_low: f64,
    /// Most attributes marginalized at once in the subgroup universe.
    pub universe_depth: usize,
    pub average: AveragePopulation,
    /// Detector whose failures are ranked; all detectors when unset.
    pub rank_detector: Option<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            top_k: 10,
            tau_high: 0.9,
            tau_low: 0.5,
            universe_depth: 1,
            average: AveragePopulation::Cells,
            rank_detector: None,
        }
    }
}

impl ReportOptions {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::config("report.top_k must be at least 1"));
        }
        check_taus(self.tau_high, self.tau_low)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// 0 means one worker per core.
    pub workers: usize,
    pub save_scenes: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            workers: 0,
            save_scenes: false,
        }
    }
}

/// Everything a sweep, report or counterfactual run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Grid in a separate TOML file, used when `grid` is absent.
    #[serde(default)]
    pub grid_file: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub stage_backends: Vec<RemoteStageSpec>,
    pub detectors: Vec<DetectorSpec>,
    #[serde(default, rename = "match")]
    pub match_cfg: MatchConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub report: ReportOptions,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub flip: FlipConfig,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl RunConfig {
    /// Parses, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_toml(path)?;
        let base = base_dir(path);
        if cfg.grid.is_none() {
            let file = cfg
                .grid_file
                .as_ref()
                .ok_or_else(|| Error::config(format!("{}: needs `grid` or `grid_file`", path.display())))?;
            cfg.grid = Some(read_toml(&base.join(file))?);
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<&GridSpec> {
        self.grid.as_ref().ok_or_else(|| Error::config("no grid configured"))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        grid.validate()?;
        self.match_cfg.validate()?;
        self.report.validate()?;
        for id in &grid.detectors {
            if !self.detectors.iter().any(|d| &d.id == id) {
                return Err(Error::config(format!("grid names undeclared detector `{id}`")));
            }
        }
        let mut ids: Vec<&str> = self.detectors.iter().map(|d| d.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("detector ids must be distinct"));
        }
        if let Some(d) = &self.report.rank_detector {
            if !grid.detectors.contains(d) {
                return Err(Error::config(format!("report.rank_detector `{d}` is not in the grid")));
            }
        }
        let declared: Vec<&str> = self.stage_backends.iter().map(|s| s.id.as_str()).collect();
        for a in self.pipeline.adapters.all() {
            if a.backend_id != crate::synth::reference::REFERENCE_ID && !declared.contains(&a.backend_id.as_str()) {
                return Err(Error::config(format!(
                    "stage `{}` uses undeclared backend `{}`",
                    a.stage_kind, a.backend_id
                )));
            }
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<BackendRegistry> {
        let reg = build_registry(&self.stage_backends)?;
        self.pipeline.adapters.check(&reg)?;
        Ok(reg)
    }

    pub fn build_detectors(&self) -> Result<Vec<DetectorAdapter>> {
        self.detectors.iter().map(DetectorSpec::build).collect()
    }

    /// Hash of everything that determines the records: grid, pipeline,
    /// stage backends, detectors and matching.
    pub fn config_hash(&self) -> Result<String> {
        hash_json(&(
            &self.grid,
            &self.pipeline,
            &self.stage_backends,
            &self.detectors,
            &self.match_cfg,
        ))
    }
}

/// Inputs of an outpainting data-prep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub corpora: Vec<CorpusSource>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub classes: Option<RelevantClassFilter>,
    #[serde(default)]
    pub captioner: Option<StageAdapter>,
    #[serde(default)]
    pub stage_backends: Vec<RemoteStageSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(skip)]
    pub base: PathBuf,
}

impl PrepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PrepConfig = read_toml(path)?;
        cfg.base = base_dir(path);
        if cfg.corpora.is_empty() {
            return Err(Error::config(format!("{}: no corpora", path.display())));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn options(&self) -> PrepOptions {
        let mut o = PrepOptions {
            seed: self.seed,
            train: self.train.clone(),
            ..PrepOptions::default()
        };
        if let Some(c) = &self.classes {
            o.filter = c.clone();
        }
        if let Some(c) = &self.captioner {
            o.captioner = c.clone();
        }
        o
    }

    pub fn open_readers(&self) -> Result<Vec<Box<dyn CorpusReader>>> {
        self.corpora.iter().map(|c| c.open(&self.base)).collect()
    }

    pub fn registry(&self) -> Result<BackendRegistry> {
        build_registry(&self.stage_backends)
    }
}
