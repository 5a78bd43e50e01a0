use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde_json::json;

use detprobe::config::{PrepConfig, ReportOptions, RunConfig};
use detprobe::counterfactual::find_flip;
use detprobe::outpaint_prep::prepare_dataset;
use detprobe::report::build_report;
use detprobe::sweep::aggregate::{rank_subgroups, subgroup_universe};
use detprobe::sweep::{
    default_workers, load_results, run_sweep, CellStatus, Evaluator, ResultsStore, SkipSource, SweepOptions,
};
use detprobe::synth::{render, BackendRegistry, PipelineConfig};
use detprobe::{AttributeVector, Background, Error, ObjectColor, SubgroupSpec};

#[derive(Parser)]
#[command(name = "detprobe", version, about = "Probe object detectors with controllable synthetic scenes")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one scene and write it with a provenance sidecar.
    Render(RenderArgs),
    /// Evaluate every configured detector over the attribute grid.
    Sweep(SweepArgs),
    /// Rank failing subgroups and write Markdown and JSON reports.
    Report(ReportArgs),
    /// Search for a small attribute change that removes a systematic error.
    Counterfactual(CounterfactualArgs),
    /// Build an outpainting fine-tune dataset from annotated corpora.
    PrepOutpaint(PrepArgs),
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long = "type", default_value = "sedan")]
    object_type: String,
    /// Palette color name, or ORIGINAL to skip recoloring.
    #[arg(long, default_value = "ORIGINAL")]
    color: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    angle: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Normalized object center `x,y`.
    #[arg(long, default_value = "0.5,0.5")]
    location: String,
    /// Plain color name, `plain:<color>` or `outpaint:<prompt>`.
    #[arg(long, default_value = "grey")]
    background: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Run config supplying pipeline settings and stage backends.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Stop after this many (cell, seed) units.
    #[arg(long)]
    max_units: Option<usize>,
    #[arg(long)]
    save_scenes: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Results directory or results.jsonl file.
    #[arg(long)]
    results: PathBuf,
    /// Run config whose report options are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where report.md and report.json go; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    tau_high: Option<f64>,
    #[arg(long)]
    tau_low: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    rank_detector: Option<String>,
}

#[derive(Args)]
struct CounterfactualArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    detector: String,
    /// Subgroup such as `scale=6,angle=-90,BG=-`; defaults to the
    /// detector's worst subgroup.
    #[arg(long, allow_hyphen_values = true)]
    subgroup: Option<String>,
    /// Results directory; overrides the config.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Also write the flip report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

/// Usage and configuration problems exit 1, stage failures 2, detector
/// failures 3, empty results 4.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Stage { .. } | Error::SegmentationFailed(_) | Error::Placement(_) | Error::EmptyAsset => 2,
        Error::Detector { .. } => 3,
        Error::Report(_) | Error::EmptySubgroup(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
        Command::Counterfactual(a) => cmd_counterfactual(a),
        Command::PrepOutpaint(a) => cmd_prep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

// a closed pipe on stdout is not an error worth dying for
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).unwrap_or_default()));
}

fn cmd_render(a: RenderArgs) -> detprobe::Result<()> {
    let (pipeline, registry) = match &a.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            let reg = cfg.registry()?;
            (cfg.pipeline, reg)
        }
        None => (PipelineConfig::default(), BackendRegistry::with_reference()),
    };
    let (x, y) = a
        .location
        .split_once(',')
        .ok_or_else(|| Error::config(format!("--location `{}` must be `x,y`", a.location)))?;
    let coord = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::config(format!("bad location `{t}`")));
    let background = if a.background.contains(':') {
        a.background.parse()?
    } else {
        Background::Plain(a.background.clone())
    };
    let attrs = AttributeVector {
        object_type: a.object_type,
        object_color: a.color.parse::<ObjectColor>()?,
        orientation_deg: a.angle,
        scale_factor: a.scale,
        location: [coord(x)?, coord(y)?],
        background,
    };
    attrs.validate()?;
    let scene = render(&registry, &pipeline, &attrs, a.seed)?;
    scene.save(&a.out)?;
    print_json(&json!({ "image": a.out, "gt_bbox": scene.gt_bbox(), "seed": a.seed }));
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> detprobe::Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(o) = a.out {
        cfg.output.dir = o;
    }
    let registry = cfg.registry()?;
    let detectors = cfg.build_detectors()?;
    let store = ResultsStore::open(&cfg.output.dir)?;
    let opts = SweepOptions {
        workers: a.workers.unwrap_or(cfg.output.workers),
        save_scenes: a.save_scenes || cfg.output.save_scenes,
        max_units: a.max_units,
        config_hash: Some(cfg.config_hash()?),
    };
    let s = run_sweep(cfg.grid()?, &cfg.pipeline, &registry, &detectors, &cfg.match_cfg, &store, &opts)?;
    let skipped_by = |src: SkipSource| {
        s.stats
            .appended
            .iter()
            .filter(|r| matches!(r.status, CellStatus::Skipped { source, .. } if source == src))
            .count()
    };
    let (render_failed, detector_failed) = (skipped_by(SkipSource::Render), skipped_by(SkipSource::Detector));
    let skipped = render_failed + detector_failed;
    if skipped > 0 {
        warn!("{skipped} records were skipped; see their `reason` fields");
    }
    print_json(&json!({
        "results": store.results_path(),
        "appended": s.stats.appended.len(),
        "skipped": skipped,
        "renders": s.stats.renders,
        "total_records": s.total_records,
        "expected_records": s.expected_records,
    }));
    // records are kept either way; the exit code says what went wrong
    if detector_failed > 0 {
        return Err(Error::detector("sweep", format!("{detector_failed} detector calls failed")));
    }
    if render_failed > 0 {
        return Err(Error::stage("render", "pipeline", format!("{render_failed} records lost to failed renders")));
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> detprobe::Result<()> {
    let mut opts = match &a.config {
        Some(p) => RunConfig::load(p)?.report,
        None => ReportOptions::default(),
    };
    opts.top_k = a.top_k.unwrap_or(opts.top_k);
    opts.tau_high = a.tau_high.unwrap_or(opts.tau_high);
    opts.tau_low = a.tau_low.unwrap_or(opts.tau_low);
    opts.universe_depth = a.depth.unwrap_or(opts.universe_depth);
    if a.rank_detector.is_some() {
        opts.rank_detector = a.rank_detector;
    }
    let results = load_results(&a.results)?;
    let dir = if a.results.is_dir() {
        a.results.clone()
    } else {
        a.results.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let manifest: Option<serde_json::Value> = {
        let p = dir.join(detprobe::sweep::store::MANIFEST_FILE);
        if p.exists() {
            Some(detprobe::imageio::read_json(&p)?)
        } else {
            None
        }
    };
    let detectors: Vec<String> = manifest
        .as_ref()
        .and_then(|m| serde_json::from_value(m["detectors"].clone()).ok())
        .unwrap_or_default();
    let report = build_report(&results, &detectors, &opts, manifest)?;
    let (md, json) = report.write(a.out.as_deref().unwrap_or(&dir))?;
    emit(&report.to_markdown());
    eprintln!("wrote {} and {}", md.display(), json.display());
    Ok(())
}

fn cmd_counterfactual(a: CounterfactualArgs) -> detprobe::Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(r) = a.results {
        cfg.output.dir = r;
    }
    let grid = cfg.grid()?.clone();
    let registry = cfg.registry()?;
    let detector = cfg
        .build_detectors()?
        .into_iter()
        .find(|d| d.detector_id() == a.detector)
        .ok_or_else(|| Error::config(format!("unknown detector `{}`", a.detector)))?;
    let store = ResultsStore::open(&cfg.output.dir)?;
    let results = store.snapshot();
    if results.is_empty() {
        return Err(Error::Report(format!("{}: no results; run `sweep` first", cfg.output.dir.display())));
    }
    let subgroup = match &a.subgroup {
        Some(text) => {
            let sg = SubgroupSpec::parse(text, grid.seeds.clone())?;
            let hit = results
                .iter()
                .any(|r| r.detector_id == a.detector && sg.covers_seed(r.seed) && sg.matches(&r.attributes));
            if !hit {
                return Err(Error::config(format!("subgroup `{text}` matches no records of `{}`", a.detector)));
            }
            sg
        }
        None => {
            let cells: Vec<AttributeVector> = {
                let mut seen = std::collections::BTreeSet::new();
                results
                    .iter()
                    .filter(|r| seen.insert(r.attr_hash.clone()))
                    .map(|r| r.attributes.clone())
                    .collect()
            };
            let universe = subgroup_universe(&cells, &grid.seeds, cfg.report.universe_depth)?;
            rank_subgroups(&results, &universe, 1, &a.detector)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Report(format!("no records for `{}`", a.detector)))?
                .subgroup
        }
    };
    let eval = Evaluator {
        registry: &registry,
        pipeline: &cfg.pipeline,
        match_cfg: cfg.match_cfg,
        store: &store,
        workers: if cfg.output.workers == 0 { default_workers() } else { cfg.output.workers },
        save_scenes: false,
    };
    let report = find_flip(&eval, &subgroup, &detector, &cfg.perturbation, &cfg.flip)?;
    let v = serde_json::to_value(&report)?;
    if let Some(p) = &a.out {
        detprobe::imageio::write_json(p, &report)?;
    }
    print_json(&v);
    Ok(())
}

fn cmd_prep(a: PrepArgs) -> detprobe::Result<()> {
    let cfg = PrepConfig::load(&a.config)?;
    let mut opts = cfg.options();
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let readers = cfg.open_readers()?;
    let registry = cfg.registry()?;
    let s = prepare_dataset(&readers, &opts, &registry, &a.out, a.workers.unwrap_or_else(default_workers))?;
    print_json(&json!({
        "manifest": s.manifest,
        "processed": s.processed,
        "emitted": s.emitted,
        "skipped": s.skipped.iter().map(|(src, why)| json!({"source": src, "reason": why})).collect::<Vec<_>>(),
    }));
    Ok(())
}
