//! Fine-tuning data for object-preserving outpainting.
//!
//! Each corpus image becomes a triple: the untouched target, a binary mask
//! built from a random subset of its relevant instances, and the masked
//! input `target * mask`. Captions come from a caption stage adapter.

pub mod bdd;
pub mod coco;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imageio;
use crate::mask::Mask;
use crate::scene::StageRecord;
use crate::synth::{caption, BackendRegistry, StageAdapter};

pub use bdd::BddReader;
pub use coco::CocoReader;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const COCO: &str = "coco";
pub const BDD100K: &str = "bdd100k";

/// One annotated object of a corpus image.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub label: String,
    pub mask: Mask,
}

impl Instance {
    pub fn new(label: impl Into<String>, mask: Mask) -> Self {
        Instance { label: label.into(), mask }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleSource {
    pub corpus: String,
    pub image_id: String,
}

impl SampleSource {
    pub fn new(corpus: impl Into<String>, image_id: impl Into<String>) -> Self {
        SampleSource { corpus: corpus.into(), image_id: image_id.into() }
    }

    /// File-name-safe stem, unique per (corpus, image id) in practice.
    pub fn stem(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
                .collect()
        };
        format!("{}_{}", clean(&self.corpus), clean(&self.image_id))
    }
}

#[derive(Debug, Clone)]
pub struct CorpusImage {
    pub source: SampleSource,
    pub image: RgbImage,
    pub instances: Vec<Instance>,
}

/// A segmentation-annotated corpus.
pub trait CorpusReader: Send + Sync {
    fn corpus(&self) -> &str;
    /// Image ids in a stable order.
    fn image_ids(&self) -> Vec<String>;
    fn load(&self, image_id: &str) -> Result<CorpusImage>;
}

/// Per-corpus label allowlists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelevantClassFilter {
    pub classes: BTreeMap<String, BTreeSet<String>>,
}

impl Default for RelevantClassFilter {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let mut classes = BTreeMap::new();
        classes.insert(
            COCO.to_string(),
            set(&["car", "person", "truck", "bus", "traffic light", "bicycle", "motorcycle"]),
        );
        classes.insert(
            BDD100K.to_string(),
            set(&["rider", "car", "truck", "bus", "train", "motorcycle", "bicycle"]),
        );
        RelevantClassFilter { classes }
    }
}

impl RelevantClassFilter {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("class filter has no corpora"));
        }
        if let Some((c, _)) = self.classes.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::config(format!("class allowlist for `{c}` is empty")));
        }
        Ok(())
    }

    pub fn allowlist(&self, corpus: &str) -> Result<&BTreeSet<String>> {
        self.classes
            .get(corpus)
            .ok_or_else(|| Error::config(format!("no class allowlist for corpus `{corpus}`")))
    }
}

/// Hyperparameters handed to the external fine-tuning job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub training_steps: u64,
    pub lora_rank: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            training_steps: 15_000,
            lora_rank: 32,
            batch_size: 8,
            learning_rate: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.training_steps == 0 || self.lora_rank == 0 || self.batch_size == 0 {
            return Err(Error::config("training_steps, lora_rank and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// How a mask was drawn. Vectors are aligned with `filtered`, the indices of
/// instances that passed the class filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropTrace {
    pub filtered: Vec<usize>,
    pub eligible: Vec<bool>,
    /// Coin flips before the keep-one guard.
    pub dropped: Vec<bool>,
    /// Instance restored because every filtered one was dropped.
    pub restored: Option<usize>,
    pub kept: Vec<usize>,
}

/// Union of a random subset of the relevant instances.
///
/// An instance may be dropped only when the union of the other relevant
/// instances covers at least a tenth of the image. Each such instance is
/// dropped with probability 1/2, in instance order, from a ChaCha8 stream
/// seeded with `seed`. If everything was dropped the largest instance (first
/// on ties) is kept.
pub fn build_mask(instances: &[Instance], allow: &BTreeSet<String>, seed: u64) -> Result<(Mask, DropTrace)> {
    let filtered: Vec<usize> = (0..instances.len()).filter(|i| allow.contains(&instances[*i].label)).collect();
    let Some(&first) = filtered.first() else {
        return Err(Error::SkipImage("no relevant instances".into()));
    };
    let (w, h) = instances[first].mask.dimensions();
    if let Some(i) = filtered.iter().find(|i| instances[**i].mask.dimensions() != (w, h)) {
        return Err(Error::Precondition(format!("instance {i} mask size differs from instance {first}")));
    }
    let mut cover = vec![0u32; (w as usize) * (h as usize)];
    for i in &filtered {
        for (x, y) in instances[*i].mask.iter_set() {
            cover[(y * w + x) as usize] += 1;
        }
    }
    let union = cover.iter().filter(|c| **c > 0).count() as u64;
    let image_area = u64::from(w) * u64::from(h);
    let eligible: Vec<bool> = filtered
        .iter()
        .map(|i| {
            let sole = instances[*i].mask.iter_set().filter(|(x, y)| cover[(y * w + x) as usize] == 1).count() as u64;
            (union - sole) * 10 >= image_area
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dropped: Vec<bool> = eligible.iter().map(|e| *e && rng.random_bool(0.5)).collect();
    let mut kept: Vec<usize> = filtered.iter().zip(&dropped).filter(|(_, d)| !**d).map(|(i, _)| *i).collect();
    let mut restored = None;
    if kept.is_empty() {
        let largest = filtered
            .iter()
            .copied()
            .max_by(|a, b| instances[*a].mask.count().cmp(&instances[*b].mask.count()).then(b.cmp(a)))
            .unwrap_or(first);
        restored = Some(largest);
        kept.push(largest);
    }
    let mut mask = Mask::new(w, h);
    for i in &kept {
        mask.union_with(&instances[*i].mask);
    }
    Ok((mask, DropTrace { filtered, eligible, dropped, restored, kept }))
}

/// `target` with every pixel outside `mask` set to black.
pub fn apply_mask(target: &RgbImage, mask: &Mask) -> RgbImage {
    RgbImage::from_fn(target.width(), target.height(), |x, y| {
        if mask.get(x, y) {
            *target.get_pixel(x, y)
        } else {
            image::Rgb([0, 0, 0])
        }
    })
}

/// Drop seed for one image: a pure function of the image identity and the
/// run seed.
pub fn image_seed(source: &SampleSource, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(source.corpus.as_bytes());
    h.update([0]);
    h.update(source.image_id.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone)]
pub struct OutpaintSample {
    pub target_image: RgbImage,
    pub mask: Mask,
    pub masked_input: RgbImage,
    pub caption: String,
    pub source: SampleSource,
    pub provenance: Vec<StageRecord>,
}

pub fn make_sample(
    image: &CorpusImage,
    filter: &RelevantClassFilter,
    registry: &BackendRegistry,
    captioner: &StageAdapter,
    seed: u64,
) -> Result<OutpaintSample> {
    let (w, h) = image.image.dimensions();
    if let Some(i) = image.instances.iter().position(|inst| inst.mask.dimensions() != (w, h)) {
        return Err(Error::Precondition(format!(
            "{}: instance {i} mask does not match the {w}x{h} image",
            image.source.image_id
        )));
    }
    let s = image_seed(&image.source, seed);
    let (mask, trace) = build_mask(&image.instances, filter.allowlist(&image.source.corpus)?, s)?;
    let labels: Vec<String> = trace.kept.iter().map(|i| image.instances[*i].label.clone()).collect();
    let masked_input = apply_mask(&image.image, &mask);
    let text = caption(registry, captioner, &image.image, &labels, s)?;
    let provenance = vec![
        StageRecord::new("build_mask")
            .seed(s)
            .param("kept", trace.kept.clone())
            .param("restored", trace.restored)
            .param("labels", labels.clone()),
        StageRecord::new("caption").backend(captioner.backend_id.clone()).seed(s),
    ];
    Ok(OutpaintSample {
        target_image: image.image.clone(),
        mask,
        masked_input,
        caption: text,
        source: image.source.clone(),
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub input_path: String,
    pub mask_path: String,
    pub target_path: String,
    pub caption: String,
    pub source: SampleSource,
}

/// Writes PNG triples under `images/`, one manifest line per sample, and the
/// training config sidecar.
pub struct ManifestWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    stems: HashSet<String>,
    lines: usize,
}

impl ManifestWriter {
    pub fn create(dir: &Path, train: &TrainConfig) -> Result<Self> {
        train.validate()?;
        std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir.join("images"), e))?;
        imageio::write_json(&dir.join(TRAIN_CONFIG_FILE), train)?;
        let path = dir.join(MANIFEST_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(ManifestWriter {
            dir: dir.to_path_buf(),
            out: BufWriter::new(file),
            stems: HashSet::new(),
            lines: 0,
        })
    }

    pub fn write(&mut self, sample: &OutpaintSample) -> Result<()> {
        let stem = sample.source.stem();
        if !self.stems.insert(stem.clone()) {
            return Err(Error::Precondition(format!("duplicate sample `{stem}`")));
        }
        let rel = |kind: &str| format!("images/{stem}_{kind}.png");
        let line = ManifestLine {
            input_path: rel("input"),
            mask_path: rel("mask"),
            target_path: rel("target"),
            caption: sample.caption.clone(),
            source: sample.source.clone(),
        };
        imageio::save_png(&self.dir.join(&line.input_path), &DynamicImage::ImageRgb8(sample.masked_input.clone()))?;
        imageio::save_png(&self.dir.join(&line.mask_path), &DynamicImage::ImageLuma8(sample.mask.to_gray()))?;
        imageio::save_png(&self.dir.join(&line.target_path), &DynamicImage::ImageRgb8(sample.target_image.clone()))?;
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string(&line)?;
        text.push('\n');
        self.out.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        self.lines += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let path = self.dir.join(MANIFEST_FILE);
        self.out.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn lines(&self) -> usize {
        self.lines
    }
}

pub fn emit_manifest(samples: &[OutpaintSample], dir: &Path, train: &TrainConfig) -> Result<PathBuf> {
    if samples.is_empty() {
        return Err(Error::Precondition("no samples to emit".into()));
    }
    let mut w = ManifestWriter::create(dir, train)?;
    for s in samples {
        w.write(s)?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepOptions {
    #[serde(default)]
    pub filter: RelevantClassFilter,
    #[serde(default = "default_captioner")]
    pub captioner: StageAdapter,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_captioner() -> StageAdapter {
    StageAdapter::reference(crate::synth::StageKind::Caption)
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            filter: RelevantClassFilter::default(),
            captioner: default_captioner(),
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PrepSummary {
    pub processed: usize,
    pub emitted: usize,
    pub skipped: Vec<(SampleSource, String)>,
    pub manifest: Option<PathBuf>,
}

/// Runs every image of every reader through [`make_sample`] and writes the
/// dataset to `out`. Images are processed in parallel and written in reader
/// order; images that fail are skipped with a logged reason.
pub fn prepare_dataset(
    readers: &[Box<dyn CorpusReader>],
    opts: &PrepOptions,
    registry: &BackendRegistry,
    out: &Path,
    workers: usize,
) -> Result<PrepSummary> {
    opts.filter.validate()?;
    opts.train.validate()?;
    registry.check(&opts.captioner)?;
    for r in readers {
        opts.filter.allowlist(r.corpus())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let mut summary = PrepSummary::default();
    let mut writer: Option<ManifestWriter> = None;
    let chunk = workers.max(1) * 4;
    for reader in readers {
        let ids = reader.image_ids();
        for ids in ids.chunks(chunk) {
            let results: Vec<(SampleSource, Result<OutpaintSample>)> = pool.install(|| {
                ids.par_iter()
                    .map(|id| {
                        let src = SampleSource::new(reader.corpus(), id.clone());
                        let r = reader
                            .load(id)
                            .and_then(|img| make_sample(&img, &opts.filter, registry, &opts.captioner, opts.seed));
                        (src, r)
                    })
                    .collect()
            });
            for (src, r) in results {
                summary.processed += 1;
                match r {
                    Ok(sample) => {
                        if writer.is_none() {
                            writer = Some(ManifestWriter::create(out, &opts.train)?);
                        }
                        if let Some(w) = writer.as_mut() {
                            w.write(&sample)?;
                        }
                        summary.emitted += 1;
                    }
                    Err(e) => {
                        warn!("skipping {}/{}: {e}", src.corpus, src.image_id);
                        summary.skipped.push((src, e.to_string()));
                    }
                }
            }
        }
    }
    match writer {
        Some(w) => summary.manifest = Some(w.finish()?),
        None => return Err(Error::Precondition(format!("none of {} images produced a sample", summary.processed))),
    }
    info!("emitted {} of {} images", summary.emitted, summary.processed);
    Ok(summary)
}

/// A corpus to read, as named in a prep config. Relative paths are resolved
/// against a base directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum CorpusSource {
    Coco { annotations: PathBuf, images: PathBuf },
    Bdd100k { images: PathBuf, bitmasks: PathBuf },
}

impl CorpusSource {
    pub fn open(&self, base: &Path) -> Result<Box<dyn CorpusReader>> {
        Ok(match self {
            CorpusSource::Coco { annotations, images } => {
                Box::new(CocoReader::open(&base.join(annotations), &base.join(images))?)
            }
            CorpusSource::Bdd100k { images, bitmasks } => {
                Box::new(BddReader::open(&base.join(images), &base.join(bitmasks))?)
            }
        })
    }
}
