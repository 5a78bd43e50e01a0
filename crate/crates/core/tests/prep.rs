use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use detprobe::config::PrepConfig;
use detprobe::outpaint_prep::{
    build_mask, image_seed, prepare_dataset, Instance, ManifestLine, PrepSummary, SampleSource, MANIFEST_FILE,
    TRAIN_CONFIG_FILE,
};
use detprobe::{Error, Mask};
use serde_json::Value;

const TRIALS: u64 = 10_000;
const FREQ_TOL: f64 = 0.02;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus/corpus.toml")
}

fn run(out: &Path, workers: usize) -> PrepSummary {
    let cfg = PrepConfig::load(&fixture()).unwrap();
    prepare_dataset(&cfg.open_readers().unwrap(), &cfg.options(), &cfg.registry().unwrap(), out, workers).unwrap()
}

fn manifest(dir: &Path) -> Vec<ManifestLine> {
    std::fs::read_to_string(dir.join(MANIFEST_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn bundled_corpus_gives_twenty_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run(tmp.path(), 2);
    assert_eq!((s.processed, s.emitted), (20, 20), "skipped: {:?}", s.skipped);
    let lines = manifest(tmp.path());
    assert_eq!(lines.len(), 20);
    assert_eq!(lines.iter().filter(|l| l.source.corpus == "coco").count(), 12);
    assert_eq!(lines.iter().filter(|l| l.source.corpus == "bdd100k").count(), 8);
    assert!(lines.iter().all(|l| l.caption.starts_with("a photo of")));
}

#[test]
fn train_config_is_emitted_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), 1);
    let text = std::fs::read_to_string(tmp.path().join(TRAIN_CONFIG_FILE)).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["training_steps"], 15000);
    assert_eq!(v["lora_rank"], 32);
    assert_eq!(v["batch_size"], 8);
    assert_eq!(v["learning_rate"].as_f64(), Some(1e-4));
}

#[test]
fn masked_input_is_target_times_mask_on_disk() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), 2);
    for line in manifest(tmp.path()) {
        let input = image::open(tmp.path().join(&line.input_path)).unwrap().to_rgb8();
        let mask = image::open(tmp.path().join(&line.mask_path)).unwrap().to_luma8();
        let target = image::open(tmp.path().join(&line.target_path)).unwrap().to_rgb8();
        assert_eq!(input.dimensions(), target.dimensions());
        assert_eq!(mask.dimensions(), target.dimensions());
        let mut on = 0;
        for (x, y, m) in mask.enumerate_pixels() {
            let want = match m[0] {
                255 => {
                    on += 1;
                    target.get_pixel(x, y).0
                }
                0 => [0, 0, 0],
                v => panic!("{}: mask value {v}", line.mask_path),
            };
            assert_eq!(input.get_pixel(x, y).0, want, "{} at ({x}, {y})", line.input_path);
        }
        assert!(on > 0, "{} is empty", line.mask_path);
    }
}

/// Eligibility recomputed from mask unions: the other relevant instances
/// together must cover at least a tenth of the image.
fn eligible_oracle(instances: &[Instance], allow: &BTreeSet<String>, i: usize) -> bool {
    let (w, h) = instances[i].mask.dimensions();
    let mut others = Mask::new(w, h);
    for (j, inst) in instances.iter().enumerate() {
        if j != i && allow.contains(&inst.label) {
            others.union_with(&inst.mask);
        }
    }
    others.count() * 10 >= (w * h) as usize
}

#[test]
fn corpus_masks_keep_ineligible_and_exclude_irrelevant() {
    let tmp = tempfile::tempdir().unwrap();
    run(tmp.path(), 1);
    let cfg = PrepConfig::load(&fixture()).unwrap();
    let opts = cfg.options();
    let lines = manifest(tmp.path());
    let mut ineligible_seen = 0;
    for reader in cfg.open_readers().unwrap() {
        let allow = opts.filter.allowlist(reader.corpus()).unwrap();
        for id in reader.image_ids() {
            let img = reader.load(&id).unwrap();
            let line = lines.iter().find(|l| l.source == img.source).unwrap();
            let mask = Mask::from_gray(&image::open(tmp.path().join(&line.mask_path)).unwrap().to_luma8());
            let mut relevant = Mask::new(mask.width(), mask.height());
            for (i, inst) in img.instances.iter().enumerate() {
                if !allow.contains(&inst.label) {
                    continue;
                }
                relevant.union_with(&inst.mask);
                if !eligible_oracle(&img.instances, allow, i) {
                    ineligible_seen += 1;
                    assert!(inst.mask.iter_set().all(|(x, y)| mask.get(x, y)), "{id}: ineligible {} dropped", inst.label);
                }
            }
            assert!(mask.iter_set().all(|(x, y)| relevant.get(x, y)), "{id}: mask leaves the relevant instances");
        }
    }
    assert!(ineligible_seen > 0, "fixture has no ineligible instance");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path(), 1);
    run(b.path(), 3);
    let files = |d: &Path| {
        let mut v: Vec<PathBuf> = walk(d).into_iter().map(|p| p.strip_prefix(d).unwrap().to_path_buf()).collect();
        v.sort();
        v
    };
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa, fb);
    assert_eq!(fa.len(), 2 + 3 * 20);
    for f in fa {
        assert_eq!(std::fs::read(a.path().join(&f)).unwrap(), std::fs::read(b.path().join(&f)).unwrap(), "{}", f.display());
    }
}

fn walk(d: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(d).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn missing_annotation_file_is_named_in_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("corpus.toml");
    std::fs::write(
        &cfg_path,
        "[[corpora]]\nformat = \"coco\"\nannotations = \"nowhere/annotations.json\"\nimages = \"nowhere/images\"\n",
    )
    .unwrap();
    let cfg = PrepConfig::load(&cfg_path).unwrap();
    let err = cfg.open_readers().err().expect("missing annotations must fail");
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
    assert!(err.to_string().contains("nowhere/annotations.json"), "{err}");
}

fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> Mask {
    Mask::from_fn(100, 100, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
}

fn allow() -> BTreeSet<String> {
    ["car", "truck", "person"].iter().map(|s| s.to_string()).collect()
}

fn trial_seed(t: u64) -> u64 {
    image_seed(&SampleSource::new("coco", t.to_string()), 0)
}

#[test]
fn eligible_instances_drop_half_the_time() {
    // 30%, 30% and 5% of the image, all eligible
    let inst = vec![
        Instance::new("car", rect(0, 0, 30, 100)),
        Instance::new("truck", rect(30, 0, 60, 100)),
        Instance::new("person", rect(90, 0, 95, 100)),
    ];
    let mut pre = [0u64; 3];
    let mut removed = [0u64; 3];
    let mut both_small = 0u64;
    for t in 0..TRIALS {
        let (_, trace) = build_mask(&inst, &allow(), trial_seed(t)).unwrap();
        assert_eq!(trace.eligible, vec![true; 3]);
        for i in 0..3 {
            pre[i] += u64::from(trace.dropped[i]);
            removed[i] += u64::from(!trace.kept.contains(&i));
        }
        both_small += u64::from(trace.dropped[1] && trace.dropped[2]);
    }
    let f = |c: u64| c as f64 / TRIALS as f64;
    for i in 0..3 {
        assert!((f(pre[i]) - 0.5).abs() <= FREQ_TOL, "instance {i}: {}", f(pre[i]));
    }
    // the guard restores the first largest when all three drop (p = 1/8)
    assert!((f(removed[0]) - 0.375).abs() <= FREQ_TOL, "{}", f(removed[0]));
    assert!((f(removed[1]) - 0.5).abs() <= FREQ_TOL);
    assert!((f(removed[2]) - 0.5).abs() <= FREQ_TOL);
    assert!((f(both_small) - 0.25).abs() <= FREQ_TOL, "{}", f(both_small));
}

#[test]
fn ineligible_instances_are_never_dropped() {
    // car: others cover 5% -> ineligible; person: others cover 30% -> eligible
    let inst = vec![
        Instance::new("car", rect(0, 0, 30, 100)),
        Instance::new("dog", rect(30, 0, 100, 100)),
        Instance::new("person", rect(40, 0, 45, 100)),
    ];
    let mut person_dropped = 0u64;
    for t in 0..TRIALS {
        let (mask, trace) = build_mask(&inst, &allow(), trial_seed(t)).unwrap();
        assert_eq!(trace.filtered, vec![0, 2]);
        assert_eq!(trace.eligible, vec![eligible_oracle(&inst, &allow(), 0), eligible_oracle(&inst, &allow(), 2)]);
        assert_eq!(trace.eligible, vec![false, true]);
        assert!(!trace.dropped[0]);
        assert!(inst[0].mask.iter_set().all(|(x, y)| mask.get(x, y)));
        assert!(inst[1].mask.iter_set().all(|(x, y)| !mask.get(x, y) || inst[2].mask.get(x, y)));
        person_dropped += u64::from(trace.dropped[1]);
    }
    assert!((person_dropped as f64 / TRIALS as f64 - 0.5).abs() <= FREQ_TOL);
}

#[test]
fn ten_percent_boundary_is_inclusive() {
    // others cover exactly 10% of a 100x100 image
    let at = vec![Instance::new("car", rect(0, 0, 50, 100)), Instance::new("truck", rect(50, 0, 60, 100))];
    let (_, t) = build_mask(&at, &allow(), 0).unwrap();
    assert_eq!(t.eligible, vec![true, true]);
    let below = vec![Instance::new("car", rect(0, 0, 50, 100)), Instance::new("truck", rect(50, 0, 60, 99))];
    let (_, t) = build_mask(&below, &allow(), 0).unwrap();
    assert_eq!(t.eligible, vec![false, true]);
}
