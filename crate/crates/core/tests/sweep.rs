use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use detprobe::config::RunConfig;
use detprobe::num::{mean_rate, percent_half_away};
use detprobe::report::build_report;
use detprobe::sweep::{
    aggregate, expand_grid, load_results, run_sweep, subgroup_universe, CellResult, CellStatus, RecordKey,
    ResultsStore, SweepOptions, SweepSummary,
};
use detprobe::{AttrName, AttributeVector, Background, Error, EvalOutcome, ObjectColor, SubgroupSpec};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

const CONFIG: &str = r#"
    [grid]
    object_type = ["sedan"]
    object_color = ["ORIGINAL", "red"]
    orientation_deg = [-60.0, 0.0]
    scale_factor = [2.0, 6.0]
    location = [[0.5, 0.5]]
    background = ["plain:grey", "plain:yellow"]
    seeds = [0, 1, 2, 3]
    detectors = ["A", "B"]

    [pipeline]
    canvas = [192, 192]

    [[detectors]]
    id = "A"
    [detectors.backend]
    kind = "scripted"
    [[detectors.backend.rules]]
    when = [
        { attr = "scale_factor", op = ">=", value = 5.0 },
        { attr = "seed", op = "in", value = [0, 1, 2] },
    ]
    then = { kind = "detect", label = "truck", score = 0.9 }

    [[detectors]]
    id = "B"
    [detectors.backend]
    kind = "scripted"
    [[detectors.backend.rules]]
    when = [{ attr = "background", op = "==", value = "yellow" }]
    then = { kind = "miss" }
"#;

fn config() -> RunConfig {
    RunConfig::from_toml(CONFIG).unwrap()
}

fn sweep(cfg: &RunConfig, dir: &Path, max_units: Option<usize>) -> detprobe::Result<SweepSummary> {
    let store = ResultsStore::open(dir)?;
    let opts = SweepOptions {
        workers: 2,
        max_units,
        config_hash: Some(cfg.config_hash()?),
        ..SweepOptions::default()
    };
    run_sweep(cfg.grid()?, &cfg.pipeline, &cfg.registry()?, &cfg.build_detectors()?, &cfg.match_cfg, &store, &opts)
}

fn raw_keys(dir: &Path) -> Vec<RecordKey> {
    load_results(&dir.join("results.jsonl")).unwrap().iter().map(CellResult::key).collect()
}

fn report_text(dir: &Path) -> (String, String) {
    let results = load_results(&dir.join("results.jsonl")).unwrap();
    let r = build_report(&results, &["A".into(), "B".into()], &config().report, None).unwrap();
    (r.to_markdown(), serde_json::to_string(&r).unwrap())
}

#[test]
fn record_count_is_cells_times_seeds_times_detectors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config();
    let s = sweep(&cfg, tmp.path(), None).unwrap();
    let grid = cfg.grid().unwrap();
    let n = grid.object_color.len()
        * grid.orientation_deg.len()
        * grid.scale_factor.len()
        * grid.location.len()
        * grid.background.len()
        * grid.object_type.len();
    assert_eq!(n, 16);
    assert_eq!(s.expected_records, n * grid.seeds.len() * grid.detectors.len());
    assert_eq!(s.total_records, s.expected_records);
    assert_eq!(s.stats.renders, n * grid.seeds.len());
    let keys = raw_keys(tmp.path());
    assert_eq!(keys.len(), s.expected_records);
    assert_eq!(keys.iter().collect::<BTreeSet<_>>().len(), keys.len());

    let again = sweep(&cfg, tmp.path(), None).unwrap();
    assert!(again.stats.appended.is_empty());
    assert_eq!(again.stats.renders, 0);
}

#[test]
fn interrupted_sweep_resumes_to_the_same_report() {
    let cfg = config();
    let (full, parts) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    sweep(&cfg, full.path(), None).unwrap();

    let first = sweep(&cfg, parts.path(), Some(10)).unwrap();
    assert_eq!(first.stats.renders, 10);
    assert_eq!(first.total_records, 20);
    let second = sweep(&cfg, parts.path(), Some(7)).unwrap();
    assert_eq!(second.total_records, 34);
    let rest = sweep(&cfg, parts.path(), None).unwrap();
    assert_eq!(rest.stats.renders, 64 - 17);
    assert_eq!(rest.total_records, rest.expected_records);

    let keys = raw_keys(parts.path());
    assert_eq!(keys.len(), rest.expected_records);
    assert_eq!(keys.iter().collect::<BTreeSet<_>>().len(), keys.len(), "duplicate keys after resume");
    assert_eq!(
        keys.iter().collect::<BTreeSet<_>>(),
        raw_keys(full.path()).iter().collect::<BTreeSet<_>>()
    );
    assert_eq!(report_text(parts.path()), report_text(full.path()));
}

#[test]
fn truncated_trailing_line_is_redone() {
    let cfg = config();
    let tmp = tempfile::tempdir().unwrap();
    sweep(&cfg, tmp.path(), Some(3)).unwrap();
    let path = tmp.path().join("results.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"attributes\": {\"object_ty");
    std::fs::write(&path, text).unwrap();
    let s = sweep(&cfg, tmp.path(), None).unwrap();
    assert_eq!(s.total_records, s.expected_records);
    let keys = raw_keys(tmp.path());
    assert_eq!(keys.iter().collect::<BTreeSet<_>>().len(), s.expected_records);
}

#[test]
fn store_of_another_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    sweep(&config(), tmp.path(), Some(1)).unwrap();
    let mut other = config();
    other.match_cfg.iou_threshold = 0.75;
    assert!(matches!(sweep(&other, tmp.path(), None), Err(Error::Config(_))));
}

/// Exact counts per cell key, straight from the records.
fn cell_counts(results: &[CellResult], detector: &str) -> BTreeMap<String, (AttributeVector, u64, u64)> {
    let mut m: BTreeMap<String, (AttributeVector, u64, u64)> = BTreeMap::new();
    for r in results {
        if r.detector_id != detector {
            continue;
        }
        if let CellStatus::Evaluated { outcome } = &r.status {
            let e = m.entry(r.attr_hash.clone()).or_insert((r.attributes.clone(), 0, 0));
            e.1 += 1;
            e.2 += u64::from(outcome.is_error());
        }
    }
    m
}

fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Marginal rate as the sample-weighted mean of its cells' rates.
fn weighted_mean(cells: &[(u64, u64)]) -> BigRational {
    let total: u64 = cells.iter().map(|c| c.0).sum();
    cells
        .iter()
        .map(|(n, e)| ratio(*n, total) * ratio(*e, *n))
        .fold(ratio(0, 1), |a, b| a + b)
}

fn check_marginals(results: &[CellResult], detector: &str, seeds: &[u64], depth: usize) -> usize {
    let cells: Vec<AttributeVector> = cell_counts(results, detector).into_values().map(|c| c.0).collect();
    let counts = cell_counts(results, detector);
    let mut checked = 0;
    for sg in subgroup_universe(&cells, seeds, depth).unwrap() {
        if sg.marginalized.is_empty() {
            continue;
        }
        let members: Vec<(u64, u64)> = counts.values().filter(|c| sg.matches(&c.0)).map(|c| (c.1, c.2)).collect();
        assert!(members.len() >= 2);
        let got = aggregate(results, &sg, detector).unwrap();
        let want = weighted_mean(&members);
        let got_rate = ratio(*got.error_rate.numer(), *got.error_rate.denom());
        assert_eq!(got_rate, want, "{}", sg.label());
        assert_eq!(got.n_samples, members.iter().map(|m| m.0).sum::<u64>());
        checked += 1;
    }
    checked
}

#[test]
fn marginal_rates_are_weighted_means_of_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config();
    sweep(&cfg, tmp.path(), None).unwrap();
    let results = load_results(&tmp.path().join("results.jsonl")).unwrap();
    let seeds = &cfg.grid().unwrap().seeds;
    for d in ["A", "B"] {
        assert!(check_marginals(&results, d, seeds, 2) > 0);
    }
    // A errs on 3 of 4 seeds at scale 6: 75% there, 0% at scale 2
    let sg = SubgroupSpec::parse("scale=6,angle=-,O=-,BG=-,type=sedan,loc=0.5,0.5", seeds.clone());
    let sg = sg.unwrap();
    let r = aggregate(&results, &sg, "A").unwrap();
    assert_eq!((r.n_errors, r.n_samples), (24, 32));
    assert_eq!(percent_half_away(r.n_errors, r.n_samples), 75);
}

fn synthetic_records(outcomes: &[(u8, u8)], grid: &detprobe::sweep::GridSpec) -> Vec<CellResult> {
    let cells = expand_grid(grid).unwrap();
    let mut out = Vec::new();
    let mut i = 0;
    for c in &cells {
        for s in &grid.seeds {
            let (kind, drop) = outcomes[i % outcomes.len()];
            i += 1;
            let status = if drop % 7 == 0 {
                CellStatus::Skipped {
                    reason: "render failed".into(),
                    source: Default::default(),
                }
            } else {
                CellStatus::Evaluated {
                    outcome: match kind % 3 {
                        0 => EvalOutcome::Correct,
                        1 => EvalOutcome::FalseNegative,
                        _ => EvalOutcome::WrongClass { label: "truck".into() },
                    },
                }
            };
            out.push(CellResult::new(c.clone(), *s, "X", status));
        }
    }
    out
}

fn small_grid() -> detprobe::sweep::GridSpec {
    detprobe::sweep::GridSpec {
        object_type: vec!["sedan".into(), "SUV".into()],
        object_color: vec![ObjectColor::Original],
        orientation_deg: vec![-50.0, 0.0, 30.0],
        scale_factor: vec![2.0, 6.0],
        location: vec![[0.5, 0.5]],
        background: vec![Background::Plain("grey".into()), Background::Plain("red".into())],
        seeds: vec![0, 1, 2],
        detectors: vec!["X".into()],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginalization_identity_holds(outcomes in prop::collection::vec((0u8..3, 1u8..50), 1..80)) {
        let grid = small_grid();
        let records = synthetic_records(&outcomes, &grid);
        let cells = cell_counts(&records, "X");
        // cells where every seed was skipped are absent; skip degenerate draws
        prop_assume!(cells.len() == grid.n_cells());
        check_marginals(&records, "X", &grid.seeds, 2);
    }

    #[test]
    fn unweighted_mean_matches_sum(rates in prop::collection::vec((0u64..20, 1u64..20), 1..30)) {
        let rs: Vec<detprobe::Rate> = rates.iter().map(|(e, n)| detprobe::Rate::new((*e).min(*n), *n)).collect();
        let want = rs.iter().map(|r| ratio(*r.numer(), *r.denom())).fold(ratio(0, 1), |a, b| a + b)
            / BigRational::from_integer(BigInt::from(rs.len()));
        prop_assert_eq!(mean_rate(&rs).unwrap(), want);
    }

    #[test]
    fn percent_rounds_half_away_from_zero(n in 0u64..100_000, d in 1u64..100_000) {
        let n = n % (d + 1);
        let (q, r) = (100 * n / d, 100 * n % d);
        let want = if 2 * r >= d { q + 1 } else { q };
        prop_assert_eq!(percent_half_away(n, d), want);
    }
}

#[test]
fn marginalized_attribute_list_is_canonical() {
    let cells = expand_grid(&small_grid()).unwrap();
    let u = subgroup_universe(&cells, &[0, 1, 2], 1).unwrap();
    let varying = [AttrName::ObjectType, AttrName::Orientation, AttrName::ScaleFactor, AttrName::Background];
    let marg: BTreeSet<AttrName> = u.iter().flat_map(|s| s.marginalized.iter().copied()).collect();
    assert_eq!(marg, varying.into_iter().collect());
    assert_eq!(u.iter().filter(|s| s.marginalized.is_empty()).count(), cells.len());
}
