use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

use trrank::analysis::InterestRegion;
use trrank::commands::{
    cmd_ablation, cmd_analyze, cmd_enumerate, cmd_search, run_enumeration, Method, ENUMERATION_FILE,
    EVALUATIONS_FILE, MANIFEST_FILE, PHASES_FILE, SUMMARY_FILE,
};
use trrank::config::{load_config, RunConfig};
use trrank::records::{read_jsonl, rank_of, sorted};
use trrank_core::evolve::EvalRecord;
use trrank_core::Error;

const SMALL: &str = r#"{
  "dataset": {"dim": 16, "true_rank": 2, "factor_variance": 0.25, "train_count": 160, "test_count": 40},
  "model": {"mode_dims": [4, 4, 4, 4], "alpha": 2, "beta": 2},
  "bounds": {"min": 2, "max": 5},
  "train": {"epochs": 2, "batch_size": 32},
  "enumeration": {"candidates": [3, 4]},
  "search": {
    "phases": 2,
    "intervals": [1, 1],
    "candidates_per_element": 3,
    "ga": {"pop_size": 6, "generations": 3, "seed": 11}
  },
  "inheritance": {"layers": 2, "warmup_epochs": 2, "finetune_epochs": 1},
  "ablation": {"seeds": [1, 2]}
}"#;

fn small() -> RunConfig {
    let cfg: RunConfig = serde_json::from_str(SMALL).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn enumeration_covers_the_product_once_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let a = cmd_enumerate(&cfg, &dir.path().join("a")).unwrap();
    assert_eq!(a.records.len(), 16);
    let set: BTreeSet<Vec<usize>> = a.records.iter().map(|r| r.genome.as_slice().to_vec()).collect();
    let mut product = BTreeSet::new();
    for g0 in [3, 4] {
        for g1 in [3, 4] {
            for g2 in [3, 4] {
                for g3 in [3, 4] {
                    product.insert(vec![g0, g1, g2, g3]);
                }
            }
        }
    }
    assert_eq!(set, product);
    cmd_enumerate(&cfg, &dir.path().join("b")).unwrap();
    for f in [ENUMERATION_FILE, "ranking.jsonl", MANIFEST_FILE] {
        assert_eq!(read(&dir.path().join("a").join(f)), read(&dir.path().join("b").join(f)), "{f}");
    }
    let records: Vec<EvalRecord> = read_jsonl(&dir.path().join("a").join(ENUMERATION_FILE)).unwrap();
    let order = sorted(&records);
    assert_eq!(rank_of(&order[0].genome, &records).unwrap(), 1);
    assert_eq!(rank_of(&order[15].genome, &records).unwrap(), 16);
}

#[test]
fn enumeration_refuses_above_the_cap() {
    let mut cfg = small();
    cfg.enumeration.cap = 10;
    let data = trrank::commands::dataset(&cfg).unwrap();
    let err = run_enumeration(&cfg, &data).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("16")), "{err}");

    cfg.bounds = trrank_core::progressive::RankBounds::new(3, 15).unwrap();
    cfg.enumeration.candidates = None;
    cfg.enumeration.cap = 5000;
    let err = run_enumeration(&cfg, &data).unwrap_err();
    assert!(err.to_string().contains("28561"), "{err}");
}

#[test]
fn search_reruns_from_its_manifest_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let (result, summary) = cmd_search(&small(), &first, None).unwrap();
    assert!(result.log.len() <= 6 * 3 * 2);
    assert_eq!(summary.requested, 6 * 3 * 2);
    assert_eq!(summary.best_per_phase.len(), 2);
    let phases = fs::read_to_string(first.join(PHASES_FILE)).unwrap();
    assert_eq!(phases.lines().count(), 2);
    assert!(phases.lines().next().unwrap().contains("\"promising_rank\""));

    let replay_cfg = load_config(&first.join(MANIFEST_FILE)).unwrap();
    let second = dir.path().join("second");
    cmd_search(&replay_cfg, &second, None).unwrap();
    for f in [EVALUATIONS_FILE, PHASES_FILE, SUMMARY_FILE, MANIFEST_FILE] {
        assert_eq!(read(&first.join(f)), read(&second.join(f)), "{f}");
    }
}

#[test]
fn single_objective_search_lists_one_best_per_phase() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.search.ga.mode = trrank_core::evolve::Mode::SingleObjective;
    let (result, summary) = cmd_search(&cfg, dir.path(), None).unwrap();
    assert_eq!(summary.best_per_phase.len(), cfg.search.phases);
    let losses: Vec<f64> = summary.best.iter().map(|s| s.loss).collect();
    assert!(losses.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(summary.best_overall.genome, result.best_overall.genome);
}

#[test]
fn inherited_search_uses_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("ckpt");
    let (result, summary) = cmd_search(&small(), &dir.path().join("out"), Some(&store)).unwrap();
    assert!(summary.inheritance);
    assert!(result.log.iter().all(|r| r.genome.len() == 2 && r.loss.is_finite()));
    for v in [3, 4, 5] {
        assert!(store.join(format!("layer_0/V_{v}/cores.bin")).is_file());
        assert!(store.join(format!("layer_1/V_{v}/meta.json")).is_file());
    }
}

#[test]
fn analysis_matches_a_two_pass_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    cmd_enumerate(&cfg, dir.path()).unwrap();
    let results = dir.path().join(ENUMERATION_FILE);
    let report = cmd_analyze(&results, 10, None, None).unwrap();
    assert_eq!(report.range, (3, 4));
    let records: Vec<EvalRecord> = read_jsonl(&results).unwrap();
    let best = &sorted(&records)[..10];
    for stats in &report.per_element {
        let values: Vec<f64> = best.iter().map(|r| r.genome.as_slice()[stats.element] as f64).collect();
        let mean = values.iter().sum::<f64>() / 10.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
        assert!((stats.region.mean - mean).abs() <= 1e-12);
        assert!((stats.region.std - var.sqrt()).abs() <= 1e-12);
        assert!((stats.region.width() - 2.0 * var.sqrt()).abs() <= 1e-12);
    }
    let csv = fs::read_to_string(dir.path().join("cooccurrence_top10.csv")).unwrap();
    assert!(csv.starts_with("element_i,element_j,value_i,value_j,count"));
    assert!(dir.path().join("analysis_top10.json").is_file());
    assert!(cmd_analyze(&results, 17, None, None).is_err());
    let r = InterestRegion::from_values(&[5.0; 4]).unwrap();
    assert_eq!((r.low, r.high), (5.0, 5.0));
}

#[test]
fn ablation_reports_two_rows_per_phase_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.enumeration.candidates = None;
    cfg.enumeration.cap = 500;
    cmd_enumerate(&cfg, dir.path()).unwrap();
    let rows = cmd_ablation(&cfg, dir.path(), None).unwrap();
    assert_eq!(rows.len(), 2 * cfg.search.phases * cfg.ablation.seeds.len());
    let budget = cfg.search.ga.pop_size * cfg.search.ga.generations * cfg.search.phases;
    for row in &rows {
        assert!(row.evaluations <= budget);
        assert!(row.rank_of >= 1 && row.rank_of <= 256);
    }
    assert!(rows.iter().any(|r| r.method == Method::Nsga2));
    assert!(dir.path().join("ablation/ablation.jsonl").is_file());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_trrank");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"bounds": {"min": 3, "max": 8}, "tran": {}}"#).unwrap();
    let status = Command::new(bin)
        .args(["search", "--config", bad.to_str().unwrap(), "--out"])
        .arg(dir.path().join("x"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let data = dir.path().join("data.bin");
    let status = Command::new(bin)
        .args(["synthetic-data", "--seed", "5", "--out"])
        .arg(&data)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let loaded = trrank_core::tr_models::SyntheticDataset::load(&data).unwrap();
    assert_eq!(loaded.config.seed, 5);

    let good = dir.path().join("good.json");
    fs::write(&good, SMALL).unwrap();
    let out = dir.path().join("search");
    let status = Command::new(bin)
        .args(["search", "--config", good.to_str().unwrap(), "--out"])
        .arg(&out)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let replay = dir.path().join("replay");
    let status = Command::new(bin)
        .args(["search", "--config"])
        .arg(out.join(MANIFEST_FILE))
        .arg("--out")
        .arg(&replay)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(read(&out.join(EVALUATIONS_FILE)), read(&replay.join(EVALUATIONS_FILE)));
}
