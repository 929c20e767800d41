use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use errmine::active::{run_loop, AlphaSpec, RoundReport, StopReason};
use errmine::checkpoint::Checkpoint;
use errmine::config::RunConfig;
use errmine::dataset::{load_csv, Provenance};
use errmine::oracle::SyntheticParams;
use errmine::par::Exec;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.oracle.kind = "quadratic-bowl".into();
    cfg.oracle.params = Some(SyntheticParams {
        dim: 2,
        curvature: 3.0,
        ..Default::default()
    });
    cfg.data.train_size = 400;
    cfg.data.test_size = 100;
    cfg.model.hidden = vec![8, 8];
    cfg.train.max_epochs = 30;
    cfg.train.batch_size = 32;
    cfg.mine.seed_fraction = 0.1;
    cfg.mine.target_count = 20;
    cfg.rounds.max_rounds = 2;
    cfg.rounds.level_off = 0.0;
    cfg.rounds.alpha = AlphaSpec::Pooled;
    cfg
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn loop_persists_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let outcome = run_loop(&cfg, Some(dir.path()), Exec::default()).unwrap();
    let reports = &outcome.reports;
    assert!(!reports.is_empty() && reports.len() <= 3);
    assert!(reports.iter().all(RoundReport::is_consistent));

    let files = read_tree(dir.path());
    for name in ["S0.csv", "test.csv", "reports.json", "table.md", "round_0/model.ckpt"] {
        assert!(files.contains_key(name), "missing {name}");
    }
    let saved: Vec<RoundReport> = serde_json::from_slice(&files["reports.json"]).unwrap();
    assert_eq!(&saved, reports);

    let r0 = &reports[0];
    assert_eq!(r0.round, 0);
    assert_eq!(r0.alpha, 1.0);
    assert_eq!(r0.train_size, 400);
    assert_eq!(Some(r0.maximizer_eval_size), r0.newly_mined);

    let m0 = load_csv(&dir.path().join("round_0/mined.csv")).unwrap();
    assert_eq!(m0.len(), r0.newly_mined.unwrap());
    assert!(m0.len() <= 20);
    assert_eq!(m0.provenance_count(Provenance::Mined { round: 0 }), m0.len());

    if let Some(r1) = reports.get(1) {
        assert_eq!(r1.mined_size, m0.len());
        assert_eq!(r1.train_size, 400 + m0.len());
        assert_eq!(r1.maximizer_eval_size, m0.len());
        let pooled = 400.0 / (400 + m0.len()) as f64;
        assert_eq!(r1.alpha, pooled);
    }
    let last = Checkpoint::load(&dir.path().join(format!("round_{}/model.ckpt", reports.len() - 1)))
        .unwrap();
    assert_eq!(last.model, outcome.final_model);

    let table = String::from_utf8(files["table.md"].clone()).unwrap();
    assert_eq!(table.lines().count(), 8);
}

#[test]
fn zero_rounds_trains_and_evaluates_only() {
    let mut cfg = small_config();
    cfg.rounds.max_rounds = 0;
    let outcome = run_loop(&cfg, None, Exec::default()).unwrap();
    assert_eq!(outcome.reports.len(), 1);
    assert_eq!(outcome.stop, StopReason::MaxRounds);
    let r = &outcome.reports[0];
    assert_eq!(r.newly_mined, None);
    assert_eq!(r.maximizers, None);
}

#[test]
fn perfect_surrogate_stops_with_an_empty_mine() {
    let mut cfg = small_config();
    cfg.oracle.kind = "constant".into();
    cfg.oracle.params = Some(SyntheticParams {
        dim: 2,
        value: 3.0,
        ..Default::default()
    });
    // A linear model fits a constant exactly.
    cfg.model.hidden = vec![];
    cfg.train.initial_lr = 0.3;
    cfg.train.lr_decay_period_epochs = 100_000;
    cfg.train.max_epochs = 1500;
    cfg.train.stop_tol = 1e-15;
    cfg.mine.min_sq_error = 1e-16;
    let outcome = run_loop(&cfg, None, Exec::default()).unwrap();
    assert!(outcome.reports[0].train.mse < 1e-16, "{:?}", outcome.reports[0].train);
    assert_eq!(outcome.stop, StopReason::NoNewMaximizers);
    assert_eq!(outcome.reports.len(), 1);
    assert_eq!(outcome.reports[0].newly_mined, Some(0));
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_loop(&cfg, Some(a.path()), Exec::default()).unwrap();
    run_loop(&cfg, Some(b.path()), Exec::default()).unwrap();
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
}

#[cfg(feature = "parallel")]
#[test]
fn sequential_and_parallel_runs_agree() {
    let cfg = small_config();
    let s = run_loop(&cfg, None, Exec::Sequential).unwrap();
    let p = run_loop(&cfg, None, Exec::Parallel).unwrap();
    assert_eq!(s.reports, p.reports);
    assert_eq!(s.final_model, p.final_model);
}
