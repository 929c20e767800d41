//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Run alone with `cargo test --release -p errmine-cli --test acceptance`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use errmine::active::{evaluate, run_loop, trimmed_metrics, weighted_loss, AlphaSpec};
use errmine::config::RunConfig;
use errmine::dataset::{label, sample_uniform, LabeledSet, Provenance};
use errmine::gradcheck::{check_gradients, kink_margin, Tolerance};
use errmine::miner::{mine_with, AscentConfig, AscentStatus};
use errmine::nn::{init_mlp, MlpModel};
use errmine::oracle::{
    barrier_price, black_scholes_call, mc_reference_price, make_synthetic_oracle, BarrierInputs,
    BarrierOracle, FdConfig, MultimodalSine, Oracle, SyntheticParams, DEFAULT_BARRIER_DOMAIN, SPOT,
};
use errmine::par::Exec;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace_root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

fn gradient_correctness() -> Outcome {
    let tol = Tolerance {
        rtol: 1e-4,
        atol: 1e-7,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut models, mut skipped, mut checked, mut worst) = (0, 0, 0, 0.0f64);
    let mut failures = Vec::new();
    let mut seed = 0;
    while models < 20 {
        seed += 1;
        let layers = rng.random_range(3..=6);
        let mut dims = vec![rng.random_range(1..=8)];
        dims.extend((1..layers).map(|_| rng.random_range(8..=64)));
        dims.push(1);
        let model = init_mlp(&dims, seed).unwrap();
        // Inputs must sit at least 1e-6 from every ReLU kink; 1e-3 is used.
        let inputs: Option<Vec<Vec<f64>>> = (0..10)
            .map(|_| {
                (0..10_000).find_map(|_| {
                    let x: Vec<f64> = (0..dims[0]).map(|_| rng.random()).collect();
                    (kink_margin(&model, &x).unwrap() > 1e-3).then_some(x)
                })
            })
            .collect();
        let Some(inputs) = inputs else {
            skipped += 1;
            continue;
        };
        for x in &inputs {
            let r = check_gradients(&model, x, 1e-5, tol).unwrap();
            checked += r.checked;
            worst = worst.max(r.max_rel_err);
            failures.extend(r.mismatches.into_iter().map(|m| format!("{dims:?} {}", m.what)));
        }
        models += 1;
    }
    check(
        failures.is_empty(),
        format!(
            "{models} models x 10 inputs, {checked} derivatives, max rel err {worst:.2e}, \
             {skipped} models without kink-free inputs skipped, {} mismatches {:?}",
            failures.len(),
            &failures[..failures.len().min(3)]
        ),
    )
}

fn oracle_cross_check() -> Outcome {
    let z = BarrierOracle::new(DEFAULT_BARRIER_DOMAIN.to_vec()).unwrap();
    let set = sample_uniform(&z, 50, 2024).unwrap();
    let mut worst_z = 0.0f64;
    let mut outside = Vec::new();
    let mut points: Vec<Vec<f64>> = (0..set.len()).map(|i| set.raw_input(i)).collect();
    points.push(vec![1.3, 1.0, 0.5, 0.25, 0.02]);
    for (i, raw) in points.iter().enumerate() {
        let inp = BarrierInputs::from_slice(raw).unwrap();
        let exact = barrier_price(&inp).unwrap();
        // 250 steps per year, floored at the 100-step minimum of the engine.
        let steps = ((250.0 * inp.tau).ceil() as usize).max(100);
        let mc = mc_reference_price(&inp, 200_000, steps, 1000 + i as u64).unwrap();
        let zscore = (exact - mc.estimate).abs() / mc.std_error.max(f64::MIN_POSITIVE);
        worst_z = worst_z.max(zscore);
        if zscore > 3.0 {
            outside.push(format!("{raw:?}: closed {exact:.5} mc {:.5}±{:.5}", mc.estimate, mc.std_error));
        }
    }
    let vanilla = black_scholes_call(SPOT, 100.0, 1.0, 0.2, 0.05);
    let far = barrier_price(&BarrierInputs::from_slice(&[50.0, 1.0, 1.0, 0.2, 0.05]).unwrap()).unwrap();
    let far_gap = (far - vanilla).abs();
    let zeros = [(1.1, 1.1), (1.2, 1.4), (1.5, 1.5), (1.01, 1.5)]
        .iter()
        .all(|&(b, k)| barrier_price(&BarrierInputs::from_slice(&[b, k, 0.7, 0.3, 0.04]).unwrap()).unwrap() == 0.0);
    check(
        outside.is_empty() && far_gap < 1e-6 && zeros,
        format!(
            "{} inputs, worst |closed - mc| = {worst_z:.2} SE, far-barrier gap {far_gap:.1e}, b<=k zero: {zeros} {outside:?}",
            points.len()
        ),
    )
}

fn random_set(rng: &mut ChaCha8Rng, z: &dyn Oracle, n: usize, prov: Provenance) -> LabeledSet {
    let d = z.dim();
    let inputs = ndarray::Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
    let targets = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
    LabeledSet::from_parts("r", z.normalizer().unwrap(), z.dim_names(), z.units(), inputs, Some(targets), vec![prov; n])
        .unwrap()
}

/// Mean squared error computed row by row through `forward`.
fn direct_mse(model: &MlpModel, sets: &[&LabeledSet]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for set in sets {
        for (i, t) in set.targets().unwrap().iter().enumerate() {
            let e = model.forward(&set.input(i)).unwrap() - t;
            s += e * e;
            n += 1;
        }
    }
    s / n as f64
}

fn objective_identities() -> Outcome {
    let z = make_synthetic_oracle("constant", &SyntheticParams { dim: 3, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut exact_ends = true;
    for pair in 0..100 {
        let model = init_mlp(&[3, 16, 16, 1], pair).unwrap();
        let nb = rng.random_range(1..400);
        let nm = rng.random_range(1..100);
        let base = random_set(&mut rng, z.as_ref(), nb, Provenance::Uniform);
        let mined = random_set(&mut rng, z.as_ref(), nm, Provenance::Mined { round: 0 });
        let alpha = AlphaSpec::Pooled.resolve(nb, nm);
        let l = weighted_loss(&model, &base, &mined, alpha).unwrap();
        let pooled = direct_mse(&model, &[&base, &mined]);
        worst = worst.max((l - pooled).abs() / pooled);
        exact_ends &= weighted_loss(&model, &base, &mined, 1.0).unwrap() == evaluate(&model, &base).unwrap().mse;
        exact_ends &= weighted_loss(&model, &base, &mined, 0.0).unwrap() == evaluate(&model, &mined).unwrap().mse;
    }
    check(
        worst < 1e-12 && exact_ends,
        format!("100 pairs, worst pooled rel diff {worst:.2e}, alpha 1 and 0 exact: {exact_ends}"),
    )
}

fn miner_ground_truth() -> Outcome {
    let z = MultimodalSine::new(1.0, vec![(0.0, 3.0 * std::f64::consts::PI); 2]).unwrap();
    let normalizer = z.normalizer().unwrap();
    let maxima: Vec<Vec<f64>> = z.maximizers().iter().map(|m| normalizer.normalize(m)).collect();
    let zero = MlpModel::constant(&[2, 1], 0.0).unwrap();
    let set = label(sample_uniform(&z, 1000, 4).unwrap(), &z).unwrap();
    let cfg = AscentConfig {
        initial_step: 0.005,
        step_decay_period: 1000,
        stop_rel_change: 1e-10,
        max_iters: 1000,
        seed_fraction: 1.0,
        target_count: 1000,
        ..AscentConfig::default()
    };
    let out = mine_with(&zero, &z, &set, &cfg, &FdConfig::default(), 0, Exec::default()).unwrap();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let converged: Vec<_> = out.ascents.iter().filter(|a| a.status == AscentStatus::Converged).collect();
    let near = converged
        .iter()
        .filter(|a| maxima.iter().any(|m| dist(&a.final_point, m) < 1e-2))
        .count();
    let frac = near as f64 / converged.len().max(1) as f64;
    let mut min_pair = f64::INFINITY;
    for i in 0..out.kept.len() {
        for j in i + 1..out.kept.len() {
            min_pair = min_pair.min(dist(&out.kept[i].final_point, &out.kept[j].final_point));
        }
    }
    let improving = out.kept.iter().all(|k| k.final_sq_error >= k.seed_sq_error);
    check(
        !converged.is_empty() && frac >= 0.95 && min_pair >= 0.001 && improving,
        format!(
            "{} ascents, {} converged, {:.1}% within 1e-2 of a maximizer, {} kept, \
             min kept distance {min_pair:.3e}, all kept improving: {improving}",
            out.ascents.len(),
            converged.len(),
            100.0 * frac,
            out.kept.len()
        ),
    )
}

fn desk_scale_trend() -> Outcome {
    let text = fs::read_to_string(workspace_root().join("configs/desk.toml")).unwrap();
    let base: RunConfig = toml::from_str(&text).unwrap();
    let mut wins = 0;
    let mut lines = Vec::new();
    for (init, shuffle) in [(7, 11), (17, 21), (27, 31)] {
        let mut cfg = base.clone();
        cfg.model.init_seed = init;
        cfg.model.train_seed = shuffle;
        cfg.rounds.max_rounds = 1;
        cfg.rounds.alpha = AlphaSpec::Pooled;
        let out = run_loop(&cfg, None, Exec::default()).map_err(|e| e.to_string())?;
        let [r0, r1] = &out.reports[..] else {
            lines.push(format!("seeds {init}/{shuffle}: {} rounds", out.reports.len()));
            continue;
        };
        let (m0, m1) = (r0.maximizers.unwrap().mae, r1.maximizers.unwrap().mae);
        let rel = r1.test.mae / r0.test.mae - 1.0;
        let win = m1 < m0 && rel <= 0.05;
        wins += win as usize;
        lines.push(format!(
            "seeds {init}/{shuffle}: |M0| {} alpha {:.4} maximizer MAE {m0:.4} -> {m1:.4}, test MAE {:.4} -> {:.4} ({:+.1}%)",
            r1.mined_size,
            r1.alpha,
            r0.test.mae,
            r1.test.mae,
            100.0 * rel
        ));
    }
    check(wins >= 2, format!("{wins}/3 runs improve; {}", lines.join("; ")))
}

fn trimmed_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = BarrierOracle::new(DEFAULT_BARRIER_DOMAIN.to_vec()).unwrap();
    let mut sets = Vec::new();
    for s in 0..20 {
        let n = rng.random_range(1..3000);
        sets.push(label(sample_uniform(&z, n, 600 + s).unwrap(), &z).unwrap());
    }
    let mut violations = 0;
    let mut trim0_exact = true;
    let mut evaluated = 0;
    for (i, set) in sets.iter().enumerate() {
        let model = init_mlp(&[5, 16, 1], i as u64).unwrap();
        let full = evaluate(&model, set).unwrap();
        trim0_exact &= trimmed_metrics(&model, set, 0.0).unwrap() == full;
        match trimmed_metrics(&model, set, 0.001) {
            Ok(t) => {
                evaluated += 1;
                if t.mse > full.mse || t.mae > full.mae {
                    violations += 1;
                }
            }
            Err(_) => assert_eq!(set.len(), 1),
        }
    }
    check(
        violations == 0 && trim0_exact,
        format!("{evaluated} sets trimmed at 0.1%, {violations} increases, trim 0 identical: {trim0_exact}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(workspace_root().join("configs/desk.toml"))
        .unwrap()
        .replace("train_size = 20000", "train_size = 3000")
        .replace("test_size = 2000", "test_size = 300")
        .replace("max_epochs = 300", "max_epochs = 15")
        .replace("target_count = 1000", "target_count = 100");
    fs::write(dir.path().join("cfg.toml"), text).unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (out, threads) in runs {
        for stage in ["gen-data", "train", "mine"] {
            let status = Command::new(env!("CARGO_BIN_EXE_errmine"))
                .current_dir(dir.path())
                .env("RUST_LOG", "error")
                .args(["--config", "cfg.toml", "--out", out, "--threads", threads, stage])
                .status()
                .unwrap();
            if !status.success() {
                return Err(format!("{stage} with --threads {threads} failed: {status}"));
            }
        }
    }
    let files = ["S0.csv", "test.csv", "model.ckpt", "history.json", "M0.csv", "ascents_0.jsonl", "mine_0.json"];
    let mut differing = Vec::new();
    for f in files {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        for other in ["b", "c"] {
            if fs::read(dir.path().join(other).join(f)).unwrap() != a {
                differing.push(format!("{other}/{f}"));
            }
        }
    }
    check(
        differing.is_empty(),
        format!("gen-data, train, mine x (threads 1, 1, 4): {} artifacts compared, differing {differing:?}", files.len() * 2),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        ("gradient correctness", gradient_correctness),
        ("oracle cross-check", oracle_cross_check),
        ("weighted-objective identities", objective_identities),
        ("miner on known ground truth", miner_ground_truth),
        ("desk-scale retraining trend", desk_scale_trend),
        ("trimmed-metric contract", trimmed_contract),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += result.is_err() as usize;
        writeln!(out, "acceptance {} [{tag}] {name} ({secs:.1} s): {detail}", i + 1).unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} acceptance criteria failed").unwrap();
        std::process::exit(1);
    }
}
