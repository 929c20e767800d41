//! The α-weighted objective, evaluation metrics and the iterated
//! mine → merge → retrain loop.
//!
//! The retraining objective over a base set `S` and a mined set `M` is
//!
//! ```text
//! α · mean_{x∈S} |Y(x) − Z(x)|² + (1 − α) · mean_{x∈M} |Y(x) − Z(x)|²
//! ```
//!
//! With `α = |S| / (|S| + |M|)` ("pooled") this is the plain MSE over `S ∪ M`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array1, Axis};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{label_with, merge, sample_uniform, save_csv, LabeledSet};
use crate::error::{Error, Result};
use crate::miner::{mine_with, AscentConfig};
use crate::nn::{init_mlp, train, MlpModel, TrainConfig, TrainHistory, WeightedSamples};
use crate::par::Exec;

/// Either a fixed α or the pooled choice `|S| / (|S| + |M|)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AlphaSpec {
    #[default]
    Pooled,
    Fixed(f64),
}

impl AlphaSpec {
    pub fn resolve(self, base_len: usize, mined_len: usize) -> f64 {
        match self {
            AlphaSpec::Fixed(a) => a,
            AlphaSpec::Pooled if base_len + mined_len == 0 => 1.0,
            AlphaSpec::Pooled => base_len as f64 / (base_len + mined_len) as f64,
        }
    }
}

impl Serialize for AlphaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaSpec::Pooled => s.serialize_str("pooled"),
            AlphaSpec::Fixed(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(AlphaSpec::Fixed(a)),
            Raw::Text(t) if t == "pooled" => Ok(AlphaSpec::Pooled),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "alpha must be a number or \"pooled\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RetrainMode {
    /// Re-initialize from the model's init seed.
    #[default]
    Fresh,
    /// Continue from the current parameters.
    FineTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    pub alpha: AlphaSpec,
    /// α values for a retraining sweep, one independent model each.
    pub alphas: Vec<f64>,
    pub retrain_mode: RetrainMode,
    /// Per-round multiplier on the ascent's initial step.
    pub step_tightening: f64,
    /// Per-round multiplier on the ascent's stopping tolerance.
    pub tol_tightening: f64,
    pub max_rounds: usize,
    /// Stop once the relative test-MSE improvement drops below this.
    pub level_off: f64,
    /// Fraction of highest-|residual| maximizers removed for trimmed metrics.
    pub trim_fraction: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            alpha: AlphaSpec::Pooled,
            alphas: vec![1.0, 0.99, 0.98, 0.97, 0.96, 0.95, 0.94, 0.93, 0.92, 0.91, 0.9],
            retrain_mode: RetrainMode::Fresh,
            step_tightening: 0.01,
            tol_tightening: 0.01,
            max_rounds: 1,
            level_off: 0.01,
            trim_fraction: 0.001,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("loop: {msg}")));
        if let AlphaSpec::Fixed(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha {a} outside [0, 1]"));
            }
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("sweep alpha {a} outside [0, 1]"));
        }
        for (name, f) in [
            ("step_tightening", self.step_tightening),
            ("tol_tightening", self.tol_tightening),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name} {f} outside (0, 1]"));
            }
        }
        if !(self.level_off >= 0.0) {
            return bad("level_off must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.trim_fraction) {
            return bad(format!("trim_fraction {} outside [0, 1)", self.trim_fraction));
        }
        Ok(())
    }

    /// The ascent schedule for round `k`: initial step and stopping tolerance
    /// scaled by the tightening factors to the power `k`.
    pub fn tightened(&self, base: &AscentConfig, round: usize) -> AscentConfig {
        let k = round as i32;
        AscentConfig {
            initial_step: base.initial_step * self.step_tightening.powi(k),
            stop_rel_change: base.stop_rel_change * self.tol_tightening.powi(k),
            ..base.clone()
        }
    }
}

fn check_alpha(alpha: f64, base: &LabeledSet, mined: &LabeledSet) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    if base.is_empty() {
        return Err(Error::Domain("base set is empty".into()));
    }
    if mined.is_empty() && alpha < 1.0 {
        return Err(Error::Domain(format!("alpha {alpha} < 1 with an empty mined set")));
    }
    Ok(())
}

/// The α-weighted objective at the current model.
pub fn weighted_loss(
    model: &MlpModel,
    base: &LabeledSet,
    mined: &LabeledSet,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha, base, mined)?;
    let mean_sq = |set: &LabeledSet| -> Result<f64> {
        let r = set.residuals(model)?;
        Ok(r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64)
    };
    let base_term = alpha * mean_sq(base)?;
    if alpha == 1.0 {
        return Ok(base_term);
    }
    Ok(base_term + (1.0 - alpha) * mean_sq(mined)?)
}

/// Training samples realizing the α-weighted objective. A set whose weight is
/// zero is left out entirely, so `α = 1` trains on exactly the base set.
pub fn weighted_samples(
    base: &LabeledSet,
    mined: &LabeledSet,
    alpha: f64,
) -> Result<WeightedSamples> {
    check_alpha(alpha, base, mined)?;
    if alpha == 1.0 {
        return base.to_weighted(1.0);
    }
    if alpha == 0.0 {
        return mined.to_weighted(1.0);
    }
    if base.normalizer() != mined.normalizer() {
        return Err(Error::IncompatibleSets(format!(
            "{} and {} use different normalizers",
            base.name, mined.name
        )));
    }
    let b = base.to_weighted(alpha)?;
    let m = mined.to_weighted(1.0 - alpha)?;
    let cat = |x: &Array1<f64>, y: &Array1<f64>| concatenate(Axis(0), &[x.view(), y.view()]);
    WeightedSamples::new(
        concatenate(Axis(0), &[b.inputs.view(), m.inputs.view()])
            .map_err(|e| Error::IncompatibleSets(e.to_string()))?,
        cat(&b.targets, &m.targets).expect("1-D concatenation"),
        cat(&b.weights, &m.weights).expect("1-D concatenation"),
    )
}

/// Retrains on the α-weighted objective.
pub fn retrain(
    model: &MlpModel,
    base: &LabeledSet,
    mined: &LabeledSet,
    alpha: f64,
    mode: RetrainMode,
    cfg: &TrainConfig,
    train_seed: u64,
) -> Result<(MlpModel, TrainHistory)> {
    let data = weighted_samples(base, mined, alpha)?;
    let start = match mode {
        RetrainMode::Fresh => init_mlp(model.layer_dims(), model.init_seed())?,
        RetrainMode::FineTune => model.clone(),
    };
    train(start, &data, cfg, train_seed)
}

/// Mean squared and mean absolute error, in dollars² and dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

fn metrics_of(residuals: impl Iterator<Item = f64>) -> Metrics {
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    for r in residuals {
        sq += r * r;
        abs += r.abs();
        n += 1;
    }
    Metrics {
        mse: sq / n as f64,
        mae: abs / n as f64,
    }
}

pub fn evaluate(model: &MlpModel, set: &LabeledSet) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::Domain(format!("cannot evaluate on empty set {}", set.name)));
    }
    Ok(metrics_of(set.residuals(model)?.into_iter()))
}

/// Metrics after dropping the `⌈trim_fraction·n⌉` samples with the largest
/// `|Y − z|` (ties: lower index dropped first).
pub fn trimmed_metrics(model: &MlpModel, set: &LabeledSet, trim_fraction: f64) -> Result<Metrics> {
    if !(0.0..1.0).contains(&trim_fraction) {
        return Err(Error::Domain(format!("trim fraction {trim_fraction} outside [0, 1)")));
    }
    let residuals = set.residuals(model)?;
    let drop = (trim_fraction * residuals.len() as f64).ceil() as usize;
    if drop >= residuals.len() {
        return Err(Error::Domain(format!(
            "trimming {drop} of {} samples leaves nothing",
            residuals.len()
        )));
    }
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    order.sort_by(|&a, &b| {
        residuals[b]
            .abs()
            .total_cmp(&residuals[a].abs())
            .then(a.cmp(&b))
    });
    let mut dropped = vec![false; residuals.len()];
    for &i in &order[..drop] {
        dropped[i] = true;
    }
    Ok(metrics_of(
        residuals
            .iter()
            .zip(&dropped)
            .filter(|(_, &d)| !d)
            .map(|(&r, _)| r),
    ))
}

/// One column of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub alpha: f64,
    /// `|S₀|`.
    pub base_size: usize,
    /// Size of the mined set merged in for this round's training (0 in round 0).
    pub mined_size: usize,
    pub train_size: usize,
    pub train: Metrics,
    pub test: Metrics,
    /// Metrics on the evaluation maximizer set, when one exists.
    pub maximizers: Option<Metrics>,
    pub maximizers_trimmed: Option<Metrics>,
    pub trim_fraction: f64,
    pub maximizer_eval_size: usize,
    pub epochs: usize,
    pub converged: bool,
    /// Size of the set mined from this round's model, if mining ran.
    pub newly_mined: Option<usize>,
    pub shortfall: bool,
}

impl RoundReport {
    /// Checks the Jensen bound `MAE² ≤ MSE` and finiteness of every metric.
    pub fn is_consistent(&self) -> bool {
        let ok = |m: &Metrics| {
            m.mse.is_finite()
                && m.mae.is_finite()
                && m.mse >= 0.0
                && m.mae >= 0.0
                && m.mae * m.mae <= m.mse * (1.0 + 1e-12)
        };
        ok(&self.train)
            && ok(&self.test)
            && self.maximizers.as_ref().is_none_or(ok)
            && self.maximizers_trimmed.as_ref().is_none_or(ok)
    }
}

fn sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let decimals = (3 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Markdown table, α columns sorted descending, with the six metric rows:
/// Training MSE, Test MSE, Maximizer MSE, Training MAE, Test MAE,
/// Maximizer MAE.
pub fn render_table(reports: &[RoundReport]) -> String {
    let mut cols: Vec<&RoundReport> = reports.iter().collect();
    cols.sort_by(|a, b| b.alpha.total_cmp(&a.alpha));
    let mut out = String::from("| α |");
    for c in &cols {
        out.push_str(&format!(" {} |", sig4(c.alpha)));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(cols.len()));
    out.push('\n');
    type Row = (&'static str, fn(&RoundReport) -> Option<f64>);
    let rows: [Row; 6] = [
        ("Training MSE", |r| Some(r.train.mse)),
        ("Test MSE", |r| Some(r.test.mse)),
        ("Maximizer MSE", |r| r.maximizers.map(|m| m.mse)),
        ("Training MAE", |r| Some(r.train.mae)),
        ("Test MAE", |r| Some(r.test.mae)),
        ("Maximizer MAE", |r| r.maximizers.map(|m| m.mae)),
    ];
    for (name, get) in rows {
        out.push_str(&format!("| {name} |"));
        for c in &cols {
            match get(c) {
                Some(v) => out.push_str(&format!(" {} |", sig4(v))),
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxRounds,
    NoNewMaximizers,
    LevelOff,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub reports: Vec<RoundReport>,
    pub stop: StopReason,
    pub final_model: MlpModel,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes every ascent as one JSON object per line.
pub fn write_ascents_jsonl(path: &Path, ascents: &[crate::miner::AscentResult]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for a in ascents {
        serde_json::to_writer(&mut f, a)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Runs the full active-learning loop.
///
/// Round 0 samples and labels `S₀` and the test set and trains on `S₀`.
/// Each round `k ≥ 1` retrains on `S_{k−1}` and `M_{k−1}` under the configured
/// α and evaluates on `S_k = S_{k−1} ∪ M_{k−1}`, the test set and
/// `∪_{j<k} M_j`. Every round with `k < max_rounds` then mines `M_k` with the
/// schedule tightened `k` times; round 0 is evaluated on the `M₀` it produced.
///
/// The loop stops after `max_rounds`, when mining finds nothing, or when the
/// relative test-MSE improvement falls below `level_off`.
///
/// With `out` set, each round writes `round_k/{model.ckpt,history.json}`,
/// `round_k/{mined.csv,ascents.jsonl}` when it mined, and rewrites
/// `reports.json` so a failed run leaves its completed rounds behind.
pub fn run_loop(cfg: &RunConfig, out: Option<&Path>, exec: Exec) -> Result<LoopOutcome> {
    cfg.validate()?;
    let oracle = cfg.oracle.build()?;
    let z = oracle.as_ref();
    let fd = &cfg.oracle.fd;
    let rounds = &cfg.rounds;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }

    let s0 = label_with(sample_uniform(z, cfg.data.train_size, cfg.data.train_seed)?, z, exec)?
        .with_name("S0");
    let test = label_with(sample_uniform(z, cfg.data.test_size, cfg.data.test_seed)?, z, exec)?
        .with_name("test");
    if let Some(dir) = out {
        save_csv(&s0, &dir.join("S0.csv"))?;
        save_csv(&test, &dir.join("test.csv"))?;
    }

    let dims = cfg.model.layer_dims(z.dim());
    let train_seed = cfg.model.train_seed;
    let (mut model, mut history) = train(
        init_mlp(&dims, cfg.model.init_seed)?,
        &s0.to_weighted(1.0)?,
        &cfg.train,
        train_seed,
    )?;

    let mut train_set = s0.clone();
    let mut all_mined: Option<LabeledSet> = None;
    let mut last_mined: Option<LabeledSet> = None;
    let mut reports: Vec<RoundReport> = Vec::new();
    let mut stop = StopReason::MaxRounds;

    for k in 0..=rounds.max_rounds {
        let mut alpha = 1.0;
        let mut mined_size = 0;
        if k > 0 {
            let prev = last_mined.take().expect("mined set from the previous round");
            alpha = rounds.alpha.resolve(train_set.len(), prev.len());
            (model, history) = retrain(
                &model,
                &train_set,
                &prev,
                alpha,
                rounds.retrain_mode,
                &cfg.train,
                train_seed,
            )?;
            mined_size = prev.len();
            train_set = merge(&train_set, &prev)?.with_name(&format!("S{k}"));
        }
        let round_dir = out.map(|d| d.join(format!("round_{k}")));
        if let Some(dir) = &round_dir {
            fs::create_dir_all(dir)?;
            Checkpoint::new(model.clone(), Some(train_seed), cfg.to_json())
                .save(&dir.join("model.ckpt"))?;
            write_json(&dir.join("history.json"), &history)?;
        }

        let train_metrics = evaluate(&model, &train_set)?;
        let test_metrics = evaluate(&model, &test)?;
        let leveled_off = reports.last().is_some_and(|prev: &RoundReport| {
            let gain = (prev.test.mse - test_metrics.mse) / prev.test.mse;
            gain < rounds.level_off
        });

        let mut newly_mined = None;
        let mut shortfall = false;
        let mut fresh: Option<LabeledSet> = None;
        if k < rounds.max_rounds && !leveled_off {
            let schedule = rounds.tightened(&cfg.mine, k);
            let outcome = mine_with(&model, z, &train_set, &schedule, fd, k, exec)?;
            if let Some(dir) = &round_dir {
                save_csv(&outcome.maximizers, &dir.join("mined.csv"))?;
                write_ascents_jsonl(&dir.join("ascents.jsonl"), &outcome.ascents)?;
            }
            newly_mined = Some(outcome.maximizers.len());
            shortfall = outcome.shortfall.is_some();
            fresh = Some(outcome.maximizers);
        }

        let eval_set = match (k, &fresh, &all_mined) {
            (0, Some(m), _) if !m.is_empty() => Some(m),
            (0, _, _) => None,
            (_, _, union) => union.as_ref(),
        };
        let (maximizers, maximizers_trimmed) = match eval_set {
            Some(m) => (
                Some(evaluate(&model, m)?),
                trimmed_metrics(&model, m, rounds.trim_fraction).ok(),
            ),
            None => (None, None),
        };
        let report = RoundReport {
            round: k,
            alpha,
            base_size: s0.len(),
            mined_size,
            train_size: train_set.len(),
            train: train_metrics,
            test: test_metrics,
            maximizers,
            maximizers_trimmed,
            trim_fraction: rounds.trim_fraction,
            maximizer_eval_size: eval_set.map_or(0, |m| m.len()),
            epochs: history.epochs.len(),
            converged: history.converged,
            newly_mined,
            shortfall,
        };
        log::info!(
            "round {k}: alpha {alpha:.4} train mse {:.4e} test mse {:.4e} mined {:?}",
            report.train.mse,
            report.test.mse,
            newly_mined
        );
        reports.push(report);
        if let Some(dir) = out {
            write_json(&dir.join("reports.json"), &reports)?;
        }

        if leveled_off {
            stop = StopReason::LevelOff;
            break;
        }
        match fresh {
            Some(m) if m.is_empty() => {
                stop = StopReason::NoNewMaximizers;
                break;
            }
            Some(m) => {
                all_mined = Some(match all_mined {
                    Some(u) => merge(&u, &m)?.with_name("M"),
                    None => m.clone(),
                });
                last_mined = Some(m);
            }
            None => {}
        }
    }
    if let Some(dir) = out {
        fs::write(dir.join("table.md"), render_table(&reports))?;
    }
    Ok(LoopOutcome {
        reports,
        stop,
        final_model: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::oracle::{make_synthetic_oracle, SyntheticParams};

    /// A 1-D set with the given targets; the zero model's residuals are `−targets`.
    fn set_with_targets(targets: &[f64]) -> LabeledSet {
        let z = make_synthetic_oracle("constant", &SyntheticParams { dim: 1, ..Default::default() })
            .unwrap();
        let n = targets.len();
        LabeledSet::from_parts(
            "t",
            z.normalizer().unwrap(),
            z.dim_names(),
            z.units(),
            ndarray::Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n.max(1) as f64),
            Some(targets.to_vec()),
            vec![Provenance::Uniform; n],
        )
        .unwrap()
    }

    fn zero() -> MlpModel {
        MlpModel::constant(&[1, 1], 0.0).unwrap()
    }

    #[test]
    fn pooled_reduction_by_hand() {
        // Squared errors {1, 9} (mean 5) and {4} (mean 4), α = 2/3.
        let base = set_with_targets(&[1.0, 3.0]);
        let mined = set_with_targets(&[2.0]);
        let alpha = AlphaSpec::Pooled.resolve(2, 1);
        assert_eq!(alpha, 2.0 / 3.0);
        let l = weighted_loss(&zero(), &base, &mined, alpha).unwrap();
        assert!((l - 14.0 / 3.0).abs() < 1e-14);
        let pooled = evaluate(&zero(), &merge(&base, &mined).unwrap()).unwrap().mse;
        assert!((l - pooled).abs() < 1e-14);
    }

    #[test]
    fn alpha_one_is_base_mse() {
        let base = set_with_targets(&[1.0, 3.0]);
        let empty = base.subset(&[]);
        assert_eq!(weighted_loss(&zero(), &base, &empty, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn paper_scale_pooled_alpha() {
        let a = AlphaSpec::Pooled.resolve(200_000, 10_000);
        assert_eq!(a, 20.0 / 21.0);
        assert!((a - 0.9524).abs() < 1e-4);
    }

    #[test]
    fn alpha_errors() {
        let base = set_with_targets(&[1.0]);
        let empty = base.subset(&[]);
        assert!(matches!(weighted_loss(&zero(), &base, &base, 1.5), Err(Error::Domain(_))));
        assert!(matches!(weighted_loss(&zero(), &base, &empty, 0.5), Err(Error::Domain(_))));
        assert!(weighted_samples(&base, &empty, 0.5).is_err());
    }

    #[test]
    fn weighted_samples_weights() {
        let base = set_with_targets(&[1.0, 2.0, 3.0, 4.0]);
        let mined = set_with_targets(&[5.0]);
        let w = weighted_samples(&base, &mined, 0.8).unwrap();
        assert_eq!(w.len(), 5);
        assert!((w.weights[0] - 0.2).abs() < 1e-15);
        assert!((w.weights[4] - 0.2).abs() < 1e-15);
        assert!((w.weights.sum() - 1.0).abs() < 1e-15);
        assert_eq!(weighted_samples(&base, &mined, 1.0).unwrap().len(), 4);
        assert_eq!(weighted_samples(&base, &mined, 0.0).unwrap().len(), 1);
        let l = w.loss(&zero()).unwrap();
        let direct = weighted_loss(&zero(), &base, &mined, 0.8).unwrap();
        assert!((l - direct).abs() < 1e-12);
    }

    #[test]
    fn evaluate_by_hand() {
        let m = evaluate(&zero(), &set_with_targets(&[1.0, -1.0])).unwrap();
        assert_eq!((m.mse, m.mae), (1.0, 1.0));
        let m = evaluate(&zero(), &set_with_targets(&[0.0, 2.0])).unwrap();
        assert_eq!((m.mse, m.mae), (2.0, 1.0));
        let exact = MlpModel::constant(&[1, 1], 3.0).unwrap();
        let m = evaluate(&exact, &set_with_targets(&[3.0, 3.0])).unwrap();
        assert_eq!((m.mse, m.mae), (0.0, 0.0));
        assert!(evaluate(&zero(), &set_with_targets(&[])).is_err());
    }

    #[test]
    fn trimming_by_hand() {
        let s = set_with_targets(&[1.0, 2.0, 100.0]);
        let m = trimmed_metrics(&zero(), &s, 1.0 / 3.0).unwrap();
        assert_eq!((m.mse, m.mae), (2.5, 1.5));
        assert_eq!(trimmed_metrics(&zero(), &s, 0.0).unwrap(), evaluate(&zero(), &s).unwrap());
        assert!(trimmed_metrics(&zero(), &set_with_targets(&[1.0]), 0.5).is_err());
        assert!(trimmed_metrics(&zero(), &s, 1.0).is_err());
    }

    #[test]
    fn tightening_schedule() {
        let rc = RoundConfig::default();
        let base = AscentConfig::default();
        let r1 = rc.tightened(&base, 1);
        assert!((r1.initial_step - 1e-5).abs() < 1e-18);
        assert!((r1.stop_rel_change - 1e-5).abs() < 1e-18);
        for k in 0..5 {
            let t = rc.tightened(&base, k);
            assert_eq!(t.initial_step, base.initial_step * rc.step_tightening.powi(k as i32));
        }
        assert_eq!(rc.tightened(&base, 0), base);
    }

    #[test]
    fn alpha_spec_serde() {
        #[derive(Deserialize, Serialize)]
        struct W {
            a: AlphaSpec,
        }
        let w: W = serde_json::from_str(r#"{"a":"pooled"}"#).unwrap();
        assert_eq!(w.a, AlphaSpec::Pooled);
        let w: W = serde_json::from_str(r#"{"a":0.95}"#).unwrap();
        assert_eq!(w.a, AlphaSpec::Fixed(0.95));
        assert!(serde_json::from_str::<W>(r#"{"a":"half"}"#).is_err());
        assert_eq!(serde_json::to_string(&W { a: AlphaSpec::Pooled }).unwrap(), r#"{"a":"pooled"}"#);
    }

    fn report(alpha: f64, v: f64) -> RoundReport {
        let m = Metrics { mse: v, mae: v.sqrt() };
        RoundReport {
            round: 0,
            alpha,
            base_size: 10,
            mined_size: 0,
            train_size: 10,
            train: m,
            test: m,
            maximizers: Some(m),
            maximizers_trimmed: None,
            trim_fraction: 0.001,
            maximizer_eval_size: 3,
            epochs: 4,
            converged: true,
            newly_mined: None,
            shortfall: false,
        }
    }

    #[test]
    fn table_layout() {
        let t = render_table(&[report(0.95, 0.0359), report(1.0, 0.0646)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| α | 1 | 0.95 |");
        let names: Vec<&str> = lines[2..]
            .iter()
            .map(|l| l.split('|').nth(1).unwrap().trim())
            .collect();
        assert_eq!(
            names,
            ["Training MSE", "Test MSE", "Maximizer MSE", "Training MAE", "Test MAE", "Maximizer MAE"]
        );
        assert!(lines[2].starts_with("| Training MSE | 0.0646 | 0.0359 |"));
    }

    #[test]
    fn report_json_roundtrip() {
        let r = report(20.0 / 21.0, 0.1 + 0.2);
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RoundReport>(&text).unwrap(), r);
        assert!(r.is_consistent());
    }
}
