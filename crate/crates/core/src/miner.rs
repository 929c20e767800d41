//! Gradient-ascent search for local maximizers of the squared surrogate error
//! `E²(x) = (Y(x) − Z(x))²`.
//!
//! The ascent runs in normalized coordinates:
//!
//! ```text
//! x_{n+1} = clip(x_n + s_n ∇E²(x_n)),   ∇E² = 2 (Y − Z)(∇Y − ∇Z)
//! s_n     = initial_step / decay_factor^⌊n / decay_period⌋
//! ```
//!
//! `∇Y` comes from backpropagation to the input, `∇Z` from finite differences.

use serde::{Deserialize, Serialize};

use crate::dataset::{label_with, LabeledSet, Normalizer, Provenance};
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::oracle::{fd_value_and_gradient, FdConfig, Oracle};
use crate::par::Exec;

/// How many times a step that lands outside the valid region is halved
/// before the ascent gives up at the current iterate.
const MAX_STEP_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AscentConfig {
    pub initial_step: f64,
    pub step_decay_factor: f64,
    /// Iterations between step-size drops.
    pub step_decay_period: usize,
    /// Stop once `|E²ₙ₊₁ − E²ₙ| / E²ₙ` falls below this.
    pub stop_rel_change: f64,
    pub max_iters: usize,
    /// Euclidean radius (normalized coordinates) under which two maximizers
    /// are the same.
    pub dedup_radius: f64,
    /// Fraction of the set, by largest absolute error, used as seeds.
    pub seed_fraction: f64,
    pub target_count: usize,
    /// Maximizers whose squared error does not exceed this are dropped.
    pub min_sq_error: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            initial_step: 0.001,
            step_decay_factor: 10.0,
            step_decay_period: 30,
            stop_rel_change: 0.001,
            max_iters: 500,
            dedup_radius: 0.001,
            seed_fraction: 0.05,
            target_count: 10_000,
            min_sq_error: 0.0,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("mine: {msg}")));
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.step_decay_factor >= 1.0 && self.step_decay_factor.is_finite()) {
            return bad("step_decay_factor must be at least 1");
        }
        if self.step_decay_period == 0 || self.max_iters == 0 || self.target_count == 0 {
            return bad("step_decay_period, max_iters and target_count must be positive");
        }
        if !(self.stop_rel_change > 0.0) {
            return bad("stop_rel_change must be positive");
        }
        if !(self.dedup_radius > 0.0) {
            return bad("dedup_radius must be positive");
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return bad("seed_fraction must lie in (0, 1]");
        }
        if !(self.min_sq_error >= 0.0) {
            return bad("min_sq_error must be non-negative");
        }
        Ok(())
    }

    /// Step size at iteration `n`.
    pub fn step_at(&self, n: usize) -> f64 {
        let drops = (n / self.step_decay_period) as i32;
        self.initial_step / self.step_decay_factor.powi(drops)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AscentStatus {
    Converged,
    MaxIters,
    RejectedNonimproving,
}

/// One gradient-ascent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    /// Position of the seed in the ascended seed list.
    pub index: usize,
    pub seed_point: Vec<f64>,
    pub final_point: Vec<f64>,
    pub seed_sq_error: f64,
    pub final_sq_error: f64,
    pub iters: usize,
    pub status: AscentStatus,
}

/// Indices of the `⌈fraction·n⌉` samples with the largest `|Y(x) − z|`,
/// sorted by error descending, ties by index ascending.
pub fn select_seeds(model: &MlpModel, set: &LabeledSet, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("seed fraction {fraction} outside (0, 1]")));
    }
    if set.is_empty() {
        return Err(Error::EmptyInput(format!("seed selection on empty set {}", set.name)));
    }
    let abs: Vec<f64> = set.residuals(model)?.iter().map(|r| r.abs()).collect();
    let count = (fraction * set.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| abs[b].total_cmp(&abs[a]).then(a.cmp(&b)));
    order.truncate(count.min(set.len()));
    Ok(order)
}

struct Probe {
    sq_error: f64,
    grad: Vec<f64>,
}

fn probe(
    model: &MlpModel,
    z: &dyn Oracle,
    normalizer: &Normalizer,
    x: &[f64],
    fd: &FdConfig,
) -> Result<Probe> {
    let (y, gy) = model.value_and_input_gradient(x)?;
    let (zv, gz) = fd_value_and_gradient(z, x, fd, normalizer)?;
    let e = y - zv;
    let grad = gy.iter().zip(&gz).map(|(a, b)| 2.0 * e * (a - b)).collect();
    Ok(Probe {
        sq_error: e * e,
        grad,
    })
}

fn relative_change(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        if new == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((new - old) / old).abs()
    }
}

/// Runs one ascent from `seed` (normalized coordinates).
///
/// Each iterate is clipped to `[0,1]^d`; if the clipped point fails the
/// oracle's validity predicate the step is halved, up to 10 times, after which
/// the ascent stops where it is.
pub fn ascend(
    model: &MlpModel,
    z: &dyn Oracle,
    normalizer: &Normalizer,
    seed: &[f64],
    cfg: &AscentConfig,
    fd: &FdConfig,
) -> Result<AscentResult> {
    fn wrap(x: &[f64]) -> impl FnOnce(Error) -> Error + '_ {
        move |e| Error::Ascent {
            iterate: x.to_vec(),
            source: Box::new(e),
        }
    }
    if !z.is_valid(&normalizer.denormalize(seed)) {
        return Err(wrap(seed)(Error::Domain("seed is not a valid point".into())));
    }
    let mut x = seed.to_vec();
    let mut current = probe(model, z, normalizer, &x, fd).map_err(wrap(&x))?;
    let seed_sq_error = current.sq_error;
    let mut status = AscentStatus::MaxIters;
    let mut iters = 0;

    'ascent: for n in 0..cfg.max_iters {
        let mut step = cfg.step_at(n);
        let mut candidate = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let c: Vec<f64> = x
                .iter()
                .zip(&current.grad)
                .map(|(xi, gi)| (xi + step * gi).clamp(0.0, 1.0))
                .collect();
            if z.is_valid(&normalizer.denormalize(&c)) {
                candidate = Some(c);
                break;
            }
            step *= 0.5;
        }
        let Some(next_x) = candidate else {
            status = AscentStatus::Converged;
            break 'ascent;
        };
        let next = probe(model, z, normalizer, &next_x, fd).map_err(wrap(&next_x))?;
        let change = relative_change(next.sq_error, current.sq_error);
        x = next_x;
        current = next;
        iters = n + 1;
        if change < cfg.stop_rel_change {
            status = AscentStatus::Converged;
            break;
        }
    }
    if current.sq_error < seed_sq_error {
        status = AscentStatus::RejectedNonimproving;
    }
    Ok(AscentResult {
        index: 0,
        seed_point: seed.to_vec(),
        final_point: x,
        seed_sq_error,
        final_sq_error: current.sq_error,
        iters,
        status,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy proximity deduplication.
///
/// Results are visited by `final_sq_error` descending (ties by `index`); each
/// is kept iff its final point is at least `radius` from every point already
/// kept. Output is in visiting order, so it is sorted by error.
pub fn dedup(results: &[AscentResult], radius: f64) -> Vec<AscentResult> {
    let mut order: Vec<&AscentResult> = results.iter().collect();
    order.sort_by(|a, b| {
        b.final_sq_error
            .total_cmp(&a.final_sq_error)
            .then(a.index.cmp(&b.index))
    });
    let r2 = radius * radius;
    let mut kept: Vec<AscentResult> = Vec::new();
    for r in order {
        if kept.iter().all(|k| sq_dist(&k.final_point, &r.final_point) >= r2) {
            kept.push(r.clone());
        }
    }
    kept
}

/// Everything one mining pass produced.
#[derive(Debug, Clone)]
pub struct MineOutcome {
    /// Labeled maximizers, provenance `mined-round-k`.
    pub maximizers: LabeledSet,
    /// Every ascent, in seed order.
    pub ascents: Vec<AscentResult>,
    /// Kept results, by error descending; row `i` of `maximizers` is `kept[i]`.
    pub kept: Vec<AscentResult>,
    /// How many short of `target_count` the run came up, if any.
    pub shortfall: Option<usize>,
}

/// Seeds at the worst samples of `set`, ascends from each, drops
/// non-improving runs, deduplicates, keeps the `target_count` highest-error
/// maximizers and labels them with the oracle.
pub fn mine(
    model: &MlpModel,
    z: &dyn Oracle,
    set: &LabeledSet,
    cfg: &AscentConfig,
    fd: &FdConfig,
    round: usize,
) -> Result<MineOutcome> {
    mine_with(model, z, set, cfg, fd, round, Exec::default())
}

pub fn mine_with(
    model: &MlpModel,
    z: &dyn Oracle,
    set: &LabeledSet,
    cfg: &AscentConfig,
    fd: &FdConfig,
    round: usize,
    exec: Exec,
) -> Result<MineOutcome> {
    cfg.validate()?;
    fd.validate()?;
    let seeds = select_seeds(model, set, cfg.seed_fraction)?;
    if cfg.target_count > seeds.len() {
        return Err(Error::InvalidSpec(format!(
            "target_count {} exceeds the {} available seeds",
            cfg.target_count,
            seeds.len()
        )));
    }
    let normalizer = set.normalizer();
    let ascents = exec.try_map(seeds.len(), |i| {
        let seed = set.input(seeds[i]);
        ascend(model, z, normalizer, &seed, cfg, fd).map(|mut r| {
            r.index = i;
            r
        })
    })?;
    let admissible: Vec<AscentResult> = ascents
        .iter()
        .filter(|r| {
            r.status != AscentStatus::RejectedNonimproving && r.final_sq_error > cfg.min_sq_error
        })
        .cloned()
        .collect();
    let mut kept = dedup(&admissible, cfg.dedup_radius);
    kept.truncate(cfg.target_count);
    let shortfall = (kept.len() < cfg.target_count).then(|| cfg.target_count - kept.len());
    if let Some(missing) = shortfall {
        log::warn!(
            "round {round}: {} unique maximizers, {missing} short of target {}",
            kept.len(),
            cfg.target_count
        );
    }

    let d = set.dim();
    let flat: Vec<f64> = kept.iter().flat_map(|r| r.final_point.iter().copied()).collect();
    let inputs = ndarray::Array2::from_shape_vec((kept.len(), d), flat).expect("row-major buffer");
    let unlabeled = LabeledSet::from_parts(
        &format!("M{round}"),
        normalizer.clone(),
        set.dim_names().to_vec(),
        set.units().to_vec(),
        inputs,
        None,
        vec![Provenance::Mined { round }; kept.len()],
    )?;
    let maximizers = label_with(unlabeled, z, exec)?;
    Ok(MineOutcome {
        maximizers,
        ascents,
        kept,
        shortfall,
    })
}
