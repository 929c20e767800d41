//! Central-difference checks of backpropagated gradients.
//!
//! Within one ReLU activation pattern the network output is linear in any
//! single parameter and in each input coordinate, so central differences are
//! exact up to rounding there. Checks are only meaningful at inputs whose
//! hidden pre-activations stay clear of zero; see [`kink_margin`].
//!
//! The numerical side never calls the model's own forward pass: it replays
//! the network with plain loops, and only downstream of the perturbed unit.

use ndarray::Array2;

use crate::error::Result;
use crate::nn::MlpModel;

/// Tolerances for comparing an analytic derivative `a` with a numerical `n`:
/// the pair agrees when `|a − n| ≤ max(rtol · max(|a|, |n|), atol)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub fn agrees(&self, analytic: f64, numeric: f64) -> bool {
        let scale = analytic.abs().max(numeric.abs());
        (analytic - numeric).abs() <= (self.rtol * scale).max(self.atol)
    }

    /// Relative error with the absolute floor as the smallest denominator.
    pub fn rel_err(&self, analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs()).max(self.atol);
        (analytic - numeric).abs() / scale
    }
}

/// One derivative that failed the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    /// `w[layer][i,j]`, `b[layer][j]` or `x[i]`.
    pub what: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn record(&mut self, tol: &Tolerance, what: impl FnOnce() -> String, a: f64, n: f64) {
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(tol.rel_err(a, n));
        if !tol.agrees(a, n) {
            self.mismatches.push(Mismatch {
                what: what(),
                analytic: a,
                numeric: n,
            });
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.mismatches.extend(other.mismatches);
    }
}

/// Smallest `|pre-activation|` over the hidden layers at `x`.
pub fn kink_margin(model: &MlpModel, x: &[f64]) -> Result<f64> {
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|_| {
        crate::Error::Shape {
            expected: model.input_dim(),
            got: x.len(),
        }
    })?;
    let trace = model.forward_trace(row.view())?;
    let hidden = &trace.pre_activations()[..trace.layer_count() - 1];
    Ok(hidden
        .iter()
        .flat_map(|z| z.iter())
        .fold(f64::INFINITY, |m, v| m.min(v.abs())))
}

/// Pre- and post-activations of one input, computed with plain loops.
struct Tape {
    pre: Vec<Vec<f64>>,
    /// `post[0]` is the input; `post[k + 1]` is layer `k`'s output.
    post: Vec<Vec<f64>>,
}

fn activate(model: &MlpModel, layer: usize, v: f64) -> f64 {
    if layer + 1 == model.layer_count() {
        v
    } else {
        v.max(0.0)
    }
}

fn dense(model: &MlpModel, layer: usize, a: &[f64]) -> Vec<f64> {
    let w = &model.weights()[layer];
    let mut z = model.biases()[layer].to_vec();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            for (zj, wij) in z.iter_mut().zip(w.row(i)) {
                *zj += ai * wij;
            }
        }
    }
    z
}

fn tape(model: &MlpModel, x: &[f64]) -> Tape {
    let mut pre = Vec::with_capacity(model.layer_count());
    let mut post = vec![x.to_vec()];
    for k in 0..model.layer_count() {
        let z = dense(model, k, &post[k]);
        post.push(z.iter().map(|&v| activate(model, k, v)).collect());
        pre.push(z);
    }
    Tape { pre, post }
}

/// Output after replacing the pre-activation of unit `j` in `layer` by `z`,
/// replaying only the layers downstream of it.
fn output_with(model: &MlpModel, t: &Tape, layer: usize, j: usize, z: f64) -> f64 {
    let last = model.layer_count() - 1;
    if layer == last {
        return z;
    }
    let delta = activate(model, layer, z) - t.post[layer + 1][j];
    if delta == 0.0 {
        return t.post[last + 1][0];
    }
    let w = &model.weights()[layer + 1];
    let mut a: Vec<f64> = t.pre[layer + 1]
        .iter()
        .zip(w.row(j))
        .map(|(p, wj)| activate(model, layer + 1, p + wj * delta))
        .collect();
    for k in layer + 2..=last {
        a = dense(model, k, &a)
            .into_iter()
            .map(|v| activate(model, k, v))
            .collect();
    }
    a[0]
}

/// Compares `∂Y/∂θ` for every parameter and `∂Y/∂x` against central
/// differences with step `h`.
pub fn check_gradients(model: &MlpModel, x: &[f64], h: f64, tol: Tolerance) -> Result<GradCheckReport> {
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|_| {
        crate::Error::Shape {
            expected: model.input_dim(),
            got: x.len(),
        }
    })?;
    let trace = model.forward_trace(row.view())?;
    let grads = model.backward_params(&trace, &[1.0])?;
    let input_grad = model.input_gradient(x)?;
    let t = tape(model, x);

    let mut report = GradCheckReport::default();
    for layer in 0..model.layer_count() {
        let (rows, cols) = model.weights()[layer].dim();
        for j in 0..cols {
            let z0 = t.pre[layer][j];
            for i in 0..rows {
                let a = t.post[layer][i];
                let up = output_with(model, &t, layer, j, z0 + h * a);
                let down = output_with(model, &t, layer, j, z0 - h * a);
                report.record(
                    &tol,
                    || format!("w[{layer}][{i},{j}]"),
                    grads.weights[layer][[i, j]],
                    (up - down) / (2.0 * h),
                );
            }
            let up = output_with(model, &t, layer, j, z0 + h);
            let down = output_with(model, &t, layer, j, z0 - h);
            report.record(
                &tol,
                || format!("b[{layer}][{j}]"),
                grads.biases[layer][j],
                (up - down) / (2.0 * h),
            );
        }
    }
    let last = model.layer_count();
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = tape(model, &xp).post[last][0];
        xp[i] = x[i] - h;
        let down = tape(model, &xp).post[last][0];
        xp[i] = x[i];
        report.record(&tol, || format!("x[{i}]"), input_grad[i], (up - down) / (2.0 * h));
    }
    Ok(report)
}
