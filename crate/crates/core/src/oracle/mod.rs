//! Supervising oracles `Z` and their finite-difference gradients.

mod barrier;
mod mc;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Normalizer;
use crate::error::{Error, Result};

pub use barrier::{
    barrier_price, black_scholes_call, norm_cdf, BarrierInputs, BarrierOracle,
    DEFAULT_BARRIER_DOMAIN, SPOT,
};
pub use mc::{mc_reference_price, mc_reference_price_with, BarrierCorrection, McConfig, McEstimate};
pub use synthetic::{
    make_synthetic_oracle, ConstantOracle, MultimodalSine, QuadraticBowl, SyntheticParams,
};

/// A trusted, comparatively slow regression target.
///
/// Inputs are raw (un-normalized) coordinates. Implementations must be pure:
/// the same input always yields the same value.
pub trait Oracle: Send + Sync + fmt::Debug {
    fn kind(&self) -> &str;

    /// Closed per-dimension intervals `(lo, hi)` in raw units.
    fn domain(&self) -> &[(f64, f64)];

    fn dim(&self) -> usize {
        self.domain().len()
    }

    fn dim_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }

    fn units(&self) -> Vec<String> {
        vec!["1".to_string(); self.dim()]
    }

    fn evaluate(&self, raw: &[f64]) -> Result<f64>;

    /// Whether `raw` is an admissible sample. Defaults to box membership.
    fn is_valid(&self, raw: &[f64]) -> bool {
        in_box(self.domain(), raw)
    }

    /// Exact gradient in raw coordinates, when one is known.
    fn analytic_gradient(&self, _raw: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn normalizer(&self) -> Result<Normalizer> {
        Normalizer::from_bounds(self.domain())
    }
}

pub(crate) fn in_box(domain: &[(f64, f64)], raw: &[f64]) -> bool {
    raw.len() == domain.len()
        && raw
            .iter()
            .zip(domain)
            .all(|(&v, &(lo, hi))| v.is_finite() && v >= lo && v <= hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FdScheme {
    #[default]
    Forward,
    Central,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdConfig {
    /// Step in normalized coordinates.
    pub h: f64,
    pub scheme: FdScheme,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 0.001,
            scheme: FdScheme::Forward,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h < 0.5) {
            return Err(Error::InvalidSpec(format!(
                "fd.h must lie in (0, 0.5) in normalized units, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

fn probe(
    z: &dyn Oracle,
    normalizer: &Normalizer,
    x_norm: &[f64],
    coord: usize,
    offset: f64,
) -> Option<Vec<f64>> {
    let mut p = x_norm.to_vec();
    p[coord] += offset;
    if !(0.0..=1.0).contains(&p[coord]) {
        return None;
    }
    let raw = normalizer.denormalize(&p);
    z.is_valid(&raw).then_some(raw)
}

/// `Z` at `x_norm` and its finite-difference gradient in normalized
/// coordinates.
///
/// Forward differences cost `d + 1` oracle calls. A forward probe that leaves
/// `[0,1]^d` or the oracle's valid region is replaced by a backward difference
/// for that coordinate. The central scheme costs `2d + 1` calls and falls back
/// to whichever one-sided difference is admissible.
pub fn fd_value_and_gradient(
    z: &dyn Oracle,
    x_norm: &[f64],
    fd: &FdConfig,
    normalizer: &Normalizer,
) -> Result<(f64, Vec<f64>)> {
    if x_norm.len() != z.dim() {
        return Err(Error::Shape {
            expected: z.dim(),
            got: x_norm.len(),
        });
    }
    let h = fd.h;
    let center_raw = normalizer.denormalize(x_norm);
    let center = z.evaluate(&center_raw)?;
    let eval = |coord: usize, raw: Vec<f64>| {
        z.evaluate(&raw).map_err(|e| Error::GradientProbe {
            coord,
            source: Box::new(e),
        })
    };
    let mut grad = Vec::with_capacity(x_norm.len());
    for i in 0..x_norm.len() {
        let fwd = probe(z, normalizer, x_norm, i, h);
        let g = match fd.scheme {
            FdScheme::Central => {
                let bwd = probe(z, normalizer, x_norm, i, -h);
                match (fwd, bwd) {
                    (Some(f), Some(b)) => (eval(i, f)? - eval(i, b)?) / (2.0 * h),
                    (Some(f), None) => (eval(i, f)? - center) / h,
                    (None, Some(b)) => (center - eval(i, b)?) / h,
                    (None, None) => return Err(no_probe(i)),
                }
            }
            FdScheme::Forward => match fwd {
                Some(f) => (eval(i, f)? - center) / h,
                None => match probe(z, normalizer, x_norm, i, -h) {
                    Some(b) => (center - eval(i, b)?) / h,
                    None => return Err(no_probe(i)),
                },
            },
        };
        grad.push(g);
    }
    Ok((center, grad))
}

fn no_probe(coord: usize) -> Error {
    Error::GradientProbe {
        coord,
        source: Box::new(Error::Domain(
            "neither forward nor backward probe is a valid point".into(),
        )),
    }
}

/// Finite-difference gradient of `Z` in normalized coordinates.
pub fn fd_gradient(
    z: &dyn Oracle,
    x_norm: &[f64],
    fd: &FdConfig,
    normalizer: &Normalizer,
) -> Result<Vec<f64>> {
    fd_value_and_gradient(z, x_norm, fd, normalizer).map(|(_, g)| g)
}
