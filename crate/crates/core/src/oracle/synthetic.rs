//! Analytic test oracles with known gradients and extrema.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Oracle;
use crate::error::{Error, Result};

/// Parameters shared by the synthetic oracle kinds; each kind reads the
/// fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub dim: usize,
    /// Raw domain; each kind has its own default when absent.
    pub domain: Option<Vec<(f64, f64)>>,
    /// Quadratic bowl minimum. Defaults to the domain midpoint.
    pub center: Option<Vec<f64>>,
    pub curvature: f64,
    pub amplitude: f64,
    pub value: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            dim: 2,
            domain: None,
            center: None,
            curvature: 1.0,
            amplitude: 1.0,
            value: 0.0,
        }
    }
}

fn check_domain(domain: &[(f64, f64)]) -> Result<()> {
    if domain.is_empty() {
        return Err(Error::InvalidSpec("synthetic oracle needs dim >= 1".into()));
    }
    for (i, &(lo, hi)) in domain.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidSpec(format!("domain dim {i}: [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Builds one of `quadratic-bowl`, `multimodal-sine`, `constant`.
pub fn make_synthetic_oracle(kind: &str, params: &SyntheticParams) -> Result<Arc<dyn Oracle>> {
    let domain_or = |default: (f64, f64)| {
        params
            .domain
            .clone()
            .unwrap_or_else(|| vec![default; params.dim])
    };
    match kind {
        "quadratic-bowl" => {
            let domain = domain_or((0.0, 1.0));
            let center = params
                .center
                .clone()
                .unwrap_or_else(|| domain.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect());
            Ok(Arc::new(QuadraticBowl::new(center, params.curvature, domain)?))
        }
        "multimodal-sine" => Ok(Arc::new(MultimodalSine::new(
            params.amplitude,
            domain_or((0.0, 3.0 * PI)),
        )?)),
        "constant" => Ok(Arc::new(ConstantOracle::new(
            params.value,
            domain_or((0.0, 1.0)),
        )?)),
        other => Err(Error::InvalidSpec(format!("unknown synthetic oracle kind {other:?}"))),
    }
}

/// `Z(u) = c · ‖u − center‖²`. Global minimum at `center`; `Z²` is largest at
/// the box corner farthest from it.
#[derive(Debug, Clone)]
pub struct QuadraticBowl {
    center: Vec<f64>,
    curvature: f64,
    domain: Vec<(f64, f64)>,
}

impl QuadraticBowl {
    pub fn new(center: Vec<f64>, curvature: f64, domain: Vec<(f64, f64)>) -> Result<Self> {
        check_domain(&domain)?;
        if center.len() != domain.len() {
            return Err(Error::Shape {
                expected: domain.len(),
                got: center.len(),
            });
        }
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(Error::InvalidSpec(format!("curvature must be positive, got {curvature}")));
        }
        Ok(QuadraticBowl {
            center,
            curvature,
            domain,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Diagonal of the (raw-coordinate) Hessian.
    pub fn hessian_diagonal(&self) -> Vec<f64> {
        vec![2.0 * self.curvature; self.center.len()]
    }
}

impl Oracle for QuadraticBowl {
    fn kind(&self) -> &str {
        "quadratic-bowl"
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    fn evaluate(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.center.len() {
            return Err(Error::Shape {
                expected: self.center.len(),
                got: raw.len(),
            });
        }
        Ok(self.curvature
            * raw
                .iter()
                .zip(&self.center)
                .map(|(u, c)| (u - c) * (u - c))
                .sum::<f64>())
    }

    fn analytic_gradient(&self, raw: &[f64]) -> Option<Vec<f64>> {
        (raw.len() == self.center.len()).then(|| {
            raw.iter()
                .zip(&self.center)
                .map(|(u, c)| 2.0 * self.curvature * (u - c))
                .collect()
        })
    }
}

/// `Z(u) = A · Π sin(uᵢ)`.
///
/// `Z²` attains its maximum `A²` exactly on the grid `uᵢ = π/2 + mπ`, spacing
/// `π` per coordinate; it vanishes on every hyperplane `uᵢ = mπ`.
#[derive(Debug, Clone)]
pub struct MultimodalSine {
    amplitude: f64,
    domain: Vec<(f64, f64)>,
}

impl MultimodalSine {
    pub fn new(amplitude: f64, domain: Vec<(f64, f64)>) -> Result<Self> {
        check_domain(&domain)?;
        if !(amplitude != 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidSpec(format!("amplitude must be non-zero, got {amplitude}")));
        }
        Ok(MultimodalSine { amplitude, domain })
    }

    /// All maximizers of `Z²` inside the domain, in raw coordinates.
    pub fn maximizers(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .domain
            .iter()
            .map(|&(lo, hi)| {
                let first = ((lo - PI / 2.0) / PI).ceil() as i64;
                let last = ((hi - PI / 2.0) / PI).floor() as i64;
                (first..=last).map(|m| PI / 2.0 + m as f64 * PI).collect()
            })
            .collect();
        let mut grid = vec![Vec::new()];
        for axis in &axes {
            grid = grid
                .into_iter()
                .flat_map(|prefix: Vec<f64>| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        grid
    }
}

impl Oracle for MultimodalSine {
    fn kind(&self) -> &str {
        "multimodal-sine"
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    fn evaluate(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.domain.len() {
            return Err(Error::Shape {
                expected: self.domain.len(),
                got: raw.len(),
            });
        }
        Ok(self.amplitude * raw.iter().map(|u| u.sin()).product::<f64>())
    }

    fn analytic_gradient(&self, raw: &[f64]) -> Option<Vec<f64>> {
        if raw.len() != self.domain.len() {
            return None;
        }
        Some(
            (0..raw.len())
                .map(|i| {
                    let rest: f64 = raw
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, u)| u.sin())
                        .product();
                    self.amplitude * raw[i].cos() * rest
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct ConstantOracle {
    value: f64,
    domain: Vec<(f64, f64)>,
}

impl ConstantOracle {
    pub fn new(value: f64, domain: Vec<(f64, f64)>) -> Result<Self> {
        check_domain(&domain)?;
        if !value.is_finite() {
            return Err(Error::InvalidSpec("constant oracle value must be finite".into()));
        }
        Ok(ConstantOracle { value, domain })
    }
}

impl Oracle for ConstantOracle {
    fn kind(&self) -> &str {
        "constant"
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    fn evaluate(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.domain.len() {
            return Err(Error::Shape {
                expected: self.domain.len(),
                got: raw.len(),
            });
        }
        Ok(self.value)
    }

    fn analytic_gradient(&self, raw: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; raw.len()])
    }
}
