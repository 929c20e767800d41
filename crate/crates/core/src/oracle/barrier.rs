//! Closed-form up-and-out European call under Black–Scholes dynamics.
//!
//! Inputs are quoted relative to a spot fixed at [`SPOT`] dollars, so prices
//! come out in dollars. For strike `K < H` (barrier `H` above spot `S`) the
//! Reiner–Rubinstein decomposition gives
//!
//! ```text
//! C_uo = A − B + C − D
//! A = S N(x1)                − K e^{−rT} N(x1 − σ√T)
//! B = S N(x2)                − K e^{−rT} N(x2 − σ√T)
//! C = S (H/S)^{2(μ+1)} N(−y1) − K e^{−rT} (H/S)^{2μ} N(−y1 + σ√T)
//! D = S (H/S)^{2(μ+1)} N(−y2) − K e^{−rT} (H/S)^{2μ} N(−y2 + σ√T)
//! ```
//!
//! with `μ = (r − σ²/2)/σ²`, `x1 = ln(S/K)/σ√T + (1+μ)σ√T`,
//! `x2 = ln(S/H)/σ√T + (1+μ)σ√T`, `y1 = ln(H²/SK)/σ√T + (1+μ)σ√T`,
//! `y2 = ln(H/S)/σ√T + (1+μ)σ√T`. When `K ≥ H` every in-the-money path has
//! crossed the barrier and the price is zero.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{in_box, Oracle};
use crate::error::{Error, Result};

pub const SPOT: f64 = 100.0;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// The five-dimensional barrier-option input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierInputs {
    /// Barrier over spot.
    pub b: f64,
    /// Strike over spot.
    pub k: f64,
    /// Time to maturity in years.
    pub tau: f64,
    /// Volatility per sqrt-year.
    pub sigma: f64,
    /// Continuously compounded rate per year.
    pub r: f64,
}

impl BarrierInputs {
    pub fn from_slice(raw: &[f64]) -> Result<Self> {
        match *raw {
            [b, k, tau, sigma, r] => Ok(BarrierInputs { b, k, tau, sigma, r }),
            _ => Err(Error::Shape {
                expected: 5,
                got: raw.len(),
            }),
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.b, self.k, self.tau, self.sigma, self.r]
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.b, self.k, self.tau, self.sigma, self.r]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.tau <= 0.0 || self.sigma <= 0.0 || self.b <= 0.0 || self.k <= 0.0 {
            return Err(Error::Domain(format!("invalid barrier inputs {self:?}")));
        }
        Ok(())
    }
}

/// Black–Scholes European call price.
pub fn black_scholes_call(spot: f64, strike: f64, tau: f64, sigma: f64, r: f64) -> f64 {
    let vol = sigma * tau.sqrt();
    let d1 = ((spot / strike).ln() + (r + 0.5 * sigma * sigma) * tau) / vol;
    let d2 = d1 - vol;
    spot * norm_cdf(d1) - strike * (-r * tau).exp() * norm_cdf(d2)
}

/// Up-and-out call price in dollars with spot fixed at [`SPOT`].
pub fn barrier_price(inp: &BarrierInputs) -> Result<f64> {
    inp.validate()?;
    if inp.b <= 1.0 {
        return Err(Error::KnockedOut(inp.b));
    }
    if inp.b <= inp.k {
        return Ok(0.0);
    }
    let s = SPOT;
    let strike = SPOT * inp.k;
    let h = SPOT * inp.b;
    let BarrierInputs { tau, sigma, r, .. } = *inp;

    let vol = sigma * tau.sqrt();
    let mu = (r - 0.5 * sigma * sigma) / (sigma * sigma);
    let drift = (1.0 + mu) * vol;
    let disc_k = strike * (-r * tau).exp();
    let hs = h / s;
    let pow_a = hs.powf(2.0 * (mu + 1.0));
    let pow_b = hs.powf(2.0 * mu);

    let x1 = (s / strike).ln() / vol + drift;
    let x2 = (s / h).ln() / vol + drift;
    let y1 = (h * h / (s * strike)).ln() / vol + drift;
    let y2 = (h / s).ln() / vol + drift;

    let a = s * norm_cdf(x1) - disc_k * norm_cdf(x1 - vol);
    let b = s * norm_cdf(x2) - disc_k * norm_cdf(x2 - vol);
    let c = s * pow_a * norm_cdf(-y1) - disc_k * pow_b * norm_cdf(-y1 + vol);
    let d = s * pow_a * norm_cdf(-y2) - disc_k * pow_b * norm_cdf(-y2 + vol);

    // Round-off can leave a few ulps below zero deep out of the money.
    Ok((a - b + c - d).max(0.0))
}

/// Default "realistic" box: barrier/spot, strike/spot, maturity, vol, rate.
pub const DEFAULT_BARRIER_DOMAIN: [(f64, f64); 5] = [
    (1.01, 2.0),
    (0.5, 1.5),
    (0.05, 2.0),
    (0.05, 0.6),
    (0.0, 0.1),
];

/// The barrier pricer as an oracle. Samples with `b ≤ 1`, `b ≤ k`, or outside
/// the box are invalid.
#[derive(Debug, Clone)]
pub struct BarrierOracle {
    domain: Vec<(f64, f64)>,
}

impl Default for BarrierOracle {
    fn default() -> Self {
        BarrierOracle {
            domain: DEFAULT_BARRIER_DOMAIN.to_vec(),
        }
    }
}

impl BarrierOracle {
    pub fn new(domain: Vec<(f64, f64)>) -> Result<Self> {
        if domain.len() != 5 {
            return Err(Error::InvalidSpec(format!(
                "barrier domain needs 5 intervals, got {}",
                domain.len()
            )));
        }
        for (i, &(lo, hi)) in domain.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidSpec(format!("barrier domain dim {i}: [{lo}, {hi}]")));
            }
        }
        let positive = [0usize, 1, 2, 3];
        if positive.iter().any(|&i| domain[i].0 <= 0.0) {
            return Err(Error::InvalidSpec(
                "barrier, strike, maturity and volatility bounds must be positive".into(),
            ));
        }
        Ok(BarrierOracle { domain })
    }
}

impl Oracle for BarrierOracle {
    fn kind(&self) -> &str {
        "barrier"
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    fn dim_names(&self) -> Vec<String> {
        ["barrier_over_spot", "strike_over_spot", "maturity", "volatility", "rate"]
            .map(String::from)
            .to_vec()
    }

    fn units(&self) -> Vec<String> {
        ["ratio", "ratio", "years", "per_sqrt_year", "per_year"]
            .map(String::from)
            .to_vec()
    }

    fn evaluate(&self, raw: &[f64]) -> Result<f64> {
        barrier_price(&BarrierInputs::from_slice(raw)?)
    }

    fn is_valid(&self, raw: &[f64]) -> bool {
        in_box(&self.domain, raw) && raw[0] > 1.0 && raw[0] > raw[1]
    }
}
