//! Quantile of the limiting law of `n R_n(h)`.
//!
//! The limiting law is that of `Hᵀ V⁻¹ H` with `H ~ N(0, W)`; its plug-in
//! CDF uses the sample `W_n`, `V_n`. For d = 1 the quantile is
//! `(W_n/V_n) χ²_{1;1-α}` in closed form; for d > 1 it is the empirical
//! `(1-α)`-quantile of `vᵀ W_n^{1/2} V_n⁻¹ W_n^{1/2} v` over standard normal
//! draws `v`, generated on deterministic per-chunk substreams.

use nalgebra::{DMatrix, DVector};
use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::expansion::{sym_inv_sqrt, sym_sqrt, ExpansionTerms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    AnalyticD1,
    MonteCarlo,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantileEstimate {
    pub z_hat: f64,
    pub method: QuantileMethod,
    pub mc_draws: usize,
    /// Standard error of the Monte Carlo quantile (None for the analytic path).
    pub mc_se: Option<f64>,
    /// Set when fewer than 10^4 draws were requested for d > 1.
    pub insufficient_draws: bool,
}

/// `(1-α)`-quantile of the χ² distribution with one degree of freedom,
/// computed as the squared standard-normal quantile `Φ⁻¹(1 - α/2)²`.
pub fn chi2_1_quantile(alpha: f64) -> f64 {
    let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(1.0 - alpha / 2.0).powi(2)
}

/// Estimate the `(1-α)`-quantile of the limiting distribution from the
/// expansion terms. `draws` and `seed` only matter for d > 1.
pub fn estimate_quantile(
    terms: &ExpansionTerms,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<QuantileEstimate> {
    quantile_from_moments(&terms.v_n, &terms.w_n, alpha, draws, seed)
}

/// Same as [`estimate_quantile`] but from explicit `V_n` and `W_n`.
pub fn quantile_from_moments(
    v_n: &DMatrix<f64>,
    w_n: &DMatrix<f64>,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<QuantileEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidOptions(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    let d = v_n.nrows();
    if d == 1 {
        let v = v_n[(0, 0)];
        let w = w_n[(0, 0)];
        if v <= 0.0 {
            return Err(Error::SingularVn { cond: f64::INFINITY });
        }
        if w <= 0.0 {
            return Err(Error::SingularWn);
        }
        return Ok(QuantileEstimate {
            z_hat: (w / v) * chi2_1_quantile(alpha),
            method: QuantileMethod::AnalyticD1,
            mc_draws: 0,
            mc_se: None,
            insufficient_draws: false,
        });
    }

    let insufficient = draws < 10_000;
    if draws == 0 {
        return Err(Error::InvalidOptions("draws must be >= 1 for d > 1".into()));
    }
    // Q = W^{1/2} V⁻¹ W^{1/2}, assembled symmetrically.
    let w_sqrt = sym_sqrt(w_n)?;
    let v_inv_sqrt = sym_inv_sqrt(v_n)?;
    let half = &v_inv_sqrt * &w_sqrt;
    let q = half.transpose() * half;

    // Deterministic per-chunk substreams; the pooled sample is order-stable.
    const CHUNK: usize = 65_536;
    let n_chunks = draws.div_ceil(CHUNK);
    let mut vals: Vec<f64> = Vec::with_capacity(draws);
    for c in 0..n_chunks {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, c as u64));
        let todo = CHUNK.min(draws - c * CHUNK);
        for _ in 0..todo {
            let v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            vals.push((v.transpose() * &q * &v)[(0, 0)]);
        }
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((1.0 - alpha) * draws as f64).ceil() as usize;
    let k = k.clamp(1, draws);
    let z_hat = vals[k - 1];

    // Asymptotic se of the sample quantile with a difference-quotient density
    // estimate from neighbouring order statistics.
    let h = (draws as f64).sqrt().ceil() as usize;
    let lo = k.saturating_sub(h).max(1);
    let hi = (k + h).min(draws);
    let dv = vals[hi - 1] - vals[lo - 1];
    let mc_se = if dv > 0.0 {
        let dens = (hi - lo) as f64 / (draws as f64 * dv);
        Some((alpha * (1.0 - alpha) / draws as f64).sqrt() / dens)
    } else {
        None
    };

    Ok(QuantileEstimate {
        z_hat,
        method: QuantileMethod::MonteCarlo,
        mc_draws: draws,
        mc_se,
        insufficient_draws: insufficient,
    })
}

/// SplitMix64-style mixing for substream seeds.
pub(crate) fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
