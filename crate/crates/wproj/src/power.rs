//! Second-order power analytics for the d = 1 tests under location shifts
//! `θ_n = τ₀/sqrt(n)`.
//!
//! The WP power expands as
//!
//! ```text
//! P(reject) = ∫_{|v+τ|² > χ²} φ(v) dv + n^{-1/2} E₂(α, τ₀) + Õ(1/n),
//! E₂ = ∫_{|v+τ|² > χ²} (k₁ v + k₂(v²-1)/2 + k₃(v³-3v)/6) φ(v) dv,
//! ```
//!
//! with `τ = E₀[Dh] τ₀ / sqrt(α₂)`. The Gaussian-Hermite integrals are
//! evaluated in closed form through `∫_w^∞ He_k(v) φ(v) dv = He_{k-1}(w) φ(w)`.
//! The second-order power gaps are `B(WP) = (α̃₃/α̃₂²) I`,
//! `B(EL) = (2α₃/(3α₂²)) I`, `B(T²) = 0` with
//! `I = sqrt(α₂) χ²/2 (φ(w₁) - φ(w₂))`, `w₁₂ = sqrt(χ²) ∓ τ`.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{CostModel, DataSet, MomentModel};
use crate::quantile::chi2_1_quantile;

/// Null-distribution moments and the shift direction entering the d = 1
/// power expansion.
#[derive(Debug, Clone, Serialize)]
pub struct PowerInputs {
    /// Shift direction τ₀ ∈ R^m.
    pub tau0: DVector<f64>,
    /// Test level α.
    pub alpha: f64,
    /// `α₂ = E₀[h²]`, `α₃ = E₀[h³]`.
    pub alpha2: f64,
    pub alpha3: f64,
    /// `α̃₂ = E₀[Dh Σ Dhᵀ]`, `α̃₃ = E₀[Dh Σ D²h Σ Dhᵀ]`.
    pub alpha2_t: f64,
    pub alpha3_t: f64,
    /// `E₀[Dh]` (1×m row).
    pub e_dh: RowDVector<f64>,
    /// `E₀[D²h]` (m×m).
    pub e_d2h: DMatrix<f64>,
    /// `E₀[h·Dh]` (1×m row).
    pub e_h_dh: RowDVector<f64>,
    /// `E₀[Dhᵀ Dh]` (m×m); contracts with Σ to `α̃₂`.
    pub e_dht_dh: DMatrix<f64>,
}

impl PowerInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidOptions(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.alpha2 > 0.0) || !(self.alpha2_t > 0.0) {
            return Err(Error::InvalidMoments(
                "alpha2 and alpha2_t must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Plug-in moments from a pilot sample drawn under the null. `α̃₂` is
    /// recovered from the stored `E[Dhᵀ Dh]` by the Frobenius contraction
    /// with Σ.
    pub fn plugin(
        data: &DataSet,
        model: &MomentModel,
        cost: &CostModel,
        tau0: DVector<f64>,
        alpha: f64,
    ) -> Result<Self> {
        if model.d() != 1 {
            return Err(Error::InvalidMoments(
                "power expansion requires d = 1".into(),
            ));
        }
        let m = model.m();
        let (mut a2, mut a3, mut a3t) = (0.0, 0.0, 0.0);
        let mut e_dh = RowDVector::zeros(m);
        let mut e_d2h = DMatrix::zeros(m, m);
        let mut e_h_dh = RowDVector::zeros(m);
        let mut e_dht_dh = DMatrix::zeros(m, m);
        for i in 0..data.n() {
            let x = data.point(i);
            let w = data.weight(i);
            let h = model.h(x)[0];
            let jac = model.jac(x);
            let hess = model.hess(x, 0);
            let js = cost.sigma() * jac.row(0).transpose();
            a2 += w * h * h;
            a3 += w * h * h * h;
            a3t += w * (js.transpose() * &hess * &js)[(0, 0)];
            e_dh += w * jac.row(0);
            e_d2h += w * hess;
            e_h_dh += w * h * jac.row(0);
            e_dht_dh += w * jac.row(0).transpose() * jac.row(0);
        }
        let a2t = (cost.sigma().component_mul(&e_dht_dh)).sum();
        let out = Self {
            tau0,
            alpha,
            alpha2: a2,
            alpha3: a3,
            alpha2_t: a2t,
            alpha3_t: a3t,
            e_dh,
            e_d2h,
            e_h_dh,
            e_dht_dh,
        };
        out.validate()?;
        Ok(out)
    }
}

/// The constants of the second-order power term.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// `τ = E₀[Dh] τ₀ / sqrt(α₂)`.
    pub tau: f64,
}

pub fn compute_k_constants(inputs: &PowerInputs) -> Result<KConstants> {
    inputs.validate()?;
    let a2 = inputs.alpha2;
    let a3 = inputs.alpha3;
    let a2t = inputs.alpha2_t;
    let a3t = inputs.alpha3_t;
    let dh_tau = (&inputs.e_dh * &inputs.tau0)[0];
    let tau = dh_tau / a2.sqrt();
    let quad_d2h = (inputs.tau0.transpose() * &inputs.e_d2h * &inputs.tau0)[(0, 0)];
    let hdh_tau = (&inputs.e_h_dh * &inputs.tau0)[0];

    let k1 = 0.5 * quad_d2h / a2.sqrt() - dh_tau * hdh_tau / a2.powf(1.5)
        - a3 / (2.0 * a2.powf(1.5))
        + a3t * a2.sqrt() / (2.0 * a2t * a2t)
        + a3t / (2.0 * a2.sqrt() * a2t * a2t) * dh_tau * dh_tau;
    let k2 = (-a3 / (a2 * a2) + 2.0 * a3t / (a2t * a2t)) * dh_tau;
    let k3 = -2.0 * a3 / a2.powf(1.5) + 3.0 * a3t * a2.sqrt() / (a2t * a2t);
    Ok(KConstants { k1, k2, k3, tau })
}

/// Two-sided Gaussian rejection-region boundaries `w₁ = sqrt(χ²) - τ`,
/// `w₂ = sqrt(χ²) + τ`.
fn boundaries(alpha: f64, tau: f64) -> (f64, f64) {
    let root = chi2_1_quantile(alpha).sqrt();
    (root - tau, root + tau)
}

/// First-order power plus the `n^{-1/2}` Edgeworth term, both in closed form.
pub fn power_expansion(inputs: &PowerInputs, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidOptions("power expansion needs n >= 2".into()));
    }
    let k = compute_k_constants(inputs)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (w1, w2) = boundaries(inputs.alpha, k.tau);
    let first = normal.cdf(-w1) + normal.cdf(-w2);
    // ∫_{w}^∞ He_k φ = He_{k-1}(w) φ(w); the lower piece (-∞, -w₂] picks up
    // (-1)^k by symmetry.
    let p1 = normal.pdf(w1);
    let p2 = normal.pdf(w2);
    let e2 = k.k1 * (p1 - p2)
        + 0.5 * k.k2 * (w1 * p1 + w2 * p2)
        + k.k3 / 6.0 * ((w1 * w1 - 1.0) * p1 - (w2 * w2 - 1.0) * p2);
    Ok(first + e2 / (n as f64).sqrt())
}

/// First-order (limiting) power alone.
pub fn power_first_order(inputs: &PowerInputs) -> Result<f64> {
    let k = compute_k_constants(inputs)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (w1, w2) = boundaries(inputs.alpha, k.tau);
    Ok(normal.cdf(-w1) + normal.cdf(-w2))
}

/// Second-order power gaps relative to Hotelling's T².
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerGaps {
    pub b_wp: f64,
    pub b_el: f64,
    pub b_t2: f64,
    /// `I(α, τ₀) = sqrt(α₂) χ²/2 (φ(w₁) - φ(w₂))`.
    pub i_value: f64,
}

pub fn power_gap_b(inputs: &PowerInputs) -> Result<PowerGaps> {
    let k = compute_k_constants(inputs)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (w1, w2) = boundaries(inputs.alpha, k.tau);
    let chi = chi2_1_quantile(inputs.alpha);
    let i_value = inputs.alpha2.sqrt() * chi / 2.0 * (normal.pdf(w1) - normal.pdf(w2));
    Ok(PowerGaps {
        b_wp: inputs.alpha3_t / (inputs.alpha2_t * inputs.alpha2_t) * i_value,
        b_el: 2.0 * inputs.alpha3 / (3.0 * inputs.alpha2 * inputs.alpha2) * i_value,
        b_t2: 0.0,
        i_value,
    })
}
