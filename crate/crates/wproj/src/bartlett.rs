//! Bartlett-type corrections for the one-dimensional WP test.
//!
//! The coverage error of the plug-in WP test admits the expansion
//! `1 - α + n⁻¹ g₁(χ²) q(χ²) + Õ(n^{-3/2})` with the cubic
//! `q(t) = C₁ t + C₂ t² + C₃ t³`. The coefficients are assembled from the
//! signed-root cumulant constants
//!
//! ```text
//! k₁₁ = -α₃/(2α₂^{3/2}) + α̃₃ √α₂/(2α̃₂²)
//! k₃₁ = -2α₃/α₂^{3/2}  + 3α̃₃ √α₂/α̃₂²
//! k₂₂, k₄₂ = (second/fourth-cumulant combinations; see the code)
//! ```
//!
//! through `B₀..B₃` and `Cₖ = -2 u_k⁻¹ Σ_{r=k}³ B_r`, `u_k = 2^k Γ(k+½)/Γ(½)`.
//! Correction I rescales the quantile to `(1-C) ẑ`; correction II rescales
//! the statistic by `1 + (C₁ + C₂S + C₃S²)/n` with `S = (V_n/W_n) n R_n(h)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostModel, DataSet, MomentModel};
use crate::quantile::chi2_1_quantile;

/// Which Bartlett-type correction the WP test applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BartlettMode {
    #[default]
    None,
    /// Correction I: shrink the quantile to `(1 - C) ẑ_{1-α}`.
    Quantile,
    /// Correction II: rescale the statistic by `1 + n⁻¹ Σ_k C_k S^{k-1}`.
    Statistic,
}

/// Moment inputs for the d = 1 coefficients, analytic or plug-in.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentInputs {
    /// `α_j = E[h^j]`.
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    /// `α̃₂ = E[Dh Σ Dhᵀ]`.
    pub alpha2_t: f64,
    /// `α̃₃ = E[Dh Σ D²h Σ Dhᵀ]`.
    pub alpha3_t: f64,
    /// `α̃₄`, the three-contraction combination of Theorem-level order four.
    pub alpha4_t: f64,
    /// `E[h · Dh Σ Dhᵀ]`.
    pub e_h_a: f64,
    /// `E[h · Dh Σ D²h Σ Dhᵀ]`.
    pub e_h_k: f64,
}

impl MomentInputs {
    /// Analytic inputs for `h(x) = x`, `Σ = 1`, `X ~ N(0,1)`.
    pub fn gaussian_linear() -> Self {
        Self {
            alpha2: 1.0,
            alpha3: 0.0,
            alpha4: 3.0,
            alpha2_t: 1.0,
            alpha3_t: 0.0,
            alpha4_t: 0.0,
            e_h_a: 0.0,
            e_h_k: 0.0,
        }
    }

    /// Plug-in estimates from a sample. The α̃₄ contractions are evaluated by
    /// explicit index loops:
    ///
    /// ```text
    /// α̃₄ = -E[Dh Σ D²h Σ D²h Σ Dhᵀ] - (1/3) E[D³h[ΣDhᵀ,ΣDhᵀ,ΣDhᵀ]]
    ///      + (9/(4α̃₂)) E[Dh Σ D²h Σ Dhᵀ]².
    /// ```
    pub fn plugin(data: &DataSet, model: &MomentModel, cost: &CostModel) -> Result<Self> {
        if model.d() != 1 {
            return Err(Error::InvalidMoments(
                "Bartlett moment inputs require d = 1".into(),
            ));
        }
        if !model.has_third() {
            return Err(Error::MissingDerivatives(
                "plug-in alpha4_t needs third derivatives".into(),
            ));
        }
        let m = model.m();
        let (mut a2, mut a3, mut a4) = (0.0, 0.0, 0.0);
        let (mut a2t, mut a3t) = (0.0, 0.0);
        let (mut e_h_a, mut e_h_k) = (0.0, 0.0);
        let (mut t1, mut t2) = (0.0, 0.0);
        for i in 0..data.n() {
            let x = data.point(i);
            let w = data.weight(i);
            let h = model.h(x)[0];
            let jac = model.jac(x); // 1×m
            let hess = model.hess(x, 0); // m×m
            let third = model.third(x, 0)?;
            let js = (jac.clone() * cost.sigma()).transpose(); // m (column) = Σ Dhᵀ
            let a = jac.row(0).transpose().dot(&js); // Dh Σ Dhᵀ
            let hk = (js.transpose() * &hess * &js)[(0, 0)]; // Dh Σ D²h Σ Dhᵀ
            let hkk = {
                let v = &hess * &js; // Σ-free middle product
                (v.transpose() * cost.sigma() * &hess * &js)[(0, 0)]
            };
            let mut d3 = 0.0;
            for aa in 0..m {
                d3 += js[aa] * (js.transpose() * &third[aa] * &js)[(0, 0)];
            }
            a2 += w * h * h;
            a3 += w * h * h * h;
            a4 += w * h * h * h * h;
            a2t += w * a;
            a3t += w * hk;
            e_h_a += w * h * a;
            e_h_k += w * h * hk;
            t1 += w * hkk;
            t2 += w * d3;
        }
        if a2 <= 0.0 || a2t <= 0.0 {
            return Err(Error::InvalidMoments(
                "plug-in alpha2 and alpha2_t must be positive".into(),
            ));
        }
        let alpha4_t = -t1 - t2 / 3.0 + 9.0 / (4.0 * a2t) * a3t * a3t;
        Ok(Self {
            alpha2: a2,
            alpha3: a3,
            alpha4: a4,
            alpha2_t: a2t,
            alpha3_t: a3t,
            alpha4_t,
            e_h_a,
            e_h_k,
        })
    }
}

/// The full d = 1 Bartlett coefficient set.
#[derive(Debug, Clone, Serialize)]
pub struct BartlettCoeffs {
    pub k11: f64,
    pub k22: f64,
    pub k31: f64,
    pub k42: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub inputs: MomentInputs,
}

pub fn compute_bartlett_coeffs(inputs: &MomentInputs) -> Result<BartlettCoeffs> {
    let MomentInputs {
        alpha2: a2,
        alpha3: a3,
        alpha4: a4,
        alpha2_t: a2t,
        alpha3_t: a3t,
        alpha4_t: a4t,
        e_h_a,
        e_h_k,
    } = *inputs;
    if !(a2 > 0.0) || !(a2t > 0.0) {
        return Err(Error::InvalidMoments(
            "alpha2 and alpha2_t must be positive".into(),
        ));
    }
    let k11 = -a3 / (2.0 * a2.powf(1.5)) + a3t * a2.sqrt() / (2.0 * a2t * a2t);
    let k31 = -2.0 * a3 / a2.powf(1.5) + 3.0 * a3t * a2.sqrt() / (a2t * a2t);
    let k22 = -3.0 * a3 * a3t / (2.0 * a2 * a2t * a2t)
        + 7.0 * a3 * a3 / (4.0 * a2.powi(3))
        + (-6.0 * a3t * e_h_a + 3.0 * a4t * a2) / a2t.powi(3)
        + 3.0 * e_h_k / (a2t * a2t)
        - a2 * a3t * a3t / a2t.powi(4);
    let k42 = -2.0 * a4 / (a2 * a2)
        + 12.0 * a3 * a3 / a2.powi(3)
        - 18.0 * a3 * a3t / (a2 * a2t * a2t)
        + 12.0 * e_h_k / (a2t * a2t)
        + (12.0 * a2 * a4t - 24.0 * a3t * e_h_a) / a2t.powi(3)
        + 9.0 * a2 * a3t * a3t / a2t.powi(4);

    let b0 = -(k11 * k11 + k22) / 2.0 + (4.0 * k11 * k31 + k42) / 8.0 - 5.0 * k31 * k31 / 24.0;
    let b1 = (k11 * k11 + k22) / 2.0 - (4.0 * k11 * k31 + k42) / 4.0 + 5.0 * k31 * k31 / 8.0;
    let b2 = (4.0 * k11 * k31 + k42) / 8.0 - 5.0 * k31 * k31 / 8.0;
    let b3 = 5.0 * k31 * k31 / 24.0;

    // u_k = 2^k Γ(k + 1/2)/Γ(1/2) = 1, 3, 15.
    let (u1, u2, u3) = (1.0, 3.0, 15.0);
    let c1 = -2.0 / u1 * (b1 + b2 + b3);
    let c2 = -2.0 / u2 * (b2 + b3);
    let c3 = -2.0 / u3 * b3;

    Ok(BartlettCoeffs {
        k11,
        k22,
        k31,
        k42,
        b0,
        b1,
        b2,
        b3,
        c1,
        c2,
        c3,
        u1,
        u2,
        u3,
        inputs: *inputs,
    })
}

/// A corrected value, with an overflow flag when the correction factor left
/// the sane range and the uncorrected value was returned instead.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CorrectionResult {
    pub value: f64,
    pub overflowed: bool,
}

/// Correction I: `(1 - C) ẑ_{1-α}` with
/// `C = (C₁ + C₂ χ²_{1;1-α} + C₃ (χ²_{1;1-α})²)/n`.
pub fn bartlett_correct_quantile(
    coeffs: &BartlettCoeffs,
    z_hat: f64,
    alpha: f64,
    n: usize,
) -> CorrectionResult {
    let q = chi2_1_quantile(alpha);
    let c = (coeffs.c1 + coeffs.c2 * q + coeffs.c3 * q * q) / n as f64;
    if c.abs() >= 1.0 {
        CorrectionResult {
            value: z_hat,
            overflowed: true,
        }
    } else {
        CorrectionResult {
            value: (1.0 - c) * z_hat,
            overflowed: false,
        }
    }
}

/// Correction II: `(1 + (C₁ + C₂ S + C₃ S²)/n) · n R_n(h)` with
/// `S = (V_n/W_n) n R_n(h)`.
pub fn bartlett_correct_statistic(
    coeffs: &BartlettCoeffs,
    stat: f64,
    w_n: f64,
    v_n: f64,
    n: usize,
) -> CorrectionResult {
    let s = v_n / w_n * stat;
    let c = (coeffs.c1 + coeffs.c2 * s + coeffs.c3 * s * s) / n as f64;
    if c.abs() >= 1.0 {
        CorrectionResult {
            value: stat,
            overflowed: true,
        }
    } else {
        CorrectionResult {
            value: (1.0 + c) * stat,
            overflowed: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_linear_coefficients() {
        // h(x)=x, Σ=1, X~N(0,1): α₃ = α̃₃ = α̃₄ = 0, α₄ = 3 collapse all the
        // odd machinery and leave k₄₂ = -6.
        let c = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        assert_eq!(c.k11, 0.0);
        assert_eq!(c.k31, 0.0);
        assert_eq!(c.k22, 0.0);
        assert_relative_eq!(c.k42, -6.0, epsilon = 1e-14);
        assert_relative_eq!(c.b0, -0.75, epsilon = 1e-14);
        assert_relative_eq!(c.b1, 1.5, epsilon = 1e-14);
        assert_relative_eq!(c.b2, -0.75, epsilon = 1e-14);
        assert_eq!(c.b3, 0.0);
        assert_relative_eq!(c.c1, -1.5, epsilon = 1e-14);
        assert_relative_eq!(c.c2, 0.5, epsilon = 1e-14);
        assert_eq!(c.c3, 0.0);
    }

    #[test]
    fn u_constants_match_gamma_formula() {
        // u_k = 2^k Γ(k+1/2)/Γ(1/2).
        let gamma_half = std::f64::consts::PI.sqrt();
        let gamma = |x: f64| statrs::function::gamma::gamma(x);
        let c = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        assert_relative_eq!(c.u1, 2.0 * gamma(1.5) / gamma_half, epsilon = 1e-12);
        assert_relative_eq!(c.u2, 4.0 * gamma(2.5) / gamma_half, epsilon = 1e-12);
        assert_relative_eq!(c.u3, 8.0 * gamma(3.5) / gamma_half, epsilon = 1e-12);
    }

    #[test]
    fn ck_reproduced_from_br() {
        let inputs = MomentInputs {
            alpha2: 1.3,
            alpha3: 0.4,
            alpha4: 4.2,
            alpha2_t: 0.9,
            alpha3_t: -0.2,
            alpha4_t: 0.7,
            e_h_a: 0.1,
            e_h_k: -0.3,
        };
        let c = compute_bartlett_coeffs(&inputs).unwrap();
        let us = [c.u1, c.u2, c.u3];
        let bs = [c.b1, c.b2, c.b3];
        for k in 0..3 {
            let expect = -2.0 / us[k] * bs[k..].iter().sum::<f64>();
            let got = [c.c1, c.c2, c.c3][k];
            assert_relative_eq!(got, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_null_kills_odd_coefficients() {
        // Odd moments zero, α̃₄ = 0, α₄ = 3α₂², E[h·DhΣDhᵀ] = 0 ⇒ k11 = k31 = 0.
        let inputs = MomentInputs {
            alpha2: 2.0,
            alpha3: 0.0,
            alpha4: 12.0,
            alpha2_t: 1.7,
            alpha3_t: 0.0,
            alpha4_t: 0.0,
            e_h_a: 0.0,
            e_h_k: 0.4,
        };
        let c = compute_bartlett_coeffs(&inputs).unwrap();
        assert_eq!(c.k11, 0.0);
        assert_eq!(c.k31, 0.0);
    }

    #[test]
    fn plugin_matches_analytic_on_large_gaussian_sample() {
        use crate::model::{CostModel, DataSet};
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = StdRng::seed_from_u64(123);
        let values: Vec<f64> = (0..1_000_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let data = DataSet::from_scalars(&values).unwrap();
        let model = MomentModel::linear(1).unwrap();
        let cost = CostModel::identity(1);
        let inputs = MomentInputs::plugin(&data, &model, &cost).unwrap();
        let c = compute_bartlett_coeffs(&inputs).unwrap();
        let exact = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        assert!((c.c1 - exact.c1).abs() / exact.c1.abs() < 0.02, "c1 {}", c.c1);
        assert!((c.c2 - exact.c2).abs() / exact.c2.abs() < 0.02, "c2 {}", c.c2);
        assert!(c.c3.abs() < 0.02, "c3 {}", c.c3);
    }

    #[test]
    fn correction_i_arithmetic() {
        let c = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        // α = 0.05, n = 20: C = (-1.5 + 0.5·3.841459)/20 ≈ 0.0210365.
        let z = 3.841458820694124;
        let corr = bartlett_correct_quantile(&c, z, 0.05, 20);
        assert!(!corr.overflowed);
        assert_relative_eq!(corr.value / z, 1.0 - 0.021036, epsilon = 1e-5);

        // Zero coefficients leave the quantile unchanged.
        let zeroed = BartlettCoeffs {
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            ..c.clone()
        };
        assert_eq!(bartlett_correct_quantile(&zeroed, z, 0.05, 20).value, z);

        // n → 10^6: corrected/z → 1.
        let corr = bartlett_correct_quantile(&c, z, 0.05, 1_000_000);
        assert!((corr.value / z - 1.0).abs() < 1e-5);
    }

    #[test]
    fn correction_ii_arithmetic() {
        let c = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        assert_eq!(bartlett_correct_statistic(&c, 0.0, 1.0, 1.0, 20).value, 0.0);
        // stat = 3.8415, w = v = 1, n = 20 → factor 1.0210365.
        let corr = bartlett_correct_statistic(&c, 3.8415, 1.0, 1.0, 20);
        assert_relative_eq!(corr.value, 3.8415 * 1.0210365, epsilon = 1e-4);
        assert!((corr.value - 3.92232).abs() < 2e-4);

        let zeroed = BartlettCoeffs {
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            ..c.clone()
        };
        assert_eq!(
            bartlett_correct_statistic(&zeroed, 2.5, 0.8, 1.1, 20).value,
            2.5
        );
    }

    #[test]
    fn corrections_agree_near_threshold() {
        // |(1-C) z - z/(1+C')| = O(n⁻²) z at the threshold, Gaussian case.
        let c = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        for &n in &[50usize, 100, 200] {
            let z = 3.841458820694124;
            let q1 = bartlett_correct_quantile(&c, z, 0.05, n).value;
            // Correction II at the boundary statistic s solving
            // (1 + C(s)/n) s = z with w = v = 1, via one fixed-point pass.
            let mut s = z;
            for _ in 0..50 {
                let f = 1.0 + (c.c1 + c.c2 * s + c.c3 * s * s) / n as f64;
                s = z / f;
            }
            let gap = (q1 - s).abs();
            assert!(
                gap <= 5.0 / (n as f64 * n as f64) * z,
                "n={n}: |{q1} - {s}| = {gap}"
            );
        }
    }

    #[test]
    fn alpha_independent_when_b2_b3_zero() {
        // With B₂ = B₃ = 0 only C₁ survives, so C is the same at any level.
        let c = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        let forced = BartlettCoeffs {
            c2: 0.0,
            c3: 0.0,
            ..c.clone()
        };
        let z = 1.0;
        let a = bartlett_correct_quantile(&forced, z, 0.05, 50).value;
        let b = bartlett_correct_quantile(&forced, z, 0.10, 50).value;
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn overflow_flagged() {
        let c = compute_bartlett_coeffs(&MomentInputs::gaussian_linear()).unwrap();
        // n = 2 with a huge statistic forces |C| >= 1.
        let corr = bartlett_correct_statistic(&c, 100.0, 1.0, 1.0, 2);
        assert!(corr.overflowed);
        assert_eq!(corr.value, 100.0);
    }

    #[test]
    fn invalid_moments_rejected() {
        let inputs = MomentInputs {
            alpha2: -1.0,
            ..MomentInputs::gaussian_linear()
        };
        assert!(compute_bartlett_coeffs(&inputs).is_err());
    }
}
