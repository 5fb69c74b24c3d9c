//! Decision rules: the WP test, the empirical likelihood test, Hotelling's
//! T², and the power-based test recommendation.
//!
//! All three statistics vanish exactly when `Σ_i h(X_i) = 0`. The WP test
//! rejects when `n R_n(h)` exceeds the plug-in quantile of its limiting law.
//! The EL and T² tests reject against the χ²_d quantile; for EL the
//! χ²-calibrated (Wilks) statistic is `-2 log R = 2 Σ_i log(1 + λᵀh(X_i))`,
//! twice the KL-projection value returned by [`compute_el_statistic`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::bartlett::{self, BartlettMode};
use crate::error::{Error, Result};
use crate::expansion::compute_expansion_terms;
use crate::model::{CostModel, DataSet, MomentModel};
use crate::quantile::quantile_from_moments;
use crate::solver::{compute_wp_statistic, hull_contains_origin, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Wp,
    El,
    T2,
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestKind::Wp => write!(f, "wp"),
            TestKind::El => write!(f, "el"),
            TestKind::T2 => write!(f, "t2"),
        }
    }
}

/// Outcome of a single decision rule. `reject` holds exactly when
/// `statistic > threshold`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: TestKind,
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub alpha: f64,
    pub notes: Vec<String>,
}

impl TestOutcome {
    fn new(test: TestKind, statistic: f64, threshold: f64, alpha: f64) -> Self {
        Self {
            test,
            statistic,
            threshold,
            reject: statistic > threshold,
            alpha,
            notes: Vec::new(),
        }
    }
}

/// Configuration for [`run_wp_test`].
#[derive(Debug, Clone)]
pub struct WpTestConfig {
    pub alpha: f64,
    pub solver: SolverOptions,
    pub bartlett: BartlettMode,
    /// Monte Carlo draws for the d > 1 quantile.
    pub quantile_draws: usize,
    pub seed: u64,
}

impl Default for WpTestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            solver: SolverOptions::default(),
            bartlett: BartlettMode::None,
            quantile_draws: 1_000_000,
            seed: 0,
        }
    }
}

/// Run the WP decision rule: reject when `n R_n(h) > ẑ_{1-α}`, with an
/// optional Bartlett-type correction (d = 1 only) applied to the quantile or
/// to the statistic.
pub fn run_wp_test(
    data: &DataSet,
    model: &MomentModel,
    cost: &CostModel,
    config: &WpTestConfig,
) -> Result<TestOutcome> {
    let res = compute_wp_statistic(data, model, cost, &config.solver)?;
    let terms = compute_expansion_terms(data, model, cost, false)?;
    let q = quantile_from_moments(&terms.v_n, &terms.w_n, config.alpha, config.quantile_draws, config.seed)?;

    let mut statistic = res.stat;
    let mut threshold = q.z_hat;
    let mut notes = Vec::new();
    if res.hull_warning {
        notes.push("0 not strictly inside conv{h(X_i)}".to_string());
    }
    if res.active_ball {
        notes.push("dual optimizer outside the 2 log n ball".to_string());
    }
    if !res.converged {
        return Err(Error::OuterNonconvergence);
    }

    match config.bartlett {
        BartlettMode::None => {}
        mode => {
            if model.d() != 1 {
                return Err(Error::InvalidMoments(
                    "Bartlett corrections are only available for d = 1".into(),
                ));
            }
            let inputs = bartlett::MomentInputs::plugin(data, model, cost)?;
            let coeffs = bartlett::compute_bartlett_coeffs(&inputs)?;
            match mode {
                BartlettMode::Quantile => {
                    let corr = bartlett::bartlett_correct_quantile(
                        &coeffs,
                        threshold,
                        config.alpha,
                        terms.n,
                    );
                    if corr.overflowed {
                        notes.push("bartlett correction overflow; using uncorrected".into());
                    }
                    threshold = corr.value;
                }
                BartlettMode::Statistic => {
                    let corr = bartlett::bartlett_correct_statistic(
                        &coeffs,
                        statistic,
                        terms.w_n[(0, 0)],
                        terms.v_n[(0, 0)],
                        terms.n,
                    );
                    if corr.overflowed {
                        notes.push("bartlett correction overflow; using uncorrected".into());
                    }
                    statistic = corr.value;
                }
                BartlettMode::None => unreachable!(),
            }
        }
    }

    let mut out = TestOutcome::new(TestKind::Wp, statistic, threshold, config.alpha);
    out.notes = notes;
    Ok(out)
}

/// Scaled log empirical likelihood `n R_n^{EL}(h) = Σ_i log(1 + λᵀ h(X_i))`,
/// where λ solves `Σ_i h(X_i)/(1 + λᵀ h(X_i)) = 0` by damped Newton with the
/// feasibility safeguard `1 + λᵀ h(X_i) > 1/n`.
///
/// For weighted data the weighted analogues are used; the value is then
/// `n · min_P { KL(Q_n || P) : E_P[h] = 0 }` over laws supported on the atoms.
pub fn compute_el_statistic(data: &DataSet, model: &MomentModel) -> Result<f64> {
    let (stat, _) = el_statistic_and_lambda(data, model)?;
    Ok(stat)
}

pub(crate) fn el_statistic_and_lambda(
    data: &DataSet,
    model: &MomentModel,
) -> Result<(f64, DVector<f64>)> {
    if data.m() != model.m() {
        return Err(Error::InvalidDimension(format!(
            "data m={}, model m={}",
            data.m(),
            model.m()
        )));
    }
    let n = data.n();
    let nf = n as f64;
    let d = model.d();
    let hs: Vec<DVector<f64>> = data.points().iter().map(|x| model.h(x)).collect();
    if !hull_contains_origin(&hs) {
        return Err(Error::ElUndefined);
    }

    let floor = 1.0 / nf;
    let mut lambda = DVector::zeros(d);
    let feasible = |lam: &DVector<f64>| hs.iter().all(|h| 1.0 + lam.dot(h) > floor);
    let objective = |lam: &DVector<f64>| -> f64 {
        nf * hs
            .iter()
            .enumerate()
            .map(|(i, h)| data.weight(i) * (1.0 + lam.dot(h)).ln())
            .sum::<f64>()
    };

    for _ in 0..200 {
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for (i, h) in hs.iter().enumerate() {
            let wi = data.weight(i);
            let denom = 1.0 + lambda.dot(h);
            grad += (wi / denom) * h;
            hess -= (wi / (denom * denom)) * h * h.transpose();
        }
        let gscale = hs.iter().map(|h| h.norm()).fold(0.0f64, f64::max);
        if grad.norm() <= 1e-12 * (1.0 + gscale) {
            break;
        }
        // Newton ascent on the concave dual objective.
        let step = match (-&hess).cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let base = objective(&lambda);
        let mut t = 1.0;
        let mut moved = false;
        while t >= 2f64.powi(-50) {
            let trial = &lambda + t * &step;
            if feasible(&trial) && objective(&trial) >= base {
                lambda = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }

    Ok((objective(&lambda), lambda))
}

/// The Wilks-calibrated EL decision rule: reject when
/// `2 n R_n^{EL}(h) > χ²_{d;1-α}`. The factor two makes the statistic
/// asymptotically χ²_d (the classical `-2 log R` convergence), which the
/// first-order power equality with the WP and T² tests requires.
pub fn run_el_test(data: &DataSet, model: &MomentModel, alpha: f64) -> Result<TestOutcome> {
    let stat = compute_el_statistic(data, model)?;
    let threshold = chi2_quantile(model.d(), alpha)?;
    Ok(TestOutcome::new(TestKind::El, 2.0 * stat, threshold, alpha))
}

/// Hotelling's T²: `(n^{-1/2} Σ_i h(X_i))ᵀ W_n⁻¹ (n^{-1/2} Σ_i h(X_i))`.
pub fn compute_hotelling(data: &DataSet, model: &MomentModel) -> Result<f64> {
    if data.m() != model.m() {
        return Err(Error::InvalidDimension(format!(
            "data m={}, model m={}",
            data.m(),
            model.m()
        )));
    }
    let n = data.n() as f64;
    let d = model.d();
    let mut hbar = DVector::zeros(d);
    let mut w_n = DMatrix::zeros(d, d);
    for (i, x) in data.points().iter().enumerate() {
        let h = model.h(x);
        hbar += data.weight(i) * &h;
        w_n += data.weight(i) * &h * h.transpose();
    }
    let h_n = n.sqrt() * hbar;
    let ch = w_n.cholesky().ok_or(Error::SingularWn)?;
    Ok(h_n.dot(&ch.solve(&h_n)))
}

/// Reject when the T² statistic exceeds `χ²_{d;1-α}`.
pub fn run_t2_test(data: &DataSet, model: &MomentModel, alpha: f64) -> Result<TestOutcome> {
    let stat = compute_hotelling(data, model)?;
    let threshold = chi2_quantile(model.d(), alpha)?;
    Ok(TestOutcome::new(TestKind::T2, stat, threshold, alpha))
}

pub(crate) fn chi2_quantile(d: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidOptions(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if d == 1 {
        Ok(crate::quantile::chi2_1_quantile(alpha))
    } else if d == 2 {
        Ok(-2.0 * alpha.ln())
    } else {
        let chi = statrs::distribution::ChiSquared::new(d as f64)
            .map_err(|e| Error::InvalidOptions(e.to_string()))?;
        Ok(chi.inverse_cdf(1.0 - alpha))
    }
}

/// Inputs to the power-based decision tree:
/// `S_a = E[Dh Σ D²h Σ Dhᵀ]/E[Dh Σ Dhᵀ]²`, `S_b = 2E[h³]/(3E[h²]²)` and the
/// shift projection `τ_h = E[Dh] τ₀`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecisionInput {
    pub s_a: f64,
    pub s_b: f64,
    pub tau_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Wp,
    El,
    T2,
    Any,
}

/// Most powerful test under a location shift: the argmax of the second-order
/// power terms `B(WP) = S_a·I`, `B(EL) = S_b·I`, `B(T²) = 0` with
/// `sign(I) = sign(τ_h)`. Ties break toward WP, then EL.
pub fn recommend_test(input: &DecisionInput) -> Result<Recommendation> {
    let DecisionInput { s_a, s_b, tau_h } = *input;
    if !s_a.is_finite() || !s_b.is_finite() || !tau_h.is_finite() {
        return Err(Error::InvalidMoments(
            "decision inputs must be finite".into(),
        ));
    }
    if tau_h == 0.0 {
        return Ok(Recommendation::Any);
    }
    if tau_h > 0.0 {
        if s_a >= s_b && s_a >= 0.0 {
            Ok(Recommendation::Wp)
        } else if s_b >= s_a && s_b >= 0.0 {
            Ok(Recommendation::El)
        } else {
            Ok(Recommendation::T2)
        }
    } else if s_a <= s_b && s_a <= 0.0 {
        Ok(Recommendation::Wp)
    } else if s_b <= s_a && s_b <= 0.0 {
        Ok(Recommendation::El)
    } else {
        Ok(Recommendation::T2)
    }
}
