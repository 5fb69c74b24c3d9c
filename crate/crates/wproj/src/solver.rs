//! Dual solver for the scaled Wasserstein projection statistic `n R_n(h)`.
//!
//! Strong duality gives, in the rescaled convention `ζ' = sqrt(n) ζ`,
//!
//! ```text
//! n R_n(h) = sup_{ζ'} { -ζ'ᵀ H_n - M_n(ζ') },   H_n = n^{-1/2} Σ_i h(X_i),
//! ```
//!
//! with the optimizer contained in the ball `||ζ'||₂ <= 2 log n` for large n.
//! Each dual evaluation solves one inner transport subproblem per sample: in
//! unrescaled variables `ζ = ζ'/sqrt(n)`,
//!
//! ```text
//! v(ζ; x_i) = sup_x { ζᵀ h(x) - ||x - x_i||²_Σ },
//! ```
//!
//! whose stationarity condition `2 Σ⁻¹(x - x_i) = Dh(x)ᵀ ζ` is solved by a
//! damped fixed point `x <- x_i + ½ Σ Dh(x)ᵀ ζ` with a safeguarded Newton
//! fallback. The envelope theorem gives the outer supergradient
//! `-n^{-1/2} Σ_i h(x*_i)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CostModel, DataSet, MomentModel};

/// Options for [`compute_wp_statistic`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Outer stop threshold on the supergradient norm.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    /// Inner fixed-point displacement threshold.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Initial damping for the inner fixed point, in (0, 1]; halved on divergence.
    pub inner_damping: f64,
    /// Number of 1-D multistart seeds for nonconcave inner problems (0 = off).
    pub multistart_grid: usize,
    /// Multiplier on the theoretical dual-ball radius `2 log n`.
    pub zeta_radius_scale: f64,
    /// Sample size used for the `n` in `n R_n(h)`, the rescaling and the ball
    /// radius. Defaults to the number of rows; override when redundant atoms
    /// represent the same empirical measure.
    pub effective_n: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            outer_tol: 1e-9,
            outer_max_iter: 500,
            inner_tol: 1e-11,
            inner_max_iter: 200,
            inner_damping: 1.0,
            multistart_grid: 0,
            zeta_radius_scale: 1.0,
            effective_n: None,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::InvalidOptions("tolerances must be > 0".into()));
        }
        if self.outer_max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::InvalidOptions("iteration caps must be >= 1".into()));
        }
        if !(self.inner_damping > 0.0 && self.inner_damping <= 1.0) {
            return Err(Error::InvalidOptions(
                "inner_damping must be in (0, 1]".into(),
            ));
        }
        if !(self.zeta_radius_scale > 0.0) {
            return Err(Error::InvalidOptions("zeta_radius_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Result of the dual solve.
#[derive(Debug, Clone)]
pub struct WpResult {
    /// `n R_n(h)`.
    pub stat: f64,
    /// `R_n(h)`.
    pub r_value: f64,
    /// Optimal dual variable in the rescaled convention `ζ' = sqrt(n) ζ`.
    pub zeta_star: DVector<f64>,
    /// Inner optimizers `x*_i`, one per sample.
    pub transported: Vec<DVector<f64>>,
    /// `H_n = n^{-1/2} Σ_i h(X_i)` (weighted analogue for weighted data).
    pub h_bar: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// True when the optimizer sits on the dual-ball boundary.
    pub active_ball: bool,
    /// True when 0 was not strictly inside the convex hull of `{h(X_i)}`.
    pub hull_warning: bool,
}

enum InnerFailure {
    Nonconvergence,
    Unbounded,
}

struct InnerSolution {
    x_star: DVector<f64>,
    value: f64,
    h_star: DVector<f64>,
}

/// Solve the per-sample transport subproblem
/// `sup_x { ζᵀ h(x) - ||x - x_i||²_Σ }` for an unrescaled `ζ`.
pub fn solve_inner_transport(
    zeta: &DVector<f64>,
    x_i: &DVector<f64>,
    model: &MomentModel,
    cost: &CostModel,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, f64)> {
    match solve_inner(zeta, x_i, model, cost, opts) {
        Ok(sol) => Ok((sol.x_star, sol.value)),
        Err(InnerFailure::Nonconvergence) => Err(Error::InnerNonconvergence { sample: 0 }),
        Err(InnerFailure::Unbounded) => Err(Error::UnboundedInner { sample: 0 }),
    }
}

fn psi(
    zeta: &DVector<f64>,
    x: &DVector<f64>,
    x_i: &DVector<f64>,
    model: &MomentModel,
    cost: &CostModel,
) -> f64 {
    let diff = x - x_i;
    zeta.dot(&model.h(x)) - cost.mahalanobis_sq(&diff)
}

fn stationarity_residual(
    zeta: &DVector<f64>,
    x: &DVector<f64>,
    x_i: &DVector<f64>,
    model: &MomentModel,
    cost: &CostModel,
) -> DVector<f64> {
    let diff = x - x_i;
    2.0 * cost.apply_sigma_inv(&diff) - model.jac(x).transpose() * zeta
}

fn solve_inner(
    zeta: &DVector<f64>,
    x_i: &DVector<f64>,
    model: &MomentModel,
    cost: &CostModel,
    opts: &SolverOptions,
) -> std::result::Result<InnerSolution, InnerFailure> {
    let zeta_norm = zeta.norm();
    if zeta_norm == 0.0 {
        return Ok(InnerSolution {
            x_star: x_i.clone(),
            value: 0.0,
            h_star: model.h(x_i),
        });
    }
    let m = model.m();
    let jac_at_xi = model.jac(x_i);
    // ||Δ|| <= ||Dh(x_i)|| ||Σ|| ||ζ|| on the contractive branch; far beyond
    // that is divergence.
    let delta_bound = jac_at_xi.norm() * cost.op_norm() * zeta_norm + 1.0;
    let diverged = |x: &DVector<f64>| {
        !x.iter().all(|v| v.is_finite()) || (x - x_i).norm() > 1e8 * delta_bound
    };
    // Concavity of the inner objective can fail once ||ζ|| κ₁ ||Σ||₂ >= 2.
    let maybe_unbounded = model
        .lipschitz_kappa1()
        .map(|k1| zeta_norm * k1 * cost.op_norm() >= 2.0)
        .unwrap_or(false);

    let mut best: Option<InnerSolution> = None;
    let mut saw_divergence = false;
    let res_tol = |x: &DVector<f64>| {
        1e-8 * (1.0 + 2.0 * cost.apply_sigma_inv(&(x - x_i)).norm() + zeta_norm * jac_at_xi.norm())
    };

    // Nonconcave scalar objectives: scan a uniform grid over
    // [x_i - G, x_i + G] with G = ||Σ||₂ ||ζ||₂ sup||Dh|| (sup||Dh||
    // estimated on a coarse pre-scan), bracket the local maxima of ψ and
    // refine each bracket by golden section. Stationary points of this h can
    // hide in narrow smoothing zones where a fixed point never lands.
    if opts.multistart_grid > 0 && m == 1 {
        let mut jac_sup = jac_at_xi.norm();
        let g0 = cost.op_norm() * zeta_norm * jac_sup.max(1.0);
        for t in 0..64 {
            let u = x_i[0] - g0 + 2.0 * g0 * (t as f64) / 63.0;
            jac_sup = jac_sup.max(model.jac(&DVector::from_element(1, u)).norm());
        }
        let g = cost.op_norm() * zeta_norm * jac_sup;
        let k = opts.multistart_grid.max(8);
        let grid: Vec<f64> = (0..k)
            .map(|t| x_i[0] - g + 2.0 * g * (t as f64) / (k - 1) as f64)
            .collect();
        let psi1 = |u: f64| psi(zeta, &DVector::from_element(1, u), x_i, model, cost);
        let vals: Vec<f64> = grid.iter().map(|&u| psi1(u)).collect();
        for t in 0..k {
            let is_local_max = (t == 0 || vals[t] >= vals[t - 1])
                && (t + 1 == k || vals[t] >= vals[t + 1]);
            if !is_local_max {
                continue;
            }
            let lo = grid[t.saturating_sub(1)];
            let hi = grid[(t + 1).min(k - 1)];
            let x_ref = golden_max(lo, hi, &psi1);
            // Golden section stalls on the f64 plateau of ψ around the max;
            // a Newton polish on the residual restores full precision.
            let seed = DVector::from_element(1, x_ref);
            let xc = newton_polish(zeta, &seed, x_i, model, cost, &diverged).unwrap_or(seed);
            let res = stationarity_residual(zeta, &xc, x_i, model, cost);
            if res.norm() > res_tol(&xc) {
                continue;
            }
            let value = psi(zeta, &xc, x_i, model, cost);
            consider_candidate(&mut best, xc, value, x_i, model, cost);
        }
    }

    let seeds: Vec<DVector<f64>> = vec![x_i.clone()];
    'seed: for seed in &seeds {
        let mut x = seed.clone();
        let mut damping = opts.inner_damping;
        let mut fp_converged = false;
        let mut iters = 0usize;
        while iters < opts.inner_max_iter {
            iters += 1;
            let target = x_i + 0.5 * cost.apply_sigma(&(model.jac(&x).transpose() * zeta));
            let x_new = (1.0 - damping) * &x + damping * target;
            if diverged(&x_new) {
                saw_divergence = true;
                damping *= 0.5;
                x = seed.clone();
                if damping < 2f64.powi(-6) {
                    break;
                }
                continue;
            }
            let disp = (&x_new - &x).norm();
            x = x_new;
            if disp <= opts.inner_tol * (1.0 + x.norm()) {
                fp_converged = true;
                break;
            }
        }

        let candidate = if fp_converged {
            Some(x)
        } else {
            newton_polish(zeta, &x, x_i, model, cost, &diverged)
        };

        let Some(xc) = candidate else {
            saw_divergence = true;
            continue 'seed;
        };
        let res = stationarity_residual(zeta, &xc, x_i, model, cost);
        if res.norm() > res_tol(&xc) {
            continue 'seed;
        }
        // A stationary point that is not a local maximum signals lost
        // concavity; with the κ₁ condition this certifies unboundedness.
        let mut jac_res = 2.0 * cost.sigma_inv().clone();
        for beta in 0..model.d() {
            jac_res -= model.hess(&xc, beta) * zeta[beta];
        }
        let min_curv = jac_res.symmetric_eigen().eigenvalues.min();
        if min_curv < -1e-8 {
            if maybe_unbounded {
                return Err(InnerFailure::Unbounded);
            }
            continue 'seed;
        }
        let value = psi(zeta, &xc, x_i, model, cost);
        consider_candidate(&mut best, xc, value, x_i, model, cost);
    }

    match best {
        Some(mut sol) => {
            // The no-move point is always feasible for the inner sup.
            let base = zeta.dot(&model.h(x_i));
            if base > sol.value {
                sol = InnerSolution {
                    x_star: x_i.clone(),
                    value: base,
                    h_star: model.h(x_i),
                };
            }
            Ok(sol)
        }
        None => {
            if saw_divergence && maybe_unbounded {
                Err(InnerFailure::Unbounded)
            } else {
                Err(InnerFailure::Nonconvergence)
            }
        }
    }
}

/// Keep the better candidate; ties within 1e-12 relative go to the point
/// closest to `x_i` in the Σ-norm (deterministic given the scan order).
fn consider_candidate(
    best: &mut Option<InnerSolution>,
    x: DVector<f64>,
    value: f64,
    x_i: &DVector<f64>,
    model: &MomentModel,
    cost: &CostModel,
) {
    let replace = match best {
        None => true,
        Some(b) => {
            let tol = 1e-12 * (1.0 + b.value.abs());
            value > b.value + tol
                || ((value - b.value).abs() <= tol
                    && cost.mahalanobis_sq(&(&x - x_i)) < cost.mahalanobis_sq(&(&b.x_star - x_i)))
        }
    };
    if replace {
        *best = Some(InnerSolution {
            h_star: model.h(&x),
            x_star: x,
            value,
        });
    }
}

/// Golden-section maximization of a scalar function on [lo, hi].
fn golden_max(lo: f64, hi: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..90 {
        if b - a <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

fn newton_polish(
    zeta: &DVector<f64>,
    x0: &DVector<f64>,
    x_i: &DVector<f64>,
    model: &MomentModel,
    cost: &CostModel,
    diverged: &dyn Fn(&DVector<f64>) -> bool,
) -> Option<DVector<f64>> {
    let mut x = x0.clone();
    if diverged(&x) {
        x = x_i.clone();
    }
    let mut res = stationarity_residual(zeta, &x, x_i, model, cost);
    for _ in 0..100 {
        let rnorm = res.norm();
        if rnorm <= 1e-12 * (1.0 + zeta.norm()) {
            return Some(x);
        }
        let mut jac_res = 2.0 * cost.sigma_inv().clone();
        for beta in 0..model.d() {
            jac_res -= model.hess(&x, beta) * zeta[beta];
        }
        let step = match jac_res.clone().lu().solve(&(-&res)) {
            Some(s) => s,
            None => {
                let reg = jac_res + DMatrix::identity(x.len(), x.len()) * 1e-8;
                reg.lu().solve(&(-&res))?
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 2f64.powi(-30) {
            let x_new = &x + t * &step;
            if !diverged(&x_new) {
                let res_new = stationarity_residual(zeta, &x_new, x_i, model, cost);
                if res_new.norm() < rnorm * (1.0 - 1e-4 * t) || res_new.norm() < 1e-14 {
                    x = x_new;
                    res = res_new;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    let rnorm = stationarity_residual(zeta, &x, x_i, model, cost).norm();
    if rnorm <= 1e-8 * (1.0 + zeta.norm()) {
        Some(x)
    } else {
        None
    }
}

struct DualEval {
    value: f64,
    supergrad: DVector<f64>,
    transported: Vec<DVector<f64>>,
}

enum EvalOutcome {
    Ok(DualEval),
    /// The dual objective is -infinity at this ζ' (inner problem unbounded).
    Infeasible,
}

/// Compute `n R_n(h)` by projected ascent on the concave dual.
pub fn compute_wp_statistic(
    data: &DataSet,
    model: &MomentModel,
    cost: &CostModel,
    opts: &SolverOptions,
) -> Result<WpResult> {
    opts.validate()?;
    if data.m() != model.m() || cost.m() != model.m() {
        return Err(Error::InvalidDimension(format!(
            "data has m={}, cost m={}, model expects m={}",
            data.m(),
            cost.m(),
            model.m()
        )));
    }
    let n = opts.effective_n.unwrap_or(data.n());
    if n == 0 {
        return Err(Error::InvalidData("effective n must be >= 1".into()));
    }
    let nf = n as f64;
    let sqrt_n = nf.sqrt();
    let d = model.d();
    // Theoretical ball radius; asymptotic only, so when the optimizer lands on
    // the boundary the ball is doubled and the solve re-run. `active_ball`
    // reports whether this base ball was binding.
    let base_radius = 2.0 * opts.zeta_radius_scale * ((n.max(3)) as f64).ln();
    const MAX_EXPANSIONS: u32 = 20;

    let hs: Vec<DVector<f64>> = data.points().iter().map(|x| model.h(x)).collect();
    let mut hbar = DVector::zeros(d);
    for (i, h) in hs.iter().enumerate() {
        hbar += data.weight(i) * h;
    }
    let h_n = sqrt_n * &hbar;
    let hull_warning = !hull_contains_origin(&hs);

    let evaluate = |zeta_prime: &DVector<f64>| -> Result<EvalOutcome> {
        let zeta = zeta_prime / sqrt_n;
        let mut value = 0.0;
        let mut hsum = DVector::zeros(d);
        let mut transported = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            match solve_inner(&zeta, data.point(i), model, cost, opts) {
                Ok(sol) => {
                    value -= nf * data.weight(i) * sol.value;
                    hsum += data.weight(i) * &sol.h_star;
                    transported.push(sol.x_star);
                }
                Err(InnerFailure::Unbounded) => return Ok(EvalOutcome::Infeasible),
                Err(InnerFailure::Nonconvergence) => {
                    return Err(Error::InnerNonconvergence { sample: i })
                }
            }
        }
        Ok(EvalOutcome::Ok(DualEval {
            value,
            supergrad: -sqrt_n * hsum,
            transported,
        }))
    };

    // ζ' = 0 is always feasible with value 0; keep it as the fallback best.
    let mut best_zeta = DVector::zeros(d);
    let mut best = match evaluate(&best_zeta)? {
        EvalOutcome::Ok(e) => e,
        EvalOutcome::Infeasible => return Err(Error::InnerNonconvergence { sample: 0 }),
    };

    if d > 1 {
        // Warm start at the asymptotic optimum -2 V_n^{-1} H_n.
        let mut vn = DMatrix::zeros(d, d);
        for (i, x) in data.points().iter().enumerate() {
            let j = model.jac(x);
            vn += data.weight(i) * (&j * cost.sigma() * j.transpose());
        }
        if let Some(ch) = vn.cholesky() {
            let start = -2.0 * ch.solve(&h_n);
            if let EvalOutcome::Ok(e) = evaluate(&start)? {
                if e.value > best.value {
                    best = e;
                    best_zeta = start;
                }
            }
        }
    }

    let mut iterations = 0usize;
    let mut converged = false;

    let mut radius = base_radius;
    for expansion in 0..=MAX_EXPANSIONS {
        let mut hit_boundary = false;
        solve_in_ball(
            radius,
            d,
            opts,
            &evaluate,
            &mut best,
            &mut best_zeta,
            &mut iterations,
            &mut converged,
            &mut hit_boundary,
        )?;
        if !hit_boundary || expansion == MAX_EXPANSIONS {
            break;
        }
        radius *= 2.0;
    }

    let stat = best.value.max(0.0);
    let active_ball = best_zeta.norm() >= base_radius * (1.0 - 1e-9);
    Ok(WpResult {
        stat,
        r_value: stat / nf,
        zeta_star: best_zeta,
        transported: best.transported,
        h_bar: h_n,
        iterations,
        converged,
        active_ball,
        hull_warning,
    })
}

#[allow(clippy::too_many_arguments)]
fn solve_in_ball(
    radius: f64,
    d: usize,
    opts: &SolverOptions,
    evaluate: &dyn Fn(&DVector<f64>) -> Result<EvalOutcome>,
    best: &mut DualEval,
    best_zeta: &mut DVector<f64>,
    iterations: &mut usize,
    converged: &mut bool,
    hit_boundary: &mut bool,
) -> Result<()> {
    if d == 1 {
        // Concave scalar dual: bisect on the sign of the supergradient. An
        // infeasible probe lies outside the (convex) effective domain, which
        // contains 0, so its side is known.
        let track = |best: &mut DualEval, best_zeta: &mut DVector<f64>, z: f64, e: Option<DualEval>| {
            if let Some(e) = e {
                if e.value > best.value {
                    *best = e;
                    *best_zeta = DVector::from_element(1, z);
                }
            }
        };
        let sign_at = |z: f64| -> Result<(f64, Option<DualEval>)> {
            let zv = DVector::from_element(1, z);
            match evaluate(&zv)? {
                EvalOutcome::Ok(e) => Ok((e.supergrad[0], Some(e))),
                EvalOutcome::Infeasible => Ok((if z > 0.0 { -1.0 } else { 1.0 }, None)),
            }
        };
        let (mut lo, mut hi) = (-radius, radius);
        let (g_lo, e_lo) = sign_at(lo)?;
        let (g_hi, e_hi) = sign_at(hi)?;
        if g_lo <= 0.0 {
            *hit_boundary = e_lo.is_some();
            track(best, best_zeta, lo, e_lo);
            *converged = true;
            return Ok(());
        }
        if g_hi >= 0.0 {
            *hit_boundary = e_hi.is_some();
            track(best, best_zeta, hi, e_hi);
            *converged = true;
            return Ok(());
        }
        track(best, best_zeta, lo, e_lo);
        track(best, best_zeta, hi, e_hi);
        // Bracketed root-find on the (decreasing) supergradient: secant step
        // while it keeps shrinking the bracket, bisection otherwise.
        let (mut g_lo, mut g_hi) = (g_lo, g_hi);
        let mut force_bisect = false;
        while *iterations < opts.outer_max_iter {
            *iterations += 1;
            let width = hi - lo;
            let margin = 1e-3 * width;
            let secant = if g_lo.is_finite() && g_hi.is_finite() && g_lo != g_hi {
                lo + width * g_lo / (g_lo - g_hi)
            } else {
                f64::NAN
            };
            let cand = if force_bisect || !(secant > lo + margin && secant < hi - margin) {
                0.5 * (lo + hi)
            } else {
                secant
            };
            let (g_mid, e_mid) = sign_at(cand)?;
            track(best, best_zeta, cand, e_mid);
            if g_mid.abs() <= opts.outer_tol {
                *converged = true;
                break;
            }
            if g_mid > 0.0 {
                lo = cand;
                g_lo = g_mid;
            } else {
                hi = cand;
                g_hi = g_mid;
            }
            // A secant step that barely moved the bracket gets a bisection
            // chaser, which guarantees geometric shrinkage.
            force_bisect = !force_bisect && (hi - lo) > 0.75 * width;
            if hi - lo <= 1e-13 * (1.0 + radius) {
                *converged = true;
                break;
            }
        }
        return Ok(());
    }

    // d > 1: projected quasi-Newton (BFGS) ascent with Armijo backtracking,
    // warm-started from the incumbent (which starts at the asymptotic optimum
    // -2 V_n^{-1} H_n fed in by the caller, or 0).
    let proj = |z: &DVector<f64>| -> DVector<f64> {
        let nrm = z.norm();
        if nrm > radius {
            z * (radius / nrm)
        } else {
            z.clone()
        }
    };
    let mut zeta = proj(best_zeta);
    let mut eval = match evaluate(&zeta)? {
        EvalOutcome::Ok(e) => e,
        EvalOutcome::Infeasible => {
            zeta = DVector::zeros(d);
            match evaluate(&zeta)? {
                EvalOutcome::Ok(e) => e,
                EvalOutcome::Infeasible => unreachable!("zeta = 0 is feasible"),
            }
        }
    };
    if eval.value > best.value {
        *best_zeta = zeta.clone();
        *best = DualEval {
            value: eval.value,
            supergrad: eval.supergrad.clone(),
            transported: eval.transported.clone(),
        };
    }
    let mut b_inv = DMatrix::<f64>::identity(d, d);
    while *iterations < opts.outer_max_iter {
        *iterations += 1;
        let g = eval.supergrad.clone();
        let on_boundary = zeta.norm() >= radius * (1.0 - 1e-12);
        if g.norm() <= opts.outer_tol {
            *converged = true;
            break;
        }
        if on_boundary {
            let zhat = zeta.normalize();
            let radial = g.dot(&zhat);
            let tangential = &g - radial * &zhat;
            if radial >= 0.0 && tangential.norm() <= opts.outer_tol {
                *converged = true;
                *hit_boundary = true;
                break;
            }
        }
        let direction = &b_inv * &g;
        let direction = if direction.dot(&g) <= 0.0 {
            b_inv = DMatrix::identity(d, d);
            g.clone()
        } else {
            direction
        };
        let mut t = 1.0;
        let mut moved = false;
        while t >= 2f64.powi(-40) {
            let trial = proj(&(&zeta + t * &direction));
            let step = &trial - &zeta;
            if step.norm() <= 1e-16 * (1.0 + radius) {
                break;
            }
            match evaluate(&trial)? {
                EvalOutcome::Ok(e) => {
                    if e.value >= eval.value + 1e-4 * g.dot(&step) {
                        if e.value > best.value {
                            *best_zeta = trial.clone();
                            *best = DualEval {
                                value: e.value,
                                supergrad: e.supergrad.clone(),
                                transported: e.transported.clone(),
                            };
                        }
                        // Damped BFGS update (inverse Hessian of the negated
                        // objective).
                        let y = &eval.supergrad - &e.supergrad;
                        let sy = step.dot(&y);
                        if sy > 1e-12 * step.norm() * y.norm() {
                            let rho = 1.0 / sy;
                            let i_mat = DMatrix::<f64>::identity(d, d);
                            let left = &i_mat - rho * &step * y.transpose();
                            b_inv = &left * b_inv * left.transpose() + rho * &step * step.transpose();
                        }
                        zeta = trial;
                        eval = e;
                        moved = true;
                        break;
                    }
                }
                EvalOutcome::Infeasible => {}
            }
            t *= 0.5;
        }
        if !moved {
            if zeta.norm() >= radius * (1.0 - 1e-9) {
                *hit_boundary = true;
            }
            break;
        }
    }
    if zeta.norm() >= radius * (1.0 - 1e-9) {
        *hit_boundary = true;
    }
    Ok(())
}

/// Closed-form `n R_n(h)` for the linear moment function: `H_nᵀ Σ⁻¹ H_n`.
pub fn wp_closed_form_linear(data: &DataSet, cost: &CostModel) -> f64 {
    let n = data.n() as f64;
    let mut hbar = DVector::zeros(data.m());
    for i in 0..data.n() {
        hbar += data.weight(i) * data.point(i);
    }
    let h_n = n.sqrt() * hbar;
    cost.mahalanobis_sq(&h_n)
}

/// `Δ_n = n^{-1/2} Σ_i (||X_i||² - 1)` for the quadratic oracle.
pub fn quadratic_delta_n(data: &DataSet) -> f64 {
    let n = data.n() as f64;
    n.sqrt()
        * (0..data.n())
            .map(|i| data.weight(i) * (data.point(i).norm_squared() - 1.0))
            .sum::<f64>()
}

/// Closed-form `n R_n(h)` for `h(x) = ||x||² - 1` with `Σ = I`:
/// `n (sqrt(1 + Δ_n/sqrt(n)) - 1)²`.
pub fn wp_closed_form_quadratic(data: &DataSet) -> Result<f64> {
    let n = data.n() as f64;
    let inner = 1.0 + quadratic_delta_n(data) / n.sqrt();
    if inner < 0.0 {
        return Err(Error::InfeasibleOracle);
    }
    Ok(n * (inner.sqrt() - 1.0).powi(2))
}

/// Strict interior test for 0 in conv{h(X_i)}: exact in one dimension,
/// a Gilbert-style minimum-norm-point iteration otherwise.
pub(crate) fn hull_contains_origin(hs: &[DVector<f64>]) -> bool {
    let d = hs[0].len();
    if d == 1 {
        let min = hs.iter().map(|h| h[0]).fold(f64::INFINITY, f64::min);
        let max = hs.iter().map(|h| h[0]).fold(f64::NEG_INFINITY, f64::max);
        return min < 0.0 && max > 0.0;
    }
    // Gilbert's algorithm for the minimum-norm point of the hull.
    let mut p = hs[0].clone();
    for _ in 0..200 {
        if p.norm() < 1e-10 {
            return true;
        }
        let s = hs
            .iter()
            .min_by(|a, b| p.dot(a).partial_cmp(&p.dot(b)).unwrap())
            .unwrap();
        if p.dot(s) >= p.norm_squared() - 1e-12 {
            break;
        }
        let diff = s - &p;
        let denom = diff.norm_squared();
        if denom < 1e-30 {
            break;
        }
        let t = (-p.dot(&diff) / denom).clamp(0.0, 1.0);
        p += t * diff;
    }
    p.norm() < 1e-8
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn inner_linear_closed_form() {
        // h(x) = x, Σ = 1, ζ = 2, x_i = 0: x* = x_i + Σζ/2 = 1, value = 2·1 - 1.
        let model = MomentModel::linear(1).unwrap();
        let cost = CostModel::identity(1);
        let opts = SolverOptions::default();
        let (x_star, value) =
            solve_inner_transport(&scalar(2.0), &scalar(0.0), &model, &cost, &opts).unwrap();
        assert_relative_eq!(x_star[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn inner_zero_dual_variable() {
        let model = MomentModel::quadratic_norm(1, 1.0).unwrap();
        let cost = CostModel::identity(1);
        let opts = SolverOptions::default();
        let (x_star, value) =
            solve_inner_transport(&scalar(0.0), &scalar(0.7), &model, &cost, &opts).unwrap();
        assert_eq!(x_star[0], 0.7);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn inner_quadratic_hand_solved() {
        // h(x) = x²-1, ζ = 0.5, x_i = 1: 2(x-1) = 2x·0.5 → x* = 2,
        // value = 0.5·3 - 1 = 0.5.
        let model = MomentModel::quadratic_norm(1, 1.0).unwrap();
        let cost = CostModel::identity(1);
        let opts = SolverOptions::default();
        let (x_star, value) =
            solve_inner_transport(&scalar(0.5), &scalar(1.0), &model, &cost, &opts).unwrap();
        assert_relative_eq!(x_star[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(value, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn inner_unbounded_detected() {
        let model = MomentModel::quadratic_norm(1, 1.0).unwrap();
        let cost = CostModel::identity(1);
        let opts = SolverOptions::default();
        match solve_inner_transport(&scalar(1.5), &scalar(1.0), &model, &cost, &opts) {
            Err(Error::UnboundedInner { .. }) => {}
            other => panic!("expected UnboundedInner, got {other:?}"),
        }
    }

    #[test]
    fn wp_linear_two_points() {
        let data = DataSet::from_scalars(&[1.0, 3.0]).unwrap();
        let model = MomentModel::linear(1).unwrap();
        let cost = CostModel::identity(1);
        let res = compute_wp_statistic(&data, &model, &cost, &SolverOptions::default()).unwrap();
        assert_relative_eq!(res.stat, 8.0, epsilon = 1e-6);
        assert!(res.converged);
        assert!(res.hull_warning, "0 outside hull of {{1,3}}");
        assert_relative_eq!(res.stat, res.r_value * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn wp_linear_balanced_is_zero() {
        let data = DataSet::from_scalars(&[1.0, -1.0]).unwrap();
        let model = MomentModel::linear(1).unwrap();
        let cost = CostModel::identity(1);
        let res = compute_wp_statistic(&data, &model, &cost, &SolverOptions::default()).unwrap();
        assert!(res.stat.abs() < 1e-10, "stat {}", res.stat);
        assert!(!res.hull_warning);
    }

    #[test]
    fn wp_quadratic_two_points() {
        let data = DataSet::from_scalars(&[2.0, 0.0]).unwrap();
        let model = MomentModel::quadratic_norm(1, 1.0).unwrap();
        let cost = CostModel::identity(1);
        let res = compute_wp_statistic(&data, &model, &cost, &SolverOptions::default()).unwrap();
        let expect = 2.0 * (2f64.sqrt() - 1.0).powi(2);
        assert_relative_eq!(res.stat, expect, epsilon = 1e-6);
        let oracle = wp_closed_form_quadratic(&data).unwrap();
        assert_relative_eq!(oracle, expect, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_linear_examples() {
        let cost = CostModel::identity(1);
        let d1 = DataSet::from_scalars(&[1.0, 3.0]).unwrap();
        assert_relative_eq!(wp_closed_form_linear(&d1, &cost), 8.0, epsilon = 1e-12);
        let d2 = DataSet::from_scalars(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(wp_closed_form_linear(&d2, &cost), 0.0);
        let d3 = DataSet::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cost2 = CostModel::identity(2);
        assert_relative_eq!(wp_closed_form_linear(&d3, &cost2), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_quadratic_examples() {
        let d = DataSet::from_scalars(&[1.5, 0.5]).unwrap();
        // Δ_n = (1.25 - 0.75)/sqrt(2) ≈ 0.35355, value 2(sqrt(1.25)-1)² ≈ 0.02786.
        assert_relative_eq!(
            quadratic_delta_n(&d),
            0.5 / 2f64.sqrt(),
            epsilon = 1e-12
        );
        let v = wp_closed_form_quadratic(&d).unwrap();
        assert_relative_eq!(v, 2.0 * (1.25f64.sqrt() - 1.0).powi(2), epsilon = 1e-12);
        assert!((v - 0.0278640).abs() < 1e-4);

        // Σ ||X_i||² = n → Δ_n = 0 → statistic 0.
        let d0 = DataSet::from_scalars(&[1.0, -1.0]).unwrap();
        assert_eq!(wp_closed_form_quadratic(&d0).unwrap(), 0.0);
    }

    #[test]
    fn wp_matches_linear_oracle_multivariate() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(11);
        for trial in 0..20 {
            let m = 1 + trial % 3;
            let n = 5 + (trial * 7) % 30;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let data = DataSet::from_rows(rows).unwrap();
            let mut a = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    a[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let sigma = &a * a.transpose() + DMatrix::identity(m, m) * 0.5;
            let cost = CostModel::new(sigma).unwrap();
            let model = MomentModel::linear(m).unwrap();
            let res =
                compute_wp_statistic(&data, &model, &cost, &SolverOptions::default()).unwrap();
            let oracle = wp_closed_form_linear(&data, &cost);
            assert!(
                (res.stat - oracle).abs() <= 1e-6 * (1.0 + oracle),
                "trial {trial}: stat {} vs oracle {}",
                res.stat,
                oracle
            );
        }
    }

    #[test]
    fn duplicated_dataset_same_measure_same_stat() {
        let data = DataSet::from_scalars(&[0.4, -1.3, 2.2]).unwrap();
        let model = MomentModel::quadratic_norm(1, 1.0).unwrap();
        let cost = CostModel::identity(1);
        let base = compute_wp_statistic(&data, &model, &cost, &SolverOptions::default()).unwrap();

        let doubled = DataSet::from_scalars(&[0.4, -1.3, 2.2, 0.4, -1.3, 2.2])
            .unwrap()
            .with_weights(vec![1.0 / 6.0; 6])
            .unwrap();
        let opts = SolverOptions {
            effective_n: Some(3),
            ..SolverOptions::default()
        };
        let dup = compute_wp_statistic(&doubled, &model, &cost, &opts).unwrap();
        assert_relative_eq!(base.stat, dup.stat, epsilon = 1e-9);
    }

    #[test]
    fn single_atom_degenerate() {
        // n = 1: the statistic is the cost of moving the atom to the h-zero set.
        let data = DataSet::from_scalars(&[2.0]).unwrap();
        let model = MomentModel::quadratic_norm(1, 1.0).unwrap();
        let cost = CostModel::identity(1);
        let res = compute_wp_statistic(&data, &model, &cost, &SolverOptions::default()).unwrap();
        // The atom moves to ||x||² = 1: cost (2-1)² = 1, times n = 1.
        assert_relative_eq!(res.stat, 1.0, epsilon = 1e-6);
    }
}
