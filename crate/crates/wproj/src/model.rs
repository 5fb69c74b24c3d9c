//! Moment functions, the Mahalanobis ground cost, and datasets.
//!
//! A [`MomentModel`] bundles `h: R^m -> R^d` with its Jacobian, per-component
//! Hessians and (optionally) third derivatives. Built-in models:
//!
//! * [`MomentModel::linear`] — `h(x) = x`,
//! * [`MomentModel::quadratic_norm`] — `h(x) = ||x||² - c`,
//! * [`MomentModel::zero_power`] — the smoothed piecewise-linear function of
//!   the "zero power of EL" construction, `h = f * K_ε` with a bump kernel.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

type HFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type HessFn = dyn Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync;
/// Third derivatives of one output component: `T[a][(b, c)] = ∂³h^β/∂x_a∂x_b∂x_c`.
type ThirdFn = dyn Fn(&DVector<f64>, usize) -> Vec<DMatrix<f64>> + Send + Sync;

/// A moment function `h: R^m -> R^d` with derivative maps.
#[derive(Clone)]
pub struct MomentModel {
    m: usize,
    d: usize,
    h: Arc<HFn>,
    jac: Arc<JacFn>,
    hess: Arc<HessFn>,
    third: Option<Arc<ThirdFn>>,
    lipschitz_kappa1: Option<f64>,
    /// Set by the zero-power model when an evaluation fell in the constant tail.
    tail_clamp: Option<Arc<AtomicBool>>,
}

impl std::fmt::Debug for MomentModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MomentModel")
            .field("m", &self.m)
            .field("d", &self.d)
            .field("has_third", &self.third.is_some())
            .field("lipschitz_kappa1", &self.lipschitz_kappa1)
            .finish()
    }
}

impl MomentModel {
    pub fn new(
        m: usize,
        d: usize,
        h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        hess: impl Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidDimension(format!(
                "moment model needs m >= 1 and d >= 1, got m={m}, d={d}"
            )));
        }
        Ok(Self {
            m,
            d,
            h: Arc::new(h),
            jac: Arc::new(jac),
            hess: Arc::new(hess),
            third: None,
            lipschitz_kappa1: None,
            tail_clamp: None,
        })
    }

    pub fn with_third(
        mut self,
        third: impl Fn(&DVector<f64>, usize) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.third = Some(Arc::new(third));
        self
    }

    pub fn with_lipschitz_kappa1(mut self, kappa1: f64) -> Self {
        self.lipschitz_kappa1 = Some(kappa1);
        self
    }

    /// Synthesize third derivatives by central finite differences of the
    /// Hessian. Opt-in: operations that need `L_n` reject models without
    /// `third` unless this has been called explicitly.
    pub fn with_fd_third(mut self, step: f64) -> Self {
        let hess = Arc::clone(&self.hess);
        let m = self.m;
        self.third = Some(Arc::new(move |x: &DVector<f64>, beta: usize| {
            let mut out = Vec::with_capacity(m);
            for a in 0..m {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += step;
                xm[a] -= step;
                let hp = hess(&xp, beta);
                let hm = hess(&xm, beta);
                out.push((hp - hm) / (2.0 * step));
            }
            out
        }));
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.h)(x)
    }

    /// Jacobian `Dh(x)`, a `d x m` matrix whose rows are the gradients.
    pub fn jac(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jac)(x)
    }

    /// Hessian of component `beta`, an `m x m` symmetric matrix.
    pub fn hess(&self, x: &DVector<f64>, beta: usize) -> DMatrix<f64> {
        (self.hess)(x, beta)
    }

    pub fn has_third(&self) -> bool {
        self.third.is_some()
    }

    pub fn third(&self, x: &DVector<f64>, beta: usize) -> Result<Vec<DMatrix<f64>>> {
        match &self.third {
            Some(t) => Ok(t(x, beta)),
            None => Err(Error::MissingDerivatives(
                "third derivatives not provided".into(),
            )),
        }
    }

    pub fn lipschitz_kappa1(&self) -> Option<f64> {
        self.lipschitz_kappa1
    }

    /// Whether a zero-power model evaluation has hit the clamped constant tail.
    /// `None` for models without a tabulated range.
    pub fn tail_clamp_hit(&self) -> Option<bool> {
        self.tail_clamp.as_ref().map(|f| f.load(Ordering::Relaxed))
    }

    pub fn reset_tail_clamp(&self) {
        if let Some(f) = &self.tail_clamp {
            f.store(false, Ordering::Relaxed);
        }
    }

    /// `h(x) = x`: d = m, identity Jacobian, zero higher derivatives.
    pub fn linear(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDimension("linear model needs m >= 1".into()));
        }
        let model = Self::new(
            m,
            m,
            |x| x.clone(),
            move |_| DMatrix::identity(m, m),
            move |_, _| DMatrix::zeros(m, m),
        )?
        .with_third(move |_, _| vec![DMatrix::zeros(m, m); m])
        .with_lipschitz_kappa1(0.0);
        Ok(model)
    }

    /// `h(x) = ||x||² - c`: d = 1, `Dh = 2xᵀ`, `D²h = 2I`, zero third derivatives.
    pub fn quadratic_norm(m: usize, c: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDimension(
                "quadratic model needs m >= 1".into(),
            ));
        }
        let model = Self::new(
            m,
            1,
            move |x| DVector::from_element(1, x.norm_squared() - c),
            move |x| DMatrix::from_fn(1, m, |_, j| 2.0 * x[j]),
            move |_, _| DMatrix::identity(m, m) * 2.0,
        )?
        .with_third(move |_, _| vec![DMatrix::zeros(m, m); m])
        .with_lipschitz_kappa1(2.0);
        Ok(model)
    }

    /// Smoothed piecewise-linear moment function from the "zero power of EL"
    /// construction: `h = f * K_ε` with breakpoints `d_0 = 2`,
    /// `d_k = sqrt(2(2^{k+1}+1))`, plateau values `y_k = 1 + 2^{-k}`
    /// (`y_0 = -1`), and a unit-mass bump kernel of half-width `epsilon`.
    /// `m = d = 1`. Evaluations beyond the tabulated range clamp to the
    /// constant tail value 2 and raise the model's tail-clamp flag.
    pub fn zero_power(epsilon: f64, kmax: usize) -> Result<Self> {
        let shape = Arc::new(ZeroPowerShape::new(epsilon, kmax)?);
        let flag = Arc::new(AtomicBool::new(false));

        let s_h = Arc::clone(&shape);
        let f_h = Arc::clone(&flag);
        let s_j = Arc::clone(&shape);
        let f_j = Arc::clone(&flag);
        let s_2 = Arc::clone(&shape);
        let f_2 = Arc::clone(&flag);
        let s_3 = Arc::clone(&shape);
        let f_3 = Arc::clone(&flag);

        let mut model = Self::new(
            1,
            1,
            move |x| DVector::from_element(1, s_h.conv(x[0], 0, &f_h)),
            move |x| DMatrix::from_element(1, 1, s_j.conv(x[0], 1, &f_j)),
            move |x, _| DMatrix::from_element(1, 1, s_2.conv(x[0], 2, &f_2)),
        )?
        .with_third(move |x, _| vec![DMatrix::from_element(1, 1, s_3.conv(x[0], 3, &f_3))]);
        model.tail_clamp = Some(flag);
        Ok(model)
    }

    /// Breakpoint abscissa `x_k` of the zero-power construction.
    pub fn zero_power_xk(k: usize) -> f64 {
        ZeroPowerShape::x_k(k)
    }

    /// Plateau value `y_k` of the zero-power construction.
    pub fn zero_power_yk(k: usize) -> f64 {
        if k == 0 {
            -1.0
        } else {
            1.0 + 0.5f64.powi(k as i32)
        }
    }

    /// Half-width `d_k` of the k-th tent.
    pub fn zero_power_dk(k: usize) -> f64 {
        ZeroPowerShape::d_k(k)
    }

    /// Check `jac`, `hess` and (when present) `third` against central finite
    /// differences of `h` at the given probe points. Returns the worst
    /// relative error seen.
    pub fn check_derivatives(&self, probes: &[DVector<f64>], step: f64) -> f64 {
        let mut worst = 0.0f64;
        let rel = |err: f64, scale: f64| err / (1.0 + scale);
        for x in probes {
            let jac = self.jac(x);
            for a in 0..self.m {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += step;
                xm[a] -= step;
                let fd = (self.h(&xp) - self.h(&xm)) / (2.0 * step);
                for b in 0..self.d {
                    worst = worst.max(rel((jac[(b, a)] - fd[b]).abs(), jac[(b, a)].abs()));
                }
                let jp = self.jac(&xp);
                let jm = self.jac(&xm);
                for beta in 0..self.d {
                    let hess = self.hess(x, beta);
                    for b in 0..self.m {
                        let fd2 = (jp[(beta, b)] - jm[(beta, b)]) / (2.0 * step);
                        worst = worst.max(rel((hess[(b, a)] - fd2).abs(), hess[(b, a)].abs()));
                    }
                    if self.third.is_some() {
                        let hp = self.hess(&xp, beta);
                        let hm = self.hess(&xm, beta);
                        let third = self.third(x, beta).expect("checked");
                        for b in 0..self.m {
                            for c in 0..self.m {
                                let fd3 = (hp[(b, c)] - hm[(b, c)]) / (2.0 * step);
                                worst = worst
                                    .max(rel((third[a][(b, c)] - fd3).abs(), third[a][(b, c)].abs()));
                            }
                        }
                    }
                }
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Zero-power construction: piecewise-linear f convolved with a bump kernel.
// ---------------------------------------------------------------------------

struct ZeroPowerShape {
    epsilon: f64,
    kmax: usize,
    /// `x_k` for k = 0..=kmax.
    xs: Vec<f64>,
    /// `d_k` for k = 0..=kmax.
    ds: Vec<f64>,
    /// `y_k` for k = 0..=kmax.
    ys: Vec<f64>,
    /// Sorted kink abscissas of f on the positive axis, with the jump of f'
    /// there. Jumps are even in u, so the kink at -q carries the same jump.
    kinks: Vec<(f64, f64)>,
    /// End of the tabulated range: `x_kmax + d_kmax`.
    range: f64,
    /// Kernel mass from the same quadrature rule used for evaluation.
    mass: f64,
}

impl ZeroPowerShape {
    fn d_k(k: usize) -> f64 {
        if k == 0 {
            2.0
        } else {
            (2.0 * (2f64.powi(k as i32 + 1) + 1.0)).sqrt()
        }
    }

    fn x_k(k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            let mut sum = 0.0;
            for i in 1..k {
                sum += Self::d_k(i);
            }
            2.0 + 2.0 * sum + Self::d_k(k)
        }
    }

    fn new(epsilon: f64, kmax: usize) -> Result<Self> {
        if !(epsilon > 0.0) || epsilon > 0.5 {
            return Err(Error::InvalidOptions(format!(
                "zero-power epsilon must lie in (0, 0.5], got {epsilon}"
            )));
        }
        if kmax == 0 {
            return Err(Error::InvalidOptions("zero-power kmax must be >= 1".into()));
        }
        let mut xs = Vec::with_capacity(kmax + 1);
        let mut ds = Vec::with_capacity(kmax + 1);
        let mut ys = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            xs.push(Self::x_k(k));
            ds.push(Self::d_k(k));
            ys.push(MomentModel::zero_power_yk(k));
        }
        let range = xs[kmax] + ds[kmax];
        // Kinks of f on the positive axis with the jump of f' at each. The
        // ramp slope of tent k is s_k = (2 - y_k)/(d_k - eps).
        let slope = |k: usize| (2.0 - ys[k]) / (ds[k] - epsilon);
        let mut kinks: Vec<(f64, f64)> = Vec::new();
        kinks.push((epsilon, slope(0))); // central plateau -> rising ramp
        for k in 0..=kmax {
            if k > 0 {
                kinks.push((xs[k] - epsilon, slope(k))); // down-ramp -> plateau
                kinks.push((xs[k] + epsilon, slope(k))); // plateau -> up-ramp
            }
            // Peak at x_k + d_k: up-ramp of tent k meets the down-ramp of
            // tent k+1, or the constant tail after the last tent.
            let after = if k < kmax { -slope(k + 1) } else { 0.0 };
            kinks.push((xs[k] + ds[k], after - slope(k)));
        }
        kinks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let gl = gauss_legendre_64();
        let mut mass = 0.0;
        for (t, w) in gl.map_to(-epsilon, epsilon) {
            mass += w * bump(t, epsilon, 0);
        }
        Ok(Self {
            epsilon,
            kmax,
            xs,
            ds,
            ys,
            kinks,
            range,
            mass,
        })
    }

    /// The piecewise-linear tent profile, evaluated through symmetry.
    fn f(&self, u: f64, clamp_flag: &AtomicBool) -> f64 {
        let t = u.abs();
        if t >= self.range {
            clamp_flag.store(true, Ordering::Relaxed);
            return 2.0;
        }
        // Segment k covers |u| in [x_k - d_k, x_k + d_k); for k = 0 that is [0, 2).
        let k = self
            .xs
            .iter()
            .zip(&self.ds)
            .position(|(x, d)| t < x + d)
            .unwrap_or(self.kmax);
        let (xk, dk, yk) = (self.xs[k], self.ds[k], self.ys[k]);
        let slope = (2.0 - yk) / (dk - self.epsilon);
        if t < xk - self.epsilon {
            -slope * (t - xk + self.epsilon) + yk
        } else if t < xk + self.epsilon {
            yk
        } else {
            slope * (t - xk - self.epsilon) + yk
        }
    }

    /// Derivative of f where it exists (piecewise constant, odd in u).
    fn f_slope(&self, u: f64, clamp_flag: &AtomicBool) -> f64 {
        let t = u.abs();
        if t >= self.range {
            clamp_flag.store(true, Ordering::Relaxed);
            return 0.0;
        }
        let k = self
            .xs
            .iter()
            .zip(&self.ds)
            .position(|(x, d)| t < x + d)
            .unwrap_or(self.kmax);
        let (xk, dk, yk) = (self.xs[k], self.ds[k], self.ys[k]);
        let slope = (2.0 - yk) / (dk - self.epsilon);
        let s = if t < xk - self.epsilon {
            -slope
        } else if t < xk + self.epsilon {
            0.0
        } else {
            slope
        };
        s * u.signum()
    }

    /// Convolution `(f * K_ε)(x)` or one of its derivatives in `x`
    /// (`deriv` in 0..=3). Derivatives are moved onto f by integration by
    /// parts (the kernel vanishes at the window edges): order one integrates
    /// `f' K` with Gauss-Legendre pieces split at the kinks of f, and orders
    /// two and three are exact sums of the f'-jumps against `K` and `K'`.
    fn conv(&self, x: f64, deriv: usize, clamp_flag: &AtomicBool) -> f64 {
        let (lo, hi) = (x - self.epsilon, x + self.epsilon);
        if deriv >= 2 {
            let mut acc = 0.0;
            for &(q, jump) in &self.kinks {
                for s in [q, -q] {
                    if s > lo && s < hi {
                        acc += jump * bump(x - s, self.epsilon, deriv - 2);
                    }
                }
            }
            if hi >= self.range || lo <= -self.range {
                clamp_flag.store(true, Ordering::Relaxed);
            }
            return acc / self.mass;
        }

        // Collect kink points of f inside (lo, hi); kinks are symmetric.
        let mut cuts: Vec<f64> = vec![lo];
        for &(q, _) in &self.kinks {
            for s in [q, -q] {
                if s > lo + 1e-14 && s < hi - 1e-14 {
                    cuts.push(s);
                }
            }
        }
        cuts.push(hi);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let gl = gauss_legendre_64();
        let mut acc = 0.0;
        for w in cuts.windows(2) {
            if w[1] - w[0] < 1e-15 {
                continue;
            }
            for (u, wt) in gl.map_to(w[0], w[1]) {
                let fu = if deriv == 0 {
                    self.f(u, clamp_flag)
                } else {
                    self.f_slope(u, clamp_flag)
                };
                acc += wt * fu * bump(x - u, self.epsilon, 0);
            }
        }
        acc / self.mass
    }
}

/// Bump kernel `K_ε(t) = exp(-1/(1 - t²/ε²))` on `|t| < ε` and its first
/// three derivatives in `t` (`deriv` in 0..=3). Zero outside the support.
fn bump(t: f64, eps: f64, deriv: usize) -> f64 {
    let s = (t / eps) * (t / eps);
    if s >= 1.0 - 1e-12 {
        return 0.0;
    }
    let r = 1.0 - s;
    let k = (-1.0 / r).exp();
    let sp = 2.0 * t / (eps * eps);
    let spp = 2.0 / (eps * eps);
    let g1 = -sp / (r * r);
    let g2 = -spp / (r * r) - 2.0 * sp * sp / (r * r * r);
    let g3 = -6.0 * sp * spp / (r * r * r) - 6.0 * sp * sp * sp / (r * r * r * r);
    match deriv {
        0 => k,
        1 => k * g1,
        2 => k * (g2 + g1 * g1),
        3 => k * (g3 + 3.0 * g1 * g2 + g1 * g1 * g1),
        _ => unreachable!("bump derivatives only implemented up to order 3"),
    }
}

// ---------------------------------------------------------------------------
// Gauss-Legendre rule (Golub-Welsch on the Jacobi matrix).
// ---------------------------------------------------------------------------

pub(crate) struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    fn new(order: usize) -> Self {
        let mut jacobi = DMatrix::zeros(order, order);
        for k in 1..order {
            let b = k as f64 / ((4.0 * (k * k) as f64 - 1.0).sqrt());
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let w = 2.0 * eig.eigenvectors[(0, i)].powi(2);
                (node, w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Nodes and weights mapped from [-1, 1] to [a, b].
    pub(crate) fn map_to(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

pub(crate) fn gauss_legendre_64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(64))
}

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Positive-definite `Σ` defining the squared Mahalanobis ground cost
/// `c(x̄, x) = (x̄ - x)ᵀ Σ⁻¹ (x̄ - x)`.
#[derive(Clone)]
pub struct CostModel {
    sigma: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    sigma_inv: DMatrix<f64>,
    op_norm: f64,
}

impl std::fmt::Debug for CostModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostModel")
            .field("m", &self.sigma.nrows())
            .field("op_norm", &self.op_norm)
            .finish()
    }
}

impl CostModel {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() == 0 {
            return Err(Error::InvalidDimension(
                "cost matrix must be square and nonempty".into(),
            ));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + sigma.abs().max()) {
            return Err(Error::Config(format!(
                "cost matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let eig = sigma.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::InvalidCost {
                eigenvalue: min_eig,
            });
        }
        let factor = Cholesky::new(sigma.clone()).ok_or(Error::InvalidCost {
            eigenvalue: min_eig,
        })?;
        let sigma_inv = factor.inverse();
        let op_norm = eig.eigenvalues.max();
        Ok(Self {
            sigma,
            factor,
            sigma_inv,
            op_norm,
        })
    }

    pub fn identity(m: usize) -> Self {
        Self::new(DMatrix::identity(m, m)).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn m(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// Operator norm `||Σ||₂`.
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn apply_sigma(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.sigma * v
    }

    pub fn apply_sigma_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(v)
    }

    /// `||v||²_Σ = vᵀ Σ⁻¹ v`.
    pub fn mahalanobis_sq(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.factor.solve(v))
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Observations with optional weights summing to one (default uniform `1/n`).
#[derive(Debug, Clone)]
pub struct DataSet {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    m: usize,
}

impl DataSet {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidData("dataset needs at least one row".into()));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::InvalidData("rows must have at least one column".into()));
        }
        let mut points = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != m {
                return Err(Error::DataFormat {
                    row: i,
                    col: r.len(),
                    message: format!("expected {m} columns"),
                });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::DataFormat {
                    row: i,
                    col: j,
                    message: "non-finite value".into(),
                });
            }
            points.push(DVector::from_vec(r));
        }
        let n = points.len();
        Ok(Self {
            points,
            weights: vec![1.0 / n as f64; n],
            m,
        })
    }

    /// Scalar observations as a single-column dataset.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_rows(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.points.len() {
            return Err(Error::InvalidData(format!(
                "got {} weights for {} rows",
                weights.len(),
                self.points.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidData("weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidData(format!(
                "weights must sum to 1 (got {sum})"
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Load a CSV file: one observation per row, `m` numeric columns, with an
    /// optional header row (detected when the first row fails to parse).
    pub fn load_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let mut row = Vec::with_capacity(record.len());
            let mut failed: Option<usize> = None;
            for (j, field) in record.iter().enumerate() {
                match field.parse::<f64>() {
                    Ok(v) => row.push(v),
                    Err(_) => {
                        failed = Some(j);
                        break;
                    }
                }
            }
            match failed {
                None => rows.push(row),
                Some(j) => {
                    // A non-numeric first row is a header; elsewhere it is an error.
                    if i == 0 {
                        continue;
                    }
                    return Err(Error::DataFormat {
                        row: i,
                        col: j,
                        message: format!("cannot parse {:?} as a number", &record[j]),
                    });
                }
            }
        }
        Self::from_rows(rows)
    }

    pub fn load_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::load_csv(std::fs::File::open(path)?)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }
}
