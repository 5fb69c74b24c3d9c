//! Empirical expansion tensors and polynomial approximations of `n R_n(h)`.
//!
//! The second-order expansion reads
//!
//! ```text
//! n R_n(h) ≈ <V_n, ξ_n⊗²> + n^{-1/2} <K_n, ξ_n⊗³>,
//! ```
//!
//! and the third-order refinement adds `n⁻¹ <L_n, ξ_n⊗⁴>`, where with
//! `A_i = Dh(X_i) Σ Dh(X_i)ᵀ`
//!
//! ```text
//! V_n        = mean_i A_i                                     (d×d)
//! ξ_n        = V_n⁻¹ H_n,  H_n = n^{-1/2} Σ_i h(X_i)          (d)
//! K_n[β,γ,ω] = mean_i Dh^β Σ D²h^γ Σ (Dh^ω)ᵀ                  (d×d×d)
//! W_n        = mean_i h(X_i) h(X_i)ᵀ                          (d×d)
//! ```
//!
//! `L_n` combines four contractions of second/third derivatives; see
//! [`compute_expansion_terms`] for the exact index layout.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CostModel, DataSet, MomentModel};
use crate::tensor::{Tensor3, Tensor4};

/// Empirical tensors entering the expansion of `n R_n(h)`.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionTerms {
    /// `V_n`, symmetric positive definite.
    pub v_n: DMatrix<f64>,
    /// `W_n = mean h h'`.
    pub w_n: DMatrix<f64>,
    /// `ξ_n = V_n⁻¹ H_n`.
    pub xi_n: DVector<f64>,
    /// `K_n`.
    pub k_n: Tensor3,
    /// `L_n`, present when third derivatives were requested.
    pub l_n: Option<Tensor4>,
    /// Sample size.
    pub n: usize,
    /// `H_n = n^{-1/2} Σ_i h(X_i)`.
    pub h_n: DVector<f64>,
}

/// Compute the empirical expansion tensors. `want_l` additionally computes
/// `L_n`, which requires third derivatives on the model.
pub fn compute_expansion_terms(
    data: &DataSet,
    model: &MomentModel,
    cost: &CostModel,
    want_l: bool,
) -> Result<ExpansionTerms> {
    if data.m() != model.m() || cost.m() != model.m() {
        return Err(Error::InvalidDimension(format!(
            "data m={}, cost m={}, model m={}",
            data.m(),
            cost.m(),
            model.m()
        )));
    }
    if want_l && !model.has_third() {
        return Err(Error::MissingDerivatives(
            "L_n needs third derivatives; supply them or call with_fd_third explicitly".into(),
        ));
    }
    let n = data.n();
    let nf = n as f64;
    let d = model.d();
    let m = model.m();

    let mut v_n = DMatrix::zeros(d, d);
    let mut w_n = DMatrix::zeros(d, d);
    let mut k_n = Tensor3::zeros(d);
    let mut hbar = DVector::zeros(d);
    // T1[w1,w2,w3,w4] = mean_i Dh^{w3} Σ D²h^{w1} Σ D²h^{w2} Σ (Dh^{w4})ᵀ
    // T2[w1,w2,w3,w4] = mean_i D³h^{w1}[Σ(Dh^{w2})ᵀ, Σ(Dh^{w3})ᵀ, Σ(Dh^{w4})ᵀ]
    let mut t1 = Tensor4::zeros(d);
    let mut t2 = Tensor4::zeros(d);

    for i in 0..n {
        let x = data.point(i);
        let w = data.weight(i);
        let h = model.h(x);
        let jac = model.jac(x);
        let a = &jac * cost.sigma(); // d×m, rows are Dh^β Σ
        hbar += w * &h;
        w_n += w * &h * h.transpose();
        v_n += w * (&a * jac.transpose());

        let hessians: Vec<DMatrix<f64>> = (0..d).map(|beta| model.hess(x, beta)).collect();
        for gamma in 0..d {
            // b = (Dh Σ) D²h^γ (Σ Dhᵀ), a d×d matrix in (β, ω).
            let b = &a * &hessians[gamma] * a.transpose();
            for beta in 0..d {
                for omega in 0..d {
                    k_n.add(beta, gamma, omega, w * b[(beta, omega)]);
                }
            }
        }

        if want_l {
            let s = cost.sigma() * jac.transpose(); // m×d, columns are Σ (Dh^β)ᵀ
            for w1 in 0..d {
                for w2 in 0..d {
                    let core = &hessians[w1] * cost.sigma() * &hessians[w2];
                    for w3 in 0..d {
                        for w4 in 0..d {
                            let v = (a.row(w3) * &core * s.column(w4))[(0, 0)];
                            t1.set(w1, w2, w3, w4, t1.get(w1, w2, w3, w4) + w * v);
                        }
                    }
                }
                let third = model.third(x, w1)?;
                for w2 in 0..d {
                    for w3 in 0..d {
                        for w4 in 0..d {
                            let mut v = 0.0;
                            for aa in 0..m {
                                let u = s[(aa, w2)];
                                if u == 0.0 {
                                    continue;
                                }
                                v += u
                                    * (s.column(w3).transpose() * &third[aa] * s.column(w4))[(0, 0)];
                            }
                            t2.set(w1, w2, w3, w4, t2.get(w1, w2, w3, w4) + w * v);
                        }
                    }
                }
            }
        }
    }

    let h_n = nf.sqrt() * hbar;

    let eig = v_n.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if min_eig <= 0.0 || max_eig / min_eig > 1e12 {
        return Err(Error::SingularVn {
            cond: if min_eig > 0.0 {
                max_eig / min_eig
            } else {
                f64::INFINITY
            },
        });
    }
    let chol = v_n.clone().cholesky().ok_or(Error::SingularVn {
        cond: max_eig / min_eig,
    })?;
    let xi_n = chol.solve(&h_n);

    let l_n = if want_l {
        // L_n = -T1 - T2/3
        //       + (3/2) Σ_{γθ} K[w1,γ,w2] Ṽ[γ,θ] K[θ,w3,w4]
        //       + (3/4) Σ_{γθ} K[w1,γ,w2] Ṽ[γ,θ] K[w3,θ,w4],   Ṽ = V_n⁻¹,
        // with V_n⁻¹ applied through the Cholesky factor.
        let mut m1 = DMatrix::zeros(d, d * d); // rows θ, cols (w3,w4) of K[θ,w3,w4]
        let mut m2 = DMatrix::zeros(d, d * d); // rows θ, cols (w3,w4) of K[w3,θ,w4]
        for theta in 0..d {
            for w3 in 0..d {
                for w4 in 0..d {
                    m1[(theta, w3 * d + w4)] = k_n.get(theta, w3, w4);
                    m2[(theta, w3 * d + w4)] = k_n.get(w3, theta, w4);
                }
            }
        }
        let x1 = chol.solve(&m1);
        let x2 = chol.solve(&m2);
        let mut l = Tensor4::zeros(d);
        for w1 in 0..d {
            for w2 in 0..d {
                for w3 in 0..d {
                    for w4 in 0..d {
                        let mut cross = 0.0;
                        for gamma in 0..d {
                            let kg = k_n.get(w1, gamma, w2);
                            cross += kg
                                * (1.5 * x1[(gamma, w3 * d + w4)]
                                    + 0.75 * x2[(gamma, w3 * d + w4)]);
                        }
                        l.set(
                            w1,
                            w2,
                            w3,
                            w4,
                            -t1.get(w1, w2, w3, w4) - t2.get(w1, w2, w3, w4) / 3.0 + cross,
                        );
                    }
                }
            }
        }
        Some(l)
    } else {
        None
    };

    Ok(ExpansionTerms {
        v_n,
        w_n,
        xi_n,
        k_n,
        l_n,
        n,
        h_n,
    })
}

/// Polynomial approximation of `n R_n(h)` of the requested order (2 or 3).
pub fn expansion_approx(terms: &ExpansionTerms, order: u32) -> Result<f64> {
    let nf = terms.n as f64;
    let xi = &terms.xi_n;
    let second = (xi.transpose() * &terms.v_n * xi)[(0, 0)];
    let third = terms.k_n.contract(xi, xi, xi) / nf.sqrt();
    match order {
        2 => Ok(second + third),
        3 => {
            let l = terms.l_n.as_ref().ok_or(Error::MissingL)?;
            Ok(second + third + l.contract4(xi) / nf)
        }
        _ => Err(Error::InvalidOptions(format!(
            "expansion order must be 2 or 3, got {order}"
        ))),
    }
}

/// The closed-form series `Δ²/4 - Δ³/(8 sqrt n) (+ 5Δ⁴/(64 n))` that the
/// quadratic moment function's expansion reduces to as `Δ_n/sqrt(n) -> 0`.
pub fn quadratic_expansion_series(delta_n: f64, n: usize, order: u32) -> f64 {
    let nf = n as f64;
    let mut v = delta_n.powi(2) / 4.0 - delta_n.powi(3) / (8.0 * nf.sqrt());
    if order >= 3 {
        v += 5.0 * delta_n.powi(4) / (64.0 * nf);
    }
    v
}

/// Signed-root moment diagnostics `μ₁`, `μ₃` and the leading second-moment
/// matrix `V^{-1/2} W V^{-1/2}`.
#[derive(Debug, Clone, Serialize)]
pub struct GammaMoments {
    pub mu1: DVector<f64>,
    pub mu3: Tensor3,
    pub m2: DMatrix<f64>,
}

/// Plug-in estimates of the signed-root moment constants.
///
/// With scores `g_i = V_n^{-1/2} h(X_i)`, fluctuation matrices
/// `B_i = V_n^{-1/2}(A_i - V_n)V_n^{-1/2}` (`A_i = Dh Σ Dhᵀ`), the dressed
/// cubic tensor
/// `M[ρ,σ,ℓ] = Σ K_n[β,γ,ω] (V^{-1/2})_{βρ}(V^{-1/2})_{γσ}(V^{-1/2})_{ωℓ}`
/// and `P = V_n^{-1/2} W_n V_n^{-1/2}`, the estimators are
///
/// ```text
/// u_ℓ       = mean_i (g_iᵀ B_i e_ℓ)
/// D[k,β,ℓ]  = mean_i g_{ik} B_i[β,ℓ]
/// μ₁_ℓ      = -u_ℓ/2 + <M_ℓ, P>/2
/// μ₃_{jkℓ}  = mean_i g_{ij} g_{ik} g_{iℓ}
///             - ½ Σ_slots { Σ_β (P_{jβ} D[k,β,ℓ] + P_{kβ} D[j,β,ℓ]) + P_{jk} u_ℓ }
///             + Σ_slots { <M_ℓ,P> P_{jk}/2 + (P (M_ℓ+M_ℓᵀ) P)_{jk}/2 },
/// ```
///
/// the slot sum symmetrizing over which index carries the `n^{-1/2}`
/// fluctuation. Population expectations are replaced by weighted sample
/// means; the mean-zero factors use centered cross-moments, so a constant
/// `A_i` contributes exactly zero.
pub fn compute_gamma_moments(
    terms: &ExpansionTerms,
    model: &MomentModel,
    cost: &CostModel,
    data: &DataSet,
) -> Result<GammaMoments> {
    let d = model.d();
    let v_inv_sqrt = sym_inv_sqrt(&terms.v_n)?;
    let p = &v_inv_sqrt * &terms.w_n * &v_inv_sqrt;

    // Dressed K: M[rho, sigma, l].
    let mhat = Tensor3::from_fn(d, |rho, sigma, l| {
        let mut acc = 0.0;
        for beta in 0..d {
            for gamma in 0..d {
                for omega in 0..d {
                    acc += terms.k_n.get(beta, gamma, omega)
                        * v_inv_sqrt[(beta, rho)]
                        * v_inv_sqrt[(gamma, sigma)]
                        * v_inv_sqrt[(omega, l)];
                }
            }
        }
        acc
    });

    let mut t = Tensor3::zeros(d);
    let mut dcross = Tensor3::zeros(d); // D[k, beta, l]
    let mut u = DVector::zeros(d);
    for i in 0..data.n() {
        let x = data.point(i);
        let w = data.weight(i);
        let g = &v_inv_sqrt * model.h(x);
        let jac = model.jac(x);
        let a = &jac * cost.sigma() * jac.transpose();
        let b = &v_inv_sqrt * (a - &terms.v_n) * &v_inv_sqrt;
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    t.add(j, k, l, w * g[j] * g[k] * g[l]);
                }
            }
        }
        for k in 0..d {
            for beta in 0..d {
                for l in 0..d {
                    dcross.add(k, beta, l, w * g[k] * b[(beta, l)]);
                }
            }
        }
        u += w * (b.transpose() * &g);
    }

    let mu1 = DVector::from_fn(d, |l, _| {
        let mut mp = 0.0;
        for rho in 0..d {
            for sigma in 0..d {
                mp += mhat.get(rho, sigma, l) * p[(rho, sigma)];
            }
        }
        -0.5 * u[l] + 0.5 * mp
    });

    // b-slot correction with the fluctuation in slot `l`:
    //   -½ [ Σ_β P_{jβ} D[k,β,ℓ] + Σ_β P_{kβ} D[j,β,ℓ] + P_{jk} u_ℓ ]
    // c-slot correction with the fluctuation in slot `l`:
    //   +½ <M_ℓ, P> P_{jk} + ½ (P (M_ℓ + M_ℓᵀ) P)_{jk}
    let mu3 = Tensor3::from_fn(d, |j, k, l| {
        let mut acc = t.get(j, k, l);
        for (s_l, s_j, s_k) in [(l, j, k), (j, k, l), (k, l, j)] {
            let mut bsum = p[(s_j, s_k)] * u[s_l];
            for beta in 0..d {
                bsum += p[(s_j, beta)] * dcross.get(s_k, beta, s_l)
                    + p[(s_k, beta)] * dcross.get(s_j, beta, s_l);
            }
            acc -= 0.5 * bsum;

            let mut mp = 0.0;
            let mut pmp = 0.0;
            for rho in 0..d {
                for sigma in 0..d {
                    let mv = mhat.get(rho, sigma, s_l);
                    mp += mv * p[(rho, sigma)];
                    pmp += p[(s_j, rho)] * mv * p[(sigma, s_k)]
                        + p[(s_j, sigma)] * mv * p[(rho, s_k)];
                }
            }
            acc += 0.5 * mp * p[(s_j, s_k)] + 0.5 * pmp;
        }
        acc
    });

    Ok(GammaMoments { mu1, mu3, m2: p })
}

/// Inverse principal square root of an SPD matrix.
pub(crate) fn sym_inv_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = mat.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::SingularVn {
            cond: f64::INFINITY,
        });
    }
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for i in 0..mat.nrows() {
        let q = eig.eigenvectors.column(i);
        out += (&q * q.transpose()) / eig.eigenvalues[i].sqrt();
    }
    Ok(out)
}

/// Principal square root of a symmetric PSD matrix.
pub(crate) fn sym_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = mat.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < 0.0 && min.abs() > 1e-12 * eig.eigenvalues.max().abs() {
        return Err(Error::SingularWn);
    }
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for i in 0..mat.nrows() {
        let q = eig.eigenvectors.column(i);
        out += (&q * q.transpose()) * eig.eigenvalues[i].max(0.0).sqrt();
    }
    Ok(out)
}
