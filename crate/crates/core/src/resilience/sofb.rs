//! Static output feedback certificate.
//!
//! For `ẋ = Āx + B̄u + D̄d`, `y = C̄x`, `u = -K̄y`, look for `P̄ ≻ 0` and `M` with
//!
//! ```text
//! K̄C̄ = R̄⁻¹(B̄ᵀP̄ + M)
//! ĀᵀP̄ + P̄Ā + Q̄ + γ⁻² P̄D̄D̄ᵀP̄ - P̄B̄R̄⁻¹B̄ᵀP̄ + MᵀR̄⁻¹M = 0
//! ```
//!
//! The first equation fixes `M = R̄K̄C̄ - B̄ᵀP̄`; the second is then solved
//! for symmetric `P̄` by Levenberg-Marquardt with an analytic Jacobian.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use super::observer::HinfGains;
use crate::error::{Error, Result};

pub const RESIDUAL_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 500;
const RANK_TOL: f64 = 1e-9;

/// System matrices and design data for the certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SofbProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: f64,
}

impl SofbProblem {
    /// The per-robot observer error system: `x = [ẽ; δ̃]`,
    /// `Ā = [A, -A; 0, 0]`, `B̄ = D̄ = I`, `C̄ = [I, 0]`, `K̄ = [F2; -F1]`.
    pub fn from_gains(gains: &HinfGains) -> Self {
        let a2 = gains.a();
        let mut a = DMatrix::zeros(4, 4);
        a.view_mut((0, 0), (2, 2)).copy_from(&a2);
        a.view_mut((0, 2), (2, 2)).copy_from(&(-a2));
        let mut c = DMatrix::zeros(2, 4);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        let mut k = DMatrix::zeros(4, 2);
        k.view_mut((0, 0), (2, 2)).copy_from(&gains.f2());
        k.view_mut((2, 0), (2, 2)).copy_from(&(-gains.f1()));
        let q = gains.q_bar();
        let r = gains.r_bar();
        Self {
            a,
            b: DMatrix::identity(4, 4),
            c,
            d: DMatrix::identity(4, 4),
            k,
            q: DMatrix::from_column_slice(4, 4, q.as_slice()),
            r: DMatrix::from_column_slice(4, 4, r.as_slice()),
            gamma: gains.gamma,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn r_inv(&self) -> Result<DMatrix<f64>> {
        self.r
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::invalid("observer.r_bar", "must be symmetric positive definite"))
    }

    /// `M = R̄K̄C̄ - B̄ᵀP̄`.
    pub fn m_from_p(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * &self.k * &self.c - self.b.transpose() * p
    }
}

/// Residual matrices of both conditions at `(P̄, M)`.
pub fn sofb_residual_matrices(
    prob: &SofbProblem,
    p: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r_inv = prob.r_inv()?;
    let gain = &prob.k * &prob.c - &r_inv * (prob.b.transpose() * p + m);
    let g2 = prob.gamma.powi(-2);
    let riccati = prob.a.transpose() * p + p * &prob.a + &prob.q
        + g2 * (p * &prob.d * prob.d.transpose() * p)
        - p * &prob.b * &r_inv * prob.b.transpose() * p
        + m.transpose() * &r_inv * m;
    Ok((gain, riccati))
}

/// Frobenius norms of both residuals at `(P̄, M)`.
pub fn sofb_residuals(prob: &SofbProblem, p: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let (g, r) = sofb_residual_matrices(prob, p, m)?;
    Ok((g.norm(), r.norm()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SofbCertificate {
    pub satisfied: bool,
    /// `‖K̄C̄ - R̄⁻¹(B̄ᵀP̄ + M)‖_F`.
    pub residual_gain: f64,
    /// Frobenius norm of the Riccati-type equality.
    pub residual_riccati: f64,
    pub p_bar: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub p_min_eig: f64,
    pub iterations: usize,
    /// `(Ā, B̄)` stabilizable.
    pub stabilizable: bool,
    /// `(Ā, √Q̄)` detectable.
    pub detectable_q: bool,
    /// `(Ā, C̄)` detectable.
    pub detectable_c: bool,
}

/// Certificate for the observer gains with the default iteration budget.
pub fn verify_sofb(gains: &HinfGains) -> Result<SofbCertificate> {
    gains.validate()?;
    solve(&SofbProblem::from_gains(gains), DEFAULT_MAX_ITERS)
}

fn sym_basis(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect()
}

/// Upper triangle with off-diagonals scaled by √2, so the vector norm is the
/// Frobenius norm of a symmetric matrix.
fn pack(mat: &DMatrix<f64>, basis: &[(usize, usize)]) -> DVector<f64> {
    let s = std::f64::consts::SQRT_2;
    DVector::from_iterator(
        basis.len(),
        basis
            .iter()
            .map(|&(a, b)| if a == b { mat[(a, a)] } else { s * 0.5 * (mat[(a, b)] + mat[(b, a)]) }),
    )
}

fn unit(n: usize, a: usize, b: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(a, b)] = 1.0;
    e[(b, a)] = 1.0;
    e
}

/// Levenberg-Marquardt on the Riccati residual over symmetric `P̄`, from `P̄ = I`.
pub fn solve(prob: &SofbProblem, max_iters: usize) -> Result<SofbCertificate> {
    let n = prob.state_dim();
    let r_inv = prob.r_inv()?;
    let basis = sym_basis(n);
    let g2 = prob.gamma.powi(-2);
    let ddt = &prob.d * prob.d.transpose();
    let bri = &prob.b * &r_inv * prob.b.transpose();

    let riccati = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        Ok(sofb_residual_matrices(prob, p, &prob.m_from_p(p))?.1)
    };
    // directional derivative of the Riccati residual along symmetric E
    let directional = |p: &DMatrix<f64>, m: &DMatrix<f64>, e: &DMatrix<f64>| {
        let dm = -(prob.b.transpose() * e);
        prob.a.transpose() * e + e * &prob.a + g2 * (e * &ddt * p + p * &ddt * e)
            - (e * &bri * p + p * &bri * e)
            + dm.transpose() * &r_inv * m
            + m.transpose() * &r_inv * dm
    };

    let mut p = DMatrix::<f64>::identity(n, n);
    let mut res = pack(&riccati(&p)?, &basis);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < max_iters {
        if res.norm() < 1e-14 {
            break;
        }
        iterations += 1;
        let m = prob.m_from_p(&p);
        let mut jac = DMatrix::zeros(basis.len(), basis.len());
        for (col, &(a, b)) in basis.iter().enumerate() {
            let e = unit(n, a, b);
            jac.set_column(col, &pack(&directional(&p, &m, &e), &basis));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for d in 0..lhs.nrows() {
                lhs[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial = p.clone();
            for (idx, &(a, b)) in basis.iter().enumerate() {
                trial[(a, b)] -= step[idx];
                if a != b {
                    trial[(b, a)] -= step[idx];
                }
            }
            let trial_res = pack(&riccati(&trial)?, &basis);
            if trial_res.norm() < res.norm() {
                p = trial;
                res = trial_res;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }

    let m = prob.m_from_p(&p);
    let (residual_gain, residual_riccati) = sofb_residuals(prob, &p, &m)?;
    let p_min_eig = crate::graph::min_symmetric_eigenvalue(&p)?;
    let sqrt_q = psd_sqrt(&prob.q)?;
    let stabilizable = pbh_full_rank(&prob.a.transpose(), &prob.b.transpose())?;
    let detectable_q = pbh_full_rank(&prob.a, &sqrt_q)?;
    let detectable_c = pbh_full_rank(&prob.a, &prob.c)?;
    Ok(SofbCertificate {
        satisfied: residual_gain < RESIDUAL_TOL && residual_riccati < RESIDUAL_TOL && p_min_eig > 0.0,
        residual_gain,
        residual_riccati,
        p_bar: p,
        m,
        p_min_eig,
        iterations,
        stabilizable,
        detectable_q,
        detectable_c,
    })
}

fn psd_sqrt(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (q + q.transpose());
    let eig = sym
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::EigenSolver { dim: q.nrows() })?;
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// PBH test: `[λI - A; C]` has full column rank for every eigenvalue `λ`
/// of `A` with `Re λ ≥ 0`. Detectability of `(A, C)`; stabilizability of
/// `(A, B)` is the same test on `(Aᵀ, Bᵀ)`.
pub fn pbh_full_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<bool> {
    let n = a.nrows();
    let eigs = a.clone().complex_eigenvalues();
    for lam in eigs.iter() {
        if lam.re < -RANK_TOL {
            continue;
        }
        let mut stacked = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for r in 0..n {
            for col in 0..n {
                let diag = if r == col { *lam } else { Complex::new(0.0, 0.0) };
                stacked[(r, col)] = diag - Complex::new(a[(r, col)], 0.0);
            }
        }
        for r in 0..c.nrows() {
            for col in 0..n {
                stacked[(n + r, col)] = Complex::new(c[(r, col)], 0.0);
            }
        }
        let sv = stacked.singular_values();
        let scale = sv.iter().cloned().fold(1.0, f64::max);
        if sv.iter().filter(|&&s| s > RANK_TOL * scale).count() < n {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Ā = -I`, `B̄ = C̄ = D̄ = R̄ = I`, `K̄ = 0`: then `M = -P̄` and the
    /// Riccati condition reads `Q̄ - 2P̄ + γ⁻²P̄² = 0`, solved by `P̄ = pI`
    /// for `Q̄ = (2p - γ⁻²p²) I`.
    fn satisfiable(p: f64, gamma: f64) -> SofbProblem {
        let n = 3;
        let q = 2.0 * p - p * p / (gamma * gamma);
        SofbProblem {
            a: -DMatrix::identity(n, n),
            b: DMatrix::identity(n, n),
            c: DMatrix::identity(n, n),
            d: DMatrix::identity(n, n),
            k: DMatrix::zeros(n, n),
            q: q * DMatrix::identity(n, n),
            r: DMatrix::identity(n, n),
            gamma,
        }
    }

    #[test]
    fn solves_constructed_instance() {
        let prob = satisfiable(3.0, 5.0);
        let cert = solve(&prob, DEFAULT_MAX_ITERS).unwrap();
        assert!(cert.satisfied, "{cert:?}");
        assert!((&cert.p_bar - DMatrix::<f64>::identity(3, 3) * 3.0).norm() < 1e-6);
        assert!(cert.stabilizable && cert.detectable_q && cert.detectable_c);
    }

    #[test]
    fn default_gains_are_not_certified() {
        // the δ̃ block of the Riccati equality reduces to Q22 + γ⁻²(P²)22 = 0
        let cert = verify_sofb(&HinfGains::default()).unwrap();
        assert!(!cert.satisfied);
        assert!(cert.residual_riccati > 1.0);
        assert!(cert.stabilizable && cert.detectable_q);
        assert!(!cert.detectable_c);
    }

    #[test]
    fn zero_gain_with_positive_q_is_unsatisfiable() {
        let mut prob = satisfiable(3.0, 5.0);
        prob.a = DMatrix::zeros(3, 3);
        prob.q = DMatrix::identity(3, 3);
        // residual is Q + γ⁻²P² ≻ 0 for every symmetric P
        let cert = solve(&prob, DEFAULT_MAX_ITERS).unwrap();
        assert!(!cert.satisfied);
        assert!(cert.residual_riccati >= 3f64.sqrt() - 1e-6);
    }

    #[test]
    fn reported_residuals_reproduce() {
        let cert = verify_sofb(&HinfGains::default()).unwrap();
        let prob = SofbProblem::from_gains(&HinfGains::default());
        let (g, r) = sofb_residuals(&prob, &cert.p_bar, &cert.m).unwrap();
        assert!((g - cert.residual_gain).abs() < 1e-10);
        assert!((r - cert.residual_riccati).abs() < 1e-10);
    }

    #[test]
    fn residual_nonincreasing_in_gamma() {
        let mut last = f64::INFINITY;
        for gamma in [0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1e4] {
            let cert = verify_sofb(&HinfGains {
                gamma,
                ..HinfGains::default()
            })
            .unwrap();
            assert!(cert.residual_riccati <= last + 1e-6, "γ = {gamma}");
            last = cert.residual_riccati;
        }
    }

    #[test]
    fn error_system_shape() {
        let prob = SofbProblem::from_gains(&HinfGains::default());
        // Ā - B̄K̄C̄ is the error dynamics matrix
        let closed = &prob.a - &prob.b * &prob.k * &prob.c;
        let ed = super::super::observer::error_dynamics_matrix(&HinfGains::default()).a_f1;
        assert!((closed - DMatrix::from_column_slice(4, 4, ed.as_slice())).norm() < 1e-15);
    }
}
