//! Conversions between state-space models and output covariance sequences:
//! Markov-parameter computation, Hankel-SVD realization, and exact model
//! reduction.
//!
//! For a stationary model `x(t+1) = A x(t) + B e(t)`, `y(t) = C x(t) + D e(t)`
//! with state covariance `P = A P A^T + B Q B^T`, the output covariances
//! factor as
//!
//! ```text
//! Λ_0 = C P C^T + D Q D^T
//! Λ_k = C A^{k-1} Cbar^T,   Cbar = C P A^T + D Q B^T,   k >= 1
//! ```
//!
//! The triple `(A, C, Cbar)` together with `Λ_0` is a covariance
//! factorization of the process; [`ho_kalman`] recovers one from the
//! covariances alone through an SVD of the block Hankel matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{CovarianceSequence, StateSpaceModel};
use crate::scalar::{fr, to64, Scalar};
use crate::solvers::{
    ctrb, observability_staircase, rank_tol, solve_lyapunov, spectral_radius,
};

/// Covariance factorization `(A, C, Cbar, Λ_0)` of an output process:
/// `Λ_k = C A^{k-1} Cbar^T` for `k >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovFactorization<T: Scalar> {
    /// State transition matrix (`n x n`), Schur stable for a valid
    /// factorization.
    pub a: DMatrix<T>,
    /// Output map (`p x n`).
    pub c: DMatrix<T>,
    /// Backward output map (`p x n`); for a model-derived factorization
    /// `Cbar = C P A^T + D Q B^T`.
    pub cbar: DMatrix<T>,
    /// Lag-0 output covariance (`p x p`).
    pub lam0: DMatrix<T>,
    /// Singular values of the Hankel matrix that produced the
    /// factorization, largest first; empty when the factorization came
    /// from a model rather than from data.
    pub hankel_singular_values: Vec<f64>,
    /// Number of noise-floor state directions dropped below the rank
    /// cutoff to restore Schur stability of `A` (see [`ho_kalman`]);
    /// zero for clean data.
    pub dropped_for_stability: usize,
}

impl<T: Scalar> CovFactorization<T> {
    /// Builds a factorization, checking shape consistency.
    pub fn new(
        a: DMatrix<T>,
        c: DMatrix<T>,
        cbar: DMatrix<T>,
        lam0: DMatrix<T>,
    ) -> Result<Self> {
        let n = a.nrows();
        let p = c.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.ncols() != n || cbar.nrows() != p || cbar.ncols() != n {
            return Err(Error::Dimension(format!(
                "C and Cbar must be {}x{}, got {}x{} and {}x{}",
                p,
                n,
                c.nrows(),
                c.ncols(),
                cbar.nrows(),
                cbar.ncols()
            )));
        }
        if lam0.nrows() != p || lam0.ncols() != p || p == 0 {
            return Err(Error::Dimension(format!(
                "lam0 must be {}x{} and non-empty, got {}x{}",
                p,
                p,
                lam0.nrows(),
                lam0.ncols()
            )));
        }
        Ok(CovFactorization {
            a,
            c,
            cbar,
            lam0,
            hankel_singular_values: Vec::new(),
            dropped_for_stability: 0,
        })
    }

    /// State dimension of the factorization.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Output dimension of the factorization.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Covariance factorization of a model's output process: solves
/// `P = A P A^T + B Q B^T` and forms `Cbar = C P A^T + D Q B^T`,
/// `Λ_0 = C P C^T + D Q D^T`.
///
/// Errors are propagated from the Lyapunov solve (an unstable `A` cannot
/// define a stationary process).
pub fn ss_factorization<T: Scalar>(
    m: &StateSpaceModel<T>,
    tol_lyap: T,
) -> Result<CovFactorization<T>> {
    let w = m.b() * m.q() * m.b().transpose();
    let p = solve_lyapunov(m.a(), &w, tol_lyap)?;
    let cbar = m.c() * &p * m.a().transpose() + m.d() * m.q() * m.b().transpose();
    let lam0 = m.c() * &p * m.c().transpose() + m.d() * m.q() * m.d().transpose();
    CovFactorization::new(m.a().clone(), m.c().clone(), cbar, lam0)
}

/// Output covariances `Λ_0, ..., Λ_N` of a stationary model, computed
/// through [`ss_factorization`].
pub fn markov_from_ss<T: Scalar>(
    m: &StateSpaceModel<T>,
    n_lags: usize,
    tol_lyap: T,
) -> Result<CovarianceSequence<T>> {
    let f = ss_factorization(m, tol_lyap)?;
    markov_from_fact(&f, n_lags)
}

/// Output covariances `Λ_0, ..., Λ_N` generated by a covariance
/// factorization: `Λ_k = C A^{k-1} Cbar^T`.
pub fn markov_from_fact<T: Scalar>(
    f: &CovFactorization<T>,
    n_lags: usize,
) -> Result<CovarianceSequence<T>> {
    let mut lams = Vec::with_capacity(n_lags);
    // z starts as Cbar^T and picks up one factor of A per lag.
    let mut z = f.cbar.transpose();
    for _ in 0..n_lags {
        lams.push(&f.c * &z);
        z = &f.a * z;
    }
    // Λ_0 of a stationary process is symmetric by construction; loosen the
    // constructor's symmetry gate only for the tiny asymmetry a Lyapunov
    // solve can leave behind.
    CovarianceSequence::new_with_tol(f.lam0.clone(), lams, crate::scalar::fr(1e-8))
}

/// Recovers a covariance factorization from the lags `Λ_1, ..., Λ_{2M}` by
/// an SVD of the `M x M` block Hankel matrix (block `(i, j)` holds
/// `Λ_{i+j+1}`).
///
/// The state dimension is the numerical rank of the Hankel matrix under
/// `tol_rank_rel`; with `H_0 = U S V^T` truncated to that rank, the
/// factorization is
///
/// ```text
/// A = S^{-1/2} U^T H_1 V S^{-1/2}
/// C    = first p rows of U S^{1/2}
/// Cbar = first p rows of V S^{1/2}
/// ```
///
/// where `H_1` is the Hankel matrix shifted by one lag. Returns
/// [`Error::InsufficientLags`] when the sequence provides fewer than `2M`
/// lags and [`Error::UnstableRealization`] when the recovered `A` is not
/// Schur stable (inconsistent or too-noisy covariances).
///
/// When `A` comes out unstable and the smallest kept singular value lies
/// within a decade of the rank cutoff, the weakest state direction is
/// dropped and the recovery retried: a stationary sequence has no
/// unstable innovation realization, so a unit-circle crossing carried by
/// a direction at the noise floor is a sampling artifact, not dynamics.
/// The number of directions dropped this way is recorded in the result's
/// `dropped_for_stability`; instability carried by directions clearly
/// above the cutoff is still an error.
pub fn ho_kalman<T: Scalar>(
    seq: &CovarianceSequence<T>,
    m_blocks: usize,
    tol_rank_rel: T,
) -> Result<CovFactorization<T>> {
    ho_kalman_capped(seq, m_blocks, tol_rank_rel, None)
}

/// [`ho_kalman`] with an optional cap on the state dimension: the rank
/// decision proceeds as usual but at most `cap` directions are kept.
/// Callers use a cap to retry a realization at one order lower when the
/// uncapped result carries a noise-floor direction that breaks a
/// downstream structural requirement.
pub(crate) fn ho_kalman_capped<T: Scalar>(
    seq: &CovarianceSequence<T>,
    m_blocks: usize,
    tol_rank_rel: T,
    cap: Option<usize>,
) -> Result<CovFactorization<T>> {
    if m_blocks == 0 {
        return Err(Error::Validation(
            "Hankel block count M must be at least 1".into(),
        ));
    }
    if seq.max_lag() < 2 * m_blocks {
        return Err(Error::InsufficientLags {
            needed: 2 * m_blocks,
            got: seq.max_lag(),
        });
    }
    let p = seq.p();
    let mp = m_blocks * p;
    let mut h0 = DMatrix::<T>::zeros(mp, mp);
    let mut h1 = DMatrix::<T>::zeros(mp, mp);
    for i in 0..m_blocks {
        for j in 0..m_blocks {
            h0.view_mut((i * p, j * p), (p, p))
                .copy_from(seq.lam(i + j + 1));
            h1.view_mut((i * p, j * p), (p, p))
                .copy_from(seq.lam(i + j + 2));
        }
    }
    let f0 = svd_jacobi(&h0);
    let sv: Vec<f64> = f0.s.iter().map(|&v| to64(v)).collect();
    let n_cut = {
        let smax = f0.s.first().copied().unwrap_or(T::zero());
        let cut = tol_rank_rel * smax;
        let by_tol = f0.s.iter().filter(|&&v| v > cut).count();
        cap.map_or(by_tol, |c| by_tol.min(c))
    };

    // S^{1/2} and S^{-1/2} scalings of the factors at the full cut width;
    // a retry at a smaller degree just takes fewer columns.
    let mut us = f0.u.view((0, 0), (mp, n_cut)).into_owned(); // becomes U S^{1/2}
    let mut vs = f0.v.view((0, 0), (mp, n_cut)).into_owned(); // becomes V S^{1/2}
    let mut uw = us.clone(); // becomes U S^{-1/2}
    let mut vw = vs.clone(); // becomes V S^{-1/2}
    for j in 0..n_cut {
        let s = f0.s[j];
        let sq = s.sqrt();
        for i in 0..mp {
            us[(i, j)] *= sq;
            vs[(i, j)] *= sq;
            uw[(i, j)] /= sq;
            vw[(i, j)] /= sq;
        }
    }

    let droppable = fr::<T>(10.0) * tol_rank_rel * fr(sv.first().copied().unwrap_or(0.0));
    let mut n = n_cut;
    loop {
        let a = uw.view((0, 0), (mp, n)).transpose() * &h1 * vw.view((0, 0), (mp, n));
        let rho = spectral_radius(&a);
        if rho < T::one() {
            let c = us.view((0, 0), (p, n)).into_owned();
            let cbar = vs.view((0, 0), (p, n)).into_owned();
            let mut f = CovFactorization::new(a, c, cbar, seq.lam0().clone())?;
            f.hankel_singular_values = sv;
            f.dropped_for_stability = n_cut - n;
            return Ok(f);
        }
        if n == 0 || fr::<T>(sv[n - 1]) > droppable {
            return Err(Error::UnstableRealization { rho: to64(rho) });
        }
        n -= 1;
    }
}

/// Default Hankel block count for covariance-driven analysis on a
/// `p`-dimensional process with lags up to `max_lag`: `ceil(n_hint / p) + 2`
/// when a state-dimension hint is available, otherwise 5, in both cases
/// clamped to the `max_lag / 2` blocks the data can support (and to at
/// least 1).
pub fn default_hankel_blocks(p: usize, max_lag: usize, n_hint: Option<usize>) -> usize {
    let base = match n_hint {
        Some(n) => n.div_ceil(p) + 2,
        None => 5,
    };
    base.min(max_lag / 2).max(1)
}

/// Ratio `σ_n / σ_{n+1}` across the rank cut of a Hankel singular-value
/// list, or `None` when the cut is not ambiguous (full rank or zero).
/// Callers use it to warn when the state dimension decision is shaky.
pub(crate) fn rank_gap(sv: &[f64], n: usize) -> Option<f64> {
    if n == 0 || n >= sv.len() {
        return None;
    }
    let tail = sv[n];
    if tail <= 0.0 {
        return None;
    }
    Some(sv[n - 1] / tail)
}

/// Exact model reduction: removes state coordinates that are unreachable
/// from the noise input and then coordinates that are unobservable from
/// the output. Both cuts are exact — the reduced model generates the same
/// output process (identical covariances at every lag), not an
/// approximation of it. A model that is already minimal is returned with
/// its coordinates untouched.
pub fn minimize<T: Scalar>(
    m: &StateSpaceModel<T>,
    tol_rank_rel: T,
) -> Result<StateSpaceModel<T>> {
    let n = m.state_dim();
    // Reachability cut: project onto the column space of the
    // controllability matrix. The stationary state lives in that subspace,
    // so the projection is exact for the output process.
    let (a1, b1, c1) = {
        let cm = ctrb(m.a(), m.b());
        let r = rank_tol(&cm, tol_rank_rel);
        if r == n {
            (m.a().clone(), m.b().clone(), m.c().clone())
        } else {
            let f = svd_jacobi(&cm);
            let ur = f.u.view((0, 0), (n, r)).into_owned();
            (
                ur.transpose() * m.a() * &ur,
                ur.transpose() * m.b(),
                m.c() * &ur,
            )
        }
    };
    // Observability cut: staircase puts unobservable coordinates first;
    // they do not feed the observable block (its lower-left block is
    // zero), so dropping them leaves the output untouched.
    let st = observability_staircase(&c1, &a1, tol_rank_rel)?;
    let n1 = st.n_unobs;
    let r2 = a1.nrows() - n1;
    let (a2, b2, c2) = if n1 == 0 {
        (a1, b1, c1)
    } else {
        let tb = &st.t * &b1;
        (
            st.a_t.view((n1, n1), (r2, r2)).into_owned(),
            tb.view((n1, 0), (r2, b1.ncols())).into_owned(),
            st.c_t.view((0, n1), (c1.nrows(), r2)).into_owned(),
        )
    };
    StateSpaceModel::new(a2, b2, c2, m.d().clone(), m.q().clone())
}
