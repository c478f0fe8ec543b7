//! Numerical building blocks: the discrete Lyapunov solver, the
//! covariance-form Riccati solver with its Kalman gain, Krylov
//! (controllability/observability) matrices and rank decisions, and the
//! observability staircase transform.
//!
//! All routines work on dense matrices over any [`Scalar`] and are written
//! for the small, well-conditioned systems this crate targets. Iterative
//! solvers take explicit tolerances and either converge or return a typed
//! error; nothing silently returns garbage.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{fr, to64, Scalar};

/// Largest absolute entry of a matrix (0 for an empty matrix).
pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| {
        let a = v.abs();
        if a > acc {
            a
        } else {
            acc
        }
    })
}

/// Symmetric part `(M + M^T) / 2`.
pub(crate) fn sym_part<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half: T = fr(0.5);
    (m + m.transpose()) * half
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub(crate) fn min_sym_eig<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    let eig = SymmetricEigen::new(sym_part(m));
    eig.eigenvalues
        .iter()
        .fold(T::max_value().expect("bounded scalar"), |acc, &v| {
            if v < acc {
                v
            } else {
                acc
            }
        })
}

/// Spectral radius of a square matrix (0 for an empty matrix).
pub fn spectral_radius<T: Scalar>(a: &DMatrix<T>) -> T {
    if a.nrows() == 0 {
        return T::zero();
    }
    a.complex_eigenvalues().iter().fold(T::zero(), |acc, z| {
        let m = (z.re * z.re + z.im * z.im).sqrt();
        if m > acc {
            m
        } else {
            acc
        }
    })
}

/// A factor `L` with `L L^T = M` for symmetric positive semidefinite `M`,
/// computed from a symmetric eigendecomposition with negative eigenvalues
/// (roundoff) clipped to zero.
pub(crate) fn psd_sqrt<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(sym_part(m));
    let mut l = eig.eigenvectors;
    for j in 0..n {
        let lam = eig.eigenvalues[j];
        let s = if lam > T::zero() { lam.sqrt() } else { T::zero() };
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    l
}

/// Singular value decomposition `M = U diag(s) V^T` with `s` sorted in
/// descending order. For a matrix with `r >= c`, `U` is `r x c` with
/// orthonormal columns and `V` is `c x c` orthogonal; for `r < c` the
/// roles swap (`U` square, `V` economy). The trailing columns of the
/// square factor span the (numerical) null side, which the staircase
/// transform relies on.
pub(crate) struct SvdFactors<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: Vec<T>,
    pub v: DMatrix<T>,
}

/// One-sided Jacobi SVD (Hestenes): repeatedly rotates column pairs of a
/// working copy until all columns are mutually orthogonal; the column
/// norms are then the singular values, the normalized columns the left
/// factor, and the accumulated rotations the right factor.
///
/// This is deliberately used instead of the bidiagonalization SVD for
/// every rank decision in the crate: plane rotations cannot mix singular
/// subspaces, so the factorization stays accurate on rank-deficient
/// matrices with clusters of near-zero singular values — exactly the
/// shape of a block Hankel matrix of a finite-order process, where a
/// bidiagonalization SVD has been observed to return orthogonal factors
/// that reconstruct the input with errors near 1e-4.
pub(crate) fn svd_jacobi<T: Scalar>(m: &DMatrix<T>) -> SvdFactors<T> {
    let (r, c) = m.shape();
    if r < c {
        let f = svd_jacobi(&m.transpose());
        return SvdFactors {
            u: f.v,
            s: f.s,
            v: f.u,
        };
    }
    let mut b = m.clone();
    let mut v = DMatrix::<T>::identity(c, c);
    let eps: T = fr(f64::EPSILON);
    let tol2 = eps * eps;
    // Cyclic sweeps; convergence for these sizes takes well under the cap.
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..c {
            for j in (i + 1)..c {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for k in 0..r {
                    let bi = b[(k, i)];
                    let bj = b[(k, j)];
                    alpha = alpha + bi * bi;
                    beta = beta + bj * bj;
                    gamma = gamma + bi * bj;
                }
                if alpha == T::zero() || beta == T::zero() || gamma * gamma <= tol2 * alpha * beta
                {
                    continue;
                }
                rotated = true;
                // Rotation angle zeroing the inner product: the stable
                // root of t^2 + 2 zeta t - 1 = 0.
                let zeta = (beta - alpha) / (fr::<T>(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = cs * t;
                for k in 0..r {
                    let bi = b[(k, i)];
                    let bj = b[(k, j)];
                    b[(k, i)] = cs * bi - sn * bj;
                    b[(k, j)] = sn * bi + cs * bj;
                }
                for k in 0..c {
                    let vi = v[(k, i)];
                    let vj = v[(k, j)];
                    v[(k, i)] = cs * vi - sn * vj;
                    v[(k, j)] = sn * vi + cs * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<T> = (0..c).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));
    let mut u = DMatrix::<T>::zeros(r, c);
    let mut v_sorted = DMatrix::<T>::zeros(c, c);
    let mut s = Vec::with_capacity(c);
    for (out, &idx) in order.iter().enumerate() {
        let sig = norms[idx];
        s.push(sig);
        v_sorted.column_mut(out).copy_from(&v.column(idx));
        if sig > T::zero() {
            for k in 0..r {
                u[(k, out)] = b[(k, idx)] / sig;
            }
        }
    }
    // Exactly-zero singular values leave zero columns in U; complete them
    // to an orthonormal set so the factor is usable as a basis.
    for out in 0..c {
        if s[out] > T::zero() {
            continue;
        }
        for cand in 0..r {
            let mut col = DMatrix::<T>::zeros(r, 1);
            col[(cand, 0)] = T::one();
            // Two rounds of Gram-Schmidt against the columns already placed.
            for _ in 0..2 {
                for prev in 0..c {
                    if prev == out || (s[prev] == T::zero() && prev > out) {
                        continue;
                    }
                    let proj = (u.column(prev).transpose() * col.column(0))[(0, 0)];
                    for k in 0..r {
                        col[(k, 0)] = col[(k, 0)] - u[(k, prev)] * proj;
                    }
                }
            }
            let nrm = col.column(0).norm();
            if nrm > fr(0.5) {
                let inv = T::one() / nrm;
                for k in 0..r {
                    u[(k, out)] = col[(k, 0)] * inv;
                }
                break;
            }
        }
    }
    SvdFactors { u, s, v: v_sorted }
}

/// Minimum-norm least-squares solution of `A X = B` via SVD, with singular
/// values below `tol_rel * sigma_max` treated as zero.
pub(crate) fn lsq<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, tol_rel: T) -> Result<DMatrix<T>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "least-squares shapes do not match: A has {} rows, B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let f = svd_jacobi(a);
    let smax = f.s.first().copied().unwrap_or(T::zero());
    let cut = tol_rel * smax;
    // X = V diag(1/s) U^T B over the singular values above the cut.
    let k = f.s.len();
    let utb = f.u.columns(0, k).transpose() * b;
    let mut x = DMatrix::<T>::zeros(a.ncols(), b.ncols());
    for (i, &sig) in f.s.iter().enumerate() {
        if sig <= cut || sig == T::zero() {
            continue;
        }
        let inv = T::one() / sig;
        for col in 0..b.ncols() {
            let w = utb[(i, col)] * inv;
            for row in 0..a.ncols() {
                x[(row, col)] = x[(row, col)] + f.v[(row, i)] * w;
            }
        }
    }
    Ok(x)
}

/// Margin used by the stationarity guard of [`solve_lyapunov`]: the
/// iteration refuses systems whose spectral radius is within 1e-10 of 1.
const STABILITY_LIMIT_MARGIN: f64 = 1e-10;

/// Solves the discrete Lyapunov equation `P = A P A^T + W` for Schur-stable
/// `A` and symmetric positive semidefinite `W` by doubling:
/// `P <- P + A_j P A_j^T`, `A_{j+1} = A_j^2`.
///
/// `W` is symmetrized and the equation solved in units of `|W|_max`, so the
/// stop rule — largest update entry at most `tol` — is relative to the
/// magnitude of `W`; the residual `|P - A P A^T - W|_max` of the returned
/// `P` is then well below `tol * |W|_max` (the tail of a quadratically
/// convergent series). Returns [`Error::NotStable`] if the spectral radius
/// of `A` reaches `1 - 1e-10`, and [`Error::NoConvergence`] if the update
/// plateaus above the tolerance (possible only on roundoff noise).
pub fn solve_lyapunov<T: Scalar>(a: &DMatrix<T>, w: &DMatrix<T>, tol: T) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::Dimension(format!(
            "W must be {}x{}, got {}x{}",
            n,
            n,
            w.nrows(),
            w.ncols()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let rho = spectral_radius(a);
    let limit = T::one() - fr(STABILITY_LIMIT_MARGIN);
    if rho >= limit {
        return Err(Error::NotStable {
            rho: to64(rho),
            limit: to64(limit),
        });
    }
    let w_scale = max_abs(w);
    if w_scale <= T::zero() {
        return Ok(DMatrix::zeros(n, n));
    }
    let mut p = sym_part(w) / w_scale;
    let mut ak = a.clone();
    // The spectral-radius exponent doubles every pass, so 60 passes cover
    // any stable system representable in floating point; hitting the cap
    // means the update plateaued on roundoff noise above the tolerance.
    const MAX_ITERS: usize = 60;
    for _ in 0..MAX_ITERS {
        let step = &ak * &p * ak.transpose();
        let inc = max_abs(&step);
        p += step;
        p = sym_part(&p);
        if inc <= tol {
            return Ok(p * w_scale);
        }
        ak = &ak * &ak;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERS,
        residual: to64(max_abs(&(&ak * &p * ak.transpose())) * w_scale),
    })
}

/// Controllability (Krylov) matrix `[B, AB, ..., A^{n-1} B]`.
pub fn ctrb<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let q = b.ncols();
    let mut out = DMatrix::zeros(n, n * q);
    let mut blk = b.clone();
    for j in 0..n {
        out.view_mut((0, j * q), (n, q)).copy_from(&blk);
        if j + 1 < n {
            blk = a * blk;
        }
    }
    out
}

/// Observability (Krylov) matrix `[C; CA; ...; CA^{n-1}]`.
pub fn obsv<T: Scalar>(a: &DMatrix<T>, c: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let p = c.nrows();
    let mut out = DMatrix::zeros(n * p, n);
    let mut blk = c.clone();
    for i in 0..n {
        out.view_mut((i * p, 0), (p, n)).copy_from(&blk);
        if i + 1 < n {
            blk = blk * a;
        }
    }
    out
}

/// Numerical rank: the number of singular values exceeding
/// `tol_rank_rel * sigma_max`. An all-zero (or empty) matrix has rank 0.
pub fn rank_tol<T: Scalar>(m: &DMatrix<T>, tol_rank_rel: T) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = svd_jacobi(m).s;
    let smax = sv.first().copied().unwrap_or(T::zero());
    if smax <= T::zero() {
        return 0;
    }
    let cut = tol_rank_rel * smax;
    sv.iter().filter(|&&v| v > cut).count()
}

/// Numerical rank of the controllability matrix of `(A, B)`.
pub fn ctrb_rank<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, tol_rank_rel: T) -> usize {
    rank_tol(&ctrb(a, b), tol_rank_rel)
}

/// Numerical rank of the observability matrix of `(C, A)`.
pub fn obsv_rank<T: Scalar>(c: &DMatrix<T>, a: &DMatrix<T>, tol_rank_rel: T) -> usize {
    rank_tol(&obsv(a, c), tol_rank_rel)
}

/// Result of the observability staircase transform.
#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseResult<T: Scalar> {
    /// Orthogonal change of basis (`z = T x`) that sorts unobservable
    /// coordinates first.
    pub t: DMatrix<T>,
    /// Dimension of the unobservable subspace.
    pub n_unobs: usize,
    /// Transformed transition matrix `T A T^T`; its lower-left
    /// `(n - n_unobs) x n_unobs` block is zero up to roundoff.
    pub a_t: DMatrix<T>,
    /// Transformed output matrix `C_sub T^T`; its first `n_unobs` columns
    /// are zero up to roundoff.
    pub c_t: DMatrix<T>,
}

/// Orthogonal staircase transform separating the part of the state that is
/// unobservable from the output rows `c_sub`.
///
/// The returned basis puts unobservable coordinates first, so `a_t` is
/// block upper triangular (`[[A11, A12], [0, A22]]`) and `c_t = [0, C2]`
/// with `(C2, A22)` observable. The rank decision uses the relative
/// singular-value cutoff `tol_rank_rel`. When everything is observable the
/// transform is the identity, leaving coordinates untouched.
pub fn observability_staircase<T: Scalar>(
    c_sub: &DMatrix<T>,
    a: &DMatrix<T>,
    tol_rank_rel: T,
) -> Result<StaircaseResult<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if c_sub.ncols() != n {
        return Err(Error::Dimension(format!(
            "C must have {} columns to match A, got {}",
            n,
            c_sub.ncols()
        )));
    }
    if n == 0 || c_sub.nrows() == 0 {
        // Nothing to observe: the whole state (possibly empty) is
        // unobservable and the basis is the identity.
        return Ok(StaircaseResult {
            t: DMatrix::identity(n, n),
            n_unobs: n,
            a_t: a.clone(),
            c_t: c_sub.clone(),
        });
    }
    let o = obsv(a, c_sub);
    let r = rank_tol(&o, tol_rank_rel);
    let n_unobs = n - r;
    if n_unobs == 0 {
        return Ok(StaircaseResult {
            t: DMatrix::identity(n, n),
            n_unobs: 0,
            a_t: a.clone(),
            c_t: c_sub.clone(),
        });
    }
    let f = svd_jacobi(&o);
    // The trailing n - r right singular vectors span the null space of
    // the observability matrix, i.e. the unobservable subspace.
    let vt = f.v.transpose();
    let mut t = DMatrix::zeros(n, n);
    t.view_mut((0, 0), (n_unobs, n))
        .copy_from(&vt.view((r, 0), (n_unobs, n)));
    t.view_mut((n_unobs, 0), (r, n))
        .copy_from(&vt.view((0, 0), (r, n)));
    let a_t = &t * a * t.transpose();
    let c_t = c_sub * t.transpose();
    Ok(StaircaseResult { t, n_unobs, a_t, c_t })
}

/// Solution of the covariance-form discrete algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution<T: Scalar> {
    /// Minimal positive-semidefinite solution `X` (the stationary state
    /// covariance of the Kalman state process).
    pub x: DMatrix<T>,
    /// Steady-state gain `K = (Cbar^T - A X C^T)(Lam0 - C X C^T)^{-1}`.
    pub gain: DMatrix<T>,
    /// Innovation covariance `Lam0 - C X C^T`.
    pub innov_cov: DMatrix<T>,
    /// Fixed-point residual `|X - f(X)|_max` of the returned solution.
    pub residual: T,
    /// Number of fixed-point iterations performed.
    pub iterations: usize,
}

/// Solves the covariance-form Riccati equation
///
/// ```text
/// X = A X A^T + (Cbar^T - A X C^T)(Lam0 - C X C^T)^{-1}(Cbar^T - A X C^T)^T
/// ```
///
/// for its minimal positive-semidefinite solution by fixed-point iteration
/// from `X_0 = 0`, which converges monotonically upward (in the
/// semidefinite order) to exactly that solution — the one whose `X` is the
/// stationary covariance of the Kalman state. The iteration stops when the
/// largest update entry falls below `tol * max(1, |X|_max)`; the reported
/// residual is then re-measured on the accepted iterate.
///
/// Returns [`Error::SingularInnovation`] when `Lam0 - C X C^T` loses
/// positive definiteness along the way (the output process is not
/// full rank) and [`Error::NoConvergence`] after `max_iters` sweeps.
pub fn solve_dare_minimal<T: Scalar>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    cbar: &DMatrix<T>,
    lam0: &DMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<DareSolution<T>> {
    dare_impl(a, c, cbar, lam0, tol, max_iters, &mut |_| {})
}

/// Like [`solve_dare_minimal`], but also returns the iterates
/// `X_1, X_2, ...` (including the accepted one), so callers can audit the
/// monotone convergence of the sweep.
pub fn solve_dare_iterates<T: Scalar>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    cbar: &DMatrix<T>,
    lam0: &DMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<(DareSolution<T>, Vec<DMatrix<T>>)> {
    let mut trace = Vec::new();
    let sol = dare_impl(a, c, cbar, lam0, tol, max_iters, &mut |x| {
        trace.push(x.clone())
    })?;
    Ok((sol, trace))
}

/// The steady-state Kalman gain for the covariance data `(A, C, Cbar,
/// Lam0)`, together with the Riccati solution that produced it:
/// `K = (Cbar^T - A X C^T)(Lam0 - C X C^T)^{-1}`.
pub fn kalman_gain<T: Scalar>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    cbar: &DMatrix<T>,
    lam0: &DMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<(DMatrix<T>, DareSolution<T>)> {
    let sol = solve_dare_minimal(a, c, cbar, lam0, tol, max_iters)?;
    Ok((sol.gain.clone(), sol))
}

fn dare_impl<T: Scalar>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    cbar: &DMatrix<T>,
    lam0: &DMatrix<T>,
    tol: T,
    max_iters: usize,
    on_iterate: &mut dyn FnMut(&DMatrix<T>),
) -> Result<DareSolution<T>> {
    let n = a.nrows();
    let p = c.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if c.ncols() != n {
        return Err(Error::Dimension(format!(
            "C must have {} columns to match A, got {}",
            n,
            c.ncols()
        )));
    }
    if cbar.nrows() != p || cbar.ncols() != n {
        return Err(Error::Dimension(format!(
            "Cbar must be {}x{} to match C, got {}x{}",
            p,
            n,
            cbar.nrows(),
            cbar.ncols()
        )));
    }
    if lam0.nrows() != p || lam0.ncols() != p {
        return Err(Error::Dimension(format!(
            "Lam0 must be {}x{}, got {}x{}",
            p,
            p,
            lam0.nrows(),
            lam0.ncols()
        )));
    }

    // One Riccati sweep: given X, return (X_next, K, R) with
    // R = Lam0 - C X C^T and K = (Cbar^T - A X C^T) R^{-1}.
    let step = |x: &DMatrix<T>| -> Result<(DMatrix<T>, DMatrix<T>, DMatrix<T>)> {
        let r = sym_part(&(lam0 - c * x * c.transpose()));
        let chol = Cholesky::new(r.clone()).ok_or_else(|| Error::SingularInnovation {
            min_eig: to64(min_sym_eig(&r)),
        })?;
        let g = cbar.transpose() - a * x * c.transpose();
        // K^T = R^{-1} G^T, so K = G R^{-1} without forming an inverse.
        let k = chol.solve(&g.transpose()).transpose();
        let x_next = sym_part(&(a * x * a.transpose() + &g * k.transpose()));
        Ok((x_next, k, r))
    };

    let mut x = DMatrix::<T>::zeros(n, n);
    for it in 1..=max_iters {
        let (x_next, _, _) = step(&x)?;
        let inc = max_abs(&(&x_next - &x));
        on_iterate(&x_next);
        x = x_next;
        let scale = {
            let m = max_abs(&x);
            if m > T::one() {
                m
            } else {
                T::one()
            }
        };
        if inc <= tol * scale {
            // Re-measure the fixed-point residual on the accepted iterate
            // and extract its gain and innovation covariance.
            let (x_check, k, r) = step(&x)?;
            let residual = max_abs(&(&x_check - &x));
            return Ok(DareSolution {
                x,
                gain: k,
                innov_cov: r,
                residual,
                iterations: it,
            });
        }
    }
    let (x_check, _, _) = step(&x)?;
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: to64(max_abs(&(&x_check - &x))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn lyapunov_scalar_closed_form() {
        // P = w / (1 - a^2) for scalars: 0.75 / 0.75 = 1.
        let p = solve_lyapunov(&dmatrix![0.5], &dmatrix![0.75], 1e-14).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_nilpotent_returns_w() {
        let w = DMatrix::<f64>::identity(2, 2);
        let p = solve_lyapunov(&DMatrix::zeros(2, 2), &w, 1e-14).unwrap();
        assert_abs_diff_eq!(max_abs(&(&p - &w)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_satisfies_equation() {
        let a = dmatrix![0.4, 0.3; -0.2, 0.5];
        let w = dmatrix![1.0, 0.1; 0.1, 2.0];
        let p = solve_lyapunov(&a, &w, 1e-14).unwrap();
        let resid = &p - &a * &p * a.transpose() - &w;
        assert!(max_abs(&resid) < 1e-12);
    }

    #[test]
    fn lyapunov_scales_small_data() {
        // The stop rule is relative to |W|, so tiny W still converges to
        // full relative accuracy.
        let a = dmatrix![0.9, 0.1; 0.0, 0.8];
        let w = dmatrix![1e-9, 0.0; 0.0, 2e-9];
        let p = solve_lyapunov(&a, &w, 1e-14).unwrap();
        let resid = &p - &a * &p * a.transpose() - &w;
        assert!(max_abs(&resid) < 1e-14 * max_abs(&w) * 10.0 + 1e-22);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let err = solve_lyapunov(&dmatrix![1.0], &dmatrix![1.0], 1e-14).unwrap_err();
        assert!(matches!(err, Error::NotStable { .. }));
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let c = 0.9 * (0.7f64).cos();
        let s = 0.9 * (0.7f64).sin();
        let a = dmatrix![c, -s; s, c];
        assert_abs_diff_eq!(spectral_radius(&a), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn krylov_matrices_have_expected_blocks() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0; 1.0];
        let cm = ctrb(&a, &b);
        assert_eq!(cm, dmatrix![0.0, 1.0; 1.0, 0.0]);
        let c = dmatrix![1.0, 0.0];
        let om = obsv(&a, &c);
        assert_eq!(om, dmatrix![1.0, 0.0; 0.0, 1.0]);
    }

    #[test]
    fn rank_tol_uses_relative_cutoff() {
        assert_eq!(rank_tol(&dmatrix![1.0, 0.0; 0.0, 1e-15], 1e-9), 1);
        assert_eq!(rank_tol(&DMatrix::<f64>::identity(3, 3), 1e-9), 3);
        assert_eq!(rank_tol(&DMatrix::<f64>::zeros(2, 2), 1e-9), 0);
    }

    #[test]
    fn rank_tol_is_orthogonally_invariant() {
        let m = dmatrix![1.0, 2.0; 0.5, 1.0; 0.0, 3.0];
        let theta: f64 = 0.3;
        let rot = dmatrix![theta.cos(), -theta.sin(); theta.sin(), theta.cos()];
        assert_eq!(rank_tol(&m, 1e-9), rank_tol(&(&m * &rot), 1e-9));
    }

    #[test]
    fn krylov_rank_helpers() {
        let a = dmatrix![0.5, 0.0; 0.0, 0.3];
        assert_eq!(ctrb_rank(&a, &dmatrix![1.0; 0.0], 1e-9), 1);
        assert_eq!(ctrb_rank(&a, &dmatrix![1.0; 1.0], 1e-9), 2);
        assert_eq!(obsv_rank(&dmatrix![1.0], &dmatrix![0.5], 1e-9), 1);
    }

    #[test]
    fn staircase_splits_diagonal_system() {
        // Only the first state is visible through C = [1, 0]; the second
        // coordinate is isolated as unobservable and ordered first.
        let a = dmatrix![0.5, 0.0; 0.0, 0.3];
        let c = dmatrix![1.0, 0.0];
        let st = observability_staircase(&c, &a, 1e-9).unwrap();
        assert_eq!(st.n_unobs, 1);
        let expect_a = dmatrix![0.3, 0.0; 0.0, 0.5];
        assert!(max_abs(&(&st.a_t - &expect_a)) < 1e-12);
        assert!(max_abs(&(&st.c_t - &dmatrix![0.0, 1.0])) < 1e-12);
        // T is orthogonal.
        let tt = &st.t * st.t.transpose();
        assert!(max_abs(&(&tt - &DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn staircase_is_identity_when_observable() {
        let a = dmatrix![0.5, 0.2; 0.1, 0.3];
        let c = DMatrix::<f64>::identity(2, 2);
        let st = observability_staircase(&c, &a, 1e-9).unwrap();
        assert_eq!(st.n_unobs, 0);
        assert_eq!(st.t, DMatrix::identity(2, 2));
        assert_eq!(st.a_t, a);
    }

    #[test]
    fn staircase_reconstructs_inputs() {
        let a = dmatrix![0.5, 0.1, 0.0; 0.2, 0.4, 0.0; 0.0, 0.0, 0.3];
        let c = dmatrix![1.0, 0.0, 0.0];
        let st = observability_staircase(&c, &a, 1e-9).unwrap();
        let a_back = st.t.transpose() * &st.a_t * &st.t;
        let c_back = &st.c_t * &st.t;
        assert!(max_abs(&(&a_back - &a)) < 1e-12);
        assert!(max_abs(&(&c_back - &c)) < 1e-12);
        // Zero pattern: lower-left block of a_t and leading columns of c_t.
        let r = 3 - st.n_unobs;
        let lower_left = st.a_t.view((st.n_unobs, 0), (r, st.n_unobs)).into_owned();
        assert!(max_abs(&lower_left) < 1e-10);
        let lead_cols = st.c_t.view((0, 0), (1, st.n_unobs)).into_owned();
        assert!(max_abs(&lead_cols) < 1e-10);
    }

    #[test]
    fn dare_scalar_closed_form() {
        // Generated by x+ = 0.5 x + 0.5 e, y = x + e, Qe = 0.75:
        // X = 0.25, K = 0.5, innovation covariance 0.75.
        let sol = solve_dare_minimal(
            &dmatrix![0.5],
            &dmatrix![1.0],
            &dmatrix![0.5],
            &dmatrix![1.0],
            1e-13,
            10_000,
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[(0, 0)], 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.gain[(0, 0)], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.innov_cov[(0, 0)], 0.75, epsilon = 1e-10);
        assert!(to64(sol.residual) < 1e-12);
    }

    #[test]
    fn dare_white_noise_solution_is_zero() {
        let sol = solve_dare_minimal(
            &dmatrix![0.0],
            &dmatrix![1.0],
            &dmatrix![0.0],
            &dmatrix![1.0],
            1e-13,
            10_000,
        )
        .unwrap();
        assert_eq!(sol.x[(0, 0)], 0.0);
        assert_eq!(sol.gain[(0, 0)], 0.0);
        assert_eq!(sol.innov_cov[(0, 0)], 1.0);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn dare_detects_singular_innovation() {
        // Lam0 - C X C^T is singular from the first sweep on.
        let err = solve_dare_minimal(
            &dmatrix![0.5],
            &dmatrix![1.0],
            &dmatrix![0.5],
            &dmatrix![0.0],
            1e-13,
            10_000,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularInnovation { .. }));
    }

    #[test]
    fn dare_iterates_are_monotone() {
        let a = dmatrix![0.6, 0.2; 0.0, 0.4];
        let c = dmatrix![1.0, 0.5];
        // Consistent covariance data built from a stochastic model:
        // P = lyap(A, B B^T), observed with unit measurement noise.
        let b = dmatrix![1.0, 0.0; 0.3, 0.8];
        let p = solve_lyapunov(&a, &(&b * b.transpose()), 1e-14).unwrap();
        let cbar = &c * &p * a.transpose();
        let lam0 = &c * &p * c.transpose() + DMatrix::identity(1, 1);
        let (sol, trace) = solve_dare_iterates(&a, &c, &cbar, &lam0, 1e-13, 10_000).unwrap();
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            let diff = &w[1] - &w[0];
            assert!(to64(min_sym_eig(&diff)) > -1e-12);
        }
        assert_eq!(trace.last().unwrap(), &sol.x);
        let (k, sol2) = kalman_gain(&a, &c, &cbar, &lam0, 1e-13, 10_000).unwrap();
        assert_eq!(k, sol2.gain);
        assert_eq!(sol2.x, sol.x);
    }

    #[test]
    fn psd_sqrt_factors_psd_matrices() {
        let m = dmatrix![4.0, 2.0; 2.0, 2.0];
        let l = psd_sqrt(&m);
        assert!(max_abs(&(&l * l.transpose() - &m)) < 1e-12);
        // Rank-deficient input: eigenvalue clipping keeps the factor real.
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        let l = psd_sqrt(&m);
        assert!(max_abs(&(&l * l.transpose() - &m)) < 1e-12);
    }

    #[test]
    fn lsq_solves_overdetermined_systems() {
        let a = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
        let x_true = dmatrix![2.0; -1.0];
        let b = &a * &x_true;
        let x = lsq(&a, &b, 1e-12).unwrap();
        assert!(max_abs(&(&x - &x_true)) < 1e-12);
    }
}
