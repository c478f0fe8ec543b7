//! Shared helpers for the integration suites: fixture loading, random
//! system generation, and small reference implementations used as
//! independent oracles.

#![allow(dead_code)] // each suite pulls its own subset

use std::path::PathBuf;

use granger_kalman::io::{read_input, InputDoc};
use granger_kalman::solvers::{ctrb_rank, obsv_rank, spectral_radius};
use granger_kalman::{CovarianceSequence64, KalmanModel64, StateSpaceModel64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load_model(name: &str) -> StateSpaceModel64 {
    match read_input(&fixture_path(name)).expect("fixture parses") {
        InputDoc::Model(doc) => doc.to_model().expect("fixture is a valid model"),
        InputDoc::Covariances(_) => panic!("fixture {name} holds covariances, not a model"),
    }
}

pub fn load_covariances(name: &str) -> CovarianceSequence64 {
    match read_input(&fixture_path(name)).expect("fixture parses") {
        InputDoc::Covariances(doc) => doc.to_sequence().expect("fixture is a valid sequence"),
        InputDoc::Model(_) => panic!("fixture {name} holds a model, not covariances"),
    }
}

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b))
}

/// Worst entry difference between two covariance sequences over all lags.
pub fn seq_distance(a: &CovarianceSequence64, b: &CovarianceSequence64) -> f64 {
    let lags = a.max_lag().min(b.max_lag());
    let mut worst = max_abs_diff(a.lam0(), b.lam0());
    for k in 1..=lags {
        worst = worst.max(max_abs_diff(a.lam(k), b.lam(k)));
    }
    worst
}

/// Dense matrix with independent uniform entries in `[-1, 1]`.
pub fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random square matrix rescaled to a spectral radius drawn from
/// `[0.4, 0.85]`, so it is comfortably Schur stable.
pub fn random_stable(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
    loop {
        let m = random_matrix(rng, n, n);
        let rho = spectral_radius(&m);
        if rho > 1e-6 {
            let target = rng.random_range(0.4..0.85);
            return m * (target / rho);
        }
    }
}

/// Random symmetric positive-definite matrix `L L^T + 0.1 I`.
pub fn random_spd(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
    let l = random_matrix(rng, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Shrinks `K` geometrically until `A - K C` is Schur stable. Any stable
/// `A` admits such a gain (at `K = 0` the closed loop is `A` itself), so
/// this terminates; panics if it somehow does not within 60 halvings.
pub fn enforce_min_phase(a: &DMatrix<f64>, k: &mut DMatrix<f64>, c: &DMatrix<f64>) {
    for _ in 0..60 {
        if spectral_radius(&(a - &*k * c)) < 0.999 {
            return;
        }
        *k *= 0.5;
    }
    panic!("gain halving failed to reach a stable closed loop");
}

/// Random minimal innovation model with dense matrices: `n` states, `p`
/// outputs, identity innovation covariance, minimum phase by
/// construction. Regenerates until observability and reachability both
/// hold at full rank.
pub fn random_dense_kalman(rng: &mut ChaCha12Rng, n: usize, p: usize) -> KalmanModel64 {
    loop {
        let a = random_stable(rng, n);
        let c = random_matrix(rng, p, n);
        let mut k = random_matrix(rng, n, p) * 0.5;
        enforce_min_phase(&a, &mut k, &c);
        if obsv_rank(&c, &a, 1e-9) < n || ctrb_rank(&a, &k, 1e-9) < n {
            continue;
        }
        if let Ok(m) = KalmanModel64::new(a, k, c, DMatrix::identity(p, p)) {
            return m;
        }
    }
}

/// Random minimal innovation model in the two-block triangular pattern:
/// states and outputs split `n1|n2` and `p1|p2`, with the `(2,1)` blocks
/// of `A`, `K`, and `C` zero, so the first output block does not
/// Granger-cause the second. Minimum phase and minimality are enforced by
/// construction/retry.
pub fn random_triangular_kalman(
    rng: &mut ChaCha12Rng,
    n1: usize,
    n2: usize,
    p1: usize,
    p2: usize,
) -> KalmanModel64 {
    let (n, p) = (n1 + n2, p1 + p2);
    loop {
        let mut a = random_stable(rng, n);
        let mut c = random_matrix(rng, p, n);
        let mut k = random_matrix(rng, n, p) * 0.5;
        a.view_mut((n1, 0), (n2, n1)).fill(0.0);
        c.view_mut((p1, 0), (p2, n1)).fill(0.0);
        k.view_mut((n1, 0), (n2, p1)).fill(0.0);
        // Halve only the pattern-respecting blocks so the zeros survive.
        let mut tries = 0;
        while spectral_radius(&(&a - &k * &c)) >= 0.999 {
            k *= 0.5;
            tries += 1;
            assert!(tries < 60, "gain halving failed to reach a stable closed loop");
        }
        // The target subsystem must be minimum phase on its own for the
        // triangular representation to certify noncausality.
        let a22 = a.view((n1, n1), (n2, n2)).into_owned();
        let k22 = k.view((n1, p1), (n2, p2)).into_owned();
        let c22 = c.view((p1, n1), (p2, n2)).into_owned();
        if spectral_radius(&(&a22 - &k22 * &c22)) >= 0.999 {
            continue;
        }
        if obsv_rank(&c, &a, 1e-9) < n || ctrb_rank(&a, &k, 1e-9) < n {
            continue;
        }
        if let Ok(m) = KalmanModel64::new(a, k, c, DMatrix::identity(p, p)) {
            return m;
        }
    }
}

/// Random minimal innovation model in the three-block coordinated
/// pattern: two agents and a coordinator (last block), with all coupling
/// running from the coordinator into the agents. Block sizes are states
/// `ns = [na1, na2, nc]` and outputs `ps = [pa1, pa2, pc]`.
pub fn random_coordinated_kalman(rng: &mut ChaCha12Rng, ns: [usize; 3], ps: [usize; 3]) -> KalmanModel64 {
    let n: usize = ns.iter().sum();
    let p: usize = ps.iter().sum();
    let no: [usize; 3] = [0, ns[0], ns[0] + ns[1]];
    let po: [usize; 3] = [0, ps[0], ps[0] + ps[1]];
    loop {
        let mut a = random_stable(rng, n);
        let mut c = random_matrix(rng, p, n);
        let mut k = random_matrix(rng, n, p) * 0.5;
        // Zero everything outside the coordinated pattern: block (i,j) of
        // each matrix survives only for i == j or j == coordinator.
        for i in 0..3 {
            for j in 0..3 {
                if i == j || j == 2 {
                    continue;
                }
                a.view_mut((no[i], no[j]), (ns[i], ns[j])).fill(0.0);
                k.view_mut((no[i], po[j]), (ns[i], ps[j])).fill(0.0);
                c.view_mut((po[i], no[j]), (ps[i], ns[j])).fill(0.0);
            }
        }
        let mut tries = 0;
        while spectral_radius(&(&a - &k * &c)) >= 0.999 {
            k *= 0.5;
            tries += 1;
            assert!(tries < 60, "gain halving failed to reach a stable closed loop");
        }
        // Each [agent, coordinator] pair subsystem must be minimum phase
        // for the pairwise verdicts to certify the structure; the
        // coordinator's own subsystem likewise.
        let ac = a.view((no[2], no[2]), (ns[2], ns[2])).into_owned();
        let kc = k.view((no[2], po[2]), (ns[2], ps[2])).into_owned();
        let cc = c.view((po[2], no[2]), (ps[2], ns[2])).into_owned();
        if spectral_radius(&(&ac - &kc * &cc)) >= 0.999 {
            continue;
        }
        if obsv_rank(&c, &a, 1e-9) < n || ctrb_rank(&a, &k, 1e-9) < n {
            continue;
        }
        if let Ok(m) = KalmanModel64::new(a, k, c, DMatrix::identity(p, p)) {
            return m;
        }
    }
}

/// Direct Kronecker-product solution of the discrete Lyapunov equation
/// `X = A X A^T + W`: `vec(X) = (I - A (x) A)^{-1} vec(W)`. Cubic in
/// `n^2`, usable only for small systems — which is exactly what makes it
/// an independent check of the iterative solver.
pub fn lyapunov_by_kronecker(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let lhs = DMatrix::identity(n * n, n * n) - a.kronecker(a);
    let rhs = DMatrix::from_column_slice(n * n, 1, w.as_slice());
    let sol = lhs.lu().solve(&rhs).expect("I - A (x) A is invertible for stable A");
    DMatrix::from_column_slice(n, n, sol.as_slice())
}
