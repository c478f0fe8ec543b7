//! Sample-path simulation and empirical covariance estimation.
//!
//! [`simulate_path`] runs the state recursion `x(t+1) = A x(t) + B e(t)`,
//! `y(t) = C x(t) + D e(t)` with i.i.d. zero-mean Gaussian noise of
//! covariance `Q`, starting from the stationary state distribution.
//! [`empirical_covariances`] turns a recorded path back into a
//! [`CovarianceSequence`] with the biased `1/N` normalization, closing the
//! loop for data-driven analyses on simulated processes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{CovarianceSequence, StateSpaceModel};
use crate::options::Options;
use crate::scalar::{fr, Scalar};
use crate::solvers::{psd_sqrt, solve_lyapunov, sym_part};

/// Configuration of a simulation run.
///
/// `n_samples` rows are recorded after discarding `burn_in` steps. Paths
/// are deterministic given the seed; replication `r` of a study uses the
/// shifted seed from [`SimulationConfig::replication`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationConfig {
    /// Number of recorded samples (path length). Must be at least 1.
    pub n_samples: usize,
    /// Number of initial steps discarded before recording. The state
    /// starts in its stationary distribution, so 0 is a sound default.
    pub burn_in: usize,
    /// RNG seed; identical seeds give bit-identical paths.
    pub seed: u64,
    /// Number of replications a study intends to run (bookkeeping only;
    /// each call of [`simulate_path`] generates one path).
    pub n_replications: usize,
}

impl SimulationConfig {
    /// The configuration of replication `r`: same lengths, seed shifted
    /// to `seed + r` so replications draw independent streams.
    pub fn replication(&self, r: usize) -> SimulationConfig {
        SimulationConfig {
            seed: self.seed.wrapping_add(r as u64),
            ..*self
        }
    }
}

/// Simulates one output path of the model, returned as an
/// `n_samples x p` matrix with one sample per row.
///
/// The noise is i.i.d. `N(0, Q)`, drawn through the symmetric PSD square
/// root of `Q` (eigendecomposition with negative eigenvalues clipped at
/// zero, so semidefinite `Q` is fine). The initial state is drawn from
/// the stationary distribution `N(0, P)` with `P` solving
/// `P = A P A' + B Q B'`. The model is validated with the default exact
/// tolerances; Lyapunov failures propagate.
pub fn simulate_path<T: Scalar>(
    m: &StateSpaceModel<T>,
    cfg: &SimulationConfig,
) -> Result<DMatrix<T>> {
    if cfg.n_samples == 0 {
        return Err(Error::Validation(
            "n_samples must be at least 1".into(),
        ));
    }
    let defaults = Options::<T>::default();
    m.require_valid(defaults.tol_psd, defaults.tol_stab)?;

    let n = m.state_dim();
    let p = m.output_dim();
    let q = m.noise_dim();
    let noise_sqrt = psd_sqrt(m.q());
    let stationary = solve_lyapunov(
        m.a(),
        &(m.b() * m.q() * m.b().transpose()),
        defaults.tol_lyap,
    )?;
    let state_sqrt = psd_sqrt(&stationary);

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut draw = |len: usize| -> DVector<T> {
        DVector::from_fn(len, |_, _| fr(rng.sample::<f64, _>(StandardNormal)))
    };

    let mut x = &state_sqrt * draw(n);
    let mut out = DMatrix::zeros(cfg.n_samples, p);
    for t in 0..cfg.burn_in + cfg.n_samples {
        let e = &noise_sqrt * draw(q);
        if t >= cfg.burn_in {
            let y = m.c() * &x + m.d() * &e;
            out.row_mut(t - cfg.burn_in).copy_from(&y.transpose());
        }
        x = m.a() * x + m.b() * e;
    }
    Ok(out)
}

/// Estimates the covariance sequence of a recorded path (one sample per
/// row): `Lam_k = (1/N) sum_t y(t+k) y(t)'` over the available pairs,
/// with the biased `1/N` normalization for every lag so lag 0 stays
/// positive semidefinite. Requires `max_lag < n_samples`.
pub fn empirical_covariances<T: Scalar>(
    samples: &DMatrix<T>,
    max_lag: usize,
) -> Result<CovarianceSequence<T>> {
    let n = samples.nrows();
    let p = samples.ncols();
    if n == 0 {
        return Err(Error::Validation("the sample path is empty".into()));
    }
    if max_lag >= n {
        return Err(Error::Validation(format!(
            "max_lag must be below the sample count, got {max_lag} with {n} samples"
        )));
    }
    let inv_n: T = fr(1.0 / n as f64);
    let lam0 = sym_part(&(samples.transpose() * samples)) * inv_n;
    let mut lams = Vec::with_capacity(max_lag);
    for k in 1..=max_lag {
        let shifted = samples.view((k, 0), (n - k, p));
        let base = samples.view((0, 0), (n - k, p));
        lams.push(shifted.transpose() * base * inv_n);
    }
    CovarianceSequence::new(lam0, lams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::realization::markov_from_ss;
    use crate::solvers::max_abs;
    use nalgebra::dmatrix;

    fn white_noise2() -> StateSpaceModel<f64> {
        StateSpaceModel::new(
            dmatrix![0.0],
            DMatrix::zeros(1, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    fn ar1() -> StateSpaceModel<f64> {
        StateSpaceModel::new(
            dmatrix![0.5],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
            dmatrix![1.0],
        )
        .unwrap()
    }

    #[test]
    fn white_noise_sample_covariance_is_near_identity() {
        let n = 100_000usize;
        let cfg = SimulationConfig {
            n_samples: n,
            burn_in: 0,
            seed: 7,
            n_replications: 1,
        };
        let path = simulate_path(&white_noise2(), &cfg).unwrap();
        let seq = empirical_covariances(&path, 2).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        assert!(max_abs(&(seq.lam0() - DMatrix::identity(2, 2))) < bound);
        assert!(max_abs(seq.lam(1)) < bound);
        assert!(max_abs(seq.lam(2)) < bound);
    }

    #[test]
    fn zero_noise_gives_zero_path() {
        let m = StateSpaceModel::new(
            dmatrix![0.5],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
        )
        .unwrap();
        let cfg = SimulationConfig {
            n_samples: 50,
            burn_in: 5,
            seed: 1,
            n_replications: 1,
        };
        let path = simulate_path(&m, &cfg).unwrap();
        assert_eq!(path, DMatrix::zeros(50, 1));
    }

    #[test]
    fn paths_are_reproducible_and_seed_sensitive() {
        let m = ar1();
        let cfg = SimulationConfig {
            n_samples: 200,
            burn_in: 0,
            seed: 42,
            n_replications: 3,
        };
        let a = simulate_path(&m, &cfg).unwrap();
        let b = simulate_path(&m, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&m, &cfg.replication(1)).unwrap();
        assert_eq!(cfg.replication(1).seed, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn burn_in_shifts_the_recorded_window() {
        let m = ar1();
        let long = SimulationConfig {
            n_samples: 110,
            burn_in: 0,
            seed: 5,
            n_replications: 1,
        };
        let short = SimulationConfig {
            n_samples: 100,
            burn_in: 10,
            seed: 5,
            n_replications: 1,
        };
        let full = simulate_path(&m, &long).unwrap();
        let tail = simulate_path(&m, &short).unwrap();
        assert_eq!(full.view((10, 0), (100, 1)).into_owned(), tail);
    }

    #[test]
    fn empirical_covariances_track_the_exact_sequence() {
        let m = ar1();
        let n = 200_000usize;
        let cfg = SimulationConfig {
            n_samples: n,
            burn_in: 0,
            seed: 11,
            n_replications: 1,
        };
        let path = simulate_path(&m, &cfg).unwrap();
        let est = empirical_covariances(&path, 4).unwrap();
        let exact = markov_from_ss(&m, 4, 1e-12).unwrap();
        let bound = 5.0 * max_abs(exact.lam0()) / (n as f64).sqrt();
        for k in 0..=4 {
            assert!(
                max_abs(&(est.lam(k) - exact.lam(k))) < bound,
                "lag {k} off by more than {bound}"
            );
        }
    }

    #[test]
    fn empirical_covariances_validates_lag_budget() {
        let samples = DMatrix::<f64>::zeros(10, 2);
        let seq = empirical_covariances(&samples, 3).unwrap();
        assert_eq!(seq.max_lag(), 3);
        assert_eq!(seq.lam0(), &DMatrix::zeros(2, 2));
        assert!(matches!(
            empirical_covariances(&samples, 10),
            Err(Error::Validation(_))
        ));
    }
}
