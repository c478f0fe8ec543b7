//! Numerical tolerances and iteration budgets used across the pipeline.

use crate::scalar::{fr, Scalar};

/// Tolerance for deciding that a matrix block is zero.
///
/// Exact-arithmetic inputs warrant an absolute test; covariances estimated
/// from finite samples need a tolerance relative to the magnitude of the
/// containing matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroTolerance<T: Scalar> {
    /// The block is zero when its max-abs entry is at most this value.
    Absolute(T),
    /// The block is zero when its max-abs entry is at most this value times
    /// the max-abs entry of the containing matrix.
    Relative(T),
}

impl<T: Scalar> ZeroTolerance<T> {
    /// Resolves the tolerance into a concrete threshold for a matrix whose
    /// max-abs entry is `scale`.
    pub fn threshold(&self, scale: T) -> T {
        match *self {
            ZeroTolerance::Absolute(t) => t,
            ZeroTolerance::Relative(t) => t * scale,
        }
    }

    /// The raw tolerance value, without scale resolution.
    pub fn value(&self) -> T {
        match *self {
            ZeroTolerance::Absolute(t) | ZeroTolerance::Relative(t) => t,
        }
    }

    /// Whether the tolerance scales with the containing matrix.
    pub fn is_relative(&self) -> bool {
        matches!(self, ZeroTolerance::Relative(_))
    }
}

/// Tolerances and budgets for the whole analysis pipeline.
///
/// [`Options::exact`] is tuned for inputs given in exact arithmetic (model
/// matrices, covariances computed from them); [`Options::empirical`] loosens
/// the structural tolerances for covariances estimated from sample paths.
/// Every field may be overridden after construction.
#[derive(Debug, Clone)]
pub struct Options<T: Scalar> {
    /// Positive-semidefiniteness slack: min eigenvalue >= -tol_psd.
    pub tol_psd: T,
    /// Stability margin for model validation: the spectral radius of `A`
    /// must stay below `1 - tol_stab`.
    pub tol_stab: T,
    /// Slack above one allowed for the spectral radius of a whitening
    /// filter `A - K C` in minimum-phase tests. Kept separate from
    /// `tol_stab` because the two margins move in opposite directions on
    /// estimated covariances: validation should stay strict while the
    /// minimum-phase boundary needs room for sampling noise.
    pub tol_min_phase: T,
    /// Allowed asymmetry, |M - M^T| entrywise, for symmetric inputs.
    pub tol_sym: T,
    /// Relative residual bound for the Lyapunov solver.
    pub tol_lyap: T,
    /// Absolute residual bound / stopping increment for the Riccati solver.
    pub tol_dare: T,
    /// Positive-definiteness margin: min eigenvalue must exceed tol_pd.
    pub tol_pd: T,
    /// Relative singular-value cutoff for numerical rank decisions.
    pub tol_rank_rel: T,
    /// Relative singular-value cutoff for the observable/unobservable
    /// split of the state space (the boundary between the two state
    /// blocks). Kept separate from `tol_rank_rel` because realizations
    /// built from noisy covariances carry estimation noise into the
    /// weakly observable directions at a level far above the Hankel
    /// noise floor, so the split needs a much coarser cut than the
    /// degree decision.
    pub tol_split_rel: T,
    /// Zero test for structural blocks (the causality verdicts).
    pub tol_zero: ZeroTolerance<T>,
    /// Bound on the intertwining residual allowed when aligning state
    /// bases, relative to the scale of the matrices compared.
    pub tol_sim: T,
    /// Tolerance for covariance-factorization fidelity checks.
    pub tol_fact: ZeroTolerance<T>,
    /// Iteration budget for the Riccati fixed point.
    pub max_dare_iters: usize,
    /// Number of Hankel block rows/columns for covariance-driven analysis;
    /// `None` selects a heuristic default (see
    /// [`crate::realization::default_hankel_blocks`]).
    pub hankel_blocks: Option<usize>,
}

impl<T: Scalar> Options<T> {
    /// Defaults for exact-arithmetic inputs.
    pub fn exact() -> Self {
        Options {
            tol_psd: fr(1e-10),
            tol_stab: fr(1e-10),
            tol_min_phase: fr(1e-10),
            tol_sym: fr(1e-10),
            tol_lyap: fr(1e-12),
            tol_dare: fr(1e-11),
            tol_pd: fr(1e-10),
            tol_rank_rel: fr(1e-9),
            tol_split_rel: fr(1e-9),
            tol_zero: ZeroTolerance::Absolute(fr(1e-8)),
            tol_sim: fr(1e-8),
            tol_fact: ZeroTolerance::Absolute(fr(1e-8)),
            max_dare_iters: 100_000,
            hankel_blocks: None,
        }
    }

    /// Defaults for covariances estimated from finite sample paths.
    ///
    /// Calibrated on ten independent 1e6-sample runs of the worked
    /// five-state examples:
    ///
    /// * `tol_rank_rel = 1.5e-4` — their fifth (smallest true) Hankel
    ///   singular value lands at 2.1e-4..2.8e-4 of the largest while the
    ///   sampling floor (the sixth value) stays at or below 1.2e-4; the
    ///   cutoff is the geometric midpoint of the worst observed pair.
    ///   Substantially shorter sample paths push the smallest true
    ///   singular values into the floor and no cutoff can recover them.
    /// * `tol_split_rel = 3e-2` — estimation noise enters the realization
    ///   amplified in its weakly observable directions, so observability
    ///   ratios that are exact zeros land near 1e-3..1e-2 under noise
    ///   while genuinely observable directions stay above ~0.3. The
    ///   split needs this much coarser cut than the degree decision.
    /// * `tol_zero = Relative(2.5e-1)` — the `A` and `C` invariance
    ///   blocks of the constructed representation vanish identically in
    ///   exact arithmetic whatever the causality structure, so under
    ///   noise their residuals (observed up to 0.16 of the matrix scale)
    ///   carry no verdict information; the discriminating gain block
    ///   sits below 0.07 of scale without causal coupling and above 0.6
    ///   with it. The threshold clears the noise on the first pair while
    ///   keeping a better than 3x margin on the gain both ways.
    /// * `tol_sim = 1.0` — the state-basis alignment residual inherits
    ///   the relative error of the smallest-scale subsystem matrices
    ///   (output rows whose size reflects signal-to-noise, not sample
    ///   count), observed up to ~0.6 on healthy structure; the gate only
    ///   rejects bases that share no structure at all (residual near the
    ///   theoretical ceiling of 2), since structure violations are caught
    ///   earlier by the pairwise verdicts.
    /// * `tol_min_phase = 2.5e-2` — realizations of estimated covariances
    ///   drag weakly identified state directions along near the unit
    ///   circle, so the whitening-filter radius of a perfectly healthy
    ///   subsystem can land marginally above one (observed up to 1.003);
    ///   a radius within a few percent of one is indistinguishable from
    ///   stable at this noise level, while genuinely explosive filters
    ///   sit well beyond the margin.
    pub fn empirical() -> Self {
        Options {
            tol_min_phase: fr(2.5e-2),
            tol_rank_rel: fr(1.5e-4),
            tol_split_rel: fr(3e-2),
            tol_zero: ZeroTolerance::Relative(fr(2.5e-1)),
            tol_fact: ZeroTolerance::Relative(fr(5e-2)),
            tol_sim: fr(1.0),
            ..Self::exact()
        }
    }
}

impl<T: Scalar> Default for Options<T> {
    fn default() -> Self {
        Self::exact()
    }
}
