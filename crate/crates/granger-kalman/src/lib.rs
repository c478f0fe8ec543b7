//! Granger-causality analysis of vector stochastic processes through
//! structured state-space representations.
//!
//! The library decides whether one group of outputs of a stationary
//! Gaussian process helps predict another by constructing a minimal
//! innovation (Kalman) representation in a basis where the answer is
//! visible as a block-sparsity pattern:
//!
//! * [`algorithm1`](granger::algorithm1) / [`algorithm2`](granger::algorithm2)
//!   build a block-triangular innovation model from a state-space model or
//!   from output covariances and report whether the source block carries
//!   information about the target block.
//! * [`algorithm3`](coordinated::algorithm3) / [`algorithm4`](coordinated::algorithm4)
//!   extend this to many agents around a shared coordinator and assemble a
//!   coordinated model whose off-diagonal coupling runs only through the
//!   coordinator block.
//! * [`barnett_seth`](granger::barnett_seth) provides an independent
//!   moving-average test of the same property, used to cross-check the
//!   structural route.
//!
//! Supporting layers: Lyapunov / Riccati solvers and staircase rank tests
//! ([`solvers`]), covariance factorization and minimal realization
//! ([`realization`]), simulation and empirical covariance estimation
//! ([`simulate`]), and JSON/CSV interchange ([`io`]).
//!
//! Everything numeric is generic over the [`Scalar`] floating type;
//! `*64` aliases fix `f64` for the common case.
//!
//! # Example
//!
//! ```
//! use granger_kalman::{check_noncausality, AnalysisInput, Options, StateSpaceModel64};
//! use nalgebra::dmatrix;
//!
//! // VAR(1) process: the second output feeds the first, not conversely.
//! let model = StateSpaceModel64::new(
//!     dmatrix![0.5, 0.2; 0.0, 0.4],
//!     dmatrix![1.0, 0.0; 0.0, 1.0],
//!     dmatrix![1.0, 0.0; 0.0, 1.0],
//!     dmatrix![0.0, 0.0; 0.0, 0.0],
//!     dmatrix![1.0, 0.0; 0.0, 1.0],
//! )?;
//!
//! // Does output 1 carry information about the future of output 2?
//! let report = check_noncausality(
//!     AnalysisInput::Model(&model),
//!     &[0],
//!     &[1],
//!     &Options::default(),
//! )?;
//! assert!(report.verdict, "output 1 should not Granger-cause output 2");
//!
//! // The reverse direction is causal.
//! let report = check_noncausality(
//!     AnalysisInput::Model(&model),
//!     &[1],
//!     &[0],
//!     &Options::default(),
//! )?;
//! assert!(!report.verdict, "output 2 should Granger-cause output 1");
//! # Ok::<(), granger_kalman::Error>(())
//! ```

pub mod coordinated;
pub mod error;
pub mod granger;
pub mod io;
pub mod model;
pub mod options;
pub mod realization;
pub mod scalar;
pub mod simulate;
pub mod solvers;

pub use crate::coordinated::{
    algorithm3, algorithm4, check_conditional_structure, is_coordinated, minimality,
    verify_theorem3_properties, CoordinatedModel,
};
pub use crate::error::{Error, Result};
pub use crate::granger::{
    algorithm1, algorithm2, barnett_seth, check_noncausality, AnalysisInput, BlockTriangularResult,
};
pub use crate::model::{
    CovarianceSequence, DerivedModel, KalmanModel, Partition, PropertyCheck, StateSpaceModel,
    StructureReport, ToleranceRecord, Violation,
};
pub use crate::options::{Options, ZeroTolerance};
pub use crate::realization::{
    default_hankel_blocks, ho_kalman, markov_from_fact, markov_from_ss, minimize, ss_factorization,
    CovFactorization,
};
pub use crate::scalar::Scalar;
pub use crate::simulate::{empirical_covariances, simulate_path, SimulationConfig};
pub use crate::solvers::{
    ctrb, ctrb_rank, kalman_gain, observability_staircase, obsv, obsv_rank, rank_tol,
    solve_dare_iterates, solve_dare_minimal, solve_lyapunov, spectral_radius, DareSolution,
    StaircaseResult,
};

/// [`StateSpaceModel`] over `f64`.
pub type StateSpaceModel64 = StateSpaceModel<f64>;
/// [`KalmanModel`] over `f64`.
pub type KalmanModel64 = KalmanModel<f64>;
/// [`CovarianceSequence`] over `f64`.
pub type CovarianceSequence64 = CovarianceSequence<f64>;
/// [`StructureReport`] over `f64`.
pub type StructureReport64 = StructureReport<f64>;
/// [`BlockTriangularResult`] over `f64`.
pub type BlockTriangularResult64 = BlockTriangularResult<f64>;
/// [`CoordinatedModel`] over `f64`.
pub type CoordinatedModel64 = CoordinatedModel<f64>;
/// [`Options`] over `f64`.
pub type Options64 = Options<f64>;
/// [`ZeroTolerance`] over `f64`.
pub type ZeroTolerance64 = ZeroTolerance<f64>;
