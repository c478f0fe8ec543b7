//! Core data types: state-space models, innovation (Kalman) models, output
//! partitions, covariance sequences, and structure reports.
//!
//! A stochastic linear state-space model is the pair of difference equations
//!
//! ```text
//! x(t+1) = A x(t) + B e(t)
//! y(t)   = C x(t) + D e(t)
//! ```
//!
//! driven by zero-mean white noise `e` with covariance `Q`. An innovation
//! (Kalman) model is the special case in which the driving noise is the
//! one-step prediction error of the output itself,
//!
//! ```text
//! x(t+1) = A x(t) + K e(t)
//! y(t)   = C x(t) + e(t)
//! ```
//!
//! with innovation covariance `Qe` and an identity feedthrough. All matrices
//! are stored dense; the systems this crate targets are small.
//!
//! Construction of every type checks shape consistency and returns a typed
//! error on mismatch. Value-level invariants (stability, definiteness,
//! symmetry) are soft: they are reported by the `validate` methods as a list
//! of violations so that invalid values can still be built, inspected, and
//! diagnosed. Analysis entry points enforce validity and refuse invalid
//! inputs with [`Error::Validation`].

use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::options::Options;
use crate::scalar::{to64, Scalar};
use crate::solvers;

/// One violated invariant, named together with the offending quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Name of the invariant that failed, e.g. `"spectral radius < 1"`.
    pub invariant: String,
    /// Human-readable description of the offending quantity.
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

fn violations_to_error(what: &str, violations: &[Violation]) -> Error {
    let list = violations
        .iter()
        .map(Violation::to_string)
        .collect::<Vec<_>>()
        .join("; ");
    Error::Validation(format!("{what}: {list}"))
}

fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| to64(*v).is_finite())
}

/// General linear stochastic state-space model `(A, B, C, D)` with noise
/// covariance `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    d: DMatrix<T>,
    q: DMatrix<T>,
}

impl<T: Scalar> StateSpaceModel<T> {
    /// Builds a model from its matrices, checking shape consistency:
    /// `A` must be `n x n`, `B` `n x q`, `C` `p x n`, `D` `p x q`, and `Q`
    /// `q x q`, with `p >= 1` and `q >= 1` (`n = 0` is legal and represents
    /// a static, white-noise-only model).
    pub fn new(
        a: DMatrix<T>,
        b: DMatrix<T>,
        c: DMatrix<T>,
        d: DMatrix<T>,
        q: DMatrix<T>,
    ) -> Result<Self> {
        let n = a.nrows();
        let p = c.nrows();
        let nq = b.ncols();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B must have {} rows to match A, got {}",
                n,
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C must have {} columns to match A, got {}",
                n,
                c.ncols()
            )));
        }
        if d.nrows() != p || d.ncols() != nq {
            return Err(Error::Dimension(format!(
                "D must be {}x{} to match C and B, got {}x{}",
                p,
                nq,
                d.nrows(),
                d.ncols()
            )));
        }
        if q.nrows() != nq || q.ncols() != nq {
            return Err(Error::Dimension(format!(
                "Q must be {}x{} to match B, got {}x{}",
                nq,
                nq,
                q.nrows(),
                q.ncols()
            )));
        }
        if p == 0 {
            return Err(Error::Dimension("output dimension p must be >= 1".into()));
        }
        if nq == 0 {
            return Err(Error::Dimension("noise dimension q must be >= 1".into()));
        }
        Ok(StateSpaceModel { a, b, c, d, q })
    }

    /// State transition matrix `A` (`n x n`).
    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    /// Noise input matrix `B` (`n x q`).
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    /// Output matrix `C` (`p x n`).
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    /// Feedthrough matrix `D` (`p x q`).
    pub fn d(&self) -> &DMatrix<T> {
        &self.d
    }

    /// Noise covariance `Q` (`q x q`).
    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Output dimension `p`.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Noise dimension `q`.
    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Checks the value-level invariants and returns every violation found:
    /// all entries finite, `Q` symmetric positive semidefinite (min
    /// eigenvalue >= `-tol_psd`), and `A` Schur stable (spectral radius
    /// < `1 - tol_stab`). An empty list means the model is valid. The check
    /// is pure: repeated calls give identical results.
    pub fn validate(&self, tol_psd: T, tol_stab: T) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, m) in [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
            ("Q", &self.q),
        ] {
            if !all_finite(m) {
                out.push(Violation {
                    invariant: "entries finite".into(),
                    detail: format!("{name} contains a non-finite entry"),
                });
            }
        }
        if !out.is_empty() {
            // Eigenvalue routines are not meaningful on non-finite data.
            return out;
        }
        let asym = solvers::max_abs(&(self.q.clone() - self.q.transpose()));
        if asym > tol_psd {
            out.push(Violation {
                invariant: "Q symmetric".into(),
                detail: format!("max |Q - Q^T| = {:.3e}", to64(asym)),
            });
        }
        let min_eig = solvers::min_sym_eig(&self.q);
        if min_eig < -tol_psd {
            out.push(Violation {
                invariant: "Q positive semidefinite".into(),
                detail: format!("min eigenvalue = {:.3e}", to64(min_eig)),
            });
        }
        let rho = solvers::spectral_radius(&self.a);
        if rho >= T::one() - tol_stab {
            out.push(Violation {
                invariant: "spectral radius < 1".into(),
                detail: format!("spectral radius of A = {}", to64(rho)),
            });
        }
        out
    }

    /// Errors with [`Error::Validation`] listing every violation unless the
    /// model is valid.
    pub fn require_valid(&self, tol_psd: T, tol_stab: T) -> Result<()> {
        let violations = self.validate(tol_psd, tol_stab);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations_to_error("state-space model", &violations))
        }
    }

    /// Returns the same model with its output coordinates reordered by
    /// `order` (row selection on `C` and `D`); `order` must be a permutation
    /// of `0..p`.
    pub fn reorder_outputs(&self, order: &[usize]) -> Result<Self> {
        let p = self.output_dim();
        check_selection(order, p, true)?;
        StateSpaceModel::new(
            self.a.clone(),
            self.b.clone(),
            self.c.select_rows(order.iter()),
            self.d.select_rows(order.iter()),
            self.q.clone(),
        )
    }

    /// Restricts the model to the output coordinates in `select` (kept in
    /// the given order); indices must be distinct and in range, but need not
    /// cover all outputs.
    pub fn select_outputs(&self, select: &[usize]) -> Result<Self> {
        let p = self.output_dim();
        check_selection(select, p, false)?;
        StateSpaceModel::new(
            self.a.clone(),
            self.b.clone(),
            self.c.select_rows(select.iter()),
            self.d.select_rows(select.iter()),
            self.q.clone(),
        )
    }
}

/// Innovation-form (Kalman) model `(A, K, C)` with innovation covariance
/// `Qe`; the feedthrough is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel<T: Scalar> {
    a: DMatrix<T>,
    k: DMatrix<T>,
    c: DMatrix<T>,
    qe: DMatrix<T>,
}

impl<T: Scalar> KalmanModel<T> {
    /// Builds an innovation model, checking shapes: `A` is `n x n`, `K`
    /// `n x p`, `C` `p x n`, `Qe` `p x p`, with `p >= 1`.
    pub fn new(a: DMatrix<T>, k: DMatrix<T>, c: DMatrix<T>, qe: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        let p = c.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if k.nrows() != n || k.ncols() != p {
            return Err(Error::Dimension(format!(
                "K must be {}x{}, got {}x{}",
                n,
                p,
                k.nrows(),
                k.ncols()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C must have {} columns to match A, got {}",
                n,
                c.ncols()
            )));
        }
        if qe.nrows() != p || qe.ncols() != p {
            return Err(Error::Dimension(format!(
                "Qe must be {}x{}, got {}x{}",
                p,
                p,
                qe.nrows(),
                qe.ncols()
            )));
        }
        if p == 0 {
            return Err(Error::Dimension("output dimension p must be >= 1".into()));
        }
        Ok(KalmanModel { a, k, c, qe })
    }

    /// State transition matrix `A` (`n x n`).
    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    /// Steady-state gain `K` (`n x p`).
    pub fn k(&self) -> &DMatrix<T> {
        &self.k
    }

    /// Output matrix `C` (`p x n`).
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    /// Innovation covariance `Qe` (`p x p`).
    pub fn qe(&self) -> &DMatrix<T> {
        &self.qe
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Output dimension `p`.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// The transition matrix `A - K C` of the inverse (whitening) system.
    pub fn closed_loop(&self) -> DMatrix<T> {
        &self.a - &self.k * &self.c
    }

    /// Reinterprets the innovation model as a general state-space model
    /// `(A, B=K, C, D=I, Q=Qe)`.
    pub fn to_state_space(&self) -> StateSpaceModel<T> {
        let p = self.output_dim();
        StateSpaceModel::new(
            self.a.clone(),
            self.k.clone(),
            self.c.clone(),
            DMatrix::identity(p, p),
            self.qe.clone(),
        )
        .expect("innovation-form shapes are consistent by construction")
    }

    /// Checks the value-level invariants and returns every violation found:
    /// entries finite, `A` Schur stable, and `Qe` symmetric positive
    /// definite (min eigenvalue > `tol_pd`).
    pub fn validate(&self, tol_pd: T, tol_stab: T) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, m) in [("A", &self.a), ("K", &self.k), ("C", &self.c), ("Qe", &self.qe)] {
            if !all_finite(m) {
                out.push(Violation {
                    invariant: "entries finite".into(),
                    detail: format!("{name} contains a non-finite entry"),
                });
            }
        }
        if !out.is_empty() {
            return out;
        }
        let asym = solvers::max_abs(&(self.qe.clone() - self.qe.transpose()));
        if asym > tol_pd {
            out.push(Violation {
                invariant: "Qe symmetric".into(),
                detail: format!("max |Qe - Qe^T| = {:.3e}", to64(asym)),
            });
        }
        let min_eig = solvers::min_sym_eig(&self.qe);
        if min_eig <= tol_pd {
            out.push(Violation {
                invariant: "Qe positive definite".into(),
                detail: format!("min eigenvalue = {:.3e}", to64(min_eig)),
            });
        }
        let rho = solvers::spectral_radius(&self.a);
        if rho >= T::one() - tol_stab {
            out.push(Violation {
                invariant: "spectral radius < 1".into(),
                detail: format!("spectral radius of A = {}", to64(rho)),
            });
        }
        out
    }

    /// Errors with [`Error::Validation`] listing every violation unless the
    /// model is valid.
    pub fn require_valid(&self, tol_pd: T, tol_stab: T) -> Result<()> {
        let violations = self.validate(tol_pd, tol_stab);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations_to_error("innovation model", &violations))
        }
    }
}

fn check_selection(sel: &[usize], p: usize, full: bool) -> Result<()> {
    if full && sel.len() != p {
        return Err(Error::Dimension(format!(
            "permutation must have length {}, got {}",
            p,
            sel.len()
        )));
    }
    if sel.is_empty() {
        return Err(Error::Dimension("output selection must not be empty".into()));
    }
    let mut seen = vec![false; p];
    for &i in sel {
        if i >= p {
            return Err(Error::Dimension(format!(
                "output index {i} out of range for dimension {p}"
            )));
        }
        if seen[i] {
            return Err(Error::Dimension(format!("output index {i} selected twice")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Ordered split of the output vector into blocks `y_1, ..., y_n`, with one
/// block designated as the target (for pairwise causality analysis) or
/// coordinator (for coordinated-form construction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    block_sizes: Vec<usize>,
    target_index: usize,
}

impl Partition {
    /// Builds a partition whose target is the last block. Requires at least
    /// two blocks, each of positive size.
    pub fn new(block_sizes: Vec<usize>) -> Result<Self> {
        let target = block_sizes.len().saturating_sub(1);
        Self::with_target(block_sizes, target)
    }

    /// Builds a partition with an explicit 0-based target block.
    pub fn with_target(block_sizes: Vec<usize>, target_index: usize) -> Result<Self> {
        if block_sizes.len() < 2 {
            return Err(Error::Validation(format!(
                "partition needs at least 2 blocks, got {}",
                block_sizes.len()
            )));
        }
        if let Some(pos) = block_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Validation(format!(
                "partition block {} has size 0; all blocks must be non-empty",
                pos + 1
            )));
        }
        if target_index >= block_sizes.len() {
            return Err(Error::Validation(format!(
                "target block index {} out of range for {} blocks",
                target_index,
                block_sizes.len()
            )));
        }
        Ok(Partition {
            block_sizes,
            target_index,
        })
    }

    /// The block sizes, in output order.
    pub fn blocks(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Number of blocks.
    pub fn n_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    /// 0-based index of the target/coordinator block.
    pub fn target_index(&self) -> usize {
        self.target_index
    }

    /// Total output dimension covered by the partition.
    pub fn total(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    /// Offset of block `i` in the output vector.
    pub fn block_offset(&self, i: usize) -> usize {
        self.block_sizes[..i].iter().sum()
    }

    /// Coordinate range of block `i`.
    pub fn block_range(&self, i: usize) -> Range<usize> {
        let start = self.block_offset(i);
        start..start + self.block_sizes[i]
    }

    /// Coordinate indices of block `i`.
    pub fn block_indices(&self, i: usize) -> Vec<usize> {
        self.block_range(i).collect()
    }

    /// Size of the target block.
    pub fn target_size(&self) -> usize {
        self.block_sizes[self.target_index]
    }

    /// Combined size of all non-target blocks.
    pub fn source_size(&self) -> usize {
        self.total() - self.target_size()
    }

    /// Coordinate indices of all non-target blocks, in output order.
    pub fn source_indices(&self) -> Vec<usize> {
        (0..self.n_blocks())
            .filter(|&i| i != self.target_index)
            .flat_map(|i| self.block_range(i))
            .collect()
    }

    /// Whether the target is already the last block.
    pub fn is_target_last(&self) -> bool {
        self.target_index == self.n_blocks() - 1
    }

    /// Output permutation that moves the target block to the end while
    /// keeping all other coordinates in their original order. For a
    /// partition whose target is already last this is the identity.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order = self.source_indices();
        order.extend(self.block_range(self.target_index));
        order
    }

    /// Checks that the partition covers an output vector of dimension `p`.
    pub fn require_total(&self, p: usize) -> Result<()> {
        if self.total() != p {
            return Err(Error::Dimension(format!(
                "partition covers {} outputs but the data has {}",
                self.total(),
                p
            )));
        }
        Ok(())
    }
}

/// Lagged output covariances `Λ_0, Λ_1, ..., Λ_N` with
/// `Λ_k = E[y(t+k) y(t)^T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSequence<T: Scalar> {
    lam0: DMatrix<T>,
    lams: Vec<DMatrix<T>>,
}

impl<T: Scalar> CovarianceSequence<T> {
    /// Builds a sequence from the lag-0 covariance and the higher lags,
    /// using the default symmetry tolerance of 1e-10 for `Λ_0`.
    pub fn new(lam0: DMatrix<T>, lams: Vec<DMatrix<T>>) -> Result<Self> {
        Self::new_with_tol(lam0, lams, crate::scalar::fr(1e-10))
    }

    /// Builds a sequence, checking that every matrix is `p x p` and that
    /// `Λ_0` is symmetric within `tol_sym`.
    pub fn new_with_tol(lam0: DMatrix<T>, lams: Vec<DMatrix<T>>, tol_sym: T) -> Result<Self> {
        let p = lam0.nrows();
        if lam0.ncols() != p || p == 0 {
            return Err(Error::Dimension(format!(
                "lag-0 covariance must be square and non-empty, got {}x{}",
                lam0.nrows(),
                lam0.ncols()
            )));
        }
        for (k, m) in lams.iter().enumerate() {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::Dimension(format!(
                    "lag-{} covariance must be {}x{}, got {}x{}",
                    k + 1,
                    p,
                    p,
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let asym = solvers::max_abs(&(lam0.clone() - lam0.transpose()));
        if asym > tol_sym {
            return Err(Error::Validation(format!(
                "lag-0 covariance must be symmetric: max |Λ0 - Λ0^T| = {:.3e} exceeds {:.3e}",
                to64(asym),
                to64(tol_sym)
            )));
        }
        Ok(CovarianceSequence { lam0, lams })
    }

    /// Output dimension `p`.
    pub fn p(&self) -> usize {
        self.lam0.nrows()
    }

    /// Largest lag provided (the sequence holds `Λ_0 ..= Λ_max_lag`).
    pub fn max_lag(&self) -> usize {
        self.lams.len()
    }

    /// The lag-0 covariance `Λ_0`.
    pub fn lam0(&self) -> &DMatrix<T> {
        &self.lam0
    }

    /// The higher lags `Λ_1, ..., Λ_N` in order.
    pub fn lams(&self) -> &[DMatrix<T>] {
        &self.lams
    }

    /// The lag-`k` covariance, for `k <= max_lag`.
    ///
    /// # Panics
    ///
    /// Panics if `k` exceeds the largest stored lag.
    pub fn lam(&self, k: usize) -> &DMatrix<T> {
        if k == 0 {
            &self.lam0
        } else {
            &self.lams[k - 1]
        }
    }

    /// Restricts every lag to the output coordinates in `select` (kept in
    /// the given order): `Λ'_k = Λ_k[select, select]`.
    pub fn select(&self, select: &[usize]) -> Result<Self> {
        check_selection(select, self.p(), false)?;
        let pick = |m: &DMatrix<T>| -> DMatrix<T> {
            m.select_rows(select.iter()).select_columns(select.iter())
        };
        Ok(CovarianceSequence {
            lam0: pick(&self.lam0),
            lams: self.lams.iter().map(pick).collect(),
        })
    }

    /// Returns a copy that keeps only the first `n_lags` higher lags.
    pub fn truncated(&self, n_lags: usize) -> Self {
        CovarianceSequence {
            lam0: self.lam0.clone(),
            lams: self.lams[..n_lags.min(self.lams.len())].to_vec(),
        }
    }
}

/// One named numerical check inside a [`StructureReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    /// Identifier of the tested property or matrix block, e.g. `"A[2,1]"`.
    pub name: String,
    /// Whether the property held.
    pub passed: bool,
    /// Measured statistic — usually a max-abs residual, scaled so that
    /// values at or below `threshold` pass.
    pub residual: f64,
    /// Threshold the statistic was compared against (tolerance already
    /// resolved against the relevant scale).
    pub threshold: f64,
}

/// Tolerances that were actually applied when a report was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceRecord {
    /// Structural zero tolerance.
    pub tol_zero: f64,
    /// Whether `tol_zero` is relative to the containing matrix magnitude.
    pub tol_zero_relative: bool,
    /// Relative singular-value cutoff used for rank decisions.
    pub tol_rank_rel: f64,
    /// Relative singular-value cutoff used for the observable/unobservable
    /// state split.
    pub tol_split_rel: f64,
}

impl ToleranceRecord {
    /// Captures the structural tolerances of an option set.
    pub fn from_options<T: Scalar>(opts: &Options<T>) -> Self {
        ToleranceRecord {
            tol_zero: to64(opts.tol_zero.value()),
            tol_zero_relative: opts.tol_zero.is_relative(),
            tol_rank_rel: to64(opts.tol_rank_rel),
            tol_split_rel: to64(opts.tol_split_rel),
        }
    }
}

/// A model derived during an analysis and attached to its report.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivedModel<T: Scalar> {
    /// Result of a block-triangular construction.
    BlockTriangular(crate::granger::BlockTriangularResult<T>),
    /// Result of a coordinated-form construction.
    Coordinated(crate::coordinated::CoordinatedModel<T>),
}

/// Verdicts of a structural test with the evidence that produced them.
///
/// `verdict` summarizes the decisive checks of the operation that built the
/// report (for causality tests: the structural zero blocks). Additional
/// entries in `checks` may be informational; each carries its own `passed`
/// flag, measured residual, and the threshold actually applied, so a report
/// is auditable without re-running the analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport<T: Scalar> {
    /// Overall verdict of the tested property.
    pub verdict: bool,
    /// Individual residual checks backing the verdict.
    pub checks: Vec<PropertyCheck>,
    /// Non-fatal observations (rank-gap warnings, degraded fits, ...).
    pub warnings: Vec<String>,
    /// Tolerances that were applied.
    pub tolerances: ToleranceRecord,
    /// Output-coordinate permutation applied before the analysis, if any
    /// (original indices listed in analysis order).
    pub permutation: Option<Vec<usize>>,
    /// Model constructed during the analysis, if one was requested.
    pub derived: Option<Box<DerivedModel<T>>>,
}

impl<T: Scalar> StructureReport<T> {
    /// Creates an empty report with verdict `true` and no checks.
    pub fn new(tolerances: ToleranceRecord) -> Self {
        StructureReport {
            verdict: true,
            checks: Vec::new(),
            warnings: Vec::new(),
            tolerances,
            permutation: None,
            derived: None,
        }
    }

    /// Records a check without touching the overall verdict; returns whether
    /// it passed.
    pub fn push_check(&mut self, name: impl Into<String>, residual: f64, threshold: f64) -> bool {
        let passed = residual <= threshold;
        self.checks.push(PropertyCheck {
            name: name.into(),
            passed,
            residual,
            threshold,
        });
        passed
    }

    /// Records a check that participates in the overall verdict; returns
    /// whether it passed.
    pub fn push_verdict_check(
        &mut self,
        name: impl Into<String>,
        residual: f64,
        threshold: f64,
    ) -> bool {
        let passed = self.push_check(name, residual, threshold);
        self.verdict = self.verdict && passed;
        passed
    }

    /// Looks up a check by name.
    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// The failed check with the largest residual-to-threshold ratio, if any
    /// check failed.
    pub fn worst_failure(&self) -> Option<&PropertyCheck> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .max_by(|a, b| {
                let ra = a.residual / a.threshold.max(f64::MIN_POSITIVE);
                let rb = b.residual / b.threshold.max(f64::MIN_POSITIVE);
                ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal)
            })
    }

    /// Largest residual-to-threshold ratio over all recorded checks
    /// (0.0 when no checks were recorded). Values at or below 1.0 mean every
    /// check passed its own threshold.
    pub fn worst_ratio(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.residual / c.threshold.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// Records the outcome of a nested analysis as a single named check that
    /// participates in the overall verdict. `ratio` should be the nested
    /// report's worst residual-to-threshold ratio, so 1.0 is the pass
    /// boundary.
    pub fn push_subverdict(&mut self, name: impl Into<String>, passed: bool, ratio: f64) {
        self.checks.push(PropertyCheck {
            name: name.into(),
            passed,
            residual: ratio,
            threshold: 1.0,
        });
        self.verdict = self.verdict && passed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_model(a: f64) -> StateSpaceModel<f64> {
        StateSpaceModel::new(
            dmatrix![a],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
        )
        .unwrap()
    }

    #[test]
    fn valid_scalar_model_has_no_violations() {
        let m = scalar_model(0.5);
        assert!(m.validate(1e-10, 1e-10).is_empty());
    }

    #[test]
    fn unstable_scalar_model_is_flagged() {
        let m = scalar_model(1.1);
        let violations = m.validate(1e-10, 1e-10);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].invariant.contains("spectral radius"));
        assert!(m.require_valid(1e-10, 1e-10).is_err());
    }

    #[test]
    fn validation_is_pure() {
        let m = scalar_model(1.1);
        assert_eq!(m.validate(1e-10, 1e-10), m.validate(1e-10, 1e-10));
    }

    #[test]
    fn asymmetric_q_is_flagged() {
        let m = StateSpaceModel::new(
            dmatrix![0.5, 0.0; 0.0, 0.5],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            dmatrix![1.0, 0.5; 0.0, 1.0],
        )
        .unwrap();
        let violations = m.validate(1e-10, 1e-10);
        assert!(violations.iter().any(|v| v.invariant.contains("symmetric")));
    }

    #[test]
    fn non_finite_entries_are_flagged_without_panicking() {
        let m = scalar_model(f64::NAN);
        let violations = m.validate(1e-10, 1e-10);
        assert!(violations.iter().any(|v| v.invariant.contains("finite")));
    }

    #[test]
    fn empty_state_is_legal() {
        let m = StateSpaceModel::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(1, 0),
            dmatrix![1.0],
            dmatrix![1.0],
        )
        .unwrap();
        assert_eq!(m.state_dim(), 0);
        assert!(m.validate(1e-10, 1e-10).is_empty());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = StateSpaceModel::new(
            dmatrix![0.5, 0.0; 0.0, 0.5],
            dmatrix![1.0],
            dmatrix![1.0, 0.0],
            dmatrix![1.0],
            dmatrix![1.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn kalman_model_round_trips_to_state_space() {
        let km = KalmanModel::new(
            dmatrix![0.5],
            dmatrix![0.3, 0.1],
            dmatrix![1.0; 0.5],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let ss = km.to_state_space();
        assert_eq!(ss.b(), km.k());
        assert_eq!(ss.d(), &DMatrix::identity(2, 2));
        assert!(km.validate(1e-10, 1e-10).is_empty());
    }

    #[test]
    fn partition_accessors() {
        let part = Partition::new(vec![2, 1]).unwrap();
        assert_eq!(part.target_index(), 1);
        assert_eq!(part.target_size(), 1);
        assert_eq!(part.source_indices(), vec![0, 1]);
        assert_eq!(part.canonical_order(), vec![0, 1, 2]);
        assert!(part.is_target_last());

        let part = Partition::with_target(vec![1, 1, 1], 0).unwrap();
        assert_eq!(part.source_indices(), vec![1, 2]);
        assert_eq!(part.canonical_order(), vec![1, 2, 0]);
        assert_eq!(part.block_range(2), 2..3);
    }

    #[test]
    fn partition_rejects_bad_shapes() {
        assert!(Partition::new(vec![3]).is_err());
        assert!(Partition::new(vec![1, 0]).is_err());
        assert!(Partition::with_target(vec![1, 1], 5).is_err());
        let part = Partition::new(vec![1, 1]).unwrap();
        assert!(part.require_total(3).is_err());
    }

    #[test]
    fn covariance_sequence_checks_symmetry() {
        let ok = CovarianceSequence::new(dmatrix![1.0, 0.2; 0.2, 1.0], vec![]).unwrap();
        assert_eq!(ok.p(), 2);
        let err =
            CovarianceSequence::new(dmatrix![1.0, 0.3; 0.2, 1.0], vec![]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn covariance_selection_picks_submatrices() {
        let seq = CovarianceSequence::new(
            dmatrix![1.0, 0.2, 0.3; 0.2, 2.0, 0.4; 0.3, 0.4, 3.0],
            vec![DMatrix::from_fn(3, 3, |i, j| (3 * i + j) as f64)],
        )
        .unwrap();
        let sub = seq.select(&[2, 0]).unwrap();
        assert_eq!(sub.lam0(), &dmatrix![3.0, 0.3; 0.3, 1.0]);
        assert_eq!(sub.lam(1), &dmatrix![8.0, 6.0; 2.0, 0.0]);
        assert!(seq.select(&[0, 0]).is_err());
        assert!(seq.select(&[3]).is_err());
    }

    #[test]
    fn report_checks_drive_verdict() {
        let mut report: StructureReport<f64> = StructureReport::new(ToleranceRecord {
            tol_zero: 1e-8,
            tol_zero_relative: false,
            tol_rank_rel: 1e-9,
            tol_split_rel: 1e-9,
        });
        assert!(report.push_verdict_check("A[2,1]", 1e-12, 1e-8));
        assert!(report.verdict);
        assert!(!report.push_verdict_check("K[2,1]", 1e-3, 1e-8));
        assert!(!report.verdict);
        report.push_check("informational", 5.0, 1e-8);
        assert_eq!(report.worst_failure().unwrap().name, "informational");
        assert!(report.check("A[2,1]").unwrap().passed);
    }
}
