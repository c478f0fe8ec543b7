//! JSON and CSV interchange for `f64` models, covariance sequences,
//! sample paths, and analysis reports.
//!
//! The model document is an object with keys `"A"`, `"B"`, `"C"`, `"D"`,
//! `"Q"` (matrices as row-by-row arrays of numbers) plus an optional
//! `"partition"` (block sizes) and `"target"` (1-based block index,
//! default last). The covariance document has keys `"lam0"` and `"lams"`
//! (array of matrices). [`read_input`] tells the two apart by the
//! presence of `"lam0"`. Sample paths travel as CSV with header
//! `y1..yp`, one row per time step.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::coordinated::CoordinatedModel;
use crate::error::{Error, Result};
use crate::granger::BlockTriangularResult;
use crate::model::{
    CovarianceSequence, DerivedModel, KalmanModel, Partition, StateSpaceModel, StructureReport,
};
use crate::realization::CovFactorization;

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "{what} rows have inconsistent lengths"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

/// JSON document for a [`StateSpaceModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    /// Optional output block sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<usize>>,
    /// Optional 1-based index of the target block within `partition`
    /// (default: the last block).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

impl ModelDoc {
    pub fn from_model(m: &StateSpaceModel<f64>) -> ModelDoc {
        ModelDoc {
            a: matrix_to_rows(m.a()),
            b: matrix_to_rows(m.b()),
            c: matrix_to_rows(m.c()),
            d: matrix_to_rows(m.d()),
            q: matrix_to_rows(m.q()),
            partition: None,
            target: None,
        }
    }

    /// Builds the model, checking the dimension invariants.
    pub fn to_model(&self) -> Result<StateSpaceModel<f64>> {
        StateSpaceModel::new(
            rows_to_matrix(&self.a, "A")?,
            rows_to_matrix(&self.b, "B")?,
            rows_to_matrix(&self.c, "C")?,
            rows_to_matrix(&self.d, "D")?,
            rows_to_matrix(&self.q, "Q")?,
        )
    }

    /// The partition carried by the document, if any, with the 1-based
    /// `target` field resolved (default: last block).
    pub fn to_partition(&self) -> Result<Option<Partition>> {
        let Some(blocks) = &self.partition else {
            return Ok(None);
        };
        let part = match self.target {
            None => Partition::new(blocks.clone())?,
            Some(t) => {
                if t == 0 || t > blocks.len() {
                    return Err(Error::Validation(format!(
                        "target block index {t} is out of range 1..={}",
                        blocks.len()
                    )));
                }
                Partition::with_target(blocks.clone(), t - 1)?
            }
        };
        Ok(Some(part))
    }
}

/// JSON document for a [`CovarianceSequence`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovDoc {
    pub lam0: Vec<Vec<f64>>,
    pub lams: Vec<Vec<Vec<f64>>>,
}

impl CovDoc {
    pub fn from_sequence(seq: &CovarianceSequence<f64>) -> CovDoc {
        CovDoc {
            lam0: matrix_to_rows(seq.lam0()),
            lams: seq.lams().iter().map(matrix_to_rows).collect(),
        }
    }

    /// Builds the sequence; the lag-0 symmetry gate is relaxed to 1e-8 so
    /// externally estimated covariances with rounding dirt load cleanly.
    pub fn to_sequence(&self) -> Result<CovarianceSequence<f64>> {
        let lam0 = rows_to_matrix(&self.lam0, "lam0")?;
        let lams = self
            .lams
            .iter()
            .enumerate()
            .map(|(k, rows)| rows_to_matrix(rows, &format!("lams[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        CovarianceSequence::new_with_tol(lam0, lams, 1e-8)
    }
}

/// JSON document for a [`KalmanModel`] (innovation representation).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KalmanDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Qe")]
    pub qe: Vec<Vec<f64>>,
}

impl KalmanDoc {
    pub fn from_model(m: &KalmanModel<f64>) -> KalmanDoc {
        KalmanDoc {
            a: matrix_to_rows(m.a()),
            k: matrix_to_rows(m.k()),
            c: matrix_to_rows(m.c()),
            qe: matrix_to_rows(m.qe()),
        }
    }

    pub fn to_model(&self) -> Result<KalmanModel<f64>> {
        KalmanModel::new(
            rows_to_matrix(&self.a, "A")?,
            rows_to_matrix(&self.k, "K")?,
            rows_to_matrix(&self.c, "C")?,
            rows_to_matrix(&self.qe, "Qe")?,
        )
    }
}

/// JSON document for a [`CovFactorization`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorizationDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Cbar")]
    pub cbar: Vec<Vec<f64>>,
    pub lam0: Vec<Vec<f64>>,
    pub hankel_singular_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero_usize")]
    pub dropped_for_stability: usize,
}

fn is_zero_usize(v: &usize) -> bool {
    *v == 0
}

impl FactorizationDoc {
    pub fn from_factorization(f: &CovFactorization<f64>) -> FactorizationDoc {
        FactorizationDoc {
            a: matrix_to_rows(&f.a),
            c: matrix_to_rows(&f.c),
            cbar: matrix_to_rows(&f.cbar),
            lam0: matrix_to_rows(&f.lam0),
            hankel_singular_values: f.hankel_singular_values.clone(),
            dropped_for_stability: f.dropped_for_stability,
        }
    }
}

/// One residual check inside a serialized report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckDoc {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub threshold: f64,
}

/// Tolerances recorded with a serialized report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TolerancesDoc {
    pub tol_zero: f64,
    pub tol_zero_relative: bool,
    pub tol_rank_rel: f64,
    pub tol_split_rel: f64,
}

/// Serialized model attached to a report. The nested result's own report
/// is not repeated here — it is the report this document hangs off.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedDoc {
    BlockTriangular {
        model: KalmanDoc,
        n1: usize,
        p_source: usize,
        verdict: bool,
    },
    Coordinated {
        model: KalmanDoc,
        state_blocks: Vec<usize>,
        output_blocks: Vec<usize>,
        minimal: bool,
    },
}

impl DerivedDoc {
    fn from_derived(d: &DerivedModel<f64>) -> DerivedDoc {
        match d {
            DerivedModel::BlockTriangular(b) => DerivedDoc::BlockTriangular {
                model: KalmanDoc::from_model(&b.model),
                n1: b.n1,
                p_source: b.p_source,
                verdict: b.verdict,
            },
            DerivedModel::Coordinated(c) => DerivedDoc::Coordinated {
                model: KalmanDoc::from_model(&c.model),
                state_blocks: c.state_blocks.clone(),
                output_blocks: c.output_blocks.clone(),
                minimal: c.minimal,
            },
        }
    }
}

/// JSON document for a [`StructureReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDoc {
    pub verdict: bool,
    pub checks: Vec<CheckDoc>,
    pub warnings: Vec<String>,
    pub tolerances: TolerancesDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<DerivedDoc>,
}

impl ReportDoc {
    pub fn from_report(r: &StructureReport<f64>) -> ReportDoc {
        ReportDoc {
            verdict: r.verdict,
            checks: r
                .checks
                .iter()
                .map(|c| CheckDoc {
                    name: c.name.clone(),
                    passed: c.passed,
                    residual: c.residual,
                    threshold: c.threshold,
                })
                .collect(),
            warnings: r.warnings.clone(),
            tolerances: TolerancesDoc {
                tol_zero: r.tolerances.tol_zero,
                tol_zero_relative: r.tolerances.tol_zero_relative,
                tol_rank_rel: r.tolerances.tol_rank_rel,
                tol_split_rel: r.tolerances.tol_split_rel,
            },
            permutation: r.permutation.clone(),
            derived: r.derived.as_deref().map(DerivedDoc::from_derived),
        }
    }
}

/// JSON document for a block-triangular construction result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockTriangularDoc {
    pub model: KalmanDoc,
    pub n1: usize,
    pub p_source: usize,
    pub verdict: bool,
    pub report: ReportDoc,
}

impl BlockTriangularDoc {
    pub fn from_result(r: &BlockTriangularResult<f64>) -> BlockTriangularDoc {
        BlockTriangularDoc {
            model: KalmanDoc::from_model(&r.model),
            n1: r.n1,
            p_source: r.p_source,
            verdict: r.verdict,
            report: ReportDoc::from_report(&r.report),
        }
    }
}

/// JSON document for a [`CoordinatedModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinatedDoc {
    pub model: KalmanDoc,
    pub state_blocks: Vec<usize>,
    pub output_blocks: Vec<usize>,
    pub minimal: bool,
    pub report: ReportDoc,
}

impl CoordinatedDoc {
    pub fn from_model(cm: &CoordinatedModel<f64>) -> CoordinatedDoc {
        CoordinatedDoc {
            model: KalmanDoc::from_model(&cm.model),
            state_blocks: cm.state_blocks.clone(),
            output_blocks: cm.output_blocks.clone(),
            minimal: cm.minimal,
            report: ReportDoc::from_report(&cm.report),
        }
    }
}

/// A parsed input file: either a model or a covariance document.
#[derive(Debug, Clone)]
pub enum InputDoc {
    Model(ModelDoc),
    Covariances(CovDoc),
}

/// Parses JSON text as a model or covariance document, telling the two
/// apart by the presence of the `"lam0"` key.
pub fn parse_input(text: &str) -> Result<InputDoc> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("lam0").is_some() {
        Ok(InputDoc::Covariances(serde_json::from_value(value)?))
    } else {
        Ok(InputDoc::Model(serde_json::from_value(value)?))
    }
}

/// Reads a model or covariance document from a JSON file.
pub fn read_input(path: &Path) -> Result<InputDoc> {
    parse_input(&std::fs::read_to_string(path)?)
}

/// Reads any JSON document from a file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Serializes a document, compact by default, indented with `pretty`.
pub fn to_json_string<T: Serialize>(value: &T, pretty: bool) -> Result<String> {
    Ok(if pretty {
        serde_json::to_string_pretty(value)?
    } else {
        serde_json::to_string(value)?
    })
}

/// Writes a document as JSON to a file (always with a trailing newline).
pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let mut text = to_json_string(value, pretty)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes a sample path (one row per time step) as CSV with header
/// `y1..yp`. Numbers use the shortest exact decimal form, so a read-back
/// reproduces the path bit for bit.
pub fn write_csv_samples(path: &Path, samples: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (1..=samples.ncols()).map(|j| format!("y{j}")).collect();
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(samples.ncols());
    for i in 0..samples.nrows() {
        record.clear();
        for j in 0..samples.ncols() {
            record.push(samples[(i, j)].to_string());
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Reads a sample path from CSV (header row expected and skipped).
pub fn read_csv_samples(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    rows_to_matrix(&rows, "sample")
}
