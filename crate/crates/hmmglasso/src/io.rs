//! Data ingestion and model persistence.
//!
//! Matrices come in as delimited numeric text, one observation per row.
//! Models and pruning traces go out as JSON documents whose floating-point
//! numbers are printed with 17 significant digits, so every f64 round-trips
//! bit-exactly while files stay diffable and human-readable.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::{FitResult, Initialization, Termination};
use crate::error::{Error, Result};
use crate::glasso::{graph_of, EDGE_TOL};
use crate::hmm::{GaussianState, HmmModel};
use crate::pruning::{PruneAction, PruneTrace};
use crate::selection::{score, Criterion};

pub const SCHEMA_VERSION: u32 = 1;

/// Options for [`read_matrix`].
#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub delimiter: char,
    /// Skip the first line.
    pub header: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            delimiter: ',',
            header: false,
        }
    }
}

/// Reads a rectangular numeric matrix, one observation per row.
///
/// Ragged rows, non-numeric cells and empty inputs are reported with their
/// 1-based line number.
pub fn read_matrix(path: &Path, options: &ReadOptions) -> Result<DMatrix<f64>> {
    let file = File::open(path)?;
    read_matrix_from(BufReader::new(file), options)
}

/// As [`read_matrix`], from any reader.
pub fn read_matrix_from<R: Read>(reader: R, options: &ReadOptions) -> Result<DMatrix<f64>> {
    let buf = BufReader::new(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in buf.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if options.header && idx == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(options.delimiter) {
            let cell = cell.trim();
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("cannot parse '{cell}' as a number"),
            })?;
            row.push(value);
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, found {}", row.len()),
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    let n = rows.len();
    let p = width.ok_or_else(|| Error::Parse {
        line: 0,
        message: "input contains no data rows".into(),
    })?;
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

/// Writes a matrix as delimited text using full round-trip precision.
pub fn write_matrix<W: Write>(out: &mut W, matrix: &DMatrix<f64>, delimiter: char) -> Result<()> {
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols())
            .map(|j| format_f64(matrix[(i, j)]))
            .collect();
        writeln!(out, "{}", row.join(&delimiter.to_string()))?;
    }
    Ok(())
}

/// 17 significant digits: the shortest width that identifies every f64
/// uniquely, so parsing the text recovers the exact bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------------------
// JSON documents
// ---------------------------------------------------------------------------

/// Serializes any `Serialize` value as pretty JSON with 17-significant-digit
/// floats.
pub fn to_json17<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Json17Formatter::new());
    value.serialize(&mut ser)?;
    let mut s = String::from_utf8(out).expect("serializer emits UTF-8");
    s.push('\n');
    Ok(s)
}

/// Pretty-printing JSON formatter that renders every float with
/// [`format_f64`].
struct Json17Formatter {
    indent: usize,
    has_value: bool,
}

impl Json17Formatter {
    fn new() -> Self {
        Self {
            indent: 0,
            has_value: false,
        }
    }

    fn newline<W: ?Sized + std::io::Write>(&self, writer: &mut W) -> std::io::Result<()> {
        writer.write_all(b"\n")?;
        for _ in 0..self.indent {
            writer.write_all(b"  ")?;
        }
        Ok(())
    }
}

impl serde_json::ser::Formatter for Json17Formatter {
    fn write_f64<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        value: f32,
    ) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent += 1;
        self.has_value = false;
        writer.write_all(b"[")
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent -= 1;
        if self.has_value {
            self.newline(writer)?;
        }
        writer.write_all(b"]")
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        if !first {
            writer.write_all(b",")?;
        }
        self.newline(writer)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(
        &mut self,
        _writer: &mut W,
    ) -> std::io::Result<()> {
        self.has_value = true;
        Ok(())
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent += 1;
        self.has_value = false;
        writer.write_all(b"{")
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.indent -= 1;
        if self.has_value {
            self.newline(writer)?;
        }
        writer.write_all(b"}")
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        if !first {
            writer.write_all(b",")?;
        }
        self.newline(writer)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
    ) -> std::io::Result<()> {
        writer.write_all(b": ")
    }

    fn end_object_value<W: ?Sized + std::io::Write>(
        &mut self,
        _writer: &mut W,
    ) -> std::io::Result<()> {
        self.has_value = true;
        Ok(())
    }
}

/// Echo of the configuration a model was fitted with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigRecord {
    /// Resolved penalty level (a number, even when requested as universal).
    pub lambda: f64,
    pub penalty: String,
    pub eps: f64,
    pub pi_min: f64,
    pub max_iter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Plain representation of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub num_states: usize,
    pub means: Vec<Vec<f64>>,
    /// Row-major precision matrices, one per state.
    pub precisions: Vec<Vec<Vec<f64>>>,
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl ModelRecord {
    pub fn from_model(model: &HmmModel) -> Self {
        Self {
            num_states: model.num_states(),
            means: model
                .states
                .iter()
                .map(|s| s.mean().iter().cloned().collect())
                .collect(),
            precisions: model
                .states
                .iter()
                .map(|s| matrix_rows(s.precision()))
                .collect(),
            transition: matrix_rows(&model.transition),
            initial: model.initial.iter().cloned().collect(),
        }
    }

    pub fn to_model(&self) -> Result<HmmModel> {
        let states: Vec<GaussianState> = self
            .means
            .iter()
            .zip(&self.precisions)
            .map(|(mean, prec)| {
                GaussianState::new(DVector::from_vec(mean.clone()), rows_to_matrix(prec)?)
            })
            .collect::<Result<_>>()?;
        HmmModel::new(
            states,
            rows_to_matrix(&self.transition)?,
            DVector::from_vec(self.initial.clone()),
        )
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix in document".into()));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter("ragged matrix in document".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminationRecord {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    pub iterations: usize,
}

impl TerminationRecord {
    pub fn from_fit(fit: &FitResult) -> Self {
        let state = match fit.termination {
            Termination::StateCollapsed { state } => Some(state),
            _ => None,
        };
        Self {
            kind: fit.termination.as_str().to_string(),
            state,
            iterations: fit.iterations,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresRecord {
    pub bic: f64,
    pub mmdl: f64,
}

/// Persisted fit: everything needed to evaluate, score or resume from a
/// fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub n: usize,
    pub p: usize,
    pub config: ConfigRecord,
    pub model: ModelRecord,
    /// 0-based undirected edges per state.
    pub edges: Vec<Vec<(usize, usize)>>,
    pub scores: ScoresRecord,
    pub termination: TerminationRecord,
}

impl ModelDocument {
    pub fn from_fit(fit: &FitResult, config: ConfigRecord) -> Result<Self> {
        let edges = fit
            .model
            .states
            .iter()
            .map(|s| graph_of(s.precision(), EDGE_TOL).into_iter().collect())
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            n: fit.num_obs(),
            p: fit.model.dim(),
            config,
            model: ModelRecord::from_model(&fit.model),
            edges,
            scores: ScoresRecord {
                bic: score(fit, Criterion::Bic)?.total,
                mmdl: score(fit, Criterion::Mmdl)?.total,
            },
            termination: TerminationRecord::from_fit(fit),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        to_json17(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

/// One level of a persisted pruning trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneStepRecord {
    pub k: usize,
    /// Move that produced this level: "init" for the first fit,
    /// otherwise "merge" (with the two source states) or "delete".
    pub action: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deleted: Option<usize>,
    pub bic: f64,
    pub mmdl: f64,
    pub termination: TerminationRecord,
    pub model: ModelRecord,
    pub edges: Vec<Vec<(usize, usize)>>,
}

/// Persisted pruning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneDocument {
    pub schema_version: u32,
    pub n: usize,
    pub p: usize,
    pub config: ConfigRecord,
    pub criterion: String,
    pub selected_k: usize,
    pub steps: Vec<PruneStepRecord>,
}

impl PruneDocument {
    pub fn from_trace(trace: &PruneTrace, config: ConfigRecord) -> Self {
        let first = &trace.steps[0].fit;
        let steps = trace
            .steps
            .iter()
            .map(|step| {
                let (action, merged, deleted) = match step.action {
                    None => ("init".to_string(), None, None),
                    Some(PruneAction::Merge(a, b)) => ("merge".to_string(), Some((a, b)), None),
                    Some(PruneAction::Delete(d)) => ("delete".to_string(), None, Some(d)),
                };
                PruneStepRecord {
                    k: step.k,
                    action,
                    merged,
                    deleted,
                    bic: step.bic.total,
                    mmdl: step.mmdl.total,
                    termination: TerminationRecord::from_fit(&step.fit),
                    model: ModelRecord::from_model(&step.fit.model),
                    edges: step
                        .fit
                        .model
                        .states
                        .iter()
                        .map(|s| graph_of(s.precision(), EDGE_TOL).into_iter().collect())
                        .collect(),
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            n: first.num_obs(),
            p: first.model.dim(),
            config,
            criterion: trace.criterion.as_str().to_string(),
            selected_k: trace.selected_k(),
            steps,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json17(self)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }
}

/// Persisted data-generating model of a simulated benchmark data set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthDocument {
    pub schema_version: u32,
    pub spec: crate::sim::SimSpec,
    pub model: ModelRecord,
    pub edges: Vec<Vec<(usize, usize)>>,
}

/// Result of evaluating a saved model on a held-out matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub schema_version: u32,
    pub n_test: usize,
    pub p: usize,
    pub log_likelihood: f64,
    pub log_likelihood_per_obs: f64,
}

/// Reads an initialization from a delimited file: either one column of
/// 0-based hard labels or a full n x k matrix of soft assignments.
pub fn read_initialization(path: &Path, k: usize, options: &ReadOptions) -> Result<Initialization> {
    let m = read_matrix(path, options)?;
    if m.ncols() == 1 && k > 1 {
        let labels: Vec<usize> = (0..m.nrows())
            .map(|t| {
                let v = m[(t, 0)];
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        line: t + 1,
                        message: format!("label '{v}' is not a nonnegative integer"),
                    });
                }
                Ok(v as usize)
            })
            .collect::<Result<_>>()?;
        Initialization::from_labels(&labels, k)
    } else if m.ncols() == k {
        Initialization::from_soft_assignments(m)
    } else {
        Err(Error::DimensionMismatch(format!(
            "initialization file has {} columns; expected 1 (labels) or k={k}",
            m.ncols()
        )))
    }
}
