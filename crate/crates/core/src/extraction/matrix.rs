use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExtractionError;
use crate::evaluator::Scorer;
use crate::gateway::{Gateway, GenerationRequest, RequestMeta, SamplingParams};
use crate::io::write_atomic;
use crate::model::{Catalog, CuratedProblem};
use crate::pairgen::PairStore;
use crate::prompt::{build_repair_prompt, PromptStyle, RepairPromptSpec};
use crate::step::generate_attempt;
use crate::{Error, Result};

pub const MATRIX_TAG: &str = "matrix";
const FORMAT: &str = "fix-quality-matrix/1";

/// Scores of the fix produced for validation problem `j` (column) when pair
/// `i` (row) is the single in-context example. Row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FixQualityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    dtype: String,
    rows: usize,
    cols: usize,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    provenance: String,
}

impl FixQualityMatrix {
    pub fn new(
        values: Vec<f64>,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
    ) -> Result<Self, ExtractionError> {
        let (rows, cols) = (row_ids.len(), col_ids.len());
        if values.len() != rows * cols {
            return Err(ExtractionError::Format(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(ExtractionError::EntryOutOfRange {
                    row: k / cols.max(1),
                    col: k % cols.max(1),
                    value: v,
                });
            }
        }
        Ok(FixQualityMatrix {
            rows,
            cols,
            values,
            row_ids,
            col_ids,
            provenance: String::new(),
        })
    }

    /// Matrix with generated ids `r0..`, `c0..`; handy for tests and tooling.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ExtractionError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ExtractionError::Format("ragged rows".into()));
        }
        Self::new(
            rows.concat(),
            (0..rows.len()).map(|i| format!("r{i}")).collect(),
            (0..cols).map(|j| format!("c{j}")).collect(),
        )
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// One JSON header line, then `rows * cols` little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT.into(),
            dtype: "f64le".into(),
            rows: self.rows,
            cols: self.cols,
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExtractionError> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ExtractionError::Format("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| ExtractionError::Format(e.to_string()))?;
        if header.format != FORMAT || header.dtype != "f64le" {
            return Err(ExtractionError::Format(format!(
                "unsupported format {} / {}",
                header.format, header.dtype
            )));
        }
        if header.row_ids.len() != header.rows || header.col_ids.len() != header.cols {
            return Err(ExtractionError::Format("id lists disagree with dimensions".into()));
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.rows * header.cols * 8 {
            return Err(ExtractionError::Format(format!(
                "expected {} value bytes, found {}",
                header.rows * header.cols * 8,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self::new(values, header.row_ids, header.col_ids)?.with_provenance(header.provenance))
    }

    pub fn save(&self, path: &Path) -> Result<(), ExtractionError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct MatrixOptions {
    pub style: PromptStyle,
    pub sampling: SamplingParams,
    /// Cells computed at once.
    pub parallelism: usize,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions {
            style: PromptStyle::default(),
            sampling: SamplingParams::default(),
            parallelism: 1,
        }
    }
}

/// Fills every (pair, validation problem) cell with the score of the fix
/// generated from a 1-shot prompt. Needs `|pairs| * |val|` calls of budget.
pub fn compute_fix_quality_matrix(
    pairs: &PairStore,
    pair_problems: &Catalog,
    val: &[CuratedProblem],
    gateway: &Gateway,
    scorer: &dyn Scorer,
    options: &MatrixOptions,
) -> Result<FixQualityMatrix> {
    let (rows, cols) = (pairs.len(), val.len());
    gateway.require((rows * cols) as u64)?;
    for p in pairs.pairs() {
        if pair_problems.get(&p.problem_id).is_none() {
            return Err(Error::UnknownProblem(p.problem_id.clone()));
        }
    }
    let cell = |k: usize| -> Result<f64> {
        let (i, j) = (k / cols, k % cols);
        let pair = &pairs.pairs()[i];
        let source = pair_problems.get(&pair.problem_id).expect("checked above");
        let target = &val[j];
        let spec = RepairPromptSpec::new(vec![(pair, source)], &target.problem, &target.guess, options.style);
        let request = GenerationRequest::new(build_repair_prompt(&spec)?, MATRIX_TAG, &options.sampling)
            .with_meta(RequestMeta {
                problem_id: Some(target.problem.id.clone()),
                pair_ids: vec![pair.id()],
                pair_problem_ids: vec![pair.problem_id.clone()],
                attempt: None,
            });
        let fix = generate_attempt(
            gateway,
            scorer,
            request,
            &target.problem,
            format!("{}/matrix/{}", target.problem.id, pair.id()),
            Some(target.guess.id.clone()),
        )?;
        Ok(fix.score)
    };
    let values: Vec<f64> = if options.parallelism <= 1 {
        (0..rows * cols).map(cell).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| (0..rows * cols).into_par_iter().map(cell).collect::<Result<_>>())?
    };
    Ok(FixQualityMatrix::new(
        values,
        pairs.pairs().iter().map(|p| p.id()).collect(),
        val.iter().map(|v| v.problem.id.clone()).collect(),
    )?)
}
