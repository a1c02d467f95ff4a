//! Divergences and error summaries between true and estimated covariances.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covsel::SpdMatrix;
use crate::error::{FggmError, Result};
use crate::graph::Graph;
use crate::io::write_matrix_csv;
use crate::linalg::{cholesky, log_det};
use crate::scalar::Real;

/// `½ (tr(A⁻¹B) − log(|A| / |B|))`.
///
/// This is the Gaussian KL divergence without its `−dim/2` term, so equal
/// arguments give `dim / 2` rather than zero.
pub fn kl_matrix<T: Real>(b: &SpdMatrix<T>, a: &SpdMatrix<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(FggmError::DimensionMismatch(format!(
            "KL arguments are {}x{} and {}x{}",
            b.dim(),
            b.dim(),
            a.dim(),
            a.dim()
        )));
    }
    let ca = cholesky(a.matrix(), "KL reference matrix")?;
    let cb = cholesky(b.matrix(), "KL compared matrix")?;
    let trace = ca.solve(b.matrix()).trace();
    Ok(T::of(0.5) * (trace - (log_det(&ca) - log_det(&cb))))
}

/// Variable block `(i, j)` (0-based) of a variable-major matrix.
pub fn extract_block<T: Real>(c: &DMatrix<T>, i: usize, j: usize, p: usize) -> Result<DMatrix<T>> {
    if p == 0 || c.nrows() != c.ncols() || !c.nrows().is_multiple_of(p) {
        return Err(FggmError::DimensionMismatch(format!(
            "{}x{} matrix is not made of {p}x{p} blocks",
            c.nrows(),
            c.ncols()
        )));
    }
    let q = c.nrows() / p;
    if i >= q || j >= q {
        return Err(FggmError::InvalidArgument(format!(
            "block ({}, {}) outside {q} variables",
            i + 1,
            j + 1
        )));
    }
    Ok(c.view((i * p, j * p), (p, p)).into_owned())
}

/// Joint `2p x 2p` covariance of variables `i` and `j`.
pub fn joint_block<T: Real>(c: &DMatrix<T>, i: usize, j: usize, p: usize) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(2 * p, 2 * p);
    for (a, u) in [i, j].into_iter().enumerate() {
        for (b, w) in [i, j].into_iter().enumerate() {
            out.view_mut((a * p, b * p), (p, p))
                .copy_from(&extract_block(c, u, w, p)?);
        }
    }
    Ok(out)
}

/// One row per graph edge, one KL value per estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeKlTable {
    pub estimators: Vec<String>,
    pub rows: Vec<EdgeKlRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeKlRow {
    /// 0-based.
    pub edge: (usize, usize),
    pub values: Vec<f64>,
}

impl EdgeKlTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.estimators.iter().position(|e| e == name)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        let col = self.column(name)?;
        Some(col.iter().sum::<f64>() / col.len().max(1) as f64)
    }

    /// CSV with columns `edge_i,edge_j,<estimator>…`; edges 1-based.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("edge_i,edge_j");
        for e in &self.estimators {
            s.push(',');
            s.push_str(e);
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("{},{}", row.edge.0 + 1, row.edge.1 + 1));
            for v in &row.values {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Edge-wise KL of each estimate's joint block against the truth's.
///
/// `ridge` adds `ridge × mean diagonal of the truth block` to the diagonal of
/// both blocks before comparing; zero compares the blocks as they are and
/// fails on singular blocks.
pub fn edge_kl_table<T: Real>(
    truth: &DMatrix<T>,
    estimates: &[(String, DMatrix<T>)],
    g: &Graph,
    p: usize,
    ridge: T,
) -> Result<EdgeKlTable> {
    let q = g.node_count();
    if truth.nrows() != q * p {
        return Err(FggmError::DimensionMismatch(format!(
            "truth is {}x{}, graph and block size imply {}",
            truth.nrows(),
            truth.ncols(),
            q * p
        )));
    }
    for (name, est) in estimates {
        if est.shape() != truth.shape() {
            return Err(FggmError::DimensionMismatch(format!(
                "estimate {name} is {}x{}, truth is {}x{}",
                est.nrows(),
                est.ncols(),
                truth.nrows(),
                truth.ncols()
            )));
        }
    }
    let rows = g
        .edges()
        .map(|(i, j)| {
            let mut tb = joint_block(truth, i, j, p)?;
            let shift = ridge * tb.diagonal().sum() / T::of_usize(2 * p);
            add_diagonal(&mut tb, shift);
            let tb = SpdMatrix::symmetrized(tb)?;
            let values = estimates
                .iter()
                .map(|(name, est)| {
                    let mut eb = joint_block(est, i, j, p)?;
                    add_diagonal(&mut eb, shift);
                    let eb = SpdMatrix::symmetrized(eb)?;
                    kl_matrix(&eb, &tb).map(|v| v.as_f64()).map_err(|e| {
                        with_context(e, &format!("estimate {name}, edge ({}, {})", i + 1, j + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EdgeKlRow { edge: (i, j), values })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeKlTable {
        estimators: estimates.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}

fn add_diagonal<T: Real>(m: &mut DMatrix<T>, shift: T) {
    if shift != T::zero() {
        for k in 0..m.nrows() {
            m[(k, k)] += shift;
        }
    }
}

fn with_context(e: FggmError, context: &str) -> FggmError {
    match e {
        FggmError::NotPositiveDefinite(msg) => FggmError::NotPositiveDefinite(format!("{context}: {msg}")),
        other => other,
    }
}

/// Per-variable marginal covariance errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalError {
    /// 0-based.
    pub variable: usize,
    /// `|tr(Ĉ_jj) − tr(C_jj)|`
    pub trace_error: f64,
    /// `‖Ĉ_jj − C_jj‖_F`
    pub frobenius_error: f64,
}

pub fn marginal_error_report<T: Real>(
    truth: &DMatrix<T>,
    estimate: &DMatrix<T>,
    q: usize,
    p: usize,
) -> Result<Vec<MarginalError>> {
    if truth.shape() != (q * p, q * p) || estimate.shape() != truth.shape() {
        return Err(FggmError::DimensionMismatch(format!(
            "truth {}x{} and estimate {}x{} for q={q}, p={p}",
            truth.nrows(),
            truth.ncols(),
            estimate.nrows(),
            estimate.ncols()
        )));
    }
    (0..q)
        .map(|j| {
            let t = extract_block(truth, j, j, p)?;
            let e = extract_block(estimate, j, j, p)?;
            Ok(MarginalError {
                variable: j,
                trace_error: (e.trace() - t.trace()).abs().as_f64(),
                frobenius_error: (e - t).norm().as_f64(),
            })
        })
        .collect()
}

/// CSV with columns `variable,trace_error,frobenius_error` (1-based).
pub fn marginal_errors_csv(errors: &[MarginalError]) -> String {
    let mut s = String::from("variable,trace_error,frobenius_error\n");
    for e in errors {
        s.push_str(&format!(
            "{},{},{}\n",
            e.variable + 1,
            e.trace_error,
            e.frobenius_error
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRange {
    pub rows: usize,
    pub cols: usize,
    pub min: f64,
    pub max: f64,
}

/// Sidecar location for a heatmap CSV: same name with `.json` extension.
pub fn heatmap_sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `matrix` as CSV and a JSON sidecar holding its value range.
pub fn export_heatmap<T: Real>(matrix: &DMatrix<T>, path: &Path) -> Result<()> {
    write_matrix_csv(path, matrix)?;
    let (min, max) = matrix
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            let x = x.as_f64();
            (lo.min(x), hi.max(x))
        });
    let range = HeatmapRange {
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        min,
        max,
    };
    let mut f = fs::File::create(heatmap_sidecar(path))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&range)?)?;
    Ok(())
}
