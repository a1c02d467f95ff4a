//! On-disk formats: matrix CSV, long-format dataset CSV, and estimate
//! directories.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same value, so every write/read cycle is lossless.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covsel::SpdMatrix;
use crate::error::{FggmError, Result};
use crate::estimator::{
    CoefCovarianceSet, CovSelDiagnostics, CovarianceEstimate, EstimatorKind, ResidualSpectrum,
    VariableSpectrum,
};
use crate::fpca::{BasisSystem, FunctionalDataset, Grid};
use crate::graph::Graph;
use crate::scalar::Real;

/// Writes a matrix with header `col_1,…,col_n`.
pub fn write_matrix_csv<T: Real>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=m.ncols()).map(|c| format!("col_{c}")))?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv<T: Real>(path: &Path) -> Result<DMatrix<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let ncols = rdr.headers()?.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != ncols {
            return Err(FggmError::Parse {
                line,
                message: format!(
                    "{}: expected {} columns, found {}",
                    path.display(),
                    ncols,
                    record.len()
                ),
            });
        }
        for field in record.iter() {
            values.push(parse_number::<T>(field, line)?);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

pub(crate) fn parse_number<T: Real>(field: &str, line: usize) -> Result<T> {
    field.trim().parse::<T>().map_err(|_| FggmError::Parse {
        line,
        message: format!("not a number: {field:?}"),
    })
}

fn write_vector_csv<T: Real>(path: &Path, v: &DVector<T>) -> Result<()> {
    write_matrix_csv(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

fn read_vector_csv<T: Real>(path: &Path) -> Result<DVector<T>> {
    let m = read_matrix_csv::<T>(path)?;
    if m.ncols() != 1 {
        return Err(FggmError::DimensionMismatch(format!(
            "{}: expected one column",
            path.display()
        )));
    }
    Ok(m.column(0).into_owned())
}

/// Writes a dataset in long format with columns `rep,var,s,value`
/// (replicate and variable 1-based).
pub fn write_dataset_csv<T: Real>(path: &Path, data: &FunctionalDataset<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rep", "var", "s", "value"])?;
    let pts = data.grid().points();
    for i in 0..data.n_reps() {
        for j in 0..data.n_vars() {
            for (k, s) in pts.iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    s.to_string(),
                    data.value(i, j, k).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateMetadata {
    kind: EstimatorKind,
    q: usize,
    p: usize,
    m: usize,
    m_prime: Option<usize>,
    v: Option<f64>,
    v_prime: Option<f64>,
    grid: Vec<f64>,
    edges: Vec<(usize, usize)>,
    /// SHA-256 of the graph's edge list text, guards against edited edges.
    graph_sha256: String,
    diagnostics: Vec<CovSelDiagnostics>,
}

fn graph_hash(g: &Graph) -> String {
    hex::encode(Sha256::digest(g.to_edge_list().as_bytes()))
}

fn sigma_file(l: usize) -> String {
    format!("sigma_{:03}.csv", l + 1)
}

/// Saves an estimate into `dir` (created if needed).
pub fn save_estimate<T: Real>(dir: &Path, est: &CovarianceEstimate<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = EstimateMetadata {
        kind: est.kind,
        q: est.q(),
        p: est.p(),
        m: est.m(),
        m_prime: est.residual.as_ref().map(|r| r.m_prime()),
        v: est.v.map(|x| x.as_f64()),
        v_prime: est.v_prime.map(|x| x.as_f64()),
        grid: est.basis.grid().points().iter().map(|x| x.as_f64()).collect(),
        edges: est.graph.edges().map(|(i, j)| (i + 1, j + 1)).collect(),
        graph_sha256: graph_hash(&est.graph),
        diagnostics: est.diagnostics.clone(),
    };
    fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    write_matrix_csv(&dir.join("basis.csv"), est.basis.columns())?;
    if let Some(ev) = est.basis.eigenvalues() {
        write_vector_csv(&dir.join("basis_eigenvalues.csv"), ev)?;
    }
    for (l, s) in est.coef.iter().enumerate() {
        write_matrix_csv(&dir.join(sigma_file(l)), s.matrix())?;
    }
    if let Some(res) = &est.residual {
        for (j, spec) in res.per_variable.iter().enumerate() {
            write_vector_csv(
                &dir.join(format!("residual_{:03}_eigenvalues.csv", j + 1)),
                &spec.eigenvalues,
            )?;
            write_matrix_csv(
                &dir.join(format!("residual_{:03}_eigenfunctions.csv", j + 1)),
                &spec.eigenfunctions,
            )?;
        }
    }
    Ok(())
}

/// Loads an estimate saved by [`save_estimate`].
pub fn load_estimate<T: Real>(dir: &Path) -> Result<CovarianceEstimate<T>> {
    let meta: EstimateMetadata = serde_json::from_str(&fs::read_to_string(dir.join("metadata.json"))?)?;
    let grid = Grid::new(meta.grid.iter().map(|&x| T::of(x)).collect())?;
    let columns = read_matrix_csv::<T>(&dir.join("basis.csv"))?;
    let ev_path = dir.join("basis_eigenvalues.csv");
    let eigenvalues = if ev_path.exists() {
        Some(read_vector_csv(&ev_path)?)
    } else {
        None
    };
    let basis = BasisSystem::new(grid, columns, eigenvalues)?;
    if basis.m() != meta.m || basis.grid().len() != meta.p {
        return Err(FggmError::DimensionMismatch(format!(
            "{}: basis is {}x{}, metadata says {}x{}",
            dir.display(),
            basis.grid().len(),
            basis.m(),
            meta.p,
            meta.m
        )));
    }
    let sigmas = (0..meta.m)
        .map(|l| SpdMatrix::new(read_matrix_csv(&dir.join(sigma_file(l)))?))
        .collect::<Result<Vec<_>>>()?;
    let coef = CoefCovarianceSet::new(sigmas)?;
    if meta.edges.iter().any(|&(i, j)| i == 0 || j == 0) {
        return Err(FggmError::InvalidArgument(format!(
            "{}: edges are 1-based",
            dir.display()
        )));
    }
    let graph = Graph::from_edges(meta.q, meta.edges.iter().map(|&(i, j)| (i - 1, j - 1)))?;
    if graph_hash(&graph) != meta.graph_sha256 {
        return Err(FggmError::InvalidArgument(format!(
            "{}: edge list does not match its recorded hash",
            dir.display()
        )));
    }
    let residual = match meta.m_prime {
        None => None,
        Some(_) => {
            let per_variable = (1..=meta.q)
                .map(|j| {
                    Ok(VariableSpectrum {
                        eigenvalues: read_vector_csv(&dir.join(format!("residual_{j:03}_eigenvalues.csv")))?,
                        eigenfunctions: read_matrix_csv(
                            &dir.join(format!("residual_{j:03}_eigenfunctions.csv")),
                        )?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(ResidualSpectrum { per_variable })
        }
    };
    Ok(CovarianceEstimate {
        kind: meta.kind,
        basis,
        coef,
        residual,
        graph,
        v: meta.v.map(T::of),
        v_prime: meta.v_prime.map(T::of),
        diagnostics: meta.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, f64::MAX, 2.0, -0.0]);
        write_matrix_csv(&path, &m).unwrap();
        let back: DMatrix<f64> = read_matrix_csv(&path).unwrap();
        assert_eq!(
            m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("col_1,col_2,col_3"));
    }

    #[test]
    fn ragged_matrix_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "col_1,col_2\n1,2\n3,x\n").unwrap();
        match read_matrix_csv::<f64>(&path) {
            Err(FggmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
