//! Reading external multivariate functional data from CSV.

use std::collections::BTreeMap;
use std::path::Path;

use fggm::{Dataset, Grid};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{DatasetConfig, Layout};
use crate::error::{CliError, Result};

/// What ingestion did to the raw file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub n_reps: usize,
    pub n_vars: usize,
    pub p: usize,
    pub raw_grid_min: f64,
    pub raw_grid_max: f64,
    /// Raw coordinates were mapped affinely into (0, 1).
    pub rescaled: bool,
    pub binned: bool,
    pub centered: bool,
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: row {line}: {msg}", path.display()))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::Config(format!("{}: no column named {name:?}", path.display())))
}

fn number(path: &Path, line: usize, col: &str, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| {
            bad(
                path,
                line,
                format!("column {col:?}: {field:?} is not a finite number"),
            )
        })
}

fn label(path: &Path, line: usize, col: &str, field: &str) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|_| {
        bad(
            path,
            line,
            format!("column {col:?}: {field:?} is not an integer label"),
        )
    })
}

/// `(rep label, var label) -> (s -> value)`
type Cells = BTreeMap<(i64, i64), BTreeMap<OrdF64, f64>>;

#[derive(Debug, Clone, Copy)]
struct OrdF64(f64);
impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn read_cells(path: &Path, layout: &Layout) -> Result<Cells> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .clone();
    let mut cells = Cells::new();
    let mut insert = |line: usize, key: (i64, i64), s: f64, v: f64| -> Result<()> {
        if cells.entry(key).or_default().insert(OrdF64(s), v).is_some() {
            return Err(bad(
                path,
                line,
                format!(
                    "duplicate observation for replicate {}, variable {}, s = {s}",
                    key.0, key.1
                ),
            ));
        }
        Ok(())
    };
    match layout {
        Layout::Long { rep, var, s, value } => {
            let (ci, cj, cs, cv) = (
                column(&headers, rep, path)?,
                column(&headers, var, path)?,
                column(&headers, s, path)?,
                column(&headers, value, path)?,
            );
            for (k, rec) in rdr.records().enumerate() {
                let line = k + 2;
                let rec = rec.map_err(|e| bad(path, line, e))?;
                let get = |c: usize| rec.get(c).unwrap_or("");
                let key = (label(path, line, rep, get(ci))?, label(path, line, var, get(cj))?);
                let sv = number(path, line, s, get(cs))?;
                let vv = number(path, line, value, get(cv))?;
                insert(line, key, sv, vv)?;
            }
        }
        Layout::Wide { rep, var } => {
            let (ci, cj) = (column(&headers, rep, path)?, column(&headers, var, path)?);
            let grid_cols: Vec<(usize, f64)> = headers
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != ci && *c != cj)
                .map(|(c, h)| number(path, 1, "header", h).map(|s| (c, s)))
                .collect::<Result<_>>()?;
            for (k, rec) in rdr.records().enumerate() {
                let line = k + 2;
                let rec = rec.map_err(|e| bad(path, line, e))?;
                let get = |c: usize| rec.get(c).unwrap_or("");
                let key = (label(path, line, rep, get(ci))?, label(path, line, var, get(cj))?);
                for &(c, s) in &grid_cols {
                    let field = get(c);
                    if field.is_empty() {
                        return Err(bad(
                            path,
                            line,
                            format!(
                                "missing value for replicate {}, variable {}, s = {s}",
                                key.0, key.1
                            ),
                        ));
                    }
                    insert(line, key, s, number(path, line, &headers[c], field)?)?;
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::Config(format!("{}: no observations", path.display())));
    }
    Ok(cells)
}

/// Reads, validates and optionally bins and centers a dataset.
pub fn ingest_dataset(cfg: &DatasetConfig) -> Result<(Dataset, IngestSummary)> {
    let path = cfg.path.as_path();
    let cells = read_cells(path, &cfg.layout)?;
    let reps: Vec<i64> = unique(cells.keys().map(|k| k.0));
    let vars: Vec<i64> = unique(cells.keys().map(|k| k.1));
    let first = cells.values().next().expect("non-empty");
    let grid: Vec<f64> = first.keys().map(|s| s.0).collect();
    for &r in &reps {
        for &v in &vars {
            let Some(curve) = cells.get(&(r, v)) else {
                return Err(CliError::Config(format!(
                    "{}: missing curve for replicate {r}, variable {v}",
                    path.display()
                )));
            };
            for s in &grid {
                if !curve.contains_key(&OrdF64(*s)) {
                    return Err(CliError::Config(format!(
                        "{}: missing cell replicate {r}, variable {v}, s = {s}",
                        path.display()
                    )));
                }
            }
            if curve.len() != grid.len() {
                let extra = curve.keys().find(|s| !first.contains_key(s)).expect("differs");
                return Err(CliError::Config(format!(
                    "{}: ragged grid: replicate {r}, variable {v} has s = {} not observed for replicate {}, variable {}",
                    path.display(),
                    extra.0,
                    reps[0],
                    vars[0]
                )));
            }
        }
    }
    let (n, q) = (reps.len(), vars.len());
    let mut coords = grid.clone();
    let mut vars_data: Vec<DMatrix<f64>> = vars
        .iter()
        .map(|&v| DMatrix::from_fn(n, grid.len(), |i, k| cells[&(reps[i], v)][&OrdF64(grid[k])]))
        .collect();
    let binned = cfg.bin_width.is_some();
    if let Some(width) = cfg.bin_width {
        let (centers, members) = bins(&grid, width);
        coords = centers;
        vars_data = vars_data
            .into_iter()
            .map(|x| {
                DMatrix::from_fn(n, members.len(), |i, b| {
                    members[b].iter().map(|&k| x[(i, k)]).sum::<f64>() / members[b].len() as f64
                })
            })
            .collect();
    }
    let (raw_min, raw_max) = (coords[0], coords[coords.len() - 1]);
    let rescaled = !(raw_min > 0.0 && raw_max < 1.0);
    if rescaled {
        let gap = coords
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let gap = if gap.is_finite() { gap } else { 1.0 };
        let (lo, hi) = (raw_min - gap / 2.0, raw_max + gap / 2.0);
        coords = coords.iter().map(|s| (s - lo) / (hi - lo)).collect();
    }
    let grid = Grid::new(coords).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut data =
        Dataset::new(grid, vars_data).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if cfg.center {
        data = data.centered();
    }
    let summary = IngestSummary {
        n_reps: n,
        n_vars: q,
        p: data.p(),
        raw_grid_min: raw_min,
        raw_grid_max: raw_max,
        rescaled,
        binned,
        centered: cfg.center,
    };
    Ok((data, summary))
}

fn unique(it: impl Iterator<Item = i64>) -> Vec<i64> {
    let mut v: Vec<i64> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Fixed-width bins starting at the smallest coordinate; empty bins are
/// dropped. Returns bin midpoints and member indices.
fn bins(grid: &[f64], width: f64) -> (Vec<f64>, Vec<Vec<usize>>) {
    let start = grid[0];
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (k, s) in grid.iter().enumerate() {
        let b = ((s - start) / width).floor() as u64;
        groups.entry(b).or_default().push(k);
    }
    let centers = groups.keys().map(|&b| start + (b as f64 + 0.5) * width).collect();
    (centers, groups.into_values().collect())
}
