//! Grids, functional datasets, basis systems, and principal component scores.
//!
//! All inner products are plain dot products of grid evaluations, so a basis
//! is orthonormal when its `p x m` column matrix has identity Gram matrix.

use nalgebra::{DMatrix, DVector};

use crate::covsel::SpdMatrix;
use crate::error::{FggmError, Result};
use crate::linalg::{self, components_for_fraction, fix_sign, sym_eigen_desc};
use crate::scalar::Real;

/// Strictly increasing observation points inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Real> {
    points: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(points: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(FggmError::InvalidArgument("grid has no points".into()));
        }
        if points.iter().any(|&s| !(s > T::zero() && s < T::one())) {
            return Err(FggmError::InvalidArgument(
                "grid points must lie in the open interval (0, 1)".into(),
            ));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FggmError::InvalidArgument(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(Grid { points })
    }

    /// `p` equally spaced points `(k - 1/2) / p`, `k = 1..=p`.
    pub fn midpoints(p: usize) -> Self {
        let pts = (0..p)
            .map(|k| (T::of_usize(k) + T::of(0.5)) / T::of_usize(p))
            .collect();
        Grid::new(pts).expect("midpoint grid is valid for p >= 1")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }
}

/// `N` replicates of `q` curves observed on a common grid.
///
/// Stored per variable: `variable(j)` is the `N x p` matrix whose row `i` is
/// the curve of replicate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset<T: Real> {
    grid: Grid<T>,
    vars: Vec<DMatrix<T>>,
}

impl<T: Real> FunctionalDataset<T> {
    pub fn new(grid: Grid<T>, vars: Vec<DMatrix<T>>) -> Result<Self> {
        let Some(first) = vars.first() else {
            return Err(FggmError::InvalidArgument("dataset has no variables".into()));
        };
        let n = first.nrows();
        if n == 0 {
            return Err(FggmError::InvalidArgument("dataset has no replicates".into()));
        }
        for (j, x) in vars.iter().enumerate() {
            if x.nrows() != n || x.ncols() != grid.len() {
                return Err(FggmError::DimensionMismatch(format!(
                    "variable {} is {}x{}, expected {}x{}",
                    j + 1,
                    x.nrows(),
                    x.ncols(),
                    n,
                    grid.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(FggmError::InvalidArgument(format!(
                    "variable {} has non-finite values",
                    j + 1
                )));
            }
        }
        Ok(FunctionalDataset { grid, vars })
    }

    /// Builds a dataset from `f(replicate, variable, grid index)`.
    pub fn from_fn(
        n: usize,
        q: usize,
        grid: Grid<T>,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let p = grid.len();
        let vars = (0..q)
            .map(|j| DMatrix::from_fn(n, p, |i, k| f(i, j, k)))
            .collect();
        FunctionalDataset::new(grid, vars)
    }

    pub fn n_reps(&self) -> usize {
        self.vars[0].nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn p(&self) -> usize {
        self.grid.len()
    }

    pub fn variable(&self, j: usize) -> &DMatrix<T> {
        &self.vars[j]
    }

    pub fn variables(&self) -> &[DMatrix<T>] {
        &self.vars
    }

    pub fn value(&self, rep: usize, var: usize, k: usize) -> T {
        self.vars[var][(rep, k)]
    }

    /// Stacked observation vector of replicate `i` (variable-major, length `q p`).
    pub fn stacked(&self, i: usize) -> DVector<T> {
        let p = self.p();
        DVector::from_fn(self.n_vars() * p, |r, _| self.vars[r / p][(i, r % p)])
    }

    /// Raw second-moment matrix `S = (1/N) Σ_i X_i X_i^T` (`qp x qp`).
    pub fn second_moment(&self) -> DMatrix<T> {
        let n = self.n_reps();
        let stacked = DMatrix::from_fn(n, self.n_vars() * self.p(), |i, r| {
            self.vars[r / self.p()][(i, r % self.p())]
        });
        let mut s = stacked.transpose() * &stacked / T::of_usize(n);
        linalg::symmetrize(&mut s);
        s
    }

    /// Dataset restricted to the given replicates, in the given order.
    pub fn select_replicates(&self, reps: &[usize]) -> Result<Self> {
        if let Some(&bad) = reps.iter().find(|&&i| i >= self.n_reps()) {
            return Err(FggmError::InvalidArgument(format!(
                "replicate {} out of range",
                bad + 1
            )));
        }
        let vars = self.vars.iter().map(|x| x.select_rows(reps)).collect();
        FunctionalDataset::new(self.grid.clone(), vars)
    }

    /// Subtracts the per-variable mean curve.
    pub fn centered(&self) -> Self {
        let vars = self
            .vars
            .iter()
            .map(|x| {
                let mean = x.row_mean();
                let mut out = x.clone();
                for mut row in out.row_iter_mut() {
                    row -= &mean;
                }
                out
            })
            .collect();
        FunctionalDataset {
            grid: self.grid.clone(),
            vars,
        }
    }
}

/// Discrete-orthonormal basis columns evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSystem<T: Real> {
    grid: Grid<T>,
    columns: DMatrix<T>,
    eigenvalues: Option<DVector<T>>,
}

impl<T: Real> BasisSystem<T> {
    /// Validates orthonormality and applies the sign convention (first entry
    /// above `1e-12` in magnitude is positive).
    pub fn new(grid: Grid<T>, mut columns: DMatrix<T>, eigenvalues: Option<DVector<T>>) -> Result<Self> {
        if columns.nrows() != grid.len() {
            return Err(FggmError::DimensionMismatch(format!(
                "basis has {} rows for a grid of {} points",
                columns.nrows(),
                grid.len()
            )));
        }
        if let Some(ev) = &eigenvalues {
            if ev.len() != columns.ncols() {
                return Err(FggmError::DimensionMismatch(format!(
                    "{} eigenvalues for {} basis columns",
                    ev.len(),
                    columns.ncols()
                )));
            }
        }
        let gram = columns.transpose() * &columns;
        let dev = linalg::max_abs(&(gram - DMatrix::identity(columns.ncols(), columns.ncols())));
        if dev > orthonormality_tol::<T>() {
            return Err(FggmError::InvalidArgument(format!(
                "basis columns are not orthonormal (Gram deviation {:.3e})",
                dev.as_f64()
            )));
        }
        for mut col in columns.column_iter_mut() {
            fix_sign(col.as_mut_slice());
        }
        Ok(BasisSystem {
            grid,
            columns,
            eigenvalues,
        })
    }

    pub fn m(&self) -> usize {
        self.columns.ncols()
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// `p x m` matrix of basis evaluations.
    pub fn columns(&self) -> &DMatrix<T> {
        &self.columns
    }

    pub fn column(&self, l: usize) -> DVector<T> {
        self.columns.column(l).into_owned()
    }

    pub fn eigenvalues(&self) -> Option<&DVector<T>> {
        self.eigenvalues.as_ref()
    }

    /// First `m` columns.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m > self.m() {
            return Err(FggmError::InvalidArgument(format!(
                "cannot truncate {} columns to {}",
                self.m(),
                m
            )));
        }
        Ok(BasisSystem {
            grid: self.grid.clone(),
            columns: self.columns.columns(0, m).into_owned(),
            eigenvalues: self.eigenvalues.as_ref().map(|e| e.rows(0, m).into_owned()),
        })
    }
}

fn orthonormality_tol<T: Real>() -> T {
    T::of(1e-10).max(T::default_epsilon() * T::of(1e3))
}

/// Per-basis score matrices: `basis(l)` is `N x q` with row `i` equal to
/// `θ̂_{il}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreArray<T: Real> {
    per_basis: Vec<DMatrix<T>>,
}

impl<T: Real> ScoreArray<T> {
    pub fn new(per_basis: Vec<DMatrix<T>>) -> Result<Self> {
        if let Some(first) = per_basis.first() {
            if per_basis.iter().any(|s| s.shape() != first.shape()) {
                return Err(FggmError::DimensionMismatch(
                    "score blocks differ in shape".into(),
                ));
            }
        }
        Ok(ScoreArray { per_basis })
    }

    pub fn n_basis(&self) -> usize {
        self.per_basis.len()
    }

    pub fn n_reps(&self) -> usize {
        self.per_basis.first().map_or(0, |s| s.nrows())
    }

    pub fn n_vars(&self) -> usize {
        self.per_basis.first().map_or(0, |s| s.ncols())
    }

    pub fn basis(&self, l: usize) -> &DMatrix<T> {
        &self.per_basis[l]
    }

    pub fn get(&self, rep: usize, l: usize, var: usize) -> T {
        self.per_basis[l][(rep, var)]
    }
}

/// Fourier system `1, √2 sin(2πks), √2 cos(2πks), k = 1, 2, …` on the grid,
/// re-orthonormalized in the discrete inner product.
///
/// Candidates that are numerically dependent on earlier columns (for
/// example `cos(πps)` on a midpoint grid) are skipped.
pub fn fourier_basis<T: Real>(m: usize, grid: &Grid<T>) -> Result<BasisSystem<T>> {
    let p = grid.len();
    if m == 0 || m > p {
        return Err(FggmError::InvalidArgument(format!(
            "Fourier basis size {} must be in 1..={}",
            m, p
        )));
    }
    let two_pi = T::two_pi();
    let sqrt2 = T::of(2.0).sqrt();
    let mut columns: Vec<DVector<T>> = Vec::with_capacity(m);
    let mut candidate = 0usize;
    while columns.len() < m {
        let k = candidate.div_ceil(2);
        if k > p {
            return Err(FggmError::InvalidArgument(format!(
                "grid of {} points cannot support {} independent Fourier columns",
                p, m
            )));
        }
        let raw = DVector::from_fn(p, |r, _| {
            let s = grid.points()[r];
            if candidate == 0 {
                T::one()
            } else if candidate % 2 == 1 {
                sqrt2 * (two_pi * T::of_usize(k) * s).sin()
            } else {
                sqrt2 * (two_pi * T::of_usize(k) * s).cos()
            }
        });
        candidate += 1;
        if let Some(col) = orthonormalize_against(&columns, raw) {
            columns.push(col);
        }
    }
    let mat = DMatrix::from_columns(&columns);
    BasisSystem::new(grid.clone(), mat, None)
}

/// Two passes of modified Gram–Schmidt; `None` if the vector is dependent.
fn orthonormalize_against<T: Real>(basis: &[DVector<T>], mut v: DVector<T>) -> Option<DVector<T>> {
    let original = v.norm();
    if original == T::zero() {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&v);
            v.axpy(-c, b, T::one());
        }
    }
    let norm = v.norm();
    if norm <= T::of(1e-8) * original {
        return None;
    }
    v /= norm;
    fix_sign(v.as_mut_slice());
    Some(v)
}

/// Pooled second-moment matrix `Σ_j (1/N) Σ_i X_ij X_ij^T` (`p x p`).
pub fn pooled_second_moment<T: Real>(data: &FunctionalDataset<T>) -> DMatrix<T> {
    let p = data.p();
    let n = T::of_usize(data.n_reps());
    let mut h = DMatrix::zeros(p, p);
    for x in data.variables() {
        h += x.transpose() * x / n;
    }
    linalg::symmetrize(&mut h);
    h
}

/// Leading eigenvectors of a `p x p` second-moment matrix reaching variance
/// fraction `v`.
///
/// `Ok(None)` when the matrix is numerically zero.
pub fn eigenbasis_for_fraction<T: Real>(
    moment: &DMatrix<T>,
    grid: &Grid<T>,
    v: T,
) -> Result<Option<BasisSystem<T>>> {
    check_fraction(v)?;
    let (values, vectors) = sym_eigen_desc(moment);
    let m = components_for_fraction(values.as_slice(), v);
    if m == 0 {
        return Ok(None);
    }
    let cols = vectors.columns(0, m).into_owned();
    let ev = values.rows(0, m).into_owned();
    BasisSystem::new(grid.clone(), cols, Some(ev)).map(Some)
}

/// Common eigenfunctions of the pooled covariance explaining fraction `v`
/// of the total variance.
pub fn pooled_fpca<T: Real>(data: &FunctionalDataset<T>, v: T) -> Result<BasisSystem<T>> {
    check_fraction(v)?;
    if data.n_reps() < 2 {
        return Err(FggmError::InvalidArgument(
            "pooled FPCA needs at least two replicates".into(),
        ));
    }
    let h = pooled_second_moment(data);
    eigenbasis_for_fraction(&h, data.grid(), v)?
        .ok_or_else(|| FggmError::InvalidArgument("data are identically zero".into()))
}

pub(crate) fn check_fraction<T: Real>(v: T) -> Result<()> {
    if v > T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(FggmError::InvalidArgument(format!(
            "variance fraction {} outside (0, 1]",
            v.as_f64()
        )))
    }
}

/// `θ̂_{il}[j] = φ̂_l^T X_ij`.
pub fn compute_scores<T: Real>(data: &FunctionalDataset<T>, basis: &BasisSystem<T>) -> Result<ScoreArray<T>> {
    if basis.grid() != data.grid() {
        return Err(FggmError::DimensionMismatch(
            "basis and dataset use different grids".into(),
        ));
    }
    let n = data.n_reps();
    let q = data.n_vars();
    let projected: Vec<DMatrix<T>> = data.variables().iter().map(|x| x * basis.columns()).collect();
    let per_basis = (0..basis.m())
        .map(|l| DMatrix::from_fn(n, q, |i, j| projected[j][(i, l)]))
        .collect();
    ScoreArray::new(per_basis)
}

/// Uncentered score second moments `Ŝ_l = (1/N) Σ_i θ̂_il θ̂_il^T`.
pub fn score_covariances<T: Real>(scores: &ScoreArray<T>) -> Result<Vec<SpdMatrix<T>>> {
    let n = scores.n_reps();
    if n == 0 {
        return Err(FggmError::InvalidArgument("no replicates in score array".into()));
    }
    (0..scores.n_basis())
        .map(|l| {
            let th = scores.basis(l);
            SpdMatrix::symmetrized(th.transpose() * th / T::of_usize(n))
        })
        .collect()
}
