//! Dempster covariance selection by iterative proportional scaling.
//!
//! Given a positive definite `A` partitioned into variable blocks and a graph,
//! covariance selection finds the unique positive definite `B` that agrees
//! with `A` on diagonal and edge blocks and whose inverse vanishes on every
//! non-edge block. It is also the Gaussian maximum likelihood estimate under
//! the graph when `A` is a sample covariance.
//!
//! The solver cycles over maximal cliques. A clique update sets the precision
//! block to `A_cc^{-1} + Ω_{c,¬c} Ω_{¬c,¬c}^{-1} Ω_{¬c,c}`; equivalently it adds
//! `A_cc^{-1} - W_cc^{-1}` to `Ω_cc`, where `W = Ω^{-1}`. Both `Ω` and `W` are
//! carried along, `W` being updated by the matching rank-|c| correction, so a
//! sweep costs a few matrix products and no large factorizations.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{FggmError, Result};
use crate::graph::{maximal_cliques, Graph};
use crate::linalg::{self, spd_inverse, symmetrize};
use crate::scalar::Real;

/// Symmetric matrix that is expected to be positive definite.
///
/// Symmetry is checked on construction; definiteness is checked lazily by
/// whichever routine needs a Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix<T: Real>(DMatrix<T>);

impl<T: Real> SpdMatrix<T> {
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        let tol = T::of(1e-12).max(T::default_epsilon() * T::of(64.0));
        if !linalg::is_symmetric(&m, tol) {
            return Err(FggmError::InvalidArgument(format!(
                "{}x{} matrix is not symmetric",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(SpdMatrix(m))
    }

    /// Wraps a matrix after forcing exact symmetry.
    pub fn symmetrized(mut m: DMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(FggmError::DimensionMismatch(format!(
                "{}x{} matrix is not square",
                m.nrows(),
                m.ncols()
            )));
        }
        symmetrize(&mut m);
        Ok(SpdMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }

    pub fn cholesky(&self) -> Result<Cholesky<T, Dyn>> {
        linalg::cholesky(&self.0, "SpdMatrix")
    }
}

impl<T: Real> AsRef<DMatrix<T>> for SpdMatrix<T> {
    fn as_ref(&self) -> &DMatrix<T> {
        &self.0
    }
}

/// Contiguous partition of matrix rows into per-variable blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockSpec {
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(FggmError::InvalidArgument("block sizes must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(BlockSpec { sizes, offsets })
    }

    /// `q` blocks of `p` rows each (variable-major layout).
    pub fn uniform(q: usize, p: usize) -> Self {
        BlockSpec::from_sizes(vec![p; q]).expect("uniform block size must be positive")
    }

    /// One row per variable.
    pub fn scalar(q: usize) -> Self {
        BlockSpec::uniform(q, 1)
    }

    pub fn groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn size(&self, group: usize) -> usize {
        self.sizes[group]
    }

    pub fn range(&self, group: usize) -> std::ops::Range<usize> {
        self.offsets[group]..self.offsets[group + 1]
    }

    /// Variable owning matrix row `row`.
    pub fn group_of(&self, row: usize) -> usize {
        match self.offsets.binary_search(&row) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    }

    /// Row indices of a set of variables, concatenated in the given order.
    pub fn indices(&self, groups: &[usize]) -> Vec<usize> {
        groups.iter().flat_map(|&g| self.range(g)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CovSelOptions<T> {
    /// Absolute tolerance on the largest diagonal/edge-block deviation.
    pub tol: T,
    /// Absolute tolerance on the largest non-edge entry of the inverse.
    pub precision_tol: T,
    /// Maximum number of sweeps over the clique cover.
    pub max_iter: usize,
    /// Record `tr(B^{-1} A) + log|B|` after every sweep.
    pub record_objective: bool,
}

impl<T: Real> Default for CovSelOptions<T> {
    fn default() -> Self {
        CovSelOptions {
            tol: T::of(1e-9),
            precision_tol: T::of(1e-9),
            max_iter: 500,
            record_objective: false,
        }
    }
}

impl<T: Real> CovSelOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        CovSelOptions {
            tol,
            precision_tol: tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovSelResult<T: Real> {
    pub selected: SpdMatrix<T>,
    /// Inverse of `selected`, as used for the precision diagnostic.
    pub precision: DMatrix<T>,
    pub iterations: usize,
    pub max_edge_residual: T,
    pub max_noned_precision: T,
    /// Objective before the first sweep followed by one value per sweep;
    /// empty unless requested.
    pub objective_trace: Vec<T>,
}

const MAX_STALLED_REFRESHES: usize = 3;

/// Covariance selection of `a` under `g` with the given block partition.
///
/// Stops with [`FggmError::NonConvergence`] after `max_iter` sweeps, or once
/// the edge constraints hold but three successive refreshes of the working
/// covariance fail to halve the non-edge precision residual.
pub fn covsel_ips<T: Real>(
    a: &SpdMatrix<T>,
    g: &Graph,
    blocks: &BlockSpec,
    opts: &CovSelOptions<T>,
) -> Result<CovSelResult<T>> {
    let a = a.matrix();
    let n = a.nrows();
    check_layout(n, g, blocks)?;
    if opts.tol <= T::zero() || opts.precision_tol <= T::zero() || opts.max_iter == 0 {
        return Err(FggmError::InvalidArgument(
            "covariance selection needs positive tolerances and max_iter".into(),
        ));
    }
    ensure_well_posed(a)?;

    let cover = maximal_cliques(g);
    let clique_rows: Vec<Vec<usize>> = cover.iter().map(|c| blocks.indices(c)).collect();

    let mut omega = DMatrix::zeros(n, n);
    let mut w = DMatrix::zeros(n, n);
    for v in 0..blocks.groups() {
        let r = blocks.range(v);
        let block = a.view((r.start, r.start), (r.len(), r.len())).into_owned();
        let inv = spd_inverse(&block)
            .map_err(|_| FggmError::NotPositiveDefinite(format!("diagonal block of variable {}", v + 1)))?;
        omega
            .view_mut((r.start, r.start), (r.len(), r.len()))
            .copy_from(&inv);
        w.view_mut((r.start, r.start), (r.len(), r.len()))
            .copy_from(&block);
    }

    let mut trace = Vec::new();
    if opts.record_objective {
        trace.push(objective(&omega, a)?);
    }

    let mut iterations = 0;
    let mut last_noned: Option<T> = None;
    let mut stalled = 0;
    loop {
        iterations += 1;
        for rows in &clique_rows {
            clique_update(&mut w, &mut omega, a, rows)?;
        }
        if opts.record_objective {
            trace.push(objective(&omega, a)?);
        }
        let edge_residual = edge_residual(&w, a, g, blocks);
        if edge_residual <= opts.tol {
            let precision =
                spd_inverse(&w).map_err(|_| FggmError::NotPositiveDefinite("selected matrix".into()))?;
            let noned = noned_precision(&precision, g, blocks);
            if noned <= opts.precision_tol {
                return Ok(CovSelResult {
                    selected: SpdMatrix(w),
                    precision,
                    iterations,
                    max_edge_residual: edge_residual,
                    max_noned_precision: noned,
                    objective_trace: trace,
                });
            }
            // Refreshing cannot push the check below its rounding floor
            // (about eps x condition number x |precision|).
            if last_noned.is_some_and(|prev| noned >= prev * T::of(0.5)) {
                stalled += 1;
            } else {
                stalled = 0;
            }
            last_noned = Some(noned);
            if iterations >= opts.max_iter || stalled >= MAX_STALLED_REFRESHES {
                return Err(non_convergence(iterations, edge_residual, noned));
            }
            // the carried covariance drifted from the carried precision
            w = spd_inverse(&omega)?;
        } else if iterations >= opts.max_iter {
            let noned = spd_inverse(&w)
                .map(|p| noned_precision(&p, g, blocks))
                .unwrap_or(T::max_value().unwrap_or_else(T::one));
            return Err(non_convergence(iterations, edge_residual, noned));
        }
    }
}

/// Covariance selection with one row per variable.
pub fn covsel_scalar<T: Real>(
    a: &SpdMatrix<T>,
    g: &Graph,
    opts: &CovSelOptions<T>,
) -> Result<CovSelResult<T>> {
    covsel_ips(a, g, &BlockSpec::scalar(a.dim()), opts)
}

/// Residual pair `(max |B - A|` over diagonal/edge blocks`, max |B^{-1}|`
/// over non-edge blocks`)`.
pub fn verify_graphical<T: Real>(
    b: &SpdMatrix<T>,
    a: &SpdMatrix<T>,
    g: &Graph,
    blocks: &BlockSpec,
) -> Result<(T, T)> {
    if a.dim() != b.dim() {
        return Err(FggmError::DimensionMismatch(format!(
            "compared matrices are {} and {}",
            b.dim(),
            a.dim()
        )));
    }
    check_layout(b.dim(), g, blocks)?;
    let edge = edge_residual(b.matrix(), a.matrix(), g, blocks);
    let precision = spd_inverse(b.matrix())?;
    Ok((edge, noned_precision(&precision, g, blocks)))
}

fn check_layout(n: usize, g: &Graph, blocks: &BlockSpec) -> Result<()> {
    if blocks.dim() != n {
        return Err(FggmError::DimensionMismatch(format!(
            "block partition covers {} rows but the matrix has {}",
            blocks.dim(),
            n
        )));
    }
    if blocks.groups() != g.node_count() {
        return Err(FggmError::DimensionMismatch(format!(
            "{} blocks but the graph has {} nodes",
            blocks.groups(),
            g.node_count()
        )));
    }
    Ok(())
}

/// Rejects matrices whose smallest eigenvalue is below `1e-10` times the mean
/// diagonal: `A - εI` must admit a Cholesky factor.
fn ensure_well_posed<T: Real>(a: &DMatrix<T>) -> Result<()> {
    let n = a.nrows();
    if n == 0 {
        return Err(FggmError::InvalidArgument("empty matrix".into()));
    }
    let mean_diag = a.diagonal().sum() / T::of_usize(n);
    let eps = T::of(1e-10) * mean_diag;
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= eps;
    }
    if mean_diag <= T::zero() || shifted.cholesky().is_none() {
        return Err(FggmError::NotPositiveDefinite(
            "input to covariance selection has an eigenvalue below 1e-10 x mean diagonal".into(),
        ));
    }
    Ok(())
}

fn clique_update<T: Real>(
    w: &mut DMatrix<T>,
    omega: &mut DMatrix<T>,
    a: &DMatrix<T>,
    rows: &[usize],
) -> Result<()> {
    let k = rows.len();
    let x = gather(w, rows);
    let y = gather(a, rows);
    let x_inv = spd_inverse(&x)
        .map_err(|_| FggmError::NotPositiveDefinite("working covariance on a clique".into()))?;
    let y_inv =
        spd_inverse(&y).map_err(|_| FggmError::NotPositiveDefinite("input covariance on a clique".into()))?;

    let mut m = &x_inv * (&y - &x) * &x_inv;
    symmetrize(&mut m);
    let u = w.select_columns(rows);
    let v = &u * &m;
    w.gemm(T::one(), &v, &u.transpose(), T::one());
    symmetrize(w);
    for (bi, &i) in rows.iter().enumerate() {
        for (bj, &j) in rows.iter().enumerate() {
            w[(i, j)] = y[(bi, bj)];
            omega[(i, j)] += y_inv[(bi, bj)] - x_inv[(bi, bj)];
        }
    }
    debug_assert_eq!(k, y.nrows());
    Ok(())
}

fn gather<T: Real>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| m[(rows[i], rows[j])])
}

/// `tr(Ω A) - log|Ω|`, i.e. `tr(B^{-1} A) + log|B|` with `B = Ω^{-1}`.
pub(crate) fn objective<T: Real>(omega: &DMatrix<T>, a: &DMatrix<T>) -> Result<T> {
    let chol = linalg::cholesky(omega, "working precision")?;
    Ok(omega.dot(a) - linalg::log_det(&chol))
}

fn edge_residual<T: Real>(b: &DMatrix<T>, a: &DMatrix<T>, g: &Graph, blocks: &BlockSpec) -> T {
    block_max(g, blocks, true, |i, j| (b[(i, j)] - a[(i, j)]).abs())
}

fn noned_precision<T: Real>(p: &DMatrix<T>, g: &Graph, blocks: &BlockSpec) -> T {
    block_max(g, blocks, false, |i, j| p[(i, j)].abs())
}

fn block_max<T: Real>(g: &Graph, blocks: &BlockSpec, constrained: bool, f: impl Fn(usize, usize) -> T) -> T {
    let mut out = T::zero();
    for u in 0..blocks.groups() {
        for v in u..blocks.groups() {
            if g.is_constrained(u, v) != constrained {
                continue;
            }
            for i in blocks.range(u) {
                for j in blocks.range(v) {
                    out = out.max(f(i, j));
                }
            }
        }
    }
    out
}

fn non_convergence<T: Real>(iterations: usize, edge: T, precision: T) -> FggmError {
    FggmError::NonConvergence {
        iterations,
        edge_residual: edge.as_f64(),
        precision_residual: precision.as_f64(),
    }
}
