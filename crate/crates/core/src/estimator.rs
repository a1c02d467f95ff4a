//! Graph-constrained estimation of partially separable covariance operators.
//!
//! The covariance of a `q`-variate process observed on `p` grid points is
//! modelled as `C = Σ_l Σ_l ⊗ φ_l φ_l^T`. Scores on a common basis make the
//! likelihood factor over `l`, so the graph-constrained maximum likelihood
//! estimate applies covariance selection to each score covariance `Ŝ_l`
//! separately. The stitched variant adds per-variable residual covariances
//! to the diagonal blocks to recover the variance lost to truncation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covsel::{covsel_scalar, BlockSpec, CovSelOptions, SpdMatrix};
use crate::error::{FggmError, Result};
use crate::fpca::{
    check_fraction, compute_scores, eigenbasis_for_fraction, pooled_fpca, score_covariances, BasisSystem,
    FunctionalDataset,
};
use crate::graph::Graph;
use crate::linalg::{self, spd_inverse, symmetrize};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Per-basis sample covariances with no graph constraint.
    Unconstrained,
    /// Per-basis covariance selection.
    Covsel,
    /// Covariance selection plus per-variable residual covariances.
    Stitch,
    /// Generating covariance of a simulation, not fitted from data.
    Truth,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Unconstrained => "unconstrained",
            EstimatorKind::Covsel => "covsel",
            EstimatorKind::Stitch => "stitch",
            EstimatorKind::Truth => "truth",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = FggmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(EstimatorKind::Unconstrained),
            "covsel" => Ok(EstimatorKind::Covsel),
            "stitch" => Ok(EstimatorKind::Stitch),
            "truth" => Ok(EstimatorKind::Truth),
            other => Err(FggmError::InvalidArgument(format!("unknown estimator {other:?}"))),
        }
    }
}

/// The `q x q` coefficient covariances `Σ_l`, one per basis column.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefCovarianceSet<T: Real> {
    sigmas: Vec<SpdMatrix<T>>,
}

impl<T: Real> CoefCovarianceSet<T> {
    pub fn new(sigmas: Vec<SpdMatrix<T>>) -> Result<Self> {
        if let Some(first) = sigmas.first() {
            if sigmas.iter().any(|s| s.dim() != first.dim()) {
                return Err(FggmError::DimensionMismatch(
                    "coefficient covariances differ in size".into(),
                ));
            }
        }
        Ok(CoefCovarianceSet { sigmas })
    }

    pub fn m(&self) -> usize {
        self.sigmas.len()
    }

    pub fn q(&self) -> usize {
        self.sigmas.first().map_or(0, |s| s.dim())
    }

    pub fn get(&self, l: usize) -> &SpdMatrix<T> {
        &self.sigmas[l]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SpdMatrix<T>> {
        self.sigmas.iter()
    }
}

/// Eigenpairs of one variable's residual second-moment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpectrum<T: Real> {
    pub eigenvalues: DVector<T>,
    /// `p x m'_j`, discrete-orthonormal columns.
    pub eigenfunctions: DMatrix<T>,
}

impl<T: Real> VariableSpectrum<T> {
    pub fn empty(p: usize) -> Self {
        VariableSpectrum {
            eigenvalues: DVector::zeros(0),
            eigenfunctions: DMatrix::zeros(p, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `Σ_l λ_l ψ_l ψ_l^T`.
    pub fn covariance(&self) -> DMatrix<T> {
        let scaled = &self.eigenfunctions * DMatrix::from_diagonal(&self.eigenvalues);
        let mut c = scaled * self.eigenfunctions.transpose();
        symmetrize(&mut c);
        c
    }
}

/// Residual spectra, one per variable; variables may keep different counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSpectrum<T: Real> {
    pub per_variable: Vec<VariableSpectrum<T>>,
}

impl<T: Real> ResidualSpectrum<T> {
    /// Largest number of retained residual components over variables.
    pub fn m_prime(&self) -> usize {
        self.per_variable.iter().map(|s| s.len()).max().unwrap_or(0)
    }
}

/// Convergence diagnostics of one covariance-selection subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovSelDiagnostics {
    pub iterations: usize,
    pub max_edge_residual: f64,
    pub max_noned_precision: f64,
}

/// A fitted covariance operator kept in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate<T: Real> {
    pub kind: EstimatorKind,
    pub basis: BasisSystem<T>,
    pub coef: CoefCovarianceSet<T>,
    pub residual: Option<ResidualSpectrum<T>>,
    pub graph: Graph,
    /// Variance fraction used to pick the common basis, if data-driven.
    pub v: Option<T>,
    /// Variance fraction used for the residual spectra.
    pub v_prime: Option<T>,
    pub diagnostics: Vec<CovSelDiagnostics>,
}

impl<T: Real> CovarianceEstimate<T> {
    pub fn q(&self) -> usize {
        self.graph.node_count()
    }

    pub fn p(&self) -> usize {
        self.basis.grid().len()
    }

    pub fn m(&self) -> usize {
        self.basis.m()
    }

    /// The same estimate with the residual part dropped.
    pub fn without_residual(&self) -> Self {
        CovarianceEstimate {
            residual: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions<T> {
    pub covsel: CovSelOptions<T>,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions {
            covsel: CovSelOptions::default(),
        }
    }
}

fn check_graph<T: Real>(data: &FunctionalDataset<T>, g: &Graph) -> Result<()> {
    if g.node_count() != data.n_vars() {
        return Err(FggmError::DimensionMismatch(format!(
            "graph has {} nodes but the dataset has {} variables",
            g.node_count(),
            data.n_vars()
        )));
    }
    Ok(())
}

/// Graph-constrained estimate on a data-driven basis: pooled FPCA at
/// variance fraction `v`, scores, score covariances, then covariance
/// selection on each.
pub fn fit_fggm_covsel<T: Real>(
    data: &FunctionalDataset<T>,
    g: &Graph,
    v: T,
    opts: &FitOptions<T>,
) -> Result<CovarianceEstimate<T>> {
    check_fraction(v)?;
    check_graph(data, g)?;
    let basis = pooled_fpca(data, v)?;
    let mut est = fit_covsel_with_basis(data, basis, g, opts)?;
    est.v = Some(v);
    Ok(est)
}

/// Graph-constrained maximum likelihood estimate for a known basis.
pub fn fit_covsel_with_basis<T: Real>(
    data: &FunctionalDataset<T>,
    basis: BasisSystem<T>,
    g: &Graph,
    opts: &FitOptions<T>,
) -> Result<CovarianceEstimate<T>> {
    check_graph(data, g)?;
    let scores = compute_scores(data, &basis)?;
    let sample = score_covariances(&scores)?;
    let mut sigmas = Vec::with_capacity(sample.len());
    let mut diagnostics = Vec::with_capacity(sample.len());
    for (l, s) in sample.iter().enumerate() {
        let res = covsel_scalar(s, g, &opts.covsel).map_err(|e| match e {
            FggmError::NotPositiveDefinite(_) => FggmError::NotPositiveDefinite(format!(
                "score covariance for basis function {} ({} replicates, {} variables); \
                 lower the variance fraction or use more replicates",
                l + 1,
                data.n_reps(),
                data.n_vars()
            )),
            other => other,
        })?;
        diagnostics.push(CovSelDiagnostics {
            iterations: res.iterations,
            max_edge_residual: res.max_edge_residual.as_f64(),
            max_noned_precision: res.max_noned_precision.as_f64(),
        });
        sigmas.push(res.selected);
    }
    Ok(CovarianceEstimate {
        kind: EstimatorKind::Covsel,
        basis,
        coef: CoefCovarianceSet::new(sigmas)?,
        residual: None,
        graph: g.clone(),
        v: None,
        v_prime: None,
        diagnostics,
    })
}

/// Profile likelihood estimate without a graph: the raw `Ŝ_l` on the pooled
/// FPCA basis.
pub fn fit_unconstrained<T: Real>(data: &FunctionalDataset<T>, v: T) -> Result<CovarianceEstimate<T>> {
    check_fraction(v)?;
    let basis = pooled_fpca(data, v)?;
    let mut est = fit_unconstrained_with_basis(data, basis)?;
    est.v = Some(v);
    Ok(est)
}

pub fn fit_unconstrained_with_basis<T: Real>(
    data: &FunctionalDataset<T>,
    basis: BasisSystem<T>,
) -> Result<CovarianceEstimate<T>> {
    let scores = compute_scores(data, &basis)?;
    let sample = score_covariances(&scores)?;
    Ok(CovarianceEstimate {
        kind: EstimatorKind::Unconstrained,
        basis,
        coef: CoefCovarianceSet::new(sample)?,
        residual: None,
        graph: Graph::complete(data.n_vars()),
        v: None,
        v_prime: None,
        diagnostics: Vec::new(),
    })
}

/// Covariance selection at fraction `v`, then residual FPCA per variable at
/// fraction `v_prime`, with the residual covariances added to the diagonal
/// blocks.
pub fn fit_fggm_stitch<T: Real>(
    data: &FunctionalDataset<T>,
    g: &Graph,
    v: T,
    v_prime: T,
    opts: &FitOptions<T>,
) -> Result<CovarianceEstimate<T>> {
    check_fraction(v_prime)?;
    let mut est = fit_fggm_covsel(data, g, v, opts)?;
    est.residual = Some(residual_spectrum(data, &est.basis, v_prime)?);
    est.kind = EstimatorKind::Stitch;
    est.v_prime = Some(v_prime);
    Ok(est)
}

/// Per-variable FPCA of the residuals `Z_ij = X_ij - Σ_l θ̂_il[j] φ̂_l`.
pub fn residual_spectrum<T: Real>(
    data: &FunctionalDataset<T>,
    basis: &BasisSystem<T>,
    v_prime: T,
) -> Result<ResidualSpectrum<T>> {
    check_fraction(v_prime)?;
    let phi = basis.columns();
    let projector = phi * phi.transpose();
    let n = T::of_usize(data.n_reps());
    let per_variable = data
        .variables()
        .iter()
        .map(|x| {
            let z = x - x * &projector;
            let mut moment = z.transpose() * &z / n;
            symmetrize(&mut moment);
            Ok(match eigenbasis_for_fraction(&moment, data.grid(), v_prime)? {
                Some(b) => VariableSpectrum {
                    eigenvalues: b.eigenvalues().cloned().unwrap_or_else(|| DVector::zeros(b.m())),
                    eigenfunctions: b.columns().clone(),
                },
                None => VariableSpectrum::empty(data.p()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualSpectrum { per_variable })
}

/// `p x p` block `(i, j)` of the assembled estimate.
pub fn assemble_block<T: Real>(est: &CovarianceEstimate<T>, i: usize, j: usize) -> Result<DMatrix<T>> {
    let q = est.q();
    if i >= q || j >= q {
        return Err(FggmError::InvalidArgument(format!(
            "block ({}, {}) out of range for {} variables",
            i + 1,
            j + 1,
            q
        )));
    }
    let weights = DVector::from_fn(est.m(), |l, _| est.coef.get(l).matrix()[(i, j)]);
    let phi = est.basis.columns();
    let mut block = phi * DMatrix::from_diagonal(&weights) * phi.transpose();
    if i == j {
        if let Some(res) = &est.residual {
            block += res.per_variable[i].covariance();
        }
        symmetrize(&mut block);
    }
    Ok(block)
}

/// Dense `qp x qp` matrix `Σ_l Σ̂_l ⊗ φ̂_l φ̂_l^T` (plus residual terms on the
/// diagonal blocks), variable-major. Exactly symmetric.
pub fn assemble_full<T: Real>(est: &CovarianceEstimate<T>) -> DMatrix<T> {
    let (q, p) = (est.q(), est.p());
    let mut out = DMatrix::zeros(q * p, q * p);
    for i in 0..q {
        for j in i..q {
            let block = assemble_block(est, i, j).expect("indices in range");
            out.view_mut((i * p, j * p), (p, p)).copy_from(&block);
            if i != j {
                out.view_mut((j * p, i * p), (p, p)).copy_from(&block.transpose());
            }
        }
    }
    out
}

/// Denominators below this trigger a conditioning warning.
const CONDITIONING_FLOOR: f64 = 1e-12;

/// Conditional cross-covariance surface of variables `i` and `j` given the
/// rest: `Σ_l c_l φ̂_l φ̂_l^T` with
/// `c_l = -ω_ij / (ω_ii ω_jj - ω_ij^2)` and `ω = Σ̂_l^{-1}`.
///
/// Only the partially separable part of the estimate is used.
pub fn conditional_cross_cov<T: Real>(est: &CovarianceEstimate<T>, i: usize, j: usize) -> Result<DMatrix<T>> {
    let q = est.q();
    if i >= q || j >= q || i == j {
        return Err(FggmError::InvalidArgument(format!(
            "conditional cross-covariance needs distinct variables in 1..={}, got ({}, {})",
            q,
            i + 1,
            j + 1
        )));
    }
    let mut weights = DVector::zeros(est.m());
    for (l, sigma) in est.coef.iter().enumerate() {
        let omega = spd_inverse(sigma.matrix())
            .map_err(|_| FggmError::Singular(format!("coefficient covariance {}", l + 1)))?;
        let (oii, ojj, oij) = (omega[(i, i)], omega[(j, j)], omega[(i, j)]);
        let denom = oii * ojj - oij * oij;
        if denom.abs() < T::of(CONDITIONING_FLOOR) {
            log::warn!(
                "basis {}: conditional cross-covariance denominator {:.3e} for pair ({}, {})",
                l + 1,
                denom.as_f64(),
                i + 1,
                j + 1
            );
        }
        weights[l] = -oij / denom;
    }
    let phi = est.basis.columns();
    Ok(phi * DMatrix::from_diagonal(&weights) * phi.transpose())
}

/// Gaussian log-likelihood of `n` score vectors per basis with second
/// moments `sample[l]` under coefficient covariances `sigmas[l]`.
pub fn profile_log_likelihood<T: Real>(
    sample: &[SpdMatrix<T>],
    sigmas: &[SpdMatrix<T>],
    n: usize,
) -> Result<T> {
    if sample.len() != sigmas.len() {
        return Err(FggmError::DimensionMismatch(format!(
            "{} sample covariances for {} model covariances",
            sample.len(),
            sigmas.len()
        )));
    }
    let mut total = T::zero();
    for (s, sigma) in sample.iter().zip(sigmas) {
        let q = T::of_usize(sigma.dim());
        let chol = sigma.cholesky()?;
        let solved = chol.solve(s.matrix());
        total += solved.trace() + linalg::log_det(&chol) + q * T::two_pi().ln();
    }
    Ok(-T::of(0.5) * T::of_usize(n) * total)
}

/// Block partition of an estimate's dense layout.
pub fn block_spec<T: Real>(est: &CovarianceEstimate<T>) -> BlockSpec {
    BlockSpec::uniform(est.q(), est.p())
}
