//! Synthetic multivariate functional data.
//!
//! Two generating covariances are supported: a partially separable one whose
//! per-basis precision matrices have exactly the sparsity of a graph, and a
//! multivariate exponential (Matérn, smoothness 1/2) covariance made
//! graphical by block covariance selection on the observation grid.
//!
//! Every random draw comes from ChaCha20 seeded with the user seed, with a
//! separate stream per purpose so that adding draws to one generator never
//! shifts another.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

use crate::covsel::{covsel_ips, BlockSpec, CovSelOptions, SpdMatrix};
use crate::error::{FggmError, Result};
use crate::estimator::{CoefCovarianceSet, CovarianceEstimate, EstimatorKind};
use crate::fpca::{fourier_basis, BasisSystem, FunctionalDataset, Grid};
use crate::graph::Graph;
use crate::linalg::{self, spd_inverse, symmetrize};
use crate::scalar::Real;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Precisions = 1,
    Samples = 2,
    MarginalParameters = 3,
    Correlation = 4,
    Split = 5,
}

/// ChaCha20 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Partially separable generator: `Σ_l = a_l Ω_l^{-1}` with
/// `a_l = decay_coef · l^{-decay_exp}` on a Fourier basis of size `l_max`.
#[derive(Debug, Clone)]
pub struct PartialSeparableSpec<T: Real> {
    pub graph: Graph,
    pub l_max: usize,
    pub grid: Grid<T>,
    pub decay_coef: T,
    pub decay_exp: T,
    pub seed: u64,
}

impl<T: Real> PartialSeparableSpec<T> {
    /// Simulation defaults: 101 basis functions, 200 grid points,
    /// `a_l = 3 l^{-1.8}`.
    pub fn simulation(graph: Graph, seed: u64) -> Self {
        PartialSeparableSpec {
            graph,
            l_max: 101,
            grid: Grid::midpoints(200),
            decay_coef: T::of(3.0),
            decay_exp: T::of(1.8),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.l_max == 0 || self.l_max > self.grid.len() {
            return Err(FggmError::InvalidArgument(format!(
                "basis count {} must be in 1..={}",
                self.l_max,
                self.grid.len()
            )));
        }
        if self.decay_coef <= T::zero() || self.decay_exp <= T::zero() {
            return Err(FggmError::InvalidArgument(
                "decay coefficient and exponent must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `a_l = coef · l^{-exp}` for `l = 1..=count`.
pub fn decay_constants<T: Real>(count: usize, coef: T, exp: T) -> Vec<T> {
    (1..=count).map(|l| coef * T::of_usize(l).powf(-exp)).collect()
}

/// Random precision matrices with exactly the sparsity pattern of `g`.
///
/// Edge entries are drawn with magnitude in `[0.5, 1]` and random sign on a
/// unit diagonal. Each row whose off-diagonal absolute sum exceeds 2/3 is
/// divided by 1.5 times that sum, the result is symmetrized, and if some
/// row still fails strict diagonal dominance all off-diagonal entries are
/// shrunk so the largest row sum is 2/3.
pub fn gen_precisions<T: Real>(g: &Graph, count: usize, seed: u64) -> Vec<SpdMatrix<T>> {
    let q = g.node_count();
    let mut rng = stream_rng(seed, Stream::Precisions);
    let two_thirds = 2.0 / 3.0;
    (0..count)
        .map(|_| {
            let mut m = DMatrix::<f64>::identity(q, q);
            for (i, j) in g.edges() {
                let magnitude = rng.random_range(0.5..=1.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                m[(i, j)] = sign * magnitude;
                m[(j, i)] = sign * magnitude;
            }
            for i in 0..q {
                let s = off_diagonal_sum(&m, i);
                if s > two_thirds {
                    for k in (0..q).filter(|&k| k != i) {
                        m[(i, k)] /= 1.5 * s;
                    }
                }
            }
            symmetrize(&mut m);
            let worst = (0..q).map(|i| off_diagonal_sum(&m, i)).fold(0.0, f64::max);
            if worst >= 1.0 {
                let shrink = two_thirds / worst;
                for i in 0..q {
                    for k in (0..q).filter(|&k| k != i) {
                        m[(i, k)] *= shrink;
                    }
                }
            }
            SpdMatrix::new(m.map(T::of)).expect("symmetrized matrix")
        })
        .collect()
}

fn off_diagonal_sum(m: &DMatrix<f64>, i: usize) -> f64 {
    (0..m.ncols()).filter(|&k| k != i).map(|k| m[(i, k)].abs()).sum()
}

/// Factored form of a partially separable generating covariance.
#[derive(Debug, Clone)]
pub struct PartialSeparableTruth<T: Real> {
    pub graph: Graph,
    pub basis: BasisSystem<T>,
    pub coef: CoefCovarianceSet<T>,
    pub precisions: Vec<SpdMatrix<T>>,
    pub decay: Vec<T>,
}

impl<T: Real> PartialSeparableTruth<T> {
    /// The truth viewed as a covariance estimate, for assembly and the
    /// conditional cross-covariance routine.
    pub fn as_estimate(&self) -> CovarianceEstimate<T> {
        CovarianceEstimate {
            kind: EstimatorKind::Truth,
            basis: self.basis.clone(),
            coef: self.coef.clone(),
            residual: None,
            graph: self.graph.clone(),
            v: None,
            v_prime: None,
            diagnostics: Vec::new(),
        }
    }

    /// Same truth keeping only the first `m` terms.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.coef.m() {
            return Err(FggmError::InvalidArgument(format!(
                "truncation level {} outside 1..={}",
                m,
                self.coef.m()
            )));
        }
        Ok(PartialSeparableTruth {
            graph: self.graph.clone(),
            basis: self.basis.truncated(m)?,
            coef: CoefCovarianceSet::new(self.coef.iter().take(m).cloned().collect())?,
            precisions: self.precisions[..m].to_vec(),
            decay: self.decay[..m].to_vec(),
        })
    }

    /// Marginal variance `C_jj(s, s)` at every grid point.
    pub fn marginal_variance(&self, j: usize) -> DVector<T> {
        let phi = self.basis.columns();
        DVector::from_fn(phi.nrows(), |r, _| {
            self.coef.iter().enumerate().fold(T::zero(), |acc, (l, s)| {
                acc + s.matrix()[(j, j)] * phi[(r, l)] * phi[(r, l)]
            })
        })
    }
}

/// Partially separable truth and its dense `qp x qp` covariance.
pub fn build_ps_covariance<T: Real>(
    spec: &PartialSeparableSpec<T>,
) -> Result<(DMatrix<T>, PartialSeparableTruth<T>)> {
    spec.validate()?;
    let basis = fourier_basis(spec.l_max, &spec.grid)?;
    let precisions = gen_precisions::<T>(&spec.graph, spec.l_max, spec.seed);
    let decay = decay_constants(spec.l_max, spec.decay_coef, spec.decay_exp);
    let sigmas = precisions
        .iter()
        .zip(&decay)
        .map(|(omega, &a)| SpdMatrix::symmetrized(spd_inverse(omega.matrix())? * a))
        .collect::<Result<Vec<_>>>()?;
    let truth = PartialSeparableTruth {
        graph: spec.graph.clone(),
        basis,
        coef: CoefCovarianceSet::new(sigmas)?,
        precisions,
        decay,
    };
    let dense = crate::estimator::assemble_full(&truth.as_estimate());
    Ok((dense, truth))
}

/// Multivariate exponential covariance on a 1-d grid.
#[derive(Debug, Clone)]
pub struct MaternSpec<T: Real> {
    pub grid: Grid<T>,
    /// Marginal variances `σ_ii`.
    pub sigma_marg: Vec<T>,
    /// Marginal ranges `φ_ii` in `exp(-h / φ)`.
    pub phi_marg: Vec<T>,
    pub nu: T,
    pub delta_a: T,
    pub dim: usize,
    /// Correlation matrix `R = (r_ij)`.
    pub correlation: DMatrix<T>,
    pub seed: u64,
}

/// Note recorded in generator metadata.
pub const MATERN_DIAGONAL_NOTE: &str =
    "diagonal blocks use sigma_ii * exp(-h / phi_ii); the cross-covariance \
     parametrization is applied only to i != j";

impl<T: Real> MaternSpec<T> {
    /// Simulation defaults: `ν = 1/2`, `Δ_A = 0`, `d = 1`, marginal variances
    /// and ranges independently permuted from `q` equispaced values in
    /// `(1, 5)`, and a random correlation matrix.
    pub fn simulation(q: usize, grid: Grid<T>, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::MarginalParameters);
        let levels: Vec<T> = (0..q)
            .map(|k| T::of(1.0 + 4.0 * (k as f64 + 0.5) / q as f64))
            .collect();
        let sigma_marg = permuted(&levels, &mut rng);
        let phi_marg = permuted(&levels, &mut rng);
        MaternSpec {
            grid,
            sigma_marg,
            phi_marg,
            nu: T::of(0.5),
            delta_a: T::zero(),
            dim: 1,
            correlation: random_correlation(q, seed),
            seed,
        }
    }

    pub fn q(&self) -> usize {
        self.sigma_marg.len()
    }

    fn validate(&self) -> Result<()> {
        let q = self.q();
        if q == 0 || self.phi_marg.len() != q || self.correlation.shape() != (q, q) {
            return Err(FggmError::DimensionMismatch(format!(
                "Matérn spec has {} variances, {} ranges and a {}x{} correlation matrix",
                q,
                self.phi_marg.len(),
                self.correlation.nrows(),
                self.correlation.ncols()
            )));
        }
        if self
            .sigma_marg
            .iter()
            .chain(&self.phi_marg)
            .any(|&x| x <= T::zero())
        {
            return Err(FggmError::InvalidArgument(
                "marginal variances and ranges must be positive".into(),
            ));
        }
        if (self.nu - T::of(0.5)).abs() > T::default_epsilon() {
            return Err(FggmError::InvalidArgument(
                "only smoothness 1/2 (exponential correlation) is supported".into(),
            ));
        }
        if self.dim != 1 {
            return Err(FggmError::InvalidArgument(
                "only one-dimensional domains are supported".into(),
            ));
        }
        for i in 0..q {
            if (self.correlation[(i, i)] - T::one()).abs() > T::of(1e-12) {
                return Err(FggmError::InvalidArgument(
                    "correlation matrix needs a unit diagonal".into(),
                ));
            }
        }
        if !linalg::is_symmetric(&self.correlation, T::of(1e-12))
            || self.correlation.clone().cholesky().is_none()
        {
            return Err(FggmError::NotPositiveDefinite("correlation matrix".into()));
        }
        Ok(())
    }

    /// Cross-scale `φ_ij = sqrt((φ_ii^2 + φ_jj^2) / 2)`.
    pub fn cross_scale(&self, i: usize, j: usize) -> T {
        let (a, b) = (self.phi_marg[i], self.phi_marg[j]);
        ((a * a + b * b) * T::of(0.5)).sqrt()
    }

    /// Cross-covariance parameter
    /// `σ_ij = b_ij Γ((ν_ii+ν_jj+d)/2) Γ(ν_ij) / (φ_ij^{2Δ_A+ν_ii+ν_jj} Γ(ν_ij + d/2))`
    /// with `b_ij = (σ_ii σ_jj)^{1/2} φ_ii^{ν_ii} φ_jj^{ν_jj} r_ij / Γ(ν_ij)`, all
    /// smoothness parameters equal to `nu`.
    pub fn cross_sigma(&self, i: usize, j: usize) -> T {
        let nu = self.nu.as_f64();
        let d = self.dim as f64;
        let (si, sj) = (self.sigma_marg[i].as_f64(), self.sigma_marg[j].as_f64());
        let (pi, pj) = (self.phi_marg[i].as_f64(), self.phi_marg[j].as_f64());
        let pij = self.cross_scale(i, j).as_f64();
        let r = self.correlation[(i, j)].as_f64();
        let b = (si * sj).sqrt() * pi.powf(nu) * pj.powf(nu) * r / gamma(nu);
        let value = b * gamma(0.5 * (2.0 * nu + d)) * gamma(nu)
            / (pij.powf(2.0 * self.delta_a.as_f64() + 2.0 * nu) * gamma(nu + 0.5 * d));
        T::of(value)
    }
}

fn permuted<T: Copy>(values: &[T], rng: &mut ChaCha20Rng) -> Vec<T> {
    let mut out = values.to_vec();
    // Fisher–Yates
    for k in (1..out.len()).rev() {
        let swap = rng.random_range(0..=k);
        out.swap(k, swap);
    }
    out
}

/// Dense `qp x qp` multivariate exponential covariance.
///
/// Diagonal blocks are `σ_ii exp(-h/φ_ii)`; off-diagonal blocks are
/// `σ_ij exp(-h/φ_ij)`. A single jitter of `1e-10` times the mean diagonal
/// is added if the assembled matrix is not numerically positive definite.
pub fn build_matern_covariance<T: Real>(spec: &MaternSpec<T>) -> Result<DMatrix<T>> {
    spec.validate()?;
    let q = spec.q();
    let pts = spec.grid.points();
    let p = pts.len();
    let mut c = DMatrix::zeros(q * p, q * p);
    for i in 0..q {
        for j in i..q {
            let (scale, range) = if i == j {
                (spec.sigma_marg[i], spec.phi_marg[i])
            } else {
                (spec.cross_sigma(i, j), spec.cross_scale(i, j))
            };
            for r in 0..p {
                for s in 0..p {
                    let h = (pts[r] - pts[s]).abs();
                    let v = scale * (-h / range).exp();
                    c[(i * p + r, j * p + s)] = v;
                    c[(j * p + s, i * p + r)] = v;
                }
            }
        }
    }
    with_single_jitter(c, "multivariate Matérn covariance").map(|(m, _)| m)
}

/// Returns the matrix (possibly jittered once) and its Cholesky factor `L`.
fn with_single_jitter<T: Real>(mut c: DMatrix<T>, context: &str) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if let Some(chol) = c.clone().cholesky() {
        return Ok((c, chol.unpack()));
    }
    let n = c.nrows();
    let jitter = T::of(1e-10) * c.diagonal().sum() / T::of_usize(n.max(1));
    for i in 0..n {
        c[(i, i)] += jitter;
    }
    match c.clone().cholesky() {
        Some(chol) => {
            log::warn!("{context}: added jitter {:.3e} to the diagonal", jitter.as_f64());
            Ok((c, chol.unpack()))
        }
        None => Err(FggmError::NotPositiveDefinite(format!(
            "{context} (after jitter)"
        ))),
    }
}

/// Random correlation matrix: normalize `G G^T` for a `q x (q + 2)` standard
/// normal `G` to unit diagonal.
pub fn random_correlation<T: Real>(q: usize, seed: u64) -> DMatrix<T> {
    let mut rng = stream_rng(seed, Stream::Correlation);
    let g = DMatrix::<f64>::from_fn(q, q + 2, |_, _| 0.0).map(|_: f64| normal(&mut rng));
    let s = &g * g.transpose();
    let mut r = DMatrix::from_fn(q, q, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt());
    symmetrize(&mut r);
    for i in 0..q {
        r[(i, i)] = 1.0;
    }
    r.map(T::of)
}

/// Block covariance selection of `c` with knots equal to the whole grid.
pub fn stitch_covariance<T: Real>(
    c: &DMatrix<T>,
    g: &Graph,
    blocks: &BlockSpec,
    opts: &CovSelOptions<T>,
) -> Result<DMatrix<T>> {
    let a = SpdMatrix::symmetrized(c.clone())?;
    Ok(covsel_ips(&a, g, blocks, opts)?.selected.into_inner())
}

/// `n` iid draws from `N(0, c)` reshaped into a dataset with `q` variables.
pub fn sample_dataset<T: Real>(
    c: &DMatrix<T>,
    n: usize,
    grid: &Grid<T>,
    q: usize,
    seed: u64,
) -> Result<FunctionalDataset<T>> {
    let p = grid.len();
    if c.nrows() != q * p || !c.is_square() {
        return Err(FggmError::DimensionMismatch(format!(
            "covariance is {}x{}, expected {}x{}",
            c.nrows(),
            c.ncols(),
            q * p,
            q * p
        )));
    }
    if n == 0 {
        return Err(FggmError::InvalidArgument(
            "number of replicates must be positive".into(),
        ));
    }
    let (_, l) = with_single_jitter(c.clone(), "sampling covariance")?;
    let mut rng = stream_rng(seed, Stream::Samples);
    let z = DMatrix::<f64>::from_fn(q * p, n, |_, _| 0.0);
    let mut z = z.map(T::of);
    for rep in 0..n {
        for r in 0..q * p {
            z[(r, rep)] = T::of(normal(&mut rng));
        }
    }
    let x = l * z;
    FunctionalDataset::from_fn(n, q, grid.clone(), |i, j, k| x[(j * p + k, i)])
}

/// `n` iid draws from a partially separable truth, generated through its
/// coefficients (valid even when the dense covariance is rank deficient).
pub fn sample_partial_separable<T: Real>(
    truth: &PartialSeparableTruth<T>,
    n: usize,
    seed: u64,
) -> Result<FunctionalDataset<T>> {
    if n == 0 {
        return Err(FggmError::InvalidArgument(
            "number of replicates must be positive".into(),
        ));
    }
    let q = truth.coef.q();
    let big_l = truth.coef.m();
    let mut rng = stream_rng(seed, Stream::Samples);
    // coefficients[j] is N x L
    let mut coefficients = vec![DMatrix::<T>::zeros(n, big_l); q];
    for (l, sigma) in truth.coef.iter().enumerate() {
        let chol = sigma.cholesky()?;
        let lower = chol.l();
        for i in 0..n {
            let z = DVector::from_fn(q, |_, _| T::of(normal(&mut rng)));
            let theta = &lower * z;
            for j in 0..q {
                coefficients[j][(i, l)] = theta[j];
            }
        }
    }
    let phi_t = truth.basis.columns().transpose();
    let vars = coefficients.iter().map(|theta| theta * &phi_t).collect();
    FunctionalDataset::new(truth.basis.grid().clone(), vars)
}
