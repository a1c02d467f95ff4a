//! Covariance estimation for multivariate functional data under a known
//! conditional-independence graph.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the scalar type for common use.

pub mod covsel;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod fpca;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod simgen;

pub use covsel::{
    covsel_ips, covsel_scalar, verify_graphical, BlockSpec, CovSelOptions, CovSelResult, SpdMatrix,
};
pub use error::{ErrorClass, FggmError, Result};
pub use estimator::{
    assemble_block, assemble_full, conditional_cross_cov, fit_fggm_covsel, fit_fggm_stitch,
    fit_unconstrained, CoefCovarianceSet, CovarianceEstimate, EstimatorKind, FitOptions, ResidualSpectrum,
};
pub use eval::{edge_kl_table, export_heatmap, extract_block, kl_matrix, marginal_error_report, EdgeKlTable};
pub use fpca::{
    compute_scores, fourier_basis, pooled_fpca, score_covariances, BasisSystem, FunctionalDataset, Grid,
    ScoreArray,
};
pub use graph::{is_decomposable, load_graph, maximal_cliques, CliqueCover, Graph};
pub use scalar::Real;
pub use simgen::{
    build_matern_covariance, build_ps_covariance, gen_precisions, random_correlation, sample_dataset,
    sample_partial_separable, stitch_covariance, MaternSpec, PartialSeparableSpec, PartialSeparableTruth,
};

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Spd = SpdMatrix<f64>;
pub type Dataset = FunctionalDataset<f64>;
pub type Basis = BasisSystem<f64>;
pub type Estimate = CovarianceEstimate<f64>;
pub type CoefSet = CoefCovarianceSet<f64>;

pub type Matrix32 = nalgebra::DMatrix<f32>;
pub type Spd32 = SpdMatrix<f32>;
pub type Dataset32 = FunctionalDataset<f32>;
pub type Basis32 = BasisSystem<f32>;
pub type Estimate32 = CovarianceEstimate<f32>;
pub type CoefSet32 = CoefCovarianceSet<f32>;
