mod common;

use fggm::estimator::{fit_covsel_with_basis, fit_unconstrained_with_basis, profile_log_likelihood};
use fggm::{
    assemble_full, build_ps_covariance, compute_scores, conditional_cross_cov, fit_fggm_covsel,
    fit_fggm_stitch, fit_unconstrained, fourier_basis, sample_dataset, sample_partial_separable,
    score_covariances, FitOptions, Graph, Grid, PartialSeparableSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_truth(seed: u64, l_max: usize, p: usize) -> (DMatrix<f64>, fggm::PartialSeparableTruth<f64>) {
    let mut spec = PartialSeparableSpec::simulation(Graph::simulation_graph(), seed);
    spec.l_max = l_max;
    spec.grid = Grid::midpoints(p);
    build_ps_covariance(&spec).unwrap()
}

/// Entry-by-entry assembly straight from the definition.
fn assemble_by_loops(est: &fggm::Estimate) -> DMatrix<f64> {
    let (q, p, m) = (est.q(), est.p(), est.m());
    let phi = est.basis.columns();
    let mut c = DMatrix::zeros(q * p, q * p);
    for i in 0..q {
        for j in 0..q {
            for r in 0..p {
                for s in 0..p {
                    let mut v = 0.0;
                    for l in 0..m {
                        v += est.coef.get(l).matrix()[(i, j)] * phi[(r, l)] * phi[(s, l)];
                    }
                    if i == j {
                        if let Some(res) = &est.residual {
                            let spec = &res.per_variable[i];
                            for k in 0..spec.eigenvalues.len() {
                                v += spec.eigenvalues[k]
                                    * spec.eigenfunctions[(r, k)]
                                    * spec.eigenfunctions[(s, k)];
                            }
                        }
                    }
                    c[(i * p + r, j * p + s)] = v;
                }
            }
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn assembly_matches_definition(seed in any::<u64>()) {
        let (_, truth) = small_truth(seed, 8, 12);
        let data = sample_partial_separable(&truth, 40, seed).unwrap();
        let g = Graph::simulation_graph();
        let est = fit_fggm_stitch(&data, &g, 0.7, 0.9, &FitOptions::default()).unwrap();
        let c = assemble_full(&est);
        let oracle = assemble_by_loops(&est);
        prop_assert!((&c - &oracle).amax() <= 1e-12 * oracle.amax());
        prop_assert_eq!(&c, &c.transpose());
        let (ev, _) = fggm::linalg::sym_eigen_desc(&c);
        prop_assert!(ev[ev.len() - 1] >= -1e-10 * ev[0]);
    }

    #[test]
    fn covsel_fit_zeroes_non_edge_conditionals(seed in any::<u64>()) {
        let (_, truth) = small_truth(seed, 8, 12);
        let data = sample_partial_separable(&truth, 40, seed).unwrap();
        let g = Graph::simulation_graph();
        let est = fit_fggm_covsel(&data, &g, 0.9, &FitOptions::default()).unwrap();
        for (i, j) in g.non_edges() {
            prop_assert!(conditional_cross_cov(&est, i, j).unwrap().amax() <= 1e-8);
        }
    }

    #[test]
    fn truncation_never_inflates_marginal_variance(seed in any::<u64>(), m in 1usize..20) {
        let (_, truth) = small_truth(seed, 20, 30);
        for j in 0..10 {
            let full = truth.marginal_variance(j);
            let part = truth.truncated(m).unwrap().marginal_variance(j);
            for k in 0..30 {
                prop_assert!(part[k] <= full[k] + 1e-12);
            }
        }
    }
}

#[test]
fn stitch_only_changes_marginal_blocks() {
    let (_, truth) = small_truth(3, 10, 20);
    let data = sample_partial_separable(&truth, 60, 3).unwrap();
    let g = Graph::simulation_graph();
    let opts = FitOptions::default();
    let covsel = assemble_full(&fit_fggm_covsel(&data, &g, 0.75, &opts).unwrap());
    let stitch = assemble_full(&fit_fggm_stitch(&data, &g, 0.75, 0.95, &opts).unwrap());
    let p = 20;
    for i in 0..10 {
        for j in 0..10 {
            let a = covsel.view((i * p, j * p), (p, p));
            let b = stitch.view((i * p, j * p), (p, p));
            if i != j {
                assert_eq!(a, b);
            } else {
                let (ev, _) = fggm::linalg::sym_eigen_desc(&(b - a));
                assert!(ev[ev.len() - 1] >= -1e-12);
            }
        }
    }
}

#[test]
fn unconstrained_fit_is_raw_score_moments() {
    let (_, truth) = small_truth(4, 8, 16);
    let data = sample_partial_separable(&truth, 30, 4).unwrap();
    let est = fit_unconstrained(&data, 0.9).unwrap();
    let raw = score_covariances(&compute_scores(&data, &est.basis).unwrap()).unwrap();
    for (a, b) in est.coef.iter().zip(&raw) {
        assert_eq!(a.matrix(), b.matrix());
    }
    assert_eq!(est.graph, Graph::complete(10));
}

#[test]
fn constrained_fit_maximizes_likelihood_over_graph_respecting_models() {
    let g = Graph::chain(3);
    let grid = Grid::<f64>::midpoints(10);
    let basis = fourier_basis(2, &grid).unwrap();
    let cov = common::random_spd(30, 0.2, 12);
    let data = sample_dataset(&cov, 50, &grid, 3, 12).unwrap();
    let est = fit_covsel_with_basis(&data, basis.clone(), &g, &FitOptions::default()).unwrap();
    let sample = score_covariances(&compute_scores(&data, &basis).unwrap()).unwrap();
    let sigmas: Vec<_> = est.coef.iter().cloned().collect();
    let best = profile_log_likelihood(&sample, &sigmas, 50).unwrap();
    let raw = fit_unconstrained_with_basis(&data, basis).unwrap();
    let raw_sigmas: Vec<_> = raw.coef.iter().cloned().collect();
    assert!(profile_log_likelihood(&sample, &raw_sigmas, 50).unwrap() >= best);
}
