mod common;

use fggm::fpca::pooled_second_moment;
use fggm::{
    build_ps_covariance, compute_scores, fourier_basis, pooled_fpca, sample_partial_separable,
    score_covariances, FunctionalDataset, Graph, Grid, PartialSeparableSpec,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #[test]
    fn complete_fourier_system_preserves_energy(p in 2usize..40, values in proptest::collection::vec(-10.0f64..10.0, 40)) {
        let grid = Grid::<f64>::midpoints(p);
        let basis = fourier_basis(p, &grid).unwrap();
        let f = DVector::from_column_slice(&values[..p]);
        let coefficients = basis.columns().transpose() * &f;
        prop_assert!((coefficients.norm_squared() - f.norm_squared()).abs() <= 1e-9 * f.norm_squared().max(1.0));
    }

    #[test]
    fn fourier_columns_are_orthonormal(p in 1usize..60, frac in 0.01f64..1.0) {
        let grid = Grid::<f64>::midpoints(p);
        let m = ((p as f64 * frac).ceil() as usize).clamp(1, p);
        let basis = fourier_basis(m, &grid).unwrap();
        let gram = basis.columns().transpose() * basis.columns();
        prop_assert!((gram - DMatrix::identity(m, m)).amax() <= 1e-10);
    }

    #[test]
    fn score_moments_are_projected_joint_moment(seed in any::<u64>(), n in 2usize..8, q in 1usize..4, p in 2usize..7) {
        let cov = common::random_spd(q * p, 0.1, seed);
        let grid = Grid::<f64>::midpoints(p);
        let data = fggm::sample_dataset(&cov, n, &grid, q, seed).unwrap();
        let basis = fourier_basis(p.min(3), &grid).unwrap();
        let s = score_covariances(&compute_scores(&data, &basis).unwrap()).unwrap();
        let joint = data.second_moment();
        for (l, sl) in s.iter().enumerate() {
            let phi = basis.column(l);
            let lift = DMatrix::identity(q, q).kronecker(&phi);
            let expected = lift.transpose() * &joint * &lift;
            prop_assert!((sl.matrix() - &expected).amax() <= 1e-10 * expected.amax().max(1.0));
        }
    }
}

#[test]
fn fpca_recovers_leading_functions() {
    let graph = Graph::simulation_graph();
    let mut spec = PartialSeparableSpec::<f64>::simulation(graph, 21);
    spec.l_max = 15;
    spec.grid = Grid::midpoints(60);
    let (_, truth) = build_ps_covariance(&spec).unwrap();
    let data = sample_partial_separable(&truth, 500, 21).unwrap();
    let estimated = pooled_fpca(&data, 0.95).unwrap();
    assert!(estimated.m() >= 3);
    for l in 0..3 {
        let overlap = estimated.column(l).dot(&truth.basis.column(l)).abs();
        assert!(overlap >= 0.9, "component {} overlap {overlap}", l + 1);
    }
}

#[test]
fn pooled_moment_is_sum_of_variable_moments() {
    let grid = Grid::<f64>::midpoints(3);
    let data = FunctionalDataset::from_fn(2, 2, grid, |i, j, k| (i + 2 * j + k) as f64).unwrap();
    let mut expected = DMatrix::zeros(3, 3);
    for j in 0..2 {
        for i in 0..2 {
            let x = DVector::from_fn(3, |k, _| (i + 2 * j + k) as f64);
            expected += &x * x.transpose() / 2.0;
        }
    }
    assert_eq!(pooled_second_moment(&data), expected);
}

#[test]
fn eigenvalues_descend_and_reach_fraction() {
    let cov = common::random_spd(24, 0.05, 9);
    let grid = Grid::<f64>::midpoints(8);
    let data = fggm::sample_dataset(&cov, 50, &grid, 3, 9).unwrap();
    let basis = pooled_fpca(&data, 0.8).unwrap();
    let ev = basis.eigenvalues().unwrap();
    for w in ev.as_slice().windows(2) {
        assert!(w[0] >= w[1]);
    }
    let total = pooled_second_moment(&data).trace();
    let kept: f64 = ev.sum();
    assert!(kept >= 0.8 * total);
    let short: f64 = ev.as_slice()[..basis.m() - 1].iter().sum();
    assert!(short < 0.8 * total);
}
