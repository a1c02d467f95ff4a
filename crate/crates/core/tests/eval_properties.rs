mod common;

use fggm::eval::{extract_block, joint_block};
use fggm::io::{load_estimate, save_estimate};
use fggm::{
    assemble_full, build_ps_covariance, edge_kl_table, fit_fggm_stitch, kl_matrix, sample_partial_separable,
    FitOptions, Graph, Grid, PartialSeparableSpec, SpdMatrix,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn naive_kl(b: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let ainv = a.clone().try_inverse().unwrap();
    0.5 * ((&ainv * b).trace() - (a.determinant() / b.determinant()).ln())
}

proptest! {
    #[test]
    fn kl_matches_dense_formula(n in 1usize..7, s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = common::random_spd(n, 0.2, s1);
        let b = common::random_spd(n, 0.2, s2);
        let v = kl_matrix(&SpdMatrix::new(b.clone()).unwrap(), &SpdMatrix::new(a.clone()).unwrap()).unwrap();
        prop_assert!((v - naive_kl(&b, &a)).abs() <= 1e-10 * v.abs().max(1.0));
    }

    #[test]
    fn kl_is_congruence_invariant(n in 1usize..6, s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let a = common::random_spd(n, 0.2, s1);
        let b = common::random_spd(n, 0.2, s2);
        let t = common::random_spd(n, 0.5, s3) + DMatrix::from_fn(n, n, |i, j| if i < j { 0.3 } else { 0.0 });
        let before = kl_matrix(&SpdMatrix::new(b.clone()).unwrap(), &SpdMatrix::new(a.clone()).unwrap()).unwrap();
        let ta = SpdMatrix::symmetrized(&t * &a * t.transpose()).unwrap();
        let tb = SpdMatrix::symmetrized(&t * &b * t.transpose()).unwrap();
        let after = kl_matrix(&tb, &ta).unwrap();
        prop_assert!((before - after).abs() <= 1e-8 * before.abs().max(1.0));
    }

    #[test]
    fn blocks_reassemble(q in 1usize..5, p in 1usize..5, seed in any::<u64>()) {
        let c = common::random_spd(q * p, 0.1, seed);
        let mut back = DMatrix::zeros(q * p, q * p);
        for i in 0..q {
            for j in 0..q {
                back.view_mut((i * p, j * p), (p, p)).copy_from(&extract_block(&c, i, j, p).unwrap());
            }
        }
        prop_assert_eq!(back, c);
    }

    #[test]
    fn edge_table_follows_relabeling(seed in any::<u64>(), shift in 1usize..4) {
        let q = 4;
        let p = 2;
        let g = Graph::from_edges(q, vec![(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let truth = common::random_spd(q * p, 0.3, seed);
        let est = common::random_spd(q * p, 0.3, seed ^ 1);
        let perm: Vec<usize> = (0..q).map(|i| (i + shift) % q).collect();
        let relabel = |c: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(q * p, q * p);
            for i in 0..q {
                for j in 0..q {
                    out.view_mut((perm[i] * p, perm[j] * p), (p, p)).copy_from(&extract_block(c, i, j, p).unwrap());
                }
            }
            out
        };
        let base = edge_kl_table(&truth, &[("e".into(), est.clone())], &g, p, 0.0).unwrap();
        let moved = edge_kl_table(&relabel(&truth), &[("e".into(), relabel(&est))], &g.permute(&perm).unwrap(), p, 0.0)
            .unwrap();
        for row in &base.rows {
            let (a, b) = (perm[row.edge.0], perm[row.edge.1]);
            let key = (a.min(b), a.max(b));
            let other = moved.rows.iter().find(|r| r.edge == key).unwrap();
            // swapping the order of the two variables is a congruence
            prop_assert!((other.values[0] - row.values[0]).abs() <= 1e-9 * row.values[0].abs().max(1.0));
        }
    }
}

#[test]
fn table_has_simulation_edge_order() {
    let g = Graph::simulation_graph();
    let c = common::random_spd(20, 0.3, 1);
    let t = edge_kl_table(&c, &[("same".into(), c.clone())], &g, 2, 0.0).unwrap();
    let edges: Vec<(usize, usize)> = t.rows.iter().map(|r| (r.edge.0 + 1, r.edge.1 + 1)).collect();
    assert_eq!(
        edges,
        vec![
            (1, 2),
            (1, 3),
            (2, 3),
            (2, 4),
            (3, 4),
            (4, 5),
            (4, 6),
            (5, 6),
            (6, 7),
            (6, 8),
            (7, 8),
            (8, 9),
            (9, 10)
        ]
    );
    assert!(t.rows.iter().all(|r| (r.values[0] - 2.0).abs() < 1e-10));
    let jb = joint_block(&c, 0, 1, 2).unwrap();
    assert_eq!(jb, c.view((0, 0), (4, 4)).into_owned());
}

#[test]
fn estimate_directory_round_trip() {
    let mut spec = PartialSeparableSpec::<f64>::simulation(Graph::simulation_graph(), 2);
    spec.l_max = 10;
    spec.grid = Grid::midpoints(16);
    let (_, truth) = build_ps_covariance(&spec).unwrap();
    let data = sample_partial_separable(&truth, 40, 2).unwrap();
    let est = fit_fggm_stitch(
        &data,
        &Graph::simulation_graph(),
        0.75,
        0.95,
        &FitOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_estimate(dir.path(), &est).unwrap();
    let back: fggm::Estimate = load_estimate(dir.path()).unwrap();
    assert_eq!(assemble_full(&back), assemble_full(&est));
    assert_eq!(back.kind, est.kind);
    assert_eq!(back.graph, est.graph);
    assert_eq!(back.v, est.v);
    assert_eq!(
        back.residual.as_ref().unwrap().m_prime(),
        est.residual.as_ref().unwrap().m_prime()
    );
    let meta_path = dir.path().join("metadata.json");
    let text = std::fs::read_to_string(&meta_path).unwrap();
    let mut meta: serde_json::Value = serde_json::from_str(&text).unwrap();
    meta["edges"][0] = serde_json::json!([1, 10]);
    std::fs::write(&meta_path, meta.to_string()).unwrap();
    assert!(load_estimate::<f64>(dir.path()).is_err());
}
