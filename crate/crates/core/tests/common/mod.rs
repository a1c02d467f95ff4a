//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `M Mᵀ / n + floor · I` with `M` uniform in `[-1, 1]`.
pub fn random_spd(n: usize, floor: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

/// Random graph on `q` nodes, each pair present with probability `density`.
pub fn random_edges(q: usize, density: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..q {
        for j in i + 1..q {
            if rng.random_bool(density) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Whether rows `r` and `s` belong to groups that are equal or adjacent.
fn free_pair(r: usize, s: usize, group: &dyn Fn(usize) -> usize, edges: &[(usize, usize)]) -> bool {
    let (a, b) = (group(r), group(s));
    a == b || edges.contains(&(a.min(b), a.max(b)))
}

/// Maximizes the Gaussian likelihood over precisions that vanish on
/// non-edge blocks by damped Newton iterations on the free entries, and
/// returns the implied covariance.
pub fn constrained_mle(a: &DMatrix<f64>, block: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let n = a.nrows();
    let group = move |r: usize| r / block;
    let params: Vec<(usize, usize)> = (0..n)
        .flat_map(|r| (r..n).map(move |s| (r, s)))
        .filter(|&(r, s)| free_pair(r, s, &group, edges))
        .collect();
    let unit = |&(r, s): &(usize, usize)| {
        let mut e = DMatrix::zeros(n, n);
        e[(r, s)] = 1.0;
        e[(s, r)] = 1.0;
        e
    };
    let units: Vec<DMatrix<f64>> = params.iter().map(unit).collect();
    let objective = |omega: &DMatrix<f64>| -> Option<f64> {
        let chol = omega.clone().cholesky()?;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Some(omega.dot(a) - logdet)
    };
    let mut omega = DMatrix::from_diagonal(&a.diagonal().map(|x| 1.0 / x));
    for _ in 0..200 {
        let w = omega.clone().try_inverse().unwrap();
        let grad: Vec<f64> = units.iter().map(|e| e.dot(&(a - &w))).collect();
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < 1e-13 {
            break;
        }
        let k = params.len();
        let we: Vec<DMatrix<f64>> = units.iter().map(|e| &w * e * &w).collect();
        let hess = DMatrix::from_fn(k, k, |x, y| we[x].dot(&units[y]));
        let step = hess
            .lu()
            .solve(&nalgebra::DVector::from_vec(grad.clone()))
            .unwrap();
        let f0 = objective(&omega).unwrap();
        let mut t = 1.0;
        loop {
            let mut trial = omega.clone();
            for (x, e) in units.iter().enumerate() {
                trial -= e * (t * step[x]);
            }
            if let Some(f) = objective(&trial) {
                if f <= f0 {
                    omega = trial;
                    break;
                }
            }
            t *= 0.5;
            assert!(t > 1e-20, "line search failed");
        }
    }
    let mut b = omega.try_inverse().unwrap();
    b = (&b + b.transpose()) * 0.5;
    b
}

/// Brute-force maximal cliques: complete subsets not contained in a larger
/// complete subset, sorted lexicographically.
pub fn brute_maximal_cliques(q: usize, adj: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let complete = |mask: u32| {
        (0..q).all(|i| (0..q).all(|j| i == j || mask & (1 << i) == 0 || mask & (1 << j) == 0 || adj(i, j)))
    };
    let masks: Vec<u32> = (1u32..(1 << q)).filter(|&m| complete(m)).collect();
    let mut out: Vec<Vec<usize>> = masks
        .iter()
        .filter(|&&m| !masks.iter().any(|&o| o != m && o & m == m))
        .map(|&m| (0..q).filter(|i| m & (1 << i) != 0).collect())
        .collect();
    out.sort();
    out
}

/// Chordal iff no vertex subset of size ≥ 4 induces a chordless cycle.
pub fn brute_chordal(q: usize, adj: &dyn Fn(usize, usize) -> bool) -> bool {
    for mask in 0u32..(1 << q) {
        let verts: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        if verts.len() < 4 {
            continue;
        }
        let two_regular = verts
            .iter()
            .all(|&v| verts.iter().filter(|&&u| u != v && adj(u, v)).count() == 2);
        if !two_regular {
            continue;
        }
        // a 2-regular graph is an induced cycle iff connected
        let mut seen = vec![verts[0]];
        let mut frontier = vec![verts[0]];
        while let Some(v) = frontier.pop() {
            for &u in &verts {
                if u != v && adj(u, v) && !seen.contains(&u) {
                    seen.push(u);
                    frontier.push(u);
                }
            }
        }
        if seen.len() == verts.len() {
            return false;
        }
    }
    true
}

pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
