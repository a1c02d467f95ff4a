//! Dense linear-algebra helpers on top of nalgebra.
//!
//! Large products go through `Matrix * Matrix`, which nalgebra routes to a
//! blocked gemm kernel; `tr_mul` is avoided because it is not blocked.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{FggmError, Result};
use crate::scalar::Real;

/// Below this size inverses fall back to nalgebra's column-wise Cholesky inverse.
const INVERSE_LEAF: usize = 192;

/// Magnitude below which an entry is treated as zero by the sign convention.
pub const SIGN_EPS: f64 = 1e-12;

pub fn cholesky<T: Real>(m: &DMatrix<T>, context: &str) -> Result<Cholesky<T, Dyn>> {
    if !m.is_square() {
        return Err(FggmError::DimensionMismatch(format!(
            "{context}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| FggmError::NotPositiveDefinite(context.to_string()))
}

/// `log |M|` from a Cholesky factor.
pub fn log_det<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let mut acc = T::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    acc + acc
}

/// Inverse of a symmetric positive definite matrix.
///
/// Recursive 2x2 block elimination on Schur complements, so the bulk of the
/// work is matrix multiplication. The result is exactly symmetric.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(FggmError::DimensionMismatch(format!(
            "inverse of a {}x{} matrix",
            n,
            m.ncols()
        )));
    }
    let mut inv = if n <= INVERSE_LEAF {
        cholesky(m, "spd_inverse")?.inverse()
    } else {
        let h = n / 2;
        let r = n - h;
        let a11 = m.view((0, 0), (h, h)).into_owned();
        let a12 = m.view((0, h), (h, r)).into_owned();
        let a21 = m.view((h, 0), (r, h)).into_owned();
        let a22 = m.view((h, h), (r, r)).into_owned();

        let a11_inv = spd_inverse(&a11)?;
        let t = &a21 * &a11_inv;
        let mut schur = a22 - &t * &a12;
        symmetrize(&mut schur);
        let schur_inv = spd_inverse(&schur)?;
        let u = &schur_inv * &t;
        let top_left = a11_inv + t.transpose() * &u;

        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (h, h)).copy_from(&top_left);
        out.view_mut((h, h), (r, r)).copy_from(&schur_inv);
        out.view_mut((h, 0), (r, h)).copy_from(&(-&u));
        out.view_mut((0, h), (h, r)).copy_from(&(-u.transpose()));
        out
    };
    symmetrize(&mut inv);
    Ok(inv)
}

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::of(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Symmetry check with tolerance relative to the largest entry.
pub fn is_symmetric<T: Real>(m: &DMatrix<T>, rel_tol: T) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(T::one());
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Flips `v` so that its first entry with magnitude above [`SIGN_EPS`] is positive.
pub fn fix_sign<T: Real>(v: &mut [T]) {
    let eps = T::of(SIGN_EPS);
    if let Some(first) = v.iter().find(|x| x.abs() > eps) {
        if *first < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues in non-increasing order and
/// sign-fixed eigenvectors.
///
/// Runs of numerically tied eigenvalues are ordered lexicographically
/// (descending) by their sign-fixed eigenvectors so the output is deterministic.
pub fn sym_eigen_desc<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = m.nrows();
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut pairs: Vec<(T, Vec<T>)> = (0..n)
        .map(|k| {
            let mut v: Vec<T> = eig.eigenvectors.column(k).iter().copied().collect();
            fix_sign(&mut v);
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let top = pairs.first().map(|p| p.0.abs()).unwrap_or_else(T::zero);
    let tie = T::of(1e-12) * top.max(T::default_epsilon());
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[end - 1].0 - pairs[end].0).abs() <= tie {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lex_desc(&a.1, &b.1));
        }
        start = end;
    }

    let values = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, (_, v)) in pairs.iter().enumerate() {
        vectors.column_mut(k).copy_from_slice(v);
    }
    (values, vectors)
}

fn lex_desc<T: Real>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.partial_cmp(x) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(ord) => return ord,
        }
    }
    std::cmp::Ordering::Equal
}

/// Number of leading eigenvalues needed to reach `fraction` of their total.
///
/// Eigenvalues must be sorted non-increasing. Values below a relative noise
/// floor are treated as zero and never selected. Returns 0 when everything is
/// numerically zero.
pub fn components_for_fraction<T: Real>(eigenvalues: &[T], fraction: T) -> usize {
    let top = eigenvalues.first().copied().unwrap_or_else(T::zero);
    if top <= T::zero() {
        return 0;
    }
    let floor = top * T::of(1e-12) * T::of_usize(eigenvalues.len().max(1));
    let kept: Vec<T> = eigenvalues
        .iter()
        .map(|&x| if x > floor { x } else { T::zero() })
        .collect();
    let rank = kept.iter().take_while(|&&x| x > T::zero()).count();
    let total = kept.iter().fold(T::zero(), |acc, &x| acc + x);
    let mut cum = T::zero();
    for (k, &x) in kept.iter().enumerate().take(rank) {
        cum += x;
        if cum >= fraction * total {
            return k + 1;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let g = DMatrix::from_fn(n, n, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &g * g.transpose() + DMatrix::identity(n, n) * (n as f64) * 0.1
    }

    #[test]
    fn blocked_inverse_matches_identity() {
        for &n in &[5, 200, 457] {
            let a = spd(n, n as u64);
            let inv = spd_inverse(&a).unwrap();
            let err = max_abs(&(&a * &inv - DMatrix::identity(n, n)));
            assert!(err < 1e-9, "n={n} err={err}");
            assert_eq!(inv, inv.transpose());
        }
    }

    #[test]
    fn inverse_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_inverse(&m), Err(FggmError::NotPositiveDefinite(_))));
    }

    #[test]
    fn eigen_sorted_and_sign_fixed() {
        let a = spd(12, 3);
        let (vals, vecs) = sym_eigen_desc(&a);
        for k in 1..vals.len() {
            assert!(vals[k - 1] >= vals[k]);
        }
        for k in 0..vals.len() {
            let col = vecs.column(k);
            let first = col.iter().find(|x| x.abs() > SIGN_EPS).unwrap();
            assert!(*first > 0.0);
        }
        let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!(max_abs(&(recon - a)) < 1e-10);
    }

    #[test]
    fn fraction_selection() {
        let ev = [4.0, 3.0, 2.0, 1.0, 0.0];
        assert_eq!(components_for_fraction(&ev, 0.4), 1);
        assert_eq!(components_for_fraction(&ev, 0.7), 2);
        assert_eq!(components_for_fraction(&ev, 0.71), 3);
        assert_eq!(components_for_fraction(&ev, 1.0), 4);
        assert_eq!(components_for_fraction(&[0.0, 0.0], 0.5), 0);
    }

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        let ld = log_det(&cholesky(&m, "t").unwrap());
        assert!((ld - 3.0f64.ln()).abs() < 1e-14);
    }
}
