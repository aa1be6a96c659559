//! LU solves for the Newton step.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

/// Largest system handled by the dense factorization.
const DENSE_MAX: usize = 64;

/// Sorts and merges duplicate `(row, col)` entries, dropping exact zeros.
pub(crate) fn merge_triplets(mut t: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    t.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
    for (r, c, v) in t {
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out.retain(|e| e.2 != 0.0);
    out
}

pub(crate) fn dense(n: usize, t: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(r, c, v) in t {
        a[r][c] += v;
    }
    a
}

/// Solve `A x = b`; `None` if the factorization fails or yields non-finite values.
pub(crate) fn solve(n: usize, t: &[(usize, usize, f64)], b: &[f64]) -> Option<Vec<f64>> {
    let x = if n <= DENSE_MAX {
        let mut a = Mat::<f64>::zeros(n, n);
        for &(r, c, v) in t {
            a[(r, c)] += v;
        }
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let x = a.partial_piv_lu().solve(&rhs);
        (0..n).map(|i| x[(i, 0)]).collect::<Vec<_>>()
    } else {
        let trips: Vec<Triplet<usize, usize, f64>> = t.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips).ok()?;
        let lu = a.sp_lu().ok()?;
        let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        lu.solve_in_place(rhs.as_mut());
        (0..n).map(|i| rhs[(i, 0)]).collect::<Vec<_>>()
    };
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Rows with no nonzero entry, then columns with none.
pub(crate) fn structurally_empty(n: usize, t: &[(usize, usize, f64)]) -> (Vec<usize>, Vec<usize>) {
    let mut row = vec![false; n];
    let mut col = vec![false; n];
    for &(r, c, v) in t {
        if v != 0.0 {
            row[r] = true;
            col[c] = true;
        }
    }
    let empty = |f: Vec<bool>| f.iter().enumerate().filter(|(_, x)| !**x).map(|(k, _)| k).collect();
    (empty(row), empty(col))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(n: usize) -> (Vec<(usize, usize, f64)>, Vec<f64>, Vec<f64>) {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64 * 0.01));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.5));
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        for &(r, c, v) in &t {
            b[r] += v * x[c];
        }
        (t, b, x)
    }

    #[test]
    fn dense_and_sparse_agree() {
        for n in [10, 200] {
            let (t, b, x) = system(n);
            let s = solve(n, &merge_triplets(t), &b).unwrap();
            for i in 0..n {
                assert!((s[i] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merges_duplicates() {
        let m = merge_triplets(vec![(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0), (1, 1, 0.0)]);
        assert_eq!(m, vec![(0, 0, 4.0), (1, 0, 2.0)]);
    }

    #[test]
    fn singular_reported() {
        let t = vec![(0, 0, 1.0), (1, 0, 1.0)];
        assert!(solve(2, &t, &[1.0, 1.0]).is_none());
        let (r, c) = structurally_empty(2, &t);
        assert!(r.is_empty());
        assert_eq!(c, vec![1]);
    }
}
