//! Latent labels are identifiable only up to relabeling. These helpers match
//! estimated classes to reference classes by minimum total variation.

use ndarray::Array2;

use crate::error::{FlaError, Result};
use crate::tables::total_variation;

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// shortest augmenting paths). Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(FlaError::Shape(format!("assignment needs a square cost matrix, got {n}x{m}")));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(FlaError::Numerical("non-finite assignment cost".into()));
    }
    // 1-based potentials and matching, column 0 is a sentinel
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[[r0 - 1, col - 1]] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[matched_row[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            matched_row[col0] = matched_row[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        assignment[matched_row[col] - 1] = col - 1;
    }
    Ok(assignment)
}

/// Total-variation cost between every reference row and estimated row.
pub fn tv_cost(reference: &Array2<f64>, estimate: &Array2<f64>) -> Result<Array2<f64>> {
    if reference.ncols() != estimate.ncols() {
        return Err(FlaError::Shape("row lengths differ".into()));
    }
    Ok(Array2::from_shape_fn(
        (reference.nrows(), estimate.nrows()),
        |(r, e)| total_variation(reference.row(r), estimate.row(e)),
    ))
}

/// `perm[c]` is the estimated row matched to reference row `c`.
pub fn align_rows(reference: &Array2<f64>, estimate: &Array2<f64>) -> Result<Vec<usize>> {
    min_cost_assignment(&tv_cost(reference, estimate)?)
}

/// Per-class total variation after alignment, in reference order.
pub fn aligned_distances(reference: &Array2<f64>, estimate: &Array2<f64>) -> Result<Vec<f64>> {
    let perm = align_rows(reference, estimate)?;
    Ok(perm
        .iter()
        .enumerate()
        .map(|(c, &e)| total_variation(reference.row(c), estimate.row(e)))
        .collect())
}

/// Inverse of [`align_rows`]: `map[estimated] = reference`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (r, &e) in perm.iter().enumerate() {
        inv[e] = r;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn rec(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.nrows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cost.ncols() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[[row, c]] + rec(cost, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.ncols()])
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
                let a = min_cost_assignment(&cost).unwrap();
                let mut seen = a.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum();
                assert!((total - brute_force(&cost)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aligns_permuted_rows() {
        let reference = ndarray::array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let estimate = ndarray::array![[0.0, 0.9, 0.1], [0.0, 0.0, 1.0], [0.95, 0.05, 0.0]];
        let perm = align_rows(&reference, &estimate).unwrap();
        assert_eq!(perm, vec![2, 0, 1]);
        assert_eq!(invert(&perm), vec![1, 2, 0]);
        let d = aligned_distances(&reference, &estimate).unwrap();
        assert!((d[0] - 0.05).abs() < 1e-12);
        assert!(min_cost_assignment(&Array2::zeros((2, 3))).is_err());
    }
}
