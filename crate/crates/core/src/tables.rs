//! Dense probability-table helpers shared by the estimators.

use ndarray::{Array2, ArrayView1, ArrayView2};

/// Index of unordered pair `(i, j)` (with `i <= j`) among the `K(K+1)/2`
/// upper-triangle pairs, row-major.
pub fn pair_index(features: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    debug_assert!(j < features);
    i * features - i * i.saturating_sub(1) / 2 + (j - i)
}

/// All unordered pairs `(i, j)` with `i <= j`, in storage order.
pub fn unordered_pairs(features: usize) -> Vec<(usize, usize)> {
    (0..features)
        .flat_map(|i| (i..features).map(move |j| (i, j)))
        .collect()
}

pub fn pair_count(features: usize) -> usize {
    features * (features + 1) / 2
}

/// `Σ p log(p/q)`, with `0 log(0/q) = 0` and `p > 0, q = 0` giving `+∞`.
pub fn kl_divergence(p: ArrayView2<f64>, q: ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    for (&pv, &qv) in p.iter().zip(q.iter()) {
        if pv > 0.0 {
            if qv <= 0.0 {
                return f64::INFINITY;
            }
            total += pv * (pv / qv).ln();
        }
    }
    total
}

pub fn total_variation(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Normalizes each row in place; all-zero rows are left untouched and
/// reported by index.
pub fn normalize_rows(t: &mut Array2<f64>) -> Vec<usize> {
    let mut degenerate = Vec::new();
    for (r, mut row) in t.rows_mut().into_iter().enumerate() {
        let s: f64 = row.sum();
        if s > 0.0 && s.is_finite() {
            row.mapv_inplace(|v| v / s);
        } else {
            degenerate.push(r);
        }
    }
    degenerate
}

/// Serde adapter storing a 2-D table as a list of rows.
pub mod rows {
    use ndarray::Array2;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(t: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = t.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Array2<f64>, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err("ragged table rows".into());
        }
        Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
            .map_err(|e| e.to_string())
    }
}

/// Serde adapter for a list of 2-D tables.
pub mod rows_vec {
    use ndarray::Array2;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ts: &[Array2<f64>], s: S) -> Result<S::Ok, S::Error> {
        let all: Vec<Vec<Vec<f64>>> = ts
            .iter()
            .map(|t| t.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect();
        all.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Array2<f64>>, D::Error> {
        let all: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        all.into_iter()
            .map(|rows| super::rows::from_rows(rows).map_err(D::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pair_index_enumerates_upper_triangle() {
        for k in 1..7 {
            let pairs = unordered_pairs(k);
            assert_eq!(pairs.len(), pair_count(k));
            for (idx, &(i, j)) in pairs.iter().enumerate() {
                assert_eq!(pair_index(k, i, j), idx);
                assert_eq!(pair_index(k, j, i), idx);
            }
        }
    }

    #[test]
    fn kl_conventions() {
        let p = array![[0.5, 0.5, 0.0]];
        let q = array![[0.25, 0.75, 0.0]];
        let expected = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kl_divergence(p.view(), q.view()) - expected).abs() < 1e-15);
        let q0 = array![[1.0, 0.0, 0.0]];
        assert!(kl_divergence(p.view(), q0.view()).is_infinite());
        assert_eq!(kl_divergence(p.view(), p.view()), 0.0);
    }
}
