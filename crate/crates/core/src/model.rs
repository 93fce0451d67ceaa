//! The factored latent class model: one set of class-conditional output
//! distributions per feature and a latent mixing table for every feature
//! pair.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlaError, Result};
use crate::tables::{pair_index, rows_vec, unordered_pairs};

/// Multiplicative jitter applied to the uniform initial conditionals.
pub const INIT_JITTER: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaModel {
    pub class_counts: Vec<usize>,
    pub alphabets: Vec<usize>,
    /// `p̃(x̂ᵢ | lᵢ)`: one `kᵢ × |x̂ᵢ|` row-stochastic table per feature.
    #[serde(with = "rows_vec")]
    pub conditionals: Vec<Array2<f64>>,
    /// `p̃(lᵢ, lⱼ)` for `i <= j`, `kᵢ × kⱼ`, each summing to 1.
    #[serde(with = "rows_vec")]
    pub mixing: Vec<Array2<f64>>,
}

impl FlaModel {
    /// Uniform mixing tables and near-uniform conditionals with seeded
    /// multiplicative jitter; pure uniform is a fixed point EM never leaves.
    pub fn init(class_counts: &[usize], alphabets: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_jitter(class_counts, alphabets, seed, INIT_JITTER)
    }

    /// As [`FlaModel::init`] with conditional entries scaled by
    /// `1 + jitter·u`, `u ~ U[-1, 1)`.
    pub fn init_with_jitter(
        class_counts: &[usize],
        alphabets: &[usize],
        seed: u64,
        jitter: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&jitter) {
            return Err(FlaError::Invalid(format!("init jitter {jitter} outside [0, 1)")));
        }
        if class_counts.len() != alphabets.len() || class_counts.is_empty() {
            return Err(FlaError::Shape(format!(
                "{} class counts for {} features",
                class_counts.len(),
                alphabets.len()
            )));
        }
        for (f, (&k, &n)) in class_counts.iter().zip(alphabets).enumerate() {
            if k == 0 || k > n {
                return Err(FlaError::Invalid(format!(
                    "feature {f}: class count {k} must be in 1..={n} (alphabet size)"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conditionals = class_counts
            .iter()
            .zip(alphabets)
            .map(|(&k, &n)| {
                let mut t = Array2::from_shape_fn((k, n), |_| {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    1.0 + jitter * u
                });
                crate::tables::normalize_rows(&mut t);
                t
            })
            .collect();
        let mixing = unordered_pairs(class_counts.len())
            .into_iter()
            .map(|(i, j)| {
                let (ki, kj) = (class_counts[i], class_counts[j]);
                Array2::from_elem((ki, kj), 1.0 / (ki * kj) as f64)
            })
            .collect();
        Ok(FlaModel {
            class_counts: class_counts.to_vec(),
            alphabets: alphabets.to_vec(),
            conditionals,
            mixing,
        })
    }

    pub fn features(&self) -> usize {
        self.class_counts.len()
    }

    /// Ordered view `p̃(lᵢ, lⱼ)`.
    pub fn mixing(&self, i: usize, j: usize) -> ArrayView2<'_, f64> {
        let t = self.mixing[pair_index(self.features(), i, j)].view();
        if i <= j {
            t
        } else {
            t.reversed_axes()
        }
    }

    /// `p̃(x̂ᵢ, x̂ⱼ) = Σ p̃(lᵢ,lⱼ) p̃(x̂ᵢ|lᵢ) p̃(x̂ⱼ|lⱼ)`.
    pub fn pairwise_joint(&self, i: usize, j: usize) -> Array2<f64> {
        let ci = &self.conditionals[i];
        let cj = &self.conditionals[j];
        ci.t().dot(&self.mixing(i, j).dot(cj))
    }

    /// `p̃(lᵢ)`, the average over all `j` of the row marginal of `p̃(lᵢ,lⱼ)`.
    pub fn type_marginals(&self) -> Vec<Vec<f64>> {
        let k = self.features();
        (0..k)
            .map(|i| {
                let mut acc = vec![0.0; self.class_counts[i]];
                for j in 0..k {
                    for (l, row) in self.mixing(i, j).rows().into_iter().enumerate() {
                        acc[l] += row.sum();
                    }
                }
                let total: f64 = acc.iter().sum();
                acc.iter().map(|v| v / total).collect()
            })
            .collect()
    }

    /// Relabels the classes of one feature: new class `c` is old class
    /// `perm[c]`.
    pub fn permute_classes(&self, feature: usize, perm: &[usize]) -> Result<FlaModel> {
        let k = self.class_counts[feature];
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..k).collect::<Vec<_>>() {
            return Err(FlaError::Invalid(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        let mut out = self.clone();
        let old = &self.conditionals[feature];
        out.conditionals[feature] = Array2::from_shape_fn(old.dim(), |(c, a)| old[[perm[c], a]]);
        for (idx, (i, j)) in unordered_pairs(self.features()).into_iter().enumerate() {
            let m = &self.mixing[idx];
            let row = |r: usize| if i == feature { perm[r] } else { r };
            let col = |c: usize| if j == feature { perm[c] } else { c };
            out.mixing[idx] = Array2::from_shape_fn(m.dim(), |(r, c)| m[[row(r), col(c)]]);
        }
        Ok(out)
    }

    /// Checks shapes and that every distribution is nonnegative and sums to
    /// 1 within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let k = self.features();
        if self.alphabets.len() != k || self.conditionals.len() != k {
            return Err(FlaError::Shape("feature count mismatch".into()));
        }
        for (f, c) in self.conditionals.iter().enumerate() {
            if c.dim() != (self.class_counts[f], self.alphabets[f]) {
                return Err(FlaError::Shape(format!("conditional {f} has shape {:?}", c.dim())));
            }
            for (l, row) in c.rows().into_iter().enumerate() {
                if row.iter().any(|&v| v < 0.0 || !v.is_finite()) || (row.sum() - 1.0).abs() > tol {
                    return Err(FlaError::Numerical(format!(
                        "conditional row {l} of feature {f} is not a distribution"
                    )));
                }
            }
        }
        let pairs = unordered_pairs(k);
        if self.mixing.len() != pairs.len() {
            return Err(FlaError::Shape("mixing table count mismatch".into()));
        }
        for ((i, j), m) in pairs.into_iter().zip(&self.mixing) {
            if m.dim() != (self.class_counts[i], self.class_counts[j]) {
                return Err(FlaError::Shape(format!("mixing ({i},{j}) has shape {:?}", m.dim())));
            }
            if m.iter().any(|&v| v < 0.0 || !v.is_finite()) || (m.sum() - 1.0).abs() > tol {
                return Err(FlaError::Numerical(format!(
                    "mixing table ({i},{j}) is not a distribution"
                )));
            }
        }
        Ok(())
    }
}
