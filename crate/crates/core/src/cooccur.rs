//! Windowed pairwise co-occurrence statistics.
//!
//! For each window of a track, the joint of two independent draws (weighted
//! by a Gaussian temporal mask) is accumulated for every unordered feature
//! pair. Only the `K(K+1)/2` tables with `i <= j` are stored; the `(j, i)`
//! view is the transpose.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FlaError, Result};
use crate::quantize::{SymbolSequences, SymbolTrack};
use crate::tables::{pair_count, pair_index, rows_vec, unordered_pairs};

/// Per-window weight `w(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum WeightRule {
    Uniform,
    /// `w(n) = 1 / c`, where `c` counts the windows among the last `horizon`
    /// of the same track (current included) sharing this window's modal
    /// symbol tuple. Discounts long runs of identical states such as a
    /// parked vehicle.
    RedundancyDiscount { horizon: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Half-width `W` in frames; a window covers `dt ∈ [-W, W]`.
    pub half_width: u32,
    /// Standard deviation of the Gaussian mask, in frames.
    pub sigma: f64,
    pub stride: usize,
    pub weight: WeightRule,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::from_seconds(1.0, 15.0)
    }
}

impl WindowSpec {
    /// A window with the given total support: `W = ⌊seconds·rate/2⌋`,
    /// `σ = W/2` (0.5 frames when `W = 0`), stride 1, uniform weights.
    pub fn from_seconds(seconds: f64, frame_rate: f64) -> Self {
        let half_width = ((seconds * frame_rate) / 2.0).floor().max(0.0) as u32;
        let sigma = if half_width == 0 {
            0.5
        } else {
            half_width as f64 / 2.0
        };
        WindowSpec {
            half_width,
            sigma,
            stride: 1,
            weight: WeightRule::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(FlaError::Invalid(format!(
                "window sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.stride == 0 {
            return Err(FlaError::Invalid("window stride must be at least 1".into()));
        }
        if let WeightRule::RedundancyDiscount { horizon: 0 } = self.weight {
            return Err(FlaError::Invalid("discount horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Gaussian mask `m(dt)`; zero outside `[-W, W]`.
    pub fn mask(&self, dt: i64) -> f64 {
        if dt.unsigned_abs() > self.half_width as u64 {
            return 0.0;
        }
        let x = dt as f64 / self.sigma;
        (-0.5 * x * x).exp()
    }

    /// Mask mass of a window that is not cut short by a track end.
    pub fn full_mass(&self) -> f64 {
        let w = self.half_width as i64;
        (-w..=w).map(|dt| self.mask(dt)).sum()
    }

    /// Indices of the frames of a track (sorted times) inside the window
    /// centred on frame `center`, with their mask weights. Never leaves the
    /// track.
    pub fn members(&self, times: &[i64], center: usize) -> Vec<(usize, f64)> {
        let tc = times[center];
        let w = self.half_width as i64;
        let mut lo = center;
        while lo > 0 && tc - times[lo - 1] <= w {
            lo -= 1;
        }
        let mut hi = center;
        while hi + 1 < times.len() && times[hi + 1] - tc <= w {
            hi += 1;
        }
        (lo..=hi).map(|s| (s, self.mask(times[s] - tc))).collect()
    }
}

/// Window centres (frame indices) for a track of the given length: every
/// `stride`-th frame starting at 0.
pub fn window_positions(track_len: usize, spec: &WindowSpec) -> Vec<usize> {
    (0..track_len).step_by(spec.stride.max(1)).collect()
}

/// Mask-weighted symbol frequencies of one window, per feature, as sparse
/// `(symbol, frequency)` lists summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFrequencies {
    pub features: Vec<Vec<(u32, f64)>>,
    /// Total mask weight `Σ m(dt)` of the window's frames.
    pub mass: f64,
}

impl WindowFrequencies {
    /// Builds frequencies from the symbol tuples of a window and their mask
    /// weights.
    pub fn from_frames(frames: &[&[u32]], weights: &[f64]) -> Result<Self> {
        if frames.is_empty() {
            return Err(FlaError::Invalid("empty window".into()));
        }
        let k = frames[0].len();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(FlaError::Degenerate("window mask weights sum to zero".into()));
        }
        let mut features = Vec::with_capacity(k);
        for f in 0..k {
            let mut acc: Vec<(u32, f64)> = Vec::new();
            for (frame, &w) in frames.iter().zip(weights) {
                let s = frame[f];
                match acc.iter_mut().find(|(sym, _)| *sym == s) {
                    Some(e) => e.1 += w,
                    None => acc.push((s, w)),
                }
            }
            acc.sort_by_key(|(s, _)| *s);
            for e in &mut acc {
                e.1 /= total;
            }
            features.push(acc);
        }
        Ok(WindowFrequencies {
            features,
            mass: total,
        })
    }

    pub fn for_window(track: &SymbolTrack, center: usize, spec: &WindowSpec) -> Result<Self> {
        let members = spec.members(&track.times, center);
        let frames: Vec<&[u32]> = members.iter().map(|&(s, _)| track.frame(s)).collect();
        let weights: Vec<f64> = members.iter().map(|&(_, w)| w).collect();
        Self::from_frames(&frames, &weights)
    }

    /// Most frequent symbol per feature, ties toward the lower symbol.
    pub fn modal_tuple(&self) -> Vec<u32> {
        self.features
            .iter()
            .map(|f| {
                f.iter()
                    .fold(None::<(u32, f64)>, |best, &(s, w)| match best {
                        Some((_, bw)) if bw >= w => best,
                        _ => Some((s, w)),
                    })
                    .map_or(0, |(s, _)| s)
            })
            .collect()
    }
}

/// Every window of a track with its weight `w(n)` under the spec's rule.
pub fn track_windows(track: &SymbolTrack, spec: &WindowSpec) -> Result<Vec<(WindowFrequencies, f64)>> {
    spec.validate()?;
    let mut recent: VecDeque<Vec<u32>> = VecDeque::new();
    let mut out = Vec::new();
    for center in window_positions(track.len(), spec) {
        let freqs = WindowFrequencies::for_window(track, center, spec)?;
        let weight = match spec.weight {
            WeightRule::Uniform => 1.0,
            WeightRule::RedundancyDiscount { horizon } => {
                let modal = freqs.modal_tuple();
                if recent.len() == horizon {
                    recent.pop_front();
                }
                recent.push_back(modal);
                let current = recent.back().expect("just pushed");
                let count = recent.iter().filter(|m| *m == current).count();
                1.0 / count as f64
            }
        };
        out.push((freqs, weight));
    }
    Ok(out)
}

/// Unnormalized-by-weight window joint `pₙ` for every unordered pair: the
/// probability of two independent mask-weighted draws from the window.
pub fn window_joint(
    frames: &[&[u32]],
    weights: &[f64],
    alphabets: &[usize],
) -> Result<Vec<Array2<f64>>> {
    let freqs = WindowFrequencies::from_frames(frames, weights)?;
    let mut acc = CooccurrenceAccumulator::new(alphabets.to_vec(), WindowSpec::default());
    acc.accumulate(&freqs, 1.0)?;
    Ok(acc.tables)
}

/// Running sums `Σ w(n) pₙ(xᵢ, xⱼ)` over windows, plus `Σ w(n)` and `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceAccumulator {
    pub alphabets: Vec<usize>,
    pub window: WindowSpec,
    /// Upper-triangle pair tables, see [`pair_index`].
    #[serde(with = "rows_vec")]
    pub tables: Vec<Array2<f64>>,
    pub total_weight: f64,
    pub windows: u64,
}

impl CooccurrenceAccumulator {
    pub fn new(alphabets: Vec<usize>, window: WindowSpec) -> Self {
        let tables = unordered_pairs(alphabets.len())
            .into_iter()
            .map(|(i, j)| Array2::zeros((alphabets[i], alphabets[j])))
            .collect();
        CooccurrenceAccumulator {
            alphabets,
            window,
            tables,
            total_weight: 0.0,
            windows: 0,
        }
    }

    pub fn features(&self) -> usize {
        self.alphabets.len()
    }

    pub fn table(&self, i: usize, j: usize) -> ArrayView2<'_, f64> {
        let t = self.tables[pair_index(self.features(), i, j)].view();
        if i <= j {
            t
        } else {
            t.reversed_axes()
        }
    }

    /// Adds `weight · pₙ` for one window.
    pub fn accumulate(&mut self, window: &WindowFrequencies, weight: f64) -> Result<()> {
        let k = self.features();
        if window.features.len() != k {
            return Err(FlaError::Shape(format!(
                "window has {} features, accumulator expects {k}",
                window.features.len()
            )));
        }
        for (f, freqs) in window.features.iter().enumerate() {
            if let Some(&(s, _)) = freqs.iter().find(|(s, _)| *s as usize >= self.alphabets[f]) {
                return Err(FlaError::Shape(format!(
                    "symbol {s} outside alphabet of size {} for feature {f}",
                    self.alphabets[f]
                )));
            }
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(FlaError::Invalid(format!("bad window weight {weight}")));
        }
        for (idx, (i, j)) in unordered_pairs(k).into_iter().enumerate() {
            let table = &mut self.tables[idx];
            for &(a, fa) in &window.features[i] {
                let wa = weight * fa;
                for &(b, fb) in &window.features[j] {
                    table[[a as usize, b as usize]] += wa * fb;
                }
            }
        }
        self.total_weight += weight;
        self.windows += 1;
        Ok(())
    }

    /// Accumulates every window of one track, applying the weight rule.
    pub fn accumulate_track(&mut self, track: &SymbolTrack) -> Result<()> {
        for (freqs, weight) in track_windows(track, &self.window)? {
            self.accumulate(&freqs, weight)?;
        }
        Ok(())
    }

    pub fn accumulate_all(&mut self, sequences: &SymbolSequences) -> Result<()> {
        if sequences.alphabet_sizes != self.alphabets {
            return Err(FlaError::Shape(format!(
                "alphabets {:?} do not match accumulator {:?}",
                sequences.alphabet_sizes, self.alphabets
            )));
        }
        sequences.validate()?;
        for track in &sequences.tracks {
            self.accumulate_track(track)?;
        }
        Ok(())
    }

    /// Cellwise sum of two accumulators over the same alphabets and window.
    pub fn merge(&self, other: &CooccurrenceAccumulator) -> Result<CooccurrenceAccumulator> {
        if self.alphabets != other.alphabets || self.window != other.window {
            return Err(FlaError::Shape(
                "cannot merge accumulators with different alphabets or windows".into(),
            ));
        }
        let tables = self
            .tables
            .iter()
            .zip(&other.tables)
            .map(|(a, b)| a + b)
            .collect();
        Ok(CooccurrenceAccumulator {
            alphabets: self.alphabets.clone(),
            window: self.window,
            tables,
            total_weight: self.total_weight + other.total_weight,
            windows: self.windows + other.windows,
        })
    }

    pub fn finalize(&self) -> Result<PairwiseJointSet> {
        if !(self.total_weight > 0.0) {
            return Err(FlaError::Degenerate(
                "no window weight accumulated; cannot normalize".into(),
            ));
        }
        let tables = self
            .tables
            .iter()
            .map(|t| t / self.total_weight)
            .collect();
        Ok(PairwiseJointSet {
            alphabets: self.alphabets.clone(),
            tables,
            total_weight: self.total_weight,
            windows: self.windows,
        })
    }
}

/// Normalized empirical joints `p̂(x̂ᵢ, x̂ⱼ)` for all ordered pairs, backed by
/// the upper-triangle store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseJointSet {
    pub alphabets: Vec<usize>,
    #[serde(with = "rows_vec")]
    pub tables: Vec<Array2<f64>>,
    pub total_weight: f64,
    pub windows: u64,
}

impl PairwiseJointSet {
    /// Builds a joint set from explicit upper-triangle tables, each
    /// normalized to sum to 1.
    pub fn from_tables(alphabets: Vec<usize>, tables: Vec<Array2<f64>>) -> Result<Self> {
        let k = alphabets.len();
        if tables.len() != pair_count(k) {
            return Err(FlaError::Shape(format!(
                "expected {} pair tables, got {}",
                pair_count(k),
                tables.len()
            )));
        }
        let mut out = Vec::with_capacity(tables.len());
        for ((i, j), t) in unordered_pairs(k).into_iter().zip(tables) {
            if t.dim() != (alphabets[i], alphabets[j]) {
                return Err(FlaError::Shape(format!(
                    "pair ({i},{j}) table has shape {:?}",
                    t.dim()
                )));
            }
            let s = t.sum();
            if !(s > 0.0) || t.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(FlaError::Invalid(format!("pair ({i},{j}) table is not a distribution")));
            }
            out.push(t / s);
        }
        Ok(PairwiseJointSet {
            alphabets,
            tables: out,
            total_weight: 1.0,
            windows: 1,
        })
    }

    pub fn features(&self) -> usize {
        self.alphabets.len()
    }

    /// Ordered view `p̂(x̂ᵢ, x̂ⱼ)`; for `i > j` this is the transpose of the
    /// stored `(j, i)` table.
    pub fn joint(&self, i: usize, j: usize) -> ArrayView2<'_, f64> {
        let t = self.tables[pair_index(self.features(), i, j)].view();
        if i <= j {
            t
        } else {
            t.reversed_axes()
        }
    }

    /// Empirical marginal of feature `i`, read from the diagonal table.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        self.joint(i, i).rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Symbols of feature `i` carrying any empirical mass in any pair.
    pub fn evidence(&self, i: usize) -> Vec<bool> {
        let mut seen = vec![false; self.alphabets[i]];
        for j in 0..self.features() {
            for (a, row) in self.joint(i, j).rows().into_iter().enumerate() {
                if row.iter().any(|&v| v > 0.0) {
                    seen[a] = true;
                }
            }
        }
        seen
    }

    /// Keeps only the listed features, in the given order.
    pub fn select(&self, features: &[usize]) -> Result<PairwiseJointSet> {
        if let Some(&bad) = features.iter().find(|&&f| f >= self.features()) {
            return Err(FlaError::Invalid(format!("feature index {bad} out of range")));
        }
        let k = features.len();
        let tables = unordered_pairs(k)
            .into_iter()
            .map(|(a, b)| self.joint(features[a], features[b]).to_owned())
            .collect();
        Ok(PairwiseJointSet {
            alphabets: features.iter().map(|&f| self.alphabets[f]).collect(),
            tables,
            total_weight: self.total_weight,
            windows: self.windows,
        })
    }
}
