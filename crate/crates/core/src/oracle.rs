//! Exact EM over complete latent tuples.
//!
//! Every window is explained by one tuple `(l₁,…,l_K)` drawn from a dense
//! tuple prior; each frame of the window then draws its symbols
//! independently from the per-feature conditionals. The cost grows with
//! `Πkᵢ`, so this is only usable at desk scale, where it serves as a
//! reference for the pairwise estimator.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cooccur::{track_windows, CooccurrenceAccumulator, PairwiseJointSet, WindowFrequencies, WindowSpec};
use crate::em::FitConfig;
use crate::error::{FlaError, Result};
use crate::model::{FlaModel, INIT_JITTER};
use crate::quantize::SymbolSequences;
use crate::tables::{normalize_rows, unordered_pairs};

pub const DEFAULT_TUPLE_CAP: usize = 10_000;

/// `Πkᵢ`, the number of complete latent tuples.
pub fn enumerate_tuple_count(class_counts: &[usize]) -> Result<usize> {
    class_counts.iter().try_fold(1usize, |acc, &k| {
        if k == 0 {
            return Err(FlaError::Invalid("class counts must be at least 1".into()));
        }
        acc.checked_mul(k)
            .ok_or_else(|| FlaError::Invalid(format!("tuple count of {class_counts:?} overflows")))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Per feature, sparse `(symbol, frequency)` summing to 1.
    pub frequencies: Vec<Vec<(u32, f64)>>,
    /// Count scale of the window: a symbol's likelihood exponent is its
    /// frequency times this. Windows built from tracks all use the full
    /// mask mass, so every window carries the same evidence scale and the
    /// rank-1 optimum coincides with the pairwise one.
    pub mass: f64,
    pub weight: f64,
}

/// The windows the pairwise accumulator sees, kept individually.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSampleSet {
    pub alphabets: Vec<usize>,
    pub window: WindowSpec,
    pub samples: Vec<WindowSample>,
}

impl WindowSampleSet {
    pub fn from_sequences(sequences: &SymbolSequences, window: &WindowSpec) -> Result<Self> {
        sequences.validate()?;
        let mass = window.full_mass();
        let mut samples = Vec::new();
        for track in &sequences.tracks {
            for (freqs, weight) in track_windows(track, window)? {
                samples.push(WindowSample {
                    frequencies: freqs.features,
                    mass,
                    weight,
                });
            }
        }
        Ok(WindowSampleSet {
            alphabets: sequences.alphabet_sizes.clone(),
            window: *window,
            samples,
        })
    }

    pub fn features(&self) -> usize {
        self.alphabets.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    /// Pairwise joints accumulated from exactly these windows.
    pub fn pairwise(&self) -> Result<PairwiseJointSet> {
        let mut acc = CooccurrenceAccumulator::new(self.alphabets.clone(), self.window);
        for s in &self.samples {
            let freqs = WindowFrequencies {
                features: s.frequencies.clone(),
                mass: s.mass,
            };
            acc.accumulate(&freqs, s.weight)?;
        }
        acc.finalize()
    }

    fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(FlaError::Degenerate("no windows".into()));
        }
        for (n, s) in self.samples.iter().enumerate() {
            if s.frequencies.len() != self.features() {
                return Err(FlaError::Shape(format!("window {n} has wrong feature count")));
            }
            if !(s.mass > 0.0) || !(s.weight >= 0.0 && s.weight.is_finite()) {
                return Err(FlaError::Degenerate(format!("window {n} is empty or badly weighted")));
            }
            for (f, freqs) in s.frequencies.iter().enumerate() {
                let total: f64 = freqs.iter().map(|e| e.1).sum();
                if freqs.is_empty()
                    || (total - 1.0).abs() > 1e-9
                    || freqs
                        .iter()
                        .any(|&(a, v)| a as usize >= self.alphabets[f] || v < 0.0)
                {
                    return Err(FlaError::Degenerate(format!(
                        "window {n} feature {f} is not a frequency vector"
                    )));
                }
            }
        }
        if !(self.total_weight() > 0.0) {
            return Err(FlaError::Degenerate("windows carry no weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullJointModel {
    pub class_counts: Vec<usize>,
    pub alphabets: Vec<usize>,
    /// Dense `p(l₁,…,l_K)`, row-major (last feature varies fastest).
    pub prior: Vec<f64>,
    #[serde(with = "crate::tables::rows_vec")]
    pub conditionals: Vec<Array2<f64>>,
}

impl FullJointModel {
    pub fn features(&self) -> usize {
        self.class_counts.len()
    }

    /// Class tuple of a flat prior index.
    pub fn tuple(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.features()];
        for f in (0..self.features()).rev() {
            out[f] = index % self.class_counts[f];
            index /= self.class_counts[f];
        }
        out
    }

    /// `p(lᵢ, lⱼ)`; for `i == j` a diagonal table of the marginal.
    pub fn pair_prior(&self, i: usize, j: usize) -> Array2<f64> {
        let mut t = Array2::zeros((self.class_counts[i], self.class_counts[j]));
        for (idx, &p) in self.prior.iter().enumerate() {
            let l = self.tuple(idx);
            t[[l[i], l[j]]] += p;
        }
        t
    }

    /// The tuple prior marginalized to `(i, j)`, composed with the two
    /// conditionals.
    pub fn induced_pairwise(&self, i: usize, j: usize) -> Array2<f64> {
        self.conditionals[i]
            .t()
            .dot(&self.pair_prior(i, j).dot(&self.conditionals[j]))
    }

    /// The pairwise model with the same conditionals and the induced pair
    /// priors as mixing tables.
    pub fn to_fla_model(&self) -> FlaModel {
        FlaModel {
            class_counts: self.class_counts.clone(),
            alphabets: self.alphabets.clone(),
            conditionals: self.conditionals.clone(),
            mixing: unordered_pairs(self.features())
                .into_iter()
                .map(|(i, j)| self.pair_prior(i, j))
                .collect(),
        }
    }

    pub fn init(class_counts: &[usize], alphabets: &[usize], seed: u64) -> Result<Self> {
        let tuples = enumerate_tuple_count(class_counts)?;
        let base = FlaModel::init(class_counts, alphabets, seed)?;
        // separate stream so the conditionals match the pairwise init
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f70_91e5);
        let mut prior: Vec<f64> = (0..tuples)
            .map(|_| 1.0 + INIT_JITTER * rng.random_range(-1.0..1.0))
            .collect();
        let total: f64 = prior.iter().sum();
        prior.iter_mut().for_each(|p| *p /= total);
        Ok(FullJointModel {
            class_counts: class_counts.to_vec(),
            alphabets: alphabets.to_vec(),
            prior,
            conditionals: base.conditionals,
        })
    }

    /// `log p(window | tuple)` split per feature: `g[f][l]`.
    fn feature_log_likelihoods(&self, sample: &WindowSample) -> Vec<Vec<f64>> {
        let c = sample.mass;
        sample
            .frequencies
            .iter()
            .enumerate()
            .map(|(f, freqs)| {
                let cond = &self.conditionals[f];
                (0..self.class_counts[f])
                    .map(|l| {
                        c * freqs
                            .iter()
                            .map(|&(a, v)| {
                                let p = cond[[l, a as usize]];
                                if v == 0.0 {
                                    0.0
                                } else {
                                    v * p.ln()
                                }
                            })
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    /// Log of `p(tuple) p(window | tuple)` for every tuple.
    fn joint_log_terms(&self, sample: &WindowSample) -> Vec<f64> {
        let g = self.feature_log_likelihoods(sample);
        self.prior
            .iter()
            .enumerate()
            .map(|(idx, &p)| {
                let l = self.tuple(idx);
                let ll: f64 = l.iter().enumerate().map(|(f, &c)| g[f][c]).sum();
                if p > 0.0 {
                    p.ln() + ll
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    /// Weight-normalized mean of `log p(window)` over the windows.
    pub fn log_likelihood(&self, samples: &WindowSampleSet) -> Result<f64> {
        check(self, samples)?;
        let total = samples.total_weight();
        let mut ll = 0.0;
        for s in &samples.samples {
            ll += s.weight * log_sum_exp(&self.joint_log_terms(s));
        }
        Ok(ll / total)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.prior.len() != enumerate_tuple_count(&self.class_counts)? {
            return Err(FlaError::Shape("tuple prior size mismatch".into()));
        }
        if self.prior.iter().any(|&p| p < 0.0) || (self.prior.iter().sum::<f64>() - 1.0).abs() > tol {
            return Err(FlaError::Numerical("tuple prior is not a distribution".into()));
        }
        for c in &self.conditionals {
            for row in c.rows() {
                if row.iter().any(|&v| v < 0.0) || (row.sum() - 1.0).abs() > tol {
                    return Err(FlaError::Numerical("conditional row is not a distribution".into()));
                }
            }
        }
        Ok(())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check(model: &FullJointModel, samples: &WindowSampleSet) -> Result<()> {
    if model.alphabets != samples.alphabets {
        return Err(FlaError::Shape(format!(
            "model alphabets {:?} vs window alphabets {:?}",
            model.alphabets, samples.alphabets
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrace {
    /// Log-likelihood of the initial model followed by one per iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

impl OracleTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("trace has the initial value")
    }
}

/// One EM step over complete tuples. Returns the new model and its
/// log-likelihood.
pub fn full_joint_iterate(
    model: &FullJointModel,
    samples: &WindowSampleSet,
    floor: f64,
) -> Result<(FullJointModel, f64)> {
    check(model, samples)?;
    let k = model.features();
    let mut prior = vec![0.0; model.prior.len()];
    let mut counts: Vec<Array2<f64>> = model
        .conditionals
        .iter()
        .map(|c| Array2::zeros(c.dim()))
        .collect();
    let mut evidence: Vec<Vec<bool>> = model.alphabets.iter().map(|&n| vec![false; n]).collect();
    let tuples: Vec<Vec<usize>> = (0..model.prior.len()).map(|i| model.tuple(i)).collect();
    let mut class_resp: Vec<Vec<f64>> = model.class_counts.iter().map(|&c| vec![0.0; c]).collect();
    for s in &samples.samples {
        let terms = model.joint_log_terms(s);
        let norm = log_sum_exp(&terms);
        if norm == f64::NEG_INFINITY {
            return Err(FlaError::Numerical("window has zero likelihood under every tuple".into()));
        }
        class_resp.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
        for (idx, t) in terms.iter().enumerate() {
            let r = (t - norm).exp();
            prior[idx] += s.weight * r;
            for f in 0..k {
                class_resp[f][tuples[idx][f]] += r;
            }
        }
        let c = s.weight * s.mass;
        for f in 0..k {
            for &(a, v) in &s.frequencies[f] {
                evidence[f][a as usize] = true;
                for (l, &r) in class_resp[f].iter().enumerate() {
                    counts[f][[l, a as usize]] += c * v * r;
                }
            }
        }
    }
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p = (*p / total).max(floor));
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);
    for (f, t) in counts.iter_mut().enumerate() {
        normalize_rows(t);
        if floor > 0.0 {
            for mut row in t.rows_mut() {
                for (v, &e) in row.iter_mut().zip(&evidence[f]) {
                    if e && *v < floor {
                        *v = floor;
                    }
                }
            }
            normalize_rows(t);
        }
    }
    let next = FullJointModel {
        class_counts: model.class_counts.clone(),
        alphabets: model.alphabets.clone(),
        prior,
        conditionals: counts,
    };
    let ll = next.log_likelihood(samples)?;
    Ok((next, ll))
}

pub fn fit_full_joint(
    samples: &WindowSampleSet,
    class_counts: &[usize],
    config: &FitConfig,
) -> Result<(FullJointModel, OracleTrace)> {
    fit_full_joint_with_cap(samples, class_counts, config, DEFAULT_TUPLE_CAP)
}

/// Fits the tuple model, keeping the restart with the highest final
/// log-likelihood. Refuses when `Πkᵢ` exceeds `cap`.
pub fn fit_full_joint_with_cap(
    samples: &WindowSampleSet,
    class_counts: &[usize],
    config: &FitConfig,
    cap: usize,
) -> Result<(FullJointModel, OracleTrace)> {
    config.validate()?;
    samples.validate()?;
    let tuples = enumerate_tuple_count(class_counts)?;
    if tuples > cap {
        return Err(FlaError::Invalid(format!(
            "{tuples} latent tuples exceed the oracle cap of {cap}"
        )));
    }
    let mut best: Option<(FullJointModel, OracleTrace)> = None;
    for r in 0..config.restarts {
        let seed = config.seed.wrapping_add(r as u64);
        let mut model = FullJointModel::init(class_counts, &samples.alphabets, seed)?;
        let mut lls = vec![model.log_likelihood(samples)?];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < config.max_iters {
            let (next, ll) = full_joint_iterate(&model, samples, config.floor)?;
            let prev = *lls.last().expect("nonempty");
            model = next;
            lls.push(ll);
            iterations += 1;
            if ll - prev < config.tolerance {
                converged = true;
                break;
            }
        }
        let trace = OracleTrace {
            log_likelihoods: lls,
            iterations,
            converged,
            seed,
        };
        let better = match &best {
            None => true,
            Some((_, t)) => trace.final_log_likelihood() > t.final_log_likelihood(),
        };
        if better {
            best = Some((model, trace));
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_model(counts: &[usize], alphabets: &[usize], seed: u64) -> FullJointModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FullJointModel::init(counts, alphabets, seed).unwrap();
        m.prior.iter_mut().for_each(|p| *p = rng.random::<f64>() + 0.05);
        let s: f64 = m.prior.iter().sum();
        m.prior.iter_mut().for_each(|p| *p /= s);
        for c in &mut m.conditionals {
            c.mapv_inplace(|_| rng.random::<f64>() + 0.01);
            normalize_rows(c);
        }
        m
    }

    fn random_samples(alphabets: &[usize], windows: usize, seed: u64) -> WindowSampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..windows)
            .map(|_| {
                let frames = rng.random_range(1..6);
                let frequencies = alphabets
                    .iter()
                    .map(|&n| {
                        let mut v: Vec<(u32, f64)> = Vec::new();
                        for _ in 0..frames {
                            let a = rng.random_range(0..n as u32);
                            match v.iter_mut().find(|e| e.0 == a) {
                                Some(e) => e.1 += 1.0,
                                None => v.push((a, 1.0)),
                            }
                        }
                        v.sort_by_key(|e| e.0);
                        v.iter_mut().for_each(|e| e.1 /= frames as f64);
                        v
                    })
                    .collect();
                WindowSample {
                    frequencies,
                    mass: frames as f64,
                    weight: 1.0,
                }
            })
            .collect();
        WindowSampleSet {
            alphabets: alphabets.to_vec(),
            window: WindowSpec::default(),
            samples,
        }
    }

    #[test]
    fn tuple_counts() {
        assert_eq!(enumerate_tuple_count(&[2, 3, 6, 8]).unwrap(), 288);
        assert_eq!(enumerate_tuple_count(&[1, 1, 1, 1]).unwrap(), 1);
        assert_eq!(enumerate_tuple_count(&[3, 4]).unwrap(), 12);
        assert!(enumerate_tuple_count(&[usize::MAX, 2]).is_err());
        let m = FullJointModel::init(&[2, 3, 6, 8], &[64, 64, 64, 256], 0).unwrap();
        assert_eq!(m.prior.len(), 288);
    }

    #[test]
    fn induced_pairwise_matches_tuple_enumeration() {
        let m = random_model(&[2, 3, 2], &[3, 4, 5], 11);
        for i in 0..3 {
            for j in 0..3 {
                let got = m.induced_pairwise(i, j);
                for a in 0..m.alphabets[i] {
                    for b in 0..m.alphabets[j] {
                        // for i == j both draws share the class l[i]
                        let e: f64 = (0..m.prior.len())
                            .map(|idx| {
                                let l = m.tuple(idx);
                                m.prior[idx]
                                    * m.conditionals[i][[l[i], a]]
                                    * m.conditionals[j][[l[j], b]]
                            })
                            .sum();
                        assert!((got[[a, b]] - e).abs() < 1e-14, "({i},{j}) [{a},{b}]");
                    }
                }
            }
        }
    }

    #[test]
    fn two_feature_prior_is_the_pair_prior() {
        let m = random_model(&[2, 3], &[3, 3], 2);
        let p = m.pair_prior(0, 1);
        for idx in 0..6 {
            assert_eq!(p[[idx / 3, idx % 3]], m.prior[idx]);
        }
    }

    #[test]
    fn independent_prior_gives_product_form() {
        let mut m = random_model(&[2, 2], &[3, 4], 3);
        let (a, b) = ([0.3, 0.7], [0.6, 0.4]);
        m.prior = vec![a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
        let outer = array![[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]];
        let expect = m.conditionals[0].t().dot(&outer.dot(&m.conditionals[1]));
        let got = m.induced_pairwise(0, 1);
        assert!((got - expect).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn single_window_rank_one_closed_form() {
        let samples = random_samples(&[4, 5], 1, 8);
        let (m, _) = fit_full_joint(
            &samples,
            &[1, 1],
            &FitConfig {
                floor: 0.0,
                ..FitConfig::default()
            },
        )
        .unwrap();
        for f in 0..2 {
            for &(a, v) in &samples.samples[0].frequencies[f] {
                assert!((m.conditionals[f][[0, a as usize]] - v).abs() < 1e-12);
            }
            assert!((m.conditionals[f].sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_is_monotone() {
        for seed in 0..20 {
            let samples = random_samples(&[6, 5], 40, seed);
            let (m, trace) = fit_full_joint(
                &samples,
                &[2, 3],
                &FitConfig {
                    seed,
                    max_iters: 200,
                    ..FitConfig::default()
                },
            )
            .unwrap();
            for w in trace.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
            m.validate(1e-9).unwrap();
        }
    }

    #[test]
    fn cap_is_enforced() {
        let samples = random_samples(&[64, 64], 3, 0);
        let err = fit_full_joint_with_cap(&samples, &[20, 20], &FitConfig::default(), 100);
        assert!(err.is_err());
    }
}
