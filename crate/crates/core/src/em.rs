//! EM estimation of a [`FlaModel`] from pairwise empirical joints.
//!
//! The criterion is the sum over ordered feature pairs of
//! `KL(p̂(x̂ᵢ,x̂ⱼ) ‖ p̃(x̂ᵢ,x̂ⱼ))`. Each pair is a latent class model over
//! symbol pairs; the conditionals are shared by every pair a feature takes
//! part in, which is what couples the pairs together.
//!
//! The E-step responsibilities `γ(lᵢ,lⱼ | a,b) ∝ p̃(lᵢ,lⱼ) p̃(a|lᵢ) p̃(b|lⱼ)`
//! are never materialized: with `R = p̂ / p̃` the expected counts factor into
//! a few small matrix products.

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cooccur::PairwiseJointSet;
use crate::error::{FlaError, Result};
use crate::model::FlaModel;
use crate::tables::{kl_divergence, normalize_rows, unordered_pairs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once the objective decreases by less than this (absolute).
    pub tolerance: f64,
    pub seed: u64,
    /// Lower bound for table entries that carry empirical evidence.
    pub floor: f64,
    /// Include the `(i, i)` terms in the criterion.
    pub include_diagonal: bool,
    /// Independent initializations (seeds `seed`, `seed+1`, …); the fit
    /// with the lowest final objective is kept.
    pub restarts: usize,
    pub init: InitStrategy,
}

/// How the conditionals of each restart are initialized. Mixing tables
/// always start uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Uniform rows scaled by `1 + jitter·u`, `u ~ U[-1, 1)`.
    Jitter { jitter: f64 },
    /// Rows seeded k-means++ style from the empirical conditionals
    /// `p̂(x̂ᵢ | x̂ⱼ = b)`, then mixed with the marginal of feature `i`,
    /// which gets weight `blend` so every observed symbol keeps support.
    Anchors { blend: f64 },
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::Anchors { blend: 0.1 }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 500,
            tolerance: 1e-7,
            seed: 0,
            floor: 1e-9,
            include_diagonal: true,
            restarts: 20,
            init: InitStrategy::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(FlaError::Invalid("tolerance must be positive".into()));
        }
        if !(self.floor >= 0.0 && self.floor < 1e-2) {
            return Err(FlaError::Invalid(format!("bad floor {}", self.floor)));
        }
        if self.restarts == 0 {
            return Err(FlaError::Invalid("restarts must be at least 1".into()));
        }
        match self.init {
            InitStrategy::Jitter { jitter } if !(0.0..1.0).contains(&jitter) => {
                Err(FlaError::Invalid(format!("init jitter {jitter} outside [0, 1)")))
            }
            InitStrategy::Anchors { blend } if !(blend > 0.0 && blend <= 1.0) => {
                Err(FlaError::Invalid(format!("anchor blend {blend} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Objective of the initial model followed by one value per iteration.
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Seed of the initialization that produced the kept model.
    pub seed: u64,
}

impl FitTrace {
    pub fn final_objective(&self) -> f64 {
        *self.objectives.last().expect("trace has the initial objective")
    }
}

fn check_shapes(model: &FlaModel, joints: &PairwiseJointSet) -> Result<()> {
    if model.alphabets != joints.alphabets {
        return Err(FlaError::Shape(format!(
            "model alphabets {:?} vs joint alphabets {:?}",
            model.alphabets, joints.alphabets
        )));
    }
    Ok(())
}

fn active_pairs(features: usize, include_diagonal: bool) -> Vec<(usize, usize, f64)> {
    unordered_pairs(features)
        .into_iter()
        .filter(|&(i, j)| include_diagonal || i != j)
        .map(|(i, j)| (i, j, if i == j { 1.0 } else { 2.0 }))
        .collect()
}

/// Sum of KL divergences over all ordered pairs (diagonal included unless
/// `include_diagonal` is false). `(i,j)` and `(j,i)` contribute equally.
pub fn objective_with(
    model: &FlaModel,
    joints: &PairwiseJointSet,
    include_diagonal: bool,
) -> Result<f64> {
    check_shapes(model, joints)?;
    let mut total = 0.0;
    for (i, j, weight) in active_pairs(model.features(), include_diagonal) {
        total += weight * kl_divergence(joints.joint(i, j), model.pairwise_joint(i, j).view());
    }
    Ok(total)
}

pub fn objective(model: &FlaModel, joints: &PairwiseJointSet) -> Result<f64> {
    objective_with(model, joints, true)
}

/// Clamps evidence-carrying entries of a row-stochastic table to at least
/// `floor`, then renormalizes rows.
fn floor_rows(t: &mut Array2<f64>, evidence: &[bool], floor: f64) {
    if floor > 0.0 {
        for mut row in t.rows_mut() {
            for (v, &e) in row.iter_mut().zip(evidence) {
                if e && *v < floor {
                    *v = floor;
                }
            }
        }
    }
    normalize_rows(t);
}

/// One EM step. Returns the updated model and its objective.
pub fn em_iterate(
    model: &FlaModel,
    joints: &PairwiseJointSet,
    config: &FitConfig,
) -> Result<(FlaModel, f64)> {
    check_shapes(model, joints)?;
    let k = model.features();
    let pairs = active_pairs(k, config.include_diagonal);
    if pairs.is_empty() {
        return Err(FlaError::Invalid(
            "no feature pairs to fit (single feature with diagonal excluded)".into(),
        ));
    }

    let mut cond_counts: Vec<Array2<f64>> = model
        .conditionals
        .iter()
        .map(|c| Array2::zeros(c.dim()))
        .collect();
    let mut next = model.clone();

    for &(i, j, weight) in &pairs {
        let ci = &model.conditionals[i];
        let cj = &model.conditionals[j];
        let mix = model.mixing(i, j);
        let p = joints.joint(i, j);

        // A = M Cⱼ, Q = Cᵢᵀ A, R = P / Q
        let a = mix.dot(cj);
        let q = ci.t().dot(&a);
        let mut r = Array2::<f64>::zeros(q.dim());
        let mut bad = false;
        Zip::from(&mut r).and(&p).and(&q).for_each(|r, &pv, &qv| {
            if pv > 0.0 {
                if qv > 0.0 {
                    *r = pv / qv;
                } else {
                    bad = true;
                }
            }
        });
        if bad {
            return Err(FlaError::Numerical(format!(
                "model assigns zero probability to observed pairs of features ({i},{j})"
            )));
        }

        // B = Cᵢ R;  N_M = M ⊙ (B Cⱼᵀ)
        let b = ci.dot(&r);
        let mut n_mix = &mix * &b.dot(&cj.t());
        // row side: Cᵢ ⊙ (A Rᵀ); column side: Cⱼ ⊙ (Mᵀ B)
        let n_row = ci * &a.dot(&r.t());
        let n_col = cj * &mix.t().dot(&b);
        cond_counts[i].scaled_add(weight, &n_row);
        cond_counts[j].scaled_add(weight, &n_col);

        if i == j {
            n_mix = (&n_mix + &n_mix.t()) * 0.5;
        }
        let total = n_mix.sum();
        if !(total > 0.0) {
            return Err(FlaError::Numerical(format!("mixing table ({i},{j}) lost all mass")));
        }
        n_mix /= total;
        if config.floor > 0.0 {
            n_mix.mapv_inplace(|v| v.max(config.floor));
            let s = n_mix.sum();
            n_mix /= s;
        }
        let idx = crate::tables::pair_index(k, i, j);
        next.mixing[idx] = n_mix;
    }

    for (f, counts) in cond_counts.into_iter().enumerate() {
        if !pairs.iter().any(|&(i, j, _)| i == f || j == f) {
            continue;
        }
        let mut c = counts;
        let degenerate = normalize_rows(&mut c);
        if let Some(&row) = degenerate.first() {
            return Err(FlaError::Numerical(format!(
                "class {row} of feature {f} received no expected counts"
            )));
        }
        floor_rows(&mut c, &joints.evidence(f), config.floor);
        next.conditionals[f] = c;
    }

    if !config.include_diagonal {
        // (i,i) is not estimated; keep it as the diagonal of the pooled
        // off-diagonal class marginal so type marginals stay meaningful.
        for i in 0..k {
            let mut marg = vec![0.0; model.class_counts[i]];
            for j in (0..k).filter(|&j| j != i) {
                for (l, row) in next.mixing(i, j).rows().into_iter().enumerate() {
                    marg[l] += row.sum();
                }
            }
            let s: f64 = marg.iter().sum();
            let idx = crate::tables::pair_index(k, i, i);
            next.mixing[idx] = Array2::from_diag(&ndarray::Array1::from(
                marg.iter().map(|v| v / s).collect::<Vec<_>>(),
            ));
        }
    }

    let obj = objective_with(&next, joints, config.include_diagonal)?;
    Ok((next, obj))
}

/// Initial model for one restart.
pub fn initial_model(
    joints: &PairwiseJointSet,
    class_counts: &[usize],
    init: InitStrategy,
    seed: u64,
) -> Result<FlaModel> {
    match init {
        InitStrategy::Jitter { jitter } => {
            FlaModel::init_with_jitter(class_counts, &joints.alphabets, seed, jitter)
        }
        InitStrategy::Anchors { blend } => {
            let mut model = FlaModel::init(class_counts, &joints.alphabets, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (i, &k) in class_counts.iter().enumerate() {
                model.conditionals[i] = anchor_rows(joints, i, k, blend, &mut rng);
            }
            Ok(model)
        }
    }
}

/// Candidate rows `p̂(x̂ᵢ | x̂ⱼ = b)` with their mass `p̂(b)`, over every
/// feature `j`, `i` included.
fn anchor_candidates(joints: &PairwiseJointSet, i: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    for j in 0..joints.features() {
        let table = joints.joint(i, j);
        for col in table.columns() {
            let mass = col.sum();
            if mass > 0.0 {
                out.push((col.iter().map(|v| v / mass).collect(), mass));
            }
        }
    }
    out
}

fn anchor_rows(
    joints: &PairwiseJointSet,
    i: usize,
    classes: usize,
    blend: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let candidates = anchor_candidates(joints, i);
    let marginal = joints.marginal(i);
    let tv = |a: &[f64], b: &[f64]| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let mut chosen: Vec<usize> = Vec::with_capacity(classes);
    let mut dist = vec![1.0f64; candidates.len()];
    for _ in 0..classes {
        let weights: Vec<f64> = candidates.iter().zip(&dist).map(|((_, m), d)| m * d * d).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (c, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = c;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..candidates.len())
        };
        chosen.push(pick);
        for (c, d) in dist.iter_mut().enumerate() {
            *d = d.min(tv(&candidates[c].0, &candidates[pick].0));
        }
    }
    let n = marginal.len();
    let mut rows = Array2::from_shape_fn((classes, n), |(l, a)| {
        (1.0 - blend) * candidates[chosen[l]].0[a] + blend * marginal[a]
    });
    normalize_rows(&mut rows);
    rows
}

fn fit_once(
    joints: &PairwiseJointSet,
    class_counts: &[usize],
    config: &FitConfig,
    seed: u64,
) -> Result<(FlaModel, FitTrace)> {
    let mut model = initial_model(joints, class_counts, config.init, seed)?;
    let mut objectives = vec![objective_with(&model, joints, config.include_diagonal)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let (next, obj) = em_iterate(&model, joints, config)?;
        let prev = *objectives.last().expect("nonempty");
        model = next;
        objectives.push(obj);
        iterations += 1;
        if prev - obj < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok((
        model,
        FitTrace {
            objectives,
            iterations,
            converged,
            seed,
        },
    ))
}

/// Fits a model from seeded initializations until the objective decrease
/// falls below the tolerance or `max_iters` is reached.
pub fn fit(
    joints: &PairwiseJointSet,
    class_counts: &[usize],
    config: &FitConfig,
) -> Result<(FlaModel, FitTrace)> {
    config.validate()?;
    let mut best: Option<(FlaModel, FitTrace)> = None;
    for r in 0..config.restarts {
        let seed = config.seed.wrapping_add(r as u64);
        let candidate = fit_once(joints, class_counts, config, seed)?;
        let better = match &best {
            None => true,
            Some((_, t)) => candidate.1.final_objective() < t.final_objective(),
        };
        if better {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}
