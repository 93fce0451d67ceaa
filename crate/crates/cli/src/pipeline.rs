//! The end-to-end steps behind the subcommands.

use std::fmt;

use fla_core::align::aligned_distances;
use fla_core::em::objective_with;
use fla_core::oracle::fit_full_joint;
use fla_core::{
    classify, fit, CooccurrenceAccumulator, Feature, FitConfig, FitSummary, FlaError, LabelSequences,
    ModelFile, QuantizerSet, SegmentSet, TrackSet, WindowSampleSet,
};
use serde::Serialize;

use crate::manifest::RunConfig;

/// Quantize, accumulate and fit.
pub fn fit_tracks(tracks: &TrackSet, cfg: &RunConfig) -> fla_core::Result<ModelFile> {
    if cfg.classes.len() != Feature::ALL.len() {
        return Err(FlaError::Invalid(format!(
            "need one class count per feature, got {:?}",
            cfg.classes
        )));
    }
    let window = cfg.window()?;
    let quantizers = QuantizerSet::fit(tracks, &cfg.bins)?;
    let sequences = quantizers.quantize(tracks)?;
    let mut acc = CooccurrenceAccumulator::new(quantizers.alphabet_sizes(), window);
    acc.accumulate_all(&sequences)?;
    let joints = acc.finalize()?;
    let (model, trace) = fit(&joints, &cfg.classes, &cfg.fit)?;
    Ok(ModelFile::new(
        cfg.frame_rate,
        window,
        quantizers,
        model,
        FitSummary::new(&cfg.fit, &trace),
        Some(acc),
    ))
}

/// Classify and segment with the model's quantizers and window.
pub fn classify_tracks(
    tracks: &TrackSet,
    file: &ModelFile,
    smooth: bool,
) -> fla_core::Result<(LabelSequences, SegmentSet)> {
    let sequences = file.quantizers.quantize(tracks)?;
    classify(&file.model, &sequences, smooth.then_some(&file.window))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub features: Vec<String>,
    pub class_counts: Vec<usize>,
    pub windows: usize,
    /// Pairwise criterion of the pairwise estimator's fit.
    pub pairwise_objective: f64,
    /// Pairwise criterion of the joints induced by the full-joint fit.
    pub oracle_objective: f64,
    pub oracle_log_likelihood: f64,
    pub pairwise_iterations: usize,
    pub oracle_iterations: usize,
    /// Per feature, total variation between matched conditional rows of
    /// the two fits.
    pub conditional_distances: Vec<Vec<f64>>,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "features: {}", self.features.join(","))?;
        writeln!(f, "classes: {:?}", self.class_counts)?;
        writeln!(f, "windows: {}", self.windows)?;
        writeln!(f, "pairwise objective: {:.9}", self.pairwise_objective)?;
        writeln!(f, "oracle induced objective: {:.9}", self.oracle_objective)?;
        writeln!(f, "oracle log-likelihood per window: {:.9}", self.oracle_log_likelihood)?;
        writeln!(f, "iterations: pairwise {}, oracle {}", self.pairwise_iterations, self.oracle_iterations)?;
        for (name, d) in self.features.iter().zip(&self.conditional_distances) {
            let cells: Vec<String> = d.iter().map(|v| format!("{v:.4}")).collect();
            writeln!(f, "conditional tv {name}: {}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Fits both estimators on the same windows and scores each with the
/// pairwise criterion.
pub fn compare_on_samples(
    samples: &WindowSampleSet,
    class_counts: &[usize],
    config: &FitConfig,
    feature_names: Vec<String>,
) -> fla_core::Result<OracleReport> {
    let joints = samples.pairwise()?;
    let (oracle, oracle_trace) = fit_full_joint(samples, class_counts, config)?;
    let (model, trace) = fit(&joints, class_counts, config)?;
    let induced = oracle.to_fla_model();
    let conditional_distances = model
        .conditionals
        .iter()
        .zip(&induced.conditionals)
        .map(|(a, b)| aligned_distances(b, a))
        .collect::<fla_core::Result<Vec<_>>>()?;
    Ok(OracleReport {
        features: feature_names,
        class_counts: class_counts.to_vec(),
        windows: samples.samples.len(),
        pairwise_objective: trace.final_objective(),
        oracle_objective: objective_with(&induced, &joints, config.include_diagonal)?,
        oracle_log_likelihood: oracle_trace.final_log_likelihood(),
        pairwise_iterations: trace.iterations,
        oracle_iterations: oracle_trace.iterations,
        conditional_distances,
    })
}

pub fn parse_features(list: Option<&str>) -> fla_core::Result<Vec<Feature>> {
    match list {
        None => Ok(Feature::ALL.to_vec()),
        Some(s) => s.split(',').map(|p| p.trim().parse::<Feature>()).collect(),
    }
}

pub fn compare_oracle(tracks: &TrackSet, cfg: &RunConfig) -> fla_core::Result<OracleReport> {
    let features = parse_features(cfg.features.as_deref())?;
    if cfg.classes.len() != features.len() {
        return Err(FlaError::Invalid(format!(
            "{} class counts for {} features",
            cfg.classes.len(),
            features.len()
        )));
    }
    fla_core::enumerate_tuple_count(&cfg.classes).and_then(|n| {
        if n > fla_core::oracle::DEFAULT_TUPLE_CAP {
            Err(FlaError::Invalid(format!(
                "{n} latent tuples exceed the oracle cap of {}",
                fla_core::oracle::DEFAULT_TUPLE_CAP
            )))
        } else {
            Ok(n)
        }
    })?;
    let window = cfg.window()?;
    let quantizers = QuantizerSet::fit(tracks, &cfg.bins)?;
    let indices: Vec<usize> = features.iter().map(|f| f.index()).collect();
    let sequences = quantizers.quantize(tracks)?.select(&indices)?;
    let samples = WindowSampleSet::from_sequences(&sequences, &window)?;
    compare_on_samples(
        &samples,
        &cfg.classes,
        &cfg.fit,
        features.iter().map(|f| f.name().to_string()).collect(),
    )
}
