//! Versioned JSON model file.
//!
//! Holds everything needed to classify new tracks and to redraw the
//! empirical tables: quantizers, window, fitted model, fit summary and the
//! accumulator snapshot. Field order is fixed and no maps are used, so a
//! given fit always serializes to the same bytes.

use serde::{Deserialize, Serialize};

use crate::cooccur::{CooccurrenceAccumulator, WindowSpec};
use crate::em::{FitConfig, FitTrace};
use crate::error::{FlaError, Result};
use crate::model::FlaModel;
use crate::quantize::QuantizerSet;
use crate::query::QueryContext;

pub const FORMAT_NAME: &str = "fla-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub config: FitConfig,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub objectives: Vec<f64>,
}

impl FitSummary {
    pub fn new(config: &FitConfig, trace: &FitTrace) -> Self {
        FitSummary {
            config: *config,
            seed: trace.seed,
            iterations: trace.iterations,
            converged: trace.converged,
            final_objective: trace.final_objective(),
            objectives: trace.objectives.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub frame_rate: f64,
    pub window: WindowSpec,
    pub quantizers: QuantizerSet,
    /// Optional text names per feature, indexed by class id.
    #[serde(default)]
    pub class_names: Vec<Vec<String>>,
    pub model: FlaModel,
    pub fit: FitSummary,
    pub accumulator: Option<CooccurrenceAccumulator>,
}

impl ModelFile {
    pub fn new(
        frame_rate: f64,
        window: WindowSpec,
        quantizers: QuantizerSet,
        model: FlaModel,
        fit: FitSummary,
        accumulator: Option<CooccurrenceAccumulator>,
    ) -> Self {
        ModelFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            frame_rate,
            window,
            quantizers,
            class_names: Vec::new(),
            model,
            fit,
            accumulator,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_NAME {
            return Err(FlaError::Invalid(format!("not a model file (format `{}`)", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(FlaError::Invalid(format!(
                "model file version {} is not supported (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if self.quantizers.alphabet_sizes() != self.model.alphabets {
            return Err(FlaError::Shape("quantizer alphabets do not match the model".into()));
        }
        self.model.validate(1e-6)?;
        for (f, names) in self.class_names.iter().enumerate() {
            if !names.is_empty() && names.len() != self.model.class_counts[f] {
                return Err(FlaError::Invalid(format!(
                    "feature {f}: {} class names for {} classes",
                    names.len(),
                    self.model.class_counts[f]
                )));
            }
        }
        if let Some(acc) = &self.accumulator {
            if acc.alphabets != self.model.alphabets {
                return Err(FlaError::Shape("accumulator alphabets do not match the model".into()));
            }
        }
        Ok(())
    }

    pub fn query_context(&self) -> QueryContext {
        let mut ctx = QueryContext::new(self.model.class_counts.clone());
        for (f, names) in self.class_names.iter().enumerate().take(ctx.class_names.len()) {
            ctx.class_names[f] = names.clone();
        }
        ctx
    }
}
