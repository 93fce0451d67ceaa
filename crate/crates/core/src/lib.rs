//! Factored latent class models for tracked-object observations.
//!
//! Each observation type (size, speed, direction, position) gets its own
//! latent class model. The models are estimated jointly from windowed
//! pairwise co-occurrence statistics, then used to classify, segment and
//! query track sequences.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod classify;
pub mod cooccur;
pub mod em;
pub mod error;
pub mod export;
pub mod model;
pub mod modelfile;
pub mod oracle;
pub mod query;
pub mod quantize;
pub mod synth;
pub mod tables;
pub mod track;

pub use classify::{classify, LabelSequences, PosteriorSequence, Segment, SegmentSet};
pub use cooccur::{CooccurrenceAccumulator, PairwiseJointSet, WeightRule, WindowSpec};
pub use em::{fit, FitConfig, FitTrace};
pub use error::{FlaError, Result};
pub use model::FlaModel;
pub use modelfile::{FitSummary, ModelFile};
pub use oracle::{enumerate_tuple_count, fit_full_joint, FullJointModel, WindowSampleSet};
pub use query::{parse_query, query, QueryContext, QueryMatch, QueryPredicate};
pub use quantize::{BinConfig, BinSpec, QuantizerSet, SymbolSequences, SymbolTrack};
pub use synth::{generate_scene, inject_glitches, GroundTruthLabels, SceneSpec};
pub use track::{Feature, ObservationVector, Track, TrackSet};
