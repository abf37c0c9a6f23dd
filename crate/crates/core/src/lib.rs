//! Temporal action proposal generation on pre-extracted feature sequences.
//!
//! The pipeline has five stages:
//!
//! 1. **Boundary evaluation**: a small temporal convolutional network maps a
//!    feature sequence to per-snippet actionness, start and end probabilities.
//! 2. **Proposal generation**: probable boundary locations are paired into
//!    candidate proposals and each proposal is summarized by a fixed-length
//!    interpolated actionness profile.
//! 3. **Confidence evaluation**: a small regressor predicts each proposal's
//!    overlap with ground truth from that profile.
//! 4. **Post-processing**: boundary and confidence scores are fused and
//!    near-duplicates are suppressed.
//! 5. **Evaluation**: average recall against annotations across proposal
//!    budgets and overlap thresholds.
//!
//! All randomness flows through explicitly seeded generators and all
//! collections with serialized order are deterministic, so every stage is
//! reproducible byte-for-byte.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod intervals;
mod ioutil;
pub mod nn;
pub mod pem;
pub mod pgm;
pub mod pipeline;
pub mod postproc;
pub mod synth;
pub mod tem;

pub use dataset::{DatasetManifest, Split, VideoEntry};
pub use error::{Error, Result};
pub use eval::{ArCurve, EvalConfig, MetricReport, ScoredVideo};
pub use intervals::{Region, RegionKind, TemporalInterval};
pub use nn::{Activation, LayerStack, OptimizerConfig};
pub use pem::{PemConfig, PemSample};
pub use pgm::{CandidateBoundarySet, DurationBounds, Proposal};
pub use pipeline::{PipelineConfig, Workdir};
pub use postproc::{FinalProposal, NmsConfig, NmsMode};
pub use synth::SynthConfig;
pub use tem::{AnnotationSet, FeatureSequence, ProbabilitySequences, TemLossConfig, TemTargets};
