//! Group-adapted fusion pipeline for fair speaker verification, at desk
//! scale on synthetic corpora.
//!
//! The pipeline trains a base embedding encoder on a gender-mixed corpus,
//! fine-tunes per-group copies, fuses the three cosine scores with a small
//! learned MLP, and measures group-wise equal error rates and their
//! disparity on strictly controlled trial sets. Corpora are synthesized
//! with exact control over the female:male speaker ratio so the effect of
//! training imbalance on verification fairness can be reproduced and
//! mitigated end to end.
//!
//! Module map:
//! - [`nn`]: dense MLP kernel with analytic gradients, Adam, cosine ops
//! - [`synth`]: synthetic speakers, utterances, ratio-controlled corpora
//! - [`trials`]: verification trial sets with controlled gender composition
//! - [`encoders`]: embedding encoders, metric-loss training, crop scoring
//! - [`fusion`]: score triples, learned and equal-weight fusion
//! - [`evaluation`]: EER, group-wise EER, disparity score, silhouettes
//! - [`harness`]: experiment orchestration, persisted artifacts, charts

pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod trials;

pub use error::{Error, Result};
