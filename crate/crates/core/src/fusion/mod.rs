//! Score fusion: the cosine score triple from base/female/male encoders,
//! a learned sigmoid-output MLP that fuses it into one decision score, and
//! the fixed equal-weight fusion ablation.
//!
//! # Score file format
//!
//! One scored trial per line, seven space-separated fields:
//!
//! ```text
//! <utt_a> <utt_b> <s_base> <s_female> <s_male> <s_fused> <label>
//! ```
//!
//! Scores are decimal floats; `label` is `1` for same-speaker trials and
//! `0` otherwise. Single-encoder evaluations fill all three component
//! columns with the one available score.

mod pairs;
mod train;

pub use pairs::{sample_pairs, PairBatch, ScorePair};
pub use train::{train_fusion, FusionOutcome, FusionTrainConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{crop_similarity, CropProtocol, EncoderModel};
use crate::error::{Error, Result};
use crate::nn::{HiddenActivation, Mlp, MlpCheckpoint, OutputActivation};
use crate::rng::SeededRng;
use crate::synth::Utterance;

/// Cosine scores from the base, female-adapted, and male-adapted encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub s_base: f64,
    pub s_female: f64,
    pub s_male: f64,
}

impl ScoreTriple {
    pub fn new(s_base: f64, s_female: f64, s_male: f64) -> Result<Self> {
        for (name, v) in [("base", s_base), ("female", s_female), ("male", s_male)] {
            if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                return Err(Error::DegenerateInput(format!(
                    "{name} score {v} outside [-1, 1]"
                )));
            }
        }
        Ok(ScoreTriple {
            s_base,
            s_female,
            s_male,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s_base, self.s_female, self.s_male]
    }
}

/// The fused-score MLP: 3 → 32 → 32 → 1, ReLU hidden, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    mlp: Mlp,
}

pub const FUSION_HIDDEN: usize = 32;

impl FusionModel {
    pub fn new(rng: &mut SeededRng) -> Self {
        let mlp = Mlp::new_glorot(
            &[3, FUSION_HIDDEN, FUSION_HIDDEN, 1],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
            rng,
        )
        .expect("fixed fusion layout is valid");
        FusionModel { mlp }
    }

    /// Wrap an existing network, enforcing the 3-in/1-out sigmoid contract.
    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != 3 {
            return Err(Error::Config(format!(
                "fusion input width must be 3, got {}",
                mlp.input_dim()
            )));
        }
        if mlp.output_dim() != 1 {
            return Err(Error::Config("fusion output width must be 1".into()));
        }
        if mlp.output_activation() != OutputActivation::Sigmoid {
            return Err(Error::Config("fusion output must be sigmoid".into()));
        }
        Ok(FusionModel { mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub(crate) fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Fused score in (0, 1).
    pub fn fuse(&self, triple: &ScoreTriple) -> f64 {
        self.mlp
            .forward(&triple.as_array())
            .expect("triple matches fusion input width")[0]
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        self.mlp.to_checkpoint()
    }

    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<Self> {
        Self::from_mlp(Mlp::from_checkpoint(ckpt)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint())?;
        crate::synth::io::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: MlpCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ckpt)
    }
}

/// Equal-weight fusion: the plain mean of the three scores.
pub fn equal_weight_fuse(triple: &ScoreTriple) -> f64 {
    (triple.s_base + triple.s_female + triple.s_male) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Same,
    Different,
}

/// Threshold the fused score: `Same` iff strictly greater than `threshold`.
pub fn verify(model: &FusionModel, triple: &ScoreTriple, threshold: f64) -> Result<Decision> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "verification threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(if model.fuse(triple) > threshold {
        Decision::Same
    } else {
        Decision::Different
    })
}

/// Probability floor/ceiling applied inside the binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy over fused scores:
/// `L = -(1/M)(Σ_{n∈P} y_n log S_n + Σ_{n∈N} (1-y_n) log(1-S_n))`,
/// with `M` the total pair count and scores clamped to
/// `[BCE_CLAMP, 1-BCE_CLAMP]`. Summation runs over the positive partition
/// first, then the negative partition, in input order.
pub fn bce_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Config("BCE over an empty batch".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "bce_loss".into(),
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let clamp = |s: f64| s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let mut pos_sum = 0.0;
    for (&s, _) in scores.iter().zip(labels).filter(|(_, &y)| y) {
        pos_sum += clamp(s).ln();
    }
    let mut neg_sum = 0.0;
    for (&s, _) in scores.iter().zip(labels).filter(|(_, &y)| !y) {
        neg_sum += (1.0 - clamp(s)).ln();
    }
    Ok(-(pos_sum + neg_sum) / scores.len() as f64)
}

/// Compute the three-component score triple for one utterance pair using
/// the crop protocol. Crop placement comes from `rng`, shared across the
/// three encoders, so each component equals an independent
/// [`crop_similarity`] call made with an identically seeded stream.
pub fn score_triple(
    base: &EncoderModel,
    female: &EncoderModel,
    male: &EncoderModel,
    utt_a: &Utterance,
    utt_b: &Utterance,
    protocol: &CropProtocol,
    rng: &mut SeededRng,
) -> Result<ScoreTriple> {
    let sims = crop_similarity(&[base, female, male], utt_a, utt_b, protocol, rng)?;
    ScoreTriple::new(sims[0], sims[1], sims[2])
}

/// One row of a score file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub utt_a: u32,
    pub utt_b: u32,
    pub triple: ScoreTriple,
    pub fused: f64,
    pub target: bool,
}

pub fn save_score_file(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 64);
    for r in rows {
        out.push_str(&format!(
            "{} {} {:.9} {:.9} {:.9} {:.9} {}\n",
            r.utt_a,
            r.utt_b,
            r.triple.s_base,
            r.triple.s_female,
            r.triple.s_male,
            r.fused,
            r.target as u8
        ));
    }
    crate::synth::io::write_atomic(path, out.as_bytes())
}

pub fn load_score_file(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::Artifact(format!(
                "score file line {}: expected 7 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Artifact(format!("score file line {}: bad float", lineno + 1)))
        };
        rows.push(ScoreRow {
            utt_a: fields[0].parse().map_err(|_| {
                Error::Artifact(format!("score file line {}: bad utterance id", lineno + 1))
            })?,
            utt_b: fields[1].parse().map_err(|_| {
                Error::Artifact(format!("score file line {}: bad utterance id", lineno + 1))
            })?,
            triple: ScoreTriple {
                s_base: parse_f(fields[2])?,
                s_female: parse_f(fields[3])?,
                s_male: parse_f(fields[4])?,
            },
            fused: parse_f(fields[5])?,
            target: match fields[6] {
                "1" => true,
                "0" => false,
                _ => {
                    return Err(Error::Artifact(format!(
                        "score file line {}: bad label",
                        lineno + 1
                    )))
                }
            },
        });
    }
    Ok(rows)
}
