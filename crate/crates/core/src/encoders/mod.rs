//! Embedding encoders: temporal-mean pooling over frames, an MLP trunk,
//! and L2 normalization, trained with an angular prototypical objective.
//!
//! A base encoder is trained on the gender-mixed corpus; group-adapted
//! encoders are fine-tuned copies trained on single-group data. Scoring
//! uses a temporal-crop protocol: several random crops per utterance,
//! embedded and compared all-against-all, averaging the pairwise cosines.

mod ap_loss;
mod train;

pub use ap_loss::{ap_loss, ApLossGrads, ApLossParams};
pub use train::{adapt, train_base, train_gbwl, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, l2_normalize, Mlp, MlpCheckpoint};
use crate::rng::SeededRng;
use crate::synth::{FrameMatrix, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Base,
    FemaleAdapted,
    MaleAdapted,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Base => "base",
            EncoderKind::FemaleAdapted => "female_adapted",
            EncoderKind::MaleAdapted => "male_adapted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    TemporalMean,
}

/// An utterance embedding network. Emitted embeddings are always unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub kind: EncoderKind,
    pub pooling: Pooling,
    pub trunk: Mlp,
}

impl EncoderModel {
    pub fn embedding_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    /// Embed a full utterance: temporal mean over all frames, trunk MLP,
    /// then L2 normalization.
    pub fn embed(&self, frames: &FrameMatrix) -> Result<Vec<f64>> {
        self.embed_crop(frames, 0, frames.n_frames)
    }

    /// Embed the crop `start..start+len` of an utterance.
    pub fn embed_crop(&self, frames: &FrameMatrix, start: usize, len: usize) -> Result<Vec<f64>> {
        if len == 0 || frames.n_frames == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if start + len > frames.n_frames {
            return Err(Error::TooShort {
                needed: start + len,
                got: frames.n_frames,
            });
        }
        if frames.dim != self.feature_dim() {
            return Err(Error::ShapeMismatch {
                context: "encoder input features".into(),
                expected: self.feature_dim(),
                got: frames.dim,
            });
        }
        let pooled = frames.mean_pool(start, len);
        let mut out = self.trunk.forward(&pooled)?;
        l2_normalize(&mut out)?;
        Ok(out)
    }

    pub fn to_checkpoint(&self, train_config: Option<&TrainConfig>) -> EncoderCheckpoint {
        EncoderCheckpoint {
            format_version: nn::CHECKPOINT_FORMAT_VERSION,
            kind: self.kind,
            pooling: self.pooling,
            embedding_dim: self.embedding_dim(),
            trunk: self.trunk.to_checkpoint(),
            train_config: train_config.cloned(),
        }
    }

    pub fn from_checkpoint(ckpt: &EncoderCheckpoint) -> Result<Self> {
        let trunk = Mlp::from_checkpoint(&ckpt.trunk)?;
        if trunk.output_dim() != ckpt.embedding_dim {
            return Err(Error::Artifact(format!(
                "encoder checkpoint embedding_dim {} disagrees with trunk output {}",
                ckpt.embedding_dim,
                trunk.output_dim()
            )));
        }
        Ok(EncoderModel {
            kind: ckpt.kind,
            pooling: ckpt.pooling,
            trunk,
        })
    }

    pub fn save(&self, path: &std::path::Path, train_config: Option<&TrainConfig>) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint(train_config))?;
        crate::synth::io::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt: EncoderCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ckpt)
    }
}

/// Encoder checkpoint: the trunk in the kernel's JSON model format plus
/// kind, pooling, embedding dimension, and a training-config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format_version: u32,
    pub kind: EncoderKind,
    pub pooling: Pooling,
    pub embedding_dim: usize,
    pub trunk: MlpCheckpoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

/// Crop scoring protocol: `n_crops` random fixed-length crops per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropProtocol {
    pub n_crops: usize,
    pub crop_frames: usize,
}

impl Default for CropProtocol {
    fn default() -> Self {
        CropProtocol {
            n_crops: 10,
            crop_frames: 150,
        }
    }
}

impl CropProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_crops == 0 || self.crop_frames == 0 {
            return Err(Error::Config("crop protocol must be non-degenerate".into()));
        }
        Ok(())
    }

    /// Draw `n_crops` start offsets for an utterance of length `n_frames`.
    pub fn draw_offsets(&self, n_frames: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if n_frames < self.crop_frames {
            return Err(Error::TooShort {
                needed: self.crop_frames,
                got: n_frames,
            });
        }
        let span = n_frames - self.crop_frames + 1;
        Ok((0..self.n_crops).map(|_| rng.uniform_usize(span)).collect())
    }
}

/// Mean pairwise cosine similarity between all crops of two utterances,
/// for each model in `models`.
///
/// Crop offsets are drawn once from `rng` (first all of `utt_a`'s, then all
/// of `utt_b`'s) and shared across models, so the per-model results equal
/// independent single-model calls made with an identically seeded stream.
pub fn crop_similarity(
    models: &[&EncoderModel],
    utt_a: &Utterance,
    utt_b: &Utterance,
    protocol: &CropProtocol,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    protocol.validate()?;
    if models.is_empty() {
        return Err(Error::Config("no models given".into()));
    }
    let offsets_a = protocol.draw_offsets(utt_a.frames.n_frames, rng)?;
    let offsets_b = protocol.draw_offsets(utt_b.frames.n_frames, rng)?;
    let mut out = Vec::with_capacity(models.len());
    for model in models {
        let embed_all = |utt: &Utterance, offsets: &[usize]| -> Result<Vec<Vec<f64>>> {
            offsets
                .iter()
                .map(|&s| model.embed_crop(&utt.frames, s, protocol.crop_frames))
                .collect()
        };
        let a = embed_all(utt_a, &offsets_a)?;
        let b = embed_all(utt_b, &offsets_b)?;
        let mut sum = 0.0;
        for ea in &a {
            for eb in &b {
                sum += nn::dot(ea, eb);
            }
        }
        out.push(sum / (a.len() * b.len()) as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cosine_similarity, HiddenActivation, OutputActivation};
    use crate::synth::{generate_corpus, SynthConfig};
    use approx::assert_abs_diff_eq;

    pub(crate) fn test_encoder(feature_dim: usize, embed_dim: usize, seed: u64) -> EncoderModel {
        let mut rng = SeededRng::from_seed(seed);
        EncoderModel {
            kind: EncoderKind::Base,
            pooling: Pooling::TemporalMean,
            trunk: Mlp::new_glorot(
                &[feature_dim, 16, embed_dim],
                HiddenActivation::Relu,
                OutputActivation::Identity,
                &mut rng,
            )
            .unwrap(),
        }
    }

    fn test_utterance(seed: u64, n_frames: usize, dim: usize) -> Utterance {
        let mut rng = SeededRng::from_seed(seed);
        let data = (0..n_frames * dim).map(|_| rng.normal(0.0, 1.0)).collect();
        Utterance {
            id: 0,
            speaker_id: 0,
            frames: FrameMatrix {
                n_frames,
                dim,
                data,
            },
        }
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let model = test_encoder(6, 4, 1);
        let utt = test_utterance(2, 30, 6);
        let e = model.embed(&utt.frames).unwrap();
        assert_abs_diff_eq!(nn::norm(&e), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn identical_frames_give_identical_embeddings() {
        let model = test_encoder(6, 4, 3);
        let utt = test_utterance(4, 20, 6);
        let a = model.embed(&utt.frames).unwrap();
        let b = model.embed(&utt.frames.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frame_order_does_not_matter() {
        let model = test_encoder(5, 3, 5);
        let utt = test_utterance(6, 12, 5);
        let mut reversed_data = Vec::new();
        for t in (0..12).rev() {
            reversed_data.extend_from_slice(utt.frames.frame(t));
        }
        let reversed = FrameMatrix {
            n_frames: 12,
            dim: 5,
            data: reversed_data,
        };
        let a = model.embed(&utt.frames).unwrap();
        let b = model.embed(&reversed).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_trunk_output_is_degenerate() {
        let model = EncoderModel {
            kind: EncoderKind::Base,
            pooling: Pooling::TemporalMean,
            trunk: Mlp::zeros(&[4, 2], HiddenActivation::Relu, OutputActivation::Identity)
                .unwrap(),
        };
        let utt = test_utterance(7, 5, 4);
        assert_eq!(
            model.embed(&utt.frames).unwrap_err().code(),
            "degenerate_embedding"
        );
    }

    #[test]
    fn constant_utterance_scores_one_against_itself() {
        let model = test_encoder(4, 3, 8);
        let frames = FrameMatrix {
            n_frames: 40,
            dim: 4,
            data: [0.4, -0.2, 1.0, 0.3].repeat(40),
        };
        let utt = Utterance {
            id: 0,
            speaker_id: 0,
            frames,
        };
        let protocol = CropProtocol {
            n_crops: 10,
            crop_frames: 8,
        };
        let mut rng = SeededRng::from_seed(9);
        let sims = crop_similarity(&[&model], &utt, &utt, &protocol, &mut rng).unwrap();
        assert_abs_diff_eq!(sims[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn single_full_length_crop_equals_plain_cosine() {
        let model = test_encoder(5, 4, 10);
        let a = test_utterance(11, 25, 5);
        let b = test_utterance(12, 25, 5);
        let protocol = CropProtocol {
            n_crops: 1,
            crop_frames: 25,
        };
        let mut rng = SeededRng::from_seed(13);
        let sims = crop_similarity(&[&model], &a, &b, &protocol, &mut rng).unwrap();
        let ea = model.embed(&a.frames).unwrap();
        let eb = model.embed(&b.frames).unwrap();
        assert_abs_diff_eq!(
            sims[0],
            cosine_similarity(&ea, &eb).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn crop_similarity_matches_direct_enumeration() {
        let model = test_encoder(5, 4, 14);
        let a = test_utterance(15, 40, 5);
        let b = test_utterance(16, 36, 5);
        let protocol = CropProtocol {
            n_crops: 10,
            crop_frames: 12,
        };
        let sims =
            crop_similarity(&[&model], &a, &b, &protocol, &mut SeededRng::from_seed(17)).unwrap();

        // independent enumeration with the same offset stream
        let mut rng = SeededRng::from_seed(17);
        let offs_a: Vec<usize> = (0..10).map(|_| rng.uniform_usize(40 - 12 + 1)).collect();
        let offs_b: Vec<usize> = (0..10).map(|_| rng.uniform_usize(36 - 12 + 1)).collect();
        let mut total = 0.0;
        for &sa in &offs_a {
            let ea = model.embed_crop(&a.frames, sa, 12).unwrap();
            for &sb in &offs_b {
                let eb = model.embed_crop(&b.frames, sb, 12).unwrap();
                total += cosine_similarity(&ea, &eb).unwrap();
            }
        }
        assert_abs_diff_eq!(sims[0], total / 100.0, epsilon = 1e-9);
    }

    #[test]
    fn short_utterance_is_rejected() {
        let model = test_encoder(5, 4, 18);
        let a = test_utterance(19, 10, 5);
        let protocol = CropProtocol {
            n_crops: 2,
            crop_frames: 20,
        };
        let err = crop_similarity(&[&model], &a, &a, &protocol, &mut SeededRng::from_seed(20))
            .unwrap_err();
        assert_eq!(err.code(), "too_short");
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = test_encoder(6, 4, 21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("encoder.json");
        model.save(&path, None).unwrap();
        let back = EncoderModel::load(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn corpus_utterances_embed_cleanly() {
        let cfg = SynthConfig {
            d_latent: 4,
            feature_dim: 8,
            frames_per_utterance: 16,
            utterances_per_speaker: 2,
            seed: 5,
            ..SynthConfig::default()
        };
        let corpus = generate_corpus(&cfg, 2, 2).unwrap();
        let model = test_encoder(8, 4, 22);
        for u in &corpus.utterances {
            let e = model.embed(&u.frames).unwrap();
            assert_abs_diff_eq!(nn::norm(&e), 1.0, epsilon = 1e-6);
        }
    }
}
