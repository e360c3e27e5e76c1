//! Fusion head training: precompute score triples for a sampled pair batch
//! with frozen encoders, then fit the MLP with Adam on binary cross-entropy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_pairs, score_triple, FusionModel, ScoreTriple, BCE_CLAMP};
use crate::encoders::{CropProtocol, EncoderModel};
use crate::error::{Error, Result};
use crate::nn::{AdamState, GradientRecord};
use crate::rng::{derive_seed, derive_seed_indexed, SeededRng};
use crate::synth::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainConfig {
    /// Total sampled training pairs.
    pub n_pairs: usize,
    pub positive_fraction: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub epoch_decay: f64,
    /// Crop protocol used to score the training pairs.
    pub protocol: CropProtocol,
    /// Default seed; harness runs override per invocation.
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig {
            n_pairs: 4000,
            positive_fraction: 0.5,
            minibatch: 250,
            epochs: 50,
            learning_rate: 0.001,
            epoch_decay: 1.0,
            protocol: CropProtocol::default(),
            seed: 0,
        }
    }
}

impl FusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.minibatch == 0 {
            return Err(Error::Config("pair and batch counts must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epoch_decay <= 0.0 || self.epoch_decay > 1.0 {
            return Err(Error::Config("epoch decay must lie in (0, 1]".into()));
        }
        self.protocol.validate()
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub model: FusionModel,
    pub epoch_losses: Vec<f64>,
    /// Training triples and labels, kept for inspection and held-out-free
    /// diagnostics.
    pub triples: Vec<(ScoreTriple, bool)>,
}

/// Score every pair of a batch with the three frozen encoders, in parallel.
/// Per-pair crop streams are derived by pair index, so results do not
/// depend on thread scheduling.
pub fn score_pair_batch(
    base: &EncoderModel,
    female: &EncoderModel,
    male: &EncoderModel,
    corpus: &Corpus,
    pairs: &[(u32, u32)],
    protocol: &CropProtocol,
    seed: u64,
) -> Result<Vec<ScoreTriple>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(a, b))| {
            let utt_a = corpus
                .utterance(a)
                .ok_or_else(|| Error::Artifact(format!("unknown utterance {a}")))?;
            let utt_b = corpus
                .utterance(b)
                .ok_or_else(|| Error::Artifact(format!("unknown utterance {b}")))?;
            let mut rng =
                SeededRng::from_seed(derive_seed_indexed(seed, "pair-crops", idx as u64));
            score_triple(base, female, male, utt_a, utt_b, protocol, &mut rng)
        })
        .collect()
}

/// Train the fusion MLP on sampled pairs. The encoders are frozen; triples
/// are computed once up front and reused every epoch.
pub fn train_fusion(
    base: &EncoderModel,
    female: &EncoderModel,
    male: &EncoderModel,
    corpus: &Corpus,
    config: &FusionTrainConfig,
    seed: u64,
) -> Result<FusionOutcome> {
    config.validate()?;
    let batch = sample_pairs(
        corpus,
        config.n_pairs,
        config.positive_fraction,
        derive_seed(seed, "fusion-pairs"),
    )?;
    let pair_ids: Vec<(u32, u32)> = batch.pairs.iter().map(|p| (p.utt_a, p.utt_b)).collect();
    let triples = score_pair_batch(
        base,
        female,
        male,
        corpus,
        &pair_ids,
        &config.protocol,
        derive_seed(seed, "fusion-triples"),
    )?;
    let labeled: Vec<(ScoreTriple, bool)> = triples
        .into_iter()
        .zip(batch.pairs.iter().map(|p| p.target))
        .collect();

    let mut model = FusionModel::new(&mut SeededRng::from_seed(derive_seed(seed, "fusion-init")));
    let epoch_losses = fit(&mut model, &labeled, config, derive_seed(seed, "fusion-fit"))?;
    Ok(FusionOutcome {
        model,
        epoch_losses,
        triples: labeled,
    })
}

/// Minibatch Adam on binary cross-entropy over precomputed triples.
pub fn fit(
    model: &mut FusionModel,
    triples: &[(ScoreTriple, bool)],
    config: &FusionTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if triples.is_empty() {
        return Err(Error::Config("no training triples".into()));
    }
    let blocks: Vec<(String, usize)> = model
        .mlp()
        .param_block_names()
        .into_iter()
        .zip(model.mlp().param_blocks_shapes())
        .collect();
    let mut adam = AdamState::new(&blocks, config.learning_rate, config.epoch_decay)?;
    let mut rng = SeededRng::from_seed(seed);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.minibatch) {
            let mut record = GradientRecord::zeros_like(model.mlp());
            let m = chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (triple, target) = &triples[i];
                let trace = model.mlp().forward_traced(&triple.as_array())?;
                let s = trace.output()[0].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let y = f64::from(u8::from(*target));
                batch_loss += -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
                // dL/dS for the mean BCE over this minibatch
                let upstream = [(-(y / s) + (1.0 - y) / (1.0 - s)) / m];
                model
                    .mlp()
                    .backward_accumulate(&trace, &upstream, &mut record)?;
            }
            let mut params = model.mlp_mut().param_blocks_mut();
            adam.update(&mut params, &record.param_blocks())?;
            epoch_loss += batch_loss / m;
            n_batches += 1;
        }
        adam.apply_epoch_decay();
        history.push(epoch_loss / n_batches as f64);
    }
    Ok(history)
}
