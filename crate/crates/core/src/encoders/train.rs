//! Metric-learning training for encoders: base training on mixed data,
//! group adaptation by fine-tuning, and the gender-batching-with-weighted-
//! loss (GBWL) fine-tuning variant.

use serde::{Deserialize, Serialize};

use super::{ap_loss, ApLossParams, EncoderKind, EncoderModel, Pooling};
use crate::error::{Error, Result};
use crate::nn::{AdamState, GradientRecord, HiddenActivation, Mlp, OutputActivation};
use crate::rng::SeededRng;
use crate::synth::{Corpus, Group};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Speakers per batch (N).
    pub speakers_per_batch: usize,
    /// Always 2: one query and one prototype per speaker.
    pub utterances_per_speaker_in_batch: usize,
    /// Training crop length in frames.
    pub crop_frames: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied after each epoch.
    pub epoch_decay: f64,
    /// Hidden layer widths of the trunk MLP.
    pub hidden_dims: Vec<usize>,
    /// Embedding dimension D.
    pub embedding_dim: usize,
    /// Default seed; CLI and harness runs override per invocation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            speakers_per_batch: 32,
            utterances_per_speaker_in_batch: 2,
            crop_frames: 100,
            epochs: 40,
            learning_rate: 0.001,
            epoch_decay: 0.95,
            hidden_dims: vec![64, 64],
            embedding_dim: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers_per_batch < 2 {
            return Err(Error::Config("speakers_per_batch must be at least 2".into()));
        }
        if self.utterances_per_speaker_in_batch != 2 {
            return Err(Error::Config(
                "utterances_per_speaker_in_batch is fixed at 2 (query + prototype)".into(),
            ));
        }
        if self.crop_frames == 0 {
            return Err(Error::Config("crop_frames must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epoch_decay <= 0.0 || self.epoch_decay > 1.0 {
            return Err(Error::Config("epoch decay must lie in (0, 1]".into()));
        }
        if self.embedding_dim == 0 || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn trunk_dims(&self, feature_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(feature_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embedding_dim);
        dims
    }
}

/// A trained encoder together with its loss head and per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub loss_params: ApLossParams,
    pub epoch_losses: Vec<f64>,
}

/// One group's speakers, each with the indices of its utterances.
struct SpeakerPool {
    /// (speaker_id, utterance indices into the corpus)
    speakers: Vec<(u32, Vec<usize>)>,
    /// Loss multiplier for batches drawn from this pool.
    loss_weight: f64,
}

fn build_pool(corpus: &Corpus, group: Option<Group>, loss_weight: f64) -> SpeakerPool {
    let speakers = corpus
        .speakers
        .iter()
        .filter(|s| group.map_or(true, |g| s.group == g))
        .map(|s| {
            let utts = corpus
                .utterances
                .iter()
                .enumerate()
                .filter(|(_, u)| u.speaker_id == s.id)
                .map(|(i, _)| i)
                .collect();
            (s.id, utts)
        })
        .collect();
    SpeakerPool {
        speakers,
        loss_weight,
    }
}

fn validate_pool(corpus: &Corpus, pool: &SpeakerPool, config: &TrainConfig) -> Result<()> {
    if pool.speakers.len() < 2 {
        return Err(Error::Config(
            "training needs at least 2 speakers in every pool".into(),
        ));
    }
    for (id, utts) in &pool.speakers {
        if utts.len() < 2 {
            return Err(Error::Capacity(format!(
                "speaker {id} has {} utterances; query/prototype pairs need 2",
                utts.len()
            )));
        }
    }
    let min_len = corpus
        .utterances
        .iter()
        .map(|u| u.frames.n_frames)
        .min()
        .unwrap_or(0);
    if min_len < config.crop_frames {
        return Err(Error::TooShort {
            needed: config.crop_frames,
            got: min_len,
        });
    }
    Ok(())
}

/// Shuffled speaker-index stream that reshuffles and cycles on exhaustion.
struct SpeakerCycle {
    order: Vec<usize>,
    next: usize,
}

impl SpeakerCycle {
    fn new(n: usize, rng: &mut SeededRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        SpeakerCycle { order, next: 0 }
    }

    fn take(&mut self, count: usize, rng: &mut SeededRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            if self.next == self.order.len() {
                rng.shuffle(&mut self.order);
                self.next = 0;
            }
            out.push(self.order[self.next]);
            self.next += 1;
        }
        out
    }
}

/// One optimizer step on a batch of speakers from `pool`.
#[allow(clippy::too_many_arguments)]
fn batch_step(
    trunk: &mut Mlp,
    loss_params: &mut ApLossParams,
    adam: &mut AdamState,
    corpus: &Corpus,
    pool: &SpeakerPool,
    batch_speakers: &[usize],
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<f64> {
    let n = batch_speakers.len();
    let mut ids = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(2 * n);
    let mut norms = Vec::with_capacity(2 * n);
    let mut queries = Vec::with_capacity(n);
    let mut prototypes = Vec::with_capacity(n);

    for &s in batch_speakers {
        let (speaker_id, utts) = &pool.speakers[s];
        ids.push(*speaker_id);
        let picks = rng.sample_indices(utts.len(), 2);
        for &pick in &picks {
            let frames = &corpus.utterances[utts[pick]].frames;
            let span = frames.n_frames - config.crop_frames + 1;
            let start = rng.uniform_usize(span);
            let pooled = frames.mean_pool(start, config.crop_frames);
            let trace = trunk.forward_traced(&pooled)?;
            let raw = trace.output().to_vec();
            let mut unit = raw.clone();
            let norm = crate::nn::l2_normalize(&mut unit)?;
            traces.push(trace);
            norms.push(norm);
            if queries.len() == prototypes.len() {
                queries.push(unit);
            } else {
                prototypes.push(unit);
            }
        }
    }

    let (loss, mut grads) = ap_loss(&ids, &queries, &prototypes, loss_params)?;
    let weight = pool.loss_weight;
    if weight != 1.0 {
        for g in grads.queries.iter_mut().chain(grads.prototypes.iter_mut()) {
            g.iter_mut().for_each(|v| *v *= weight);
        }
        grads.scale *= weight;
        grads.offset *= weight;
    }

    // backprop each embedding gradient through the L2 normalization and trunk
    let mut record = GradientRecord::zeros_like(trunk);
    for i in 0..2 * n {
        let (unit, d_unit) = if i % 2 == 0 {
            (&queries[i / 2], &grads.queries[i / 2])
        } else {
            (&prototypes[i / 2], &grads.prototypes[i / 2])
        };
        // d_raw = (d_unit - (d_unit·e) e) / ‖raw‖
        let dot_ue = crate::nn::dot(d_unit, unit);
        let d_raw: Vec<f64> = d_unit
            .iter()
            .zip(unit)
            .map(|(&du, &e)| (du - dot_ue * e) / norms[i])
            .collect();
        trunk.backward_accumulate(&traces[i], &d_raw, &mut record)?;
    }

    let mut param_blocks = trunk.param_blocks_mut();
    let mut grad_blocks = record.param_blocks();
    param_blocks.push(std::slice::from_mut(&mut loss_params.scale));
    param_blocks.push(std::slice::from_mut(&mut loss_params.offset));
    grad_blocks.push(std::slice::from_ref(&grads.scale));
    grad_blocks.push(std::slice::from_ref(&grads.offset));
    adam.update(&mut param_blocks, &grad_blocks)?;
    loss_params.clamp_scale();
    Ok(loss * weight)
}

fn adam_for(trunk: &Mlp, config: &TrainConfig) -> Result<AdamState> {
    let mut blocks: Vec<(String, usize)> = trunk
        .param_block_names()
        .into_iter()
        .zip(trunk.param_blocks_shapes())
        .collect();
    blocks.push(("loss.scale".into(), 1));
    blocks.push(("loss.offset".into(), 1));
    AdamState::new(&blocks, config.learning_rate, config.epoch_decay)
}

/// Train `trunk` in place over `pools`, alternating between pools within
/// each epoch round-robin. Returns per-epoch mean loss.
fn train_epochs(
    trunk: &mut Mlp,
    loss_params: &mut ApLossParams,
    corpus: &Corpus,
    pools: &[SpeakerPool],
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let mut adam = adam_for(trunk, config)?;
    let batch_sizes: Vec<usize> = pools
        .iter()
        .map(|p| p.speakers.len().min(config.speakers_per_batch))
        .collect();
    // rounds per epoch: enough to cover the largest pool once
    let rounds = pools
        .iter()
        .zip(&batch_sizes)
        .map(|(p, &bs)| p.speakers.len() / bs)
        .max()
        .unwrap_or(0)
        .max(1);
    let mut history = Vec::with_capacity(config.epochs);
    for _epoch in 0..config.epochs {
        let mut cycles: Vec<SpeakerCycle> = pools
            .iter()
            .map(|p| SpeakerCycle::new(p.speakers.len(), rng))
            .collect();
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for _round in 0..rounds {
            for (pool_idx, pool) in pools.iter().enumerate() {
                let batch = cycles[pool_idx].take(batch_sizes[pool_idx], rng);
                epoch_loss += batch_step(
                    trunk,
                    loss_params,
                    &mut adam,
                    corpus,
                    pool,
                    &batch,
                    config,
                    rng,
                )?;
                n_batches += 1;
            }
        }
        adam.apply_epoch_decay();
        history.push(epoch_loss / n_batches as f64);
    }
    Ok(history)
}

/// Train a base encoder on the full (gender-mixed) corpus.
pub fn train_base(corpus: &Corpus, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.speakers.len() < config.speakers_per_batch {
        return Err(Error::Config(format!(
            "corpus has {} speakers but speakers_per_batch is {}",
            corpus.speakers.len(),
            config.speakers_per_batch
        )));
    }
    let feature_dim = corpus
        .utterances
        .first()
        .map(|u| u.frames.dim)
        .ok_or_else(|| Error::Config("corpus has no utterances".into()))?;
    let pool = build_pool(corpus, None, 1.0);
    validate_pool(corpus, &pool, config)?;

    let base_rng = SeededRng::from_seed(seed);
    let mut trunk = Mlp::new_glorot(
        &config.trunk_dims(feature_dim),
        HiddenActivation::Relu,
        OutputActivation::Identity,
        &mut base_rng.derive("init"),
    )?;
    let mut loss_params = ApLossParams::default();
    let epoch_losses = train_epochs(
        &mut trunk,
        &mut loss_params,
        corpus,
        &[pool],
        config,
        &mut base_rng.derive("epochs"),
    )?;
    Ok(TrainOutcome {
        model: EncoderModel {
            kind: EncoderKind::Base,
            pooling: Pooling::TemporalMean,
            trunk,
        },
        loss_params,
        epoch_losses,
    })
}

/// Fine-tune a copy of `base` on a single-group corpus. The base model is
/// never modified; the returned model starts from its parameters.
pub fn adapt(
    base: &EncoderModel,
    group_corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let groups: std::collections::HashSet<Group> =
        group_corpus.speakers.iter().map(|s| s.group).collect();
    if groups.len() != 1 {
        return Err(Error::Config(
            "adaptation corpus must contain a single group".into(),
        ));
    }
    let group = *groups.iter().next().unwrap();
    let pool = build_pool(group_corpus, Some(group), 1.0);
    validate_pool(group_corpus, &pool, config)?;

    let mut trunk = base.trunk.clone();
    let mut loss_params = ApLossParams::default();
    let base_rng = SeededRng::from_seed(seed);
    let epoch_losses = train_epochs(
        &mut trunk,
        &mut loss_params,
        group_corpus,
        &[pool],
        config,
        &mut base_rng.derive("epochs"),
    )?;
    Ok(TrainOutcome {
        model: EncoderModel {
            kind: match group {
                Group::F => EncoderKind::FemaleAdapted,
                Group::M => EncoderKind::MaleAdapted,
            },
            pooling: Pooling::TemporalMean,
            trunk,
        },
        loss_params,
        epoch_losses,
    })
}

/// Gender batching with weighted loss: fine-tune a copy of `base` on the
/// full corpus with alternating all-female and all-male batches, scaling
/// the majority-gender batch loss by `n_minority / n_majority` (e.g. 1/9 at
/// a 1:9 ratio).
pub fn train_gbwl(
    base: &EncoderModel,
    corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_f = corpus.group_count(Group::F);
    let n_m = corpus.group_count(Group::M);
    if n_f < 2 || n_m < 2 {
        return Err(Error::Config(
            "GBWL needs at least 2 speakers in each group".into(),
        ));
    }
    let (w_f, w_m) = if n_f >= n_m {
        (n_m as f64 / n_f as f64, 1.0)
    } else {
        (1.0, n_f as f64 / n_m as f64)
    };
    let pools = [
        build_pool(corpus, Some(Group::F), w_f),
        build_pool(corpus, Some(Group::M), w_m),
    ];
    for pool in &pools {
        validate_pool(corpus, pool, config)?;
    }
    let mut trunk = base.trunk.clone();
    let mut loss_params = ApLossParams::default();
    let base_rng = SeededRng::from_seed(seed);
    let epoch_losses = train_epochs(
        &mut trunk,
        &mut loss_params,
        corpus,
        &pools,
        config,
        &mut base_rng.derive("epochs"),
    )?;
    Ok(TrainOutcome {
        model: EncoderModel {
            kind: EncoderKind::Base,
            pooling: Pooling::TemporalMean,
            trunk,
        },
        loss_params,
        epoch_losses,
    })
}
