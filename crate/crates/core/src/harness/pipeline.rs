//! Lazy per-cell pipeline: trains encoders and the fusion head on demand,
//! scores the trial set once per encoder, and derives every system
//! variant's metrics from the shared score columns.
//!
//! All randomness is derived from the cell seed by purpose, so a variant's
//! result never depends on which other variants ran first, and parallel
//! trial scoring is bit-identical to serial scoring.

use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    adapt, crop_similarity, train_base, train_gbwl, CropProtocol, EncoderModel, TrainConfig,
    TrainOutcome,
};
use crate::error::{Error, Result};
use crate::evaluation::{group_metrics, MetricReport, ScoredTrial};
use crate::fusion::{
    equal_weight_fuse, train_fusion, FusionOutcome, FusionTrainConfig, ScoreRow, ScoreTriple,
};
use crate::rng::{derive_seed, derive_seed_indexed, SeededRng};
use crate::synth::{split_by_group, Corpus, Group};
use crate::trials::TrialSet;

/// System variants of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Single base encoder, cosine scoring.
    Baseline,
    /// Base + group-adapted encoders with learned score fusion.
    Gfn,
    /// Female-adapted encoder alone.
    FFt,
    /// Male-adapted encoder alone.
    MFt,
    /// Equal-weight fusion of the score triple.
    Es,
    /// Gender batching with weighted loss fine-tuning, single encoder.
    Gbwl,
}

impl Variant {
    pub fn all() -> [Variant; 6] {
        [
            Variant::Baseline,
            Variant::Gfn,
            Variant::FFt,
            Variant::MFt,
            Variant::Es,
            Variant::Gbwl,
        ]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Gfn => "gfn",
            Variant::FFt => "f-ft",
            Variant::MFt => "m-ft",
            Variant::Es => "es",
            Variant::Gbwl => "gbwl",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Variant::Baseline),
            "gfn" => Ok(Variant::Gfn),
            "f-ft" | "fft" => Ok(Variant::FFt),
            "m-ft" | "mft" => Ok(Variant::MFt),
            "es" => Ok(Variant::Es),
            "gbwl" => Ok(Variant::Gbwl),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub encoder_train: TrainConfig,
    pub fusion_train: FusionTrainConfig,
    /// Crop protocol used to score evaluation trials.
    pub protocol: CropProtocol,
    /// Cell seed; all training and scoring streams derive from it.
    pub seed: u64,
    /// When set, checkpoints, score files, and reports are persisted here.
    pub artifacts_dir: Option<PathBuf>,
}

/// Shared training/scoring state for one (train corpus, trial set) cell.
pub struct Pipeline<'a> {
    train_corpus: &'a Corpus,
    eval_corpus: &'a Corpus,
    trials: &'a TrialSet,
    cfg: PipelineConfig,
    utt_index: HashMap<u32, usize>,
    base: Option<TrainOutcome>,
    female: Option<TrainOutcome>,
    male: Option<TrainOutcome>,
    gbwl: Option<TrainOutcome>,
    fusion: Option<FusionOutcome>,
    triples: Option<Vec<ScoreTriple>>,
    base_scores: Option<Vec<f64>>,
    gbwl_scores: Option<Vec<f64>>,
}

impl<'a> Pipeline<'a> {
    /// Build a pipeline, checking the standing invariants: the trial set
    /// references the evaluation corpus and train/eval speakers are disjoint.
    pub fn new(
        train_corpus: &'a Corpus,
        eval_corpus: &'a Corpus,
        trials: &'a TrialSet,
        cfg: PipelineConfig,
    ) -> Result<Self> {
        cfg.encoder_train.validate()?;
        cfg.fusion_train.validate()?;
        cfg.protocol.validate()?;
        let train_ids: std::collections::HashSet<u32> =
            train_corpus.speaker_ids().into_iter().collect();
        if eval_corpus
            .speaker_ids()
            .iter()
            .any(|id| train_ids.contains(id))
        {
            return Err(Error::Config(
                "train and evaluation speaker ids overlap".into(),
            ));
        }
        let utt_index: HashMap<u32, usize> = eval_corpus
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id, i))
            .collect();
        for t in &trials.trials {
            if !utt_index.contains_key(&t.utt_a) || !utt_index.contains_key(&t.utt_b) {
                return Err(Error::Config(format!(
                    "trial references utterances outside evaluation corpus `{}`",
                    eval_corpus.id
                )));
            }
        }
        Ok(Pipeline {
            train_corpus,
            eval_corpus,
            trials,
            cfg,
            utt_index,
            base: None,
            female: None,
            male: None,
            gbwl: None,
            fusion: None,
            triples: None,
            base_scores: None,
            gbwl_scores: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn trials(&self) -> &TrialSet {
        self.trials
    }

    fn persist_encoder(&self, model: &EncoderModel, name: &str) -> Result<Option<PathBuf>> {
        if let Some(dir) = &self.cfg.artifacts_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{name}.json"));
            model.save(&path, Some(&self.cfg.encoder_train))?;
            return Ok(Some(path));
        }
        Ok(None)
    }

    pub fn base(&mut self) -> Result<&TrainOutcome> {
        if self.base.is_none() {
            let out = train_base(
                self.train_corpus,
                &self.cfg.encoder_train,
                derive_seed(self.cfg.seed, "train-base"),
            )?;
            self.persist_encoder(&out.model, "base")?;
            self.base = Some(out);
        }
        Ok(self.base.as_ref().unwrap())
    }

    fn adapted(&mut self, group: Group) -> Result<&TrainOutcome> {
        let slot_filled = match group {
            Group::F => self.female.is_some(),
            Group::M => self.male.is_some(),
        };
        if !slot_filled {
            self.base()?;
            let group_corpus = split_by_group(self.train_corpus, group)?;
            let out = adapt(
                &self.base.as_ref().unwrap().model,
                &group_corpus,
                &self.cfg.encoder_train,
                derive_seed(self.cfg.seed, &format!("adapt-{}", group.as_str())),
            )?;
            let name = match group {
                Group::F => "female",
                Group::M => "male",
            };
            self.persist_encoder(&out.model, name)?;
            match group {
                Group::F => self.female = Some(out),
                Group::M => self.male = Some(out),
            }
        }
        Ok(match group {
            Group::F => self.female.as_ref().unwrap(),
            Group::M => self.male.as_ref().unwrap(),
        })
    }

    pub fn female(&mut self) -> Result<&TrainOutcome> {
        self.adapted(Group::F)
    }

    pub fn male(&mut self) -> Result<&TrainOutcome> {
        self.adapted(Group::M)
    }

    pub fn gbwl(&mut self) -> Result<&TrainOutcome> {
        if self.gbwl.is_none() {
            self.base()?;
            let out = train_gbwl(
                &self.base.as_ref().unwrap().model,
                self.train_corpus,
                &self.cfg.encoder_train,
                derive_seed(self.cfg.seed, "gbwl"),
            )?;
            self.persist_encoder(&out.model, "gbwl")?;
            self.gbwl = Some(out);
        }
        Ok(self.gbwl.as_ref().unwrap())
    }

    pub fn fusion(&mut self) -> Result<&FusionOutcome> {
        if self.fusion.is_none() {
            self.base()?;
            self.adapted(Group::F)?;
            self.adapted(Group::M)?;
            let out = train_fusion(
                &self.base.as_ref().unwrap().model,
                &self.female.as_ref().unwrap().model,
                &self.male.as_ref().unwrap().model,
                self.train_corpus,
                &self.cfg.fusion_train,
                derive_seed(self.cfg.seed, "train-fusion"),
            )?;
            if let Some(dir) = &self.cfg.artifacts_dir {
                std::fs::create_dir_all(dir)?;
                out.model.save(&dir.join("fusion.json"))?;
            }
            self.fusion = Some(out);
        }
        Ok(self.fusion.as_ref().unwrap())
    }

    /// Score every trial with each model. Crop offsets are drawn from a
    /// per-trial stream shared by all models, so single-model and
    /// multi-model scoring agree component-wise.
    fn score_trials(&self, models: &[&EncoderModel]) -> Result<Vec<Vec<f64>>> {
        let crops_seed = derive_seed(self.cfg.seed, "eval-crops");
        let per_trial: Vec<Vec<f64>> = self
            .trials
            .trials
            .par_iter()
            .enumerate()
            .map(|(idx, t)| {
                let utt_a = &self.eval_corpus.utterances[self.utt_index[&t.utt_a]];
                let utt_b = &self.eval_corpus.utterances[self.utt_index[&t.utt_b]];
                let mut rng =
                    SeededRng::from_seed(derive_seed_indexed(crops_seed, "trial", idx as u64));
                crop_similarity(models, utt_a, utt_b, &self.cfg.protocol, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut columns = vec![Vec::with_capacity(per_trial.len()); models.len()];
        for row in &per_trial {
            for (c, &v) in row.iter().enumerate() {
                columns[c].push(v);
            }
        }
        Ok(columns)
    }

    /// Score triples for every trial, cached.
    pub fn triples(&mut self) -> Result<&[ScoreTriple]> {
        if self.triples.is_none() {
            self.base()?;
            self.adapted(Group::F)?;
            self.adapted(Group::M)?;
            let columns = self.score_trials(&[
                &self.base.as_ref().unwrap().model,
                &self.female.as_ref().unwrap().model,
                &self.male.as_ref().unwrap().model,
            ])?;
            let triples: Result<Vec<ScoreTriple>> = (0..columns[0].len())
                .map(|i| ScoreTriple::new(columns[0][i], columns[1][i], columns[2][i]))
                .collect();
            self.triples = Some(triples?);
        }
        Ok(self.triples.as_ref().unwrap())
    }

    fn base_scores(&mut self) -> Result<&[f64]> {
        if self.base_scores.is_none() {
            if let Some(triples) = &self.triples {
                self.base_scores = Some(triples.iter().map(|t| t.s_base).collect());
            } else {
                self.base()?;
                let columns = self.score_trials(&[&self.base.as_ref().unwrap().model])?;
                self.base_scores = Some(columns.into_iter().next().unwrap());
            }
        }
        Ok(self.base_scores.as_ref().unwrap())
    }

    fn gbwl_scores(&mut self) -> Result<&[f64]> {
        if self.gbwl_scores.is_none() {
            self.gbwl()?;
            let columns = self.score_trials(&[&self.gbwl.as_ref().unwrap().model])?;
            self.gbwl_scores = Some(columns.into_iter().next().unwrap());
        }
        Ok(self.gbwl_scores.as_ref().unwrap())
    }

    /// Final per-trial decision scores for a variant.
    pub fn variant_scores(&mut self, variant: Variant) -> Result<Vec<f64>> {
        match variant {
            Variant::Baseline => Ok(self.base_scores()?.to_vec()),
            Variant::Gfn => {
                self.fusion()?;
                let model = self.fusion.as_ref().unwrap().model.clone();
                Ok(self.triples()?.iter().map(|t| model.fuse(t)).collect())
            }
            Variant::FFt => Ok(self.triples()?.iter().map(|t| t.s_female).collect()),
            Variant::MFt => Ok(self.triples()?.iter().map(|t| t.s_male).collect()),
            Variant::Es => Ok(self.triples()?.iter().map(equal_weight_fuse).collect()),
            Variant::Gbwl => Ok(self.gbwl_scores()?.to_vec()),
        }
    }

    fn scored_trials(&mut self, variant: Variant) -> Result<Vec<ScoredTrial>> {
        let scores = self.variant_scores(variant)?;
        Ok(self
            .trials
            .trials
            .iter()
            .zip(scores)
            .map(|(t, score)| ScoredTrial {
                score,
                target: t.target,
                category: t.category,
            })
            .collect())
    }

    /// Group metrics for a variant, persisting a score file and a report
    /// JSON when an artifacts directory is configured.
    pub fn metrics(&mut self, variant: Variant) -> Result<MetricReport> {
        let scored = self.scored_trials(variant)?;
        let report = group_metrics(&scored)?;
        if let Some(dir) = self.cfg.artifacts_dir.clone() {
            std::fs::create_dir_all(&dir)?;
            let rows: Vec<ScoreRow> = match variant {
                // single-encoder variants repeat their one score per column
                Variant::Baseline | Variant::Gbwl => self
                    .trials
                    .trials
                    .iter()
                    .zip(&scored)
                    .map(|(t, s)| ScoreRow {
                        utt_a: t.utt_a,
                        utt_b: t.utt_b,
                        triple: ScoreTriple {
                            s_base: s.score,
                            s_female: s.score,
                            s_male: s.score,
                        },
                        fused: s.score,
                        target: t.target,
                    })
                    .collect(),
                _ => {
                    let triples = self.triples()?.to_vec();
                    self.trials
                        .trials
                        .iter()
                        .zip(&scored)
                        .zip(triples)
                        .map(|((t, s), triple)| ScoreRow {
                            utt_a: t.utt_a,
                            utt_b: t.utt_b,
                            triple,
                            fused: s.score,
                            target: t.target,
                        })
                        .collect()
                }
            };
            crate::fusion::save_score_file(&rows, &dir.join(format!("{}.scores.txt", variant.as_str())))?;
            crate::synth::io::write_atomic(
                &dir.join(format!("{}.report.json", variant.as_str())),
                serde_json::to_string_pretty(&report)?.as_bytes(),
            )?;
        }
        Ok(report)
    }

    /// Mean silhouette coefficients of base-encoder embeddings versus
    /// concatenated GFN embeddings, over the same sampled speakers.
    pub fn silhouette_pair(
        &mut self,
        n_speakers: usize,
        utts_per_speaker: usize,
    ) -> Result<(f64, f64)> {
        self.fusion()?; // ensures base, female, male exist
        let seed = derive_seed(self.cfg.seed, "silhouette-export");
        let base = super::export::export_embeddings(
            &super::export::EmbeddingSource::Base(&self.base.as_ref().unwrap().model),
            self.eval_corpus,
            n_speakers,
            utts_per_speaker,
            seed,
        )?;
        let gfn = super::export::export_embeddings(
            &super::export::EmbeddingSource::Gfn {
                base: &self.base.as_ref().unwrap().model,
                female: &self.female.as_ref().unwrap().model,
                male: &self.male.as_ref().unwrap().model,
            },
            self.eval_corpus,
            n_speakers,
            utts_per_speaker,
            seed,
        )?;
        let sc = |dump: &super::export::EmbeddingDump| -> Result<f64> {
            let points: Vec<(Vec<f64>, u32)> = dump
                .rows
                .iter()
                .map(|r| (r.values.clone(), r.speaker_id))
                .collect();
            Ok(crate::evaluation::silhouette(&points)?.mean)
        };
        Ok((sc(&base)?, sc(&gfn)?))
    }
}

/// Train a base encoder and evaluate single-encoder cosine scoring.
pub fn run_baseline(
    train: &Corpus,
    eval: &Corpus,
    trials: &TrialSet,
    cfg: &PipelineConfig,
) -> Result<MetricReport> {
    Pipeline::new(train, eval, trials, cfg.clone())?.metrics(Variant::Baseline)
}

/// Train the full group-adapted fusion network and evaluate fused scoring.
/// With an artifacts directory configured, all four checkpoints (base,
/// female, male, fusion) are persisted.
pub fn run_gfn(
    train: &Corpus,
    eval: &Corpus,
    trials: &TrialSet,
    cfg: &PipelineConfig,
) -> Result<MetricReport> {
    Pipeline::new(train, eval, trials, cfg.clone())?.metrics(Variant::Gfn)
}

/// Run one ablation variant (F-FT, M-FT, ES, or GBWL).
pub fn run_ablation(
    variant: Variant,
    train: &Corpus,
    eval: &Corpus,
    trials: &TrialSet,
    cfg: &PipelineConfig,
) -> Result<MetricReport> {
    Pipeline::new(train, eval, trials, cfg.clone())?.metrics(variant)
}
