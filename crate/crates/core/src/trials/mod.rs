//! Verification trial sets with controlled gender composition.
//!
//! A trial is a labeled utterance pair. Trials come in exactly five
//! categories — positive F-F, negative F-F, negative M-F, positive M-M,
//! negative M-M — and every category is filled to the same configured count.
//! (A positive M-F category cannot exist: positives share a speaker and
//! hence a gender.) Group-wise metrics draw on fixed category pools:
//! the F pool is {PosFF, NegFF, NegMF}, the M pool {PosMM, NegMM, NegMF},
//! and the All pool is every category.
//!
//! # Trial list file format
//!
//! One trial per line, four space-separated fields:
//!
//! ```text
//! <label> <utt_a> <utt_b> <category>
//! ```
//!
//! where `label` is `1` (same speaker) or `0` (different speakers),
//! `utt_a`/`utt_b` are decimal utterance ids, and `category` is one of
//! `pos-ff`, `neg-ff`, `neg-mf`, `pos-mm`, `neg-mm`.

pub(crate) mod pairing;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::synth::{Corpus, Group};
use pairing::UttPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrialCategory {
    PosFF,
    NegFF,
    NegMF,
    PosMM,
    NegMM,
}

impl TrialCategory {
    pub fn all() -> [TrialCategory; 5] {
        [
            TrialCategory::PosFF,
            TrialCategory::NegFF,
            TrialCategory::NegMF,
            TrialCategory::PosMM,
            TrialCategory::NegMM,
        ]
    }

    pub fn is_target(self) -> bool {
        matches!(self, TrialCategory::PosFF | TrialCategory::PosMM)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialCategory::PosFF => "pos-ff",
            TrialCategory::NegFF => "neg-ff",
            TrialCategory::NegMF => "neg-mf",
            TrialCategory::PosMM => "pos-mm",
            TrialCategory::NegMM => "neg-mm",
        }
    }

    pub fn parse(s: &str) -> Result<TrialCategory> {
        match s {
            "pos-ff" => Ok(TrialCategory::PosFF),
            "neg-ff" => Ok(TrialCategory::NegFF),
            "neg-mf" => Ok(TrialCategory::NegMF),
            "pos-mm" => Ok(TrialCategory::PosMM),
            "neg-mm" => Ok(TrialCategory::NegMM),
            other => Err(Error::Artifact(format!("unknown trial category `{other}`"))),
        }
    }

    /// The unordered pair of speaker groups this category requires.
    pub fn group_pair(self) -> (Group, Group) {
        match self {
            TrialCategory::PosFF | TrialCategory::NegFF => (Group::F, Group::F),
            TrialCategory::NegMF => (Group::F, Group::M),
            TrialCategory::PosMM | TrialCategory::NegMM => (Group::M, Group::M),
        }
    }
}

impl fmt::Display for TrialCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub utt_a: u32,
    pub utt_b: u32,
    /// `true` for same-speaker (label 1), `false` for different-speaker.
    pub target: bool,
    pub category: TrialCategory,
}

/// Which trial pool a metric is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricPool {
    F,
    M,
    All,
}

impl MetricPool {
    pub fn categories(self) -> &'static [TrialCategory] {
        match self {
            MetricPool::F => &[
                TrialCategory::PosFF,
                TrialCategory::NegFF,
                TrialCategory::NegMF,
            ],
            MetricPool::M => &[
                TrialCategory::PosMM,
                TrialCategory::NegMM,
                TrialCategory::NegMF,
            ],
            MetricPool::All => &[
                TrialCategory::PosFF,
                TrialCategory::NegFF,
                TrialCategory::NegMF,
                TrialCategory::PosMM,
                TrialCategory::NegMM,
            ],
        }
    }

    pub fn contains(self, category: TrialCategory) -> bool {
        self.categories().contains(&category)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub per_category: usize,
    pub source_corpus: String,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn count(&self, category: TrialCategory) -> usize {
        self.trials.iter().filter(|t| t.category == category).count()
    }

    /// Exhaustive consistency check against the corpus the trials reference:
    /// labels match speaker identity, categories match speaker groups, no
    /// duplicate unordered pair within a category, and counts are exact.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        let mut seen: HashSet<(TrialCategory, u32, u32)> = HashSet::with_capacity(self.len());
        for t in &self.trials {
            let a = corpus
                .utterance(t.utt_a)
                .ok_or_else(|| Error::Artifact(format!("unknown utterance {}", t.utt_a)))?;
            let b = corpus
                .utterance(t.utt_b)
                .ok_or_else(|| Error::Artifact(format!("unknown utterance {}", t.utt_b)))?;
            let same_speaker = a.speaker_id == b.speaker_id;
            if t.target != same_speaker {
                return Err(Error::Artifact(format!(
                    "trial ({}, {}) label {} inconsistent with speakers",
                    t.utt_a, t.utt_b, t.target as u8
                )));
            }
            if t.target != t.category.is_target() {
                return Err(Error::Artifact(format!(
                    "trial ({}, {}) label inconsistent with category {}",
                    t.utt_a, t.utt_b, t.category
                )));
            }
            let ga = corpus.group_of(a.speaker_id).unwrap();
            let gb = corpus.group_of(b.speaker_id).unwrap();
            let want = t.category.group_pair();
            let got = if ga <= gb { (ga, gb) } else { (gb, ga) };
            let want = if want.0 <= want.1 { want } else { (want.1, want.0) };
            if got != want {
                return Err(Error::Artifact(format!(
                    "trial ({}, {}) groups {:?} inconsistent with category {}",
                    t.utt_a, t.utt_b, got, t.category
                )));
            }
            let key = if t.utt_a <= t.utt_b {
                (t.category, t.utt_a, t.utt_b)
            } else {
                (t.category, t.utt_b, t.utt_a)
            };
            if !seen.insert(key) {
                return Err(Error::Artifact(format!(
                    "duplicate pair ({}, {}) in category {}",
                    t.utt_a, t.utt_b, t.category
                )));
            }
        }
        for cat in TrialCategory::all() {
            if self.count(cat) != self.per_category {
                return Err(Error::Artifact(format!(
                    "category {} has {} trials, expected {}",
                    cat,
                    self.count(cat),
                    self.per_category
                )));
            }
        }
        Ok(())
    }
}

/// All trials belonging to a metric pool, in trial-set order.
pub fn pool_for_metric(set: &TrialSet, which: MetricPool) -> Vec<Trial> {
    set.trials
        .iter()
        .filter(|t| which.contains(t.category))
        .copied()
        .collect()
}

fn group_pool(corpus: &Corpus, group: Group) -> UttPool {
    let speakers = corpus
        .speakers_in(group)
        .iter()
        .map(|s| {
            (
                s.id,
                corpus.utterances_of(s.id).iter().map(|u| u.id).collect(),
            )
        })
        .collect();
    UttPool::new(speakers)
}

/// Build a trial set with exactly `per_category` trials in each of the five
/// gender-composition categories, sampled uniformly without replacement.
pub fn build_trial_set(corpus: &Corpus, per_category: usize, seed: u64) -> Result<TrialSet> {
    for group in Group::all() {
        if corpus.group_count(group) < 2 {
            return Err(Error::Config(format!(
                "corpus `{}` needs at least 2 {} speakers to build trials",
                corpus.id,
                group.as_str()
            )));
        }
    }
    if per_category == 0 {
        return Err(Error::Config("per_category must be positive".into()));
    }
    let f_pool = group_pool(corpus, Group::F);
    let m_pool = group_pool(corpus, Group::M);

    let mut trials = Vec::with_capacity(per_category * 5);
    for cat in TrialCategory::all() {
        let mut rng = SeededRng::from_seed(crate::rng::derive_seed(
            seed,
            &format!("trials:{}", cat.as_str()),
        ));
        let pairs = match cat {
            TrialCategory::PosFF => pairing::sample_positive_pairs(&f_pool, per_category, &mut rng),
            TrialCategory::NegFF => pairing::sample_negative_pairs(&f_pool, per_category, &mut rng),
            TrialCategory::NegMF => {
                pairing::sample_cross_pairs(&f_pool, &m_pool, per_category, &mut rng)
            }
            TrialCategory::PosMM => pairing::sample_positive_pairs(&m_pool, per_category, &mut rng),
            TrialCategory::NegMM => pairing::sample_negative_pairs(&m_pool, per_category, &mut rng),
        }
        .map_err(|e| match e {
            Error::Capacity(msg) => Error::Capacity(format!("category {cat}: {msg}")),
            other => other,
        })?;
        trials.extend(pairs.into_iter().map(|(a, b)| Trial {
            utt_a: a,
            utt_b: b,
            target: cat.is_target(),
            category: cat,
        }));
    }
    Ok(TrialSet {
        trials,
        per_category,
        source_corpus: corpus.id.clone(),
    })
}

/// Write a trial set in the line format documented at module level.
pub fn save_trial_list(set: &TrialSet, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(set.len() * 24);
    for t in &set.trials {
        out.push_str(&format!(
            "{} {} {} {}\n",
            t.target as u8, t.utt_a, t.utt_b, t.category
        ));
    }
    crate::synth::io::write_atomic(path, out.as_bytes())
}

/// Parse a trial list file. `per_category` is recomputed from the contents;
/// mixed per-category counts are rejected.
pub fn load_trial_list(path: &Path, source_corpus: &str) -> Result<TrialSet> {
    let text = std::fs::read_to_string(path)?;
    let mut trials = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Artifact(format!(
                "trial list line {}: expected 4 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let label: u8 = fields[0]
            .parse()
            .map_err(|_| Error::Artifact(format!("trial list line {}: bad label", lineno + 1)))?;
        if label > 1 {
            return Err(Error::Artifact(format!(
                "trial list line {}: label must be 0 or 1",
                lineno + 1
            )));
        }
        let utt_a: u32 = fields[1].parse().map_err(|_| {
            Error::Artifact(format!("trial list line {}: bad utterance id", lineno + 1))
        })?;
        let utt_b: u32 = fields[2].parse().map_err(|_| {
            Error::Artifact(format!("trial list line {}: bad utterance id", lineno + 1))
        })?;
        let category = TrialCategory::parse(fields[3])?;
        if (label == 1) != category.is_target() {
            return Err(Error::Artifact(format!(
                "trial list line {}: label inconsistent with category",
                lineno + 1
            )));
        }
        trials.push(Trial {
            utt_a,
            utt_b,
            target: label == 1,
            category,
        });
    }
    if trials.is_empty() {
        return Err(Error::Artifact("trial list is empty".into()));
    }
    let counts: Vec<usize> = TrialCategory::all()
        .iter()
        .map(|&c| trials.iter().filter(|t| t.category == c).count())
        .collect();
    let per_category = counts[0];
    if counts.iter().any(|&c| c != per_category) {
        return Err(Error::Artifact(
            "trial list categories have unequal counts".into(),
        ));
    }
    Ok(TrialSet {
        trials,
        per_category,
        source_corpus: source_corpus.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthConfig};

    fn corpus(n_f: usize, n_m: usize, utts: usize, seed: u64) -> Corpus {
        let cfg = SynthConfig {
            d_latent: 4,
            feature_dim: 4,
            frames_per_utterance: 2,
            utterances_per_speaker: utts,
            seed,
            ..SynthConfig::default()
        };
        generate_corpus(&cfg, n_f, n_m).unwrap()
    }

    #[test]
    fn minimal_corpus_yields_one_trial_per_category() {
        let c = corpus(2, 2, 2, 1);
        let set = build_trial_set(&c, 1, 7).unwrap();
        assert_eq!(set.len(), 5);
        for cat in TrialCategory::all() {
            assert_eq!(set.count(cat), 1);
        }
        set.validate_against(&c).unwrap();
    }

    #[test]
    fn full_scan_confirms_category_soundness() {
        let c = corpus(6, 5, 4, 2);
        // PosMM capacity is 5 speakers × C(4,2) = 30
        let set = build_trial_set(&c, 30, 3).unwrap();
        // independent full scan, not via validate_against
        for t in &set.trials {
            let a = c.utterance(t.utt_a).unwrap();
            let b = c.utterance(t.utt_b).unwrap();
            let ga = c.group_of(a.speaker_id).unwrap();
            let gb = c.group_of(b.speaker_id).unwrap();
            match t.category {
                TrialCategory::PosFF => {
                    assert!(t.target && a.speaker_id == b.speaker_id);
                    assert_eq!((ga, gb), (Group::F, Group::F));
                }
                TrialCategory::NegFF => {
                    assert!(!t.target && a.speaker_id != b.speaker_id);
                    assert_eq!((ga, gb), (Group::F, Group::F));
                }
                TrialCategory::NegMF => {
                    assert!(!t.target && a.speaker_id != b.speaker_id);
                    assert_ne!(ga, gb);
                }
                TrialCategory::PosMM => {
                    assert!(t.target && a.speaker_id == b.speaker_id);
                    assert_eq!((ga, gb), (Group::M, Group::M));
                }
                TrialCategory::NegMM => {
                    assert!(!t.target && a.speaker_id != b.speaker_id);
                    assert_eq!((ga, gb), (Group::M, Group::M));
                }
            }
        }
        set.validate_against(&c).unwrap();
    }

    #[test]
    fn pool_cardinalities_are_exact() {
        let c = corpus(4, 4, 4, 3);
        let per = 10;
        let set = build_trial_set(&c, per, 5).unwrap();
        assert_eq!(pool_for_metric(&set, MetricPool::F).len(), 3 * per);
        assert_eq!(pool_for_metric(&set, MetricPool::M).len(), 3 * per);
        assert_eq!(pool_for_metric(&set, MetricPool::All).len(), 5 * per);
    }

    #[test]
    fn all_pool_is_every_trial_exactly_once() {
        let c = corpus(3, 3, 3, 4);
        let set = build_trial_set(&c, 4, 6).unwrap();
        let all = pool_for_metric(&set, MetricPool::All);
        assert_eq!(all.len(), set.len());
        let keys: HashSet<(u32, u32, TrialCategory)> =
            all.iter().map(|t| (t.utt_a, t.utt_b, t.category)).collect();
        assert_eq!(keys.len(), set.len());
    }

    #[test]
    fn pool_intersection_is_exactly_the_cross_gender_negatives() {
        let c = corpus(3, 3, 3, 5);
        let set = build_trial_set(&c, 4, 8).unwrap();
        let f: HashSet<(u32, u32)> = pool_for_metric(&set, MetricPool::F)
            .iter()
            .map(|t| (t.utt_a, t.utt_b))
            .collect();
        let m: HashSet<(u32, u32)> = pool_for_metric(&set, MetricPool::M)
            .iter()
            .map(|t| (t.utt_a, t.utt_b))
            .collect();
        let inter: HashSet<_> = f.intersection(&m).copied().collect();
        let neg_mf: HashSet<(u32, u32)> = set
            .trials
            .iter()
            .filter(|t| t.category == TrialCategory::NegMF)
            .map(|t| (t.utt_a, t.utt_b))
            .collect();
        assert_eq!(inter, neg_mf);
    }

    #[test]
    fn capacity_error_when_per_category_unreachable() {
        let c = corpus(2, 2, 2, 6);
        // PosFF capacity is 2 speakers × C(2,2) = 2
        let err = build_trial_set(&c, 3, 9).unwrap_err();
        assert_eq!(err.code(), "capacity");
    }

    #[test]
    fn too_few_speakers_per_group_is_config_error() {
        let c = corpus(1, 3, 2, 7);
        assert_eq!(build_trial_set(&c, 1, 0).unwrap_err().code(), "config");
    }

    #[test]
    fn paper_scale_counts() {
        // 150,000 per category needs Σ C(u_s, 2) ≥ 150k per gender:
        // 60 speakers × C(80,2) = 189,600.
        let c = corpus(60, 60, 80, 8);
        let set = build_trial_set(&c, 150_000, 11).unwrap();
        assert_eq!(set.len(), 750_000);
        for cat in TrialCategory::all() {
            assert_eq!(set.count(cat), 150_000);
        }
    }

    #[test]
    fn construction_is_seed_deterministic() {
        let c = corpus(5, 5, 3, 9);
        // positive capacity is 5 speakers × C(3,2) = 15 per gender
        let a = build_trial_set(&c, 12, 13).unwrap();
        let b = build_trial_set(&c, 12, 13).unwrap();
        assert_eq!(a.trials, b.trials);
        let other = build_trial_set(&c, 12, 14).unwrap();
        assert_ne!(a.trials, other.trials);
    }

    #[test]
    fn trial_list_round_trip() {
        let c = corpus(3, 3, 3, 10);
        let set = build_trial_set(&c, 5, 15).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.txt");
        save_trial_list(&set, &path).unwrap();
        let loaded = load_trial_list(&path, &c.id).unwrap();
        assert_eq!(loaded.trials, set.trials);
        assert_eq!(loaded.per_category, set.per_category);

        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        let fields: Vec<&str> = first.split(' ').collect();
        assert_eq!(fields.len(), 4);
        assert!(fields[0] == "0" || fields[0] == "1");
        assert!(TrialCategory::parse(fields[3]).is_ok());
    }

    #[test]
    fn malformed_trial_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1 0 1 neg-ff\n").unwrap();
        assert_eq!(load_trial_list(&path, "x").unwrap_err().code(), "artifact");
        std::fs::write(&path, "1 0 oops pos-ff\n").unwrap();
        assert_eq!(load_trial_list(&path, "x").unwrap_err().code(), "artifact");
    }
}
