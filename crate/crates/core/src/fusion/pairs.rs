//! Positive/negative pair sampling for fusion training.
//!
//! Positives are same-speaker utterance pairs. Negatives mix same-gender
//! and cross-gender different-speaker pairs 50/50 (with the same-gender
//! half split evenly between F-F and M-M), since the fusion head must
//! calibrate all three score components on both kinds of impostor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::synth::{Corpus, Group};
use crate::trials::pairing::{
    sample_cross_pairs, sample_negative_pairs, sample_positive_pairs, UttPool,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub utt_a: u32,
    pub utt_b: u32,
    /// `true` for same-speaker pairs (label 1).
    pub target: bool,
}

/// Labeled training pairs, positives first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairBatch {
    pub pairs: Vec<ScorePair>,
    pub n_positive: usize,
}

impl PairBatch {
    /// Total pair count M.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> &[ScorePair] {
        &self.pairs[..self.n_positive]
    }

    pub fn negatives(&self) -> &[ScorePair] {
        &self.pairs[self.n_positive..]
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.target).collect()
    }
}

fn pool_of(corpus: &Corpus, group: Option<Group>) -> UttPool {
    let speakers = corpus
        .speakers
        .iter()
        .filter(|s| group.map_or(true, |g| s.group == g))
        .map(|s| {
            (
                s.id,
                corpus.utterances_of(s.id).iter().map(|u| u.id).collect(),
            )
        })
        .collect();
    UttPool::new(speakers)
}

/// Sample exactly `n_pairs` labeled pairs: `round(n_pairs·positive_fraction)`
/// positives, the rest negatives split half cross-gender and half
/// same-gender (the same-gender half split evenly F-F / M-M).
pub fn sample_pairs(
    corpus: &Corpus,
    n_pairs: usize,
    positive_fraction: f64,
    seed: u64,
) -> Result<PairBatch> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be positive".into()));
    }
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::Config("positive_fraction must lie in [0, 1]".into()));
    }
    for group in Group::all() {
        if corpus.group_count(group) < 2 {
            return Err(Error::Config(format!(
                "pair sampling needs at least 2 {} speakers",
                group.as_str()
            )));
        }
    }
    let n_pos = (n_pairs as f64 * positive_fraction).round() as usize;
    let n_neg = n_pairs - n_pos;
    let n_cross = n_neg / 2;
    let n_same = n_neg - n_cross;
    let n_ff = n_same / 2;
    let n_mm = n_same - n_ff;

    let full = pool_of(corpus, None);
    let f_pool = pool_of(corpus, Some(Group::F));
    let m_pool = pool_of(corpus, Some(Group::M));

    let mut pairs = Vec::with_capacity(n_pairs);
    let push = |sampled: Vec<(u32, u32)>, target: bool, pairs: &mut Vec<ScorePair>| {
        pairs.extend(sampled.into_iter().map(|(a, b)| ScorePair {
            utt_a: a,
            utt_b: b,
            target,
        }));
    };

    let mut rng_pos = SeededRng::from_seed(derive_seed(seed, "pairs:pos"));
    push(
        sample_positive_pairs(&full, n_pos, &mut rng_pos)?,
        true,
        &mut pairs,
    );
    let mut rng_ff = SeededRng::from_seed(derive_seed(seed, "pairs:neg-ff"));
    push(
        sample_negative_pairs(&f_pool, n_ff, &mut rng_ff)?,
        false,
        &mut pairs,
    );
    let mut rng_mm = SeededRng::from_seed(derive_seed(seed, "pairs:neg-mm"));
    push(
        sample_negative_pairs(&m_pool, n_mm, &mut rng_mm)?,
        false,
        &mut pairs,
    );
    let mut rng_x = SeededRng::from_seed(derive_seed(seed, "pairs:neg-cross"));
    push(
        sample_cross_pairs(&f_pool, &m_pool, n_cross, &mut rng_x)?,
        false,
        &mut pairs,
    );

    Ok(PairBatch {
        pairs,
        n_positive: n_pos,
    })
}
