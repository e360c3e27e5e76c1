//! Uniform sampling of unordered utterance pairs without replacement.
//!
//! Used by trial-set construction and fusion pair sampling. Pairs are
//! normalized `(low_id, high_id)` and deduplicated. When the request is a
//! large fraction of the eligible-pair capacity, sampling switches from
//! rejection to full enumeration plus a seeded partial shuffle, so both
//! sparse and dense requests stay fast and exactly uniform.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Utterance ids of one utterance pool, grouped by speaker.
#[derive(Debug, Clone)]
pub struct UttPool {
    speakers: Vec<(u32, Vec<u32>)>,
    /// flat (utt_id, speaker_index) list
    flat: Vec<(u32, usize)>,
}

impl UttPool {
    pub fn new(speakers: Vec<(u32, Vec<u32>)>) -> Self {
        let mut flat = Vec::new();
        for (idx, (_, utts)) in speakers.iter().enumerate() {
            for &u in utts {
                flat.push((u, idx));
            }
        }
        UttPool { speakers, flat }
    }

    /// Exact count of unordered same-speaker pairs.
    pub fn positive_capacity(&self) -> u64 {
        self.speakers
            .iter()
            .map(|(_, u)| {
                let n = u.len() as u64;
                n * (n - 1) / 2
            })
            .sum()
    }

    /// Exact count of unordered different-speaker pairs within the pool.
    pub fn negative_capacity(&self) -> u64 {
        let total = self.flat.len() as u64;
        let same: u64 = self.speakers.iter().map(|(_, u)| (u.len() as u64).pow(2)).sum();
        (total * total - same) / 2
    }

    /// Exact count of pairs with one utterance from each pool.
    pub fn cross_capacity(a: &UttPool, b: &UttPool) -> u64 {
        a.flat.len() as u64 * b.flat.len() as u64
    }
}

fn norm_pair(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn check_capacity(kind: &str, capacity: u64, count: usize) -> Result<()> {
    if (count as u64) > capacity {
        return Err(Error::Capacity(format!(
            "requested {count} {kind} pairs but only {capacity} distinct pairs exist"
        )));
    }
    Ok(())
}

/// Pick `count` distinct elements from an enumerated pair list.
fn pick_from_enumeration(
    mut pairs: Vec<(u32, u32)>,
    count: usize,
    rng: &mut SeededRng,
) -> Vec<(u32, u32)> {
    pairs.sort_unstable();
    let idx = rng.sample_indices(pairs.len(), count);
    idx.into_iter().map(|i| pairs[i]).collect()
}

/// Rejection-sample `count` distinct pairs given a draw function producing
/// uniform eligible pairs (possibly with repeats).
fn rejection_sample(
    count: usize,
    rng: &mut SeededRng,
    mut draw: impl FnMut(&mut SeededRng) -> (u32, u32),
) -> Result<Vec<(u32, u32)>> {
    let mut seen: HashSet<(u32, u32)> = HashSet::with_capacity(count * 2);
    let mut out = Vec::with_capacity(count);
    let max_attempts = 64 * count as u64 + 10_000;
    let mut attempts = 0u64;
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Capacity(
                "pair sampling failed to find enough distinct pairs".into(),
            ));
        }
        let p = draw(rng);
        if seen.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// `count` distinct same-speaker pairs, uniform over all eligible pairs.
pub fn sample_positive_pairs(
    pool: &UttPool,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<(u32, u32)>> {
    let capacity = pool.positive_capacity();
    check_capacity("same-speaker", capacity, count)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if capacity < 2 * count as u64 {
        let mut all = Vec::with_capacity(capacity as usize);
        for (_, utts) in &pool.speakers {
            for i in 0..utts.len() {
                for j in i + 1..utts.len() {
                    all.push(norm_pair(utts[i], utts[j]));
                }
            }
        }
        return Ok(pick_from_enumeration(all, count, rng));
    }
    // Choose a speaker weighted by its pair count, then a distinct pair.
    let weights: Vec<u64> = pool
        .speakers
        .iter()
        .map(|(_, u)| {
            let n = u.len() as u64;
            n * (n - 1) / 2
        })
        .collect();
    let cumulative: Vec<u64> = weights
        .iter()
        .scan(0u64, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    rejection_sample(count, rng, |rng| {
        let ticket = rng.uniform_u64(capacity);
        let s = cumulative.partition_point(|&c| c <= ticket);
        let utts = &pool.speakers[s].1;
        let i = rng.uniform_usize(utts.len());
        let j = (i + 1 + rng.uniform_usize(utts.len() - 1)) % utts.len();
        norm_pair(utts[i], utts[j])
    })
}

/// `count` distinct different-speaker pairs within one pool, uniform over
/// all eligible pairs.
pub fn sample_negative_pairs(
    pool: &UttPool,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<(u32, u32)>> {
    let capacity = pool.negative_capacity();
    check_capacity("different-speaker", capacity, count)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if capacity < 2 * count as u64 {
        let mut all = Vec::with_capacity(capacity as usize);
        for i in 0..pool.flat.len() {
            for j in i + 1..pool.flat.len() {
                if pool.flat[i].1 != pool.flat[j].1 {
                    all.push(norm_pair(pool.flat[i].0, pool.flat[j].0));
                }
            }
        }
        return Ok(pick_from_enumeration(all, count, rng));
    }
    rejection_sample(count, rng, |rng| {
        loop {
            let i = rng.uniform_usize(pool.flat.len());
            let j = rng.uniform_usize(pool.flat.len());
            if pool.flat[i].1 != pool.flat[j].1 {
                return norm_pair(pool.flat[i].0, pool.flat[j].0);
            }
        }
    })
}

/// `count` distinct pairs with one utterance from each pool, uniform.
pub fn sample_cross_pairs(
    pool_a: &UttPool,
    pool_b: &UttPool,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<(u32, u32)>> {
    let capacity = UttPool::cross_capacity(pool_a, pool_b);
    check_capacity("cross-pool", capacity, count)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if capacity < 2 * count as u64 {
        let mut all = Vec::with_capacity(capacity as usize);
        for &(a, _) in &pool_a.flat {
            for &(b, _) in &pool_b.flat {
                all.push(norm_pair(a, b));
            }
        }
        return Ok(pick_from_enumeration(all, count, rng));
    }
    rejection_sample(count, rng, |rng| {
        let a = pool_a.flat[rng.uniform_usize(pool_a.flat.len())].0;
        let b = pool_b.flat[rng.uniform_usize(pool_b.flat.len())].0;
        norm_pair(a, b)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(spec: &[(u32, &[u32])]) -> UttPool {
        UttPool::new(spec.iter().map(|(s, u)| (*s, u.to_vec())).collect())
    }

    #[test]
    fn capacities_count_exactly() {
        let p = pool(&[(0, &[0, 1, 2]), (1, &[3, 4])]);
        assert_eq!(p.positive_capacity(), 3 + 1);
        assert_eq!(p.negative_capacity(), 3 * 2);
        let q = pool(&[(2, &[5])]);
        assert_eq!(UttPool::cross_capacity(&p, &q), 5);
    }

    #[test]
    fn positive_pairs_share_a_speaker() {
        let p = pool(&[(0, &[0, 1, 2]), (1, &[3, 4, 5])]);
        let mut rng = SeededRng::from_seed(1);
        let pairs = sample_positive_pairs(&p, 6, &mut rng).unwrap();
        assert_eq!(pairs.len(), 6);
        for (a, b) in pairs {
            let same = (a <= 2 && b <= 2) || (a >= 3 && b >= 3);
            assert!(same, "pair ({a},{b}) spans speakers");
            assert!(a < b);
        }
    }

    #[test]
    fn negative_pairs_span_speakers_and_dedupe() {
        let p = pool(&[(0, &[0, 1]), (1, &[2, 3]), (2, &[4, 5])]);
        let mut rng = SeededRng::from_seed(2);
        let pairs = sample_negative_pairs(&p, 12, &mut rng).unwrap();
        assert_eq!(pairs.len(), 12);
        let set: std::collections::HashSet<_> = pairs.iter().collect();
        assert_eq!(set.len(), 12);
        for &(a, b) in &pairs {
            assert_ne!(a / 2, b / 2, "pair ({a},{b}) is same-speaker");
        }
    }

    #[test]
    fn over_capacity_requests_error() {
        let p = pool(&[(0, &[0, 1]), (1, &[2, 3])]);
        assert_eq!(
            sample_positive_pairs(&p, 3, &mut SeededRng::from_seed(3))
                .unwrap_err()
                .code(),
            "capacity"
        );
        assert_eq!(
            sample_negative_pairs(&p, 5, &mut SeededRng::from_seed(3))
                .unwrap_err()
                .code(),
            "capacity"
        );
    }

    #[test]
    fn exact_capacity_request_enumerates_everything() {
        let p = pool(&[(0, &[0, 1, 2]), (1, &[3, 4])]);
        let mut rng = SeededRng::from_seed(4);
        let mut pairs = sample_positive_pairs(&p, 4, &mut rng).unwrap();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2), (3, 4)]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = pool(&[(0, &[0, 1, 2, 3]), (1, &[4, 5, 6, 7]), (2, &[8, 9, 10, 11])]);
        let a = sample_negative_pairs(&p, 10, &mut SeededRng::from_seed(5)).unwrap();
        let b = sample_negative_pairs(&p, 10, &mut SeededRng::from_seed(5)).unwrap();
        assert_eq!(a, b);
    }
}
