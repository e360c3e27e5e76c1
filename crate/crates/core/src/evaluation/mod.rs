//! Verification metrics: FAR/FRR sweeps, EER, group-wise EER, disparity
//! score, and silhouette coefficients.
//!
//! Conventions, fixed so numbers are reproducible bit for bit:
//! - a trial is accepted iff `score > threshold` (strict);
//! - `FAR(t)` is the fraction of negatives with score `> t`, `FRR(t)` the
//!   fraction of positives with score `≤ t`;
//! - the sweep visits a sentinel below the minimum score, then every
//!   distinct score ascending;
//! - EER linearly interpolates the (FAR, FRR) polyline at its crossing and
//!   reports `(FAR + FRR) / 2` there, as a percentage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trials::{MetricPool, TrialCategory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub score: f64,
    /// `true` for same-speaker trials.
    pub target: bool,
    pub category: TrialCategory,
}

/// One point of the detection-error tradeoff sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    /// Equal error rate in percent.
    pub eer: f64,
    /// Operating threshold at the crossing.
    pub threshold: f64,
}

/// Group-wise metrics of one evaluated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eer_f: f64,
    pub eer_m: f64,
    pub eer_all: f64,
    /// Disparity score `|EER[F] - EER[M]|`, in percent.
    pub ds: f64,
    pub threshold_f: f64,
    pub threshold_m: f64,
    pub threshold_all: f64,
    pub trials_f: usize,
    pub trials_m: usize,
    pub trials_all: usize,
}

fn split_scores(scored: &[ScoredTrial]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for t in scored {
        if !t.score.is_finite() {
            return Err(Error::DegenerateInput("non-finite trial score".into()));
        }
        if t.target {
            pos.push(t.score);
        } else {
            neg.push(t.score);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::MetricUndefined(
            "EER needs at least one positive and one negative trial".into(),
        ));
    }
    Ok((pos, neg))
}

/// FAR/FRR at a sentinel below the minimum score and at every distinct
/// score, ascending. FAR is non-increasing and FRR non-decreasing along
/// the sweep.
pub fn det_points(scored: &[ScoredTrial]) -> Result<Vec<DetPoint>> {
    let (mut pos, mut neg) = split_scores(scored)?;
    pos.sort_unstable_by(f64::total_cmp);
    neg.sort_unstable_by(f64::total_cmp);
    let n_pos = pos.len() as f64;
    let n_neg = neg.len() as f64;

    let mut thresholds: Vec<f64> = Vec::with_capacity(pos.len() + neg.len() + 1);
    let min_score = pos[0].min(neg[0]);
    thresholds.push(min_score - 1.0);
    let mut merged: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    merged.sort_unstable_by(f64::total_cmp);
    merged.dedup();
    thresholds.extend(merged);

    let mut points = Vec::with_capacity(thresholds.len());
    let mut pos_at_or_below = 0usize; // positives with score <= t
    let mut neg_at_or_below = 0usize;
    for &t in &thresholds {
        while pos_at_or_below < pos.len() && pos[pos_at_or_below] <= t {
            pos_at_or_below += 1;
        }
        while neg_at_or_below < neg.len() && neg[neg_at_or_below] <= t {
            neg_at_or_below += 1;
        }
        points.push(DetPoint {
            threshold: t,
            far: (neg.len() - neg_at_or_below) as f64 / n_neg,
            frr: pos_at_or_below as f64 / n_pos,
        });
    }
    Ok(points)
}

/// Equal error rate over a scored trial list, in percent, with the
/// operating threshold at the FAR/FRR crossing.
pub fn eer(scored: &[ScoredTrial]) -> Result<EerResult> {
    let points = det_points(scored)?;
    eer_from_det(&points)
}

/// EER by linear interpolation of a DET sweep.
pub fn eer_from_det(points: &[DetPoint]) -> Result<EerResult> {
    if points.is_empty() {
        return Err(Error::MetricUndefined("empty DET sweep".into()));
    }
    // diff = FAR - FRR starts at +1 (accept everything) and ends at -1.
    let mut prev = points[0];
    for &p in points {
        let d = p.far - p.frr;
        if d == 0.0 {
            return Ok(EerResult {
                eer: 100.0 * p.far,
                threshold: p.threshold,
            });
        }
        if d < 0.0 {
            let d_prev = prev.far - prev.frr;
            let alpha = d_prev / (d_prev - d);
            let far = prev.far + alpha * (p.far - prev.far);
            let frr = prev.frr + alpha * (p.frr - prev.frr);
            return Ok(EerResult {
                eer: 100.0 * (far + frr) / 2.0,
                threshold: prev.threshold + alpha * (p.threshold - prev.threshold),
            });
        }
        prev = p;
    }
    // FAR stays above FRR through the sweep's end; cannot happen since the
    // final point has FAR=0, FRR=1.
    Err(Error::MetricUndefined(
        "FAR/FRR curves never cross".into(),
    ))
}

/// Group-wise EERs and disparity score from a fully scored trial set.
/// All five categories must be present.
pub fn group_metrics(scored: &[ScoredTrial]) -> Result<MetricReport> {
    for cat in TrialCategory::all() {
        if !scored.iter().any(|t| t.category == cat) {
            return Err(Error::MetricUndefined(format!(
                "category {cat} missing from scored trials"
            )));
        }
    }
    let pool = |which: MetricPool| -> Vec<ScoredTrial> {
        scored
            .iter()
            .filter(|t| which.contains(t.category))
            .copied()
            .collect()
    };
    let f = pool(MetricPool::F);
    let m = pool(MetricPool::M);
    let all = pool(MetricPool::All);
    let r_f = eer(&f)?;
    let r_m = eer(&m)?;
    let r_all = eer(&all)?;
    Ok(MetricReport {
        eer_f: r_f.eer,
        eer_m: r_m.eer,
        eer_all: r_all.eer,
        ds: (r_f.eer - r_m.eer).abs(),
        threshold_f: r_f.threshold,
        threshold_m: r_m.threshold,
        threshold_all: r_all.threshold,
        trials_f: f.len(),
        trials_m: m.len(),
        trials_all: all.len(),
    })
}

impl MetricReport {
    /// Aligned-column text table, EERs in percent with two decimals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str("metric      eer%     threshold     trials\n");
        s.push_str(&format!(
            "EER[F]    {:>6.2}    {:>10.6}    {:>7}\n",
            self.eer_f, self.threshold_f, self.trials_f
        ));
        s.push_str(&format!(
            "EER[M]    {:>6.2}    {:>10.6}    {:>7}\n",
            self.eer_m, self.threshold_m, self.trials_m
        ));
        s.push_str(&format!(
            "EER[All]  {:>6.2}    {:>10.6}    {:>7}\n",
            self.eer_all, self.threshold_all, self.trials_all
        ));
        s.push_str(&format!("DS        {:>6.2}\n", self.ds));
        s
    }
}

/// Export a DET sweep as CSV (`threshold,far,frr`).
pub fn det_points_csv(points: &[DetPoint]) -> String {
    let mut s = String::from("threshold,far,frr\n");
    for p in points {
        s.push_str(&format!("{:.9},{:.9},{:.9}\n", p.threshold, p.far, p.frr));
    }
    s
}

/// Mean silhouette coefficient over labeled points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    pub mean: f64,
    pub n_points: usize,
    /// Points whose cluster has a single member; these contribute 0 by
    /// convention.
    pub n_singletons: usize,
}

/// Mean silhouette coefficient of embeddings clustered by speaker, using
/// Euclidean distance. For each point, `a` is the mean distance to its own
/// cluster (excluding itself) and `b` the smallest mean distance to another
/// cluster; `s = (b - a) / max(a, b)`.
pub fn silhouette(points: &[(Vec<f64>, u32)]) -> Result<SilhouetteReport> {
    let mut clusters: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, (_, speaker)) in points.iter().enumerate() {
        clusters.entry(*speaker).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(Error::MetricUndefined(
            "silhouette needs at least two speakers".into(),
        ));
    }
    let dist = |i: usize, j: usize| -> f64 {
        points[i]
            .0
            .iter()
            .zip(&points[j].0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut sum = 0.0;
    let mut n_singletons = 0usize;
    for (i, (_, speaker)) in points.iter().enumerate() {
        let own = &clusters[speaker];
        if own.len() == 1 {
            n_singletons += 1;
            continue; // contributes s(i) = 0
        }
        let a = own
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| dist(i, j))
            .sum::<f64>()
            / (own.len() - 1) as f64;
        let b = clusters
            .iter()
            .filter(|(other, _)| **other != *speaker)
            .map(|(_, members)| {
                members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        sum += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    Ok(SilhouetteReport {
        mean: sum / points.len() as f64,
        n_points: points.len(),
        n_singletons,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force reference implementations used by tests only.

    use super::ScoredTrial;

    /// EER by dense brute-force threshold sweep.
    ///
    /// Walks at least `grid` candidate thresholds in ascending order — a
    /// uniform grid over the score range, merged with every observed score
    /// so no FAR/FRR step can hide between grid points — recounting both
    /// rates at each. At the first threshold where FAR-FRR hits zero it
    /// reports that rate; otherwise it linearly interpolates across the
    /// step where the sign flips and reports (FAR+FRR)/2 at the crossing.
    pub fn eer_dense_sweep(scored: &[ScoredTrial], grid: usize) -> f64 {
        let mut pos: Vec<f64> = scored.iter().filter(|t| t.target).map(|t| t.score).collect();
        let mut neg: Vec<f64> = scored
            .iter()
            .filter(|t| !t.target)
            .map(|t| t.score)
            .collect();
        pos.sort_unstable_by(f64::total_cmp);
        neg.sort_unstable_by(f64::total_cmp);
        let lo = pos[0].min(neg[0]) - 1e-9;
        let hi = pos[pos.len() - 1].max(neg[neg.len() - 1]) + 1e-9;

        let mut thresholds: Vec<f64> = (0..=grid)
            .map(|k| lo + (hi - lo) * k as f64 / grid as f64)
            .chain(pos.iter().copied())
            .chain(neg.iter().copied())
            .collect();
        thresholds.sort_unstable_by(f64::total_cmp);
        thresholds.dedup();

        let mut pi = 0usize;
        let mut ni = 0usize;
        let mut prev: Option<(f64, f64)> = None;
        for &t in &thresholds {
            while pi < pos.len() && pos[pi] <= t {
                pi += 1;
            }
            while ni < neg.len() && neg[ni] <= t {
                ni += 1;
            }
            let frr = pi as f64 / pos.len() as f64;
            let far = (neg.len() - ni) as f64 / neg.len() as f64;
            let d = far - frr;
            if d == 0.0 {
                return 100.0 * far;
            }
            if d < 0.0 {
                let (pfar, pfrr) = prev.expect("sweep starts at FAR=1, FRR=0");
                let pd = pfar - pfrr;
                let alpha = pd / (pd - d);
                let cfar = pfar + alpha * (far - pfar);
                let cfrr = pfrr + alpha * (frr - pfrr);
                return 100.0 * (cfar + cfrr) / 2.0;
            }
            prev = Some((far, frr));
        }
        unreachable!("FAR ends at 0 and FRR at 1, so the sign must flip");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use approx::assert_abs_diff_eq;

    fn scored(pos: &[f64], neg: &[f64]) -> Vec<ScoredTrial> {
        // categories are irrelevant for plain eer(); use a fixed one
        pos.iter()
            .map(|&s| ScoredTrial {
                score: s,
                target: true,
                category: TrialCategory::PosFF,
            })
            .chain(neg.iter().map(|&s| ScoredTrial {
                score: s,
                target: false,
                category: TrialCategory::NegFF,
            }))
            .collect()
    }

    #[test]
    fn perfect_separation_gives_zero_eer() {
        let r = eer(&scored(&[0.9, 0.8], &[0.2, 0.1])).unwrap();
        assert_eq!(r.eer, 0.0);
    }

    #[test]
    fn hand_worked_crossing() {
        // One false accept (0.5) and one false reject (0.4) at t in (0.4, 0.5).
        let r = eer(&scored(&[0.8, 0.6, 0.4], &[0.5, 0.3, 0.1])).unwrap();
        assert_abs_diff_eq!(r.eer, 100.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn chance_level_for_identical_distributions() {
        let mut rng = SeededRng::from_seed(42);
        let pos: Vec<f64> = (0..100_000).map(|_| rng.next_f64()).collect();
        let neg: Vec<f64> = (0..100_000).map(|_| rng.next_f64()).collect();
        let r = eer(&scored(&pos, &neg)).unwrap();
        assert!((r.eer - 50.0).abs() < 1.0, "chance EER was {}", r.eer);
    }

    #[test]
    fn single_class_input_is_undefined() {
        let err = eer(&scored(&[0.5, 0.6], &[])).unwrap_err();
        assert_eq!(err.code(), "metric_undefined");
    }

    #[test]
    fn eer_matches_dense_sweep_on_random_sets() {
        let mut rng = SeededRng::from_seed(7);
        for round in 0..100 {
            let n_pos = 2 + rng.uniform_usize(200);
            let n_neg = 2 + rng.uniform_usize(200);
            // quantize some rounds to force ties
            let quantize = round % 3 == 0;
            let draw = |rng: &mut SeededRng, shift: f64| {
                let v = rng.normal(shift, 1.0);
                if quantize {
                    (v * 4.0).round() / 4.0
                } else {
                    v
                }
            };
            let pos: Vec<f64> = (0..n_pos).map(|_| draw(&mut rng, 0.8)).collect();
            let neg: Vec<f64> = (0..n_neg).map(|_| draw(&mut rng, -0.8)).collect();
            let trials = scored(&pos, &neg);
            let fast = eer(&trials).unwrap().eer;
            let slow = oracle::eer_dense_sweep(&trials, 200_000);
            assert!(
                (fast - slow).abs() < 0.05,
                "round {round}: eer {fast} vs oracle {slow}"
            );
        }
    }

    #[test]
    fn eer_is_invariant_under_monotone_transforms() {
        let mut rng = SeededRng::from_seed(11);
        let pos: Vec<f64> = (0..57).map(|_| rng.normal(0.6, 0.3)).collect();
        let neg: Vec<f64> = (0..43).map(|_| rng.normal(-0.1, 0.4)).collect();
        let base = eer(&scored(&pos, &neg)).unwrap().eer;
        for transform in [|x: f64| 3.0 * x + 7.0, |x: f64| x.exp(), |x: f64| x.tanh()] {
            let tp: Vec<f64> = pos.iter().map(|&x| transform(x)).collect();
            let tn: Vec<f64> = neg.iter().map(|&x| transform(x)).collect();
            let t = eer(&scored(&tp, &tn)).unwrap().eer;
            assert!((t - base).abs() < 1e-9, "transform changed EER: {base} -> {t}");
        }
    }

    fn five_category_scores(seed: u64) -> Vec<ScoredTrial> {
        let mut rng = SeededRng::from_seed(seed);
        let mut out = Vec::new();
        for cat in TrialCategory::all() {
            // different score quality per category so pools differ
            let (mu_pos, mu_neg) = match cat {
                TrialCategory::PosFF | TrialCategory::NegFF => (0.9, 0.1),
                TrialCategory::NegMF => (0.0, -0.2),
                _ => (0.6, 0.25),
            };
            for _ in 0..60 {
                let mu = if cat.is_target() { mu_pos } else { mu_neg };
                out.push(ScoredTrial {
                    score: rng.normal(mu, 0.3),
                    target: cat.is_target(),
                    category: cat,
                });
            }
        }
        out
    }

    #[test]
    fn group_metrics_compose_from_pool_eers() {
        let all = five_category_scores(3);
        let report = group_metrics(&all).unwrap();
        for (which, want_eer, want_thr) in [
            (MetricPool::F, report.eer_f, report.threshold_f),
            (MetricPool::M, report.eer_m, report.threshold_m),
            (MetricPool::All, report.eer_all, report.threshold_all),
        ] {
            let pool: Vec<ScoredTrial> = all
                .iter()
                .filter(|t| which.contains(t.category))
                .copied()
                .collect();
            let r = eer(&pool).unwrap();
            assert_eq!(r.eer, want_eer);
            assert_eq!(r.threshold, want_thr);
        }
        assert_eq!(report.ds, (report.eer_f - report.eer_m).abs());
    }

    #[test]
    fn paper_spot_value_formats_to_two_decimals() {
        let ds = (3.52f64 - 7.22f64).abs();
        assert_eq!(format!("{ds:.2}"), "3.70");
    }

    #[test]
    fn perfectly_scored_classes_give_zero_everywhere() {
        let all: Vec<ScoredTrial> = TrialCategory::all()
            .into_iter()
            .flat_map(|cat| {
                (0..5).map(move |_| ScoredTrial {
                    score: if cat.is_target() { 1.0 } else { 0.0 },
                    target: cat.is_target(),
                    category: cat,
                })
            })
            .collect();
        let report = group_metrics(&all).unwrap();
        assert_eq!(report.eer_f, 0.0);
        assert_eq!(report.eer_m, 0.0);
        assert_eq!(report.eer_all, 0.0);
        assert_eq!(report.ds, 0.0);
    }

    #[test]
    fn swapping_group_labels_swaps_eers_and_keeps_ds() {
        let all = five_category_scores(9);
        let report = group_metrics(&all).unwrap();
        let swapped: Vec<ScoredTrial> = all
            .iter()
            .map(|t| {
                let category = match t.category {
                    TrialCategory::PosFF => TrialCategory::PosMM,
                    TrialCategory::NegFF => TrialCategory::NegMM,
                    TrialCategory::NegMF => TrialCategory::NegMF,
                    TrialCategory::PosMM => TrialCategory::PosFF,
                    TrialCategory::NegMM => TrialCategory::NegFF,
                };
                ScoredTrial { category, ..*t }
            })
            .collect();
        let mirror = group_metrics(&swapped).unwrap();
        assert_eq!(mirror.eer_f, report.eer_m);
        assert_eq!(mirror.eer_m, report.eer_f);
        assert_eq!(mirror.ds, report.ds);
    }

    #[test]
    fn missing_category_is_undefined() {
        let partial: Vec<ScoredTrial> = five_category_scores(1)
            .into_iter()
            .filter(|t| t.category != TrialCategory::NegMM)
            .collect();
        assert_eq!(group_metrics(&partial).unwrap_err().code(), "metric_undefined");
    }

    #[test]
    fn det_sweep_brackets_and_stays_monotone() {
        let trials = five_category_scores(5);
        let points = det_points(&trials).unwrap();
        let first = points.first().unwrap();
        assert_eq!((first.far, first.frr), (1.0, 0.0));
        let last = points.last().unwrap();
        assert_eq!((last.far, last.frr), (0.0, 1.0));
        for w in points.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].far <= w[0].far, "FAR must be non-increasing");
            assert!(w[1].frr >= w[0].frr, "FRR must be non-decreasing");
        }
    }

    #[test]
    fn eer_lies_on_the_det_polyline() {
        let trials = five_category_scores(6);
        let points = det_points(&trials).unwrap();
        let r = eer(&trials).unwrap();
        // interpolate far/frr at the reported threshold and compare
        let seg = points
            .windows(2)
            .find(|w| w[0].threshold <= r.threshold && r.threshold <= w[1].threshold)
            .expect("threshold inside sweep range");
        let alpha = (r.threshold - seg[0].threshold) / (seg[1].threshold - seg[0].threshold);
        let far = seg[0].far + alpha * (seg[1].far - seg[0].far);
        let frr = seg[0].frr + alpha * (seg[1].frr - seg[0].frr);
        assert!((100.0 * (far + frr) / 2.0 - r.eer).abs() < 1e-9);
    }

    #[test]
    fn silhouette_of_two_tight_clusters_is_one() {
        let mut points = Vec::new();
        for _ in 0..4 {
            points.push((vec![0.0, 0.0], 1u32));
            points.push((vec![5.0, 5.0], 2u32));
        }
        let r = silhouette(&points).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.n_singletons, 0);
    }

    #[test]
    fn silhouette_matches_hand_computation() {
        // Two speakers, three points each, hand-placed in 2-D.
        let points = vec![
            (vec![0.0, 0.0], 1u32),
            (vec![1.0, 0.0], 1),
            (vec![0.0, 1.0], 1),
            (vec![4.0, 0.0], 2),
            (vec![5.0, 0.0], 2),
            (vec![4.0, 1.0], 2),
        ];
        // direct a(i)/b(i) evaluation, written out independently
        let d = |a: &[f64], b: &[f64]| -> f64 {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        };
        let mut expect = 0.0;
        for i in 0..6 {
            let (pi, si) = (&points[i].0, points[i].1);
            let own: Vec<&Vec<f64>> = points
                .iter()
                .enumerate()
                .filter(|(j, p)| *j != i && p.1 == si)
                .map(|(_, p)| &p.0)
                .collect();
            let other: Vec<&Vec<f64>> =
                points.iter().filter(|p| p.1 != si).map(|p| &p.0).collect();
            let a = own.iter().map(|p| d(pi, p)).sum::<f64>() / own.len() as f64;
            let b = other.iter().map(|p| d(pi, p)).sum::<f64>() / other.len() as f64;
            expect += (b - a) / a.max(b);
        }
        expect /= 6.0;
        let r = silhouette(&points).unwrap();
        assert_abs_diff_eq!(r.mean, expect, epsilon = 1e-12);
    }

    #[test]
    fn singleton_cluster_contributes_zero_and_is_flagged() {
        let points = vec![
            (vec![0.0], 1u32),
            (vec![0.1], 1),
            (vec![9.0], 2), // singleton
        ];
        let r = silhouette(&points).unwrap();
        assert_eq!(r.n_singletons, 1);
        // two near points far from the singleton: s ≈ 1 each, singleton 0
        assert!(r.mean > 0.6 && r.mean < 0.67);
    }

    #[test]
    fn silhouette_needs_two_speakers() {
        let points = vec![(vec![0.0], 1u32), (vec![1.0], 1)];
        assert_eq!(silhouette(&points).unwrap_err().code(), "metric_undefined");
    }
}
