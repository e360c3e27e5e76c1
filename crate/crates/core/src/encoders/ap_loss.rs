//! Angular prototypical loss with exact analytic gradients.
//!
//! With two utterances per speaker in a batch, one embedding is the query
//! and the other the prototype. The similarity matrix is a learnable
//! affine map of pairwise cosines, `S[j][k] = w·cos(query_j, proto_k) + b`,
//! and the loss is mean cross-entropy of each row's softmax against its
//! own speaker: `L = -(1/N) Σ_j log softmax_k(S[j][k])[j]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, norm};

/// Floor applied to the learnable scale after every optimizer step.
pub const MIN_SCALE: f64 = 1e-6;

/// Learnable similarity scale and offset. The scale stays positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApLossParams {
    pub scale: f64,
    pub offset: f64,
}

impl Default for ApLossParams {
    fn default() -> Self {
        // customary init for scaled-cosine metric heads
        ApLossParams {
            scale: 10.0,
            offset: -5.0,
        }
    }
}

impl ApLossParams {
    pub fn clamp_scale(&mut self) {
        if self.scale < MIN_SCALE {
            self.scale = MIN_SCALE;
        }
    }
}

/// Gradients of the loss w.r.t. every embedding and both loss parameters.
#[derive(Debug, Clone)]
pub struct ApLossGrads {
    pub queries: Vec<Vec<f64>>,
    pub prototypes: Vec<Vec<f64>>,
    pub scale: f64,
    pub offset: f64,
}

/// Angular prototypical loss over an N-speaker batch.
///
/// `speaker_ids` identify the batch rows; `queries[j]` and `prototypes[j]`
/// are the two embeddings of speaker `j`. Embeddings may be any non-zero
/// vectors; the cosine is computed with explicit norms so gradients are
/// exact whether or not inputs are pre-normalized.
pub fn ap_loss(
    speaker_ids: &[u32],
    queries: &[Vec<f64>],
    prototypes: &[Vec<f64>],
    params: &ApLossParams,
) -> Result<(f64, ApLossGrads)> {
    let n = speaker_ids.len();
    if n < 2 {
        return Err(Error::Config(
            "angular prototypical loss needs at least 2 speakers".into(),
        ));
    }
    if queries.len() != n || prototypes.len() != n {
        return Err(Error::ShapeMismatch {
            context: "ap_loss batch".into(),
            expected: n,
            got: queries.len().min(prototypes.len()),
        });
    }
    {
        let mut seen = std::collections::HashSet::with_capacity(n);
        for &id in speaker_ids {
            if !seen.insert(id) {
                return Err(Error::BatchConstruction(format!(
                    "duplicate speaker id {id} in batch"
                )));
            }
        }
    }
    let dim = queries[0].len();
    let mut q_norms = Vec::with_capacity(n);
    let mut p_norms = Vec::with_capacity(n);
    for v in queries.iter().chain(prototypes.iter()) {
        if v.len() != dim {
            return Err(Error::ShapeMismatch {
                context: "ap_loss embedding dim".into(),
                expected: dim,
                got: v.len(),
            });
        }
    }
    for q in queries {
        let nq = norm(q);
        if nq == 0.0 {
            return Err(Error::DegenerateInput("zero-norm query embedding".into()));
        }
        q_norms.push(nq);
    }
    for p in prototypes {
        let np = norm(p);
        if np == 0.0 {
            return Err(Error::DegenerateInput("zero-norm prototype embedding".into()));
        }
        p_norms.push(np);
    }

    // cosine and similarity matrices
    let mut cos = vec![vec![0.0; n]; n];
    for j in 0..n {
        for k in 0..n {
            cos[j][k] = dot(&queries[j], &prototypes[k]) / (q_norms[j] * p_norms[k]);
        }
    }

    // row-wise softmax with max subtraction; loss is -(1/N) Σ log σ_jj
    let mut loss = 0.0;
    let mut d_sim = vec![vec![0.0; n]; n]; // dL/dS[j][k]
    for j in 0..n {
        let row: Vec<f64> = (0..n)
            .map(|k| params.scale * cos[j][k] + params.offset)
            .collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += -(exps[j] / total).ln();
        for k in 0..n {
            let softmax = exps[k] / total;
            d_sim[j][k] = (softmax - if k == j { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    loss /= n as f64;

    // backprop to (w, b) and to the embeddings
    let mut grads = ApLossGrads {
        queries: queries.iter().map(|q| vec![0.0; q.len()]).collect(),
        prototypes: prototypes.iter().map(|p| vec![0.0; p.len()]).collect(),
        scale: 0.0,
        offset: 0.0,
    };
    for j in 0..n {
        for k in 0..n {
            let ds = d_sim[j][k];
            grads.scale += ds * cos[j][k];
            grads.offset += ds;
            let dcos = ds * params.scale;
            // ∂cos/∂q_j = p_k/(|q||p|) - cos·q_j/|q|², same with roles swapped
            let qf = dcos / (q_norms[j] * p_norms[k]);
            let qs = dcos * cos[j][k] / (q_norms[j] * q_norms[j]);
            for (g, (&pk, &qj)) in grads.queries[j]
                .iter_mut()
                .zip(prototypes[k].iter().zip(queries[j].iter()))
            {
                *g += qf * pk - qs * qj;
            }
            let pf = dcos / (q_norms[j] * p_norms[k]);
            let ps = dcos * cos[j][k] / (p_norms[k] * p_norms[k]);
            for (g, (&qj, &pk)) in grads.prototypes[k]
                .iter_mut()
                .zip(queries[j].iter().zip(prototypes[k].iter()))
            {
                *g += pf * qj - ps * pk;
            }
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use approx::assert_abs_diff_eq;

    fn ids(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    #[test]
    fn identical_embeddings_give_log_n() {
        for n in [2usize, 4, 7] {
            let v = vec![0.3, -0.4, 0.8];
            let queries = vec![v.clone(); n];
            let prototypes = vec![v.clone(); n];
            let (loss, _) =
                ap_loss(&ids(n), &queries, &prototypes, &ApLossParams::default()).unwrap();
            assert_abs_diff_eq!(loss, (n as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn two_speaker_antipodal_closed_form() {
        // cos matrix [[1,-1],[-1,1]] with w=1, b=0: loss = ln(1 + e^-2)
        let queries = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let prototypes = queries.clone();
        let params = ApLossParams {
            scale: 1.0,
            offset: 0.0,
        };
        let (loss, _) = ap_loss(&ids(2), &queries, &prototypes, &params).unwrap();
        assert_abs_diff_eq!(loss, (1.0 + (-2.0f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.126928, epsilon = 1e-6);
    }

    #[test]
    fn loss_is_invariant_to_speaker_permutation() {
        let mut rng = SeededRng::from_seed(3);
        let n = 5;
        let mk = |rng: &mut SeededRng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..4).map(|_| rng.normal(0.0, 1.0)).collect())
                .collect()
        };
        let queries = mk(&mut rng);
        let prototypes = mk(&mut rng);
        let params = ApLossParams::default();
        let (loss, _) = ap_loss(&ids(n), &queries, &prototypes, &params).unwrap();

        let perm = [3usize, 0, 4, 1, 2];
        let qp: Vec<Vec<f64>> = perm.iter().map(|&i| queries[i].clone()).collect();
        let pp: Vec<Vec<f64>> = perm.iter().map(|&i| prototypes[i].clone()).collect();
        let idp: Vec<u32> = perm.iter().map(|&i| i as u32).collect();
        let (loss_p, _) = ap_loss(&idp, &qp, &pp, &params).unwrap();
        assert_abs_diff_eq!(loss, loss_p, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_speaker_ids_are_rejected() {
        let queries = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let err = ap_loss(&[5, 5], &queries, &queries, &ApLossParams::default()).unwrap_err();
        assert_eq!(err.code(), "batch_construction");
    }

    /// Central finite differences over every embedding coordinate and both
    /// loss parameters.
    pub(crate) fn fd_check_instance(seed: u64, n: usize, dim: usize) {
        let mut rng = SeededRng::from_seed(seed);
        let mk = |rng: &mut SeededRng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.normal(0.0, 1.0)).collect())
                .collect()
        };
        let queries = mk(&mut rng);
        let prototypes = mk(&mut rng);
        let params = ApLossParams {
            scale: rng.uniform(0.5, 12.0),
            offset: rng.uniform(-6.0, 1.0),
        };
        let sids = ids(n);
        let (_, grads) = ap_loss(&sids, &queries, &prototypes, &params).unwrap();

        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-4);
        let eval = |queries: &Vec<Vec<f64>>, prototypes: &Vec<Vec<f64>>, p: &ApLossParams| {
            ap_loss(&sids, queries, prototypes, p).unwrap().0
        };

        for j in 0..n {
            for d in 0..dim {
                let mut plus = queries.clone();
                plus[j][d] += h;
                let mut minus = queries.clone();
                minus[j][d] -= h;
                let fd = (eval(&plus, &prototypes, &params) - eval(&minus, &prototypes, &params))
                    / (2.0 * h);
                assert!(
                    rel(grads.queries[j][d], fd) < 1e-4,
                    "query grad mismatch at ({j},{d}): {} vs {fd}",
                    grads.queries[j][d]
                );
                let mut plus = prototypes.clone();
                plus[j][d] += h;
                let mut minus = prototypes.clone();
                minus[j][d] -= h;
                let fd =
                    (eval(&queries, &plus, &params) - eval(&queries, &minus, &params)) / (2.0 * h);
                assert!(
                    rel(grads.prototypes[j][d], fd) < 1e-4,
                    "prototype grad mismatch at ({j},{d})"
                );
            }
        }
        let fd_scale = (eval(
            &queries,
            &prototypes,
            &ApLossParams {
                scale: params.scale + h,
                ..params
            },
        ) - eval(
            &queries,
            &prototypes,
            &ApLossParams {
                scale: params.scale - h,
                ..params
            },
        )) / (2.0 * h);
        assert!(rel(grads.scale, fd_scale) < 1e-4, "scale grad mismatch");
        let fd_offset = (eval(
            &queries,
            &prototypes,
            &ApLossParams {
                offset: params.offset + h,
                ..params
            },
        ) - eval(
            &queries,
            &prototypes,
            &ApLossParams {
                offset: params.offset - h,
                ..params
            },
        )) / (2.0 * h);
        assert!(rel(grads.offset, fd_offset) < 1e-4, "offset grad mismatch");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            fd_check_instance(100 + seed, 3 + (seed as usize % 3), 4);
        }
    }
}
