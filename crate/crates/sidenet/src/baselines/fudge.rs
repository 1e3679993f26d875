//! Weighted decoding: re-score the base model's top candidates with an
//! attribute scorer at every step, keep the best few, sample among them.

use serde::{Deserialize, Serialize};

use crate::baselines::discriminator::{BagOfWordsAttribute, FutureDiscriminator};
use crate::error::Result;
use crate::lm::model::{pack_generation_prefix, BaseLm};
use crate::lm::sample::{sample_weighted, top_k_indices, GenerationConfig};
use crate::rng::Rng;
use crate::text::vocab::EOS_ID;

/// log p(attribute | prefix + candidate) for one candidate continuation.
pub trait FudgeScorer {
    fn log_attr(&self, prefix: &[usize], candidate: usize) -> f64;
}

/// Label task: the future discriminator's probability of the target act.
pub struct ActScorer<'a> {
    pub disc: &'a FutureDiscriminator,
    pub target: usize,
}

impl FudgeScorer for ActScorer<'_> {
    fn log_attr(&self, prefix: &[usize], candidate: usize) -> f64 {
        let mut ext = Vec::with_capacity(prefix.len() + 1);
        ext.extend_from_slice(prefix);
        ext.push(candidate);
        match self.disc.predict(&ext) {
            Ok(p) => p[self.target].max(1e-12).ln(),
            Err(_) => 0.0,
        }
    }
}

/// Knowledge task: bag-overlap score of the extended prefix.
impl FudgeScorer for BagOfWordsAttribute {
    fn log_attr(&self, prefix: &[usize], candidate: usize) -> f64 {
        let mut ext = Vec::with_capacity(prefix.len() + 1);
        ext.extend_from_slice(prefix);
        ext.push(candidate);
        self.score(&ext).max(1e-12).ln()
    }
}

/// Constant attribute score; shifts every candidate equally, so decoding
/// must reduce to plain top-k.
pub struct ConstantScorer(pub f64);

impl FudgeScorer for ConstantScorer {
    fn log_attr(&self, _prefix: &[usize], _candidate: usize) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FudgeConfig {
    /// Base candidates considered per step before re-scoring.
    pub candidates: usize,
    /// Candidates kept (and sampled among) after re-scoring.
    pub keep: usize,
    /// Weight on the conditioning model's log probability.
    pub weight: f64,
}

impl FudgeConfig {
    pub fn for_task(task: crate::text::corpus::Task) -> Self {
        FudgeConfig {
            candidates: 200,
            keep: 10,
            weight: match task {
                crate::text::corpus::Task::Knowledge => 4.0,
                crate::text::corpus::Task::Label => 1.0,
            },
        }
    }
}

/// Weighted decoding. Per step: take the top `candidates` base tokens,
/// combine `p_base(w) * exp(weight * log p_attr(w))`, keep the top `keep`
/// by combined score (ties toward the lower id), sample proportionally to
/// the renormalized combined scores.
///
/// `weight == 0` reproduces plain top-k sampling bit-for-bit: the combined
/// weights are exactly the base probabilities and the same shared sampler
/// consumes the same single draw per token.
pub fn fudge_decode<S: FudgeScorer>(
    base: &BaseLm,
    scorer: &S,
    context: &[Vec<usize>],
    fudge: &FudgeConfig,
    cfg: &GenerationConfig,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let mut tokens = pack_generation_prefix(context, base.config.lmax, cfg.max_len)?;
    let mut out = Vec::new();
    for _ in 0..cfg.max_len {
        let states = base.forward_states(&tokens)?;
        let dist = base.next_token_dist(states.row_slice(states.rows() - 1))?;
        let n_cand = fudge.candidates.min(dist.len());
        let cands = top_k_indices(&dist, n_cand);
        let combined: Vec<f64> = cands
            .iter()
            .map(|&c| {
                if fudge.weight == 0.0 {
                    dist[c]
                } else {
                    dist[c] * (fudge.weight * scorer.log_attr(&out, c)).exp()
                }
            })
            .collect();
        // Top `keep` by combined score, ties toward the lower id, then
        // ascending id for the shared sampler.
        let mut by_score: Vec<usize> = (0..cands.len()).collect();
        by_score.sort_by(|&a, &b| {
            combined[b].partial_cmp(&combined[a]).unwrap().then(cands[a].cmp(&cands[b]))
        });
        by_score.truncate(fudge.keep.min(cands.len()));
        by_score.sort_by_key(|&i| cands[i]);
        let kept_ids: Vec<usize> = by_score.iter().map(|&i| cands[i]).collect();
        let kept_weights: Vec<f64> = by_score.iter().map(|&i| combined[i]).collect();
        let next = sample_weighted(&kept_ids, &kept_weights, rng);
        if next == EOS_ID {
            break;
        }
        out.push(next);
        tokens.push(next);
        if tokens.len() >= base.config.lmax {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::LmConfig;
    use crate::lm::sample::generate_base;

    fn lm() -> BaseLm {
        BaseLm::new(LmConfig { d: 16, layers: 1, heads: 2, lmax: 48 }, 30, 5)
    }

    #[test]
    fn zero_weight_matches_base_topk_exactly() {
        let lm = lm();
        let ctx = vec![vec![7, 8, 9], vec![10, 11]];
        let cfg = GenerationConfig { top_k: 10, max_len: 16, seed: 0 };
        let fudge = FudgeConfig { candidates: 200, keep: 10, weight: 0.0 };
        let scorer = ConstantScorer(0.0);
        let mut r1 = Rng::derive(7, "decode");
        let base_out = generate_base(&lm, &ctx, &cfg, &mut r1).unwrap();
        let mut r2 = Rng::derive(7, "decode");
        let fudge_out = fudge_decode(&lm, &scorer, &ctx, &fudge, &cfg, &mut r2).unwrap();
        assert_eq!(base_out, fudge_out);
    }

    #[test]
    fn constant_scorer_matches_base_topk() {
        // A constant score shifts all candidates equally; the combined
        // weights are the base probabilities times a shared factor, so the
        // renormalized sampling distribution is identical.
        let lm = lm();
        let ctx = vec![vec![3, 4]];
        let cfg = GenerationConfig { top_k: 10, max_len: 12, seed: 0 };
        let fudge = FudgeConfig { candidates: 200, keep: 10, weight: 1.0 };
        let scorer = ConstantScorer(-0.7);
        let mut r1 = Rng::derive(13, "decode");
        let base_out = generate_base(&lm, &ctx, &cfg, &mut r1).unwrap();
        let mut r2 = Rng::derive(13, "decode");
        let fudge_out = fudge_decode(&lm, &scorer, &ctx, &fudge, &cfg, &mut r2).unwrap();
        assert_eq!(base_out, fudge_out);
    }

    #[test]
    fn small_vocab_clamps_candidate_count() {
        let lm = lm(); // |V| = 30 < 200
        let ctx = vec![vec![1, 2]];
        let cfg = GenerationConfig { top_k: 5, max_len: 8, seed: 0 };
        let fudge = FudgeConfig { candidates: 200, keep: 10, weight: 2.0 };
        let bag = BagOfWordsAttribute { ids: [6usize, 7].into_iter().collect() };
        let mut rng = Rng::derive(3, "decode");
        let out = fudge_decode(&lm, &bag, &ctx, &fudge, &cfg, &mut rng).unwrap();
        assert!(out.len() <= 8);
        assert!(out.iter().all(|&t| t < 30));
    }

    #[test]
    fn decoding_never_mutates_base_parameters() {
        let lm = lm();
        let before = crate::checkpoint::to_string(&lm.params);
        let ctx = vec![vec![5]];
        let cfg = GenerationConfig { top_k: 4, max_len: 6, seed: 0 };
        let fudge = FudgeConfig { candidates: 50, keep: 5, weight: 3.0 };
        let bag = BagOfWordsAttribute { ids: [9usize].into_iter().collect() };
        let mut rng = Rng::derive(4, "decode");
        fudge_decode(&lm, &bag, &ctx, &fudge, &cfg, &mut rng).unwrap();
        assert_eq!(crate::checkpoint::to_string(&lm.params), before);
    }
}
