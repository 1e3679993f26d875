//! Top-k sampling and base-model decoding.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lm::model::{pack_generation_prefix, BaseLm};
use crate::rng::Rng;
use crate::text::vocab::EOS_ID;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub top_k: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { top_k: 10, max_len: 50, seed: 0 }
    }
}

/// Indices of the k largest probabilities, ties broken toward the lower id,
/// returned in ascending id order.
pub fn top_k_indices(dist: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Renormalize `weights` over `ids` and draw one. Shared by every decoding
/// path so that degenerate configurations reduce to each other bit-exactly.
pub fn sample_weighted(ids: &[usize], weights: &[f64], rng: &mut Rng) -> usize {
    debug_assert_eq!(ids.len(), weights.len());
    let total: f64 = weights.iter().sum();
    let mut dart = rng.f64() * total;
    for (i, &w) in weights.iter().enumerate() {
        dart -= w;
        if dart <= 0.0 {
            return ids[i];
        }
    }
    ids[ids.len() - 1]
}

/// Zero out all but the k largest probabilities (ties toward the lower id),
/// renormalize, and sample. k larger than the vocabulary clamps with a
/// warning.
pub fn sample_top_k(dist: &[f64], k: usize, rng: &mut Rng) -> usize {
    assert!(k >= 1, "top-k needs k >= 1");
    let k = if k > dist.len() {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| {
            eprintln!("warning: top-k {k} exceeds vocabulary {}, clamping", dist.len());
        });
        dist.len()
    } else {
        k
    };
    let ids = top_k_indices(dist, k);
    let weights: Vec<f64> = ids.iter().map(|&i| dist[i]).collect();
    sample_weighted(&ids, &weights, rng)
}

/// Sampled decode from the base model alone: per step, pack the running
/// sequence, take the final state, head softmax, top-k sample. Stops at EOS
/// or `max_len` tokens.
pub fn generate_base(
    lm: &BaseLm,
    context: &[Vec<usize>],
    cfg: &GenerationConfig,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let mut tokens = pack_generation_prefix(context, lm.config.lmax, cfg.max_len)?;
    let mut out = Vec::new();
    for _ in 0..cfg.max_len {
        let states = lm.forward_states(&tokens)?;
        let dist = lm.next_token_dist(states.row_slice(states.rows() - 1))?;
        let next = sample_top_k(&dist, cfg.top_k, rng);
        if next == EOS_ID {
            break;
        }
        out.push(next);
        tokens.push(next);
        if tokens.len() >= lm.config.lmax {
            break;
        }
    }
    Ok(out)
}
