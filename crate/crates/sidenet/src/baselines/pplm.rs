//! Gradient-steered decoding.
//!
//! Per decoding step, a perturbation is added to the block-input states of
//! the last `window` positions and updated by several gradient-ascent steps
//! on `log p(attribute) - lambda_KL * KL(p_perturbed || p_base)`, re-running
//! the transformer stack through the autodiff graph each iteration; the
//! final distribution is the geometric mixture
//! `p_perturbed^gamma * p_base^(1-gamma)` renormalized, then top-k sampled.
//! Base parameters are never touched, and the repeated in-graph forward and
//! backward passes are exactly why this baseline pays a large per-token
//! decoding cost.

use serde::{Deserialize, Serialize};

use crate::baselines::discriminator::BagOfWordsAttribute;
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::lm::model::{pack_generation_prefix, BaseLm};
use crate::lm::sample::{sample_weighted, top_k_indices, GenerationConfig};
use crate::rng::Rng;
use crate::side::label::AttributeClassifier;
use crate::tensor::{softmax_row, Tensor};
use crate::text::corpus::Task;
use crate::text::vocab::EOS_ID;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub steps: usize,
    pub step_size: f64,
    pub window: usize,
    pub gamma_gm: f64,
    pub lambda_kl: f64,
}

impl SteeringConfig {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Knowledge => SteeringConfig {
                steps: 3,
                step_size: 0.03,
                window: 5,
                gamma_gm: 0.99,
                lambda_kl: 0.01,
            },
            Task::Label => SteeringConfig {
                steps: 10,
                step_size: 0.2,
                window: 5,
                gamma_gm: 0.95,
                lambda_kl: 0.01,
            },
        }
    }
}

/// Differentiable attribute models: the bag-of-words mass objective for
/// knowledge documents, or a frozen act classifier over the mean perturbed
/// response states.
pub enum PplmAttribute<'a> {
    Bag(&'a BagOfWordsAttribute),
    Act { classifier: &'a AttributeClassifier, target: usize },
}

struct AscentOutcome {
    perturbed_dist: Vec<f64>,
    aborted: bool,
}

/// Build the steering loss for the current sequence with `delta` applied to
/// the last `window` block-input rows; returns (loss node, perturbed
/// next-token distribution node).
fn steering_loss(
    g: &mut Graph,
    base: &BaseLm,
    tokens: &[usize],
    bos_idx: usize,
    delta_node: NodeId,
    window_start: usize,
    attr: &PplmAttribute,
    lambda_kl: f64,
    neg_ln_base: &Tensor,
) -> Result<(NodeId, NodeId)> {
    let len = tokens.len();
    let states = base.forward_states_graph(g, tokens, Some((window_start, delta_node)))?;
    // Final-position next-token distribution.
    let last = rows_range(g, states, len - 1, 1)?;
    let w_vocab = g.constant(base.params.by_name("head.w_vocab")?.value.clone());
    let logits = g.matmul(last, w_vocab)?;
    let p_pert = g.softmax(logits, 1)?;

    // KL(p' || p_base) = sum p' (ln p' - ln p_base).
    let ln_p = g.ln(p_pert)?;
    let neg_ln_b = g.constant(neg_ln_base.clone());
    let diff = g.add(ln_p, neg_ln_b)?;
    let prod = g.mul(p_pert, diff)?;
    let kl = g.sum_all(prod)?;

    let attr_loss = match attr {
        PplmAttribute::Bag(bag) => {
            let mut indicator = Tensor::zeros(vec![base.vocab_size, 1]);
            for &id in &bag.ids {
                if id < base.vocab_size {
                    indicator.data_mut()[id] = 1.0;
                }
            }
            let ind = g.constant(indicator);
            let mass = g.matmul(p_pert, ind)?;
            let ln_mass = g.ln(mass)?;
            g.scale(ln_mass, -1.0)?
        }
        PplmAttribute::Act { classifier, target } => {
            let resp_rows = rows_range(g, states, bos_idx, len - bos_idx)?;
            let (_, loss) = classifier.control_loss_graph(g, resp_rows, *target)?;
            loss
        }
    };
    let weighted_kl = g.scale(kl, lambda_kl)?;
    let loss = g.add(attr_loss, weighted_kl)?;
    Ok((loss, p_pert))
}

/// Row range of a 2-D node via transpose + column slice + transpose.
fn rows_range(g: &mut Graph, x: NodeId, start: usize, n: usize) -> Result<NodeId> {
    let xt = g.transpose(x)?;
    let sliced = g.slice_cols(xt, start, n)?;
    g.transpose(sliced)
}

fn run_ascent(
    base: &BaseLm,
    tokens: &[usize],
    bos_idx: usize,
    attr: &PplmAttribute,
    steering: &SteeringConfig,
    base_dist: &[f64],
) -> Result<AscentOutcome> {
    let d = base.config.d;
    let len = tokens.len();
    let window = steering.window.min(len);
    let window_start = len - window;
    let neg_ln_base = Tensor::row(base_dist.iter().map(|&p| -p.max(1e-300).ln()).collect());
    let mut delta = Tensor::zeros(vec![window, d]);
    let mut aborted = false;

    for _ in 0..steering.steps {
        let mut g = Graph::new();
        let delta_node = g.constant(delta.clone());
        let (loss, _) = steering_loss(
            &mut g,
            base,
            tokens,
            bos_idx,
            delta_node,
            window_start,
            attr,
            steering.lambda_kl,
            &neg_ln_base,
        )?;
        g.backprop(loss)?;
        let grad = g.grad(delta_node);
        if grad.iter().any(|v| !v.is_finite()) {
            eprintln!("warning: non-finite steering gradient; emitting unperturbed distribution");
            aborted = true;
            break;
        }
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for (w, &gv) in delta.data_mut().iter_mut().zip(grad.iter()) {
            *w -= steering.step_size * gv / norm;
        }
    }

    if aborted {
        return Ok(AscentOutcome { perturbed_dist: base_dist.to_vec(), aborted });
    }

    // Final forward with the settled perturbation.
    let mut g = Graph::new();
    let delta_node = g.constant(delta);
    let (_, p_pert) = steering_loss(
        &mut g,
        base,
        tokens,
        bos_idx,
        delta_node,
        window_start,
        attr,
        steering.lambda_kl,
        &neg_ln_base,
    )?;
    Ok(AscentOutcome { perturbed_dist: g.value(p_pert).data().to_vec(), aborted })
}

/// Geometric mixture `p_pert^gamma * p_base^(1-gamma)`, renormalized.
fn geometric_mix(p_pert: &[f64], p_base: &[f64], gamma: f64) -> Vec<f64> {
    let mut mixed: Vec<f64> = p_pert
        .iter()
        .zip(p_base.iter())
        .map(|(&a, &b)| gamma * a.max(1e-300).ln() + (1.0 - gamma) * b.max(1e-300).ln())
        .collect();
    softmax_row(&mut mixed);
    mixed
}

/// Gradient-steered decode. `steps == 0` or `step_size == 0` emits the base
/// model's distribution unchanged (and bit-identically).
pub fn pplm_decode(
    base: &BaseLm,
    attr: &PplmAttribute,
    context: &[Vec<usize>],
    steering: &SteeringConfig,
    cfg: &GenerationConfig,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let mut tokens = pack_generation_prefix(context, base.config.lmax, cfg.max_len)?;
    let bos_idx = tokens.len() - 1;
    let mut out = Vec::new();
    let passthrough = steering.steps == 0 || steering.step_size == 0.0;
    for _ in 0..cfg.max_len {
        let states = base.forward_states(&tokens)?;
        let base_dist = base.next_token_dist(states.row_slice(states.rows() - 1))?;
        let dist = if passthrough {
            base_dist
        } else {
            let outcome = run_ascent(base, &tokens, bos_idx, attr, steering, &base_dist)?;
            if outcome.aborted {
                base_dist
            } else {
                geometric_mix(&outcome.perturbed_dist, &base_dist, steering.gamma_gm)
            }
        };
        let ids = top_k_indices(&dist, cfg.top_k.min(dist.len()));
        let weights: Vec<f64> = ids.iter().map(|&i| dist[i]).collect();
        let next = sample_weighted(&ids, &weights, rng);
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

/// Measurement helper: (mass on bag words before steering, after steering)
/// for the next-token distribution at the current sequence end.
pub fn steering_mass_shift(
    base: &BaseLm,
    tokens: &[usize],
    bos_idx: usize,
    bag: &BagOfWordsAttribute,
    steering: &SteeringConfig,
) -> Result<(f64, f64)> {
    let states = base.forward_states(tokens)?;
    let base_dist = base.next_token_dist(states.row_slice(states.rows() - 1))?;
    let attr = PplmAttribute::Bag(bag);
    let outcome = run_ascent(base, tokens, bos_idx, &attr, steering, &base_dist)?;
    let mass = |dist: &[f64]| bag.ids.iter().filter(|&&i| i < dist.len()).map(|&i| dist[i]).sum();
    Ok((mass(&base_dist), mass(&outcome.perturbed_dist)))
}
