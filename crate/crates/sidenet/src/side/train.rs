//! Side-network training, attribute-classifier pretraining, and controlled
//! generation.
//!
//! The base network is frozen throughout: its hidden states are computed
//! once per example and cached, then enter every training graph as
//! constants, so no gradient can reach base parameters by construction
//! (and a test byte-compares the base checkpoint to prove it).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::lm::model::{pack_generation_prefix, BaseLm};
use crate::lm::sample::{sample_top_k, GenerationConfig};
use crate::optim::AdamW;
use crate::rng::Rng;
use crate::side::knowledge::{embed_doc, KnowledgeSideNet};
use crate::side::label::{AttributeClassifier, LabelSideNet};
use crate::tensor::Tensor;
use crate::text::corpus::{ControlAttribute, DialogueExample, Task};
use crate::text::vocab::EOS_ID;

#[derive(Clone, Debug)]
pub enum SideNet {
    Knowledge(KnowledgeSideNet),
    Label(LabelSideNet),
}

impl SideNet {
    pub fn task(&self) -> Task {
        match self {
            SideNet::Knowledge(_) => Task::Knowledge,
            SideNet::Label(_) => Task::Label,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            SideNet::Knowledge(n) => n.d,
            SideNet::Label(n) => n.d,
        }
    }

    pub fn params(&self) -> &crate::params::ParamSet {
        match self {
            SideNet::Knowledge(n) => &n.params,
            SideNet::Label(n) => &n.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut crate::params::ParamSet {
        match self {
            SideNet::Knowledge(n) => &mut n.params,
            SideNet::Label(n) => &mut n.params,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SideTrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Validation cadence in optimizer steps (100 for the knowledge task,
    /// 1000 for the label task by default).
    pub eval_interval: usize,
    /// Optional hard cap on optimizer steps for budgeted runs.
    pub max_steps: Option<usize>,
}

impl SideTrainConfig {
    pub fn for_task(task: Task, lambda: f64) -> Self {
        SideTrainConfig {
            lambda,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 4,
            epochs: 10,
            eval_interval: match task {
                Task::Knowledge => 100,
                Task::Label => 1000,
            },
            max_steps: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedSide {
    pub net: SideNet,
    pub train_trace: Vec<f64>,
    pub val_trace: Vec<(usize, f64)>,
    pub best_val_loss: f64,
}

/// Base states and targets cached once per example (the payoff of the
/// frozen base: teacher-forced h_b never changes during side training).
struct CachedExample {
    h_b: Tensor,
    targets: Vec<usize>,
    act: usize,
    doc: Option<usize>,
}

struct DocCache {
    by_ids: HashMap<Vec<usize>, usize>,
    embeddings: Vec<(Vec<usize>, Tensor)>,
}

impl DocCache {
    fn new() -> Self {
        DocCache { by_ids: HashMap::new(), embeddings: Vec::new() }
    }

    fn intern(&mut self, base: &BaseLm, ids: &[usize]) -> Result<usize> {
        if let Some(&i) = self.by_ids.get(ids) {
            return Ok(i);
        }
        let emb = embed_doc(base, ids)?;
        let idx = self.embeddings.len();
        self.by_ids.insert(ids.to_vec(), idx);
        self.embeddings.push((ids.to_vec(), emb));
        Ok(idx)
    }
}

fn cache_examples(
    base: &BaseLm,
    examples: &[DialogueExample],
    task: Task,
    docs: &mut DocCache,
) -> Result<Vec<CachedExample>> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let h_b = base.response_prediction_states(&ex.context, &ex.response)?;
        let mut targets = ex.response.clone();
        targets.push(EOS_ID);
        let (act, doc) = match (&ex.attribute, task) {
            (ControlAttribute::SemanticLabel { act }, Task::Label) => (*act, None),
            (ControlAttribute::KnowledgeDoc { tokens }, Task::Knowledge) => {
                (0, Some(docs.intern(base, tokens)?))
            }
            _ => {
                return Err(Error::invalid(
                    "example attribute does not match the requested task",
                ))
            }
        };
        out.push(CachedExample { h_b, targets, act, doc });
    }
    Ok(out)
}

/// Eq.-style total objective for one cached example:
/// `L = L_cclm + lambda * L_control`, where the control term is the
/// coverage penalty (knowledge) or the frozen-classifier NLL (label).
fn example_loss_graph(
    g: &mut Graph,
    net: &SideNet,
    classifier: Option<&AttributeClassifier>,
    w_vocab: &Tensor,
    docs: &DocCache,
    ex: &CachedExample,
    lambda: f64,
) -> Result<NodeId> {
    match net {
        SideNet::Knowledge(k) => {
            let (doc_ids, doc_emb) = &docs.embeddings[ex.doc.expect("knowledge example")];
            let fwd = k.forward_graph(g, doc_emb, doc_ids, &ex.h_b, w_vocab, None)?;
            let cclm = g.nll_gather(fwd.final_probs, &ex.targets)?;
            let weighted = g.scale(fwd.coverage, lambda)?;
            g.add(cclm, weighted)
        }
        SideNet::Label(l) => {
            let clf = classifier.ok_or_else(|| {
                Error::invalid("label-task side training needs a frozen attribute classifier")
            })?;
            let fwd = l.forward_graph(g, ex.act, &ex.h_b, w_vocab, None)?;
            let cclm = g.nll_gather(fwd.probs, &ex.targets)?;
            let (_, control) = clf.control_loss_graph(g, fwd.side_reps, ex.act)?;
            let weighted = g.scale(control, lambda)?;
            g.add(cclm, weighted)
        }
    }
}

fn mean_objective(
    net: &SideNet,
    classifier: Option<&AttributeClassifier>,
    w_vocab: &Tensor,
    docs: &DocCache,
    cached: &[CachedExample],
    lambda: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for ex in cached {
        let mut g = Graph::new();
        let loss = example_loss_graph(&mut g, net, classifier, w_vocab, docs, ex, lambda)?;
        total += g.value(loss).scalar_value();
    }
    Ok(total / cached.len().max(1) as f64)
}

/// Train a side network against a frozen base. Teacher-forced loop, AdamW
/// on side parameters only, periodic validation, returns the checkpoint
/// with the lowest validation loss. Deterministic given the seed.
pub fn train_side(
    base: &BaseLm,
    task: Task,
    train: &[DialogueExample],
    val: &[DialogueExample],
    classifier: Option<&AttributeClassifier>,
    cfg: &SideTrainConfig,
    seed: u64,
) -> Result<TrainedSide> {
    if !base.frozen() {
        return Err(Error::Frozen("base network must be frozen before side training".into()));
    }
    if task == Task::Label {
        match classifier {
            Some(c) if c.frozen() => {}
            Some(_) => {
                return Err(Error::Frozen("attribute classifier must be frozen".into()))
            }
            None => {
                return Err(Error::invalid(
                    "label-task side training needs a pretrained attribute classifier",
                ))
            }
        }
    }
    assert!(cfg.lambda >= 0.0, "lambda must be non-negative");
    let w_vocab = base.params.by_name("head.w_vocab")?.value.clone();
    let mut docs = DocCache::new();
    let train_cached = cache_examples(base, train, task, &mut docs)?;
    let val_cached = cache_examples(base, val, task, &mut docs)?;

    let mut net = match task {
        Task::Knowledge => SideNet::Knowledge(KnowledgeSideNet::new(base.config.d, seed)),
        Task::Label => SideNet::Label(LabelSideNet::new(base.config.d, seed)),
    };
    let mut opt = AdamW::with_weight_decay(net.params(), cfg.lr, cfg.weight_decay);
    let mut rng = Rng::derive(seed, "side-train");
    let mut order: Vec<usize> = (0..train_cached.len()).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let steps_per_epoch = train_cached.len().div_ceil(cfg.batch_size).max(1);
    let mut total_steps = cfg.epochs * steps_per_epoch;
    if let Some(cap) = cfg.max_steps {
        total_steps = total_steps.min(cap);
    }

    let mut train_trace = Vec::with_capacity(total_steps);
    let mut val_trace = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = net.params().clone();

    for step in 1..=total_steps {
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let ex = &train_cached[order[cursor]];
            cursor += 1;
            let mut g = Graph::new();
            let raw = example_loss_graph(&mut g, &net, classifier, &w_vocab, &docs, ex, cfg.lambda)?;
            let loss = g.scale(raw, 1.0 / cfg.batch_size as f64)?;
            g.backprop(loss)?;
            g.export_grads(net.params_mut());
            batch_loss += g.value(raw).scalar_value();
        }
        opt.step(net.params_mut())?;
        train_trace.push(batch_loss / cfg.batch_size as f64);

        if step % cfg.eval_interval == 0 || step == total_steps {
            let val_loss = if val_cached.is_empty() {
                *train_trace.last().unwrap()
            } else {
                mean_objective(&net, classifier, &w_vocab, &docs, &val_cached, cfg.lambda)?
            };
            val_trace.push((step, val_loss));
            if val_loss < best_val {
                best_val = val_loss;
                best_params = net.params().clone();
            }
        }
    }

    let best_net = match net {
        SideNet::Knowledge(k) => {
            SideNet::Knowledge(KnowledgeSideNet::from_params(k.d, best_params))
        }
        SideNet::Label(l) => SideNet::Label(LabelSideNet::from_params(l.d, best_params)),
    };
    Ok(TrainedSide { net: best_net, train_trace, val_trace, best_val_loss: best_val })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig { lr: 1e-4, batch_size: 16, epochs: 10 }
    }
}

/// Mean base representation of each example's response positions; the
/// classifier's input space.
pub fn base_mean_reps(
    base: &BaseLm,
    examples: &[DialogueExample],
) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let act = ex
            .attribute
            .act()
            .ok_or_else(|| Error::invalid("dataset lacks act labels"))?;
        let h_b = base.response_prediction_states(&ex.context, &ex.response)?;
        let d = h_b.cols();
        let mut mean = vec![0.0; d];
        for t in 0..h_b.rows() {
            for j in 0..d {
                mean[j] += h_b.at(t, j);
            }
        }
        for v in mean.iter_mut() {
            *v /= h_b.rows() as f64;
        }
        out.push((mean, act));
    }
    Ok(out)
}

/// Train the attribute classifier on frozen-base representations, then
/// freeze it. Independent of every generation model.
pub fn pretrain_classifier(
    base: &BaseLm,
    examples: &[DialogueExample],
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<AttributeClassifier> {
    if !base.frozen() {
        return Err(Error::Frozen("base network must be frozen before classifier training".into()));
    }
    let reps = base_mean_reps(base, examples)?;
    let mut clf = AttributeClassifier::new(base.config.d, seed);
    let mut opt = AdamW::with_weight_decay(&clf.params, cfg.lr, 0.01);
    let mut rng = Rng::derive(seed, "clf-train");
    let mut order: Vec<usize> = (0..reps.len()).collect();
    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                let (mean, act) = &reps[i];
                let mut g = Graph::new();
                let raw = clf.train_loss_graph(&mut g, mean, *act)?;
                let loss = g.scale(raw, 1.0 / chunk.len() as f64)?;
                g.backprop(loss)?;
                g.export_grads(&mut clf.params);
            }
            opt.step(&mut clf.params)?;
        }
    }
    clf.freeze();
    Ok(clf)
}

/// Held-out accuracy of a classifier over base mean representations.
pub fn classifier_accuracy(
    base: &BaseLm,
    clf: &AttributeClassifier,
    examples: &[DialogueExample],
) -> Result<f64> {
    let reps = base_mean_reps(base, examples)?;
    let correct = reps
        .iter()
        .filter(|(mean, act)| clf.predict_act(mean) == *act)
        .count();
    Ok(correct as f64 / reps.len().max(1) as f64)
}

/// Diagnostic decode-time overrides: forcing alpha to 1 (and beta to 1 for
/// the knowledge task) silences the side network entirely.
#[derive(Clone, Copy, Debug, Default)]
pub struct DecodeOverrides {
    pub force_alpha: Option<f64>,
    pub force_beta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct StepTrace {
    pub token: usize,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub top: Vec<(usize, f64)>,
}

fn top_n(dist: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b)));
    idx.into_iter().take(n).map(|i| (i, dist[i])).collect()
}

/// Autoregressive controlled decoding: per step, base state, side forward,
/// fused (and for the knowledge task copy-mixed) distribution, top-k
/// sample. Stops at EOS or the length cap. Coverage state is threaded
/// across steps for the knowledge task.
pub fn generate_controlled(
    base: &BaseLm,
    side: &SideNet,
    context: &[Vec<usize>],
    attribute: &ControlAttribute,
    cfg: &GenerationConfig,
    overrides: DecodeOverrides,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<StepTrace>)> {
    if side.d() != base.config.d {
        return Err(Error::invalid(format!(
            "side network width {} does not match base width {}",
            side.d(),
            base.config.d
        )));
    }
    let mut tokens = pack_generation_prefix(context, base.config.lmax, cfg.max_len)?;
    let mut out = Vec::new();
    let mut traces = Vec::new();

    let mut knowledge_state = match (side, attribute) {
        (SideNet::Knowledge(net), ControlAttribute::KnowledgeDoc { tokens: doc }) => {
            Some(net.begin_decode(base, doc)?)
        }
        (SideNet::Label(_), ControlAttribute::SemanticLabel { .. }) => None,
        _ => return Err(Error::invalid("attribute kind does not match the side network task")),
    };

    for _ in 0..cfg.max_len {
        let states = base.forward_states(&tokens)?;
        let h_row = states.row_slice(states.rows() - 1);
        let (dist, alpha, beta) = match side {
            SideNet::Knowledge(net) => {
                let st = knowledge_state.as_mut().expect("knowledge state");
                let step =
                    net.step(base, st, h_row, overrides.force_alpha, overrides.force_beta)?;
                (step.dist, step.alpha, Some(step.beta))
            }
            SideNet::Label(net) => {
                let act = attribute.act().expect("label attribute");
                let step = net.step(base, act, h_row, overrides.force_alpha)?;
                (step.dist, step.alpha, None)
            }
        };
        let next = sample_top_k(&dist, cfg.top_k, rng);
        traces.push(StepTrace { token: next, alpha, beta, top: top_n(&dist, 5) });
        if next == EOS_ID {
            break;
        }
        out.push(next);
        tokens.push(next);
        if tokens.len() >= base.config.lmax {
            break;
        }
    }
    Ok((out, traces))
}

/// Teacher-forced NLL of the gold response under the controlled model
/// (for test perplexity). Returns (total NLL, token count).
pub fn side_teacher_forced_nll(
    base: &BaseLm,
    side: &SideNet,
    classifier: Option<&AttributeClassifier>,
    example: &DialogueExample,
) -> Result<(f64, usize)> {
    let task = side.task();
    let w_vocab = base.params.by_name("head.w_vocab")?.value.clone();
    let mut docs = DocCache::new();
    let cached = cache_examples(base, std::slice::from_ref(example), task, &mut docs)?;
    let ex = &cached[0];
    let mut g = Graph::new();
    let probs = match side {
        SideNet::Knowledge(k) => {
            let (doc_ids, doc_emb) = &docs.embeddings[ex.doc.expect("knowledge example")];
            k.forward_graph(&mut g, doc_emb, doc_ids, &ex.h_b, &w_vocab, None)?.final_probs
        }
        SideNet::Label(l) => {
            let _ = classifier;
            l.forward_graph(&mut g, ex.act, &ex.h_b, &w_vocab, None)?.probs
        }
    };
    let nll = g.nll_gather(probs, &ex.targets)?;
    Ok((g.value(nll).scalar_value(), ex.targets.len()))
}
