//! Subcommand implementations.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::discriminator::{
    train_future_discriminator, BagOfWordsAttribute, DiscTrainConfig, FutureDiscriminator,
};
use crate::baselines::finetune::{finetune, FinetuneConfig};
use crate::baselines::fudge::{fudge_decode, ActScorer, FudgeConfig};
use crate::baselines::pplm::{pplm_decode, PplmAttribute, SteeringConfig};
use crate::checkpoint;
use crate::cli::config::{
    load_base, load_classifier, load_side, save_base, save_params_with_hash,
    save_side, verify_sidecar_hashes, write_manifest, ExperimentConfig, HashChain,
};
use crate::cli::repl::{repl_command, ReplArgs};
use crate::error::{Error, Result};
use crate::eval::accuracy::{controllability_accuracy, train_eval_classifier, EvalClassifier, EvalClfConfig};
use crate::eval::bench::{decoding_benchmark, BenchMethod};
use crate::eval::bleu::corpus_bleu;
use crate::eval::meteor::meteor_lite;
use crate::eval::perplexity::{test_perplexity, ScoredModel};
use crate::eval::report::{render_table, MethodKind, MetricsReport};
use crate::eval::similarity::{knowledge_similarity, EmbeddingTable};
use crate::lm::model::BaseLm;
use crate::lm::sample::{generate_base, GenerationConfig};
use crate::lm::train::{train_base_lm, TrainLmConfig};
use crate::rng::Rng;
use crate::side::train::{
    classifier_accuracy, generate_controlled, pretrain_classifier, train_side,
    ClassifierTrainConfig, DecodeOverrides, SideNet, SideTrainConfig,
};
use crate::text::corpus::{windowed_raw, Corpus, RawExample, Task};
use crate::text::stopwords::{default_stopwords, load_stopwords, write_default_stopwords};
use crate::text::synth::{generate_synthetic_corpus, write_synthetic_embeddings};
use crate::text::vocab::{build_vocab, tokenize, Vocabulary};

#[derive(Parser)]
#[command(name = "sidenet", version, about = "Controlled dialogue generation with side networks over a frozen base LM")]
pub struct Cli {
    /// JSON experiment config supplying defaults; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Generate a seeded synthetic corpus (train/valid/test splits).
    Synth(SynthArgs),
    /// Train the base language model from scratch, then freeze it.
    TrainBase(TrainBaseArgs),
    /// Train an act classifier (control classifier or evaluation classifier).
    TrainClassifier(TrainClassifierArgs),
    /// Train a side network against a frozen base.
    TrainSide(TrainSideArgs),
    /// Fine-tune a copy of the base model (baseline).
    Finetune(FinetuneArgs),
    /// Train the future discriminator for weighted decoding (label task).
    TrainDiscriminator(TrainDiscriminatorArgs),
    /// Decode responses for a test corpus with one method.
    Generate(GenerateArgs),
    /// Score hypothesis files: controllability, PPL, BLEU, METEOR-lite.
    Evaluate(EvaluateArgs),
    /// Wall-clock decoding cost per token across methods.
    BenchDecode(BenchDecodeArgs),
    /// Grid-search the control-loss weight by validation controllability.
    GridLambda(GridLambdaArgs),
    /// Interactive controlled-generation session.
    Repl(ReplArgs),
}

pub fn run_cli(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.cmd {
        Cmd::Synth(a) => synth(a, &config),
        Cmd::TrainBase(a) => train_base(a, &config),
        Cmd::TrainClassifier(a) => train_classifier(a, &config),
        Cmd::TrainSide(a) => train_side_cmd(a, &config),
        Cmd::Finetune(a) => finetune_cmd(a, &config),
        Cmd::TrainDiscriminator(a) => train_discriminator(a, &config),
        Cmd::Generate(a) => generate(a, &config),
        Cmd::Evaluate(a) => evaluate(a, &config),
        Cmd::BenchDecode(a) => bench_decode(a, &config),
        Cmd::GridLambda(a) => grid_lambda(a, &config),
        Cmd::Repl(a) => repl_command(a, &config),
    }
}

fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required {what}")))
}

fn resolve_task(flag: Option<String>, config: &ExperimentConfig) -> Result<Task> {
    require(flag.or_else(|| config.task.clone()), "--task")?.parse()
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn load_corpus_examples(
    path: &Path,
    vocab: &Vocabulary,
    task: Task,
    window: usize,
) -> Result<Vec<crate::text::corpus::DialogueExample>> {
    let corpus = Corpus::load(path, task)?;
    crate::text::corpus::corpus_examples(&corpus, vocab, task, window)
}

// ── synth ───────────────────────────────────────────────────────────

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Number of dialogues to generate.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dimension of the synthetic embedding file.
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
}

fn synth(a: SynthArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task, config)?;
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    ensure_dir(&out)?;

    let corpus = generate_synthetic_corpus(task, a.n, seed);
    let n = corpus.dialogues.len();
    let n_test = (n / 10).max(1);
    let n_val = (n / 10).max(1);
    let n_train = n - n_val - n_test;
    let split = |lo: usize, hi: usize| Corpus {
        dialogues: corpus.dialogues[lo..hi].to_vec(),
    };
    split(0, n_train).save(&out.join("train.jsonl"))?;
    split(n_train, n_train + n_val).save(&out.join("valid.jsonl"))?;
    split(n_train + n_val, n).save(&out.join("test.jsonl"))?;
    write_synthetic_embeddings(&corpus, a.embed_dim, seed, &out.join("embeddings.txt"))?;
    write_default_stopwords(&out.join("stopwords.txt"))?;

    write_manifest(
        &out,
        "synth",
        serde_json::json!({"task": task.name(), "n": a.n, "embed_dim": a.embed_dim}),
        seed,
        started.elapsed().as_secs_f64(),
    )?;
    println!(
        "synth: {} dialogues ({} train / {} valid / {} test) -> {}",
        n,
        n_train,
        n_val,
        n_test,
        out.display()
    );
    Ok(())
}

// ── train-base ──────────────────────────────────────────────────────

#[derive(Args)]
pub struct TrainBaseArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub lmax: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<usize>,
}

fn train_base(a: TrainBaseArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task, config)?;
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let train_path = require(a.train.or_else(|| config.train.clone()), "--train")?;
    ensure_dir(&out)?;

    let mut cfg = TrainLmConfig::default();
    cfg.model.d = a.d.or(config.d).unwrap_or(cfg.model.d);
    cfg.model.layers = a.layers.or(config.layers).unwrap_or(cfg.model.layers);
    cfg.model.heads = a.heads.or(config.heads).unwrap_or(cfg.model.heads);
    cfg.model.lmax = a.lmax.or(config.lmax).unwrap_or(cfg.model.lmax);
    cfg.steps = a.steps.or(config.steps).unwrap_or(cfg.steps);
    cfg.batch_size = a.batch_size.or(config.batch_size).unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.or(config.lr).unwrap_or(cfg.lr);
    let min_freq = a.min_freq.or(config.min_freq).unwrap_or(1);

    let corpus = Corpus::load(&train_path, task)?;
    let vocab = build_vocab(corpus.all_text(), min_freq)?;
    let examples =
        crate::text::corpus::corpus_examples(&corpus, &vocab, task, task.default_window())?;
    let (mut lm, trace) = train_base_lm(&examples, vocab.size(), &cfg, seed)?;
    lm.freeze();
    save_base(&out, &lm, &vocab)?;

    let mut csv = String::from("step,mean_nll\n");
    for (i, v) in trace.iter().enumerate() {
        csv.push_str(&format!("{},{v:.6}\n", i + 1));
    }
    fs::write(out.join("loss_trace.csv"), csv)?;
    write_manifest(
        &out,
        "train-base",
        serde_json::to_value(&cfg)?,
        seed,
        started.elapsed().as_secs_f64(),
    )?;
    println!(
        "train-base: |V|={} examples={} steps={} final_nll={:.4} -> {}",
        vocab.size(),
        examples.len(),
        cfg.steps,
        trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

// ── train-classifier ────────────────────────────────────────────────

#[derive(Args)]
pub struct TrainClassifierArgs {
    /// control: act classifier over frozen-base states (guides side
    /// training). eval: independent response classifier used for scoring.
    #[arg(long, default_value = "control")]
    pub kind: String,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

fn corpus_response_pairs(path: &Path, vocab: &Vocabulary) -> Result<Vec<(Vec<usize>, usize)>> {
    let corpus = Corpus::load(path, Task::Label)?;
    let raw = windowed_raw(&corpus, Task::Label, Task::Label.default_window())?;
    Ok(raw
        .iter()
        .map(|r| (vocab.encode(&r.response), r.act.expect("label task")))
        .collect())
}

fn train_classifier(a: TrainClassifierArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let train_path = require(a.train.or_else(|| config.train.clone()), "--train")?;
    ensure_dir(&out)?;
    let (lm, vocab) = load_base(&a.base)?;

    match a.kind.as_str() {
        "control" => {
            let cfg = ClassifierTrainConfig {
                lr: a.lr.or(config.lr).unwrap_or(1e-4),
                batch_size: a.batch_size.or(config.batch_size).unwrap_or(16),
                epochs: a.epochs.or(config.epochs).unwrap_or(10),
            };
            let examples =
                load_corpus_examples(&train_path, &vocab, Task::Label, Task::Label.default_window())?;
            let clf = pretrain_classifier(&lm, &examples, &cfg, seed)?;
            save_params_with_hash(&out.join("clf.ckpt"), &clf.params, &a.base, HashChain::BaseAndVocab)?;
            let mut held_acc = None;
            if let Some(valid) = a.valid.or_else(|| config.valid.clone()) {
                let val_examples =
                    load_corpus_examples(&valid, &vocab, Task::Label, Task::Label.default_window())?;
                held_acc = Some(classifier_accuracy(&lm, &clf, &val_examples)?);
            }
            write_manifest(
                &out,
                "train-classifier",
                serde_json::json!({"kind": "control", "config": cfg, "held_out_accuracy": held_acc}),
                seed,
                started.elapsed().as_secs_f64(),
            )?;
            println!(
                "train-classifier(control): {} examples, held-out accuracy {:?} -> {}",
                examples.len(),
                held_acc,
                out.display()
            );
        }
        "eval" => {
            let cfg = EvalClfConfig {
                lr: a.lr.or(config.lr).unwrap_or(1e-4),
                batch_size: a.batch_size.or(config.batch_size).unwrap_or(16),
                epochs: a.epochs.or(config.epochs).unwrap_or(10),
                ..Default::default()
            };
            let train = corpus_response_pairs(&train_path, &vocab)?;
            let valid = match a.valid.or_else(|| config.valid.clone()) {
                Some(p) => corpus_response_pairs(&p, &vocab)?,
                None => Vec::new(),
            };
            let test = match a.test.or_else(|| config.test.clone()) {
                Some(p) => corpus_response_pairs(&p, &vocab)?,
                None => Vec::new(),
            };
            let (clf, accuracy, confusion) =
                train_eval_classifier(&train, &valid, &test, vocab.size(), &cfg, seed)?;
            save_params_with_hash(&out.join("eval_clf.ckpt"), &clf.params, &a.base, HashChain::VocabOnly)?;
            let mut csv = String::from("true\\pred,inform,question,directive,commissive\n");
            for (i, row) in confusion.iter().enumerate() {
                csv.push_str(crate::text::synth::ACT_NAMES[i]);
                for v in row {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
            fs::write(out.join("confusion.csv"), csv)?;
            write_manifest(
                &out,
                "train-classifier",
                serde_json::json!({"kind": "eval", "config": cfg, "test_accuracy": accuracy}),
                seed,
                started.elapsed().as_secs_f64(),
            )?;
            println!(
                "train-classifier(eval): test accuracy {accuracy:.4} -> {}",
                out.display()
            );
        }
        other => return Err(Error::Config(format!("unknown classifier kind '{other}'"))),
    }
    Ok(())
}

// ── train-side ──────────────────────────────────────────────────────

#[derive(Args)]
pub struct TrainSideArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Control classifier checkpoint (required for the label task).
    #[arg(long)]
    pub clf: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

fn resolve_side_cfg(
    a: &TrainSideArgs,
    config: &ExperimentConfig,
    task: Task,
    lambda: f64,
) -> SideTrainConfig {
    let mut cfg = SideTrainConfig::for_task(task, lambda);
    cfg.epochs = a.epochs.or(config.epochs).unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.or(config.batch_size).unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.or(config.lr).unwrap_or(cfg.lr);
    cfg.eval_interval = a.eval_interval.or(config.eval_interval).unwrap_or(cfg.eval_interval);
    cfg.max_steps = a.max_steps.or(config.max_steps);
    cfg
}

fn train_side_cmd(a: TrainSideArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task.clone(), config)?;
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.clone().or_else(|| config.out.clone()), "--out")?;
    let train_path = require(a.train.clone().or_else(|| config.train.clone()), "--train")?;
    let lambda = require(a.lambda.or(config.lambda), "--lambda")?;
    ensure_dir(&out)?;

    let (lm, vocab) = load_base(&a.base)?;
    let train_examples = load_corpus_examples(&train_path, &vocab, task, task.default_window())?;
    let val_examples = match a.valid.clone().or_else(|| config.valid.clone()) {
        Some(p) => load_corpus_examples(&p, &vocab, task, task.default_window())?,
        None => Vec::new(),
    };
    let classifier = match task {
        Task::Label => {
            let clf_path = require(a.clf.clone(), "--clf (label task)")?;
            Some(load_classifier(&clf_path, &a.base, lm.config.d)?)
        }
        Task::Knowledge => None,
    };

    let cfg = resolve_side_cfg(&a, config, task, lambda);
    let trained = train_side(
        &lm,
        task,
        &train_examples,
        &val_examples,
        classifier.as_ref(),
        &cfg,
        seed,
    )?;
    save_side(&out.join("side.ckpt"), &trained.net, lambda, &a.base)?;

    let mut csv = String::from("step,train_loss\n");
    for (i, v) in trained.train_trace.iter().enumerate() {
        csv.push_str(&format!("{},{v:.6}\n", i + 1));
    }
    fs::write(out.join("train_trace.csv"), csv)?;
    let mut csv = String::from("step,val_loss\n");
    for (step, v) in &trained.val_trace {
        csv.push_str(&format!("{step},{v:.6}\n"));
    }
    fs::write(out.join("val_trace.csv"), csv)?;
    write_manifest(
        &out,
        "train-side",
        serde_json::to_value(&cfg)?,
        seed,
        started.elapsed().as_secs_f64(),
    )?;
    println!(
        "train-side({}): lambda={lambda:e} best_val={:.4} -> {}",
        task.name(),
        trained.best_val_loss,
        out.display()
    );
    Ok(())
}

// ── finetune ────────────────────────────────────────────────────────

#[derive(Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

fn finetune_cmd(a: FinetuneArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task, config)?;
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let train_path = require(a.train.or_else(|| config.train.clone()), "--train")?;
    ensure_dir(&out)?;

    let (lm, vocab) = load_base(&a.base)?;
    let train_examples = load_corpus_examples(&train_path, &vocab, task, task.default_window())?;
    let val_examples = match a.valid.or_else(|| config.valid.clone()) {
        Some(p) => load_corpus_examples(&p, &vocab, task, task.default_window())?,
        None => Vec::new(),
    };
    let mut cfg = FinetuneConfig::default();
    cfg.epochs = a.epochs.or(config.epochs).unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.or(config.batch_size).unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.or(config.lr).unwrap_or(cfg.lr);
    cfg.eval_interval = a.eval_interval.or(config.eval_interval).unwrap_or(cfg.eval_interval);
    cfg.max_steps = a.max_steps.or(config.max_steps);

    let (ft, trace, _) = finetune(&lm, &train_examples, &val_examples, &cfg, seed)?;
    save_params_with_hash(&out.join("ft.ckpt"), &ft.params, &a.base, HashChain::BaseAndVocab)?;
    write_manifest(
        &out,
        "finetune",
        serde_json::to_value(&cfg)?,
        seed,
        started.elapsed().as_secs_f64(),
    )?;
    println!(
        "finetune: steps={} final_nll={:.4} -> {}",
        trace.len(),
        trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

// ── train-discriminator ─────────────────────────────────────────────

#[derive(Args)]
pub struct TrainDiscriminatorArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

fn train_discriminator(a: TrainDiscriminatorArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let train_path = require(a.train.or_else(|| config.train.clone()), "--train")?;
    ensure_dir(&out)?;
    let (_, vocab) = load_base(&a.base)?;
    let train_examples =
        load_corpus_examples(&train_path, &vocab, Task::Label, Task::Label.default_window())?;
    let val_examples = match a.valid.or_else(|| config.valid.clone()) {
        Some(p) => load_corpus_examples(&p, &vocab, Task::Label, Task::Label.default_window())?,
        None => Vec::new(),
    };
    let mut cfg = DiscTrainConfig::default();
    cfg.epochs = a.epochs.or(config.epochs).unwrap_or(cfg.epochs);
    cfg.lr = a.lr.or(config.lr).unwrap_or(cfg.lr);
    let (disc, acc) =
        train_future_discriminator(&train_examples, &val_examples, vocab.size(), &cfg, seed)?;
    save_params_with_hash(&out.join("disc.ckpt"), &disc.params, &a.base, HashChain::VocabOnly)?;
    write_manifest(
        &out,
        "train-discriminator",
        serde_json::json!({"config": cfg, "held_out_accuracy": acc}),
        seed,
        started.elapsed().as_secs_f64(),
    )?;
    println!("train-discriminator: held-out accuracy {acc:.4} -> {}", out.display());
    Ok(())
}

// ── generate ────────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypRecord {
    pub context: Vec<String>,
    pub attribute: serde_json::Value,
    pub response: String,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub base: PathBuf,
    /// Reference corpus supplying contexts and attributes.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub side: Option<PathBuf>,
    #[arg(long)]
    pub ft: Option<PathBuf>,
    #[arg(long)]
    pub disc: Option<PathBuf>,
    #[arg(long)]
    pub clf: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Cap on the number of examples decoded.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Diagnostic: force the mixture coefficient.
    #[arg(long)]
    pub force_alpha: Option<f64>,
    /// Diagnostic: force the copy gate.
    #[arg(long)]
    pub force_beta: Option<f64>,
}

/// Everything a decoding method needs, loaded once.
pub struct MethodRunner {
    pub kind: MethodKind,
    pub task: Task,
    pub lm: BaseLm,
    pub ft: Option<BaseLm>,
    pub side: Option<SideNet>,
    pub disc: Option<FutureDiscriminator>,
    pub clf: Option<crate::side::label::AttributeClassifier>,
    pub stop_ids: BTreeSet<usize>,
    pub gen: GenerationConfig,
    pub fudge: FudgeConfig,
    pub steering: SteeringConfig,
    pub overrides: DecodeOverrides,
}

impl MethodRunner {
    pub fn decode(&self, raw: &RawExample, vocab: &Vocabulary, rng: &mut Rng) -> Result<Vec<usize>> {
        let context: Vec<Vec<usize>> = raw
            .context
            .iter()
            .map(|u| vocab.encode(u))
            .filter(|ids| !ids.is_empty())
            .collect();
        match self.kind {
            MethodKind::Base => generate_base(&self.lm, &context, &self.gen, rng),
            MethodKind::Finetune => {
                let ft = self.ft.as_ref().ok_or_else(|| Error::Config("missing --ft".into()))?;
                generate_base(ft, &context, &self.gen, rng)
            }
            MethodKind::Side => {
                let side =
                    self.side.as_ref().ok_or_else(|| Error::Config("missing --side".into()))?;
                let attribute = raw_attribute(raw, self.task, vocab)?;
                let (tokens, _) = generate_controlled(
                    &self.lm,
                    side,
                    &context,
                    &attribute,
                    &self.gen,
                    self.overrides,
                    rng,
                )?;
                Ok(tokens)
            }
            MethodKind::Fudge => match self.task {
                Task::Label => {
                    let disc = self
                        .disc
                        .as_ref()
                        .ok_or_else(|| Error::Config("missing --disc (label fudge)".into()))?;
                    let target = raw.act.ok_or_else(|| Error::invalid("example lacks act"))?;
                    let scorer = ActScorer { disc, target };
                    fudge_decode(&self.lm, &scorer, &context, &self.fudge, &self.gen, rng)
                }
                Task::Knowledge => {
                    let bag = self.example_bag(raw, vocab)?;
                    fudge_decode(&self.lm, &bag, &context, &self.fudge, &self.gen, rng)
                }
            },
            MethodKind::Pplm => match self.task {
                Task::Label => {
                    let clf = self
                        .clf
                        .as_ref()
                        .ok_or_else(|| Error::Config("missing --clf (label pplm)".into()))?;
                    let target = raw.act.ok_or_else(|| Error::invalid("example lacks act"))?;
                    let attr = PplmAttribute::Act { classifier: clf, target };
                    pplm_decode(&self.lm, &attr, &context, &self.steering, &self.gen, rng)
                }
                Task::Knowledge => {
                    let bag = self.example_bag(raw, vocab)?;
                    let attr = PplmAttribute::Bag(&bag);
                    pplm_decode(&self.lm, &attr, &context, &self.steering, &self.gen, rng)
                }
            },
        }
    }

    fn example_bag(&self, raw: &RawExample, vocab: &Vocabulary) -> Result<BagOfWordsAttribute> {
        let facts = raw
            .facts
            .as_ref()
            .ok_or_else(|| Error::invalid("example lacks a knowledge document"))?;
        let doc_ids = crate::text::corpus::encode_knowledge_doc(facts, vocab);
        BagOfWordsAttribute::from_doc(&doc_ids, &self.stop_ids)
    }
}

fn raw_attribute(
    raw: &RawExample,
    task: Task,
    vocab: &Vocabulary,
) -> Result<crate::text::corpus::ControlAttribute> {
    match task {
        Task::Label => Ok(crate::text::corpus::ControlAttribute::SemanticLabel {
            act: raw.act.ok_or_else(|| Error::invalid("example lacks act"))?,
        }),
        Task::Knowledge => {
            let facts = raw
                .facts
                .as_ref()
                .ok_or_else(|| Error::invalid("example lacks knowledge document"))?;
            Ok(crate::text::corpus::ControlAttribute::KnowledgeDoc {
                tokens: crate::text::corpus::encode_knowledge_doc(facts, vocab),
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_runner(
    kind: MethodKind,
    task: Task,
    base_dir: &Path,
    side: Option<&Path>,
    ft: Option<&Path>,
    disc: Option<&Path>,
    clf: Option<&Path>,
    stopwords: Option<&Path>,
    gen: GenerationConfig,
    overrides: DecodeOverrides,
) -> Result<(MethodRunner, Vocabulary)> {
    let (lm, vocab) = load_base(base_dir)?;
    let stop_words = match stopwords {
        Some(p) => load_stopwords(p)?,
        None => default_stopwords(),
    };
    let stop_ids: BTreeSet<usize> = stop_words
        .iter()
        .filter(|w| vocab.contains(w))
        .map(|w| vocab.id(w))
        .collect();
    let side_net = match side {
        Some(p) => Some(load_side(p, base_dir, lm.config.d)?.0),
        None => None,
    };
    let ft_model = match ft {
        Some(p) => {
            verify_sidecar_hashes(p, base_dir)?;
            let params = checkpoint::load(p)?;
            Some(BaseLm::from_params(lm.config, vocab.size(), params)?)
        }
        None => None,
    };
    let disc_model = match disc {
        Some(p) => {
            verify_sidecar_hashes(p, base_dir)?;
            let params = checkpoint::load(p)?;
            let emb_dim = params.by_name("emb.table")?.value.cols();
            Some(FutureDiscriminator::from_params(vocab.size(), emb_dim, params))
        }
        None => None,
    };
    let clf_model = match clf {
        Some(p) => Some(load_classifier(p, base_dir, lm.config.d)?),
        None => None,
    };
    let runner = MethodRunner {
        kind,
        task,
        lm,
        ft: ft_model,
        side: side_net,
        disc: disc_model,
        clf: clf_model,
        stop_ids,
        gen,
        fudge: FudgeConfig::for_task(task),
        steering: SteeringConfig::for_task(task),
        overrides,
    };
    Ok((runner, vocab))
}

fn generate(a: GenerateArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task, config)?;
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let input = require(a.input.or_else(|| config.test.clone()), "--input")?;
    let kind: MethodKind = a.method.parse()?;
    let gen = GenerationConfig {
        top_k: a.top_k.or(config.top_k).unwrap_or(10),
        max_len: a.max_len.or(config.max_len).unwrap_or(50),
        seed,
    };
    let overrides = DecodeOverrides { force_alpha: a.force_alpha, force_beta: a.force_beta };
    let (runner, vocab) = build_runner(
        kind,
        task,
        &a.base,
        a.side.as_deref(),
        a.ft.as_deref(),
        a.disc.as_deref(),
        a.clf.as_deref(),
        a.stopwords.as_deref(),
        gen,
        overrides,
    )?;

    let corpus = Corpus::load(&input, task)?;
    let mut raws = windowed_raw(&corpus, task, task.default_window())?;
    if let Some(limit) = a.limit {
        raws.truncate(limit);
    }

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(&out)?;
    for (i, raw) in raws.iter().enumerate() {
        let mut rng = Rng::derive(seed, &format!("decode-{i}"));
        let tokens = runner.decode(raw, &vocab, &mut rng)?;
        let record = HypRecord {
            context: raw.context.clone(),
            attribute: match task {
                Task::Label => serde_json::json!(raw.act.unwrap()),
                Task::Knowledge => serde_json::json!(raw.facts.clone().unwrap()),
            },
            response: vocab.decode(&tokens),
        };
        serde_json::to_writer(&mut f, &record)?;
        f.write_all(b"\n")?;
    }
    println!(
        "generate({}): {} responses in {:.1}s -> {}",
        kind.name(),
        raws.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub base: PathBuf,
    /// Reference corpus (gold responses and attributes).
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Hypothesis files, `method=path` (repeatable).
    #[arg(long)]
    pub hyp: Vec<String>,
    #[arg(long)]
    pub eval_clf: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Side checkpoint for the side method's perplexity.
    #[arg(long)]
    pub side: Option<PathBuf>,
    /// Fine-tuned checkpoint for the finetune method's perplexity.
    #[arg(long)]
    pub ft: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
}

pub fn load_hyp_file(path: &Path) -> Result<Vec<HypRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| {
            Error::Corpus(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn score_method(
    kind: MethodKind,
    hyps: &[HypRecord],
    refs: &[RawExample],
    task: Task,
    eval_clf: Option<&EvalClassifier>,
    embeddings: Option<&EmbeddingTable>,
    stopwords: &HashSet<String>,
    vocab: &Vocabulary,
    ppl_model: Option<&ScoredModel>,
    ppl_examples: &[crate::text::corpus::DialogueExample],
) -> Result<MetricsReport> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut report = MetricsReport::new(kind.name());
    let hyp_tokens: Vec<Vec<String>> = hyps.iter().map(|h| tokenize(&h.response)).collect();
    let ref_tokens: Vec<Vec<String>> = refs.iter().map(|r| tokenize(&r.response)).collect();

    report.bleu1 = Some(corpus_bleu(&hyp_tokens, &ref_tokens, 1)?);
    report.bleu2 = Some(corpus_bleu(&hyp_tokens, &ref_tokens, 2)?);
    let meteor_sum: f64 = hyp_tokens
        .iter()
        .zip(ref_tokens.iter())
        .map(|(h, r)| meteor_lite(h, r))
        .sum();
    report.meteor = Some(meteor_sum / hyps.len().max(1) as f64);

    match task {
        Task::Label => {
            let clf = eval_clf.ok_or_else(|| {
                Error::Config("label-task evaluation needs --eval-clf".into())
            })?;
            let responses: Vec<Vec<usize>> =
                hyps.iter().map(|h| vocab.encode(&h.response)).collect();
            let targets: Vec<usize> = refs
                .iter()
                .map(|r| r.act.ok_or_else(|| Error::invalid("reference lacks act")))
                .collect::<Result<_>>()?;
            report.accuracy = Some(controllability_accuracy(&responses, &targets, clf)?);
        }
        Task::Knowledge => {
            let emb = embeddings.ok_or_else(|| {
                Error::Config("knowledge-task evaluation needs an embedding table".into())
            })?;
            let mut total = 0.0;
            let mut flagged = 0usize;
            for (h, r) in hyp_tokens.iter().zip(refs.iter()) {
                let facts = r
                    .facts
                    .as_ref()
                    .ok_or_else(|| Error::invalid("reference lacks knowledge document"))?;
                let doc: Vec<String> = facts.iter().flat_map(|f| tokenize(f)).collect();
                let (score, flag) = knowledge_similarity(h, &doc, emb, stopwords);
                total += score;
                flagged += usize::from(flag);
            }
            report.similarity = Some(total / hyps.len().max(1) as f64);
            report.flagged = flagged;
        }
    }

    if kind.supports_ppl() {
        if let Some(model) = ppl_model {
            report.ppl = Some(test_perplexity(model, ppl_examples)?);
        }
    }
    report.validate()?;
    Ok(report)
}

fn evaluate(a: EvaluateArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task, config)?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let ref_path = require(a.reference.or_else(|| config.test.clone()), "--ref")?;
    ensure_dir(&out)?;
    if a.hyp.is_empty() {
        return Err(Error::Config("need at least one --hyp method=path".into()));
    }

    let (lm, vocab) = load_base(&a.base)?;
    let corpus = Corpus::load(&ref_path, task)?;
    let mut refs = windowed_raw(&corpus, task, task.default_window())?;
    if let Some(limit) = a.limit {
        refs.truncate(limit);
    }
    let ppl_examples = {
        let mut ex =
            crate::text::corpus::corpus_examples(&corpus, &vocab, task, task.default_window())?;
        if let Some(limit) = a.limit {
            ex.truncate(limit);
        }
        ex
    };
    let stopwords = match &a.stopwords {
        Some(p) => load_stopwords(p)?,
        None => default_stopwords(),
    };
    let eval_clf = match &a.eval_clf {
        Some(p) => {
            verify_sidecar_hashes(p, &a.base)?;
            let params = checkpoint::load(p)?;
            let emb_dim = params.by_name("emb.table")?.value.cols();
            Some(EvalClassifier::from_params(vocab.size(), emb_dim, params))
        }
        None => None,
    };
    let embeddings = match task {
        Task::Knowledge => Some(match &a.embeddings {
            Some(p) => EmbeddingTable::load(p)?,
            None => EmbeddingTable::from_base_lm(&lm, &vocab)?,
        }),
        Task::Label => None,
    };
    let side_net = match &a.side {
        Some(p) => Some(load_side(p, &a.base, lm.config.d)?.0),
        None => None,
    };
    let ft_model = match &a.ft {
        Some(p) => {
            verify_sidecar_hashes(p, &a.base)?;
            let params = checkpoint::load(p)?;
            Some(BaseLm::from_params(lm.config, vocab.size(), params)?)
        }
        None => None,
    };

    let mut reports = Vec::new();
    for spec in &a.hyp {
        let (method_str, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--hyp expects method=path, got '{spec}'")))?;
        let kind: MethodKind = method_str.parse()?;
        let mut hyps = load_hyp_file(Path::new(path))?;
        if let Some(limit) = a.limit {
            hyps.truncate(limit);
        }
        let ppl_model = match kind {
            MethodKind::Base => Some(ScoredModel::Lm(&lm)),
            MethodKind::Finetune => ft_model.as_ref().map(ScoredModel::Lm),
            MethodKind::Side => side_net.as_ref().map(|net| ScoredModel::Side { base: &lm, net }),
            _ => None,
        };
        reports.push(score_method(
            kind,
            &hyps,
            &refs,
            task,
            eval_clf.as_ref(),
            embeddings.as_ref(),
            &stopwords,
            &vocab,
            ppl_model.as_ref(),
            &ppl_examples,
        )?);
    }

    fs::write(out.join("report.json"), crate::eval::report::to_json(&reports)?)?;
    let table = render_table(&reports);
    fs::write(out.join("report.txt"), &table)?;
    write_manifest(
        &out,
        "evaluate",
        serde_json::json!({"task": task.name(), "examples": refs.len()}),
        config.seed.unwrap_or(0),
        started.elapsed().as_secs_f64(),
    )?;
    print!("{table}");
    Ok(())
}

// ── bench-decode ────────────────────────────────────────────────────

#[derive(Args)]
pub struct BenchDecodeArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub base: PathBuf,
    /// Corpus supplying the 10 benchmark contexts.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
    /// Comma-separated methods to time.
    #[arg(long, default_value = "base,side,fudge,pplm")]
    pub methods: String,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub side: Option<PathBuf>,
    #[arg(long)]
    pub ft: Option<PathBuf>,
    #[arg(long)]
    pub disc: Option<PathBuf>,
    #[arg(long)]
    pub clf: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

fn bench_decode(a: BenchDecodeArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task, config)?;
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let ctx_path = require(a.contexts.or_else(|| config.test.clone()), "--contexts")?;
    ensure_dir(&out)?;
    let gen = GenerationConfig {
        top_k: a.top_k.or(config.top_k).unwrap_or(10),
        max_len: a.max_len.or(config.max_len).unwrap_or(50),
        seed,
    };

    let corpus = Corpus::load(&ctx_path, task)?;
    let raws = windowed_raw(&corpus, task, task.default_window())?;
    if raws.len() < 10 {
        return Err(Error::invalid(format!(
            "decoding benchmark needs 10 contexts, corpus provides {}",
            raws.len()
        )));
    }
    let bench_raws: Vec<RawExample> = raws.into_iter().take(10).collect();

    // methods borrows from runners, so runners must outlive it.
    let mut runners = Vec::new();
    let mut methods = Vec::new();
    for name in a.methods.split(',') {
        let kind: MethodKind = name.trim().parse()?;
        let (runner, vocab) = build_runner(
            kind,
            task,
            &a.base,
            a.side.as_deref(),
            a.ft.as_deref(),
            a.disc.as_deref(),
            a.clf.as_deref(),
            None,
            gen,
            DecodeOverrides::default(),
        )?;
        runners.push((kind, runner, vocab));
    }
    for (kind, runner, vocab) in &runners {
        let raws = bench_raws.clone();
        methods.push(BenchMethod {
            name: kind.name().to_string(),
            run: Box::new(move |_ctxs| {
                let mut total = 0usize;
                for (i, raw) in raws.iter().enumerate() {
                    let mut rng = Rng::derive(gen.seed, &format!("bench-{i}"));
                    let tokens = runner.decode(raw, vocab, &mut rng)?;
                    total += tokens.len().max(1);
                }
                Ok(total)
            }),
        });
    }
    // The runners close over their own raw contexts; the benchmark API's
    // context list only fixes the count.
    let placeholder: Vec<Vec<Vec<usize>>> = (0..10).map(|i| vec![vec![i]]).collect();
    let results = decoding_benchmark(methods, &placeholder, a.reps)?;

    fs::write(out.join("bench.json"), serde_json::to_string_pretty(&results)?)?;
    for r in &results {
        println!("{:<10} {:.4} s/tok (reps: {:?})", r.name, r.seconds_per_token, r.reps);
    }
    write_manifest(
        &out,
        "bench-decode",
        serde_json::json!({"task": task.name(), "reps": a.reps, "max_len": gen.max_len}),
        seed,
        started.elapsed().as_secs_f64(),
    )?;
    Ok(())
}

// ── grid-lambda ─────────────────────────────────────────────────────

#[derive(Args)]
pub struct GridLambdaArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Comma-separated lambda grid (the appendix defaults apply per task
    /// when omitted).
    #[arg(long)]
    pub grid: Option<String>,
    /// Optional focus lambda that must be a member of the grid.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub clf: Option<PathBuf>,
    #[arg(long)]
    pub eval_clf: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Validation contexts decoded per grid point.
    #[arg(long, default_value_t = 100)]
    pub gen_limit: usize,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

pub fn default_grid(task: Task) -> Vec<f64> {
    match task {
        Task::Knowledge => vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        Task::Label => vec![1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6],
    }
}

#[derive(Serialize)]
struct GridRow {
    lambda: f64,
    val_controllability: f64,
    best_val_loss: f64,
}

fn grid_lambda(a: GridLambdaArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task = resolve_task(a.task, config)?;
    let seed = require(a.seed.or(config.seed), "--seed")?;
    let out = require(a.out.or_else(|| config.out.clone()), "--out")?;
    let train_path = require(a.train.or_else(|| config.train.clone()), "--train")?;
    let valid_path = require(a.valid.or_else(|| config.valid.clone()), "--valid")?;
    ensure_dir(&out)?;

    let grid: Vec<f64> = match a.grid {
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad lambda '{t}'")))
            })
            .collect::<Result<_>>()?,
        None => config.lambda_grid.clone().unwrap_or_else(|| default_grid(task)),
    };
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if let Some(focus) = a.lambda {
        if !grid.iter().any(|&l| l == focus) {
            return Err(Error::Config(format!(
                "lambda {focus:e} is not in the configured grid {grid:?}"
            )));
        }
    }

    let (lm, vocab) = load_base(&a.base)?;
    let train_examples = load_corpus_examples(&train_path, &vocab, task, task.default_window())?;
    let val_examples = load_corpus_examples(&valid_path, &vocab, task, task.default_window())?;
    let classifier = match task {
        Task::Label => {
            let clf_path = require(a.clf.clone(), "--clf (label task)")?;
            Some(load_classifier(&clf_path, &a.base, lm.config.d)?)
        }
        Task::Knowledge => None,
    };
    let eval_clf = match &a.eval_clf {
        Some(p) => {
            let params = checkpoint::load(p)?;
            let emb_dim = params.by_name("emb.table")?.value.cols();
            Some(EvalClassifier::from_params(vocab.size(), emb_dim, params))
        }
        None => None,
    };
    let embeddings = match task {
        Task::Knowledge => Some(match &a.embeddings {
            Some(p) => EmbeddingTable::load(p)?,
            None => EmbeddingTable::from_base_lm(&lm, &vocab)?,
        }),
        Task::Label => None,
    };
    let stopwords = match &a.stopwords {
        Some(p) => load_stopwords(p)?,
        None => default_stopwords(),
    };
    let gen = GenerationConfig {
        top_k: a.top_k.or(config.top_k).unwrap_or(10),
        max_len: a.max_len.or(config.max_len).unwrap_or(20),
        seed,
    };

    let corpus = Corpus::load(&valid_path, task)?;
    let mut val_raws = windowed_raw(&corpus, task, task.default_window())?;
    val_raws.truncate(a.gen_limit);

    let mut rows = Vec::new();
    let mut best: Option<(f64, f64, SideNet)> = None;
    for &lambda in &grid {
        let mut cfg = SideTrainConfig::for_task(task, lambda);
        cfg.epochs = a.epochs.or(config.epochs).unwrap_or(cfg.epochs);
        cfg.max_steps = a.max_steps.or(config.max_steps);
        let trained = train_side(
            &lm,
            task,
            &train_examples,
            &val_examples,
            classifier.as_ref(),
            &cfg,
            seed,
        )?;
        let controllability = grid_controllability(
            &lm,
            &trained.net,
            &val_raws,
            task,
            &vocab,
            eval_clf.as_ref(),
            embeddings.as_ref(),
            &stopwords,
            &gen,
        )?;
        println!(
            "grid-lambda: lambda={lambda:e} val_controllability={controllability:.4} val_loss={:.4}",
            trained.best_val_loss
        );
        rows.push(GridRow {
            lambda,
            val_controllability: controllability,
            best_val_loss: trained.best_val_loss,
        });
        let better = match &best {
            Some((_, best_c, _)) => lambda > 0.0 && controllability > *best_c,
            None => lambda > 0.0,
        };
        if better {
            best = Some((lambda, controllability, trained.net));
        }
    }

    fs::write(out.join("grid.json"), serde_json::to_string_pretty(&rows)?)?;
    if let Some((lambda, controllability, net)) = best {
        save_side(&out.join("best.ckpt"), &net, lambda, &a.base)?;
        println!(
            "grid-lambda: selected lambda={lambda:e} (val controllability {controllability:.4})"
        );
    }
    write_manifest(
        &out,
        "grid-lambda",
        serde_json::json!({"task": task.name(), "grid": grid}),
        seed,
        started.elapsed().as_secs_f64(),
    )?;
    Ok(())
}

/// Decode the validation subset under one side net and score its
/// controllability with the task metric.
#[allow(clippy::too_many_arguments)]
pub fn grid_controllability(
    lm: &BaseLm,
    net: &SideNet,
    val_raws: &[RawExample],
    task: Task,
    vocab: &Vocabulary,
    eval_clf: Option<&EvalClassifier>,
    embeddings: Option<&EmbeddingTable>,
    stopwords: &HashSet<String>,
    gen: &GenerationConfig,
) -> Result<f64> {
    let mut responses = Vec::with_capacity(val_raws.len());
    for (i, raw) in val_raws.iter().enumerate() {
        let context: Vec<Vec<usize>> = raw
            .context
            .iter()
            .map(|u| vocab.encode(u))
            .filter(|ids| !ids.is_empty())
            .collect();
        let attribute = raw_attribute(raw, task, vocab)?;
        let mut rng = Rng::derive(gen.seed, &format!("grid-decode-{i}"));
        let (tokens, _) = generate_controlled(
            lm,
            net,
            &context,
            &attribute,
            gen,
            DecodeOverrides::default(),
            &mut rng,
        )?;
        responses.push(tokens);
    }
    match task {
        Task::Label => {
            let clf = eval_clf
                .ok_or_else(|| Error::Config("label grid search needs --eval-clf".into()))?;
            let targets: Vec<usize> = val_raws.iter().map(|r| r.act.unwrap()).collect();
            let scored: Vec<Vec<usize>> = responses
                .iter()
                .map(|ids| if ids.is_empty() { vec![crate::text::vocab::UNK_ID] } else { ids.clone() })
                .collect();
            controllability_accuracy(&scored, &targets, clf)
        }
        Task::Knowledge => {
            let emb = embeddings
                .ok_or_else(|| Error::Config("knowledge grid search needs embeddings".into()))?;
            let mut total = 0.0;
            for (raw, ids) in val_raws.iter().zip(responses.iter()) {
                let hyp: Vec<String> =
                    vocab.decode(ids).split_whitespace().map(|s| s.to_string()).collect();
                let doc: Vec<String> = raw
                    .facts
                    .as_ref()
                    .unwrap()
                    .iter()
                    .flat_map(|f| tokenize(f))
                    .collect();
                let (score, _) = knowledge_similarity(&hyp, &doc, emb, stopwords);
                total += score;
            }
            Ok(total / val_raws.len().max(1) as f64)
        }
    }
}

