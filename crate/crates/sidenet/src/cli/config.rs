//! Experiment configuration and run manifests.
//!
//! Every subcommand accepts `--config PATH` (JSON); explicit flags override
//! config fields. Each artifact-producing run writes a `manifest.json`
//! recording the resolved configuration, seed, git description, and wall
//! time (wall time is the one field excluded from reproducibility
//! comparisons).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::lm::model::{BaseLm, LmConfig};
use crate::params::ParamSet;
use crate::side::knowledge::KnowledgeSideNet;
use crate::side::label::{AttributeClassifier, LabelSideNet};
use crate::side::train::SideNet;
use crate::text::corpus::Task;
use crate::text::vocab::Vocabulary;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Option<String>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    // Model hyperparameters.
    pub d: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub lmax: Option<usize>,
    pub min_freq: Option<usize>,
    // Training.
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub max_steps: Option<usize>,
    pub eval_interval: Option<usize>,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    // Generation.
    pub top_k: Option<usize>,
    pub max_len: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
    }
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: u64,
    git: String,
    wall_seconds: f64,
}

pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    wall_seconds: f64,
) -> Result<()> {
    let manifest = Manifest { command, config, seed, git: git_describe(), wall_seconds };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

// ── Base model artifacts ────────────────────────────────────────────

/// JSON manifest sitting next to a base checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseManifest {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub lmax: usize,
    pub vocab: String,
}

pub fn save_base(dir: &Path, lm: &BaseLm, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir)?;
    vocab.save(&dir.join("vocab.txt"))?;
    checkpoint::save(&lm.params, &dir.join("base.ckpt"))?;
    let manifest = BaseManifest {
        d: lm.config.d,
        layers: lm.config.layers,
        heads: lm.config.heads,
        lmax: lm.config.lmax,
        vocab: "vocab.txt".to_string(),
    };
    fs::write(dir.join("base.json"), serde_json::to_string(&manifest)?)?;
    Ok(())
}

pub fn load_base(dir: &Path) -> Result<(BaseLm, Vocabulary)> {
    let manifest: BaseManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("base.json")).map_err(|e| {
            Error::Checkpoint(format!("{}: {e}", dir.join("base.json").display()))
        })?)?;
    let vocab = Vocabulary::load(&dir.join(&manifest.vocab))?;
    let params = checkpoint::load(&dir.join("base.ckpt"))?;
    let config = LmConfig {
        d: manifest.d,
        layers: manifest.layers,
        heads: manifest.heads,
        lmax: manifest.lmax,
    };
    let lm = BaseLm::from_params(config, vocab.size(), params)?;
    Ok((lm, vocab))
}

pub fn base_hashes(dir: &Path) -> Result<(String, String)> {
    Ok((
        checkpoint::file_hash(&dir.join("base.ckpt"))?,
        checkpoint::file_hash(&dir.join("vocab.txt"))?,
    ))
}

// ── Side network artifacts ──────────────────────────────────────────

/// Exact manifest schema for side checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SideManifest {
    pub task: String,
    pub lambda: f64,
    pub base_hash: String,
    pub vocab_hash: String,
}

pub fn save_side(path: &Path, net: &SideNet, lambda: f64, base_dir: &Path) -> Result<()> {
    checkpoint::save(net.params(), path)?;
    let (base_hash, vocab_hash) = base_hashes(base_dir)?;
    let manifest = SideManifest {
        task: net.task().name().to_string(),
        lambda,
        base_hash,
        vocab_hash,
    };
    fs::write(path.with_extension("json"), serde_json::to_string(&manifest)?)?;
    Ok(())
}

/// Load a side checkpoint and verify it belongs to the given base artifact.
pub fn load_side(path: &Path, base_dir: &Path, d: usize) -> Result<(SideNet, SideManifest)> {
    let manifest: SideManifest = serde_json::from_str(
        &fs::read_to_string(path.with_extension("json")).map_err(|e| {
            Error::Checkpoint(format!("{}: {e}", path.with_extension("json").display()))
        })?,
    )?;
    let (base_hash, vocab_hash) = base_hashes(base_dir)?;
    if manifest.base_hash != base_hash {
        return Err(Error::Checkpoint(format!(
            "base checkpoint hash mismatch: side net was trained against {}, found {}",
            manifest.base_hash, base_hash
        )));
    }
    if manifest.vocab_hash != vocab_hash {
        return Err(Error::Checkpoint(format!(
            "vocabulary hash mismatch: side net was trained against {}, found {}",
            manifest.vocab_hash, vocab_hash
        )));
    }
    let params = checkpoint::load(path)?;
    let task: Task = manifest.task.parse()?;
    let net = match task {
        Task::Knowledge => SideNet::Knowledge(KnowledgeSideNet::from_params(d, params)),
        Task::Label => SideNet::Label(LabelSideNet::from_params(d, params)),
    };
    Ok((net, manifest))
}

// ── Classifier / discriminator artifacts ───────────────────────────

/// Which upstream artifacts a checkpoint is chained to. Models trained on
/// base representations depend on the exact base checkpoint; models that
/// only share the token vocabulary chain to the vocabulary alone.
#[derive(Clone, Copy, Debug)]
pub enum HashChain {
    BaseAndVocab,
    VocabOnly,
}

pub fn save_params_with_hash(
    path: &Path,
    params: &ParamSet,
    base_dir: &Path,
    chain: HashChain,
) -> Result<()> {
    checkpoint::save(params, path)?;
    let (base_hash, vocab_hash) = base_hashes(base_dir)?;
    let meta = match chain {
        HashChain::BaseAndVocab => {
            serde_json::json!({ "base_hash": base_hash, "vocab_hash": vocab_hash })
        }
        HashChain::VocabOnly => serde_json::json!({ "vocab_hash": vocab_hash }),
    };
    fs::write(path.with_extension("json"), serde_json::to_string(&meta)?)?;
    Ok(())
}

pub fn load_classifier(path: &Path, base_dir: &Path, d: usize) -> Result<AttributeClassifier> {
    verify_sidecar_hashes(path, base_dir)?;
    let mut params = checkpoint::load(path)?;
    params.freeze_all();
    Ok(AttributeClassifier::from_params(d, params))
}

pub fn verify_sidecar_hashes(path: &Path, base_dir: &Path) -> Result<()> {
    let sidecar = path.with_extension("json");
    if !sidecar.exists() {
        return Ok(());
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
    let (base_hash, vocab_hash) = base_hashes(base_dir)?;
    if let Some(h) = meta.get("base_hash").and_then(|v| v.as_str()) {
        if h != base_hash {
            return Err(Error::Checkpoint(format!(
                "base checkpoint hash mismatch for {}",
                path.display()
            )));
        }
    }
    if let Some(h) = meta.get("vocab_hash").and_then(|v| v.as_str()) {
        if h != vocab_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch for {}",
                path.display()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::LmConfig;
    use crate::text::vocab::build_vocab;

    #[test]
    fn base_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = build_vocab(["hello world again"], 1).unwrap();
        let mut lm = BaseLm::new(
            LmConfig { d: 16, layers: 1, heads: 2, lmax: 32 },
            vocab.size(),
            3,
        );
        lm.freeze();
        save_base(dir.path(), &lm, &vocab).unwrap();
        let (loaded, loaded_vocab) = load_base(dir.path()).unwrap();
        assert!(loaded.frozen());
        assert_eq!(loaded.config, lm.config);
        assert_eq!(loaded_vocab.size(), vocab.size());
        for (a, b) in lm.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn side_hash_mismatch_is_rejected() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let vocab = build_vocab(["one two three"], 1).unwrap();
        let cfg = LmConfig { d: 8, layers: 1, heads: 2, lmax: 16 };
        let mut lm_a = BaseLm::new(cfg, vocab.size(), 1);
        lm_a.freeze();
        let mut lm_b = BaseLm::new(cfg, vocab.size(), 2);
        lm_b.freeze();
        save_base(dir_a.path(), &lm_a, &vocab).unwrap();
        save_base(dir_b.path(), &lm_b, &vocab).unwrap();

        let net = SideNet::Label(LabelSideNet::new(8, 5));
        let side_path = dir_a.path().join("side.ckpt");
        save_side(&side_path, &net, 10.0, dir_a.path()).unwrap();

        assert!(load_side(&side_path, dir_a.path(), 8).is_ok());
        let err = load_side(&side_path, dir_b.path(), 8).unwrap_err().to_string();
        assert!(err.contains("hash mismatch"), "{err}");
    }

    #[test]
    fn config_flags_override_pattern() {
        let cfg = ExperimentConfig {
            seed: Some(7),
            lambda: Some(0.5),
            ..Default::default()
        };
        // Flag-wins resolution is a one-liner at each use site.
        let flag_seed: Option<u64> = Some(9);
        assert_eq!(flag_seed.or(cfg.seed).unwrap(), 9);
        let flag_lambda: Option<f64> = None;
        assert_eq!(flag_lambda.or(cfg.lambda).unwrap(), 0.5);
    }
}
