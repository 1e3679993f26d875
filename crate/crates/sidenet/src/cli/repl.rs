//! Interactive probing of controlled generation.
//!
//! Each plain input line is a user utterance: it joins the dialogue
//! history, a response is generated under the current control attribute,
//! and both sides of the exchange stay in the windowed context. Colon
//! commands adjust the session:
//!
//! ```text
//! :act <inform|question|directive|commissive>   set the target act
//! :fact <text>     replace the knowledge document with one fact
//! :fact+ <text>    append another fact
//! :alpha <v|off>   force or release the mixture coefficient
//! :beta <v|off>    force or release the copy gate
//! :verbose on|off  per-token alpha/beta and top-5 candidates
//! :reset           clear the dialogue history
//! :quit            exit (transcript is saved)
//! ```
//!
//! Transcripts replay deterministically: `--replay FILE` re-runs a saved
//! session and verifies the outputs token for token.

use std::fs;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::cli::config::{load_base, load_side, write_manifest, ExperimentConfig};
use crate::error::{Error, Result};
use crate::lm::model::BaseLm;
use crate::lm::sample::{generate_base, GenerationConfig};
use crate::rng::Rng;
use crate::side::train::{generate_controlled, DecodeOverrides, SideNet, StepTrace};
use crate::text::corpus::{ControlAttribute, Task};
use crate::text::synth::ACT_NAMES;
use crate::text::vocab::Vocabulary;

#[derive(Args)]
pub struct ReplArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub side: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the session transcript.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replay a transcript and verify outputs token for token.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TranscriptEntry {
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

pub struct ReplSession<'a> {
    lm: &'a BaseLm,
    side: Option<&'a SideNet>,
    vocab: &'a Vocabulary,
    task: Task,
    gen: GenerationConfig,
    seed: u64,
    history: Vec<String>,
    act: usize,
    facts: Vec<String>,
    overrides: DecodeOverrides,
    verbose: bool,
    turn: usize,
}

impl<'a> ReplSession<'a> {
    pub fn new(
        lm: &'a BaseLm,
        side: Option<&'a SideNet>,
        vocab: &'a Vocabulary,
        task: Task,
        gen: GenerationConfig,
        seed: u64,
    ) -> Self {
        ReplSession {
            lm,
            side,
            vocab,
            task,
            gen,
            seed,
            history: Vec::new(),
            act: 0,
            facts: vec!["i love tea and coffee".to_string()],
            overrides: DecodeOverrides::default(),
            verbose: false,
            turn: 0,
        }
    }

    fn attribute(&self) -> ControlAttribute {
        match self.task {
            Task::Label => ControlAttribute::SemanticLabel { act: self.act },
            Task::Knowledge => ControlAttribute::KnowledgeDoc {
                tokens: crate::text::corpus::encode_knowledge_doc(&self.facts, self.vocab),
            },
        }
    }

    fn generate(&mut self, out: &mut impl Write) -> Result<String> {
        let window = self.task.default_window();
        let lo = self.history.len().saturating_sub(window);
        let context: Vec<Vec<usize>> = self.history[lo..]
            .iter()
            .map(|u| self.vocab.encode(u))
            .filter(|ids| !ids.is_empty())
            .collect();
        let mut rng = Rng::derive(self.seed, &format!("repl-turn-{}", self.turn));
        self.turn += 1;
        let (tokens, traces): (Vec<usize>, Vec<StepTrace>) = match self.side {
            Some(net) => {
                generate_controlled(self.lm, net, &context, &self.attribute(), &self.gen, self.overrides, &mut rng)?
            }
            None => (generate_base(self.lm, &context, &self.gen, &mut rng)?, Vec::new()),
        };
        let text = self.vocab.decode(&tokens);
        if self.verbose {
            for t in &traces {
                let beta = t.beta.map(|b| format!(" beta={b:.3}")).unwrap_or_default();
                let top: Vec<String> = t
                    .top
                    .iter()
                    .map(|(id, p)| format!("{}:{p:.3}", self.vocab.token(*id)))
                    .collect();
                writeln!(
                    out,
                    "  tok='{}' alpha={:.3}{beta} top5: {}",
                    self.vocab.token(t.token),
                    t.alpha,
                    top.join(" ")
                )?;
            }
        }
        Ok(text)
    }

    /// Process one input line. Returns (response text if a generation turn,
    /// quit flag).
    pub fn handle_line(&mut self, line: &str, out: &mut impl Write) -> Result<(Option<String>, bool)> {
        let line = line.trim();
        if line.is_empty() {
            return Ok((None, false));
        }
        if let Some(rest) = line.strip_prefix(':') {
            let (cmd, arg) = match rest.split_once(' ') {
                Some((c, a)) => (c, a.trim()),
                None => (rest, ""),
            };
            match cmd {
                "quit" | "q" => return Ok((None, true)),
                "act" => match ACT_NAMES.iter().position(|n| *n == arg) {
                    Some(i) => {
                        self.act = i;
                        writeln!(out, "act = {}", ACT_NAMES[i])?;
                    }
                    None => writeln!(
                        out,
                        "unknown act '{arg}' (inform|question|directive|commissive)"
                    )?,
                },
                "fact" => {
                    if arg.is_empty() {
                        writeln!(out, "usage: :fact <text>")?;
                    } else {
                        self.facts = vec![arg.to_string()];
                        writeln!(out, "knowledge document reset to 1 fact")?;
                    }
                }
                "fact+" => {
                    if arg.is_empty() {
                        writeln!(out, "usage: :fact+ <text>")?;
                    } else {
                        self.facts.push(arg.to_string());
                        writeln!(out, "knowledge document now has {} facts", self.facts.len())?;
                    }
                }
                "alpha" => match parse_override(arg) {
                    Ok(v) => {
                        self.overrides.force_alpha = v;
                        writeln!(out, "alpha override = {v:?}")?;
                    }
                    Err(msg) => writeln!(out, "{msg}")?,
                },
                "beta" => match parse_override(arg) {
                    Ok(v) => {
                        self.overrides.force_beta = v;
                        writeln!(out, "beta override = {v:?}")?;
                    }
                    Err(msg) => writeln!(out, "{msg}")?,
                },
                "verbose" => {
                    self.verbose = arg == "on";
                    writeln!(out, "verbose = {}", self.verbose)?;
                }
                "reset" => {
                    self.history.clear();
                    writeln!(out, "history cleared")?;
                }
                other => writeln!(out, "unknown command ':{other}'")?,
            }
            return Ok((None, false));
        }

        self.history.push(line.to_string());
        let response = self.generate(out)?;
        writeln!(out, "> {response}")?;
        self.history.push(response.clone());
        Ok((Some(response), false))
    }
}

fn parse_override(arg: &str) -> std::result::Result<Option<f64>, String> {
    if arg == "off" {
        return Ok(None);
    }
    arg.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("expected a number or 'off', got '{arg}'"))
}

/// Drive a session over arbitrary input/output streams; returns the
/// transcript.
pub fn run_session(
    session: &mut ReplSession,
    input: impl BufRead,
    out: &mut impl Write,
) -> Result<Vec<TranscriptEntry>> {
    let mut transcript = Vec::new();
    for line in input.lines() {
        let line = line?;
        let (response, quit) = session.handle_line(&line, out)?;
        if quit {
            break;
        }
        if !line.trim().is_empty() {
            transcript.push(TranscriptEntry { input: line.trim().to_string(), response });
        }
    }
    Ok(transcript)
}

pub fn repl_command(a: ReplArgs, config: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    let task: Task = a
        .task
        .or_else(|| config.task.clone())
        .ok_or_else(|| Error::Config("missing required --task".into()))?
        .parse()?;
    let seed = a.seed.or(config.seed).ok_or_else(|| Error::Config("missing required --seed".into()))?;
    let (lm, vocab) = load_base(&a.base)?;
    let side = match &a.side {
        Some(p) => Some(load_side(p, &a.base, lm.config.d)?.0),
        None => None,
    };
    if let (Some(net), task) = (&side, task) {
        if net.task() != task {
            return Err(Error::Config(format!(
                "side checkpoint is for the {} task, got --task {}",
                net.task().name(),
                task.name()
            )));
        }
    }
    let gen = GenerationConfig {
        top_k: a.top_k.or(config.top_k).unwrap_or(10),
        max_len: a.max_len.or(config.max_len).unwrap_or(50),
        seed,
    };

    if let Some(replay_path) = &a.replay {
        let text = fs::read_to_string(replay_path)?;
        let entries: Vec<TranscriptEntry> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<_>>()?;
        let mut session = ReplSession::new(&lm, side.as_ref(), &vocab, task, gen, seed);
        let mut sink = Vec::new();
        for (i, entry) in entries.iter().enumerate() {
            let (response, quit) = session.handle_line(&entry.input, &mut sink)?;
            if quit {
                break;
            }
            if response != entry.response {
                return Err(Error::invalid(format!(
                    "replay mismatch at turn {}: expected {:?}, got {:?}",
                    i + 1,
                    entry.response,
                    response
                )));
            }
        }
        println!("replay ok ({} entries)", entries.len());
        return Ok(());
    }

    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    writeln!(
        stdout,
        "sidenet repl ({} task, {}). :quit to exit, :act/:fact to steer.",
        task.name(),
        if side.is_some() { "controlled" } else { "base model" }
    )?;
    let mut session = ReplSession::new(&lm, side.as_ref(), &vocab, task, gen, seed);
    let transcript = run_session(&mut session, stdin.lock(), &mut stdout)?;

    if let Some(out_dir) = a.out.or_else(|| config.out.clone()) {
        fs::create_dir_all(&out_dir)?;
        let mut text = String::new();
        for entry in &transcript {
            text.push_str(&serde_json::to_string(entry)?);
            text.push('\n');
        }
        fs::write(out_dir.join("transcript.jsonl"), text)?;
        write_manifest(
            &out_dir,
            "repl",
            serde_json::json!({"task": task.name(), "turns": transcript.len()}),
            seed,
            started.elapsed().as_secs_f64(),
        )?;
        println!("transcript saved to {}", out_dir.join("transcript.jsonl").display());
    }
    Ok(())
}
