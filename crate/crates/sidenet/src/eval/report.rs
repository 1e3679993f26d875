//! Metrics reporting: one row per method, JSON plus a plain-text table with
//! the fixed column order Controllability | PPL | BLEU-1 | BLEU-2 |
//! METEOR-lite | s/tok. Inapplicable cells (perplexity of decode-time
//! methods) are null in JSON and "-" in the table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Base,
    Finetune,
    Side,
    Fudge,
    Pplm,
}

impl MethodKind {
    /// Decode-time methods never update a generative model, so their model
    /// perplexity is the base network's and is not reported.
    pub fn supports_ppl(self) -> bool {
        matches!(self, MethodKind::Base | MethodKind::Finetune | MethodKind::Side)
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Base => "base",
            MethodKind::Finetune => "finetune",
            MethodKind::Side => "side",
            MethodKind::Fudge => "fudge",
            MethodKind::Pplm => "pplm",
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(MethodKind::Base),
            "finetune" => Ok(MethodKind::Finetune),
            "side" => Ok(MethodKind::Side),
            "fudge" => Ok(MethodKind::Fudge),
            "pplm" => Ok(MethodKind::Pplm),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (base|finetune|side|fudge|pplm)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    /// Mean cosine similarity with the knowledge document (knowledge task).
    pub similarity: Option<f64>,
    /// Act-classifier accuracy (label task).
    pub accuracy: Option<f64>,
    pub ppl: Option<f64>,
    pub bleu1: Option<f64>,
    pub bleu2: Option<f64>,
    pub meteor: Option<f64>,
    pub seconds_per_token: Option<f64>,
    /// Examples whose similarity was flagged (empty after filtering).
    #[serde(default)]
    pub flagged: usize,
}

impl MetricsReport {
    pub fn new(method: impl Into<String>) -> Self {
        MetricsReport {
            method: method.into(),
            similarity: None,
            accuracy: None,
            ppl: None,
            bleu1: None,
            bleu2: None,
            meteor: None,
            seconds_per_token: None,
            flagged: 0,
        }
    }

    pub fn controllability(&self) -> Option<f64> {
        self.similarity.or(self.accuracy)
    }

    /// Every present value must be finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("similarity", self.similarity),
            ("accuracy", self.accuracy),
            ("ppl", self.ppl),
            ("bleu1", self.bleu1),
            ("bleu2", self.bleu2),
            ("meteor", self.meteor),
            ("seconds_per_token", self.seconds_per_token),
        ] {
            if let Some(x) = v {
                if !x.is_finite() || x < -1.0 {
                    return Err(Error::invalid(format!("{name} = {x} in report '{}'", self.method)));
                }
            }
        }
        Ok(())
    }
}

fn cell(v: Option<f64>, width: usize, precision: usize) -> String {
    match v {
        Some(x) => format!("{x:>width$.precision$}"),
        None => format!("{:>width$}", "-"),
    }
}

/// Deterministic plain-text table in the fixed column order.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>15} {:>9} {:>8} {:>8} {:>12} {:>10}\n",
        "Method", "Controllability", "PPL", "BLEU-1", "BLEU-2", "METEOR-lite", "s/tok"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<12} {} {} {} {} {} {}\n",
            r.method,
            cell(r.controllability(), 15, 4),
            cell(r.ppl, 9, 2),
            cell(r.bleu1, 8, 2),
            cell(r.bleu2, 8, 2),
            cell(r.meteor, 12, 4),
            cell(r.seconds_per_token, 10, 4),
        ));
    }
    out
}

pub fn to_json(reports: &[MetricsReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

pub fn from_json(text: &str) -> Result<Vec<MetricsReport>> {
    Ok(serde_json::from_str(text)?)
}
