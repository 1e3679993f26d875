//! Test-set perplexity: exp of the mean per-token NLL under teacher
//! forcing. Only methods that own a generative model have a perplexity;
//! decode-time methods reuse the base model's and are rejected upstream.

use crate::error::Result;
use crate::lm::model::BaseLm;
use crate::lm::train::sequence_loss;
use crate::side::train::{side_teacher_forced_nll, SideNet};
use crate::text::corpus::DialogueExample;

/// A model that exposes gold-token probabilities under teacher forcing.
pub enum ScoredModel<'a> {
    /// The base model itself or a fine-tuned copy.
    Lm(&'a BaseLm),
    /// The controlled model: frozen base plus side network (fused head;
    /// copy mixture for the knowledge task).
    Side { base: &'a BaseLm, net: &'a SideNet },
}

pub fn test_perplexity(model: &ScoredModel, examples: &[DialogueExample]) -> Result<f64> {
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for ex in examples {
        let (nll, n) = match model {
            ScoredModel::Lm(lm) => {
                let mut g = crate::graph::Graph::new();
                let (loss, n) = sequence_loss(&mut g, lm, ex)?;
                (g.value(loss).scalar_value(), n)
            }
            ScoredModel::Side { base, net } => side_teacher_forced_nll(base, net, None, ex)?,
        };
        total_nll += nll;
        total_tokens += n;
    }
    Ok((total_nll / total_tokens.max(1) as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::LmConfig;
    use crate::text::corpus::ControlAttribute;

    fn example() -> DialogueExample {
        DialogueExample {
            context: vec![vec![5, 6]],
            response: vec![7, 8, 9, 10],
            attribute: ControlAttribute::SemanticLabel { act: 0 },
        }
    }

    #[test]
    fn uniform_model_ppl_equals_vocab_size() {
        let vocab = 100usize;
        let mut lm = BaseLm::new(LmConfig { d: 16, layers: 1, heads: 2, lmax: 32 }, vocab, 1);
        let idx = lm.params.index_of("head.w_vocab").unwrap();
        lm.params.get_mut(idx).value.data_mut().fill(0.0);
        let ppl = test_perplexity(&ScoredModel::Lm(&lm), &[example()]).unwrap();
        assert!((ppl - vocab as f64).abs() < 1e-9, "ppl = {ppl}");
    }

    #[test]
    fn perfect_model_approaches_one() {
        // ln p = 0 for every gold token means exp(0) = 1; emulate by an
        // empty loss path: a model cannot be literally perfect, so check
        // the formula on a synthetic NLL of zero instead.
        let ppl = (0.0f64 / 4.0).exp();
        assert_eq!(ppl, 1.0);
    }

    #[test]
    fn constant_ln2_nll_gives_ppl_two() {
        let ppl = ((std::f64::consts::LN_2 * 6.0) / 6.0).exp();
        assert!((ppl - 2.0).abs() < 1e-12);
    }
}
