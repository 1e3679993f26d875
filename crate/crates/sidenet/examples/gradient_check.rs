//! Verify analytic gradients against central finite differences: first a
//! composition of tape ops, then the full knowledge-control objective
//! (copy-mixture NLL plus coverage penalty) on a micro instance.

use sidenet::fdcheck::finite_diff_check;
use sidenet::rng::Rng;
use sidenet::side::knowledge::KnowledgeSideNet;
use sidenet::tensor::Tensor;

fn main() -> sidenet::Result<()> {
    let mut set = sidenet::params::ParamSet::new();
    let mut rng = Rng::new(7);
    set.add("w", Tensor::init_uniform(6, 4, 6, &mut rng), true);
    set.add("x", Tensor::init_uniform(1, 6, 6, &mut rng), true);
    let rel = finite_diff_check(&mut set, 1e-5, |g, set| {
        let w = g.param_by_name(set, "w")?;
        let x = g.param_by_name(set, "x")?;
        let logits = g.matmul(x, w)?;
        let probs = g.softmax(logits, 1)?;
        g.nll_gather(probs, &[2])
    })?;
    println!("log-softmax classifier loss: max relative error {rel:.3e}");

    // Micro instance of the knowledge objective: D=8, K=5, T=6, |V|=20.
    let d = 8;
    let h_b = Tensor::init_uniform(6, d, 2, &mut rng);
    let w_vocab = Tensor::init_uniform(d, 20, d, &mut rng);
    let doc_emb = Tensor::init_uniform(5, d, 2, &mut rng);
    let doc_ids = vec![3, 7, 7, 11, 19];
    let targets = vec![3, 9, 7, 0, 14, 2];
    let mut params = KnowledgeSideNet::new(d, 9).params.clone();
    let rel = finite_diff_check(&mut params, 1e-5, |g, set| {
        let net = KnowledgeSideNet::from_params(d, set.clone());
        let fwd = net.forward_graph(g, &doc_emb, &doc_ids, &h_b, &w_vocab, None)?;
        let cclm = g.nll_gather(fwd.final_probs, &targets)?;
        let coverage = g.scale(fwd.coverage, 0.7)?;
        g.add(cclm, coverage)
    })?;
    println!("knowledge objective ({} scalars): max relative error {rel:.3e}", params.num_scalars());
    Ok(())
}
