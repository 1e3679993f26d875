//! Simplified METEOR: exact-match unigram alignment only (no stemming or
//! synonymy), recall-weighted harmonic mean, and the chunk fragmentation
//! penalty. Named meteor_lite everywhere so nobody mistakes it for the full
//! metric.

/// Align hypothesis tokens to unused identical reference tokens, preferring
/// the continuation of the current chunk, then the leftmost unused
/// occurrence. Returns (matches, chunks).
fn align(hyp: &[String], reference: &[String]) -> (usize, usize) {
    let mut used = vec![false; reference.len()];
    let mut matches = 0usize;
    let mut chunks = 0usize;
    let mut prev_ref: Option<usize> = None;
    for tok in hyp {
        // Prefer the reference position that extends the current chunk.
        let continuation = prev_ref
            .map(|p| p + 1)
            .filter(|&p| p < reference.len() && !used[p] && reference[p] == *tok);
        let pos = continuation.or_else(|| {
            reference
                .iter()
                .enumerate()
                .find(|(i, r)| !used[*i] && **r == *tok)
                .map(|(i, _)| i)
        });
        match pos {
            Some(p) => {
                used[p] = true;
                matches += 1;
                let extends = prev_ref.is_some() && prev_ref == p.checked_sub(1);
                if !extends {
                    chunks += 1;
                }
                prev_ref = Some(p);
            }
            None => prev_ref = None,
        }
    }
    (matches, chunks)
}

/// meteor_lite in [0, 1]: `F_mean = 10PR / (R + 9P)`,
/// `penalty = 0.5 * (chunks / matches)^3`, score `F_mean * (1 - penalty)`.
/// Zero matches score 0.
pub fn meteor_lite(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (matches, chunks) = align(hypothesis, reference);
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / hypothesis.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    f_mean * (1.0 - penalty)
}
