//! Decoding-cost benchmark: wall-clock seconds per emitted token over a
//! fixed set of 10 dialogue contexts, repeated and reported as the median.
//! Runs strictly single-threaded; model loading happens before the clock.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

/// One method under benchmark: decodes all given contexts and returns the
/// number of tokens it emitted.
pub struct BenchMethod<'a> {
    pub name: String,
    pub run: Box<dyn FnMut(&[Vec<Vec<usize>>]) -> Result<usize> + 'a>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchResult {
    pub name: String,
    pub seconds_per_token: f64,
    pub reps: Vec<f64>,
}

/// Lower median: the element at index (n-1)/2 of the sorted slice. With
/// three clean repetitions plus one slow outlier this still reports a clean
/// repetition.
fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[(sorted.len() - 1) / 2]
}

pub fn decoding_benchmark(
    methods: Vec<BenchMethod>,
    contexts: &[Vec<Vec<usize>>],
    repetitions: usize,
) -> Result<Vec<BenchResult>> {
    if contexts.len() != 10 {
        return Err(Error::invalid(format!(
            "decoding benchmark needs exactly 10 contexts, got {}",
            contexts.len()
        )));
    }
    if repetitions < 3 {
        return Err(Error::invalid("decoding benchmark needs at least 3 repetitions"));
    }
    let mut out = Vec::with_capacity(methods.len());
    for mut method in methods {
        let mut reps = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            let tokens = (method.run)(contexts)?;
            let elapsed = start.elapsed().as_secs_f64();
            if tokens == 0 {
                return Err(Error::invalid(format!("method '{}' emitted no tokens", method.name)));
            }
            reps.push(elapsed / tokens as f64);
        }
        out.push(BenchResult {
            name: method.name,
            seconds_per_token: median(&reps),
            reps,
        });
    }
    Ok(out)
}
