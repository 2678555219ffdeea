//! Wall-clock latency benchmark for the decoder forward pass.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::init_params;
use super::tokens::synthetic_tokens;
use super::{forward, DecoderConfig};

/// Mean and sample standard deviation over the timed runs, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchResult {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub runs: usize,
}

impl fmt::Display for BenchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2} ms", self.mean_ms, self.std_ms)
    }
}

/// Times `runs` forward passes on seeded synthetic tokens after one untimed
/// warm-up pass.
pub fn bench_forward<S: Scalar>(
    config: &DecoderConfig,
    h_px: usize,
    w_px: usize,
    runs: usize,
    seed: u64,
) -> Result<BenchResult> {
    if runs == 0 {
        return Err(Error::Config("benchmark needs at least one run".into()));
    }
    if h_px % config.patch != 0 || w_px % config.patch != 0 {
        return Err(Error::Config(format!(
            "input {h_px}x{w_px} is not divisible by patch size {}",
            config.patch
        )));
    }
    let grid = (h_px / config.patch, w_px / config.patch);
    let params = init_params::<S>(config, seed);
    let set = synthetic_tokens::<S>(config, grid, seed.wrapping_add(1));
    forward(config, &params, &set)?; // warm-up
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = forward(config, &params, &set)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(&out.data[0]);
    }
    let mean = samples.iter().sum::<f64>() / runs as f64;
    let var = if runs > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (runs - 1) as f64
    } else {
        0.0
    };
    Ok(BenchResult { mean_ms: mean, std_ms: var.sqrt(), runs })
}
