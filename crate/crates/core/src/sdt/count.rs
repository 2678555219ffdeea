//! Closed-form parameter and FLOP counters for the decoder (and an optional
//! encoder estimate). FLOPs count multiply-accumulates as 2 operations.

use crate::error::{Error, Result};

use super::DecoderConfig;

/// Analytic parameter count; must agree exactly with
/// [`DecoderParams::num_params`](super::params::DecoderParams::num_params).
pub fn count_params(config: &DecoderConfig) -> u64 {
    let w = config.width as u64;
    let d = config.d_enc as u64;
    let mid = config.head_mid as u64;
    let projections = 4 * (w * 2 * d + w);
    let fusion = 4;
    let sde = 9 * w + 4 * w;
    let dysample_blocks = 4 * ((8 * w + 8) + 9 * w * w + 4 * w);
    let refines = 2 * (9 * w * w + 4 * w);
    let head = (9 * w * mid + mid) + (mid + 1);
    projections + fusion + sde + dysample_blocks + refines + head
}

/// What the FLOP counter includes beyond the decoder itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlopsOptions {
    /// Add a standard ViT encoder estimate (patch embed + per-block linears).
    pub include_encoder: bool,
    /// Also charge the quadratic attention term `4 n^2 D` per block. Off by
    /// default so decoder-dominated counts scale linearly with pixel count.
    pub attention_quadratic: bool,
}

/// Forward-pass FLOPs for an `h_px x w_px` input. Both sides must be
/// divisible by the patch size.
pub fn count_flops(
    config: &DecoderConfig,
    h_px: usize,
    w_px: usize,
    opts: FlopsOptions,
) -> Result<f64> {
    if config.patch == 0 || h_px % config.patch != 0 || w_px % config.patch != 0 {
        return Err(Error::Config(format!(
            "input {h_px}x{w_px} is not divisible by patch size {}",
            config.patch
        )));
    }
    if config.width == 0 {
        return Ok(0.0);
    }
    let np = (h_px / config.patch) as f64 * (w_px / config.patch) as f64;
    let w = config.width as f64;
    let d = config.d_enc as f64;
    let mid = config.head_mid as f64;

    // conv FLOPs: 2 * out_pixels * out_ch * (in_ch / groups) * k^2
    let projections = 4.0 * 2.0 * np * (2.0 * d) * w;
    let fusion = 2.0 * 4.0 * np * w;
    let sde_dw = 2.0 * np * w * 9.0;
    // x2 blocks: offset generator (pointwise, 8 outputs) at the input
    // resolution, dense 3x3 at the doubled resolution
    let mut dysample = 0.0;
    let mut n_in = np;
    for _ in 0..4 {
        dysample += 2.0 * n_in * w * 8.0; // offset generator
        n_in *= 4.0;
        dysample += 2.0 * n_in * w * w * 9.0; // dense conv after upsampling
    }
    let refines = 2.0 * 16.0 * np * w * w * 9.0 + 2.0 * 256.0 * np * w * w * 9.0;
    let head = 2.0 * 256.0 * np * w * mid * 9.0 + 2.0 * 256.0 * np * mid;
    let mut total = projections + fusion + sde_dw + dysample + refines + head;

    if opts.include_encoder {
        let n = np + 1.0; // spatial tokens plus the class token
        let patch_embed = 2.0 * np * 3.0 * (config.patch * config.patch) as f64 * d;
        // per block: qkv + output projections (8 n D^2) and a 4x MLP (16 n D^2)
        let mut per_block = 24.0 * n * d * d;
        if opts.attention_quadratic {
            per_block += 4.0 * n * n * d;
        }
        total += patch_embed + config.encoder_blocks as f64 * per_block;
    }
    Ok(total)
}
