//! Single-path transformer-to-depth decoder: a pure-numeric forward pass
//! over dumped encoder tokens, with analytic parameter/FLOP counters and a
//! latency benchmark.
//!
//! Pipeline: per-layer projection of `concat(token, cls)` with GELU,
//! softmax-weighted fusion of the four tapped layers, reshape to a feature
//! map, a residual depthwise block, a x16 upsampler built from content-aware
//! x2 blocks and dense refinements, and a two-conv head producing one
//! non-negative channel per pixel.

pub mod bench;
pub mod count;
pub mod ops;
pub mod params;
pub mod tokens;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use ops::{batchnorm_inplace, conv2d, dysample2x, gelu, linear_batch, relu_inplace, softmax, FeatureMap};
use params::{DecoderParams, DySampleBlock, Linear, RefineBlock};
use tokens::TokenSet;

/// Decoder hyperparameters. `layer_indices` are the encoder layers tapped
/// for decoding; `encoder_blocks` only feeds the optional encoder FLOP
/// estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderConfig {
    pub d_enc: usize,
    pub width: usize,
    pub patch: usize,
    pub head_mid: usize,
    pub layer_indices: [usize; 4],
    pub encoder_blocks: usize,
}

impl DecoderConfig {
    /// S configuration (384-dim encoder).
    pub fn small() -> Self {
        DecoderConfig {
            d_enc: 384,
            width: 256,
            patch: 16,
            head_mid: 128,
            layer_indices: [2, 5, 8, 11],
            encoder_blocks: 12,
        }
    }

    /// B configuration (768-dim encoder).
    pub fn base() -> Self {
        DecoderConfig { d_enc: 768, ..Self::small() }
    }

    /// L configuration (1024-dim encoder, 24 blocks).
    pub fn large() -> Self {
        DecoderConfig {
            d_enc: 1024,
            width: 256,
            patch: 16,
            head_mid: 128,
            layer_indices: [4, 11, 17, 23],
            encoder_blocks: 24,
        }
    }

    /// Named preset lookup ("s", "b", or "l").
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "s" => Ok(Self::small()),
            "b" => Ok(Self::base()),
            "l" => Ok(Self::large()),
            other => Err(Error::Config(format!(
                "unknown decoder preset '{other}' (expected s, b, or l)"
            ))),
        }
    }

    /// Miniature configuration keeping unit tests fast.
    pub fn tiny_for_tests() -> Self {
        DecoderConfig {
            d_enc: 8,
            width: 8,
            patch: 16,
            head_mid: 4,
            layer_indices: [0, 1, 2, 3],
            encoder_blocks: 4,
        }
    }
}

/// Projects one layer's tokens: each spatial token is concatenated with the
/// layer's class token, mapped through the dense layer, and passed through
/// GELU. Returns `n x width` row-major.
pub fn project_layer<S: Scalar>(
    layer: &tokens::TokenLayer<S>,
    n: usize,
    dim: usize,
    proj: &Linear<S>,
) -> Vec<S> {
    let mut concat = vec![S::zero(); n * 2 * dim];
    for (i, token) in layer.tokens.chunks_exact(dim).enumerate() {
        concat[i * 2 * dim..i * 2 * dim + dim].copy_from_slice(token);
        concat[i * 2 * dim + dim..(i + 1) * 2 * dim].copy_from_slice(&layer.cls);
    }
    let mut out = linear_batch(&concat, n, proj);
    for v in &mut out {
        *v = gelu(*v);
    }
    out
}

/// Softmax-weighted sum of the four projected layers.
pub fn fuse<S: Scalar>(projected: &[Vec<S>], logits: &[S]) -> Vec<S> {
    assert_eq!(projected.len(), logits.len());
    let weights = softmax(logits);
    let mut out = vec![S::zero(); projected[0].len()];
    for (layer, &w) in projected.iter().zip(&weights) {
        for (o, &v) in out.iter_mut().zip(layer) {
            *o += w * v;
        }
    }
    out
}

/// Reshapes `n x width` row-major tokens (row-major over the grid) into a
/// channel-major feature map.
pub fn tokens_to_map<S: Scalar>(tokens: &[S], width: usize, grid: (usize, usize)) -> FeatureMap<S> {
    let (gh, gw) = grid;
    assert_eq!(tokens.len(), gh * gw * width);
    let mut map = FeatureMap::zeros(width, gh, gw);
    for (i, row) in tokens.chunks_exact(width).enumerate() {
        let (y, x) = (i / gw, i % gw);
        for (c, &v) in row.iter().enumerate() {
            *map.at_mut(c, y, x) = v;
        }
    }
    map
}

/// Inverse of [`tokens_to_map`].
pub fn map_to_tokens<S: Scalar>(map: &FeatureMap<S>) -> Vec<S> {
    let mut out = vec![S::zero(); map.channels * map.height * map.width];
    for y in 0..map.height {
        for x in 0..map.width {
            let i = y * map.width + x;
            for c in 0..map.channels {
                out[i * map.channels + c] = map.at(c, y, x);
            }
        }
    }
    out
}

/// Residual depthwise enhancement: `relu(x + bn(dwconv3x3(x)))`.
pub fn spatial_enhance<S: Scalar>(map: &FeatureMap<S>, sde: &params::SdeParams<S>) -> FeatureMap<S> {
    let mut branch = conv2d(map, &sde.dw);
    batchnorm_inplace(&mut branch, &sde.bn);
    for (b, &x) in branch.data.iter_mut().zip(&map.data) {
        *b += x;
    }
    relu_inplace(&mut branch.data);
    branch
}

fn dysample_block<S: Scalar>(map: &FeatureMap<S>, block: &DySampleBlock<S>) -> FeatureMap<S> {
    let up = dysample2x(map, &block.offset_gen);
    let mut out = conv2d(&up, &block.conv);
    batchnorm_inplace(&mut out, &block.bn);
    relu_inplace(&mut out.data);
    out
}

fn refine_block<S: Scalar>(map: &FeatureMap<S>, block: &RefineBlock<S>) -> FeatureMap<S> {
    let mut out = conv2d(map, &block.conv);
    batchnorm_inplace(&mut out, &block.bn);
    relu_inplace(&mut out.data);
    out
}

/// x16 upsampler: two x4 stages (two x2 blocks each), each followed by a
/// dense refinement.
pub fn upsample16<S: Scalar>(
    map: &FeatureMap<S>,
    up: &params::UpsamplerParams<S>,
) -> FeatureMap<S> {
    let x = dysample_block(map, &up.blocks[0]);
    let x = dysample_block(&x, &up.blocks[1]);
    let x = refine_block(&x, &up.refines[0]);
    let x = dysample_block(&x, &up.blocks[2]);
    let x = dysample_block(&x, &up.blocks[3]);
    refine_block(&x, &up.refines[1])
}

/// Output head: 3x3 conv + ReLU to the hidden width, pointwise conv + ReLU
/// to a single non-negative channel.
pub fn head<S: Scalar>(map: &FeatureMap<S>, head: &params::HeadParams<S>) -> FeatureMap<S> {
    let mut mid = conv2d(map, &head.conv3);
    relu_inplace(&mut mid.data);
    let mut out = conv2d(&mid, &head.conv1);
    relu_inplace(&mut out.data);
    out
}

/// Full forward pass: tokens in, one-channel `16 gh x 16 gw` map out.
pub fn forward<S: Scalar>(
    config: &DecoderConfig,
    params: &DecoderParams<S>,
    set: &TokenSet<S>,
) -> Result<FeatureMap<S>> {
    set.validate(config)?;
    let n = set.n_tokens();
    let projected: Vec<Vec<S>> = set
        .layers
        .iter()
        .zip(&params.projections)
        .map(|(layer, proj)| project_layer(layer, n, set.dim, proj))
        .collect();
    let fused = fuse(&projected, &params.fusion_logits);
    let map = tokens_to_map(&fused, config.width, set.grid);
    let map = spatial_enhance(&map, &params.sde);
    let map = upsample16(&map, &params.upsampler);
    let out = head(&map, &params.head);
    debug_assert_eq!(out.channels, 1);
    debug_assert_eq!((out.height, out.width), (16 * set.grid.0, 16 * set.grid.1));
    Ok(out)
}
