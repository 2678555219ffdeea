//! Learnable arrays of the decoder, their initialization, and the binary
//! parameter-file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

use super::DecoderConfig;

/// Dense layer, weight row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// 2-D convolution, stride 1, zero padding `k/2`. Weight layout is
/// `out_ch x (in_ch/groups) x k x k`; `bias` may be empty (convolutions that
/// feed a batch norm carry no bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub groups: usize,
}

/// Inference-mode batch norm with stored statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// Residual depthwise block restoring local continuity after token reshape.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeParams<S> {
    pub dw: Conv2d<S>,
    pub bn: BatchNorm<S>,
}

/// One x2 dynamic-upsampling block: offset generator, dense conv, norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DySampleBlock<S> {
    /// Pointwise conv producing `2 * s^2` offset channels (s = 2).
    pub offset_gen: Conv2d<S>,
    pub conv: Conv2d<S>,
    pub bn: BatchNorm<S>,
}

/// Dense 3x3 refinement applied after each x4 stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineBlock<S> {
    pub conv: Conv2d<S>,
    pub bn: BatchNorm<S>,
}

/// The full x16 upsampler: two x4 stages of two blocks each, plus a
/// refinement after each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsamplerParams<S> {
    pub blocks: [DySampleBlock<S>; 4],
    pub refines: [RefineBlock<S>; 2],
}

/// Output head: 3x3 conv to the hidden width, pointwise conv to one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<S> {
    pub conv3: Conv2d<S>,
    pub conv1: Conv2d<S>,
}

/// Every learnable array of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<S> {
    pub projections: Vec<Linear<S>>,
    pub fusion_logits: Vec<S>,
    pub sde: SdeParams<S>,
    pub upsampler: UpsamplerParams<S>,
    pub head: HeadParams<S>,
}

impl<S: Scalar> DecoderParams<S> {
    /// All parameter arrays in canonical (file) order.
    pub fn arrays(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = Vec::new();
        for p in &self.projections {
            out.push(&p.weight);
            out.push(&p.bias);
        }
        out.push(&self.fusion_logits);
        out.push(&self.sde.dw.weight);
        push_bn(&mut out, &self.sde.bn);
        for b in &self.upsampler.blocks {
            out.push(&b.offset_gen.weight);
            out.push(&b.offset_gen.bias);
            out.push(&b.conv.weight);
            push_bn(&mut out, &b.bn);
        }
        for r in &self.upsampler.refines {
            out.push(&r.conv.weight);
            push_bn(&mut out, &r.bn);
        }
        out.push(&self.head.conv3.weight);
        out.push(&self.head.conv3.bias);
        out.push(&self.head.conv1.weight);
        out.push(&self.head.conv1.bias);
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut out: Vec<&mut Vec<S>> = Vec::new();
        for p in &mut self.projections {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        out.push(&mut self.fusion_logits);
        out.push(&mut self.sde.dw.weight);
        out.push(&mut self.sde.bn.gamma);
        out.push(&mut self.sde.bn.beta);
        out.push(&mut self.sde.bn.mean);
        out.push(&mut self.sde.bn.var);
        for b in &mut self.upsampler.blocks {
            out.push(&mut b.offset_gen.weight);
            out.push(&mut b.offset_gen.bias);
            out.push(&mut b.conv.weight);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
            out.push(&mut b.bn.mean);
            out.push(&mut b.bn.var);
        }
        for r in &mut self.upsampler.refines {
            out.push(&mut r.conv.weight);
            out.push(&mut r.bn.gamma);
            out.push(&mut r.bn.beta);
            out.push(&mut r.bn.mean);
            out.push(&mut r.bn.var);
        }
        out.push(&mut self.head.conv3.weight);
        out.push(&mut self.head.conv3.bias);
        out.push(&mut self.head.conv1.weight);
        out.push(&mut self.head.conv1.bias);
        out
    }

    /// Brute-force parameter count: the sum of every array length.
    pub fn num_params(&self) -> u64 {
        self.arrays().iter().map(|a| a.len() as u64).sum()
    }
}

fn push_bn<'a, S>(out: &mut Vec<&'a [S]>, bn: &'a BatchNorm<S>) {
    out.push(&bn.gamma);
    out.push(&bn.beta);
    out.push(&bn.mean);
    out.push(&bn.var);
}

fn identity_bn<S: Scalar>(ch: usize) -> BatchNorm<S> {
    BatchNorm {
        gamma: vec![S::one(); ch],
        beta: vec![S::zero(); ch],
        mean: vec![S::zero(); ch],
        var: vec![S::one(); ch],
    }
}

fn uniform_fan_in<S: Scalar>(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| cast(rng.random::<f64>() * 2.0 * bound - bound))
        .collect()
}

fn init_conv<S: Scalar>(
    rng: &mut ChaCha8Rng,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    groups: usize,
    with_bias: bool,
) -> Conv2d<S> {
    let per_group_in = in_ch / groups;
    let fan_in = per_group_in * k * k;
    Conv2d {
        weight: uniform_fan_in(rng, out_ch * per_group_in * k * k, fan_in),
        bias: if with_bias { vec![S::zero(); out_ch] } else { Vec::new() },
        in_ch,
        out_ch,
        k,
        groups,
    }
}

fn zero_offset_gen<S: Scalar>(width: usize) -> Conv2d<S> {
    // zero weights and bias make the initial upsampling exactly bilinear
    Conv2d {
        weight: vec![S::zero(); 8 * width],
        bias: vec![S::zero(); 8],
        in_ch: width,
        out_ch: 8,
        k: 1,
        groups: 1,
    }
}

/// Seeded parameter initialization. Fusion logits start at zero (uniform
/// softmax), offset generators at zero (bilinear upsampling), weights are
/// uniform over +-sqrt(6/fan_in), batch norms are identity.
pub fn init_params<S: Scalar>(config: &DecoderConfig, seed: u64) -> DecoderParams<S> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let w = config.width;
    let projections = (0..4)
        .map(|_| {
            let in_dim = 2 * config.d_enc;
            Linear {
                weight: uniform_fan_in(rng, w * in_dim, in_dim),
                bias: vec![S::zero(); w],
                in_dim,
                out_dim: w,
            }
        })
        .collect();
    let sde = SdeParams {
        dw: init_conv(rng, w, w, 3, w, false),
        bn: identity_bn(w),
    };
    let blocks = std::array::from_fn(|_| DySampleBlock {
        offset_gen: zero_offset_gen(w),
        conv: init_conv(rng, w, w, 3, 1, false),
        bn: identity_bn(w),
    });
    let refines = std::array::from_fn(|_| RefineBlock {
        conv: init_conv(rng, w, w, 3, 1, false),
        bn: identity_bn(w),
    });
    let head = HeadParams {
        conv3: init_conv(rng, w, config.head_mid, 3, 1, true),
        conv1: init_conv(rng, config.head_mid, 1, 1, 1, true),
    };
    DecoderParams {
        projections,
        fusion_logits: vec![S::zero(); 4],
        sde,
        upsampler: UpsamplerParams { blocks, refines },
        head,
    }
}

const PARAMS_MAGIC: &[u8; 4] = b"SDTP";
const PARAMS_VERSION: u16 = 1;

/// Writes parameters in the binary format (little-endian, f32 payload).
pub fn write_params<S: Scalar>(
    params: &DecoderParams<S>,
    config: &DecoderConfig,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(PARAMS_MAGIC).map_err(io)?;
    w.write_all(&PARAMS_VERSION.to_le_bytes()).map_err(io)?;
    for v in [
        config.d_enc as u32,
        config.width as u32,
        config.patch as u32,
        config.head_mid as u32,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for array in params.arrays() {
        for &v in array {
            w.write_all(&(v.to_f64().unwrap() as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads parameters written by [`write_params`], checking the header against
/// the expected configuration.
pub fn read_params<S: Scalar>(config: &DecoderConfig, path: &Path) -> Result<DecoderParams<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != PARAMS_MAGIC {
        return Err(Error::Format(format!("{}: bad params magic", path.display())));
    }
    let version = read_u16(&mut r, path)?;
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported params version {version}",
            path.display()
        )));
    }
    let header = [
        read_u32(&mut r, path)?,
        read_u32(&mut r, path)?,
        read_u32(&mut r, path)?,
        read_u32(&mut r, path)?,
    ];
    let expected = [
        config.d_enc as u32,
        config.width as u32,
        config.patch as u32,
        config.head_mid as u32,
    ];
    if header != expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: params header {header:?} does not match config {expected:?}",
            path.display()
        )));
    }
    // template gives every array its expected length
    let mut params = init_params::<S>(config, 0);
    for array in params.arrays_mut() {
        for slot in array.iter_mut() {
            let mut bytes = [0u8; 4];
            r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
            *slot = cast(f32::from_le_bytes(bytes) as f64);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok(params)
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}
