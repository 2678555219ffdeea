//! Numeric primitives of the decoder: feature maps, convolutions, batch
//! norm, activations, and content-aware x2 upsampling.

use crate::scalar::{cast, Scalar};

use super::params::{BatchNorm, Conv2d};

/// Channel-major feature map, `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![S::zero(); channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut S {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel as a contiguous `height * width` plane.
    #[inline]
    pub fn plane(&self, c: usize) -> &[S] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// Exact GELU: `0.5 * x * (1 + erf(x / sqrt(2)))`.
#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = cast::<S>(0.5);
    let inv_sqrt2 = cast::<S>(std::f64::consts::FRAC_1_SQRT_2);
    half * x * (S::one() + (x * inv_sqrt2).erf())
}

pub fn relu_inplace<S: Scalar>(data: &mut [S]) {
    for v in data {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: S = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inference batch norm, epsilon 1e-5, applied per channel in place.
pub fn batchnorm_inplace<S: Scalar>(map: &mut FeatureMap<S>, bn: &BatchNorm<S>) {
    assert_eq!(bn.gamma.len(), map.channels, "batch norm channel mismatch");
    let eps = cast::<S>(1e-5);
    let hw = map.height * map.width;
    for c in 0..map.channels {
        let scale = bn.gamma[c] / (bn.var[c] + eps).sqrt();
        let shift = bn.beta[c] - bn.mean[c] * scale;
        for v in &mut map.data[c * hw..(c + 1) * hw] {
            *v = *v * scale + shift;
        }
    }
}

/// `y = W x + b` for a batch of row vectors; `input` is `n x in_dim`
/// row-major, result is `n x out_dim`.
pub fn linear_batch<S: Scalar>(
    input: &[S],
    n: usize,
    layer: &super::params::Linear<S>,
) -> Vec<S> {
    assert_eq!(input.len(), n * layer.in_dim, "linear input size mismatch");
    let mut out = vec![S::zero(); n * layer.out_dim];
    S::gemm_nt(n, layer.in_dim, layer.out_dim, input, &layer.weight, &mut out);
    if !layer.bias.is_empty() {
        for row in out.chunks_exact_mut(layer.out_dim) {
            for (v, &b) in row.iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
    }
    out
}

/// Stride-1, zero-padded `k/2` convolution. Dense convolutions go through an
/// im2col GEMM in row strips (bounding scratch memory); depthwise ones use a
/// direct loop.
pub fn conv2d<S: Scalar>(input: &FeatureMap<S>, conv: &Conv2d<S>) -> FeatureMap<S> {
    assert_eq!(input.channels, conv.in_ch, "conv input channel mismatch");
    assert_eq!(conv.in_ch % conv.groups, 0);
    assert_eq!(conv.out_ch % conv.groups, 0);
    let mut out = if conv.groups == conv.in_ch && conv.out_ch == conv.in_ch {
        conv2d_depthwise(input, conv)
    } else {
        assert_eq!(conv.groups, 1, "only dense and depthwise convolutions are used");
        if conv.k == 1 {
            conv2d_pointwise(input, conv)
        } else {
            conv2d_im2col(input, conv)
        }
    };
    if !conv.bias.is_empty() {
        let hw = out.height * out.width;
        for c in 0..out.channels {
            let b = conv.bias[c];
            for v in &mut out.data[c * hw..(c + 1) * hw] {
                *v += b;
            }
        }
    }
    out
}

fn conv2d_pointwise<S: Scalar>(input: &FeatureMap<S>, conv: &Conv2d<S>) -> FeatureMap<S> {
    let hw = input.height * input.width;
    let mut out = FeatureMap::zeros(conv.out_ch, input.height, input.width);
    S::gemm_nn(conv.out_ch, conv.in_ch, hw, &conv.weight, &input.data, &mut out.data);
    out
}

fn conv2d_depthwise<S: Scalar>(input: &FeatureMap<S>, conv: &Conv2d<S>) -> FeatureMap<S> {
    let (h, w, k) = (input.height as isize, input.width as isize, conv.k as isize);
    let pad = k / 2;
    let mut out = FeatureMap::zeros(conv.out_ch, input.height, input.width);
    for c in 0..conv.out_ch {
        let kernel = &conv.weight[c * conv.k * conv.k..(c + 1) * conv.k * conv.k];
        let plane = input.plane(c);
        let out_plane = &mut out.data[c * (h * w) as usize..(c + 1) * (h * w) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut acc = S::zero();
                for ky in 0..k {
                    let sy = y + ky - pad;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x + kx - pad;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        acc += kernel[(ky * k + kx) as usize] * plane[(sy * w + sx) as usize];
                    }
                }
                out_plane[(y * w + x) as usize] = acc;
            }
        }
    }
    out
}

/// Scratch budget for one im2col strip, in scalars (~32 MB for f32).
const IM2COL_STRIP_SCALARS: usize = 8 << 20;

fn conv2d_im2col<S: Scalar>(input: &FeatureMap<S>, conv: &Conv2d<S>) -> FeatureMap<S> {
    let (h, w, k) = (input.height, input.width, conv.k);
    let pad = (k / 2) as isize;
    let patch = conv.in_ch * k * k;
    let rows_per_strip = (IM2COL_STRIP_SCALARS / (patch * w)).clamp(1, h);
    let mut out = FeatureMap::zeros(conv.out_ch, h, w);
    let mut cols = vec![S::zero(); patch * rows_per_strip * w];
    let mut strip_out = vec![S::zero(); conv.out_ch * rows_per_strip * w];
    let mut y0 = 0;
    while y0 < h {
        let rows = rows_per_strip.min(h - y0);
        let n = rows * w;
        // column p of `cols` holds the unrolled k x k x in_ch patch at output
        // pixel p; zero padding is materialized explicitly
        for c in 0..conv.in_ch {
            let plane = input.plane(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for ry in 0..rows {
                        let sy = (y0 + ry) as isize + ky as isize - pad;
                        let seg = &mut dst[ry * w..(ry + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            seg.fill(S::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dx = kx as isize - pad;
                        for (x, slot) in seg.iter_mut().enumerate() {
                            let sx = x as isize + dx;
                            *slot = if sx < 0 || sx >= w as isize {
                                S::zero()
                            } else {
                                src[sx as usize]
                            };
                        }
                    }
                }
            }
        }
        S::gemm_nn(
            conv.out_ch,
            patch,
            n,
            &conv.weight,
            &cols[..patch * n],
            &mut strip_out[..conv.out_ch * n],
        );
        let hw = h * w;
        for c in 0..conv.out_ch {
            out.data[c * hw + y0 * w..c * hw + (y0 + rows) * w]
                .copy_from_slice(&strip_out[c * n..(c + 1) * n]);
        }
        y0 += rows;
    }
    out
}

/// Content-aware x2 upsampling. A pointwise generator predicts per-output
/// offsets (scaled by 0.25) around the half-pixel base grid
/// `src = (dst + 0.5) / 2 - 0.5`; sampling is bilinear with edge clamping.
/// With a zero generator this is exactly bilinear x2 upsampling.
pub fn dysample2x<S: Scalar>(input: &FeatureMap<S>, offset_gen: &Conv2d<S>) -> FeatureMap<S> {
    assert_eq!(offset_gen.out_ch, 8, "offset generator must emit 2 * 2^2 channels");
    assert_eq!(offset_gen.k, 1);
    let offsets = conv2d(input, offset_gen);
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (2 * h, 2 * w);
    let quarter = cast::<S>(0.25);
    let half = cast::<S>(0.5);
    let two = cast::<S>(2.0);
    let mut out = FeatureMap::zeros(input.channels, oh, ow);
    let mut sx_row = vec![S::zero(); ow];
    let mut sy_row = vec![S::zero(); ow];
    for oy in 0..oh {
        let (y, dy) = (oy / 2, oy % 2);
        for ox in 0..ow {
            let (x, dx) = (ox / 2, ox % 2);
            // pixel-shuffle layout: channel g * 4 + (dy * 2 + dx), g = 0 for
            // the x offset and g = 1 for the y offset
            let idx = dy * 2 + dx;
            let off_x = offsets.at(idx, y, x) * quarter;
            let off_y = offsets.at(4 + idx, y, x) * quarter;
            let base_x = (cast::<S>(ox as f64) + half) / two - half;
            let base_y = (cast::<S>(oy as f64) + half) / two - half;
            sx_row[ox] = base_x + off_x;
            sy_row[ox] = base_y + off_y;
        }
        for c in 0..input.channels {
            let plane = input.plane(c);
            for ox in 0..ow {
                out.data[(c * oh + oy) * ow + ox] =
                    bilinear_clamped(plane, h, w, sy_row[ox], sx_row[ox]);
            }
        }
    }
    out
}

/// Bilinear sample with coordinates clamped to the valid range (edge clamp).
fn bilinear_clamped<S: Scalar>(plane: &[S], h: usize, w: usize, sy: S, sx: S) -> S {
    let max_x = cast::<S>((w - 1) as f64);
    let max_y = cast::<S>((h - 1) as f64);
    let sx = sx.max(S::zero()).min(max_x);
    let sy = sy.max(S::zero()).min(max_y);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let x0 = x0.to_usize().unwrap().min(w - 1);
    let y0 = y0.to_usize().unwrap().min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let one = S::one();
    let v00 = plane[y0 * w + x0];
    let v01 = plane[y0 * w + x1];
    let v10 = plane[y1 * w + x0];
    let v11 = plane[y1 * w + x1];
    (one - fy) * ((one - fx) * v00 + fx * v01) + fy * ((one - fx) * v10 + fx * v11)
}
