//! Naive unoptimized decoder forward oracle: nested loops only, no GEMM, no
//! reuse of library convolution or linear code.

use depthkit::sdt::params::{BatchNorm, Conv2d, DecoderParams, DySampleBlock, RefineBlock};
use depthkit::sdt::tokens::TokenSet;
use depthkit::sdt::DecoderConfig;

pub type Map = Vec<Vec<Vec<f64>>>; // [channel][y][x]

fn conv(input: &Map, p: &Conv2d<f64>) -> Map {
    let (h, w) = (input[0].len(), input[0][0].len());
    let k = p.k as isize;
    let pad = k / 2;
    let per_group_in = p.in_ch / p.groups;
    let per_group_out = p.out_ch / p.groups;
    let mut out = vec![vec![vec![0.0; w]; h]; p.out_ch];
    for oc in 0..p.out_ch {
        let g = oc / per_group_out;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = if p.bias.is_empty() { 0.0 } else { p.bias[oc] };
                for icg in 0..per_group_in {
                    let ic = g * per_group_in + icg;
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y + ky - pad;
                            let sx = x + kx - pad;
                            if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let wgt = p.weight
                                [((oc * per_group_in + icg) * p.k + ky as usize) * p.k + kx as usize];
                            acc += wgt * input[ic][sy as usize][sx as usize];
                        }
                    }
                }
                out[oc][y as usize][x as usize] = acc;
            }
        }
    }
    out
}

fn bn(input: &Map, p: &BatchNorm<f64>) -> Map {
    let mut out = input.clone();
    for (c, plane) in out.iter_mut().enumerate() {
        for row in plane.iter_mut() {
            for v in row.iter_mut() {
                *v = p.gamma[c] * (*v - p.mean[c]) / (p.var[c] + 1e-5).sqrt() + p.beta[c];
            }
        }
    }
    out
}

fn relu(input: &Map) -> Map {
    input
        .iter()
        .map(|p| p.iter().map(|r| r.iter().map(|&v| v.max(0.0)).collect()).collect())
        .collect()
}

fn bilinear(input: &Map, sy: f64, sx: f64, c: usize) -> f64 {
    let (h, w) = (input[0].len(), input[0][0].len());
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    (1.0 - fy) * (1.0 - fx) * input[c][y0][x0]
        + (1.0 - fy) * fx * input[c][y0][x1]
        + fy * (1.0 - fx) * input[c][y1][x0]
        + fy * fx * input[c][y1][x1]
}

fn dysample(input: &Map, gen: &Conv2d<f64>) -> Map {
    let offsets = conv(input, gen);
    let (c_n, h, w) = (input.len(), input[0].len(), input[0][0].len());
    let mut out = vec![vec![vec![0.0; 2 * w]; 2 * h]; c_n];
    for c in 0..c_n {
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                let (y, dy) = (oy / 2, oy % 2);
                let (x, dx) = (ox / 2, ox % 2);
                let idx = dy * 2 + dx;
                let sy = (oy as f64 + 0.5) / 2.0 - 0.5 + 0.25 * offsets[4 + idx][y][x];
                let sx = (ox as f64 + 0.5) / 2.0 - 0.5 + 0.25 * offsets[idx][y][x];
                out[c][oy][ox] = bilinear(input, sy, sx, c);
            }
        }
    }
    out
}

pub fn forward(config: &DecoderConfig, params: &DecoderParams<f64>, set: &TokenSet<f64>) -> Map {
    let (gh, gw) = set.grid;
    let d = set.dim;
    let wd = config.width;
    // projection + GELU per layer
    let mut projected: Vec<Vec<Vec<f64>>> = Vec::new(); // [layer][token][feature]
    for (layer, proj) in set.layers.iter().zip(&params.projections) {
        let mut rows = Vec::new();
        for t in 0..gh * gw {
            let mut row = vec![0.0; wd];
            for (o, slot) in row.iter_mut().enumerate() {
                let mut acc = proj.bias[o];
                for i in 0..d {
                    acc += proj.weight[o * 2 * d + i] * layer.tokens[t * d + i];
                    acc += proj.weight[o * 2 * d + d + i] * layer.cls[i];
                }
                let x = acc;
                *slot = 0.5 * x * (1.0 + libm::erf(x / 2.0f64.sqrt()));
            }
            rows.push(row);
        }
        projected.push(rows);
    }
    // softmax fusion
    let max = params.fusion_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = params.fusion_logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut fused = vec![vec![0.0; wd]; gh * gw];
    for (l, rows) in projected.iter().enumerate() {
        for (t, row) in rows.iter().enumerate() {
            for (f, &v) in row.iter().enumerate() {
                fused[t][f] += exps[l] / z * v;
            }
        }
    }
    // reshape to a map
    let mut map = vec![vec![vec![0.0; gw]; gh]; wd];
    for t in 0..gh * gw {
        for c in 0..wd {
            map[c][t / gw][t % gw] = fused[t][c];
        }
    }
    // residual depthwise block
    let branch = bn(&conv(&map, &params.sde.dw), &params.sde.bn);
    for c in 0..wd {
        for y in 0..gh {
            for x in 0..gw {
                map[c][y][x] = (map[c][y][x] + branch[c][y][x]).max(0.0);
            }
        }
    }
    // x16 upsampler
    let block =
        |m: &Map, b: &DySampleBlock<f64>| relu(&bn(&conv(&dysample(m, &b.offset_gen), &b.conv), &b.bn));
    let refine = |m: &Map, r: &RefineBlock<f64>| relu(&bn(&conv(m, &r.conv), &r.bn));
    let up = &params.upsampler;
    let x = block(&map, &up.blocks[0]);
    let x = block(&x, &up.blocks[1]);
    let x = refine(&x, &up.refines[0]);
    let x = block(&x, &up.blocks[2]);
    let x = block(&x, &up.blocks[3]);
    let x = refine(&x, &up.refines[1]);
    // head
    relu(&conv(&relu(&conv(&x, &params.head.conv3)), &params.head.conv1))
}
