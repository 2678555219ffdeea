//! Shared test support: an independent straight-line oracle for the quality
//! metrics and randomized sample generators.

#![allow(dead_code)]

pub mod naive;

use depthkit::depthio::DepthSample;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Straight-line recomputation of every quality score, written directly from
/// the formulas with no shared code, loops fused or reordered.
pub mod oracle {
    /// Sub-scores and composites, all in f64.
    #[derive(Debug, Clone, Copy)]
    pub struct OracleScores {
        pub s_chi2: f64,
        pub s_conc: f64,
        pub s_range: f64,
        pub s_dist: f64,
        pub s_grad: f64,
        pub s_total: f64,
    }

    pub fn histogram(depth: &[f64], valid: &[bool], k: usize, lo: f64, hi: f64) -> Vec<u64> {
        let mut counts = vec![0u64; k];
        for i in 0..depth.len() {
            if !valid[i] {
                continue;
            }
            let mut d = depth[i];
            if d < lo {
                d = lo;
            }
            if d > hi {
                d = hi;
            }
            let mut bin = ((d - lo) / (hi - lo) * k as f64).floor() as usize;
            if bin >= k {
                bin = k - 1;
            }
            counts[bin] += 1;
        }
        counts
    }

    pub fn chi2_score(counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        let expected = n as f64 / counts.len() as f64;
        let mut chi2 = 0.0;
        for &c in counts {
            chi2 += (c as f64 - expected) * (c as f64 - expected) / expected;
        }
        (-chi2 / n as f64).exp()
    }

    pub fn conc_score(counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        let k = counts.len();
        let p_max = *counts.iter().max().unwrap() as f64 / n as f64;
        let tol = 2.0 / k as f64;
        if p_max <= tol {
            1.0
        } else {
            let mut frac = (p_max - tol) / (0.5 - tol);
            if frac > 1.0 {
                frac = 1.0;
            }
            1.0 - frac
        }
    }

    pub fn range_score(counts: &[u64]) -> f64 {
        let occupied = counts.iter().filter(|&&c| c > 0).count();
        occupied as f64 / counts.len() as f64
    }

    /// Gradient magnitudes and their definedness mask, straight from the
    /// stencil rules.
    pub fn gradients(
        depth: &[f64],
        valid: &[bool],
        w: usize,
        h: usize,
    ) -> (Vec<f64>, Vec<bool>) {
        let mut mag = vec![0.0; w * h];
        let mut def = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                if !valid[r * w + c] {
                    continue;
                }
                let dx: Option<f64> = if w == 1 {
                    Some(0.0)
                } else if c == 0 {
                    if valid[r * w + 1] {
                        Some(depth[r * w + 1] - depth[r * w])
                    } else {
                        None
                    }
                } else if c == w - 1 {
                    if valid[r * w + c - 1] {
                        Some(depth[r * w + c] - depth[r * w + c - 1])
                    } else {
                        None
                    }
                } else if valid[r * w + c - 1] && valid[r * w + c + 1] {
                    Some((depth[r * w + c + 1] - depth[r * w + c - 1]) / 2.0)
                } else {
                    None
                };
                let dy: Option<f64> = if h == 1 {
                    Some(0.0)
                } else if r == 0 {
                    if valid[w + c] {
                        Some(depth[w + c] - depth[c])
                    } else {
                        None
                    }
                } else if r == h - 1 {
                    if valid[(r - 1) * w + c] {
                        Some(depth[r * w + c] - depth[(r - 1) * w + c])
                    } else {
                        None
                    }
                } else if valid[(r - 1) * w + c] && valid[(r + 1) * w + c] {
                    Some((depth[(r + 1) * w + c] - depth[(r - 1) * w + c]) / 2.0)
                } else {
                    None
                };
                if let (Some(dx), Some(dy)) = (dx, dy) {
                    mag[r * w + c] = (dx * dx + dy * dy).sqrt();
                    def[r * w + c] = true;
                }
            }
        }
        (mag, def)
    }

    /// `1/(1+CV)` over the smooth region, or `None` when no gradient is
    /// defined.
    pub fn grad_score(depth: &[f64], valid: &[bool], w: usize, h: usize) -> Option<f64> {
        let (mag, def) = gradients(depth, valid, w, h);
        let mut values: Vec<f64> = Vec::new();
        for i in 0..mag.len() {
            if def[i] {
                values.push(mag[i]);
            }
        }
        if values.is_empty() {
            return None;
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len();
        let mut rank = (0.9 * n as f64).ceil() as usize;
        if rank == 0 {
            rank = 1;
        }
        let threshold = values[rank - 1];
        let mut smooth: Vec<f64> = Vec::new();
        for &v in &values {
            if v <= threshold {
                smooth.push(v);
            }
        }
        let m = smooth.len() as f64;
        let mut mean = 0.0;
        for &v in &smooth {
            mean += v;
        }
        mean /= m;
        let cv = if mean < 1e-12 {
            0.0
        } else {
            let mut var = 0.0;
            for &v in &smooth {
                var += (v - mean) * (v - mean);
            }
            var /= m;
            var.sqrt() / mean
        };
        Some(1.0 / (1.0 + cv))
    }

    /// Full score record over a fixed histogram range.
    pub fn score(
        depth: &[f64],
        valid: &[bool],
        w: usize,
        h: usize,
        k: usize,
        lo: f64,
        hi: f64,
    ) -> OracleScores {
        let counts = histogram(depth, valid, k, lo, hi);
        let s_chi2 = chi2_score(&counts);
        let s_conc = conc_score(&counts);
        let s_range = range_score(&counts);
        let s_dist = 0.5 * s_chi2 + 0.3 * s_conc + 0.2 * s_range;
        let s_grad = grad_score(depth, valid, w, h).unwrap_or(f64::NAN);
        OracleScores {
            s_chi2,
            s_conc,
            s_range,
            s_dist,
            s_grad,
            s_total: (s_dist + s_grad) / 2.0,
        }
    }
}

/// Random depth map with a mix of valid values in `(0, far_plane]` and a
/// sprinkling of invalid pixels (zeros, negatives, out-of-range).
pub fn random_sample(rng: &mut StdRng, w: usize, h: usize, far_plane: f64) -> DepthSample<f64> {
    let depth: Vec<f64> = (0..w * h)
        .map(|_| {
            let roll: f64 = rng.random();
            if roll < 0.08 {
                0.0
            } else if roll < 0.12 {
                -rng.random::<f64>() * 5.0
            } else if roll < 0.15 {
                far_plane * (1.0 + rng.random::<f64>())
            } else {
                rng.random::<f64>() * far_plane
            }
        })
        .collect();
    DepthSample::from_depth("rand", w, h, depth, "synthetic", far_plane)
}

/// Seeded standard RNG for tests.
pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}
