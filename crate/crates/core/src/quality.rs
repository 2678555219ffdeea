//! Per-sample depth quality metrics.
//!
//! Two families of scores, both in `[0,1]`:
//!
//! * Depth distribution: chi-square uniformity of a K-bin histogram,
//!   maximum-bin concentration, and range utilization, combined with weights
//!   0.5 / 0.3 / 0.2.
//! * Gradient continuity: `1/(1+CV)` of the gradient magnitude over the
//!   smooth region, where the top 10% of magnitudes are treated as edges.
//!
//! Histogram range defaults to a corpus-fixed `[0, far_plane]`; a per-sample
//! min-max mode is available. A fixed range lets range utilization actually
//! penalize narrow-range samples, while per-sample ranges pin the extreme
//! bins non-empty by construction.

use serde::{Deserialize, Serialize};

use crate::depthio::DepthSample;
use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Histogram bin count used throughout the pipeline.
pub const DEFAULT_BINS: usize = 20;

/// Weights of the three distribution sub-scores.
pub const DIST_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

/// Flat-region guard: below this mean gradient the CV is defined as 0.
const FLAT_MEAN_EPS: f64 = 1e-12;

/// Equal-width histogram over valid depth values.
#[derive(Debug, Clone)]
pub struct DepthHistogram<S: Scalar> {
    pub k: usize,
    pub lo: S,
    pub hi: S,
    pub counts: Vec<u64>,
    /// Total valid count; equals the sum of `counts`.
    pub n: u64,
}

/// Per-sample score record. `NaN` marks a score that could not be computed
/// (for example the gradient score of a sample with no defined gradients).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityScores {
    pub id: String,
    pub dataset: String,
    pub valid_ratio: f64,
    pub s_chi2: f64,
    pub s_conc: f64,
    pub s_range: f64,
    pub s_dist: f64,
    pub s_grad: f64,
    pub s_total: f64,
}

/// How the histogram range is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HistogramRange {
    /// Corpus-fixed range, the default.
    Fixed { lo: f64, hi: f64 },
    /// Per-sample min-max of the valid depths.
    PerSample,
}

/// Settings for [`score_sample`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub k: usize,
    pub range: HistogramRange,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            k: DEFAULT_BINS,
            range: HistogramRange::Fixed {
                lo: 0.0,
                hi: crate::depthio::DEFAULT_FAR_PLANE,
            },
        }
    }
}

/// Bins the valid depths of a sample into `k` equal-width bins over `[lo, hi]`.
/// Values are clamped into the range; the top edge maps into bin `k-1`.
pub fn depth_histogram<S: Scalar>(
    sample: &DepthSample<S>,
    k: usize,
    lo: S,
    hi: S,
) -> Result<DepthHistogram<S>> {
    if k == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if lo >= hi {
        return Err(Error::Config("histogram range must satisfy lo < hi".into()));
    }
    let mut counts = vec![0u64; k];
    let mut n = 0u64;
    let width = hi - lo;
    let kf: S = cast(k as f64);
    for (&d, &v) in sample.depth.iter().zip(&sample.valid) {
        if !v {
            continue;
        }
        let clamped = d.max(lo).min(hi);
        let mut bin = ((kf * (clamped - lo) / width).floor().to_f64().unwrap()) as usize;
        if bin >= k {
            bin = k - 1;
        }
        counts[bin] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateInput(format!(
            "sample {}: no valid pixels to histogram",
            sample.id
        )));
    }
    Ok(DepthHistogram { k, lo, hi, counts, n })
}

/// Chi-square uniformity score `exp(-chi2 / N)` with
/// `chi2 = sum_k (n_k - N/K)^2 / (N/K)`.
pub fn chi_square_score<S: Scalar>(h: &DepthHistogram<S>) -> S {
    debug_assert!(h.n > 0);
    let expected = h.n as f64 / h.k as f64;
    let chi2: f64 = h
        .counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    cast((-chi2 / h.n as f64).exp())
}

/// Maximum-bin concentration score. Up to `2/K` occupancy is tolerated, then
/// the score decays linearly, reaching 0 at occupancy 0.5.
pub fn concentration_score<S: Scalar>(h: &DepthHistogram<S>) -> Result<S> {
    debug_assert!(h.n > 0);
    if h.k <= 4 {
        return Err(Error::Config(
            "concentration score requires more than 4 bins".into(),
        ));
    }
    let p_max = *h.counts.iter().max().unwrap() as f64 / h.n as f64;
    let tolerated = 2.0 / h.k as f64;
    let score = if p_max <= tolerated {
        1.0
    } else {
        1.0 - ((p_max - tolerated) / (0.5 - tolerated)).min(1.0)
    };
    Ok(cast(score))
}

/// Fraction of non-empty bins.
pub fn range_utilization<S: Scalar>(h: &DepthHistogram<S>) -> S {
    let occupied = h.counts.iter().filter(|&&c| c > 0).count();
    cast(occupied as f64 / h.k as f64)
}

/// Weighted combination of the three distribution sub-scores.
pub fn combine_distribution<S: Scalar>(s_chi2: S, s_conc: S, s_range: S) -> S {
    cast::<S>(DIST_WEIGHTS[0]) * s_chi2
        + cast::<S>(DIST_WEIGHTS[1]) * s_conc
        + cast::<S>(DIST_WEIGHTS[2]) * s_range
}

/// Depth distribution score of a histogram.
pub fn distribution_score<S: Scalar>(h: &DepthHistogram<S>) -> Result<S> {
    Ok(combine_distribution(
        chi_square_score(h),
        concentration_score(h)?,
        range_utilization(h),
    ))
}

/// Gradient magnitude field with a definedness mask.
#[derive(Debug, Clone)]
pub struct GradientField<S: Scalar> {
    pub width: usize,
    pub height: usize,
    pub mag: Vec<S>,
    pub defined: Vec<bool>,
}

/// `sqrt((dx D)^2 + (dy D)^2)` with central differences in the interior and
/// one-sided differences at borders. A pixel's gradient is defined only when
/// the pixel itself and every pixel in its difference stencil are valid.
pub fn gradient_magnitude<S: Scalar>(sample: &DepthSample<S>) -> GradientField<S> {
    let (w, h) = (sample.width, sample.height);
    let mut mag = vec![S::zero(); w * h];
    let mut defined = vec![false; w * h];
    let half: S = cast(0.5);
    let at = |r: usize, c: usize| sample.depth[r * w + c];
    let ok = |r: usize, c: usize| sample.valid[r * w + c];

    for r in 0..h {
        for c in 0..w {
            if !ok(r, c) {
                continue;
            }
            // horizontal derivative
            let dx = if w == 1 {
                Some(S::zero())
            } else if c == 0 {
                ok(r, 1).then(|| at(r, 1) - at(r, 0))
            } else if c == w - 1 {
                ok(r, c - 1).then(|| at(r, c) - at(r, c - 1))
            } else if ok(r, c - 1) && ok(r, c + 1) {
                Some((at(r, c + 1) - at(r, c - 1)) * half)
            } else {
                None
            };
            // vertical derivative
            let dy = if h == 1 {
                Some(S::zero())
            } else if r == 0 {
                ok(1, c).then(|| at(1, c) - at(0, c))
            } else if r == h - 1 {
                ok(r - 1, c).then(|| at(r, c) - at(r - 1, c))
            } else if ok(r - 1, c) && ok(r + 1, c) {
                Some((at(r + 1, c) - at(r - 1, c)) * half)
            } else {
                None
            };
            if let (Some(dx), Some(dy)) = (dx, dy) {
                let i = r * w + c;
                mag[i] = (dx * dx + dy * dy).sqrt();
                defined[i] = true;
            }
        }
    }
    GradientField { width: w, height: h, mag, defined }
}

/// Gradient continuity score `1/(1+CV)` over the smooth region.
///
/// Edge pixels are those with magnitude strictly above the 90th percentile
/// (nearest-rank on the sorted defined magnitudes); ties land in the smooth
/// set, so an all-equal gradient field scores 1.
pub fn gradient_continuity_score<S: Scalar>(sample: &DepthSample<S>) -> Result<S> {
    let field = gradient_magnitude(sample);
    let mut values: Vec<S> = field
        .mag
        .iter()
        .zip(&field.defined)
        .filter_map(|(&g, &d)| d.then_some(g))
        .collect();
    if values.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "sample {}: no defined gradient pixels",
            sample.id
        )));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let rank = ((0.9 * n as f64).ceil() as usize).max(1);
    let threshold = values[rank - 1];

    let smooth: Vec<f64> = values
        .iter()
        .filter(|&&g| g <= threshold)
        .map(|g| g.to_f64().unwrap())
        .collect();
    let m = smooth.len() as f64;
    let mean = smooth.iter().sum::<f64>() / m;
    let cv = if mean < FLAT_MEAN_EPS {
        0.0
    } else {
        let var = smooth.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / m;
        var.sqrt() / mean
    };
    Ok(cast(1.0 / (1.0 + cv)))
}

/// Arithmetic mean of the gradient and distribution scores.
pub fn total_score<S: Scalar>(s_dist: S, s_grad: S) -> S {
    (s_dist + s_grad) * cast(0.5)
}

/// Computes the full score record for one sample.
///
/// Errors only when the sample has no valid pixel at all. A sample with valid
/// pixels but no defined gradient gets `NaN` for `s_grad` and `s_total`.
pub fn score_sample<S: Scalar>(sample: &DepthSample<S>, opts: &ScoreOptions) -> Result<QualityScores> {
    let valid_ratio = sample.valid_ratio();
    if sample.valid_count() == 0 {
        return Err(Error::DegenerateInput(format!(
            "sample {}: no valid pixels",
            sample.id
        )));
    }
    let (lo, hi) = match opts.range {
        HistogramRange::Fixed { lo, hi } => (cast::<S>(lo), cast::<S>(hi)),
        HistogramRange::PerSample => per_sample_range(sample),
    };
    let h = depth_histogram(sample, opts.k, lo, hi)?;
    let s_chi2 = chi_square_score(&h).to_f64().unwrap();
    let s_conc = concentration_score(&h)?.to_f64().unwrap();
    let s_range = range_utilization(&h).to_f64().unwrap();
    let s_dist = combine_distribution(s_chi2, s_conc, s_range);
    let s_grad = match gradient_continuity_score(sample) {
        Ok(g) => g.to_f64().unwrap(),
        Err(_) => f64::NAN,
    };
    let s_total = total_score(s_dist, s_grad);
    Ok(QualityScores {
        id: sample.id.clone(),
        dataset: sample.dataset.clone(),
        valid_ratio,
        s_chi2,
        s_conc,
        s_range,
        s_dist,
        s_grad,
        s_total,
    })
}

/// Min-max of the valid depths. A constant map yields a unit-width range
/// starting at the constant so all mass lands in bin 0.
fn per_sample_range<S: Scalar>(sample: &DepthSample<S>) -> (S, S) {
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    for (&d, &v) in sample.depth.iter().zip(&sample.valid) {
        if v {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    if hi <= lo {
        hi = lo + S::one();
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(w: usize, h: usize, depth: Vec<f64>) -> DepthSample<f64> {
        DepthSample::from_depth("t", w, h, depth, "test", 100.0)
    }

    #[test]
    fn histogram_one_value_per_bin() {
        let depths: Vec<f64> = (0..20).map(|i| i as f64 + 0.5).collect();
        let s = sample(20, 1, depths);
        let h = depth_histogram(&s, 20, 0.0, 20.0).unwrap();
        assert_eq!(h.counts, vec![1; 20]);
        assert_eq!(h.n, 20);
    }

    #[test]
    fn histogram_constant_map_single_bin() {
        let s = sample(4, 4, vec![5.0; 16]);
        let h = depth_histogram(&s, 20, 0.0, 100.0).unwrap();
        assert_eq!(h.counts[1], 16);
        assert_eq!(h.counts.iter().sum::<u64>(), 16);
    }

    #[test]
    fn histogram_top_edge_goes_to_last_bin() {
        let s = sample(1, 1, vec![20.0]);
        let h = depth_histogram(&s, 20, 0.0, 20.0).unwrap();
        assert_eq!(h.counts[19], 1);
    }

    #[test]
    fn histogram_rejects_all_invalid() {
        let s = sample(2, 2, vec![-1.0; 4]);
        assert!(matches!(
            depth_histogram(&s, 20, 0.0, 100.0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn chi_square_uniform_is_one() {
        let h = DepthHistogram::<f64> {
            k: 20,
            lo: 0.0,
            hi: 100.0,
            counts: vec![3; 20],
            n: 60,
        };
        assert_eq!(chi_square_score(&h), 1.0);
    }

    #[test]
    fn chi_square_two_bins_of_twenty() {
        // N=40, two bins with 20 each, K=20: chi2 = 2*(20-2)^2/2 + 18*(0-2)^2/2 = 360
        let mut counts = vec![0u64; 20];
        counts[0] = 20;
        counts[1] = 20;
        let h = DepthHistogram::<f64> { k: 20, lo: 0.0, hi: 1.0, counts, n: 40 };
        let expected = (-360.0f64 / 40.0).exp();
        assert!((chi_square_score(&h) - expected).abs() < 1e-15);
    }

    #[test]
    fn concentration_branches() {
        let mk = |counts: Vec<u64>| {
            let n = counts.iter().sum();
            DepthHistogram::<f64> { k: 20, lo: 0.0, hi: 1.0, counts, n }
        };
        // p_max = 0.08 <= 2/K
        let h = mk(vec![8, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 2]);
        assert_eq!(h.n, 100);
        assert_eq!(concentration_score(&h).unwrap(), 1.0);
        // p_max = 0.5 -> 0
        let h = mk(vec![50, 50, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!((concentration_score(&h).unwrap()).abs() < 1e-15);
        // p_max = 0.3 -> 0.5
        let h = mk(vec![30, 10, 10, 10, 10, 10, 10, 10, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!((concentration_score(&h).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn concentration_needs_more_than_four_bins() {
        let h = DepthHistogram::<f64> { k: 4, lo: 0.0, hi: 1.0, counts: vec![1; 4], n: 4 };
        assert!(matches!(concentration_score(&h), Err(Error::Config(_))));
    }

    #[test]
    fn range_utilization_cases() {
        let mk = |counts: Vec<u64>| {
            let n = counts.iter().sum();
            DepthHistogram::<f64> { k: 20, lo: 0.0, hi: 1.0, counts, n }
        };
        assert_eq!(range_utilization(&mk(vec![1; 20])), 1.0);
        let mut half = vec![1u64; 10];
        half.extend(vec![0u64; 10]);
        assert_eq!(range_utilization(&mk(half)), 0.5);
        let mut single = vec![0u64; 20];
        single[3] = 9;
        assert_eq!(range_utilization(&mk(single)), 0.05);
    }

    #[test]
    fn distribution_weights() {
        assert_eq!(combine_distribution(1.0, 1.0, 1.0), 1.0);
        assert_eq!(combine_distribution(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn gradient_plane_constant_slope() {
        let a = 0.25;
        let depth: Vec<f64> = (0..8 * 8).map(|i| 1.0 + a * (i % 8) as f64).collect();
        let s = sample(8, 8, depth);
        let g = gradient_magnitude(&s);
        for (i, (&m, &d)) in g.mag.iter().zip(&g.defined).enumerate() {
            assert!(d, "pixel {i} undefined");
            assert!((m - a).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_constant_map_is_zero() {
        let s = sample(6, 6, vec![7.0; 36]);
        let g = gradient_magnitude(&s);
        assert!(g.defined.iter().all(|&d| d));
        assert!(g.mag.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn gradient_single_invalid_pixel_stencils() {
        // invalid at (3,3); itself and its 4 axis neighbors become undefined
        let mut depth = vec![5.0; 49];
        depth[3 * 7 + 3] = -1.0;
        let s = sample(7, 7, depth);
        let g = gradient_magnitude(&s);
        let undefined: Vec<(usize, usize)> = (0..7)
            .flat_map(|r| (0..7).map(move |c| (r, c)))
            .filter(|&(r, c)| !g.defined[r * 7 + c])
            .collect();
        assert_eq!(undefined, vec![(2, 3), (3, 2), (3, 3), (3, 4), (4, 3)]);
    }

    #[test]
    fn continuity_plane_scores_one() {
        // exactly representable slope keeps every finite difference identical
        let depth: Vec<f64> = (0..12 * 12).map(|i| 1.0 + 0.25 * (i % 12) as f64).collect();
        let s = sample(12, 12, depth);
        assert!((gradient_continuity_score(&s).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn continuity_errors_without_defined_gradients() {
        // single valid pixel surrounded by invalid: every stencil is broken
        let mut depth = vec![-1.0; 9];
        depth[4] = 5.0;
        let s = sample(3, 3, depth);
        assert!(matches!(
            gradient_continuity_score(&s),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn total_score_cases() {
        assert_eq!(total_score(1.0, 1.0), 1.0);
        assert_eq!(total_score(1.0, 0.0), 0.5);
        assert!((total_score(0.6, 0.2) - 0.4f64).abs() < 1e-15);
    }

    #[test]
    fn score_sample_zero_valid_errors() {
        let s = sample(2, 2, vec![f64::NAN; 4]);
        assert!(score_sample(&s, &ScoreOptions::default()).is_err());
    }
}
