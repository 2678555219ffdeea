//! Affine-invariant depth evaluation and training-loss references.
//!
//! Evaluation runs in disparity space: the prediction is least-squares
//! aligned onto the ground-truth disparity (scale and shift), clamped below
//! at `1/depth_cap`, inverted back to depth, and scored with AbsRel and the
//! delta-1 accuracy threshold.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Default accuracy threshold factor.
pub const DEFAULT_TAU: f64 = 1.25;

/// Number of pooling scales in the gradient matching loss.
pub const DEFAULT_GM_SCALES: usize = 4;

/// Least-squares scale/shift fit of one field onto another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit<S> {
    pub scale: S,
    pub shift: S,
}

/// AbsRel and delta-1 over `m` evaluated pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult<S> {
    pub absrel: S,
    pub delta1: S,
    pub m: usize,
}

impl<S: Scalar> AffineFit<S> {
    #[inline]
    pub fn apply(&self, v: S) -> S {
        self.scale * v + self.shift
    }
}

/// Solves `argmin_{s,t} sum_mask (s*pred + t - gt)^2` via the 2x2 normal
/// equations. Errors when fewer than 2 pixels are masked or `pred` is
/// constant over the mask (singular system).
pub fn lsq_align<S: Scalar>(pred: &[S], gt: &[S], mask: &[bool]) -> Result<AffineFit<S>> {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len(), mask.len());
    let mut m = S::zero();
    let mut sx = S::zero();
    let mut sy = S::zero();
    let mut sxx = S::zero();
    let mut sxy = S::zero();
    for i in 0..pred.len() {
        if mask[i] {
            let (x, y) = (pred[i], gt[i]);
            m += S::one();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
    }
    if m < cast(2.0) {
        return Err(Error::DegenerateFit("fewer than 2 masked pixels".into()));
    }
    let det = m * sxx - sx * sx;
    let tol = S::epsilon() * cast::<S>(64.0) * m * sxx.max(S::one());
    if det.abs() <= tol {
        return Err(Error::DegenerateFit(
            "prediction is constant over the mask".into(),
        ));
    }
    let scale = (m * sxy - sx * sy) / det;
    let shift = (sy - scale * sx) / m;
    Ok(AffineFit { scale, shift })
}

/// Mean of `|pred - gt| / gt` over masked pixels.
pub fn absrel<S: Scalar>(pred_depth: &[S], gt_depth: &[S], mask: &[bool]) -> Result<S> {
    let mut sum = S::zero();
    let mut m = 0usize;
    for i in 0..gt_depth.len() {
        if mask[i] {
            sum += (pred_depth[i] - gt_depth[i]).abs() / gt_depth[i];
            m += 1;
        }
    }
    if m == 0 {
        return Err(Error::DegenerateInput("empty evaluation mask".into()));
    }
    Ok(sum / cast(m as f64))
}

/// Fraction of masked pixels with `max(pred/gt, gt/pred) < tau`. Pixels where
/// either value is non-positive never count as accurate.
pub fn delta1<S: Scalar>(pred_depth: &[S], gt_depth: &[S], mask: &[bool], tau: S) -> Result<S> {
    let mut hits = 0usize;
    let mut m = 0usize;
    for i in 0..gt_depth.len() {
        if mask[i] {
            m += 1;
            let (p, g) = (pred_depth[i], gt_depth[i]);
            if p > S::zero() && g > S::zero() && (p / g).max(g / p) < tau {
                hits += 1;
            }
        }
    }
    if m == 0 {
        return Err(Error::DegenerateInput("empty evaluation mask".into()));
    }
    Ok(cast::<S>(hits as f64) / cast(m as f64))
}

/// Full affine-invariant protocol: align predicted disparity onto `1/gt`,
/// clamp below at `1/depth_cap`, invert, and score.
pub fn evaluate_affine_invariant<S: Scalar>(
    pred_disparity: &[S],
    gt_depth: &[S],
    mask: &[bool],
    depth_cap: f64,
    tau: f64,
) -> Result<EvalResult<S>> {
    assert_eq!(pred_disparity.len(), gt_depth.len());
    assert_eq!(pred_disparity.len(), mask.len());
    let cap: S = cast(depth_cap);
    // effective mask: finite gt in (0, cap]
    let mask: Vec<bool> = mask
        .iter()
        .zip(gt_depth)
        .map(|(&m, &g)| m && g.is_finite() && g > S::zero() && g <= cap)
        .collect();
    let gt_disp: Vec<S> = gt_depth
        .iter()
        .map(|&g| if g > S::zero() { S::one() / g } else { S::zero() })
        .collect();
    let fit = lsq_align(pred_disparity, &gt_disp, &mask)?;
    let floor = S::one() / cap;
    let pred_depth: Vec<S> = pred_disparity
        .iter()
        .map(|&p| S::one() / fit.apply(p).max(floor))
        .collect();
    let m = mask.iter().filter(|&&b| b).count();
    Ok(EvalResult {
        absrel: absrel(&pred_depth, gt_depth, &mask)?,
        delta1: delta1(&pred_depth, gt_depth, &mask, cast(tau))?,
        m,
    })
}

/// Scale/shift-invariant loss: mean squared residual after aligning `pred`
/// onto `gt` over the mask.
pub fn ssi_loss<S: Scalar>(pred_disp: &[S], gt_disp: &[S], mask: &[bool]) -> Result<S> {
    let fit = lsq_align(pred_disp, gt_disp, mask)?;
    let mut sum = S::zero();
    let mut m = 0usize;
    for i in 0..pred_disp.len() {
        if mask[i] {
            let r = fit.apply(pred_disp[i]) - gt_disp[i];
            sum += r * r;
            m += 1;
        }
    }
    Ok(sum / cast(m as f64))
}

/// Mean over scales of the mean absolute forward-difference gradient of a
/// residual field, with mask-aware factor-2 average pooling between scales.
/// Exposed so the multi-scale term can be inspected on a known residual.
pub fn multiscale_gradient_mean<S: Scalar>(
    residual: &[S],
    mask: &[bool],
    width: usize,
    height: usize,
    scales: usize,
) -> S {
    assert_eq!(residual.len(), width * height);
    assert!(scales >= 1);
    let mut r = residual.to_vec();
    let mut m = mask.to_vec();
    let (mut w, mut h) = (width, height);
    let mut total = S::zero();
    for level in 0..scales {
        if level > 0 {
            let (nr, nm, nw, nh) = downsample2(&r, &m, w, h);
            r = nr;
            m = nm;
            w = nw;
            h = nh;
        }
        total += gradient_term(&r, &m, w, h);
    }
    total / cast(scales as f64)
}

/// Sum of |dx| + |dy| forward differences over pixel pairs where both ends
/// are valid, divided by the number of valid pixels.
fn gradient_term<S: Scalar>(r: &[S], m: &[bool], w: usize, h: usize) -> S {
    let mut sum = S::zero();
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !m[i] {
                continue;
            }
            count += 1;
            if x + 1 < w && m[i + 1] {
                sum += (r[i + 1] - r[i]).abs();
            }
            if y + 1 < h && m[i + w] {
                sum += (r[i + w] - r[i]).abs();
            }
        }
    }
    if count == 0 {
        S::zero()
    } else {
        sum / cast(count as f64)
    }
}

/// Factor-2 average pooling; a pooled pixel is valid iff any contributor is
/// valid, and averages only the valid contributors.
fn downsample2<S: Scalar>(
    r: &[S],
    m: &[bool],
    w: usize,
    h: usize,
) -> (Vec<S>, Vec<bool>, usize, usize) {
    let nw = w.div_ceil(2);
    let nh = h.div_ceil(2);
    let mut nr = vec![S::zero(); nw * nh];
    let mut nm = vec![false; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let mut sum = S::zero();
            let mut count = 0usize;
            for dy in 0..2 {
                for dx in 0..2 {
                    let (sy, sx) = (2 * y + dy, 2 * x + dx);
                    if sy < h && sx < w && m[sy * w + sx] {
                        sum += r[sy * w + sx];
                        count += 1;
                    }
                }
            }
            if count > 0 {
                nr[y * nw + x] = sum / cast(count as f64);
                nm[y * nw + x] = true;
            }
        }
    }
    (nr, nm, nw, nh)
}

/// Gradient matching loss: the multi-scale gradient mean of the aligned
/// residual (same fit as [`ssi_loss`]).
pub fn gradient_matching_loss<S: Scalar>(
    pred_disp: &[S],
    gt_disp: &[S],
    mask: &[bool],
    width: usize,
    height: usize,
    scales: usize,
) -> Result<S> {
    let fit = lsq_align(pred_disp, gt_disp, mask)?;
    let residual: Vec<S> = pred_disp
        .iter()
        .zip(gt_disp)
        .zip(mask)
        .map(|((&p, &g), &m)| if m { fit.apply(p) - g } else { S::zero() })
        .collect();
    Ok(multiscale_gradient_mean(&residual, mask, width, height, scales))
}

/// `ssi + 2 * gm`, the 1:2 training weighting.
pub fn total_loss<S: Scalar>(
    pred_disp: &[S],
    gt_disp: &[S],
    mask: &[bool],
    width: usize,
    height: usize,
) -> Result<S> {
    let ssi = ssi_loss(pred_disp, gt_disp, mask)?;
    let gm = gradient_matching_loss(pred_disp, gt_disp, mask, width, height, DEFAULT_GM_SCALES)?;
    Ok(ssi + cast::<S>(2.0) * gm)
}
