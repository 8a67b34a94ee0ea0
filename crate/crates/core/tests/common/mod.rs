//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the library code it is used to check.

#![allow(dead_code)]

pub mod grad;

use std::collections::HashMap;

use cam_forge::cam::{Cam, FusionMode, PseudoMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random CAM of the given size. About a quarter of the pixels are exact
/// zeros; the rest are scaled so the max is 1.
pub fn random_cam(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Cam {
    let mut v: Vec<f64> = (0..h * w)
        .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
    Cam::new(h, w, v).unwrap()
}

/// One pixel of the fusion rule, written from the definitions.
pub fn scalar_fusion(mode: FusionMode, a: f64, b: f64) -> f64 {
    match mode {
        FusionMode::Or => 1.0 - (1.0 - a) * (1.0 - b),
        FusionMode::And => a * b,
        FusionMode::Avg => 0.5 * a + 0.5 * b,
    }
}

/// Fused map followed by division by its maximum (all zeros stay zero).
pub fn fusion_oracle(mode: FusionMode, a: &[f64], b: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| scalar_fusion(mode, x, y)).collect();
    let mut max = 0.0;
    for &v in &raw {
        if v > max {
            max = v;
        }
    }
    raw.iter().map(|&v| if max == 0.0 { 0.0 } else { v / max }).collect()
}

pub struct BruteMetrics {
    pub counts: HashMap<(u8, u8), u64>,
    pub iou: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub miou: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn mean_defined(v: &[Option<f64>]) -> f64 {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Counts every `(gt, pred)` pair by walking the pixels, skipping ignore
/// pixels, then derives the scores class by class.
pub fn brute_metrics(pairs: &[(&PseudoMask, &PseudoMask)], num_classes: usize) -> BruteMetrics {
    let mut counts = HashMap::new();
    for (pred, gt) in pairs {
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == 255 {
                continue;
            }
            *counts.entry((g, p)).or_insert(0u64) += 1;
        }
    }
    let mut iou = vec![];
    let mut precision = vec![];
    let mut recall = vec![];
    for c in 0..num_classes as u8 {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (&(g, p), &n) in &counts {
            if g == c && p == c {
                tp += n;
            } else if p == c {
                fp += n;
            } else if g == c {
                fn_ += n;
            }
        }
        iou.push(pct(tp, tp + fp + fn_));
        precision.push(pct(tp, tp + fp));
        recall.push(pct(tp, tp + fn_));
    }
    BruteMetrics {
        miou: mean_defined(&iou),
        mean_precision: mean_defined(&precision),
        mean_recall: mean_defined(&recall),
        counts,
        iou,
        precision,
        recall,
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, num_classes: usize, ignore: bool) -> PseudoMask {
    let labels = (0..h * w)
        .map(|_| {
            if ignore && rng.gen_bool(0.1) {
                255
            } else {
                rng.gen_range(0..num_classes as u8)
            }
        })
        .collect();
    PseudoMask::new(h, w, labels).unwrap()
}

/// Central difference of `f` around `x` along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let up = f(&xp);
    xp[i] -= 2.0 * h;
    let down = f(&xp);
    (up - down) / (2.0 * h)
}

/// Relative error with a floor so tiny gradients do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Block means over consecutive windows of `width` (a trailing partial
/// window is averaged over what it holds).
pub fn window_means(xs: &[f64], width: usize) -> Vec<f64> {
    xs.chunks(width)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}
