//! Training losses with analytic gradients.
//!
//! All losses are sums over pixels (or classes), not means. Each returns the
//! scalar value together with the gradient with respect to its prediction
//! input, laid out like that input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervision::{DensityMap, GlobalDensityLabel, SegmentationMap};

/// Probabilities are clamped to this floor before taking the log; the
/// gradient is zero below it.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_s: 10.0,
            lambda_c: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_r: f64, lambda_s: f64, lambda_c: f64) -> Result<Self> {
        if [lambda_r, lambda_s, lambda_c]
            .iter()
            .any(|l| !(l.is_finite() && *l >= 0.0))
        {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(LossWeights {
            lambda_r,
            lambda_s,
            lambda_c,
        })
    }
}

/// `-(1 - p)^gamma * ln p` and its derivative in `p`.
fn focal_term(p: f64, gamma: f64) -> (f64, f64) {
    if p < PROB_FLOOR {
        let q = 1.0 - PROB_FLOOR;
        return (-q.powf(gamma) * PROB_FLOOR.ln(), 0.0);
    }
    let q = 1.0 - p;
    let ln_p = p.ln();
    let value = -q.powf(gamma) * ln_p;
    let modulating = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * ln_p
    };
    (value, modulating - q.powf(gamma) / p)
}

/// Class weights `alpha_l = 1 - |S_l| / |S|` for background (0) and
/// foreground (1).
pub fn class_balance(target: &SegmentationMap) -> [f64; 2] {
    let total = target.values().len() as f64;
    let fg = target.foreground_count() as f64;
    [1.0 - (total - fg) / total, 1.0 - fg / total]
}

/// Per-pixel weighted focal loss for the segmentation branch.
///
/// `probs` is `H x W x 2`, pixel-major: `probs[2 * i + l]` is the predicted
/// probability of class `l` at pixel `i`. Class weights come from the
/// target's class balance.
pub fn seg_focal_loss(probs: &[f64], target: &SegmentationMap, gamma_s: f64) -> Result<LossValue> {
    seg_focal_loss_weighted(probs, target, gamma_s, class_balance(target))
}

/// [`seg_focal_loss`] with explicit class weights.
pub fn seg_focal_loss_weighted(
    probs: &[f64],
    target: &SegmentationMap,
    gamma_s: f64,
    alpha: [f64; 2],
) -> Result<LossValue> {
    let n = target.values().len();
    if probs.len() != 2 * n {
        return Err(Error::shape(format!(
            "{} probabilities for a {}x{}x2 map",
            probs.len(),
            target.height(),
            target.width()
        )));
    }
    if !(gamma_s >= 0.0) {
        return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {gamma_s}")));
    }
    let mut value = 0.0;
    let mut gradient = vec![0.0; probs.len()];
    for (i, &label) in target.values().iter().enumerate() {
        let l = label as usize;
        let (v, g) = focal_term(probs[2 * i + l], gamma_s);
        value += alpha[l] * v;
        gradient[2 * i + l] = alpha[l] * g;
    }
    Ok(LossValue { value, gradient })
}

/// Focal loss on the global-density classifier; `probs` has one entry per
/// level `0..=M`.
pub fn global_density_loss(
    probs: &[f64],
    target: GlobalDensityLabel,
    gamma_c: f64,
) -> Result<LossValue> {
    let t = target.level();
    if t >= probs.len() {
        return Err(Error::shape(format!(
            "level {t} outside {} class probabilities",
            probs.len()
        )));
    }
    if !(gamma_c >= 0.0) {
        return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {gamma_c}")));
    }
    let (value, g) = focal_term(probs[t], gamma_c);
    let mut gradient = vec![0.0; probs.len()];
    gradient[t] = g;
    Ok(LossValue { value, gradient })
}

/// `0.5 * sum(r^2) + sum(|r|)` with `r = pred - target`. The L1 subgradient
/// uses `sign(0) = 0`.
pub fn density_regression_loss(pred: &[f64], target: &DensityMap) -> Result<LossValue> {
    if pred.len() != target.values().len() {
        return Err(Error::shape(format!(
            "{} predictions for a {}x{} map",
            pred.len(),
            target.width(),
            target.height()
        )));
    }
    let mut l2 = 0.0;
    let mut l1 = 0.0;
    let gradient = pred
        .iter()
        .zip(target.values())
        .map(|(p, t)| {
            let r = p - t;
            l2 += r * r;
            l1 += r.abs();
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            r + sign
        })
        .collect();
    Ok(LossValue {
        value: 0.5 * l2 + l1,
        gradient,
    })
}

/// Weighted sum of the regression, segmentation and global-density losses.
pub fn total_loss(lr: &LossValue, ls: &LossValue, lc: &LossValue, w: &LossWeights) -> f64 {
    w.lambda_r * lr.value + w.lambda_s * ls.value + w.lambda_c * lc.value
}
