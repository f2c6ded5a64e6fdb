//! Cross-entropy and soft Dice losses with analytic gradients.
//!
//! All gradients in [`LossOutput`] are with respect to the logits that
//! produced the probabilities through a per-pixel softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{LabelMap, IGNORE};
use crate::probmap::ProbMap;

/// Lower bound applied to the target probability inside the CE logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Smoothing term of the soft Dice coefficient.
pub const DICE_EPS: f64 = 1e-6;

/// Double-precision class probabilities, channel-major like [`ProbMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl SoftPrediction {
    /// Applies a per-pixel softmax to channel-major logits.
    pub fn from_logits(height: usize, width: usize, num_classes: usize, logits: &[f64]) -> Self {
        let n = height * width;
        assert_eq!(logits.len(), n * num_classes);
        let mut data = vec![0.0; logits.len()];
        let mut z = vec![0.0; num_classes];
        for i in 0..n {
            for c in 0..num_classes {
                z[c] = logits[c * n + i];
            }
            for (c, p) in softmax(&z).into_iter().enumerate() {
                data[c * n + i] = p;
            }
        }
        Self {
            height,
            width,
            num_classes,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

impl From<&ProbMap> for SoftPrediction {
    fn from(pm: &ProbMap) -> Self {
        Self {
            height: pm.height(),
            width: pm.width(),
            num_classes: pm.num_classes(),
            data: pm.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Chains a gradient with respect to probabilities through the softmax:
/// `dz_j = p_j * (dp_j - sum_c p_c dp_c)` per pixel.
pub fn softmax_backward(probs: &SoftPrediction, d_probs: &[f64]) -> Vec<f64> {
    let n = probs.plane_len();
    let k = probs.num_classes;
    let mut out = vec![0.0; d_probs.len()];
    for i in 0..n {
        let dot: f64 = (0..k).map(|c| probs.data[c * n + i] * d_probs[c * n + i]).sum();
        for c in 0..k {
            out[c * n + i] = probs.data[c * n + i] * (d_probs[c * n + i] - dot);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to logits, channel-major.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub ce: f64,
    #[serde(default = "one")]
    pub dice: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ce: 1.0, dice: 1.0 }
    }
}

fn check_pair(probs: &SoftPrediction, gt: &LabelMap) -> Result<usize> {
    if probs.height != gt.height() || probs.width != gt.width() {
        return Err(Error::validation(format!(
            "prediction is {}x{}, labels are {}x{}",
            probs.height,
            probs.width,
            gt.height(),
            gt.width()
        )));
    }
    gt.check_classes(probs.num_classes)?;
    let valid = gt.data().iter().filter(|&&g| g != IGNORE).count();
    if valid == 0 {
        return Err(Error::validation("no supervision: every pixel is ignored"));
    }
    Ok(valid)
}

/// Mean of `-ln p[gt]` over non-ignore pixels.
pub fn cross_entropy_loss(probs: &SoftPrediction, gt: &LabelMap) -> Result<LossOutput> {
    let valid = check_pair(probs, gt)? as f64;
    let n = probs.plane_len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.data.len()];
    for (i, &g) in gt.data().iter().enumerate() {
        if g == IGNORE {
            continue;
        }
        let g = usize::from(g);
        loss -= probs.data[g * n + i].max(PROB_FLOOR).ln();
        for c in 0..probs.num_classes {
            let target = if c == g { 1.0 } else { 0.0 };
            grad[c * n + i] = (probs.data[c * n + i] - target) / valid;
        }
    }
    Ok(LossOutput {
        loss: loss / valid,
        grad,
    })
}

/// Soft Dice loss and its gradient with respect to the probabilities.
///
/// For each class `c` present in the ground truth (over non-ignore pixels):
/// `D_c = (2 * sum(p_c * g_c) + eps) / (sum(p_c) + sum(g_c) + eps)`, and the
/// loss is `1 - mean_c D_c`.
pub fn dice_loss_prob_grad(probs: &SoftPrediction, gt: &LabelMap) -> Result<(f64, Vec<f64>)> {
    check_pair(probs, gt)?;
    let n = probs.plane_len();
    let k = probs.num_classes;
    let mut inter = vec![0.0; k];
    let mut psum = vec![0.0; k];
    let mut gsum = vec![0.0; k];
    for (i, &g) in gt.data().iter().enumerate() {
        if g == IGNORE {
            continue;
        }
        let g = usize::from(g);
        for (c, s) in psum.iter_mut().enumerate() {
            *s += probs.data[c * n + i];
        }
        inter[g] += probs.data[g * n + i];
        gsum[g] += 1.0;
    }
    let present: Vec<usize> = (0..k).filter(|&c| gsum[c] > 0.0).collect();
    let m = present.len() as f64;
    let mut dice_sum = 0.0;
    let mut grad = vec![0.0; probs.data.len()];
    for &c in &present {
        let num = 2.0 * inter[c] + DICE_EPS;
        let den = psum[c] + gsum[c] + DICE_EPS;
        dice_sum += num / den;
        // d D_c / d p_ic = (2 g_ic den - num) / den^2
        for (i, &g) in gt.data().iter().enumerate() {
            if g == IGNORE {
                continue;
            }
            let g_ic = if usize::from(g) == c { 1.0 } else { 0.0 };
            grad[c * n + i] = -(2.0 * g_ic * den - num) / (den * den) / m;
        }
    }
    Ok((1.0 - dice_sum / m, grad))
}

/// Soft Dice loss with the gradient chained through the softmax.
pub fn dice_loss(probs: &SoftPrediction, gt: &LabelMap) -> Result<LossOutput> {
    let (loss, d_probs) = dice_loss_prob_grad(probs, gt)?;
    Ok(LossOutput {
        loss,
        grad: softmax_backward(probs, &d_probs),
    })
}

/// `w.ce * CE + w.dice * Dice`, gradients summed with the same weights.
pub fn joint_loss(probs: &SoftPrediction, gt: &LabelMap, w: LossWeights) -> Result<LossOutput> {
    let ce = cross_entropy_loss(probs, gt)?;
    let dice = dice_loss(probs, gt)?;
    Ok(LossOutput {
        loss: w.ce * ce.loss + w.dice * dice.loss,
        grad: ce
            .grad
            .iter()
            .zip(&dice.grad)
            .map(|(a, b)| w.ce * a + w.dice * b)
            .collect(),
    })
}
