//! Class-weighted cross-entropy and soft dice losses over per-pixel
//! softmax outputs, combined by their mean. Gradients are returned with
//! respect to the pre-softmax logits so the network backward pass can
//! consume them directly.

use thiserror::Error;

use crate::imagery::UNLABELED;
use crate::net::Batch;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("target length {got} does not match batch pixel count {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("target label {0} out of range for {1} classes")]
    LabelOutOfRange(u8, usize),
    #[error("all pixels ignored")]
    AllIgnored,
}

/// Per-class weighting derived from the current label proportions.
///
/// Cross-entropy weights are `1/r_m`, dice weights `1/sqrt(r_m)`, where
/// `r_m` is the proportion of class `m` among non-ignored pixels. Classes
/// with no pixels get `r_m` clamped to `1/(10 * total_pixels)` so the
/// weights stay finite.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub num_classes: usize,
    pub class_proportions: Vec<f64>,
    pub ce_weights: Vec<f64>,
    pub dice_weights: Vec<f64>,
    pub ignore_label: u8,
    pub eps_d: f64,
    pub prob_clamp: f64,
}

impl LossConfig {
    /// Equal weights for every class.
    pub fn uniform(num_classes: usize) -> Self {
        let r = 1.0 / num_classes as f64;
        Self::from_proportions(vec![r; num_classes])
    }

    pub fn from_proportions(class_proportions: Vec<f64>) -> Self {
        let ce_weights: Vec<f64> = class_proportions.iter().map(|&r| 1.0 / r).collect();
        let dice_weights: Vec<f64> = class_proportions.iter().map(|&r| 1.0 / r.sqrt()).collect();
        LossConfig {
            num_classes: class_proportions.len(),
            class_proportions,
            ce_weights,
            dice_weights,
            ignore_label: UNLABELED,
            eps_d: 1e-6,
            prob_clamp: 1e-12,
        }
    }

    /// Estimates class proportions from label maps (ignored pixels
    /// excluded) and derives the weights.
    pub fn from_labels<'a, I>(labels: I, num_classes: usize) -> Self
    where
        I: IntoIterator<Item = &'a [u8]>,
    {
        let mut counts = vec![0usize; num_classes];
        let mut total = 0usize;
        for map in labels {
            for &l in map {
                if l == UNLABELED {
                    continue;
                }
                counts[l as usize] += 1;
                total += 1;
            }
        }
        let total = total.max(1);
        let floor = 1.0 / (10.0 * total as f64);
        let props: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 / total as f64).max(floor))
            .collect();
        Self::from_proportions(props)
    }
}

fn check(probs: &Batch, targets: &[u8], cfg: &LossConfig) -> Result<(), LossError> {
    let want = probs.n * probs.h * probs.w;
    if targets.len() != want {
        return Err(LossError::ShapeMismatch {
            got: targets.len(),
            want,
        });
    }
    for &t in targets {
        if t != cfg.ignore_label && (t as usize) >= cfg.num_classes {
            return Err(LossError::LabelOutOfRange(t, cfg.num_classes));
        }
    }
    if targets.iter().all(|&t| t == cfg.ignore_label) {
        return Err(LossError::AllIgnored);
    }
    Ok(())
}

/// Weight-normalized cross-entropy:
/// `-sum_i w_{y_i} log p_{i,y_i} / sum_i w_{y_i}` over non-ignored pixels.
/// Returns the loss and its gradient w.r.t. the pre-softmax logits.
pub fn weighted_ce(
    probs: &Batch,
    targets: &[u8],
    cfg: &LossConfig,
) -> Result<(f64, Batch), LossError> {
    check(probs, targets, cfg)?;
    let plane = probs.h * probs.w;
    let m = probs.c;
    let mut weight_sum = 0.0;
    let mut loss = 0.0;
    for n in 0..probs.n {
        for i in 0..plane {
            let t = targets[n * plane + i];
            if t == cfg.ignore_label {
                continue;
            }
            let w = cfg.ce_weights[t as usize];
            weight_sum += w;
            let p = probs.data[(n * m + t as usize) * plane + i].max(cfg.prob_clamp);
            loss -= w * p.ln();
        }
    }
    let mut grad = Batch::zeros(probs.n, m, probs.h, probs.w);
    for n in 0..probs.n {
        for i in 0..plane {
            let t = targets[n * plane + i];
            if t == cfg.ignore_label {
                continue;
            }
            let w = cfg.ce_weights[t as usize] / weight_sum;
            for c in 0..m {
                let p = probs.data[(n * m + c) * plane + i];
                let ind = if c == t as usize { 1.0 } else { 0.0 };
                grad.data[(n * m + c) * plane + i] = w * (p - ind);
            }
        }
    }
    Ok((loss / weight_sum, grad))
}

/// Soft dice loss over the pooled batch: per class
/// `d_m = (2 sum p t + eps) / (sum p + sum t + eps)` over non-ignored
/// pixels, `loss = 1 - sum w_m d_m / sum w_m`. Gradient is w.r.t. the
/// pre-softmax logits (chained through the softmax Jacobian).
pub fn dice_loss(
    probs: &Batch,
    targets: &[u8],
    cfg: &LossConfig,
) -> Result<(f64, Batch), LossError> {
    check(probs, targets, cfg)?;
    let plane = probs.h * probs.w;
    let m = probs.c;
    let mut inter = vec![0.0f64; m]; // sum p*t per class
    let mut psum = vec![0.0f64; m];
    let mut tsum = vec![0.0f64; m];
    for n in 0..probs.n {
        for i in 0..plane {
            let t = targets[n * plane + i];
            if t == cfg.ignore_label {
                continue;
            }
            for c in 0..m {
                let p = probs.data[(n * m + c) * plane + i];
                psum[c] += p;
                if c == t as usize {
                    inter[c] += p;
                    tsum[c] += 1.0;
                }
            }
        }
    }
    let wsum: f64 = cfg.dice_weights.iter().sum();
    let mut loss = 1.0;
    // d(d_m)/d(numerator contributions): per pixel,
    //   d d_m / d p_{i,m} = (2 t - d_m') / denom with the quotient rule
    let mut num = vec![0.0f64; m];
    let mut den = vec![0.0f64; m];
    for c in 0..m {
        num[c] = 2.0 * inter[c] + cfg.eps_d;
        den[c] = psum[c] + tsum[c] + cfg.eps_d;
        loss -= cfg.dice_weights[c] / wsum * num[c] / den[c];
    }
    // gradient w.r.t. probabilities, then through softmax
    let mut grad = Batch::zeros(probs.n, m, probs.h, probs.w);
    for n in 0..probs.n {
        for i in 0..plane {
            let t = targets[n * plane + i];
            if t == cfg.ignore_label {
                continue;
            }
            // dL/dp for each class at this pixel
            let mut dp = vec![0.0f64; m];
            for c in 0..m {
                let tc = if c == t as usize { 1.0 } else { 0.0 };
                let dd = (2.0 * tc * den[c] - num[c]) / (den[c] * den[c]);
                dp[c] = -cfg.dice_weights[c] / wsum * dd;
            }
            // softmax Jacobian: dz_c = p_c (dp_c - sum_k dp_k p_k)
            let mut dot = 0.0;
            for c in 0..m {
                dot += dp[c] * probs.data[(n * m + c) * plane + i];
            }
            for c in 0..m {
                let p = probs.data[(n * m + c) * plane + i];
                grad.data[(n * m + c) * plane + i] = p * (dp[c] - dot);
            }
        }
    }
    Ok((loss, grad))
}

/// Mean of the weighted cross-entropy and dice losses, with the mean of
/// their logit gradients.
pub fn combined_loss(
    probs: &Batch,
    targets: &[u8],
    cfg: &LossConfig,
) -> Result<(f64, Batch), LossError> {
    let (ce, mut ce_grad) = weighted_ce(probs, targets, cfg)?;
    let (dice, dice_grad) = dice_loss(probs, targets, cfg)?;
    for (a, b) in ce_grad.data.iter_mut().zip(&dice_grad.data) {
        *a = 0.5 * (*a + b);
    }
    Ok((0.5 * (ce + dice), ce_grad))
}
