//! Training objectives: binary cross-entropy for the pair classifier and
//! the weighted head-pose regression loss used for pretraining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::NormalizedPose;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Cross-entropy of the predicted LAEO probability against class `c`
/// (0 = not LAEO, 1 = LAEO).
pub fn laeo_loss(c: usize, p_laeo: f64) -> f64 {
    debug_assert!(c <= 1);
    let p = p_laeo.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let c = c as f64;
    -(c * p.ln() + (1.0 - c) * (1.0 - p).ln())
}

/// Derivative of [`laeo_loss`] with respect to `p_laeo`; zero where clamped.
pub fn laeo_loss_grad(c: usize, p_laeo: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p_laeo) {
        return 0.0;
    }
    let c = c as f64;
    -c / p_laeo + (1.0 - c) / (1.0 - p_laeo)
}

/// Gradient of `laeo_loss(c, softmax(logits)[1])` with respect to the two
/// logits: `softmax - onehot(c)`, or zero once the probability is clamped.
pub fn laeo_logit_grad(c: usize, probs: &[f64]) -> [f64; 2] {
    let p = probs[1];
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return [0.0, 0.0];
    }
    let mut g = [probs[0], probs[1]];
    g[c] -= 1.0;
    g
}

/// `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// +1, -1 or 0.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// 1 when the predicted and true yaw have strictly opposite signs, else 0.
pub fn sign_loss(yaw_pred: f64, yaw_true: f64) -> f64 {
    f64::max(0.0, -sign(yaw_pred) * sign(yaw_true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseLossWeights {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub sign: f64,
}

impl Default for PoseLossWeights {
    fn default() -> Self {
        Self {
            yaw: 0.6,
            pitch: 0.3,
            roll: 0.1,
            sign: 0.1,
        }
    }
}

impl PoseLossWeights {
    pub fn new(yaw: f64, pitch: f64, roll: f64, sign: f64) -> Result<Self> {
        let w = Self { yaw, pitch, roll, sign };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.yaw, self.pitch, self.roll, self.sign] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidValue(format!("pose loss weight {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Weighted sum of per-angle smooth-L1 errors plus the yaw sign term, all
/// in normalized units.
pub fn head_pose_loss(pred: &NormalizedPose, target: &NormalizedPose, w: &PoseLossWeights) -> f64 {
    w.yaw * smooth_l1(pred.yaw - target.yaw)
        + w.pitch * smooth_l1(pred.pitch - target.pitch)
        + w.roll * smooth_l1(pred.roll - target.roll)
        + w.sign * sign_loss(pred.yaw, target.yaw)
}

/// Gradient of [`head_pose_loss`] w.r.t. the prediction. The sign term is
/// piecewise constant and contributes nothing.
pub fn head_pose_loss_grad(pred: &NormalizedPose, target: &NormalizedPose, w: &PoseLossWeights) -> [f64; 3] {
    [
        w.yaw * smooth_l1_grad(pred.yaw - target.yaw),
        w.pitch * smooth_l1_grad(pred.pitch - target.pitch),
        w.roll * smooth_l1_grad(pred.roll - target.roll),
    ]
}
