use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Binary cross-entropy and its derivative with respect to `p`.
///
/// Where the clamp is active the derivative is zero, matching the clamped function.
pub fn bce_loss(p: f64, y: f64) -> (f64, f64) {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let grad = if pc != p { 0.0 } else { (p - y) / (p * (1.0 - p)) };
    (loss, grad)
}

/// `lambda * sum(w^2)` and its gradient `2 * lambda * w`.
pub fn l2_penalty(weights: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("negative L2 strength {lambda}")));
    }
    let penalty = lambda * weights.iter().map(|w| w * w).sum::<f64>();
    let grad = weights.iter().map(|w| 2.0 * lambda * w).collect();
    Ok((penalty, grad))
}
