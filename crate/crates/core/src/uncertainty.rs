//! Foreground/background binary entropy of detections, in nats.

use crate::error::{Error, Result};
use crate::pool::ImagePrediction;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-12;

/// Binary entropy of a validated probability. Callers guarantee `p ∈ [0, 1]`.
#[inline]
pub(crate) fn binary_entropy(p: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

pub fn instance_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(p));
    }
    Ok(binary_entropy(p))
}

/// Sum of instance entropies in instance order; 0 for an image without
/// instances.
pub fn basic_image_entropy(image: &ImagePrediction) -> f64 {
    image
        .instances
        .iter()
        .fold(0.0, |acc, inst| acc + binary_entropy(inst.score))
}
