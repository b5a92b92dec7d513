//! Entropy-based non-maximum suppression.
//!
//! Instances are visited in order of decreasing entropy. Each visited
//! instance contributes its entropy to the image score and suppresses every
//! still-pending instance of the same category whose feature cosine
//! similarity to it exceeds the threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{ImagePrediction, Pool};
use crate::uncertainty::binary_entropy;

/// Norms below this are treated as zero vectors.
pub const MIN_NORM: f64 = 1e-12;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity given precomputed norms.
#[inline]
pub(crate) fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na < MIN_NORM || nb < MIN_NORM {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[inline]
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_norms(a, b, norm(a), norm(b))
}

/// `aᵀb / (‖a‖‖b‖)`, or 0 when either vector has (near) zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::VectorDimension(a.len(), b.len()));
    }
    Ok(cosine(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    /// Image entropy accumulated over the kept instances, in pick order.
    pub entropy_e: f64,
    /// Kept instance indices in pick order.
    pub retained: Vec<usize>,
}

impl ImageScore {
    pub fn suppressed(&self, image: &ImagePrediction) -> usize {
        image.instances.len() - self.retained.len()
    }
}

pub fn enms_image(image: &ImagePrediction, t_enms: f64) -> ImageScore {
    let instances = &image.instances;
    let entropies: Vec<f64> = instances.iter().map(|i| binary_entropy(i.score)).collect();
    let norms: Vec<f64> = instances.iter().map(|i| norm(&i.feature)).collect();
    let mut pending = vec![true; instances.len()];
    let mut remaining = instances.len();
    let mut entropy_e = 0.0;
    let mut retained = Vec::new();

    while remaining > 0 {
        // ties go to the lowest index
        let mut pick = usize::MAX;
        for k in 0..instances.len() {
            if pending[k] && (pick == usize::MAX || entropies[k] > entropies[pick]) {
                pick = k;
            }
        }
        pending[pick] = false;
        remaining -= 1;
        entropy_e += entropies[pick];
        retained.push(pick);

        if norms[pick] < MIN_NORM {
            continue;
        }
        let picked = &instances[pick];
        for j in 0..instances.len() {
            if !pending[j] || instances[j].category != picked.category || norms[j] < MIN_NORM {
                continue;
            }
            let sim = cosine_with_norms(&instances[j].feature, &picked.feature, norms[j], norms[pick]);
            if sim > t_enms {
                pending[j] = false;
                remaining -= 1;
            }
        }
    }

    ImageScore {
        image_id: image.image_id.clone(),
        entropy_e,
        retained,
    }
}

/// Runs ENMS over every image. Output order follows pool order regardless of
/// how the work is scheduled.
pub fn enms_pool(pool: &Pool, t_enms: f64) -> Vec<ImageScore> {
    pool.images
        .par_iter()
        .map(|image| enms_image(image, t_enms))
        .collect()
}
