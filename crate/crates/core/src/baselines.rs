//! Comparison acquisition policies and the policy registry.
//!
//! Randomized policies draw from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded
//! with `seed_from_u64(cfg.seed)`. An index in `0..n` is taken from one
//! `next_u64()` output `x` as `(x * n) >> 64` in 128-bit arithmetic.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AcquisitionConfig;
use crate::divproto::{divproto_select, entropy_order, AcquisitionResult, AuditRecord};
use crate::enms::{enms_pool, norm, MIN_NORM};
use crate::error::{Error, Result};
use crate::pool::{ClassCounts, Pool};
use crate::uncertainty::basic_image_entropy;

/// Largest pool `ub_pairwise` accepts without `force`.
pub const UB_IMAGE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyId {
    Random,
    EntropyTopk,
    CoresetKcenter,
    UbPairwise,
    EnmsOnly,
    Divproto,
}

impl PolicyId {
    pub const ALL: [PolicyId; 6] = [
        PolicyId::Random,
        PolicyId::EntropyTopk,
        PolicyId::CoresetKcenter,
        PolicyId::UbPairwise,
        PolicyId::EnmsOnly,
        PolicyId::Divproto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyId::Random => "random",
            PolicyId::EntropyTopk => "entropy_topk",
            PolicyId::CoresetKcenter => "coreset_kcenter",
            PolicyId::UbPairwise => "ub_pairwise",
            PolicyId::EnmsOnly => "enms_only",
            PolicyId::Divproto => "divproto",
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

/// Extra inputs some policies need.
#[derive(Debug, Clone, Default)]
pub struct PolicyOptions {
    /// Pool images already labeled; used as k-center seeds and never selected
    /// by `coreset_kcenter`.
    pub initial_centers: BTreeSet<String>,
    /// Lifts the `ub_pairwise` size guard.
    pub force: bool,
}

/// Runs any policy behind one interface.
pub fn run_policy(
    policy: PolicyId,
    pool: &Pool,
    counts: &ClassCounts,
    cfg: &AcquisitionConfig,
    opts: &PolicyOptions,
) -> Result<AcquisitionResult> {
    match policy {
        PolicyId::Random => random_select(pool, cfg),
        PolicyId::EntropyTopk => entropy_topk_select(pool, cfg),
        PolicyId::EnmsOnly => enms_only_select(pool, cfg),
        PolicyId::CoresetKcenter => coreset_kcenter_select(pool, cfg, &opts.initial_centers),
        PolicyId::UbPairwise => ub_pairwise_select(pool, cfg, opts.force),
        PolicyId::Divproto => divproto_select(pool, counts, cfg),
    }
}

fn ranked_result(
    policy: PolicyId,
    cfg: &AcquisitionConfig,
    audit: Vec<AuditRecord>,
    available: usize,
) -> AcquisitionResult {
    AcquisitionResult {
        policy,
        selected: audit.iter().map(|a| a.image_id.clone()).collect(),
        audit,
        config_echo: cfg.clone(),
        budget_truncated: cfg.budget_b > available,
        ledger: None,
    }
}

fn check(pool: &Pool, cfg: &AcquisitionConfig) -> Result<()> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(())
}

/// Index in `0..n` from one 64-bit draw.
#[inline]
pub fn draw_index(rng: &mut impl RngCore, n: usize) -> usize {
    ((u128::from(rng.next_u64()) * n as u128) >> 64) as usize
}

/// Uniform sample without replacement: the first `min(b, n)` distinct
/// indices drawn, in draw order.
pub fn random_select(pool: &Pool, cfg: &AcquisitionConfig) -> Result<AcquisitionResult> {
    check(pool, cfg)?;
    let n = pool.len();
    let target = cfg.budget_b.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = vec![false; n];
    let mut audit = Vec::with_capacity(target);
    while audit.len() < target {
        let i = draw_index(&mut rng, n);
        if !seen[i] {
            seen[i] = true;
            let image = &pool.images[i];
            audit.push(AuditRecord::ranked(&image.image_id, basic_image_entropy(image), None));
        }
    }
    Ok(ranked_result(PolicyId::Random, cfg, audit, n))
}

fn top_by_entropy(
    policy: PolicyId,
    pool: &Pool,
    cfg: &AcquisitionConfig,
    entropies: &[f64],
) -> AcquisitionResult {
    let order = entropy_order(pool, entropies);
    let audit = order
        .into_iter()
        .take(cfg.budget_b)
        .map(|i| AuditRecord::ranked(&pool.images[i].image_id, entropies[i], None))
        .collect();
    ranked_result(policy, cfg, audit, pool.len())
}

/// Top-b images by basic detection entropy.
pub fn entropy_topk_select(pool: &Pool, cfg: &AcquisitionConfig) -> Result<AcquisitionResult> {
    check(pool, cfg)?;
    let entropies: Vec<f64> = pool.images.par_iter().map(basic_image_entropy).collect();
    Ok(top_by_entropy(PolicyId::EntropyTopk, pool, cfg, &entropies))
}

/// Top-b images by entropy after ENMS.
pub fn enms_only_select(pool: &Pool, cfg: &AcquisitionConfig) -> Result<AcquisitionResult> {
    check(pool, cfg)?;
    let entropies: Vec<f64> = enms_pool(pool, cfg.t_enms).into_iter().map(|s| s.entropy_e).collect();
    Ok(top_by_entropy(PolicyId::EnmsOnly, pool, cfg, &entropies))
}

/// Unweighted mean of an image's instance features; zero for an empty image.
pub fn image_feature(pool: &Pool, index: usize) -> Vec<f64> {
    let image = &pool.images[index];
    let mut mean = vec![0.0; pool.feature_dim];
    if image.instances.is_empty() {
        return mean;
    }
    for inst in &image.instances {
        for (m, f) in mean.iter_mut().zip(&inst.feature) {
            *m += f;
        }
    }
    let n = image.instances.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Greedy k-center over image-level features.
///
/// Pool images named in `initial_centers` seed the center set and are not
/// candidates. Each step adds the candidate farthest from its nearest
/// center (ties to the smaller image id). With no seeds the first pick is the
/// candidate with the largest feature norm.
pub fn coreset_kcenter_select(
    pool: &Pool,
    cfg: &AcquisitionConfig,
    initial_centers: &BTreeSet<String>,
) -> Result<AcquisitionResult> {
    check(pool, cfg)?;
    let features: Vec<Vec<f64>> = (0..pool.len())
        .into_par_iter()
        .map(|i| image_feature(pool, i))
        .collect();

    let mut candidates: Vec<usize> = (0..pool.len())
        .filter(|&i| !initial_centers.contains(&pool.images[i].image_id))
        .collect();
    candidates.sort_by(|&a, &b| pool.images[a].image_id.cmp(&pool.images[b].image_id));
    let centers: Vec<usize> = (0..pool.len())
        .filter(|&i| initial_centers.contains(&pool.images[i].image_id))
        .collect();

    let target = cfg.budget_b.min(candidates.len());
    let mut min_dist: Vec<f64> = candidates
        .par_iter()
        .map(|&i| {
            centers
                .iter()
                .map(|&c| euclidean(&features[i], &features[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; candidates.len()];
    let mut audit = Vec::with_capacity(target);

    while audit.len() < target {
        let mut best = usize::MAX;
        let mut best_key = f64::NEG_INFINITY;
        for (slot, &i) in candidates.iter().enumerate() {
            if taken[slot] {
                continue;
            }
            let key = if centers.is_empty() && audit.is_empty() {
                norm(&features[i])
            } else {
                min_dist[slot]
            };
            if best == usize::MAX || key > best_key {
                best = slot;
                best_key = key;
            }
        }
        taken[best] = true;
        let picked = candidates[best];
        let image = &pool.images[picked];
        audit.push(AuditRecord::ranked(
            &image.image_id,
            basic_image_entropy(image),
            Some(best_key),
        ));
        let center = &features[picked];
        min_dist
            .par_iter_mut()
            .zip(candidates.par_iter())
            .for_each(|(d, &i)| {
                let nd = euclidean(&features[i], center);
                if nd < *d {
                    *d = nd;
                }
            });
    }
    Ok(ranked_result(PolicyId::CoresetKcenter, cfg, audit, candidates.len()))
}

#[inline]
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Naive global instance-pairwise diversity selection.
///
/// Cosine similarity is computed for every pair of instances in different
/// images, giving each image pair the max similarity over its instance
/// pairs. Greedy steps then pick the image maximizing
/// `E_i - max_j sim(i, j)` over already picked images `j` (0 before the first
/// pick), recomputing that max for every candidate at every step. Cost is
/// quadratic in the total instance count.
pub fn ub_pairwise_select(
    pool: &Pool,
    cfg: &AcquisitionConfig,
    force: bool,
) -> Result<AcquisitionResult> {
    check(pool, cfg)?;
    let n = pool.len();
    if n > UB_IMAGE_LIMIT && !force {
        return Err(Error::PoolTooLarge {
            images: n,
            limit: UB_IMAGE_LIMIT,
        });
    }
    let entropies: Vec<f64> = enms_pool(pool, cfg.t_enms).into_iter().map(|s| s.entropy_e).collect();

    let units: Vec<Vec<Vec<f64>>> = pool
        .images
        .par_iter()
        .map(|image| {
            image
                .instances
                .iter()
                .map(|inst| {
                    let nrm = norm(&inst.feature);
                    if nrm < MIN_NORM {
                        vec![0.0; inst.feature.len()]
                    } else {
                        inst.feature.iter().map(|v| v / nrm).collect()
                    }
                })
                .collect()
        })
        .collect();

    // upper[i][j - i - 1] = max instance similarity between images i < j
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    let mut best = f64::NEG_INFINITY;
                    for a in &units[i] {
                        for b in &units[j] {
                            best = best.max(dot_unrolled(a, b));
                        }
                    }
                    if best.is_finite() {
                        best.clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let sim = |i: usize, j: usize| {
        if i < j {
            upper[i][j - i - 1]
        } else {
            upper[j][i - j - 1]
        }
    };

    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by(|&a, &b| pool.images[a].image_id.cmp(&pool.images[b].image_id));

    let target = cfg.budget_b.min(n);
    let mut picked: Vec<usize> = Vec::with_capacity(target);
    let mut taken = vec![false; n];
    let mut audit = Vec::with_capacity(target);
    while picked.len() < target {
        let mut best = usize::MAX;
        let mut best_score = f64::NEG_INFINITY;
        for &i in &by_id {
            if taken[i] {
                continue;
            }
            let redundancy = if picked.is_empty() {
                0.0
            } else {
                picked.iter().fold(f64::NEG_INFINITY, |acc, &j| acc.max(sim(i, j)))
            };
            let score = entropies[i] - redundancy;
            if best == usize::MAX || score > best_score {
                best = i;
                best_score = score;
            }
        }
        taken[best] = true;
        picked.push(best);
        audit.push(AuditRecord::ranked(
            &pool.images[best].image_id,
            entropies[best],
            Some(best_score),
        ));
    }
    Ok(ranked_result(PolicyId::UbPairwise, cfg, audit, n))
}

/// Ids in `result.selected` that are not unique.
pub fn duplicate_ids(selected: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    selected
        .iter()
        .filter(|id| !seen.insert(id.as_str()))
        .cloned()
        .collect()
}
