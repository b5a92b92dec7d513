//! Synthetic prediction pools and a multi-cycle acquisition driver.
//!
//! The generator places one centroid per class on a sphere of radius
//! `centroid_separation`. Each image draws its object classes from a
//! power law `p(c) ∝ (c + 1)^(-skew)`. Same-class objects inside one image
//! share a per-image context offset, so they look alike and are what ENMS is
//! meant to collapse. Confidence is a logistic function of how far a feature
//! sits from its class centroid, plus noise.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{draw_index, run_policy, PolicyId, PolicyOptions};
use crate::config::AcquisitionConfig;
use crate::error::{Error, Result};
use crate::pool::{ClassCounts, ImagePrediction, InstancePrediction, Pool};
use crate::prototypes::image_prototypes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_images: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Power-law exponent of the class frequencies; 0 is uniform.
    pub skew: f64,
    pub centroid_separation: f64,
    /// Per-dimension standard deviation of features around their centroid.
    pub feature_noise: f64,
    /// Share of the feature variance common to same-class objects of one image.
    pub context_share: f64,
    pub score_bias: f64,
    pub score_slope: f64,
    pub score_noise: f64,
    /// Probability that a prediction carries a wrong category.
    pub confusion: f64,
    /// Images labeled before the first cycle.
    pub initial_labeled: usize,
    /// Logit sharpening per unit of labeled fraction.
    pub learning_effect: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            feature_dim: 32,
            num_images: 1000,
            min_instances: 1,
            max_instances: 8,
            skew: 1.0,
            centroid_separation: 1.0,
            feature_noise: 0.15,
            context_share: 0.7,
            score_bias: 1.0,
            score_slope: 2.0,
            score_noise: 1.0,
            confusion: 0.05,
            initial_labeled: 100,
            learning_effect: 0.0,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InfeasibleSpec(m.to_string()));
        if self.num_classes == 0 || self.feature_dim == 0 || self.num_images == 0 {
            return fail("num_classes, feature_dim and num_images must be positive");
        }
        if self.max_instances == 0 {
            return fail("max_instances must be positive");
        }
        if self.min_instances > self.max_instances {
            return fail("min_instances exceeds max_instances");
        }
        if !(0.0..).contains(&self.skew) {
            return fail("skew must be non-negative");
        }
        if !(0.0..).contains(&self.feature_noise) || !(0.0..).contains(&self.score_noise) {
            return fail("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.context_share) || !(0.0..=1.0).contains(&self.confusion) {
            return fail("context_share and confusion must lie in [0, 1]");
        }
        if !(self.centroid_separation.is_finite() && self.centroid_separation > 0.0) {
            return fail("centroid_separation must be positive");
        }
        if self.initial_labeled >= self.num_images {
            return fail("initial_labeled must leave unlabeled images");
        }
        Ok(())
    }

    /// Normalized target class distribution.
    pub fn class_distribution(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.num_classes)
            .map(|c| ((c + 1) as f64).powf(-self.skew))
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

/// A generated dataset: predictions with their latent logits, plus the true
/// object classes of every image.
#[derive(Debug, Clone)]
pub struct SimData {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub images: Vec<SimImage>,
}

#[derive(Debug, Clone)]
pub struct SimImage {
    pub image_id: String,
    pub predictions: Vec<SimPrediction>,
    pub truth: ClassCounts,
}

#[derive(Debug, Clone)]
pub struct SimPrediction {
    pub category: usize,
    pub logit: f64,
    pub feature: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SimData {
    /// Predictions for the selected image indices with logits scaled by
    /// `sharpen`, dropping instances scored below `score_floor`.
    pub fn view(&self, indices: &[usize], sharpen: f64, score_floor: f64) -> Result<Pool> {
        let images = indices
            .iter()
            .map(|&i| {
                let im = &self.images[i];
                ImagePrediction {
                    image_id: im.image_id.clone(),
                    instances: im
                        .predictions
                        .iter()
                        .map(|p| InstancePrediction::new(p.category, sigmoid(p.logit * sharpen), p.feature.clone()))
                        .filter(|inst| inst.score >= score_floor)
                        .collect(),
                }
            })
            .collect::<Vec<_>>();
        if images.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(Pool {
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            images,
        })
    }

    pub fn pool(&self) -> Pool {
        let all: Vec<usize> = (0..self.images.len()).collect();
        self.view(&all, 1.0, 0.0).expect("validated spec has images")
    }

    pub fn truth(&self) -> Vec<ClassCounts> {
        self.images.iter().map(|im| im.truth.clone()).collect()
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    spec.validate()?;
    let d = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let v = gaussian_vec(&mut rng, d, 1.0);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                break v.iter().map(|x| x / n * spec.centroid_separation).collect::<Vec<_>>();
            }
        })
        .collect();
    let classes = WeightedIndex::new(spec.class_distribution())
        .map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let ctx_sigma = spec.feature_noise * spec.context_share.sqrt();
    let own_sigma = spec.feature_noise * (1.0 - spec.context_share).sqrt();
    let scale = spec.feature_noise * (d as f64).sqrt();
    let width = (spec.num_images - 1).to_string().len();

    let images = (0..spec.num_images)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let t = rng.gen_range(spec.min_instances..=spec.max_instances);
            let mut truth = vec![0u64; spec.num_classes];
            let mut context: HashMap<usize, Vec<f64>> = HashMap::new();
            let mut predictions = Vec::with_capacity(t);
            for _ in 0..t {
                let c = classes.sample(&mut rng);
                truth[c] += 1;
                let offset = context
                    .entry(c)
                    .or_insert_with(|| gaussian_vec(&mut rng, d, ctx_sigma))
                    .clone();
                let own = gaussian_vec(&mut rng, d, own_sigma);
                let feature: Vec<f64> = centroids[c]
                    .iter()
                    .zip(&offset)
                    .zip(&own)
                    .map(|((m, o), e)| f64::from((m + o + e) as f32))
                    .collect();
                let dist = feature
                    .iter()
                    .zip(&centroids[c])
                    .map(|(f, m)| (f - m) * (f - m))
                    .sum::<f64>()
                    .sqrt();
                let z = if scale > 0.0 { dist / scale } else { 0.0 };
                let noise: f64 = StandardNormal.sample(&mut rng);
                let mut logit = spec.score_bias - spec.score_slope * (z - 1.0) + spec.score_noise * noise;
                let mut category = c;
                if spec.num_classes > 1 && rng.gen_bool(spec.confusion) {
                    category = (c + 1 + rng.gen_range(0..spec.num_classes - 1)) % spec.num_classes;
                    logit -= 1.5;
                }
                predictions.push(SimPrediction {
                    category,
                    logit,
                    feature,
                });
            }
            SimImage {
                image_id: format!("img{i:0width$}"),
                predictions,
                truth: ClassCounts(truth),
            }
        })
        .collect();

    Ok(SimData {
        feature_dim: d,
        num_classes: spec.num_classes,
        images,
    })
}

/// Pool of predictions plus per-image ground-truth class counts.
pub fn generate_pool(spec: &SimSpec) -> Result<(Pool, Vec<ClassCounts>)> {
    let data = generate(spec)?;
    Ok((data.pool(), data.truth()))
}

/// Population standard deviation of per-class counts.
pub fn class_balance_stddev(counts: &ClassCounts) -> f64 {
    let n = counts.0.len();
    if n == 0 {
        return 0.0;
    }
    let mean = counts.0.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
    let var = counts
        .0
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

/// Mean Euclidean distance of the vectors to their centroid.
pub fn prototype_dispersion(vectors: &[&[f64]]) -> f64 {
    let Some(first) = vectors.first() else {
        return 0.0;
    };
    let n = vectors.len() as f64;
    let mut centroid = vec![0.0; first.len()];
    for v in vectors {
        for (c, x) in centroid.iter_mut().zip(v.iter()) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    vectors
        .iter()
        .map(|v| {
            v.iter()
                .zip(&centroid)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n
}

/// Per-class dispersion of the prototypes of `images`.
pub fn dispersion_by_class(images: &[&ImagePrediction]) -> BTreeMap<usize, f64> {
    let sets: Vec<_> = images.iter().map(|im| image_prototypes(im)).collect();
    let mut grouped: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for set in &sets {
        for (&c, p) in &set.by_class {
            grouped.entry(c).or_default().push(&p.vector);
        }
    }
    grouped
        .into_iter()
        .map(|(c, v)| (c, prototype_dispersion(&v)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub selected: Vec<String>,
    /// Ground-truth class counts of this cycle's acquisition.
    pub acquired_counts: ClassCounts,
    pub acquired_stddev: f64,
    /// Ground-truth class counts of the whole labeled set after this cycle.
    pub labeled_counts: ClassCounts,
    pub labeled_stddev: f64,
    pub prototype_dispersion: BTreeMap<usize, f64>,
    pub acquisition_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub policy: PolicyId,
    pub initial_labeled: Vec<String>,
    pub initial_counts: ClassCounts,
    pub cycles: Vec<CycleRecord>,
    pub truncated: bool,
    pub config_echo: AcquisitionConfig,
    pub spec_echo: SimSpec,
}

impl CycleReport {
    /// Copy with all wall-clock fields zeroed.
    pub fn without_timing(&self) -> CycleReport {
        let mut r = self.clone();
        for c in &mut r.cycles {
            c.acquisition_seconds = 0.0;
        }
        r
    }

    pub fn final_labeled_stddev(&self) -> Option<f64> {
        self.cycles.last().map(|c| c.labeled_stddev)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "cycle,policy,num_selected,acquired_stddev,labeled_stddev,mean_dispersion,acquisition_seconds\n",
        );
        for c in &self.cycles {
            let mean_disp = if c.prototype_dispersion.is_empty() {
                0.0
            } else {
                c.prototype_dispersion.values().sum::<f64>() / c.prototype_dispersion.len() as f64
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.cycle,
                self.policy,
                c.selected.len(),
                c.acquired_stddev,
                c.labeled_stddev,
                mean_disp,
                c.acquisition_seconds
            ));
        }
        out
    }
}

/// Initial labeled indices: the first `k` distinct draws of a dedicated
/// stream, returned in pool order.
fn initial_split(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut chosen = vec![false; n];
    let mut left = k;
    while left > 0 {
        let i = draw_index(&mut rng, n);
        if !chosen[i] {
            chosen[i] = true;
            left -= 1;
        }
    }
    (0..n).filter(|&i| chosen[i]).collect()
}

pub fn run_cycles(
    spec: &SimSpec,
    policy: PolicyId,
    cfg: &AcquisitionConfig,
    cycles: usize,
) -> Result<CycleReport> {
    if cycles == 0 {
        return Err(Error::Config("cycles must be at least 1".into()));
    }
    cfg.validate()?;
    let data = generate(spec)?;
    run_cycles_on(&data, spec, policy, cfg, cycles)
}

/// Runs the loop over already generated data.
pub fn run_cycles_on(
    data: &SimData,
    spec: &SimSpec,
    policy: PolicyId,
    cfg: &AcquisitionConfig,
    cycles: usize,
) -> Result<CycleReport> {
    if cycles == 0 {
        return Err(Error::Config("cycles must be at least 1".into()));
    }
    let n = data.images.len();
    let index_of: HashMap<&str, usize> = data
        .images
        .iter()
        .enumerate()
        .map(|(i, im)| (im.image_id.as_str(), i))
        .collect();

    let mut labeled = vec![false; n];
    let initial = initial_split(n, spec.initial_labeled.min(n), spec.seed);
    let mut counts = ClassCounts::zeros(data.num_classes);
    for &i in &initial {
        labeled[i] = true;
        counts.add(&data.images[i].truth);
    }
    let initial_counts = counts.clone();
    let initial_labeled = initial.iter().map(|&i| data.images[i].image_id.clone()).collect();

    let mut records = Vec::with_capacity(cycles);
    let mut truncated = false;
    for cycle in 1..=cycles {
        let unlabeled: Vec<usize> = (0..n).filter(|&i| !labeled[i]).collect();
        if unlabeled.is_empty() {
            truncated = true;
            break;
        }
        let labeled_count = n - unlabeled.len();
        let sharpen = 1.0 + spec.learning_effect * labeled_count as f64 / n as f64;
        let cycle_cfg = AcquisitionConfig {
            seed: cfg.seed.wrapping_add(cycle as u64 - 1),
            ..cfg.clone()
        };

        let (view, opts) = if policy == PolicyId::CoresetKcenter {
            let all: Vec<usize> = (0..n).collect();
            let centers = (0..n)
                .filter(|&i| labeled[i])
                .map(|i| data.images[i].image_id.clone())
                .collect::<BTreeSet<_>>();
            (
                data.view(&all, sharpen, cfg.score_floor)?,
                PolicyOptions {
                    initial_centers: centers,
                    force: true,
                },
            )
        } else {
            (
                data.view(&unlabeled, sharpen, cfg.score_floor)?,
                PolicyOptions {
                    force: true,
                    ..PolicyOptions::default()
                },
            )
        };

        let started = Instant::now();
        let result = run_policy(policy, &view, &counts, &cycle_cfg, &opts)?;
        let seconds = started.elapsed().as_secs_f64();

        let mut acquired = ClassCounts::zeros(data.num_classes);
        let mut picked_images = Vec::with_capacity(result.selected.len());
        for id in &result.selected {
            let i = index_of[id.as_str()];
            if labeled[i] {
                return Err(Error::Selection(format!("image '{id}' selected twice")));
            }
            labeled[i] = true;
            acquired.add(&data.images[i].truth);
            picked_images.push(view.get(id).expect("selected id is in view"));
        }
        counts.add(&acquired);

        records.push(CycleRecord {
            cycle,
            acquired_stddev: class_balance_stddev(&acquired),
            acquired_counts: acquired,
            labeled_stddev: class_balance_stddev(&counts),
            labeled_counts: counts.clone(),
            prototype_dispersion: dispersion_by_class(&picked_images),
            selected: result.selected,
            acquisition_seconds: seconds,
        });
    }

    Ok(CycleReport {
        policy,
        initial_labeled,
        initial_counts,
        cycles: records,
        truncated,
        config_echo: cfg.clone(),
        spec_echo: spec.clone(),
    })
}
