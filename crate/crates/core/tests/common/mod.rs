//! Shared fixtures and straight-line reference implementations.
//!
//! The references below are written from the algorithm descriptions without
//! reusing any library internals, but they perform floating-point operations
//! in the same order so results can be compared with `==`.

#![allow(dead_code)]

use std::collections::BTreeMap;

use divproto_core::{
    AcquisitionConfig, ClassCounts, ImagePrediction, InstancePrediction, Phase, Pool,
    PrototypeSource,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- fixtures

/// Scores snap to a 0.05 grid half the time so entropy ties are common.
fn random_score(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        f64::from(rng.gen_range(0..=20u32)) * 0.05
    } else {
        rng.gen_range(0.0..=1.0)
    }
}

/// Features mix small integers (parallel and duplicate vectors), Gaussian
/// noise and the occasional zero vector.
fn random_feature(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    match rng.gen_range(0..10) {
        0 => vec![0.0; d],
        1..=4 => (0..d).map(|_| f64::from(rng.gen_range(-2..=2i32))).collect(),
        _ => (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

pub fn random_image(
    rng: &mut ChaCha8Rng,
    id: String,
    max_instances: usize,
    d: usize,
    num_classes: usize,
) -> ImagePrediction {
    let t = rng.gen_range(0..=max_instances);
    let instances = (0..t)
        .map(|_| {
            let c = rng.gen_range(0..num_classes);
            let p = random_score(rng);
            InstancePrediction::new(c, p, random_feature(rng, d))
        })
        .collect();
    ImagePrediction::new(id, instances)
}

/// Image ids are shuffled relative to pool order so id tie-breaks matter.
pub fn random_pool(
    rng: &mut ChaCha8Rng,
    max_images: usize,
    max_instances: usize,
    max_dim: usize,
    max_classes: usize,
) -> Pool {
    let n = rng.gen_range(1..=max_images);
    let d = rng.gen_range(1..=max_dim);
    let c = rng.gen_range(1..=max_classes);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let images = ids
        .into_iter()
        .map(|k| random_image(rng, format!("im{k:03}"), max_instances, d, c))
        .collect();
    Pool::new(d, c, images).expect("fixture pool is valid")
}

pub fn random_counts(rng: &mut ChaCha8Rng, num_classes: usize) -> ClassCounts {
    // few distinct values so count ties happen
    ClassCounts((0..num_classes).map(|_| rng.gen_range(0..6u64) * 5).collect())
}

pub fn random_config(rng: &mut ChaCha8Rng, n: usize) -> AcquisitionConfig {
    let alpha = rng.gen_range(0.05..0.6);
    let beta = rng.gen_range(alpha + 0.01..0.99);
    AcquisitionConfig {
        t_enms: rng.gen_range(-0.2..1.0),
        t_intra: rng.gen_range(0.0..1.0),
        t_inter: rng.gen_range(0.0..0.9),
        alpha,
        beta,
        budget_b: rng.gen_range(1..=n + 3),
        score_floor: 0.0,
        seed: rng.gen(),
        prototype_source: if rng.gen_bool(0.5) {
            PrototypeSource::All
        } else {
            PrototypeSource::EnmsRetained
        },
    }
}

// -------------------------------------------------------------- references

pub const EPS: f64 = 1e-12;
pub const MIN_NORM: f64 = 1e-12;

pub fn entropy(p: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn length(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (length(a), length(b));
    if na < MIN_NORM || nb < MIN_NORM {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Entropy-based NMS: returns the image entropy and the kept instances in
/// pick order.
pub fn ref_enms(image: &ImagePrediction, t_enms: f64) -> (f64, Vec<usize>) {
    let inst = &image.instances;
    let mut s: Vec<usize> = (0..inst.len()).collect();
    let mut e = 0.0;
    let mut kept = Vec::new();
    while !s.is_empty() {
        let mut at = 0;
        for pos in 1..s.len() {
            if entropy(inst[s[pos]].score) > entropy(inst[s[at]].score) {
                at = pos;
            }
        }
        let k = s.remove(at);
        e += entropy(inst[k].score);
        kept.push(k);
        let fk = &inst[k].feature;
        s.retain(|&j| {
            let fj = &inst[j].feature;
            let redundant = inst[j].category == inst[k].category
                && length(fj) >= MIN_NORM
                && length(fk) >= MIN_NORM
                && cos(fj, fk) > t_enms;
            !redundant
        });
    }
    (e, kept)
}

/// Entropy-weighted class prototypes over the given instances (ascending).
pub fn ref_prototypes(image: &ImagePrediction, members: &[usize]) -> BTreeMap<usize, Vec<f64>> {
    let mut classes: Vec<usize> = members.iter().map(|&k| image.instances[k].category).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = BTreeMap::new();
    for c in classes {
        let of_c: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&k| image.instances[k].category == c)
            .collect();
        let d = image.instances[of_c[0]].feature.len();
        let mut num = vec![0.0; d];
        let mut plain = vec![0.0; d];
        let mut den = 0.0;
        for &k in &of_c {
            let h = entropy(image.instances[k].score);
            for j in 0..d {
                num[j] += h * image.instances[k].feature[j];
                plain[j] += image.instances[k].feature[j];
            }
            den += h;
        }
        let v = if den < 1e-12 {
            plain.iter().map(|x| x / of_c.len() as f64).collect()
        } else {
            num.iter().map(|x| x / den).collect()
        };
        out.insert(c, v);
    }
    out
}

/// Intra-class metric against a list of accepted prototype maps.
pub fn ref_m_g(candidate: &BTreeMap<usize, Vec<f64>>, accepted: &[BTreeMap<usize, Vec<f64>>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut worst = f64::INFINITY;
    for (c, v) in candidate {
        let mut best: f64 = 0.0;
        for other in accepted {
            if let Some(u) = other.get(c) {
                best = best.max(cos(u, v));
            }
        }
        worst = worst.min(best);
    }
    worst
}

pub fn ref_presence(image: &ImagePrediction, c: usize) -> f64 {
    let mut best: f64 = 0.0;
    for inst in &image.instances {
        if inst.category == c {
            best = best.max(inst.score);
        }
    }
    best
}

pub fn ref_m_p(image: &ImagePrediction, minority: &[usize]) -> f64 {
    minority.iter().fold(0.0, |acc: f64, &c| acc.max(ref_presence(image, c)))
}

pub fn ref_minority(counts: &ClassCounts, alpha: f64) -> Vec<usize> {
    let c = counts.0.len();
    let mut take = (alpha * c as f64).round() as usize;
    take = take.max(1).min(c);
    let mut ids: Vec<usize> = (0..c).collect();
    // stable sort keeps lower ids first on equal counts
    ids.sort_by_key(|&k| counts.0[k]);
    ids.truncate(take);
    ids
}

pub fn ref_quota(c: usize, alpha: f64, beta: f64, b: usize) -> u64 {
    let q = (beta * b as f64 / (alpha * c as f64)).floor() as u64;
    q.max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefStep {
    pub image_id: String,
    pub phase: Phase,
    pub accepted: bool,
    pub entropy_e: f64,
    pub m_g: Option<f64>,
    pub m_p: Option<f64>,
    pub decremented: Vec<usize>,
    pub exhausted: Vec<usize>,
    /// Remaining quota of every initial minority class after this step.
    pub quotas_after: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefRun {
    pub selected: Vec<String>,
    pub steps: Vec<RefStep>,
    pub quotas_initial: BTreeMap<usize, u64>,
}

pub fn ref_divproto(pool: &Pool, counts: &ClassCounts, cfg: &AcquisitionConfig) -> RefRun {
    let n = pool.images.len();
    let mut e = vec![0.0; n];
    let mut protos = Vec::with_capacity(n);
    for (i, image) in pool.images.iter().enumerate() {
        let (ei, kept) = ref_enms(image, cfg.t_enms);
        e[i] = ei;
        let members: Vec<usize> = match cfg.prototype_source {
            PrototypeSource::All => (0..image.instances.len()).collect(),
            PrototypeSource::EnmsRetained => {
                let mut k = kept.clone();
                k.sort_unstable();
                k
            }
        };
        protos.push(ref_prototypes(image, &members));
    }

    let mut minority = ref_minority(counts, cfg.alpha);
    let q0 = ref_quota(pool.num_classes, cfg.alpha, cfg.beta, cfg.budget_b);
    let quotas_initial: BTreeMap<usize, u64> = minority.iter().map(|&c| (c, q0)).collect();
    let mut quotas = quotas_initial.clone();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        e[b].partial_cmp(&e[a])
            .unwrap()
            .then(pool.images[a].image_id.cmp(&pool.images[b].image_id))
    });
    let target = cfg.budget_b.min(n);

    let mut selected = Vec::new();
    let mut accepted_protos: Vec<BTreeMap<usize, Vec<f64>>> = Vec::new();
    let mut in_batch = vec![false; n];
    let mut steps = Vec::new();

    for &i in &order {
        if minority.is_empty() || selected.len() == target {
            break;
        }
        let image = &pool.images[i];
        let m_g = ref_m_g(&protos[i], &accepted_protos);
        let m_p = ref_m_p(image, &minority);
        let accepted = m_g < cfg.t_intra && m_p > cfg.t_inter;
        let mut decremented = Vec::new();
        let mut exhausted = Vec::new();
        if accepted {
            selected.push(image.image_id.clone());
            in_batch[i] = true;
            accepted_protos.push(protos[i].clone());
            for c in minority.clone() {
                if ref_presence(image, c) > cfg.t_inter {
                    let q = quotas.get_mut(&c).unwrap();
                    *q -= 1;
                    decremented.push(c);
                    if *q == 0 {
                        minority.retain(|&m| m != c);
                        exhausted.push(c);
                    }
                }
            }
        }
        steps.push(RefStep {
            image_id: image.image_id.clone(),
            phase: Phase::Balanced,
            accepted,
            entropy_e: e[i],
            m_g: Some(m_g),
            m_p: Some(m_p),
            decremented,
            exhausted,
            quotas_after: quotas.clone(),
        });
    }

    for &i in &order {
        if selected.len() == target {
            break;
        }
        if in_batch[i] {
            continue;
        }
        in_batch[i] = true;
        selected.push(pool.images[i].image_id.clone());
        steps.push(RefStep {
            image_id: pool.images[i].image_id.clone(),
            phase: Phase::Fillup,
            accepted: true,
            entropy_e: e[i],
            m_g: None,
            m_p: None,
            decremented: vec![],
            exhausted: vec![],
            quotas_after: quotas.clone(),
        });
    }

    RefRun {
        selected,
        steps,
        quotas_initial,
    }
}

/// Compares a library run against the reference, replaying the library's
/// audit to rebuild its quota trajectory. Returns a description of the first
/// difference.
pub fn compare_divproto(
    pool: &Pool,
    counts: &ClassCounts,
    cfg: &AcquisitionConfig,
) -> Result<(), String> {
    let got = divproto_core::divproto_select(pool, counts, cfg).map_err(|e| e.to_string())?;
    let want = ref_divproto(pool, counts, cfg);
    if got.selected != want.selected {
        return Err(format!("selected {:?} != {:?}", got.selected, want.selected));
    }
    let ledger = got.ledger.as_ref().ok_or("missing ledger trace")?;
    if ledger.quotas_initial != want.quotas_initial {
        return Err(format!(
            "initial quotas {:?} != {:?}",
            ledger.quotas_initial, want.quotas_initial
        ));
    }
    if got.audit.len() != want.steps.len() {
        return Err(format!("audit length {} != {}", got.audit.len(), want.steps.len()));
    }
    let mut quotas = ledger.quotas_initial.clone();
    for (k, (a, r)) in got.audit.iter().zip(&want.steps).enumerate() {
        for &c in &a.decremented {
            *quotas.get_mut(&c).ok_or("decrement of non-minority class")? -= 1;
        }
        let same = a.image_id == r.image_id
            && a.phase == r.phase
            && a.accepted == r.accepted
            && a.entropy_e == r.entropy_e
            && a.m_g == r.m_g
            && a.m_p == r.m_p
            && a.decremented == r.decremented
            && a.exhausted == r.exhausted
            && quotas == r.quotas_after;
        if !same {
            return Err(format!("step {k}: {a:?} vs {r:?} (quotas {quotas:?})"));
        }
    }
    if ledger.quotas_final != quotas {
        return Err(format!("final quotas {:?} != {:?}", ledger.quotas_final, quotas));
    }
    Ok(())
}

pub fn compare_enms(image: &ImagePrediction, t_enms: f64) -> Result<(), String> {
    let got = divproto_core::enms_image(image, t_enms);
    let (e, kept) = ref_enms(image, t_enms);
    if got.entropy_e != e || got.retained != kept {
        return Err(format!(
            "{}: got ({}, {:?}) want ({}, {:?})",
            image.image_id, got.entropy_e, got.retained, e, kept
        ));
    }
    Ok(())
}

/// Pool with continuous Gaussian features and scores, where exact ties have
/// probability zero.
pub fn gaussian_pool(rng: &mut ChaCha8Rng, n: usize, max_instances: usize, d: usize, c: usize) -> Pool {
    use rand_distr::{Distribution, StandardNormal};
    let images = (0..n)
        .map(|i| {
            let t = rng.gen_range(1..=max_instances);
            let instances = (0..t)
                .map(|_| {
                    let f: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
                    InstancePrediction::new(rng.gen_range(0..c), rng.gen_range(0.01..0.99), f)
                })
                .collect();
            ImagePrediction::new(format!("g{i:04}"), instances)
        })
        .collect();
    Pool::new(d, c, images).expect("fixture pool is valid")
}
