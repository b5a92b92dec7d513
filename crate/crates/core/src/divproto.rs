//! Diverse-prototype batch acquisition.
//!
//! Images are ranked by their ENMS entropy and scanned once. A candidate is
//! accepted while its prototypes are not redundant with the prototypes
//! already accepted in this batch (intra-class metric below `t_intra`) and it
//! likely contains a minority class that still has quota (inter-class metric
//! above `t_inter`). The scan stops when the minority set or the budget is
//! used up; any remaining budget is filled with the highest-entropy images
//! not yet taken.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::PolicyId;
use crate::config::{AcquisitionConfig, PrototypeSource};
use crate::enms::{cosine_with_norms, enms_image, ImageScore};
use crate::error::{Error, Result};
use crate::pool::{ClassCounts, ImagePrediction, Pool};
use crate::prototypes::{image_prototypes, prototypes_over, Prototype, PrototypeSet};

/// Minority classes and their remaining per-class budgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaLedger {
    minority: Vec<usize>,
    quotas: BTreeMap<usize, u64>,
}

impl QuotaLedger {
    /// Builds a ledger from explicit members, all with the same quota.
    pub fn new(minority: Vec<usize>, quota: u64) -> Self {
        let quotas = minority.iter().map(|&c| (c, quota.max(1))).collect();
        Self { minority, quotas }
    }

    /// Current minority classes in construction order.
    pub fn minority(&self) -> &[usize] {
        &self.minority
    }

    pub fn quota(&self, category: usize) -> Option<u64> {
        self.quotas.get(&category).copied()
    }

    pub fn quotas(&self) -> &BTreeMap<usize, u64> {
        &self.quotas
    }

    pub fn is_empty(&self) -> bool {
        self.minority.is_empty()
    }

    pub fn total_remaining(&self) -> u64 {
        self.quotas.values().sum()
    }

    /// Takes one unit of quota from `category`. Returns true when that
    /// exhausts it, in which case the class leaves the minority set.
    fn decrement(&mut self, category: usize) -> bool {
        let Some(q) = self.quotas.get_mut(&category) else {
            return false;
        };
        *q -= 1;
        if *q == 0 {
            self.quotas.remove(&category);
            self.minority.retain(|&c| c != category);
            true
        } else {
            false
        }
    }
}

/// Number of minority classes: `max(1, round(alpha * C))`.
pub fn minority_count(num_classes: usize, alpha: f64) -> usize {
    ((alpha * num_classes as f64).round() as usize).clamp(1, num_classes.max(1))
}

/// Per-class quota: `max(1, floor(beta * b / (alpha * C)))`.
pub fn class_quota(num_classes: usize, alpha: f64, beta: f64, budget: usize) -> u64 {
    let q = (beta * budget as f64 / (alpha * num_classes as f64)).floor();
    (q as u64).max(1)
}

/// Picks the `alpha`-fraction of classes with the fewest labeled instances
/// (ties to the lower id) and gives each the same quota.
pub fn build_minority_set(counts: &ClassCounts, cfg: &AcquisitionConfig) -> QuotaLedger {
    let num_classes = counts.num_classes();
    let take = minority_count(num_classes, cfg.alpha);
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by_key(|&c| (counts.0[c], c));
    order.truncate(take);
    QuotaLedger::new(order, class_quota(num_classes, cfg.alpha, cfg.beta, cfg.budget_b))
}

/// Max score among the image's instances of `category`; 0 when absent.
pub fn class_presence(image: &ImagePrediction, category: usize) -> f64 {
    image
        .instances
        .iter()
        .filter(|inst| inst.category == category)
        .fold(0.0, |acc, inst| acc.max(inst.score))
}

/// Max presence over the current minority classes; 0 for an empty set.
pub fn inter_class_metric(image: &ImagePrediction, ledger: &QuotaLedger) -> f64 {
    ledger
        .minority()
        .iter()
        .fold(0.0, |acc, &c| acc.max(class_presence(image, c)))
}

/// Redundancy of `candidate` against prototypes grouped by class.
///
/// For every class the candidate holds, the best similarity to a selected
/// prototype of that class is taken, floored at 0 (a class no selected image
/// holds scores 0). The result is the minimum over the candidate's classes,
/// or 0 when the candidate has none.
fn intra_metric_by_class<'a, F>(candidate: &PrototypeSet, mut selected_of: F) -> f64
where
    F: FnMut(usize) -> &'a [&'a Prototype],
{
    let mut metric = f64::INFINITY;
    for (&c, proto) in &candidate.by_class {
        let best = selected_of(c).iter().fold(0.0_f64, |acc, other| {
            acc.max(cosine_with_norms(
                &other.vector,
                &proto.vector,
                other.norm,
                proto.norm,
            ))
        });
        metric = metric.min(best);
        if metric <= 0.0 {
            break;
        }
    }
    if metric.is_finite() {
        metric
    } else {
        0.0
    }
}

/// Intra-class redundancy of a candidate against already selected images.
pub fn intra_class_metric(candidate: &PrototypeSet, selected: &[PrototypeSet]) -> Result<f64> {
    let dim = candidate.by_class.values().next().map(|p| p.vector.len());
    if let Some(d) = dim {
        for set in selected {
            for p in set.by_class.values() {
                if p.vector.len() != d {
                    return Err(Error::VectorDimension(d, p.vector.len()));
                }
            }
        }
        for p in candidate.by_class.values() {
            if p.vector.len() != d {
                return Err(Error::VectorDimension(d, p.vector.len()));
            }
        }
    }
    let mut grouped: BTreeMap<usize, Vec<&Prototype>> = BTreeMap::new();
    for set in selected {
        for (&c, p) in &set.by_class {
            grouped.entry(c).or_default().push(p);
        }
    }
    Ok(intra_metric_by_class(candidate, |c| {
        grouped.get(&c).map(|v| v.as_slice()).unwrap_or(&[])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Scanned under the redundancy and minority-quota checks.
    Balanced,
    /// Taken to fill the remaining budget.
    Fillup,
    /// Chosen by a baseline policy's ranking.
    Ranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub image_id: String,
    pub phase: Phase,
    pub accepted: bool,
    pub entropy_e: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m_p: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub decremented: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub exhausted: Vec<usize>,
    /// Policy-specific ranking score for baseline policies.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
}

impl AuditRecord {
    pub(crate) fn ranked(image_id: &str, entropy_e: f64, score: Option<f64>) -> Self {
        Self {
            image_id: image_id.to_string(),
            phase: Phase::Ranked,
            accepted: true,
            entropy_e,
            m_g: None,
            m_p: None,
            decremented: Vec::new(),
            exhausted: Vec::new(),
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerTrace {
    pub minority_initial: Vec<usize>,
    pub quotas_initial: BTreeMap<usize, u64>,
    /// Remaining quota per initial minority class (0 once exhausted).
    pub quotas_final: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub policy: PolicyId,
    pub selected: Vec<String>,
    pub audit: Vec<AuditRecord>,
    pub config_echo: AcquisitionConfig,
    pub budget_truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ledger: Option<LedgerTrace>,
}

impl AcquisitionResult {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// ENMS score and prototypes for every image, in pool order.
pub fn score_pool(pool: &Pool, cfg: &AcquisitionConfig) -> Vec<(ImageScore, PrototypeSet)> {
    pool.images
        .par_iter()
        .map(|image| {
            let score = enms_image(image, cfg.t_enms);
            let protos = match cfg.prototype_source {
                PrototypeSource::All => image_prototypes(image),
                PrototypeSource::EnmsRetained => {
                    let mut kept = score.retained.clone();
                    kept.sort_unstable();
                    prototypes_over(image, kept)
                }
            };
            (score, protos)
        })
        .collect()
}

/// Pool indices ordered by decreasing entropy, ties by ascending image id.
pub(crate) fn entropy_order(pool: &Pool, entropies: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        entropies[b]
            .total_cmp(&entropies[a])
            .then_with(|| pool.images[a].image_id.cmp(&pool.images[b].image_id))
    });
    order
}

pub fn divproto_select(
    pool: &Pool,
    counts: &ClassCounts,
    cfg: &AcquisitionConfig,
) -> Result<AcquisitionResult> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if counts.num_classes() != pool.num_classes {
        return Err(Error::Config(format!(
            "labeled stats declare {} classes, pool declares {}",
            counts.num_classes(),
            pool.num_classes
        )));
    }

    let scored = score_pool(pool, cfg);
    let mut ledger = build_minority_set(counts, cfg);
    let minority_initial = ledger.minority().to_vec();
    let quotas_initial = ledger.quotas().clone();

    let entropies: Vec<f64> = scored.iter().map(|(s, _)| s.entropy_e).collect();
    let order = entropy_order(pool, &entropies);
    let target = cfg.budget_b.min(pool.len());

    let mut taken = vec![false; pool.len()];
    let mut selected = Vec::with_capacity(target);
    let mut audit = Vec::new();
    let mut accepted_by_class: Vec<Vec<&Prototype>> = vec![Vec::new(); pool.num_classes];

    for &i in &order {
        if ledger.is_empty() || selected.len() >= target {
            break;
        }
        let image = &pool.images[i];
        let protos = &scored[i].1;
        let m_g = intra_metric_by_class(protos, |c| accepted_by_class[c].as_slice());
        let m_p = inter_class_metric(image, &ledger);
        let accept = m_g < cfg.t_intra && m_p > cfg.t_inter;

        let mut decremented = Vec::new();
        let mut exhausted = Vec::new();
        if accept {
            for c in ledger.minority().to_vec() {
                if class_presence(image, c) > cfg.t_inter {
                    decremented.push(c);
                    if ledger.decrement(c) {
                        exhausted.push(c);
                    }
                }
            }
            taken[i] = true;
            selected.push(image.image_id.clone());
            for (&c, p) in &protos.by_class {
                accepted_by_class[c].push(p);
            }
        }
        audit.push(AuditRecord {
            image_id: image.image_id.clone(),
            phase: Phase::Balanced,
            accepted: accept,
            entropy_e: entropies[i],
            m_g: Some(m_g),
            m_p: Some(m_p),
            decremented,
            exhausted,
            score: None,
        });
    }

    for &i in &order {
        if selected.len() >= target {
            break;
        }
        if taken[i] {
            continue;
        }
        taken[i] = true;
        let id = &pool.images[i].image_id;
        selected.push(id.clone());
        audit.push(AuditRecord {
            image_id: id.clone(),
            phase: Phase::Fillup,
            accepted: true,
            entropy_e: entropies[i],
            m_g: None,
            m_p: None,
            decremented: Vec::new(),
            exhausted: Vec::new(),
            score: None,
        });
    }

    let quotas_final = quotas_initial
        .keys()
        .map(|&c| (c, ledger.quota(c).unwrap_or(0)))
        .collect();

    Ok(AcquisitionResult {
        policy: PolicyId::Divproto,
        selected,
        audit,
        config_echo: cfg.clone(),
        budget_truncated: cfg.budget_b > pool.len(),
        ledger: Some(LedgerTrace {
            minority_initial,
            quotas_initial,
            quotas_final,
        }),
    })
}
