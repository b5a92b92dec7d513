//! Wall-clock comparison of acquisition policies on one input.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_policy, PolicyId, PolicyOptions};
use crate::config::AcquisitionConfig;
use crate::error::Result;
use crate::pool::{ClassCounts, Pool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub policy: PolicyId,
    pub seconds: f64,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub images: usize,
    pub instances: usize,
    pub feature_dim: usize,
    pub rows: Vec<BenchRow>,
    pub config_echo: AcquisitionConfig,
}

impl BenchReport {
    pub fn seconds(&self, policy: PolicyId) -> Option<f64> {
        self.rows.iter().find(|r| r.policy == policy).map(|r| r.seconds)
    }

    /// Fixed-width text table, one row per policy.
    pub fn render_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.policy.as_str().len())
            .max()
            .unwrap_or(0)
            .max("policy".len());
        let mut out = format!(
            "# images={} instances={} d={} budget={}\n",
            self.images, self.instances, self.feature_dim, self.config_echo.budget_b
        );
        out.push_str(&format!("{:<name_w$}  {:>12}  {:>8}\n", "policy", "seconds", "selected"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<name_w$}  {:>12.6}  {:>8}\n",
                r.policy.as_str(),
                r.seconds,
                r.selected
            ));
        }
        out
    }
}

/// Times each policy once on the same pool, in the order given.
pub fn bench_policies(
    pool: &Pool,
    counts: &ClassCounts,
    cfg: &AcquisitionConfig,
    policies: &[PolicyId],
    opts: &PolicyOptions,
) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(policies.len());
    for &policy in policies {
        let started = Instant::now();
        let result = run_policy(policy, pool, counts, cfg, opts)?;
        rows.push(BenchRow {
            policy,
            seconds: started.elapsed().as_secs_f64(),
            selected: result.selected.len(),
        });
    }
    Ok(BenchReport {
        images: pool.len(),
        instances: pool.total_instances(),
        feature_dim: pool.feature_dim,
        rows,
        config_echo: cfg.clone(),
    })
}

/// Least-squares slope of `ln(seconds)` against `ln(size)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{ImagePrediction, InstancePrediction};

    #[test]
    fn single_policy_single_row() {
        let pool = Pool::new(
            1,
            1,
            vec![ImagePrediction::new("a", vec![InstancePrediction::new(0, 0.5, vec![1.0])])],
        )
        .unwrap();
        let report = bench_policies(
            &pool,
            &ClassCounts::zeros(1),
            &AcquisitionConfig::with_budget(1),
            &[PolicyId::Divproto],
            &PolicyOptions::default(),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        let table = report.render_table();
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("divproto"));
    }

    #[test]
    fn slope_of_power_law() {
        let pts = [(10.0, 3.0 * 100.0), (100.0, 3.0 * 10000.0)];
        assert!((log_log_slope(&pts) - 2.0).abs() < 1e-12);
    }
}
