use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which instances feed the per-class prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSource {
    /// Every post-NMS instance of the image.
    #[default]
    All,
    /// Only the instances kept by entropy-based NMS.
    EnmsRetained,
}

impl std::str::FromStr for PrototypeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "enms_retained" => Ok(Self::EnmsRetained),
            other => Err(Error::Config(format!(
                "prototype_source must be 'all' or 'enms_retained', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Same-class feature similarity above which ENMS suppresses an instance.
    pub t_enms: f64,
    /// Candidates with intra-class metric at or above this are rejected.
    pub t_intra: f64,
    /// Minimum class presence for a minority class to count.
    pub t_inter: f64,
    /// Fraction of classes treated as minority.
    pub alpha: f64,
    /// Fraction of the budget reserved for minority classes.
    pub beta: f64,
    pub budget_b: usize,
    pub score_floor: f64,
    pub seed: u64,
    pub prototype_source: PrototypeSource,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            t_enms: 0.5,
            t_intra: 0.7,
            t_inter: 0.3,
            alpha: 0.5,
            beta: 0.75,
            budget_b: 1,
            score_floor: 0.05,
            seed: 0,
            prototype_source: PrototypeSource::All,
        }
    }
}

impl AcquisitionConfig {
    pub fn with_budget(budget_b: usize) -> Self {
        Self {
            budget_b,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}={v} outside [{lo}, {hi}]")))
            }
        };
        in_range("t_enms", self.t_enms, -1.0, 1.0)?;
        in_range("t_intra", self.t_intra, -1.0, 1.0)?;
        in_range("t_inter", self.t_inter, 0.0, 1.0)?;
        in_range("score_floor", self.score_floor, 0.0, 1.0)?;
        if !(self.alpha > 0.0 && self.alpha < self.beta && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha < beta < 1, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.budget_b == 0 {
            return Err(Error::Config("budget_b must be at least 1".into()));
        }
        Ok(())
    }
}
