use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use divproto_core::{AcquisitionConfig, Error, PolicyId, PrototypeSource};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "divproto", version, about = "Batch acquisition for detection active learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a batch of images from a prediction pool.
    Select(SelectArgs),
    /// Run acquisition cycles on a synthetic pool.
    Simulate(SimulateArgs),
    /// Time several policies on the same pool.
    Bench(BenchArgs),
    /// Class balance and prototype dispersion of a selection.
    Stats(StatsArgs),
}

/// Acquisition settings shared by every command. Values from `--config`
/// are applied first and explicit flags override them.
#[derive(Debug, Args)]
pub struct Tuning {
    /// Flat JSON object with AcquisitionConfig field names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel scoring.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub score_floor: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_enms: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t_intra: Option<f64>,
    #[arg(long)]
    pub t_inter: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// `all` or `enms_retained`.
    #[arg(long)]
    pub prototype_source: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub labeled_stats: Option<PathBuf>,
    #[arg(long, default_value = "divproto")]
    pub policy: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Lift the ub_pairwise pool size guard.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value = "divproto")]
    pub policy: String,
    #[arg(long)]
    pub cycles: usize,
    /// Report path; a `.csv` suffix writes one row per cycle instead of JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub policies: Vec<String>,
    #[arg(long)]
    pub labeled_stats: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Result file written by `select`.
    #[arg(long)]
    pub selection: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    /// Ground-truth class counts of the selected images, if known.
    #[arg(long)]
    pub labeled_stats: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

pub fn parse_policy(name: &str) -> Result<PolicyId, CliError> {
    name.trim().parse().map_err(CliError::Core)
}

impl Tuning {
    /// Builds the effective config. With `need_budget`, the budget must come
    /// from `--budget` or the config file.
    pub fn resolve(&self, need_budget: bool) -> Result<AcquisitionConfig, CliError> {
        let (mut cfg, file_budget) = match &self.config {
            Some(path) => {
                let text = read_text(path)?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let has_budget = value.get("budget_b").is_some();
                let cfg: AcquisitionConfig = serde_json::from_value(value)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                (cfg, has_budget)
            }
            None => (AcquisitionConfig::default(), false),
        };
        if need_budget && self.budget.is_none() && !file_budget {
            return Err(CliError::Usage("missing required flag --budget".into()));
        }
        if let Some(b) = self.budget {
            cfg.budget_b = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.score_floor {
            cfg.score_floor = v;
        }
        if let Some(v) = self.t_enms {
            cfg.t_enms = v;
        }
        if let Some(v) = self.t_intra {
            cfg.t_intra = v;
        }
        if let Some(v) = self.t_inter {
            cfg.t_inter = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(src) = &self.prototype_source {
            cfg.prototype_source = src.parse::<PrototypeSource>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuning(args: &[&str]) -> Tuning {
        let mut full = vec!["divproto", "stats", "--selection", "s", "--pool", "p"];
        full.extend_from_slice(args);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Stats(a) => a.tuning,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_without_flags() {
        let cfg = tuning(&[]).resolve(false).unwrap();
        assert_eq!(cfg, AcquisitionConfig::default());
    }

    #[test]
    fn flags_override() {
        let cfg = tuning(&["--t-enms", "-0.25", "--alpha", "0.3", "--prototype-source", "enms_retained"])
            .resolve(false)
            .unwrap();
        assert_eq!(cfg.t_enms, -0.25);
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.prototype_source, PrototypeSource::EnmsRetained);
    }

    #[test]
    fn budget_needed() {
        assert!(matches!(tuning(&[]).resolve(true), Err(CliError::Usage(m)) if m.contains("--budget")));
        assert_eq!(tuning(&["--budget", "12"]).resolve(true).unwrap().budget_b, 12);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(tuning(&["--beta", "0.2"]).resolve(false).is_err());
        assert!(tuning(&["--prototype-source", "some"]).resolve(false).is_err());
        assert!(parse_policy("ub_pairwise").is_ok());
        assert!(parse_policy("ub").is_err());
    }
}
