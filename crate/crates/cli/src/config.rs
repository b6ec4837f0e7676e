//! The JSON run configuration: a `design` section for choices made by the
//! trial team, an `assumptions` section for the assumed state of the world,
//! a `simulation` section for Monte Carlo settings, and an `execution`
//! section for where and how results are written. Every field is optional
//! and defaults to the published study.

use std::path::{Path, PathBuf};

use platsim::decisions::{default_rules, AnalysisRules, DecisionRuleSet};
use platsim::experiments::{CorrelationModel, ScenarioGrid};
use platsim::posterior::BetaDistribution;
use platsim::trial::{DataSharing, PlatformConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub design: Design,
    pub assumptions: Assumptions,
    pub simulation: Simulation,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Settings that do not affect results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Execution {
    pub out_dir: PathBuf,
    pub format: Format,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
}

impl Default for Execution {
    fn default() -> Self {
        Execution {
            out_dir: PathBuf::from("results"),
            format: Format::Csv,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Design {
    pub initial_cohorts: u32,
    pub cohort_limit: u32,
    pub observation_lag_weeks: u32,
    pub interim_fractions: Vec<f64>,
    pub n_per_arm: Vec<u32>,
    pub data_sharing: Vec<DataSharing>,
    pub evidence_levels: Vec<usize>,
    pub block_length: u32,
    pub prior: Prior,
    /// Per-analysis rules; the defaults when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<AnalysisRules>>,
}

impl Default for Design {
    fn default() -> Self {
        Design {
            initial_cohorts: 2,
            cohort_limit: 5,
            observation_lag_weeks: 52,
            interim_fractions: vec![0.5, 0.75],
            n_per_arm: vec![75, 125],
            data_sharing: vec![DataSharing::Cohort, DataSharing::Concurrent],
            evidence_levels: vec![1, 2, 3],
            block_length: 2,
            prior: Prior::default(),
            rules: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Prior {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Assumptions {
    pub weeks_between_cohorts: u32,
    pub accrual_per_week: u32,
    pub soc_rates: [f64; 2],
    pub e1_rates: Vec<f64>,
    pub e2_rates: Vec<f64>,
    pub rhos: Vec<f64>,
    pub correlation_model: CorrelationModel,
    pub time_trend_per_week: f64,
}

impl Default for Assumptions {
    fn default() -> Self {
        let grid = ScenarioGrid::paper(1, 0);
        Assumptions {
            weeks_between_cohorts: 24,
            accrual_per_week: 6,
            soc_rates: grid.soc_rates,
            e1_rates: grid.e1_rates,
            e2_rates: grid.e2_rates,
            rhos: grid.rhos,
            correlation_model: grid.correlation_model,
            time_trend_per_week: grid.time_trend_per_week,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Simulation {
    pub replications: u32,
    pub master_seed: u64,
}

impl Default for Simulation {
    fn default() -> Self {
        Simulation {
            replications: 10_000,
            master_seed: 42,
        }
    }
}

impl RunConfig {
    /// Parses a configuration, reporting the offending field path and
    /// position on failure.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Config(format!(
                "line {} column {}: at `{}`: {}",
                inner.line(),
                inner.column(),
                e.path(),
                inner
            ))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn grid(&self) -> ScenarioGrid {
        let a = &self.assumptions;
        let d = &self.design;
        ScenarioGrid {
            soc_rates: a.soc_rates,
            e1_rates: a.e1_rates.clone(),
            e2_rates: a.e2_rates.clone(),
            rhos: a.rhos.clone(),
            correlation_model: a.correlation_model,
            time_trend_per_week: a.time_trend_per_week,
            n_per_arm: d.n_per_arm.clone(),
            sharing: d.data_sharing.clone(),
            evidence_levels: d.evidence_levels.clone(),
            replications: self.simulation.replications,
            master_seed: self.simulation.master_seed,
        }
    }

    /// The design template; cohort size, sharing mode and evidence level
    /// are set per cell from the grid.
    pub fn template(&self) -> Result<PlatformConfig, CliError> {
        let d = &self.design;
        let level = *d
            .evidence_levels
            .first()
            .ok_or_else(|| CliError::Config("design.evidence_levels: must not be empty".into()))?;
        let n = *d
            .n_per_arm
            .first()
            .ok_or_else(|| CliError::Config("design.n_per_arm: must not be empty".into()))?;
        let sharing = *d
            .data_sharing
            .first()
            .ok_or_else(|| CliError::Config("design.data_sharing: must not be empty".into()))?;
        let ruleset = match &d.rules {
            Some(analyses) => DecisionRuleSet::new(analyses.clone(), level),
            None => default_rules(level),
        }
        .map_err(|e| CliError::Config(format!("design.rules: {e}")))?;
        let prior = BetaDistribution::new(d.prior.alpha, d.prior.beta)
            .map_err(|e| CliError::Config(format!("design.prior: {e}")))?;
        let config = PlatformConfig {
            initial_cohorts: d.initial_cohorts,
            cohort_limit: d.cohort_limit,
            weeks_between_cohorts: self.assumptions.weeks_between_cohorts,
            accrual_per_week: self.assumptions.accrual_per_week,
            observation_lag_weeks: d.observation_lag_weeks,
            interim_fractions: d.interim_fractions.clone(),
            n_per_arm: n,
            data_sharing: sharing,
            ruleset,
            block_length: d.block_length,
            prior,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(format!("design: {e}")))?;
        Ok(config)
    }

    /// SHA-256 over every section that affects results.
    pub fn results_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let hashed = serde_json::json!({
            "design": self.design,
            "assumptions": self.assumptions,
            "simulation": self.simulation,
        });
        let bytes = serde_json::to_vec(&hashed).expect("configuration serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Checks everything that can be checked without running a cell.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let template = self.template()?;
        for &level in &self.design.evidence_levels {
            template
                .ruleset
                .with_evidence_level(level)
                .map_err(|e| CliError::Config(format!("design.evidence_levels: {e}")))?;
        }
        for (name, rates) in [
            ("assumptions.e1_rates", &self.assumptions.e1_rates),
            ("assumptions.e2_rates", &self.assumptions.e2_rates),
            (
                "assumptions.soc_rates",
                &self.assumptions.soc_rates.to_vec(),
            ),
        ] {
            if rates.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
                return Err(CliError::Config(format!(
                    "{name}: rates must lie strictly inside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}
