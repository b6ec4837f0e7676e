//! Scenario grids, reproducible random streams, and aggregation of
//! replications into operating characteristics.
//!
//! Every replication draws from its own ChaCha8 stream. The key is built
//! from the master seed and the index of the cell's *assumption* part
//! (E1 rate, E2 rate, correlation), and the stream number is the
//! replication index. Cells that differ only in design choices (cohort
//! size, data sharing, evidence level) therefore see common random numbers,
//! which sharpens comparisons between designs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrbin::Dependence;
use crate::decisions::Verdict;
use crate::error::ModelError;
use crate::math::Correlation;
use crate::posterior::Memoized;
use crate::trial::{run_replication, DataSharing, PlatformConfig, PlatformResult, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationModel {
    /// Correlation of latent normals dichotomized at the marginal quantiles.
    #[default]
    LatentNormal,
    /// Pearson correlation of the binary endpoints.
    Phi,
}

impl CorrelationModel {
    pub fn dependence(self, value: f64) -> Result<Dependence, ModelError> {
        let c = Correlation::new(value)?;
        Ok(match self {
            CorrelationModel::LatentNormal => Dependence::LatentNormal(c),
            CorrelationModel::Phi => Dependence::Phi(c),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub soc_rates: [f64; 2],
    pub e1_rates: Vec<f64>,
    pub e2_rates: Vec<f64>,
    pub rhos: Vec<f64>,
    pub correlation_model: CorrelationModel,
    pub time_trend_per_week: f64,
    pub n_per_arm: Vec<u32>,
    pub sharing: Vec<DataSharing>,
    pub evidence_levels: Vec<usize>,
    pub replications: u32,
    pub master_seed: u64,
}

impl ScenarioGrid {
    /// The investigated values of the NASH platform simulation study.
    pub fn paper(replications: u32, master_seed: u64) -> Self {
        ScenarioGrid {
            soc_rates: [0.10, 0.20],
            e1_rates: vec![0.10, 0.35, 0.45, 0.55],
            e2_rates: vec![0.20, 0.35, 0.45, 0.55],
            rhos: vec![-0.3, 0.0, 0.3, 0.7],
            correlation_model: CorrelationModel::LatentNormal,
            time_trend_per_week: 0.0,
            n_per_arm: vec![75, 125],
            sharing: vec![DataSharing::Cohort, DataSharing::Concurrent],
            evidence_levels: vec![1, 2, 3],
            replications,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("e1_rates", self.e1_rates.len()),
            ("e2_rates", self.e2_rates.len()),
            ("rhos", self.rhos.len()),
            ("n_per_arm", self.n_per_arm.len()),
            ("sharing", self.sharing.len()),
            ("evidence_levels", self.evidence_levels.len()),
        ];
        for (field, len) in dims {
            if len == 0 {
                return Err(ModelError::config(field, "must not be empty"));
            }
        }
        if self.replications == 0 {
            return Err(ModelError::config("replications", "must be at least 1"));
        }
        for &r in &self.rhos {
            Correlation::new(r).map_err(|e| ModelError::config("rhos", e.to_string()))?;
        }
        Ok(())
    }

    /// All cells, ordered with the evidence level varying fastest and the
    /// E1 rate slowest.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut cells = Vec::new();
        let mut assumption_index = 0u64;
        for &e1 in &self.e1_rates {
            for &e2 in &self.e2_rates {
                for &rho in &self.rhos {
                    for &n in &self.n_per_arm {
                        for &sharing in &self.sharing {
                            for &level in &self.evidence_levels {
                                cells.push(CellSpec {
                                    index: cells.len(),
                                    assumption_index,
                                    e1_rate: e1,
                                    e2_rate: e2,
                                    rho,
                                    n_per_arm: n,
                                    sharing,
                                    evidence_level: level,
                                });
                            }
                        }
                    }
                    assumption_index += 1;
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub index: usize,
    /// Index of the (E1, E2, ρ) combination; keys the random streams.
    pub assumption_index: u64,
    pub e1_rate: f64,
    pub e2_rate: f64,
    pub rho: f64,
    pub n_per_arm: u32,
    pub sharing: DataSharing,
    pub evidence_level: usize,
}

/// The random stream of one replication: a ChaCha8 key made of the master
/// seed and the cell key (little-endian, zero padded), with the replication
/// index as the stream number.
pub fn seed_stream(master_seed: u64, cell_key: u64, replication: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&cell_key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replication);
    rng
}

/// A proportion with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub replications: u32,
    /// Cohorts evaluated across all replications.
    pub evaluations: u64,
    /// Fraction of evaluated cohorts declared efficacious.
    pub success_probability: Estimate,
    pub mean_duration_weeks: Estimate,
    pub mean_total_enrolled: Estimate,
    pub min_total_enrolled: u32,
    pub max_total_enrolled: u32,
    /// Per analysis, fraction of evaluations stopped for efficacy there.
    pub p_efficacy: Vec<Estimate>,
    /// Per analysis, fraction of evaluations stopped for futility there.
    pub p_futility: Vec<Estimate>,
    /// Per analysis, fraction of evaluations decided at or before it.
    pub p_decision_by: Vec<Estimate>,
}

impl OperatingCharacteristics {
    pub fn p_decision_at_ia1(&self) -> Estimate {
        self.p_decision_by[0]
    }

    pub fn p_decision_by_ia2(&self) -> Estimate {
        self.p_decision_by[1.min(self.p_decision_by.len() - 1)]
    }
}

/// Integer tallies of a set of replications. Merging is exact, so the
/// summary does not depend on how replications were grouped.
#[derive(Debug, Clone, PartialEq)]
struct Tally {
    replications: u64,
    evaluations: u64,
    duration: Moments,
    enrolled: Moments,
    enrolled_range: (u32, u32),
    /// Per-replication count moments for: success, then per analysis
    /// efficacy, futility and cumulative decisions.
    counts: Vec<Moments>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    sum: u64,
    sum_sq: u128,
}

impl Moments {
    fn add(&mut self, x: u64) {
        self.sum += x;
        self.sum_sq += (x as u128) * (x as u128);
    }

    fn merge(&mut self, other: &Moments) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    /// Mean over `r` replications and the standard error of that mean.
    fn mean_se(&self, r: u64) -> (f64, f64) {
        let rf = r as f64;
        let mean = self.sum as f64 / rf;
        if r < 2 {
            return (mean, 0.0);
        }
        // r² times the unbiased variance, exactly in integers.
        let scaled = r as u128 * self.sum_sq - (self.sum as u128) * (self.sum as u128);
        let var = scaled as f64 / (rf * (rf - 1.0));
        (mean, (var / rf).sqrt())
    }
}

impl Tally {
    fn new(analyses: usize) -> Self {
        Tally {
            replications: 0,
            evaluations: 0,
            duration: Moments::default(),
            enrolled: Moments::default(),
            enrolled_range: (u32::MAX, 0),
            counts: vec![Moments::default(); 1 + 3 * analyses],
        }
    }

    fn add(&mut self, result: &PlatformResult, analyses: usize) {
        self.replications += 1;
        self.evaluations += result.cohorts.len() as u64;
        self.duration.add(result.duration_weeks as u64);
        self.enrolled.add(result.total_enrolled as u64);
        self.enrolled_range.0 = self.enrolled_range.0.min(result.total_enrolled);
        self.enrolled_range.1 = self.enrolled_range.1.max(result.total_enrolled);
        let mut row = vec![0u64; 1 + 3 * analyses];
        for c in &result.cohorts {
            match c.verdict {
                Verdict::Efficacy => {
                    row[0] += 1;
                    row[1 + c.analysis] += 1;
                }
                Verdict::Futility => row[1 + analyses + c.analysis] += 1,
                Verdict::Continue => {}
            }
            for t in c.analysis..analyses {
                row[1 + 2 * analyses + t] += 1;
            }
        }
        for (m, x) in self.counts.iter_mut().zip(row) {
            m.add(x);
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.replications += other.replications;
        self.evaluations += other.evaluations;
        self.duration.merge(&other.duration);
        self.enrolled.merge(&other.enrolled);
        self.enrolled_range.0 = self.enrolled_range.0.min(other.enrolled_range.0);
        self.enrolled_range.1 = self.enrolled_range.1.max(other.enrolled_range.1);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.merge(b);
        }
        self
    }

    fn summarize(&self, analyses: usize) -> OperatingCharacteristics {
        let r = self.replications;
        let per_rep = self.evaluations as f64 / r as f64;
        // Proportions are ratios of per-replication counts to the (fixed)
        // number of cohorts per replication, so their standard errors are
        // those of replication means and account for dependence between
        // cohorts of one platform.
        let proportion = |m: &Moments| {
            let (mean, se) = m.mean_se(r);
            Estimate {
                value: mean / per_rep,
                se: se / per_rep,
            }
        };
        let estimate = |m: &Moments| {
            let (value, se) = m.mean_se(r);
            Estimate { value, se }
        };
        let block = |k: usize| -> Vec<Estimate> {
            self.counts[1 + k * analyses..1 + (k + 1) * analyses]
                .iter()
                .map(proportion)
                .collect()
        };
        OperatingCharacteristics {
            replications: r as u32,
            evaluations: self.evaluations,
            success_probability: proportion(&self.counts[0]),
            mean_duration_weeks: estimate(&self.duration),
            mean_total_enrolled: estimate(&self.enrolled),
            min_total_enrolled: self.enrolled_range.0,
            max_total_enrolled: self.enrolled_range.1,
            p_efficacy: block(0),
            p_futility: block(1),
            p_decision_by: block(2),
        }
    }
}

/// Aggregates replication results of one cell.
///
/// # Panics
/// If `results` is empty or replications differ in their cohort counts.
pub fn summarize(results: &[PlatformResult], analyses: usize) -> OperatingCharacteristics {
    assert!(!results.is_empty(), "at least one replication is required");
    let cohorts = results[0].cohorts.len();
    assert!(
        results.iter().all(|r| r.cohorts.len() == cohorts),
        "every replication must evaluate the same number of cohorts"
    );
    let mut tally = Tally::new(analyses);
    for r in results {
        tally.add(r, analyses);
    }
    tally.summarize(analyses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Feasible(OperatingCharacteristics),
    Infeasible { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellSpec,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn characteristics(&self) -> Option<&OperatingCharacteristics> {
        match &self.outcome {
            CellOutcome::Feasible(oc) => Some(oc),
            CellOutcome::Infeasible { .. } => None,
        }
    }
}

/// Builds the platform configuration and scenario of a cell from a design
/// template. The template's cohort size, sharing mode and evidence level
/// are replaced by the cell's.
pub fn cell_inputs(
    grid: &ScenarioGrid,
    template: &PlatformConfig,
    cell: &CellSpec,
) -> Result<(PlatformConfig, Scenario), ModelError> {
    let mut config = template.clone();
    config.n_per_arm = cell.n_per_arm;
    config.data_sharing = cell.sharing;
    config.ruleset = template.ruleset.with_evidence_level(cell.evidence_level)?;
    config.validate()?;
    let scenario = Scenario {
        soc_rates: grid.soc_rates,
        treatment_rates: [cell.e1_rate, cell.e2_rate],
        dependence: grid.correlation_model.dependence(cell.rho)?,
        time_trend_per_week: grid.time_trend_per_week,
    };
    scenario.validate()?;
    Ok((config, scenario))
}

/// Runs all replications of one cell in parallel on the current rayon pool.
pub fn run_cell(
    config: &PlatformConfig,
    scenario: &Scenario,
    cell_key: u64,
    replications: u32,
    master_seed: u64,
) -> Result<OperatingCharacteristics, ModelError> {
    let analyses = config.ruleset.analysis_count();
    let tally = (0..replications as u64)
        .into_par_iter()
        .map_init(Memoized::new, |memo, rep| {
            let mut rng = seed_stream(master_seed, cell_key, rep);
            run_replication(config, scenario, &mut rng, memo).map(|r| {
                let mut t = Tally::new(analyses);
                t.add(&r, analyses);
                t
            })
        })
        .try_reduce(|| Tally::new(analyses), |a, b| Ok(a.merge(b)))?;
    Ok(tally.summarize(analyses))
}

/// Replication results of one cell, in replication order.
pub fn replicate(
    config: &PlatformConfig,
    scenario: &Scenario,
    cell_key: u64,
    replications: u32,
    master_seed: u64,
) -> Result<Vec<PlatformResult>, ModelError> {
    (0..replications as u64)
        .into_par_iter()
        .map_init(Memoized::new, |memo, rep| {
            let mut rng = seed_stream(master_seed, cell_key, rep);
            run_replication(config, scenario, &mut rng, memo)
        })
        .collect()
}

/// Runs every cell of the grid. Cells whose scenario cannot be built (for
/// example a φ outside the attainable range, possibly only after the time
/// trend has shifted the rates) are reported as infeasible and the run
/// continues.
pub fn run_grid(
    grid: &ScenarioGrid,
    template: &PlatformConfig,
) -> Result<Vec<CellResult>, ModelError> {
    run_grid_with_progress(grid, template, |_, _| {})
}

/// [`run_grid`], calling `progress(done, total)` after each cell.
pub fn run_grid_with_progress(
    grid: &ScenarioGrid,
    template: &PlatformConfig,
    mut progress: impl FnMut(usize, usize),
) -> Result<Vec<CellResult>, ModelError> {
    grid.validate()?;
    template.validate()?;
    let cells = grid.cells();
    let total = cells.len();
    let mut results = Vec::with_capacity(total);
    for cell in cells {
        let run = cell_inputs(grid, template, &cell).and_then(|(config, scenario)| {
            run_cell(
                &config,
                &scenario,
                cell.assumption_index,
                grid.replications,
                grid.master_seed,
            )
        });
        let outcome = match run {
            Ok(oc) => CellOutcome::Feasible(oc),
            Err(ModelError::Dependence(e)) => CellOutcome::Infeasible {
                reason: e.to_string(),
            },
            Err(e) => return Err(e),
        };
        results.push(CellResult { cell, outcome });
        progress(results.len(), total);
    }
    Ok(results)
}

/// Short name of analysis `t` out of `count`.
pub fn analysis_label(t: usize, count: usize) -> String {
    if t + 1 == count {
        "final".to_string()
    } else {
        format!("ia{}", t + 1)
    }
}
