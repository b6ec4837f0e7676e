use std::io::{IsTerminal, Write};
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use platsim::experiments::{
    analysis_label, run_grid_with_progress, CellOutcome, CellResult, Estimate,
};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::output::write_all_atomic;
use crate::{load_config, CliError, SharingArg, THREADS_ENV};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON run configuration; the published grid when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [config: execution.out_dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replications per cell [config: simulation.replications]
    #[arg(long)]
    pub reps: Option<u32>,
    /// Master seed [config: simulation.master_seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [config: execution.threads, then the PLATSIM_THREADS
    /// environment variable, then all cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run only this evidence level [config: design.evidence_levels]
    #[arg(long)]
    pub evidence_level: Option<usize>,
    /// Run only this sharing mode [config: design.data_sharing]
    #[arg(long, value_enum)]
    pub sharing: Option<SharingArg>,
    /// Results format [config: execution.format]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl SimulateArgs {
    /// Applies command-line overrides on top of the file.
    fn resolve(&self, mut config: RunConfig) -> Result<RunConfig, CliError> {
        if let Some(out) = &self.out {
            config.execution.out_dir = out.clone();
        }
        if let Some(reps) = self.reps {
            config.simulation.replications = reps;
        }
        if let Some(seed) = self.seed {
            config.simulation.master_seed = seed;
        }
        if let Some(level) = self.evidence_level {
            config.design.evidence_levels = vec![level];
        }
        if let Some(sharing) = self.sharing {
            config.design.data_sharing = vec![sharing.into()];
        }
        if let Some(format) = self.format {
            config.execution.format = format;
        }
        if self.threads.is_some() {
            config.execution.threads = self.threads;
        } else if config.execution.threads.is_none() {
            if let Ok(v) = std::env::var(THREADS_ENV) {
                let n = v.trim().parse().map_err(|_| {
                    CliError::Usage(format!("{THREADS_ENV}: expected a thread count, got {v:?}"))
                })?;
                config.execution.threads = Some(n);
            }
        }
        if config.execution.threads == Some(0) {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_path: Option<String>,
    /// SHA-256 of the design, assumptions and simulation sections.
    config_hash: String,
    master_seed: u64,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<String>,
    infeasible_cells: usize,
    resolved_config: &'a RunConfig,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn run(args: SimulateArgs, out: &mut impl Write) -> Result<(), CliError> {
    let started = unix_now();
    let config = args.resolve(load_config(args.config.as_deref())?)?;
    let grid = config.grid();
    let template = config.template()?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.execution.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    let show_progress = std::io::stderr().is_terminal();
    let results = pool.install(|| {
        run_grid_with_progress(&grid, &template, |done, total| {
            if show_progress {
                eprint!("\rcell {done}/{total}");
                if done == total {
                    eprintln!();
                }
            }
        })
    })?;

    let mut infeasible = 0;
    for r in &results {
        if let CellOutcome::Infeasible { reason } = &r.outcome {
            infeasible += 1;
            eprintln!(
                "warning: cell {} (E1 {}, E2 {}, rho {}) is infeasible: {reason}",
                r.cell.index, r.cell.e1_rate, r.cell.e2_rate, r.cell.rho
            );
        }
    }

    let analyses = template.ruleset.analysis_count();
    let dir = &config.execution.out_dir;
    let (results_path, results_bytes) = match config.execution.format {
        Format::Csv => (dir.join("results.csv"), results_csv(&results, analyses)?),
        Format::Json => (
            dir.join("results.json"),
            serde_json::to_vec_pretty(&results).expect("results serialize"),
        ),
    };
    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        config_hash: config.results_hash(),
        master_seed: config.simulation.master_seed,
        started_unix: started,
        finished_unix: unix_now(),
        outputs: vec![
            results_path.display().to_string(),
            manifest_path.display().to_string(),
        ],
        infeasible_cells: infeasible,
        resolved_config: &config,
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_all_atomic(&[
        (results_path.clone(), results_bytes),
        (manifest_path, manifest_bytes),
    ])?;
    writeln!(
        out,
        "{} cells ({} infeasible) written to {}",
        results.len(),
        infeasible,
        results_path.display()
    )
    .map_err(CliError::io("stdout"))?;
    Ok(())
}

fn push_estimate(row: &mut Vec<String>, e: Estimate, decimals: usize) {
    row.push(format!("{:.*}", decimals, e.value));
    row.push(format!("{:.*}", decimals, e.se));
}

/// One row per cell; estimates are followed by their standard errors.
/// Probabilities carry 4 decimals, means of weeks and participants 2.
pub fn results_csv(results: &[CellResult], analyses: usize) -> Result<Vec<u8>, CliError> {
    let mut header: Vec<String> = [
        "cell",
        "assumption",
        "e1_rate",
        "e2_rate",
        "rho",
        "n_per_arm",
        "sharing",
        "evidence_level",
        "status",
        "replications",
        "evaluations",
        "success",
        "success_se",
        "mean_duration_weeks",
        "mean_duration_weeks_se",
        "mean_total_enrolled",
        "mean_total_enrolled_se",
        "min_total_enrolled",
        "max_total_enrolled",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for kind in ["efficacy", "futility", "decided_by"] {
        for t in 0..analyses {
            let name = format!("p_{kind}_{}", analysis_label(t, analyses));
            let se = format!("{name}_se");
            header.extend([name, se]);
        }
    }
    header.push("reason".into());

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("cannot format results: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let c = &r.cell;
        let mut row = vec![
            c.index.to_string(),
            c.assumption_index.to_string(),
            c.e1_rate.to_string(),
            c.e2_rate.to_string(),
            c.rho.to_string(),
            c.n_per_arm.to_string(),
            match c.sharing {
                platsim::trial::DataSharing::Cohort => "cohort".into(),
                platsim::trial::DataSharing::Concurrent => "concurrent".into(),
            },
            c.evidence_level.to_string(),
        ];
        match &r.outcome {
            CellOutcome::Feasible(oc) => {
                row.push("feasible".into());
                row.push(oc.replications.to_string());
                row.push(oc.evaluations.to_string());
                push_estimate(&mut row, oc.success_probability, 4);
                push_estimate(&mut row, oc.mean_duration_weeks, 2);
                push_estimate(&mut row, oc.mean_total_enrolled, 2);
                row.push(oc.min_total_enrolled.to_string());
                row.push(oc.max_total_enrolled.to_string());
                for series in [&oc.p_efficacy, &oc.p_futility, &oc.p_decision_by] {
                    for &e in series.iter() {
                        push_estimate(&mut row, e, 4);
                    }
                }
                row.push(String::new());
            }
            CellOutcome::Infeasible { reason } => {
                row.push("infeasible".into());
                row.resize(header.len() - 1, String::new());
                row.push(reason.clone());
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Usage(format!("cannot format results: {e}")))
}
