use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use platsim::experiments::{cell_inputs, seed_stream, CellSpec};
use platsim::posterior::Direct;
use platsim::trial::{run_replication_traced, PlatformResult};
use serde::Serialize;

use crate::output::write_all_atomic;
use crate::{load_config, CliError};

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// JSON run configuration; the published grid when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cell index, as in the `cell` column of the results.
    #[arg(long)]
    pub cell: usize,
    /// Zero-based replication index.
    #[arg(long, default_value_t = 0)]
    pub replication: u64,
    /// Master seed [config: simulation.master_seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the log here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Header {
    cell: CellSpec,
    replication: u64,
    master_seed: u64,
    config_hash: String,
}

#[derive(Serialize)]
struct Footer<'a> {
    result: &'a PlatformResult,
}

/// Newline-delimited JSON: a header naming the cell and stream, one line
/// per event, and the replication result.
pub fn run(args: TraceArgs, out: &mut impl Write) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.simulation.master_seed = seed;
    }
    config.validate()?;
    let grid = config.grid();
    let cells = grid.cells();
    let cell = *cells.get(args.cell).ok_or_else(|| {
        CliError::Usage(format!(
            "cell {} does not exist; the grid has {} cells",
            args.cell,
            cells.len()
        ))
    })?;
    let (platform, scenario) = cell_inputs(&grid, &config.template()?, &cell)?;
    let mut rng = seed_stream(grid.master_seed, cell.assumption_index, args.replication);
    let mut log = Vec::new();
    let result = run_replication_traced(&platform, &scenario, &mut rng, &mut Direct, &mut log)?;

    let mut text = line(&Header {
        cell,
        replication: args.replication,
        master_seed: grid.master_seed,
        config_hash: config.results_hash(),
    });
    for event in &log {
        text += &line(event);
    }
    text += &line(&Footer { result: &result });

    match &args.out {
        Some(path) => write_all_atomic(&[(path.clone(), text.into_bytes())]),
        None => out
            .write_all(text.as_bytes())
            .map_err(CliError::io("stdout")),
    }
}

fn line(value: &impl Serialize) -> String {
    serde_json::to_string(value).expect("trace record serializes") + "\n"
}
