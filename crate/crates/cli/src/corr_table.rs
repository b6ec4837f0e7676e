use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use platsim::corrbin::phi_bounds;
use platsim::experiments::CorrelationModel;

use crate::output::write_all_atomic;
use crate::{CliError, ModelArg};

#[derive(Debug, Args)]
pub struct CorrTableArgs {
    /// Endpoint 1 marginal responder rates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub p1: Vec<f64>,
    /// Endpoint 2 marginal responder rates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub p2: Vec<f64>,
    /// Correlations; -1 to 1 in steps of 0.1 when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rho: Vec<f64>,
    /// How the correlation is interpreted.
    #[arg(long, value_enum, default_value = "latent-normal")]
    pub model: ModelArg,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const HEADER: [&str; 18] = [
    "p1dot",
    "pdot1",
    "rho",
    "status",
    "p00",
    "p01",
    "p10",
    "p11",
    "union",
    "phi",
    "sens_sl",
    "spec_sl",
    "sens_ls",
    "spec_ls",
    "phi_lower",
    "phi_upper",
    "model",
    "reason",
];

pub fn run(args: CorrTableArgs, out: &mut impl Write) -> Result<(), CliError> {
    for &p in args.p1.iter().chain(&args.p2) {
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::Usage(format!(
                "marginal rates must lie strictly inside (0, 1), got {p}"
            )));
        }
    }
    let rhos = if args.rho.is_empty() {
        (-10..=10).map(|i| i as f64 / 10.0).collect()
    } else {
        args.rho.clone()
    };
    let bytes = table(&args.p1, &args.p2, &rhos, args.model.into())?;
    match &args.out {
        Some(path) => write_all_atomic(&[(path.clone(), bytes)]),
        None => out.write_all(&bytes).map_err(CliError::io("stdout")),
    }
}

fn table(
    p1s: &[f64],
    p2s: &[f64],
    rhos: &[f64],
    model: CorrelationModel,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("cannot format table: {e}"));
    w.write_record(HEADER).map_err(csv_err)?;
    let model_name = match model {
        CorrelationModel::LatentNormal => "latent_normal",
        CorrelationModel::Phi => "phi",
    };
    let f = |v: f64| format!("{v:.6}");
    for &p1 in p1s {
        for &p2 in p2s {
            let (lo, hi) = phi_bounds(p1, p2).map_err(|e| CliError::Usage(e.to_string()))?;
            for &rho in rhos {
                let mut row = vec![p1.to_string(), p2.to_string(), format!("{rho:.4}")];
                let table = model
                    .dependence(rho)
                    .map_err(|e| e.to_string())
                    .and_then(|d| d.build(p1, p2).map_err(|e| e.to_string()))
                    .and_then(|t| t.diagnostics().map(|d| (t, d)).map_err(|e| e.to_string()));
                match table {
                    Ok((t, d)) => {
                        row.push("ok".into());
                        row.extend(
                            [
                                t.p00(),
                                t.p01(),
                                t.p10(),
                                t.p11(),
                                t.union_prob(),
                                d.phi,
                                d.sens_sl,
                                d.spec_sl,
                                d.sens_ls,
                                d.spec_ls,
                            ]
                            .map(f),
                        );
                        row.extend([f(lo), f(hi), model_name.into(), String::new()]);
                    }
                    Err(reason) => {
                        row.push("infeasible".into());
                        row.resize(14, String::new());
                        row.extend([f(lo), f(hi), model_name.into(), reason]);
                    }
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.into_inner()
        .map_err(|e| CliError::Usage(format!("cannot format table: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(bytes: &[u8]) -> Vec<csv::StringRecord> {
        csv::Reader::from_reader(bytes)
            .records()
            .map(|r| r.unwrap())
            .collect()
    }

    #[test]
    fn cells_sum_to_one_and_bounds_are_reported() {
        let bytes = table(&[0.1], &[0.2], &[0.0, 0.5], CorrelationModel::LatentNormal).unwrap();
        let rows = rows(&bytes);
        assert_eq!(rows.len(), 2);
        for r in &rows {
            let sum: f64 = (4..8).map(|i| r[i].parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert_eq!(&r[14], "-0.166667");
            assert_eq!(&r[15], "0.666667");
        }
    }

    #[test]
    fn unattainable_phi_is_marked_not_fatal() {
        let bytes = table(&[0.1], &[0.2], &[0.9, 0.0], CorrelationModel::Phi).unwrap();
        let rows = rows(&bytes);
        assert_eq!(&rows[0][3], "infeasible");
        assert!(!rows[0][17].is_empty());
        assert_eq!(&rows[1][3], "ok");
    }
}
