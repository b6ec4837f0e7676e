use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use platsim::decisions::{evaluate, EndpointPosteriors, Verdict, ENDPOINTS};
use platsim::experiments::analysis_label;
use platsim::posterior::{update, BinomialSummary};
use serde::Serialize;

use crate::{load_config, CliError};

/// Successes and trials of both arms, written `s/n:s/n` (treatment first).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmCounts {
    pub treatment: (u32, u32),
    pub control: (u32, u32),
}

fn parse_fraction(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s
        .split_once('/')
        .ok_or_else(|| format!("expected successes/trials, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<u32>()
            .map_err(|e| format!("{v:?} is not a count: {e}"))
    };
    Ok((parse(a)?, parse(b)?))
}

fn parse_counts(s: &str) -> Result<ArmCounts, String> {
    let (t, c) = s
        .split_once(':')
        .ok_or_else(|| format!("expected treatment:control, got {s:?}"))?;
    Ok(ArmCounts {
        treatment: parse_fraction(t)?,
        control: parse_fraction(c)?,
    })
}

#[derive(Debug, Args)]
pub struct RulesCheckArgs {
    /// Endpoint 1 counts as treatment:control, e.g. 60/75:8/75
    #[arg(long, value_parser = parse_counts)]
    pub e1: ArmCounts,
    /// Endpoint 2 counts as treatment:control
    #[arg(long, value_parser = parse_counts)]
    pub e2: ArmCounts,
    /// Analysis: ia1, ia2, ... or final
    #[arg(long, default_value = "final")]
    pub analysis: String,
    /// Evidence level [config: first of design.evidence_levels]
    #[arg(long)]
    pub level: Option<usize>,
    /// Rules and prior from this configuration instead of the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the decision as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Serialize)]
struct Report {
    analysis: String,
    evidence_level: usize,
    verdict: Verdict,
    endpoints: Vec<EndpointReport>,
}

#[derive(Debug, Serialize)]
struct EndpointReport {
    endpoint: usize,
    treatment: BinomialSummary,
    control: BinomialSummary,
    efficacy: Vec<RuleReport>,
    futility: Vec<RuleReport>,
    efficacy_met: bool,
    futility_met: bool,
}

#[derive(Debug, Serialize)]
struct RuleReport {
    delta: f64,
    gamma: f64,
    probability: f64,
}

fn analysis_index(name: &str, count: usize) -> Result<usize, CliError> {
    (0..count)
        .find(|&t| analysis_label(t, count) == name)
        .ok_or_else(|| {
            let names: Vec<_> = (0..count).map(|t| analysis_label(t, count)).collect();
            CliError::Usage(format!(
                "unknown analysis {name:?}; expected one of {}",
                names.join(", ")
            ))
        })
}

pub fn run(args: RulesCheckArgs, out: &mut impl Write) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref())?;
    let mut template = config.template()?;
    if let Some(level) = args.level {
        template.ruleset = template.ruleset.with_evidence_level(level)?;
    }
    let ruleset = &template.ruleset;
    let count = ruleset.analysis_count();
    let analysis = analysis_index(&args.analysis, count)?;

    let mut data = Vec::with_capacity(ENDPOINTS);
    for counts in [args.e1, args.e2] {
        let t = BinomialSummary::new(counts.treatment.0, counts.treatment.1)?;
        let c = BinomialSummary::new(counts.control.0, counts.control.1)?;
        data.push((t, c));
    }
    let posteriors: [EndpointPosteriors; ENDPOINTS] = std::array::from_fn(|k| EndpointPosteriors {
        treatment: update(template.prior, data[k].0),
        control: update(template.prior, data[k].1),
    });
    let decision = evaluate(&posteriors, ruleset, analysis);

    let rules = &ruleset.analyses[analysis];
    let endpoints = decision
        .endpoints
        .iter()
        .enumerate()
        .map(|(k, audit)| {
            let pair = |rs: &[platsim::decisions::MarginRule], ps: &[f64]| {
                rs.iter()
                    .zip(ps)
                    .map(|(r, &p)| RuleReport {
                        delta: r.delta,
                        gamma: r.gamma.value(),
                        probability: p,
                    })
                    .collect()
            };
            EndpointReport {
                endpoint: k + 1,
                treatment: data[k].0,
                control: data[k].1,
                efficacy: pair(&rules.endpoints[k].efficacy, &audit.efficacy_probs),
                futility: pair(&rules.endpoints[k].futility, &audit.futility_probs),
                efficacy_met: audit.efficacy_met,
                futility_met: audit.futility_met,
            }
        })
        .collect();
    let report = Report {
        analysis: analysis_label(analysis, count),
        evidence_level: ruleset.evidence_level,
        verdict: decision.verdict,
        endpoints,
    };

    let text = if args.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        render(&report)
    };
    out.write_all(text.as_bytes())
        .map_err(CliError::io("stdout"))
}

fn render(r: &Report) -> String {
    let mut s = format!(
        "analysis {} at evidence level {}: {:?}\n",
        r.analysis, r.evidence_level, r.verdict
    );
    for e in &r.endpoints {
        s += &format!(
            "E{}  treatment {}/{}  control {}/{}\n",
            e.endpoint,
            e.treatment.successes(),
            e.treatment.trials(),
            e.control.successes(),
            e.control.trials()
        );
        for (kind, rules, met) in [
            ("efficacy", &e.efficacy, e.efficacy_met),
            ("futility", &e.futility, e.futility_met),
        ] {
            for rule in rules.iter() {
                let cmp = if kind == "efficacy" { '>' } else { '<' };
                s += &format!(
                    "  {kind}  P(pE - pS > {:.3}) = {:.6}  (needs {cmp} {:.2})\n",
                    rule.delta, rule.probability, rule.gamma
                );
            }
            if !rules.is_empty() {
                s += &format!("  {kind} {}\n", if met { "met" } else { "not met" });
            }
        }
    }
    s
}
