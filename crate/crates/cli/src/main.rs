use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use midastouch_core::bridge::AuditReport;
use midastouch_core::experiment::{
    run_epsilon_sweep, run_gas_survey, run_scalability, survey_templates, to_csv, EpsilonParams,
    GasSurveyParams, RunConfig, ScalabilityParams,
};
use midastouch_core::scenario::Scenario;
use midastouch_core::sim::{receipt_log, FaultPlan, RunReport, SimConfig};
use midastouch_core::units::Rate;
use serde_json::json;

/// Exit status when a run finishes but an invariant does not hold.
const VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "midastouch",
    version,
    about = "Inscription-to-contract bridge simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Form a committee and push a uniform mint load through the bridge.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Run one of the evaluation sweeps and write its rows as CSV.
    Experiment {
        kind: ExperimentKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of seeds per point for the epsilon sweep.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a scripted scenario file.
    Scenario {
        file: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        outputs: Outputs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Scalability,
    Gas,
    Epsilon,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Blocks between consensus epochs.
    #[arg(long)]
    epsilon: Option<u64>,
    /// Committee size; for the scalability sweep, the largest size swept.
    #[arg(long)]
    committee_size: Option<usize>,
    /// Fraction of each inscription's value taken as the validator fee.
    #[arg(long)]
    fee_rate: Option<Rate>,
    /// Validator behaviors, e.g. "1:silent,4:equivocating".
    #[arg(long)]
    fault_plan: Option<FaultPlan>,
}

impl Overrides {
    fn apply(&self, sim: &mut SimConfig) {
        if let Some(seed) = self.seed {
            sim.seed = seed;
        }
        if let Some(eps) = self.epsilon {
            sim.bridge.epsilon = eps;
        }
        if let Some(g) = self.fee_rate {
            sim.gas.fee_rate = g;
        }
    }
}

#[derive(Args)]
struct Outputs {
    /// Write the full run report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write published receipts, one JSON object per line.
    #[arg(long)]
    receipts: Option<PathBuf>,
}

impl Outputs {
    fn write(&self, report: &RunReport) -> Result<()> {
        if let Some(path) = &self.report {
            let text = serde_json::to_string_pretty(report)? + "\n";
            write(path, &text)?;
        }
        if let Some(path) = &self.receipts {
            write(path, &receipt_log(&report.receipts))?;
        }
        Ok(())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_run_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut rc = match path {
        Some(p) => RunConfig::from_toml_str(&read(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut rc.sim);
    if let Some(n) = overrides.committee_size {
        rc.committee_size = n;
    }
    if let Some(plan) = &overrides.fault_plan {
        rc.fault_plan = plan.to_string();
    }
    Ok(rc)
}

fn print_audit(audit: &AuditReport) {
    for v in audit.violations() {
        eprintln!("invariant violated: {v}");
    }
}

fn summary(report: &RunReport) -> serde_json::Value {
    let slashes: usize = report.epochs.iter().map(|e| e.slashes.len()).sum();
    let executed: usize = report.epochs.iter().map(|e| e.executions.len()).sum();
    json!({
        "seed": report.seed,
        "config_digest": report.config_digest,
        "tip_height": report.tip_height,
        "formed_at": report.formed_at,
        "validators": report.validators.len(),
        "epochs": report.epochs.len(),
        "executed": executed,
        "receipts": report.receipts.len(),
        "slashes": slashes,
        "audit_clean": report.audit.is_clean(),
    })
}

fn cmd_run(config: Option<&Path>, overrides: &Overrides, outputs: &Outputs) -> Result<ExitCode> {
    let rc = load_run_config(config, overrides)?;
    let sim = rc.execute()?;
    let report = sim.report();
    outputs.write(&report)?;
    println!("{}", summary(&report));
    print_audit(&report.audit);
    Ok(if report.audit.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(VIOLATION)
    })
}

fn cmd_experiment(
    kind: ExperimentKind,
    out: &Path,
    config: Option<&Path>,
    seeds: u64,
    overrides: &Overrides,
) -> Result<ExitCode> {
    if overrides.fault_plan.is_some() {
        bail!("experiments run with an honest committee; --fault-plan applies to run and scenario");
    }
    let rc = load_run_config(config, overrides)?;
    let csv = match kind {
        ExperimentKind::Scalability => {
            let params = ScalabilityParams::default();
            let max = overrides
                .committee_size
                .unwrap_or(params.max_committee_size);
            let sizes: Vec<usize> = (1..=max).collect();
            to_csv(&run_scalability(&sizes, &params, &rc.sim)?)?
        }
        ExperimentKind::Gas => {
            let params = GasSurveyParams {
                committee_size: rc.committee_size,
                ..GasSurveyParams::default()
            };
            to_csv(&run_gas_survey(&survey_templates(), &params, &rc.sim)?)?
        }
        ExperimentKind::Epsilon => {
            let params = EpsilonParams {
                committee_size: rc.committee_size,
                ..EpsilonParams::default()
            };
            let eps: Vec<u64> = match overrides.epsilon {
                Some(e) => vec![e],
                None => vec![1, 2, 5, 10, 20],
            };
            let base = rc.sim.seed;
            let seed_list: Vec<u64> = (0..seeds).map(|i| base + i).collect();
            to_csv(&run_epsilon_sweep(&eps, &seed_list, &params, &rc.sim)?)?
        }
    };
    write(out, &csv)?;
    eprintln!(
        "wrote {} rows to {}",
        csv.lines().count().saturating_sub(1),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenario(file: &Path, overrides: &Overrides, outputs: &Outputs) -> Result<ExitCode> {
    let mut scenario = Scenario::from_toml(&read(file)?, &file.display().to_string())?;
    if let Some(seed) = overrides.seed {
        scenario.seed = Some(seed);
    }
    overrides.apply(&mut scenario.config);
    if let Some(n) = overrides.committee_size {
        scenario.config.committee.min_committee_size = n;
    }
    if let Some(plan) = &overrides.fault_plan {
        if let Some(i) = plan.0.keys().find(|&&i| i >= scenario.validators.len()) {
            bail!(
                "fault plan names validator {i}, scenario has {}",
                scenario.validators.len()
            );
        }
        for (i, v) in scenario.validators.iter_mut().enumerate() {
            v.behavior = plan.behavior(i);
        }
    }
    let report = scenario.run()?;
    let Some(run) = &report.run else {
        println!("{}", json!({ "scenario": report.name, "empty": true }));
        return Ok(ExitCode::SUCCESS);
    };
    outputs.write(run)?;
    let mut s = summary(run);
    s["scenario"] = json!(report.name);
    s["stalled"] = json!(report.stalled);
    println!("{s}");
    if report.stalled {
        eprintln!("committee registration did not complete before the deadline");
    }
    print_audit(&run.audit);
    Ok(if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(VIOLATION)
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run {
            config,
            overrides,
            outputs,
        } => cmd_run(config.as_deref(), overrides, outputs),
        Command::Experiment {
            kind,
            out,
            config,
            seeds,
            overrides,
        } => cmd_experiment(*kind, out, config.as_deref(), *seeds, overrides),
        Command::Scenario {
            file,
            overrides,
            outputs,
        } => cmd_scenario(file, overrides, outputs),
    }
}
