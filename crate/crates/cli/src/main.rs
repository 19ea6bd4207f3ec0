use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sapiens_core::incentive::replay_balances;
use sapiens_core::sim::{
    emit_report, genesis, ground_truth_diff, load_scenario, run, seed_from_env, write_balances_csv, write_tasks_csv,
    ReportFormat, Scenario,
};
use sapiens_core::task::AuditReport;
use sapiens_core::{Ledger, Verification};

#[derive(Parser)]
#[command(name = "sapiens-sim", version, about = "Deterministic simulator of a decentralized security-audit marketplace")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed and SAPIENS_SIM_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Write result files here; without it a summary goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
    /// Ledger dump operations.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Replay a ledger dump and print account balances as CSV.
    Balances { ledger: PathBuf },
    /// Ground-truth comparisons.
    GroundTruth {
        #[command(subcommand)]
        command: GroundTruthCommand,
    },
    /// Registry operations.
    Nodes {
        #[command(subcommand)]
        command: NodesCommand,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Check the hash chain; exit 0 only when it is intact.
    Verify { file: PathBuf },
}

#[derive(Subcommand)]
enum GroundTruthCommand {
    /// Compare a task report with the vulnerabilities planted in the scenario.
    Diff { report: PathBuf, scenario: PathBuf },
}

#[derive(Subcommand)]
enum NodesCommand {
    /// Print the registry after registration and proof mining.
    Dump { scenario: PathBuf },
}

/// Exit 1: bad input. Exit 2: invariant violation or broken chain.
enum Failure {
    Input(anyhow::Error),
    Invariant(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn scenario(path: &Path) -> Result<Scenario, Failure> {
    Ok(load_scenario(path).with_context(|| format!("loading {}", path.display()))?)
}

fn read_ledger(path: &Path) -> Result<Ledger, Failure> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Ledger::read_dump(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            scenario: path,
            seed,
            out,
            format,
        } => {
            let scenario = scenario(&path)?;
            let seed = seed.or_else(seed_from_env).unwrap_or(scenario.run_seed);
            let result = run(&scenario, seed).map_err(|e| Failure::Invariant(e.into()))?;
            match out {
                Some(dir) => {
                    let files = emit_report(&result, &dir, format)
                        .with_context(|| format!("writing results to {}", dir.display()))?;
                    let m = &result.metrics;
                    println!(
                        "seed {seed}: {} reported, {} failed, {} findings ({} high), head {}",
                        m.tasks_reported, m.tasks_failed, m.findings_total, m.findings_high, m.head_digest
                    );
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                }
                None => match format {
                    ReportFormat::Json => print_json(&result.metrics)?,
                    ReportFormat::Csv => write_tasks_csv(&result, io::stdout().lock())?,
                },
            }
        }
        Command::Ledger {
            command: LedgerCommand::Verify { file },
        } => {
            let ledger = read_ledger(&file)?;
            match ledger.verify_chain() {
                Verification::Valid => {
                    println!("valid: {} blocks, head {}", ledger.len(), ledger.head_digest());
                }
                Verification::FirstBadIndex(i) => {
                    return Err(Failure::Invariant(anyhow::anyhow!("invalid: first bad block {i}")));
                }
            }
        }
        Command::Balances { ledger } => {
            let ledger = read_ledger(&ledger)?;
            if let Verification::FirstBadIndex(i) = ledger.verify_chain() {
                return Err(Failure::Invariant(anyhow::anyhow!("ledger is invalid from block {i}")));
            }
            let replayed = replay_balances(&ledger).map_err(|e| Failure::Invariant(e.into()))?;
            write_balances_csv(&replayed.balances, io::stdout().lock())?;
        }
        Command::GroundTruth {
            command: GroundTruthCommand::Diff { report, scenario: path },
        } => {
            let scenario = scenario(&path)?;
            let file = File::open(&report).with_context(|| format!("opening {}", report.display()))?;
            let report: AuditReport = serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("parsing {}", report.display()))?;
            print_json(&ground_truth_diff(&report, &scenario)?)?;
        }
        Command::Nodes {
            command: NodesCommand::Dump { scenario: path },
        } => {
            let scenario = scenario(&path)?;
            let seed = seed_from_env().unwrap_or(scenario.run_seed);
            let protocol = genesis(&scenario, seed).map_err(|e| Failure::Invariant(e.into()))?;
            let nodes: Vec<_> = protocol.registry.nodes().collect();
            print_json(&nodes)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
