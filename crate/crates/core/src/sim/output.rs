//! Result files and the ground-truth comparison.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ids::TaskId;
use crate::task::AuditReport;

use super::engine::RunOutput;
use super::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format {other:?} (expected json or csv)")),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

fn csv_error(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

#[derive(Serialize)]
struct TaskRow<'a> {
    task_id: &'a str,
    user: &'a str,
    service: String,
    status: String,
    risk_level: String,
    findings: usize,
    findings_high: usize,
    rounds: u32,
    escrow: u64,
    paid: u64,
    refund: u64,
    failure: &'a str,
}

pub fn write_tasks_csv<W: Write>(out: &RunOutput, w: W) -> io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for (id, r) in &out.tasks {
        let report = r.report.as_ref().filter(|_| r.task.status == crate::task::TaskStatus::Reported);
        csv.serialize(TaskRow {
            task_id: id.as_str(),
            user: r.task.user.as_str(),
            service: format!("{:?}", r.task.service).to_lowercase(),
            status: format!("{:?}", r.task.status),
            risk_level: report.map(|rep| rep.risk_level.to_string()).unwrap_or_default(),
            findings: report.map_or(0, |rep| rep.findings.len()),
            findings_high: report.map_or(0, |rep| {
                rep.findings
                    .iter()
                    .filter(|f| f.finding.severity == crate::oracle::Severity::High)
                    .count()
            }),
            rounds: r.rounds,
            escrow: r.task.escrow_amount,
            paid: r.settlement.as_ref().map_or(0, |s| s.paid.iter().map(|e| e.amount).sum()),
            refund: r.settlement.as_ref().map_or(0, |s| s.refund),
            failure: r.failure.as_deref().unwrap_or(""),
        })
        .map_err(csv_error)?;
    }
    csv.flush()
}

/// `account,balance` rows in account order.
pub fn write_balances_csv<'a, W: Write>(
    balances: impl IntoIterator<Item = (&'a crate::ids::AccountId, &'a u64)>,
    w: W,
) -> io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["account", "balance"]).map_err(csv_error)?;
    for (account, balance) in balances {
        csv.write_record([account.to_string(), balance.to_string()])
            .map_err(csv_error)?;
    }
    csv.flush()
}

/// Write the run's files into `dir` and return their paths.
///
/// Always: `ledger.jsonl`, `traces.json`, `reports/<task>.json`. JSON adds
/// `metrics.json`; CSV adds `tasks.csv` and `balances.csv`.
pub fn emit_report(out: &RunOutput, dir: &Path, format: ReportFormat) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("reports"))?;
    let mut written = Vec::new();

    let ledger_path = dir.join("ledger.jsonl");
    let mut w = BufWriter::new(File::create(&ledger_path)?);
    out.ledger.write_dump(&mut w)?;
    w.flush()?;
    written.push(ledger_path);

    let traces = dir.join("traces.json");
    write_json(&traces, &out.traces)?;
    written.push(traces);

    for (id, r) in &out.tasks {
        if let Some(report) = &r.report {
            let path = dir.join("reports").join(format!("{id}.json"));
            write_json(&path, report)?;
            written.push(path);
        }
    }

    match format {
        ReportFormat::Json => {
            let path = dir.join("metrics.json");
            write_json(&path, &out.metrics)?;
            written.push(path);
        }
        ReportFormat::Csv => {
            let path = dir.join("tasks.csv");
            write_tasks_csv(out, File::create(&path)?)?;
            written.push(path);
            let path = dir.join("balances.csv");
            write_balances_csv(&out.balances, File::create(&path)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// A report checked against the planted vulnerabilities of its task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDiff {
    pub task_id: TaskId,
    pub planted: usize,
    pub reported: usize,
    pub true_positives: usize,
    /// Findings that match no planted vulnerability.
    pub false_positives: Vec<String>,
    /// Planted vulnerabilities absent from the report.
    pub missed: Vec<String>,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("task {0} is not in the scenario")]
    UnknownTask(TaskId),
}

pub fn ground_truth_diff(report: &AuditReport, scenario: &Scenario) -> Result<GroundTruthDiff, DiffError> {
    let task = scenario
        .tasks
        .iter()
        .find(|t| t.id == report.task_id)
        .ok_or_else(|| DiffError::UnknownTask(report.task_id.clone()))?;
    let planted: BTreeSet<&str> = task
        .targets
        .iter()
        .flat_map(|t| t.planted.iter().map(|v| v.vuln_id.as_str()))
        .collect();
    let mut found = BTreeSet::new();
    let mut false_positives = Vec::new();
    for f in &report.findings {
        match f.finding.vuln_id.as_deref() {
            Some(v) if planted.contains(v) => {
                found.insert(v);
            }
            _ => false_positives.push(f.finding.finding_id.clone()),
        }
    }
    let missed: Vec<String> = planted.difference(&found).map(|v| v.to_string()).collect();
    let tp = found.len();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(GroundTruthDiff {
        task_id: report.task_id.clone(),
        planted: planted.len(),
        reported: report.findings.len(),
        true_positives: tp,
        precision: ratio(tp, report.findings.len()),
        recall: ratio(tp, planted.len()),
        false_positives,
        missed,
    })
}
