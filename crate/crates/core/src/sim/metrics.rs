use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::ids::NodeId;
use crate::incentive::earnings_from_ledger;
use crate::oracle::{RiskLevel, Severity};
use crate::task::{ServiceMode, TaskStatus};
use crate::workflows::{OfferStatus, PocStatus, Protocol};

use super::scenario::SCHEMA_VERSION;

/// Aggregate results of one run. `tasks_reported + tasks_failed` equals the
/// tasks accepted for submission; refused submissions never got an escrow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema: u32,
    pub run_seed: u64,
    pub tasks_submitted: u64,
    pub tasks_reported: u64,
    pub tasks_failed: u64,
    pub tasks_refused: u64,
    /// Risk level of each reported task.
    pub risk_distribution: BTreeMap<RiskLevel, u64>,
    pub findings_total: u64,
    pub findings_high: u64,
    pub false_positives: u64,
    /// Reward income per node, from the ledger.
    pub earnings: BTreeMap<NodeId, u64>,
    pub abandonments: u64,
    /// Approval rounds used by each manual task that reached review.
    pub rounds_histogram: BTreeMap<u32, u64>,
    pub pocs: BTreeMap<String, u64>,
    pub claims: BTreeMap<String, u64>,
    pub ledger_blocks: u64,
    pub ledger_transactions: u64,
    pub head_digest: Digest,
}

fn label<T: std::fmt::Debug>(v: T) -> String {
    format!("{v:?}").to_lowercase()
}

impl RunMetrics {
    pub fn collect(p: &Protocol, refused: u64) -> Self {
        let mut m = RunMetrics {
            schema: SCHEMA_VERSION,
            run_seed: p.run_seed,
            tasks_submitted: p.tasks.len() as u64,
            tasks_reported: 0,
            tasks_failed: 0,
            tasks_refused: refused,
            risk_distribution: BTreeMap::new(),
            findings_total: 0,
            findings_high: 0,
            false_positives: 0,
            earnings: earnings_from_ledger(&p.ledger),
            abandonments: p.registry.nodes().filter(|n| n.abandoned).count() as u64,
            rounds_histogram: BTreeMap::new(),
            pocs: BTreeMap::new(),
            claims: BTreeMap::new(),
            ledger_blocks: p.ledger.len() as u64,
            ledger_transactions: p.ledger.tx_count() as u64,
            head_digest: p.ledger.head_digest(),
        };
        for record in p.tasks.values() {
            match record.task.status {
                TaskStatus::Reported => {
                    m.tasks_reported += 1;
                    let report = record.report.as_ref().expect("reported task has a report");
                    *m.risk_distribution.entry(report.risk_level).or_default() += 1;
                    for f in &report.findings {
                        m.findings_total += 1;
                        if f.finding.severity == Severity::High {
                            m.findings_high += 1;
                        }
                        if f.finding.is_false_positive() {
                            m.false_positives += 1;
                        }
                    }
                }
                TaskStatus::Failed => m.tasks_failed += 1,
                _ => {}
            }
            if record.task.service == ServiceMode::Manual && record.rounds > 0 {
                *m.rounds_histogram.entry(record.rounds).or_default() += 1;
            }
        }
        for status in [PocStatus::Submitted, PocStatus::UnderAudit, PocStatus::Adopted, PocStatus::Rejected] {
            let n = p.pocs.values().filter(|e| e.status == status).count() as u64;
            if n > 0 {
                m.pocs.insert(label(status), n);
            }
        }
        for status in [OfferStatus::Offered, OfferStatus::Claimed, OfferStatus::Declined, OfferStatus::Expired] {
            let n = p.offers.values().filter(|o| o.status == status).count() as u64;
            if n > 0 {
                m.claims.insert(label(status), n);
            }
        }
        m
    }

    /// Share of reported tasks at each risk level.
    pub fn risk_shares(&self) -> BTreeMap<RiskLevel, f64> {
        let total: u64 = self.risk_distribution.values().sum();
        self.risk_distribution
            .iter()
            .map(|(k, v)| (*k, *v as f64 / total as f64))
            .collect()
    }
}
