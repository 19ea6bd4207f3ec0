//! Reward mode: automatic audits by CROs with installed POCs, and manual
//! audits by WHHs under a bounded WHA approval loop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Protocol, WhaPolicy, WorkflowError};
use crate::codec::Encoder;
use crate::ids::{NodeId, TaskId};
use crate::incentive::Situation;
use crate::ledger::{TxBody, TxKind};
use crate::oracle::{detect, DetectorMode, DetectorProfile, FindingSource, InstalledPoc};
use crate::registry::{Outcome, Role};
use crate::scheduler::select_arbiters;
use crate::task::{self, AssigneeResult, AuditReport, SegmentResult, ServiceMode, TaskError, TaskStatus};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewOutcome {
    Approved,
    /// Rejected this round; the listed findings were dropped before resubmission.
    Rejected { dropped: Vec<String> },
    Failed,
}

impl Protocol {
    fn require_service(&self, id: &TaskId, service: ServiceMode) -> Result<(), WorkflowError> {
        let record = self.task(id)?;
        if record.task.service != service {
            return Err(WorkflowError::WrongService {
                task: id.clone(),
                expected: service,
                actual: record.task.service,
            });
        }
        if record.task.status != TaskStatus::Fragmented {
            return Err(TaskError::WrongStatus {
                task: id.clone(),
                expected: TaskStatus::Fragmented,
                actual: record.task.status,
            }
            .into());
        }
        Ok(())
    }

    /// Run every (segment, assignee) pair. Failed or abandoned assignees are
    /// punished; successful ones are credited with a completion.
    fn execute_segments(
        &mut self,
        id: &TaskId,
        mode_for: impl Fn(&Protocol, &NodeId) -> DetectorMode,
    ) -> Result<Vec<SegmentResult>, WorkflowError> {
        let record = self.task(id)?;
        let segments = record.segments.clone();
        let payload = record.task.payload.clone();
        let fp_rate = self.params.fp_rate;
        let mut results = Vec::with_capacity(segments.len());
        for segment in &segments {
            let mut per_assignee = BTreeMap::new();
            for node in &segment.assignees {
                if self.registry.get(node)?.abandoned {
                    per_assignee.insert(node.clone(), AssigneeResult::Failed);
                    continue;
                }
                let failure_rate = self.behavior(node).failure_rate;
                if self.draw(node, &segment.segment_id, "segment-failure") < failure_rate {
                    per_assignee.insert(node.clone(), AssigneeResult::Failed);
                    self.punish(node, Outcome::Failed, id.as_str())?;
                    continue;
                }
                let profile = DetectorProfile {
                    detector: node.clone(),
                    mode: mode_for(self, node),
                };
                let mut findings = Vec::new();
                for target_ref in segment.slice.clone() {
                    findings.extend(detect(
                        &payload[target_ref],
                        target_ref,
                        segment,
                        &profile,
                        self.run_seed,
                        fp_rate,
                    )?);
                }
                per_assignee.insert(
                    node.clone(),
                    AssigneeResult::Completed {
                        findings,
                        reported_at: self.tick(),
                    },
                );
                self.complete(node)?;
            }
            results.push(SegmentResult {
                segment_index: segment.index,
                per_assignee,
            });
        }
        Ok(results)
    }

    /// Gather results; an incomplete segment fails and refunds the task.
    fn gather_or_fail(&mut self, id: &TaskId, results: &[SegmentResult]) -> Result<AuditReport, WorkflowError> {
        let record = self.tasks.get_mut(id).expect("caller checked");
        match task::gather(&mut record.task, &record.segments, results, &mut self.journal) {
            Ok(report) => {
                let n = report.findings.len();
                self.trace(format!("task:{id}"), "Gathering", format!("{n} findings"));
                Ok(report)
            }
            Err(e @ TaskError::IncompleteResults { .. }) => {
                self.fail_task(id, &e.to_string())?;
                Err(e.into())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn start_running(&mut self, id: &TaskId) -> Result<(), WorkflowError> {
        let record = self.tasks.get_mut(id).expect("caller checked");
        record.task.transition(TaskStatus::Running, &mut self.journal)?;
        self.trace(format!("task:{id}"), "Running", "");
        Ok(())
    }

    fn deliver(&mut self, id: &TaskId, mut report: AuditReport) -> Result<AuditReport, WorkflowError> {
        let user = self.task(id)?.task.user.clone();
        let fog = self.nearest_fog(&user)?;
        let record = self.tasks.get_mut(id).expect("checked");
        let tx = task::deliver_report(&mut record.task, &mut report, &fog, &mut self.journal)?;
        self.trigger_sync(tx);
        let settlement = self.accounts.settle(id, &mut self.journal)?;
        let detail = format!(
            "risk {} with {} findings; refund {}",
            report.risk_level,
            report.findings.len(),
            settlement.refund
        );
        let record = self.tasks.get_mut(id).expect("checked");
        record.report = Some(report.clone());
        record.settlement = Some(settlement);
        self.trace(format!("task:{id}"), "Reported", detail);
        Ok(report)
    }

    pub fn run_reward_automatic(&mut self, id: &TaskId) -> Result<AuditReport, WorkflowError> {
        self.require_service(id, ServiceMode::Automatic)?;
        let pocs: Vec<InstalledPoc> = self.adopted_pocs();
        if pocs.is_empty() {
            let err = WorkflowError::NoPocsAvailable(id.clone());
            self.fail_task(id, &err.to_string())?;
            return Err(err);
        }
        self.start_running(id)?;
        let results = self.execute_segments(id, |_, _| DetectorMode::AutomaticWithPocs(pocs.clone()))?;
        let report = self.gather_or_fail(id, &results)?;

        let mut cros = BTreeSet::new();
        for r in &results {
            for (node, res) in &r.per_assignee {
                if matches!(res, AssigneeResult::Completed { .. }) {
                    cros.insert(node.clone());
                }
            }
        }
        for cro in &cros {
            self.task_reward(id, Situation::AuditServiceComplete, cro)?;
        }
        for f in &report.findings {
            if let FindingSource::AutomaticPoc(poc) = &f.finding.via {
                let author = self.poc(poc)?.author.clone();
                self.task_reward(id, Situation::PocAdopted, &author)?;
            }
        }
        self.deliver(id, report)
    }

    /// Execute a manual task and seat its WHAs, leaving a draft for review.
    pub fn start_manual(&mut self, id: &TaskId) -> Result<AuditReport, WorkflowError> {
        self.require_service(id, ServiceMode::Manual)?;
        self.start_running(id)?;
        let results = self.execute_segments(id, |p, node| DetectorMode::ManualSkill(p.behavior(node).skill))?;
        let report = self.gather_or_fail(id, &results)?;

        let record = self.task(id)?;
        let mut exclusions: BTreeSet<NodeId> = record
            .segments
            .iter()
            .flat_map(|s| s.assignees.iter().cloned())
            .collect();
        exclusions.insert(record.task.user.clone());
        let arbiters = match select_arbiters(&self.registry, Role::Whh, self.params.wha_count, &exclusions) {
            Ok(a) => a,
            Err(e) => {
                self.fail_task(id, &e.to_string())?;
                return Err(e.into());
            }
        };
        for a in &arbiters {
            self.registry.record_assignment(a)?;
        }
        let names = arbiters.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",");
        self.trace(format!("task:{id}"), "AwaitingApproval", format!("WHA {names}"));
        let record = self.tasks.get_mut(id).expect("checked");
        record.arbiters = arbiters;
        record.report = Some(report.clone());
        Ok(report)
    }

    /// One WHA review of the current draft.
    pub fn review_round(&mut self, id: &TaskId) -> Result<ReviewOutcome, WorkflowError> {
        let record = self.task(id)?;
        if record.task.status != TaskStatus::Gathering || record.report.is_none() {
            return Err(TaskError::WrongStatus {
                task: id.clone(),
                expected: TaskStatus::Gathering,
                actual: record.task.status,
            }
            .into());
        }
        let round = record.rounds + 1;
        let draft = record.report.clone().expect("checked");
        let arbiters: Vec<NodeId> = record
            .arbiters
            .iter()
            .filter(|a| self.registry.get(a).map(|n| !n.abandoned).unwrap_or(false))
            .cloned()
            .collect();
        self.task_mut(id)?.rounds = round;

        let mut by_reporter: BTreeMap<&NodeId, Encoder> = BTreeMap::new();
        for f in &draft.findings {
            by_reporter
                .entry(&f.finding.discovered_by)
                .or_default()
                .digest(&f.finding.content_digest());
        }
        for (reporter, enc) in by_reporter {
            self.journal.record(
                TxBody::event(TxKind::VulnSubmitted, reporter.as_str(), id.as_str())
                    .digest(enc.digest_of())
                    .tag(format!("round:{round}")),
            );
        }

        if arbiters.is_empty() {
            self.fail_task(id, "no active WHA")?;
            return Ok(ReviewOutcome::Failed);
        }

        let false_positives: BTreeSet<String> = draft
            .findings
            .iter()
            .filter(|f| f.finding.is_false_positive())
            .map(|f| f.finding.finding_id.clone())
            .collect();
        let mut flagged = BTreeSet::new();
        let mut approved = true;
        for wha in &arbiters {
            let rejects = match self.behavior(wha).wha_policy {
                WhaPolicy::Diligent => !false_positives.is_empty(),
                WhaPolicy::Approve => false,
                WhaPolicy::Reject => true,
                WhaPolicy::Erratic { reject_probability } => {
                    self.draw(wha, id.as_str(), &format!("review:{round}")) < reject_probability
                }
            };
            if rejects && !matches!(self.behavior(wha).wha_policy, WhaPolicy::Reject) {
                flagged.extend(false_positives.iter().cloned());
            }
            approved &= !rejects;
            self.journal.record(
                TxBody::event(TxKind::VulnVerdict, wha.as_str(), id.as_str())
                    .digest(draft.digest())
                    .tag(format!("round:{round}:{}", if rejects { "reject" } else { "approve" })),
            );
        }

        if approved {
            for f in &draft.findings {
                self.task_reward(id, Situation::VulnAdopted, &f.finding.discovered_by)?;
            }
            for wha in &arbiters {
                self.task_reward(id, Situation::VulnAuditAdopted, wha)?;
                self.complete(wha)?;
            }
            self.deliver(id, draft)?;
            return Ok(ReviewOutcome::Approved);
        }

        let mut offenders: BTreeSet<NodeId> = draft
            .findings
            .iter()
            .filter(|f| flagged.contains(&f.finding.finding_id))
            .flat_map(|f| f.reported_by.iter().cloned())
            .collect();
        if offenders.is_empty() {
            offenders = draft.findings.iter().flat_map(|f| f.reported_by.iter().cloned()).collect();
            if offenders.is_empty() {
                offenders = self.task(id)?.segments.iter().flat_map(|s| s.assignees.iter().cloned()).collect();
            }
        }
        for whh in &offenders {
            self.punish(whh, Outcome::Rejected, id.as_str())?;
        }
        let mut resubmitted = draft;
        resubmitted.findings.retain(|f| !flagged.contains(&f.finding.finding_id));
        resubmitted.recompute_risk();
        let dropped: Vec<String> = flagged.into_iter().collect();
        self.trace(
            format!("task:{id}"),
            "Rejected",
            format!("round {round}; dropped {}", dropped.len()),
        );
        self.task_mut(id)?.report = Some(resubmitted);

        if round >= self.params.max_rounds {
            let err = WorkflowError::MaxRoundsExceeded(id.clone());
            self.fail_task(id, &err.to_string())?;
            return Ok(ReviewOutcome::Failed);
        }
        Ok(ReviewOutcome::Rejected { dropped })
    }

    /// Whole manual workflow inside the current tick.
    pub fn run_reward_manual(&mut self, id: &TaskId) -> Result<AuditReport, WorkflowError> {
        self.start_manual(id)?;
        loop {
            match self.review_round(id)? {
                ReviewOutcome::Approved => {
                    return Ok(self.task(id)?.report.clone().expect("delivered report"));
                }
                ReviewOutcome::Failed => return Err(WorkflowError::MaxRoundsExceeded(id.clone())),
                ReviewOutcome::Rejected { .. } => {}
            }
        }
    }
}
