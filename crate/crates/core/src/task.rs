//! Task intake, fragmentation with redundancy, and result gathering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::digest::Digest;
use crate::ids::{NodeId, TaskId};
use crate::incentive::{Accounts, IncentiveError};
use crate::ledger::{Journal, TxBody, TxKind};
use crate::oracle::{classify_risk, AuditTarget, RiskLevel, TaskType, VulnerabilityFinding};
use crate::registry::{NodeRegistry, RegistryError, Role};
use crate::scheduler::{self, ScheduleError, ScoreWeights, SelectionRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceMode {
    Automatic,
    Manual,
}

impl ServiceMode {
    /// Role that executes segments in this mode.
    pub fn worker_role(self) -> Role {
        match self {
            ServiceMode::Automatic => Role::Cro,
            ServiceMode::Manual => Role::Whh,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Submitted,
    Fragmented,
    Running,
    Gathering,
    Reported,
    Failed,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Reported | TaskStatus::Failed)
    }

    pub fn can_become(self, next: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!(
            (self, next),
            (Submitted, Fragmented)
                | (Fragmented, Running)
                | (Running, Gathering)
                | (Gathering, Reported)
                | (Submitted | Fragmented | Running | Gathering, Failed)
        )
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: TaskId,
    pub user: NodeId,
    pub task_type: TaskType,
    pub service: ServiceMode,
    pub payload: Vec<AuditTarget>,
    pub status: TaskStatus,
    pub escrow_amount: u64,
}

impl Task {
    /// Move along the status machine and record the transition. Submitted,
    /// Fragmented and Reported are recorded by their own transaction kinds.
    pub fn transition(&mut self, next: TaskStatus, journal: &mut Journal) -> Result<(), TaskError> {
        if !self.status.can_become(next) {
            return Err(TaskError::BadTransition {
                task: self.task_id.clone(),
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        if matches!(next, TaskStatus::Running | TaskStatus::Gathering | TaskStatus::Failed) {
            journal.record(
                TxBody::event(TxKind::TaskStatusChanged, self.user.as_str(), self.task_id.as_str())
                    .tag(next.to_string()),
            );
        }
        Ok(())
    }

    fn require(&self, status: TaskStatus) -> Result<(), TaskError> {
        if self.status != status {
            return Err(TaskError::WrongStatus {
                task: self.task_id.clone(),
                expected: status,
                actual: self.status,
            });
        }
        Ok(())
    }

    pub fn payload_digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.str(self.task_id.as_str()).u32(self.payload.len() as u32);
        for t in &self.payload {
            e.str(&t.target_id).u8(t.target_type as u8);
        }
        e.digest_of()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub task_id: TaskId,
    pub index: usize,
    /// Half-open range of payload positions.
    pub slice: Range<usize>,
    pub assignees: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssigneeResult {
    Completed {
        findings: Vec<VulnerabilityFinding>,
        reported_at: u64,
    },
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub segment_index: usize,
    pub per_assignee: BTreeMap<NodeId, AssigneeResult>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedFinding {
    /// Finding as submitted by the credited (first) reporter.
    pub finding: VulnerabilityFinding,
    pub segment_index: usize,
    /// Every assignee that reported this finding, ascending.
    pub reported_by: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub task_id: TaskId,
    pub findings: Vec<ReportedFinding>,
    pub risk_level: RiskLevel,
    pub approved: bool,
}

impl AuditReport {
    pub fn recompute_risk(&mut self) {
        self.risk_level = classify_risk(self.findings.iter().map(|f| &f.finding));
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.str(self.task_id.as_str()).u32(self.findings.len() as u32);
        for f in &self.findings {
            e.digest(&f.finding.content_digest());
        }
        e.u8(self.risk_level as u8);
        e.digest_of()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("task {task}: cannot move from {from} to {to}")]
    BadTransition {
        task: TaskId,
        from: TaskStatus,
        to: TaskStatus,
    },
    #[error("task {task} is {actual}, expected {expected}")]
    WrongStatus {
        task: TaskId,
        expected: TaskStatus,
        actual: TaskStatus,
    },
    #[error("node {0} does not hold the User role")]
    RoleViolation(NodeId),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("segment count {segments} invalid for {targets} payload targets")]
    BadSegmentCount { segments: usize, targets: usize },
    #[error("redundancy must be at least 1")]
    ZeroRedundancy,
    #[error("target {target} has type {actual:?}, task expects {expected:?}")]
    TargetTypeMismatch {
        target: String,
        expected: TaskType,
        actual: TaskType,
    },
    #[error("task {task}: segment {segment} has no successful assignee")]
    IncompleteResults { task: TaskId, segment: usize },
}

pub struct TaskSubmission {
    pub task_id: TaskId,
    pub user: NodeId,
    pub task_type: TaskType,
    pub service: ServiceMode,
    pub payload: Vec<AuditTarget>,
    pub escrow_amount: u64,
}

/// Accept a task and lock its escrow. Nothing is recorded on failure.
pub fn submit_task(
    submission: TaskSubmission,
    registry: &NodeRegistry,
    accounts: &mut Accounts,
    journal: &mut Journal,
) -> Result<Task, TaskError> {
    let user = registry.get(&submission.user)?;
    if !user.has_role(Role::User) {
        return Err(TaskError::RoleViolation(submission.user));
    }
    if user.abandoned {
        return Err(RegistryError::AbandonedNode(submission.user).into());
    }
    if let Some(bad) = submission
        .payload
        .iter()
        .find(|t| t.target_type != submission.task_type)
    {
        return Err(TaskError::TargetTypeMismatch {
            target: bad.target_id.clone(),
            expected: submission.task_type,
            actual: bad.target_type,
        });
    }
    if accounts.balance_of_node(&submission.user) < submission.escrow_amount {
        return Err(IncentiveError::InsufficientFunds {
            account: submission.user.to_string(),
            needed: submission.escrow_amount,
            available: accounts.balance_of_node(&submission.user),
        }
        .into());
    }
    let task = Task {
        task_id: submission.task_id,
        user: submission.user,
        task_type: submission.task_type,
        service: submission.service,
        payload: submission.payload,
        status: TaskStatus::Submitted,
        escrow_amount: submission.escrow_amount,
    };
    journal.record(
        TxBody::event(TxKind::TaskSubmitted, task.user.as_str(), task.task_id.as_str())
            .digest(task.payload_digest())
            .tag(format!("{:?}/{:?}", task.task_type, task.service)),
    );
    accounts.escrow(&task.user, &task.task_id, task.escrow_amount, journal)?;
    Ok(task)
}

/// Split `len` positions into `s` contiguous, near-equal slices.
pub fn partition(len: usize, s: usize) -> Vec<Range<usize>> {
    let base = len / s;
    let extra = len % s;
    let mut start = 0;
    (0..s)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Round-robin placement: replica `j` of segment `i` goes to
/// `pool[(i * r + j) % pool.len()]`. Requires `r <= pool.len()`.
pub fn round_robin(pool: &[NodeId], s: usize, r: usize) -> Vec<Vec<NodeId>> {
    assert!(r >= 1 && r <= pool.len(), "redundancy exceeds pool");
    (0..s)
        .map(|i| (0..r).map(|j| pool[(i * r + j) % pool.len()].clone()).collect())
        .collect()
}

/// Fragment a submitted task into `s` segments of `r` distinct workers each.
///
/// Workers are the top `min(n, s * r)` nodes by proximity/work score; the task
/// owner never audits its own task. `InsufficientNodes` fails the task.
pub fn fragment(
    task: &mut Task,
    s: usize,
    r: usize,
    registry: &mut NodeRegistry,
    weights: ScoreWeights,
    journal: &mut Journal,
) -> Result<Vec<Segment>, TaskError> {
    task.require(TaskStatus::Submitted)?;
    if r == 0 {
        return Err(TaskError::ZeroRedundancy);
    }
    if s == 0 || s > task.payload.len() {
        return Err(TaskError::BadSegmentCount {
            segments: s,
            targets: task.payload.len(),
        });
    }
    let role = task.service.worker_role();
    let mut request = SelectionRequest {
        task_id: task.task_id.clone(),
        requester: task.user.clone(),
        role_needed: role,
        count: r,
        exclusions: BTreeSet::from([task.user.clone()]),
    };
    let available = scheduler::score_candidates(registry, &request, weights)?.len();
    if available < r {
        task.transition(TaskStatus::Failed, journal)?;
        return Err(ScheduleError::InsufficientNodes {
            role,
            needed: r,
            available,
        }
        .into());
    }
    request.count = available.min(s * r);
    let pool = scheduler::select_by_proximity_pow(registry, &request, weights)?;
    let placement = round_robin(&pool, s, r);

    let mut segments = Vec::with_capacity(s);
    for (index, (slice, assignees)) in partition(task.payload.len(), s)
        .into_iter()
        .zip(placement)
        .enumerate()
    {
        let segment_id = format!("{}/{}", task.task_id, index);
        let mut digest = Encoder::new();
        digest
            .str(&segment_id)
            .u64(slice.start as u64)
            .u64(slice.end as u64);
        let digest = digest.digest_of();
        for node in &assignees {
            registry.record_assignment(node)?;
            journal.record(
                TxBody::event(TxKind::SegmentAssigned, node.as_str(), task.task_id.as_str())
                    .digest(digest)
                    .tag(format!("segment:{index}")),
            );
        }
        segments.push(Segment {
            segment_id,
            task_id: task.task_id.clone(),
            index,
            slice,
            assignees: assignees.into_iter().collect(),
        });
    }
    task.transition(TaskStatus::Fragmented, journal)?;
    Ok(segments)
}

type Merged = ((u64, NodeId), VulnerabilityFinding, usize, BTreeSet<NodeId>);

/// Merge redundant segment results into a draft report.
///
/// Duplicate findings collapse onto their first reporter: earliest
/// `reported_at`, then ascending node id. The task moves to Gathering; it
/// becomes Reported only through [`deliver_report`].
pub fn gather(
    task: &mut Task,
    segments: &[Segment],
    results: &[SegmentResult],
    journal: &mut Journal,
) -> Result<AuditReport, TaskError> {
    task.require(TaskStatus::Running)?;
    let by_index: BTreeMap<usize, &SegmentResult> =
        results.iter().map(|r| (r.segment_index, r)).collect();

    // finding_id -> (credit key, finding, segment, reporters)
    let mut merged: BTreeMap<String, Merged> = BTreeMap::new();
    for segment in segments {
        let succeeded = by_index
            .get(&segment.index)
            .map(|r| {
                r.per_assignee
                    .iter()
                    .filter(|(node, res)| {
                        segment.assignees.contains(*node)
                            && matches!(res, AssigneeResult::Completed { .. })
                    })
                    .count()
            })
            .unwrap_or(0);
        if succeeded == 0 {
            return Err(TaskError::IncompleteResults {
                task: task.task_id.clone(),
                segment: segment.index,
            });
        }
        let result = by_index[&segment.index];
        for (node, res) in &result.per_assignee {
            let AssigneeResult::Completed { findings, reported_at } = res else {
                continue;
            };
            if !segment.assignees.contains(node) {
                continue;
            }
            for finding in findings {
                let credit = (*reported_at, node.clone());
                merged
                    .entry(finding.finding_id.clone())
                    .and_modify(|(best, kept, _, reporters)| {
                        reporters.insert(node.clone());
                        if credit < *best {
                            *best = credit.clone();
                            *kept = finding.clone();
                        }
                    })
                    .or_insert_with(|| {
                        (credit.clone(), finding.clone(), segment.index, BTreeSet::from([node.clone()]))
                    });
            }
        }
    }
    let mut findings: Vec<ReportedFinding> = merged
        .into_values()
        .map(|(_, finding, segment_index, reporters)| ReportedFinding {
            finding,
            segment_index,
            reported_by: reporters.into_iter().collect(),
        })
        .collect();
    findings.sort_by(|a, b| {
        (a.finding.target_ref, &a.finding.finding_id).cmp(&(b.finding.target_ref, &b.finding.finding_id))
    });
    let mut report = AuditReport {
        task_id: task.task_id.clone(),
        findings,
        risk_level: RiskLevel::Low,
        approved: false,
    };
    report.recompute_risk();
    task.transition(TaskStatus::Gathering, journal)?;
    Ok(report)
}

/// Mark an approved report delivered. Returns the ReportDelivered tx id.
pub fn deliver_report(
    task: &mut Task,
    report: &mut AuditReport,
    fog: &NodeId,
    journal: &mut Journal,
) -> Result<u64, TaskError> {
    task.transition(TaskStatus::Reported, journal)?;
    report.approved = true;
    Ok(journal.record(
        TxBody::event(TxKind::ReportDelivered, fog.as_str(), task.task_id.as_str())
            .digest(report.digest())
            .tag(format!("risk:{}", report.risk_level)),
    ))
}
