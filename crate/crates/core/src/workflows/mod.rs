//! Reward mode (automatic and manual), claim mode and the POC lifecycle.
//!
//! [`Protocol`] owns the whole protocol state of one simulation. Its
//! operations only run inside an event-loop tick; [`Protocol::advance_to`]
//! seals the previous tick's transactions into a block.

mod claim;
mod poc;
mod reward;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use claim::{ClaimDecision, ClaimFinding, ClaimOffer, OfferStatus, SealedEnvelope};
pub use poc::{PocEntry, PocStatus, Verdict};
pub use reward::ReviewOutcome;

use crate::ids::{NodeId, OfferId, PocId, TaskId};
use crate::incentive::{Accounts, IncentiveError, RewardEvent, Settlement, Situation, Funding};
use crate::ledger::{sync_views, Journal, Ledger, LedgerError, LedgerView, TxKind};
use crate::oracle::{seeded_draw, OracleError};
use crate::registry::{NodeProfile, NodeRegistry, Outcome, RegistryError, Role};
use crate::scheduler::{ScheduleError, ScoreWeights};
use crate::task::{self, AuditReport, Segment, Task, TaskError, TaskStatus, TaskSubmission};

/// SACF paid for each of the five reward situations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardAmounts {
    pub poc_adopted: u64,
    pub poc_audit_adopted: u64,
    pub vuln_adopted: u64,
    pub vuln_audit_adopted: u64,
    pub audit_service_complete: u64,
}

impl Default for RewardAmounts {
    fn default() -> Self {
        Self {
            poc_adopted: 1,
            poc_audit_adopted: 1,
            vuln_adopted: 1,
            vuln_audit_adopted: 1,
            audit_service_complete: 1,
        }
    }
}

impl RewardAmounts {
    pub fn for_situation(&self, s: Situation) -> u64 {
        match s {
            Situation::PocAdopted => self.poc_adopted,
            Situation::PocAuditAdopted => self.poc_audit_adopted,
            Situation::VulnAdopted => self.vuln_adopted,
            Situation::VulnAuditAdopted => self.vuln_audit_adopted,
            Situation::AuditServiceComplete => self.audit_service_complete,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub segments: usize,
    pub redundancy: usize,
    pub quorum: usize,
    pub max_rounds: u32,
    pub wha_count: usize,
    pub weights: ScoreWeights,
    pub rewards: RewardAmounts,
    pub fp_rate: f64,
    /// Pay task-bound rewards from the mint instead of the task escrow.
    pub mint_enabled: bool,
    /// Ticks an undecided claim offer stays open.
    pub claim_ttl: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            segments: 4,
            redundancy: 2,
            quorum: 3,
            max_rounds: 5,
            wha_count: 1,
            weights: ScoreWeights::default(),
            rewards: RewardAmounts::default(),
            fp_rate: 0.0,
            mint_enabled: false,
            claim_ttl: 10,
        }
    }
}

/// How a WHA judges a draft report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum WhaPolicy {
    /// Rejects exactly when the draft holds false positives, flagging them.
    Diligent,
    Approve,
    /// Rejects every round without flagging anything.
    Reject,
    /// Rejects with the given probability per round, flagging false positives.
    Erratic { reject_probability: f64 },
}

/// Simulated behaviour of a node; not protocol state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeBehavior {
    /// Manual detection multiplier in [0, 1].
    pub skill: f64,
    /// Probability of failing an assigned segment.
    pub failure_rate: f64,
    pub wha_policy: WhaPolicy,
    /// Probability a POCA verdict is wrong.
    pub poca_error_rate: f64,
}

impl Default for NodeBehavior {
    fn default() -> Self {
        Self {
            skill: 1.0,
            failure_rate: 0.0,
            wha_policy: WhaPolicy::Diligent,
            poca_error_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub state: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Ordered state transitions per workflow subject (`task:…`, `poc:…`, `claim:…`).
pub type Traces = BTreeMap<String, Vec<TraceEvent>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: Task,
    pub segments: Vec<Segment>,
    pub report: Option<AuditReport>,
    pub arbiters: Vec<NodeId>,
    pub rounds: u32,
    pub settlement: Option<Settlement>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("node {0} does not hold role {1}")]
    RoleViolation(NodeId, Role),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} already exists")]
    DuplicateTask(TaskId),
    #[error("unknown POC {0}")]
    UnknownPoc(PocId),
    #[error("POC {0} already exists")]
    DuplicatePoc(PocId),
    #[error("POC {id} is {status:?}")]
    WrongPocStatus { id: PocId, status: PocStatus },
    #[error("POC {0}: verdicts do not match the auditor quorum")]
    IncompleteVerdicts(PocId),
    #[error("no adopted POCs are available for task {0}")]
    NoPocsAvailable(TaskId),
    #[error("task {0} was not approved within the round limit")]
    MaxRoundsExceeded(TaskId),
    #[error("task {task} uses {actual:?} service, operation needs {expected:?}")]
    WrongService {
        task: TaskId,
        expected: task::ServiceMode,
        actual: task::ServiceMode,
    },
    #[error("unknown or keyless user {0}")]
    UnknownUser(NodeId),
    #[error("no fog node is registered")]
    NoFogNode,
    #[error("unknown offer {0}")]
    UnknownOffer(OfferId),
    #[error("offer {0} already exists")]
    DuplicateOffer(OfferId),
    #[error("offer {id} is {status:?}")]
    OfferClosed { id: OfferId, status: OfferStatus },
    #[error("key does not open envelope {0}")]
    WrongKey(String),
    #[error("invariant violated at tick {tick}: {detail}")]
    Invariant { tick: u64, detail: String },
}

pub struct Protocol {
    pub params: ProtocolParams,
    pub run_seed: u64,
    pub registry: NodeRegistry,
    pub accounts: Accounts,
    pub ledger: Ledger,
    pub journal: Journal,
    pub views: BTreeMap<NodeId, LedgerView>,
    pub behaviors: BTreeMap<NodeId, NodeBehavior>,
    pub tasks: BTreeMap<TaskId, TaskRecord>,
    pub pocs: BTreeMap<PocId, PocEntry>,
    /// Ground truth for POC audits: does the POC actually work.
    pub poc_validity: BTreeMap<PocId, bool>,
    pub envelopes: BTreeMap<String, SealedEnvelope>,
    pub offers: BTreeMap<OfferId, ClaimOffer>,
    pub traces: Traces,
    pending_triggers: Vec<u64>,
}

impl Protocol {
    pub fn new(params: ProtocolParams, registry: NodeRegistry, run_seed: u64) -> Self {
        Self {
            params,
            run_seed,
            registry,
            accounts: Accounts::new(),
            ledger: Ledger::new(),
            journal: Journal::new(),
            views: BTreeMap::new(),
            behaviors: BTreeMap::new(),
            tasks: BTreeMap::new(),
            pocs: BTreeMap::new(),
            poc_validity: BTreeMap::new(),
            envelopes: BTreeMap::new(),
            offers: BTreeMap::new(),
            traces: Traces::new(),
            pending_triggers: Vec::new(),
        }
    }

    pub fn tick(&self) -> u64 {
        self.journal.tick()
    }

    pub fn register_node(
        &mut self,
        profile: NodeProfile,
        allocation: u64,
        behavior: NodeBehavior,
    ) -> Result<NodeId, WorkflowError> {
        let digest = profile.digest();
        let id = self.registry.register_node(profile)?;
        self.accounts.open_node(&id, allocation, digest, &mut self.journal);
        self.behaviors.insert(id.clone(), behavior);
        self.views.insert(id.clone(), LedgerView::default());
        Ok(id)
    }

    pub fn behavior(&self, node: &NodeId) -> NodeBehavior {
        self.behaviors.get(node).copied().unwrap_or_default()
    }

    /// Seal the current tick and move the clock to `tick`.
    pub fn advance_to(&mut self, tick: u64) -> Result<(), WorkflowError> {
        self.seal()?;
        self.journal.set_tick(tick);
        Ok(())
    }

    /// Append pending transactions as one block, sync node views on
    /// completion triggers, and check conservation.
    pub fn seal(&mut self) -> Result<(), WorkflowError> {
        let pending = self.journal.take_pending();
        if !pending.is_empty() {
            self.ledger.append_block(pending)?;
        }
        if let Some(&trigger) = self.pending_triggers.last() {
            sync_views(&mut self.views, &self.ledger, trigger)?;
            self.pending_triggers.clear();
        }
        self.accounts
            .check_conservation()
            .map_err(|e| WorkflowError::Invariant {
                tick: self.tick(),
                detail: e.to_string(),
            })
    }

    pub(crate) fn trigger_sync(&mut self, tx_id: u64) {
        debug_assert!(matches!(
            self.journal
                .pending()
                .iter()
                .find(|t| t.tx_id == tx_id)
                .map(|t| t.kind),
            Some(TxKind::ReportDelivered | TxKind::ClaimDecided)
        ));
        self.pending_triggers.push(tx_id);
    }

    pub(crate) fn trace(&mut self, subject: String, state: impl Into<String>, detail: impl Into<String>) {
        let tick = self.tick();
        self.traces.entry(subject).or_default().push(TraceEvent {
            tick,
            state: state.into(),
            detail: detail.into(),
        });
    }

    pub(crate) fn draw(&self, node: &NodeId, context: &str, salt: &str) -> f64 {
        seeded_draw(self.run_seed, node, context, salt)
    }

    /// Penalize unless the node is already abandoned.
    pub(crate) fn punish(&mut self, node: &NodeId, outcome: Outcome, reason: &str) -> Result<(), WorkflowError> {
        if self.registry.get(node)?.abandoned {
            return Ok(());
        }
        crate::incentive::penalize(&mut self.registry, node, outcome, reason, &mut self.journal)?;
        Ok(())
    }

    pub(crate) fn complete(&mut self, node: &NodeId) -> Result<(), WorkflowError> {
        if !self.registry.get(node)?.abandoned {
            self.registry.record_outcome(node, Outcome::Completed, &mut self.journal)?;
        }
        Ok(())
    }

    /// Reward tied to a task: minted and paid now, or owed from escrow until
    /// settlement.
    pub(crate) fn task_reward(
        &mut self,
        task: &TaskId,
        situation: Situation,
        beneficiary: &NodeId,
    ) -> Result<(), WorkflowError> {
        let amount = self.params.rewards.for_situation(situation);
        if self.params.mint_enabled {
            self.accounts.reward(
                &RewardEvent {
                    situation,
                    beneficiary: beneficiary.clone(),
                    amount,
                    funding: Funding::Mint,
                    subject: task.to_string(),
                },
                &mut self.journal,
            )?;
        } else {
            self.accounts.owe(RewardEvent {
                situation,
                beneficiary: beneficiary.clone(),
                amount,
                funding: Funding::Escrow(task.clone()),
                subject: task.to_string(),
            })?;
        }
        Ok(())
    }

    pub(crate) fn minted_reward(
        &mut self,
        subject: &str,
        situation: Situation,
        beneficiary: &NodeId,
    ) -> Result<(), WorkflowError> {
        let amount = self.params.rewards.for_situation(situation);
        self.accounts.reward(
            &RewardEvent {
                situation,
                beneficiary: beneficiary.clone(),
                amount,
                funding: Funding::Mint,
                subject: subject.to_owned(),
            },
            &mut self.journal,
        )?;
        Ok(())
    }

    /// Fog node closest to `node`, ties by id.
    pub fn nearest_fog(&self, node: &NodeId) -> Result<NodeId, WorkflowError> {
        let origin = self.registry.get(node)?.position;
        self.registry
            .fog_nodes()
            .map(|f| (f.position.distance(&origin), f.node_id.clone()))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
            .map(|(_, id)| id)
            .ok_or(WorkflowError::NoFogNode)
    }

    pub fn task(&self, id: &TaskId) -> Result<&TaskRecord, WorkflowError> {
        self.tasks
            .get(id)
            .ok_or_else(|| WorkflowError::UnknownTask(id.clone()))
    }

    pub(crate) fn task_mut(&mut self, id: &TaskId) -> Result<&mut TaskRecord, WorkflowError> {
        self.tasks
            .get_mut(id)
            .ok_or_else(|| WorkflowError::UnknownTask(id.clone()))
    }

    /// Accept a task and fragment it. A fragmentation failure fails and
    /// settles the task; the error is returned after that bookkeeping.
    pub fn submit_task(&mut self, submission: TaskSubmission) -> Result<(), WorkflowError> {
        if self.tasks.contains_key(&submission.task_id) {
            return Err(WorkflowError::DuplicateTask(submission.task_id));
        }
        let mut task = task::submit_task(submission, &self.registry, &mut self.accounts, &mut self.journal)?;
        let id = task.task_id.clone();
        let subject = format!("task:{id}");
        self.trace(subject.clone(), "Submitted", format!("escrow {}", task.escrow_amount));
        let s = self.params.segments.min(task.payload.len()).max(1);
        let fragmented = task::fragment(
            &mut task,
            s,
            self.params.redundancy,
            &mut self.registry,
            self.params.weights,
            &mut self.journal,
        );
        let (segments, error) = match fragmented {
            Ok(segments) => (segments, None),
            Err(e) => (Vec::new(), Some(e)),
        };
        self.tasks.insert(
            id.clone(),
            TaskRecord {
                task,
                segments,
                report: None,
                arbiters: Vec::new(),
                rounds: 0,
                settlement: None,
                failure: None,
            },
        );
        match error {
            None => {
                let n = self.tasks[&id].segments.len();
                self.trace(subject, "Fragmented", format!("{n} segments"));
                Ok(())
            }
            Some(e) => {
                self.fail_task(&id, &e.to_string())?;
                Err(e.into())
            }
        }
    }

    /// Move a task to Failed (if not already) and refund its escrow in full.
    pub fn fail_task(&mut self, id: &TaskId, reason: &str) -> Result<(), WorkflowError> {
        let record = self.task_mut(id)?;
        if record.task.status == TaskStatus::Reported {
            return Err(TaskError::BadTransition {
                task: id.clone(),
                from: TaskStatus::Reported,
                to: TaskStatus::Failed,
            }
            .into());
        }
        if record.task.status != TaskStatus::Failed {
            let record = self.tasks.get_mut(id).expect("checked");
            record.task.transition(TaskStatus::Failed, &mut self.journal)?;
        }
        let record = self.tasks.get_mut(id).expect("checked");
        record.failure = Some(reason.to_owned());
        self.accounts.forgive(id);
        let settlement = self.accounts.settle(id, &mut self.journal)?;
        let refund = settlement.refund;
        self.task_mut(id)?.settlement = Some(settlement);
        self.trace(format!("task:{id}"), "Failed", format!("{reason}; refund {refund}"));
        Ok(())
    }

    pub fn unfinished_tasks(&self) -> BTreeSet<TaskId> {
        self.tasks
            .iter()
            .filter(|(_, r)| !r.task.status.is_terminal())
            .map(|(id, _)| id.clone())
            .collect()
    }
}
