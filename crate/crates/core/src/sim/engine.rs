//! Deterministic event loop.
//!
//! Each tick drains its events in (kind, id) order. Events scheduled for the
//! current tick while it runs are drained in the same pass. Workflow errors
//! that are ordinary protocol outcomes (a refused submission, an unaffordable
//! claim) are traced and the run goes on; anything that breaks an invariant
//! aborts the run.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::digest::Digest;
use crate::ids::{AccountId, NodeId, OfferId, PocId, TaskId};
use crate::ledger::{Ledger, Verification};
use crate::registry::{NodeProfile, NodeRegistry, WorkProof};
use crate::task::{ServiceMode, TaskSubmission};
use crate::workflows::{
    ClaimDecision, OfferStatus, PocEntry, Protocol, ReviewOutcome, TaskRecord, Traces, WorkflowError,
};

use super::metrics::RunMetrics;
use super::scenario::{ClaimSpec, Scenario, TaskSpec};

/// Environment variable that replaces the scenario's `run_seed`.
pub const SEED_ENV: &str = "SAPIENS_SIM_SEED";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("internal invariant violated at tick {tick}: {detail}")]
    InternalInvariantViolation { tick: u64, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    PocSubmit,
    PocRetry,
    PocAudit,
    TaskSubmit,
    TaskExecute,
    TaskReview,
    ClaimSubmit,
    ClaimDecide,
    ClaimExpire,
}

type Event = (Kind, String);

#[derive(Clone, Debug, Serialize)]
pub struct RunOutput {
    pub run_seed: u64,
    pub ticks: u64,
    #[serde(skip)]
    pub ledger: Ledger,
    pub metrics: RunMetrics,
    pub traces: Traces,
    pub tasks: BTreeMap<TaskId, TaskRecord>,
    pub pocs: BTreeMap<PocId, PocEntry>,
    pub balances: BTreeMap<AccountId, u64>,
    pub nodes: Vec<NodeProfile>,
}

/// `SAPIENS_SIM_SEED` if set and numeric.
pub fn seed_from_env() -> Option<u64> {
    std::env::var(SEED_ENV).ok()?.trim().parse().ok()
}

fn puzzle_seed(run_seed: u64, node: &NodeId, i: u32) -> Digest {
    Digest::of_parts(&[b"pow", &run_seed.to_be_bytes(), node.as_str().as_bytes(), &i.to_be_bytes()])
}

/// Protocol state after tick-0 registration: nodes registered in id order
/// with their genesis allocation, then their work proofs mined.
pub fn genesis(scenario: &Scenario, run_seed: u64) -> Result<Protocol, WorkflowError> {
    let registry = NodeRegistry::new(scenario.params.punishment());
    let mut p = Protocol::new(scenario.params.protocol(), registry, run_seed);
    let mut specs: Vec<_> = scenario.nodes.iter().collect();
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    for spec in &specs {
        let allocation = scenario.initial_balances.get(&spec.id).copied().unwrap_or(0);
        p.register_node(spec.profile(), allocation, spec.behavior)?;
    }
    for spec in &specs {
        for i in 0..spec.proofs {
            let proof = WorkProof::solve(
                spec.id.clone(),
                puzzle_seed(run_seed, &spec.id, i),
                scenario.params.pow_difficulty,
            );
            p.registry.submit_work_proof(&proof, &mut p.journal)?;
        }
    }
    for poc in &scenario.pocs {
        p.poc_validity.insert(poc.id.clone(), poc.valid);
    }
    Ok(p)
}

struct Engine<'a> {
    p: Protocol,
    agenda: BTreeMap<u64, BTreeSet<Event>>,
    tasks: BTreeMap<&'a str, &'a TaskSpec>,
    pocs: BTreeMap<&'a str, &'a crate::sim::scenario::PocSpec>,
    claims: BTreeMap<&'a str, &'a ClaimSpec>,
    refused_tasks: BTreeSet<TaskId>,
}

impl<'a> Engine<'a> {
    fn schedule(&mut self, tick: u64, kind: Kind, id: &str) {
        self.agenda.entry(tick).or_default().insert((kind, id.to_owned()));
    }

    fn abort(&self, detail: impl Into<String>) -> RunError {
        RunError::InternalInvariantViolation {
            tick: self.p.tick(),
            detail: detail.into(),
        }
    }

    /// Trace an ordinary refusal; escalate errors that indicate a bug.
    fn outcome(&mut self, subject: String, result: Result<(), WorkflowError>) -> Result<(), RunError> {
        match result {
            Ok(()) => Ok(()),
            Err(e @ (WorkflowError::Invariant { .. } | WorkflowError::Ledger(_))) => Err(self.abort(e.to_string())),
            Err(e) => {
                let tick = self.p.tick();
                self.p.traces.entry(subject).or_default().push(crate::workflows::TraceEvent {
                    tick,
                    state: "Refused".into(),
                    detail: e.to_string(),
                });
                Ok(())
            }
        }
    }

    /// Whether anything other than a retry is still scheduled.
    fn progress_pending(&self) -> bool {
        self.agenda
            .values()
            .flatten()
            .any(|(kind, _)| *kind != Kind::PocRetry)
    }

    fn handle(&mut self, (kind, id): Event) -> Result<(), RunError> {
        let now = self.p.tick();
        match kind {
            Kind::PocSubmit | Kind::PocRetry => {
                let poc_id = PocId::new(&id);
                let result = if kind == Kind::PocSubmit {
                    let spec = self.pocs[id.as_str()];
                    self.p.submit_poc(poc_id.clone(), &spec.author, &spec.pattern)
                } else {
                    self.p.retry_poc_audit(&poc_id)
                };
                match result {
                    Ok(_) => self.schedule(now + 1, Kind::PocAudit, &id),
                    Err(WorkflowError::Schedule(e)) if self.p.pocs.contains_key(&poc_id) => {
                        if self.progress_pending() {
                            self.schedule(now + 1, Kind::PocRetry, &id);
                        } else {
                            self.p.trace(format!("poc:{id}"), "Stalled", e.to_string());
                        }
                    }
                    Err(e) => self.outcome(format!("poc:{id}"), Err(e))?,
                }
            }
            Kind::PocAudit => {
                let poc_id = PocId::new(&id);
                let result = self
                    .p
                    .simulated_verdicts(&poc_id)
                    .and_then(|v| self.p.audit_poc(&poc_id, v))
                    .map(|_| ());
                self.outcome(format!("poc:{id}"), result)?;
            }
            Kind::TaskSubmit => {
                let spec = self.tasks[id.as_str()];
                let submission = TaskSubmission {
                    task_id: spec.id.clone(),
                    user: spec.user.clone(),
                    task_type: spec.task_type,
                    service: spec.service,
                    payload: spec.targets.clone(),
                    escrow_amount: spec.escrow,
                };
                let result = self.p.submit_task(submission);
                if self.p.tasks.contains_key(&spec.id) {
                    if result.is_ok() {
                        self.schedule(now + 1, Kind::TaskExecute, &id);
                    }
                } else {
                    self.refused_tasks.insert(spec.id.clone());
                }
                self.outcome(format!("task:{id}"), result)?;
            }
            Kind::TaskExecute => {
                let task_id = TaskId::new(&id);
                let result = match self.tasks[id.as_str()].service {
                    ServiceMode::Automatic => self.p.run_reward_automatic(&task_id).map(|_| ()),
                    ServiceMode::Manual => {
                        let r = self.p.start_manual(&task_id).map(|_| ());
                        if r.is_ok() {
                            self.schedule(now + 1, Kind::TaskReview, &id);
                        }
                        r
                    }
                };
                self.outcome(format!("task:{id}"), result)?;
            }
            Kind::TaskReview => {
                let task_id = TaskId::new(&id);
                match self.p.review_round(&task_id) {
                    Ok(ReviewOutcome::Rejected { .. }) => self.schedule(now + 1, Kind::TaskReview, &id),
                    Ok(_) => {}
                    Err(e) => self.outcome(format!("task:{id}"), Err(e))?,
                }
            }
            Kind::ClaimSubmit => {
                let spec = self.claims[id.as_str()];
                let result = self
                    .p
                    .submit_claim(spec.id.clone(), &spec.author, &spec.user, spec.price, spec.finding.clone())
                    .map(|o| o.expires_at);
                match result {
                    Ok(expires_at) => {
                        if let Some(d) = spec.decision {
                            self.schedule(d.at.max(now), Kind::ClaimDecide, &id);
                        }
                        self.schedule(expires_at.max(now + 1), Kind::ClaimExpire, &id);
                    }
                    Err(e) => self.outcome(format!("claim:{id}"), Err(e))?,
                }
            }
            Kind::ClaimDecide => {
                let action = self.claims[id.as_str()].decision.map_or(ClaimDecision::Decline, |d| d.action);
                let offer = OfferId::new(&id);
                if self.p.offers.get(&offer).map(|o| o.status) == Some(OfferStatus::Offered) {
                    let result = self.p.decide_claim(&offer, action).map(|_| ());
                    self.outcome(format!("claim:{id}"), result)?;
                }
            }
            Kind::ClaimExpire => {
                let offer = OfferId::new(&id);
                if self.p.offers.get(&offer).map(|o| o.status) == Some(OfferStatus::Offered) {
                    let result = self.p.expire_claim(&offer).map(|_| ());
                    self.outcome(format!("claim:{id}"), result)?;
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput, RunError> {
        self.p.seal().map_err(|e| self.abort(e.to_string()))?;
        if let Verification::FirstBadIndex(i) = self.p.ledger.verify_chain() {
            return Err(self.abort(format!("ledger chain broken at block {i}")));
        }
        self.p
            .accounts
            .check_conservation()
            .map_err(|e| self.abort(e.to_string()))?;
        if let Some(t) = self.p.unfinished_tasks().into_iter().next() {
            let status = self.p.tasks[&t].task.status;
            return Err(self.abort(format!("task {t} ended the run in {status:?}")));
        }
        let metrics = RunMetrics::collect(&self.p, self.refused_tasks.len() as u64);
        let p = self.p;
        Ok(RunOutput {
            run_seed: p.run_seed,
            ticks: p.tick(),
            metrics,
            traces: p.traces,
            tasks: p.tasks,
            pocs: p.pocs,
            balances: p.accounts.snapshot().clone(),
            nodes: p.registry.nodes().cloned().collect(),
            ledger: p.ledger,
        })
    }
}

/// Run a validated scenario to completion with the given seed.
pub fn run(scenario: &Scenario, run_seed: u64) -> Result<RunOutput, RunError> {
    let p = genesis(scenario, run_seed).map_err(|e| RunError::InternalInvariantViolation {
        tick: 0,
        detail: e.to_string(),
    })?;
    let mut engine = Engine {
        p,
        agenda: BTreeMap::new(),
        tasks: scenario.tasks.iter().map(|t| (t.id.as_str(), t)).collect(),
        pocs: scenario.pocs.iter().map(|t| (t.id.as_str(), t)).collect(),
        claims: scenario.claims.iter().map(|t| (t.id.as_str(), t)).collect(),
        refused_tasks: BTreeSet::new(),
    };
    for t in &scenario.tasks {
        engine.schedule(t.at, Kind::TaskSubmit, t.id.as_str());
    }
    for poc in &scenario.pocs {
        engine.schedule(poc.at, Kind::PocSubmit, poc.id.as_str());
    }
    for c in &scenario.claims {
        engine.schedule(c.at, Kind::ClaimSubmit, c.id.as_str());
    }
    while let Some((&tick, _)) = engine.agenda.first_key_value() {
        if tick > engine.p.tick() {
            engine.p.advance_to(tick).map_err(|e| engine.abort(e.to_string()))?;
        }
        while let Some(event) = engine.agenda.get_mut(&tick).and_then(BTreeSet::pop_first) {
            engine.handle(event)?;
        }
        engine.agenda.remove(&tick);
    }
    engine.finish()
}

/// Run with the seed from the scenario, unless the environment overrides it.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, RunError> {
    run(scenario, seed_from_env().unwrap_or(scenario.run_seed))
}
