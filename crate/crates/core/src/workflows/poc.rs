//! POC submission and quorum audit.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Protocol, WorkflowError};
use crate::digest::Digest;
use crate::ids::{NodeId, PocId};
use crate::incentive::Situation;
use crate::ledger::{TxBody, TxKind};
use crate::oracle::InstalledPoc;
use crate::registry::{Outcome, RegistryError, Role};
use crate::scheduler::select_arbiters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PocStatus {
    Submitted,
    UnderAudit,
    Adopted,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PocEntry {
    pub poc_id: PocId,
    pub author: NodeId,
    pub vuln_pattern: String,
    pub status: PocStatus,
    pub auditors: BTreeSet<NodeId>,
    pub verdicts: BTreeMap<NodeId, Verdict>,
}

/// Strict majority of Accept over the quorum.
pub fn majority_accepts<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> bool {
    let (mut accept, mut total) = (0usize, 0usize);
    for v in verdicts {
        total += 1;
        if *v == Verdict::Accept {
            accept += 1;
        }
    }
    2 * accept > total
}

impl Protocol {
    /// Register a POC and try to seat its auditor quorum. On
    /// `InsufficientNodes` the entry is kept as Submitted for a later retry.
    pub fn submit_poc(
        &mut self,
        poc_id: PocId,
        author: &NodeId,
        vuln_pattern: &str,
    ) -> Result<PocStatus, WorkflowError> {
        if self.pocs.contains_key(&poc_id) {
            return Err(WorkflowError::DuplicatePoc(poc_id));
        }
        let profile = self.registry.get(author)?;
        if profile.abandoned {
            return Err(RegistryError::AbandonedNode(author.clone()).into());
        }
        if !profile.has_role(Role::Pocd) {
            return Err(WorkflowError::RoleViolation(author.clone(), Role::Pocd));
        }
        self.journal.record(
            TxBody::event(TxKind::PocSubmitted, author.as_str(), poc_id.as_str())
                .digest(Digest::of(vuln_pattern.as_bytes())),
        );
        self.pocs.insert(
            poc_id.clone(),
            PocEntry {
                poc_id: poc_id.clone(),
                author: author.clone(),
                vuln_pattern: vuln_pattern.to_owned(),
                status: PocStatus::Submitted,
                auditors: BTreeSet::new(),
                verdicts: BTreeMap::new(),
            },
        );
        self.trace(format!("poc:{poc_id}"), "Submitted", vuln_pattern);
        self.seat_auditors(&poc_id)
    }

    pub fn retry_poc_audit(&mut self, poc_id: &PocId) -> Result<PocStatus, WorkflowError> {
        self.seat_auditors(poc_id)
    }

    fn seat_auditors(&mut self, poc_id: &PocId) -> Result<PocStatus, WorkflowError> {
        let entry = self.poc(poc_id)?;
        if entry.status != PocStatus::Submitted {
            return Err(WorkflowError::WrongPocStatus {
                id: poc_id.clone(),
                status: entry.status,
            });
        }
        let exclusions = BTreeSet::from([entry.author.clone()]);
        let auditors = select_arbiters(&self.registry, Role::Pocd, self.params.quorum, &exclusions)?;
        for a in &auditors {
            self.registry.record_assignment(a)?;
        }
        let names = auditors.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",");
        let entry = self.pocs.get_mut(poc_id).expect("checked");
        entry.auditors = auditors.into_iter().collect();
        entry.status = PocStatus::UnderAudit;
        self.trace(format!("poc:{poc_id}"), "UnderAudit", names);
        Ok(PocStatus::UnderAudit)
    }

    pub fn poc(&self, poc_id: &PocId) -> Result<&PocEntry, WorkflowError> {
        self.pocs
            .get(poc_id)
            .ok_or_else(|| WorkflowError::UnknownPoc(poc_id.clone()))
    }

    /// Simulated verdicts: each auditor judges the POC's ground-truth
    /// validity and errs with its configured probability.
    pub fn simulated_verdicts(&self, poc_id: &PocId) -> Result<BTreeMap<NodeId, Verdict>, WorkflowError> {
        let entry = self.poc(poc_id)?;
        let valid = self.poc_validity.get(poc_id).copied().unwrap_or(true);
        Ok(entry
            .auditors
            .iter()
            .map(|a| {
                let wrong = self.draw(a, poc_id.as_str(), "poca-verdict") < self.behavior(a).poca_error_rate;
                let verdict = if valid != wrong { Verdict::Accept } else { Verdict::Reject };
                (a.clone(), verdict)
            })
            .collect())
    }

    pub fn audit_poc(
        &mut self,
        poc_id: &PocId,
        verdicts: BTreeMap<NodeId, Verdict>,
    ) -> Result<PocStatus, WorkflowError> {
        let entry = self.poc(poc_id)?;
        if entry.status != PocStatus::UnderAudit {
            return Err(WorkflowError::WrongPocStatus {
                id: poc_id.clone(),
                status: entry.status,
            });
        }
        if verdicts.keys().ne(entry.auditors.iter()) {
            return Err(WorkflowError::IncompleteVerdicts(poc_id.clone()));
        }
        let adopted = majority_accepts(verdicts.values());
        let majority = if adopted { Verdict::Accept } else { Verdict::Reject };
        let author = entry.author.clone();
        let status = if adopted { PocStatus::Adopted } else { PocStatus::Rejected };

        let subject = poc_id.to_string();
        self.journal.record(
            TxBody::event(TxKind::PocVerdict, author.as_str(), poc_id.as_str())
                .tag(format!("{status:?}")),
        );
        if adopted {
            self.minted_reward(&subject, Situation::PocAdopted, &author)?;
        } else {
            self.punish(&author, Outcome::Rejected, &subject)?;
        }
        for (auditor, verdict) in &verdicts {
            if *verdict == majority {
                self.minted_reward(&subject, Situation::PocAuditAdopted, auditor)?;
                self.complete(auditor)?;
            } else {
                self.punish(auditor, Outcome::Rejected, &subject)?;
            }
        }
        let accepts = verdicts.values().filter(|v| **v == Verdict::Accept).count();
        let entry = self.pocs.get_mut(poc_id).expect("checked");
        entry.verdicts = verdicts;
        entry.status = status;
        self.trace(
            format!("poc:{poc_id}"),
            format!("{status:?}"),
            format!("{accepts}/{} accept", self.params.quorum),
        );
        Ok(status)
    }

    /// Adopted POCs in id order, as installed into automatic tools.
    pub fn adopted_pocs(&self) -> Vec<InstalledPoc> {
        self.pocs
            .values()
            .filter(|p| p.status == PocStatus::Adopted)
            .map(|p| InstalledPoc {
                poc_id: p.poc_id.clone(),
                pattern: p.vuln_pattern.clone(),
            })
            .collect()
    }
}
