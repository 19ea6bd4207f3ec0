//! SACF accounting: escrow, the five reward situations, settlement and penalties.
//!
//! Every balance change is exactly one ledger transaction, and
//! `sum(balances) == initial_supply + minted` holds after each of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::ids::{AccountId, NodeId, TaskId};
use crate::ledger::{Journal, Ledger, TransactionRecord, TxBody, TxKind};
use crate::registry::{NodeRegistry, Outcome, OutcomeEffect, RegistryError};

pub const TAG_ESCROW_LOCK: &str = "lock";
/// Final escrow release; the escrow account is closed by it.
pub const TAG_ESCROW_RELEASE: &str = "release";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Situation {
    PocAdopted = 1,
    PocAuditAdopted = 2,
    VulnAdopted = 3,
    VulnAuditAdopted = 4,
    AuditServiceComplete = 5,
}

impl Situation {
    pub const ALL: [Situation; 5] = [
        Situation::PocAdopted,
        Situation::PocAuditAdopted,
        Situation::VulnAdopted,
        Situation::VulnAuditAdopted,
        Situation::AuditServiceComplete,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn tag(self) -> String {
        format!("situation:{}", self.number())
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        let n: u8 = tag.strip_prefix("situation:")?.parse().ok()?;
        Self::ALL.into_iter().find(|s| s.number() == n)
    }
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) {:?}", self.number(), self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Funding {
    Escrow(TaskId),
    Mint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub situation: Situation,
    pub beneficiary: NodeId,
    pub amount: u64,
    pub funding: Funding,
    /// Task, POC or offer the reward is for.
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IncentiveError {
    #[error("{account} needs {needed} SACF but holds {available}")]
    InsufficientFunds {
        account: String,
        needed: u64,
        available: u64,
    },
    #[error("escrow for task {task} holds {available}, reward needs {needed}")]
    EscrowExhausted {
        task: TaskId,
        needed: u64,
        available: u64,
    },
    #[error("no open escrow for task {0}")]
    NoEscrow(TaskId),
    #[error("escrow for task {0} already exists")]
    EscrowExists(TaskId),
    #[error("account {0} already open")]
    AccountExists(NodeId),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("conservation violated: balances {balances} != supply {supply} + minted {minted}")]
    Conservation { balances: u128, supply: u128, minted: u128 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub task_id: TaskId,
    pub paid: Vec<RewardEvent>,
    pub refund: u64,
    /// True when owed rewards exceeded the escrow and were scaled down.
    pub pro_rata: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Accounts {
    balances: BTreeMap<AccountId, u64>,
    escrow_owner: BTreeMap<TaskId, NodeId>,
    owed: BTreeMap<TaskId, Vec<RewardEvent>>,
    closed: BTreeSet<TaskId>,
    initial_supply: u128,
    minted: u128,
}

impl Accounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open a node account with its genesis allocation, recorded as the
    /// node's `NodeRegistered` transaction.
    pub fn open_node(
        &mut self,
        node: &NodeId,
        allocation: u64,
        profile_digest: Digest,
        journal: &mut Journal,
    ) -> u64 {
        let acct = AccountId::Node(node.clone());
        assert!(!self.balances.contains_key(&acct), "account {acct} opened twice");
        self.balances.insert(acct.clone(), allocation);
        self.initial_supply += allocation as u128;
        journal.record(
            TxBody::event(TxKind::NodeRegistered, node.as_str(), node.as_str())
                .digest(profile_digest)
                .transfer(None, acct, allocation),
        )
    }

    pub fn balance(&self, acct: &AccountId) -> Option<u64> {
        self.balances.get(acct).copied()
    }

    pub fn balance_of_node(&self, node: &NodeId) -> u64 {
        self.balance(&AccountId::Node(node.clone())).unwrap_or(0)
    }

    pub fn escrow_balance(&self, task: &TaskId) -> Option<u64> {
        self.balance(&AccountId::Escrow(task.clone()))
    }

    pub fn initial_supply(&self) -> u128 {
        self.initial_supply
    }

    pub fn minted(&self) -> u128 {
        self.minted
    }

    /// Open accounts and their balances.
    pub fn snapshot(&self) -> &BTreeMap<AccountId, u64> {
        &self.balances
    }

    pub fn total_balances(&self) -> u128 {
        self.balances.values().map(|&b| b as u128).sum()
    }

    pub fn check_conservation(&self) -> Result<(), IncentiveError> {
        let balances = self.total_balances();
        if balances != self.initial_supply + self.minted {
            return Err(IncentiveError::Conservation {
                balances,
                supply: self.initial_supply,
                minted: self.minted,
            });
        }
        Ok(())
    }

    pub fn owed(&self, task: &TaskId) -> &[RewardEvent] {
        self.owed.get(task).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Move SACF between two existing accounts, atomically.
    fn move_funds(&mut self, from: &AccountId, to: &AccountId, amount: u64) -> Result<(), IncentiveError> {
        let available = self
            .balance(from)
            .ok_or_else(|| IncentiveError::UnknownAccount(from.to_string()))?;
        if !self.balances.contains_key(to) {
            return Err(IncentiveError::UnknownAccount(to.to_string()));
        }
        if available < amount {
            return Err(IncentiveError::InsufficientFunds {
                account: from.to_string(),
                needed: amount,
                available,
            });
        }
        *self.balances.get_mut(from).expect("checked") -= amount;
        *self.balances.get_mut(to).expect("checked") += amount;
        Ok(())
    }

    pub fn escrow(
        &mut self,
        user: &NodeId,
        task: &TaskId,
        amount: u64,
        journal: &mut Journal,
    ) -> Result<u64, IncentiveError> {
        let escrow = AccountId::Escrow(task.clone());
        if self.balances.contains_key(&escrow) || self.closed.contains(task) {
            return Err(IncentiveError::EscrowExists(task.clone()));
        }
        let user_acct = AccountId::Node(user.clone());
        let available = self
            .balance(&user_acct)
            .ok_or_else(|| IncentiveError::UnknownAccount(user_acct.to_string()))?;
        if available < amount {
            return Err(IncentiveError::InsufficientFunds {
                account: user_acct.to_string(),
                needed: amount,
                available,
            });
        }
        self.balances.insert(escrow.clone(), 0);
        self.move_funds(&user_acct, &escrow, amount)?;
        self.escrow_owner.insert(task.clone(), user.clone());
        journal.record(
            TxBody::event(TxKind::Escrow, user.as_str(), task.as_str())
                .transfer(Some(user_acct), escrow, amount)
                .tag(TAG_ESCROW_LOCK),
        );
        Ok(amount)
    }

    /// Pay a reward now. On failure nothing changes; an `EscrowExhausted`
    /// reward can be deferred with [`Accounts::owe`].
    pub fn reward(&mut self, event: &RewardEvent, journal: &mut Journal) -> Result<u64, IncentiveError> {
        let to = AccountId::Node(event.beneficiary.clone());
        if !self.balances.contains_key(&to) {
            return Err(IncentiveError::UnknownAccount(to.to_string()));
        }
        let from = match &event.funding {
            Funding::Mint => {
                self.minted += event.amount as u128;
                *self.balances.get_mut(&to).expect("checked") += event.amount;
                AccountId::Mint
            }
            Funding::Escrow(task) => {
                let escrow = AccountId::Escrow(task.clone());
                let available = self
                    .balance(&escrow)
                    .ok_or_else(|| IncentiveError::NoEscrow(task.clone()))?;
                if available < event.amount {
                    return Err(IncentiveError::EscrowExhausted {
                        task: task.clone(),
                        needed: event.amount,
                        available,
                    });
                }
                self.move_funds(&escrow, &to, event.amount)?;
                escrow
            }
        };
        Ok(journal.record(
            TxBody::event(TxKind::Reward, event.beneficiary.as_str(), event.subject.as_str())
                .transfer(Some(from), to.clone(), event.amount)
                .tag(event.situation.tag()),
        ))
    }

    /// Defer an escrow-funded reward to settlement.
    pub fn owe(&mut self, event: RewardEvent) -> Result<(), IncentiveError> {
        let Funding::Escrow(task) = &event.funding else {
            panic!("only escrow-funded rewards are deferred");
        };
        if !self.escrow_owner.contains_key(task) || self.closed.contains(task) {
            return Err(IncentiveError::NoEscrow(task.clone()));
        }
        self.owed.entry(task.clone()).or_default().push(event);
        Ok(())
    }

    /// Drop deferred rewards, e.g. when the task failed.
    pub fn forgive(&mut self, task: &TaskId) -> Vec<RewardEvent> {
        self.owed.remove(task).unwrap_or_default()
    }

    /// Pay deferred rewards (pro-rata with floor division when they exceed
    /// the escrow), return the rest to the task owner and close the escrow.
    pub fn settle(&mut self, task: &TaskId, journal: &mut Journal) -> Result<Settlement, IncentiveError> {
        let escrow = AccountId::Escrow(task.clone());
        let available = self
            .balance(&escrow)
            .ok_or_else(|| IncentiveError::NoEscrow(task.clone()))?;
        let user = self.escrow_owner.get(task).cloned().expect("escrow has an owner");
        let owed = self.owed.remove(task).unwrap_or_default();
        let total: u128 = owed.iter().map(|e| e.amount as u128).sum();
        let pro_rata = total > available as u128;
        let mut paid = Vec::with_capacity(owed.len());
        for mut event in owed {
            if pro_rata {
                event.amount = (event.amount as u128 * available as u128 / total) as u64;
            }
            self.reward(&event, journal)?;
            paid.push(event);
        }
        let refund = self.balance(&escrow).expect("escrow still open");
        let user_acct = AccountId::Node(user.clone());
        self.move_funds(&escrow, &user_acct, refund)?;
        journal.record(
            TxBody::event(TxKind::Escrow, user.as_str(), task.as_str())
                .transfer(Some(escrow.clone()), user_acct, refund)
                .tag(TAG_ESCROW_RELEASE),
        );
        self.balances.remove(&escrow);
        self.closed.insert(task.clone());
        Ok(Settlement {
            task_id: task.clone(),
            paid,
            refund,
            pro_rata,
        })
    }

    /// Node-to-node payment for a claimed vulnerability (situation 3).
    pub fn pay_claim(
        &mut self,
        buyer: &NodeId,
        author: &NodeId,
        price: u64,
        offer: &str,
        journal: &mut Journal,
    ) -> Result<u64, IncentiveError> {
        let from = AccountId::Node(buyer.clone());
        let to = AccountId::Node(author.clone());
        self.move_funds(&from, &to, price)?;
        Ok(journal.record(
            TxBody::event(TxKind::Reward, author.as_str(), offer)
                .transfer(Some(from), to, price)
                .tag(Situation::VulnAdopted.tag()),
        ))
    }
}

/// Apply a punishment. No SACF is taken; capacity or ranking drops instead.
pub fn penalize(
    registry: &mut NodeRegistry,
    node: &NodeId,
    outcome: Outcome,
    reason: &str,
    journal: &mut Journal,
) -> Result<OutcomeEffect, RegistryError> {
    if registry.get(node)?.abandoned {
        return Err(RegistryError::AbandonedNode(node.clone()));
    }
    journal.record(
        TxBody::event(TxKind::Penalty, node.as_str(), reason).tag(format!("{outcome:?}")),
    );
    registry.record_outcome(node, outcome, journal)
}

/// Balances reconstructed from a chain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayedBalances {
    pub balances: BTreeMap<AccountId, u64>,
    pub initial_supply: u128,
    pub minted: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("tx {tx_id}: {account} would go negative")]
    Overdraft { tx_id: u64, account: String },
    #[error("tx {tx_id}: malformed transfer")]
    Malformed { tx_id: u64 },
}

pub fn apply_transfer(state: &mut ReplayedBalances, tx: &TransactionRecord) -> Result<(), ReplayError> {
    let Some(to) = &tx.to else {
        if tx.from.is_some() {
            return Err(ReplayError::Malformed { tx_id: tx.tx_id });
        }
        return Ok(());
    };
    match &tx.from {
        None => state.initial_supply += tx.amount as u128,
        Some(AccountId::Mint) => state.minted += tx.amount as u128,
        Some(from) => {
            let bal = state.balances.entry(from.clone()).or_insert(0);
            *bal = bal.checked_sub(tx.amount).ok_or_else(|| ReplayError::Overdraft {
                tx_id: tx.tx_id,
                account: from.to_string(),
            })?;
        }
    }
    *state.balances.entry(to.clone()).or_insert(0) += tx.amount;
    if tx.kind == TxKind::Escrow && tx.tag == TAG_ESCROW_RELEASE {
        if let Some(from @ AccountId::Escrow(_)) = &tx.from {
            state.balances.remove(from);
        }
    }
    Ok(())
}

/// Rebuild every open account by replaying the chain from genesis.
pub fn replay_balances(ledger: &Ledger) -> Result<ReplayedBalances, ReplayError> {
    let mut state = ReplayedBalances::default();
    for tx in ledger.transactions() {
        apply_transfer(&mut state, tx)?;
    }
    Ok(state)
}

/// Reward income per node, by scanning Reward transactions.
pub fn earnings_from_ledger(ledger: &Ledger) -> BTreeMap<NodeId, u64> {
    let mut out = BTreeMap::new();
    for tx in ledger.transactions() {
        if tx.kind == TxKind::Reward {
            if let Some(AccountId::Node(n)) = &tx.to {
                *out.entry(n.clone()).or_insert(0) += tx.amount;
            }
        }
    }
    out
}
