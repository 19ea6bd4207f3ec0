//! Node identities, roles, positions, proof-of-work scores and punishment state.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::Encoder;
use crate::digest::Digest;
use crate::ids::{KeyId, NodeId};
use crate::ledger::{Journal, TxBody, TxKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Ordinary,
    Fog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    User,
    #[serde(rename = "POCD")]
    Pocd,
    #[serde(rename = "POCA")]
    Poca,
    #[serde(rename = "WHH")]
    Whh,
    #[serde(rename = "WHA")]
    Wha,
    #[serde(rename = "CRO")]
    Cro,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::User => "User",
            Role::Pocd => "POCD",
            Role::Poca => "POCA",
            Role::Whh => "WHH",
            Role::Wha => "WHA",
            Role::Cro => "CRO",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Position {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

/// CRO processing capacity, stored exactly in millionths.
///
/// Serialized as a plain decimal number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Capacity(u64);

impl Capacity {
    pub const SCALE: u64 = 1_000_000;
    pub const ZERO: Capacity = Capacity(0);

    pub fn from_micros(micros: u64) -> Self {
        Capacity(micros)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    /// Rounds to the nearest millionth. Negative or non-finite input is rejected.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() || v < 0.0 || v > (u64::MAX / Self::SCALE) as f64 {
            return None;
        }
        Some(Capacity((v * Self::SCALE as f64).round() as u64))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub fn saturating_sub(self, rhs: Capacity) -> Capacity {
        Capacity(self.0.saturating_sub(rhs.0))
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Capacity::from_f64(v)
            .ok_or_else(|| serde::de::Error::custom(format!("capacity {v} must be finite and >= 0")))
    }
}

/// completed / assigned, defined as 1 when nothing was assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletionDegree {
    pub completed: u64,
    pub assigned: u64,
}

impl CompletionDegree {
    pub fn as_f64(self) -> f64 {
        if self.assigned == 0 {
            1.0
        } else {
            self.completed as f64 / self.assigned as f64
        }
    }

    fn ratio(self) -> (u128, u128) {
        if self.assigned == 0 {
            (1, 1)
        } else {
            (self.completed as u128, self.assigned as u128)
        }
    }
}

impl Ord for CompletionDegree {
    fn cmp(&self, other: &Self) -> Ordering {
        let (an, ad) = self.ratio();
        let (bn, bd) = other.ratio();
        (an * bd).cmp(&(bn * ad))
    }
}

impl PartialOrd for CompletionDegree {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node_id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub roles: BTreeSet<Role>,
    pub position: Position,
    #[serde(default)]
    pub pow_score: u64,
    #[serde(default)]
    pub ranking: u64,
    #[serde(default)]
    pub capacity: Capacity,
    #[serde(default)]
    pub active_level: u64,
    #[serde(default)]
    pub tasks_completed: u64,
    #[serde(default)]
    pub tasks_assigned: u64,
    #[serde(default)]
    pub abandoned: bool,
    /// Key issued by the fog layer at configuration time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_id: Option<KeyId>,
}

impl NodeProfile {
    pub fn ordinary(id: impl Into<String>, roles: &[Role], position: Position) -> Self {
        Self {
            node_id: NodeId::new(id),
            kind: NodeKind::Ordinary,
            roles: roles.iter().copied().collect(),
            position,
            pow_score: 0,
            ranking: 0,
            capacity: Capacity::from_micros(Capacity::SCALE),
            active_level: 0,
            tasks_completed: 0,
            tasks_assigned: 0,
            abandoned: false,
            key_id: None,
        }
    }

    pub fn fog(id: impl Into<String>, position: Position) -> Self {
        Self {
            kind: NodeKind::Fog,
            roles: BTreeSet::new(),
            capacity: Capacity::ZERO,
            ..Self::ordinary(id, &[], position)
        }
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }

    pub fn completion_degree(&self) -> CompletionDegree {
        CompletionDegree {
            completed: self.tasks_completed,
            assigned: self.tasks_assigned,
        }
    }

    /// Fog nodes and abandoned nodes are never scheduled.
    pub fn schedulable(&self) -> bool {
        self.kind == NodeKind::Ordinary && !self.abandoned
    }

    pub fn check_roles(&self) -> Result<(), RegistryError> {
        if self.kind == NodeKind::Fog && !self.roles.is_empty() {
            return Err(RegistryError::RoleViolation(format!(
                "fog node {} cannot hold ordinary roles",
                self.node_id
            )));
        }
        if self.has_role(Role::Wha) && !self.has_role(Role::Whh) {
            return Err(RegistryError::RoleViolation(format!(
                "node {} holds WHA without WHH",
                self.node_id
            )));
        }
        if !self.position.x.is_finite() || !self.position.y.is_finite() {
            return Err(RegistryError::RoleViolation(format!(
                "node {} has a non-finite position",
                self.node_id
            )));
        }
        if self.tasks_completed > self.tasks_assigned {
            return Err(RegistryError::RoleViolation(format!(
                "node {} completed more tasks than assigned",
                self.node_id
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.str(self.node_id.as_str())
            .u8(self.kind as u8)
            .u32(self.roles.len() as u32);
        for role in &self.roles {
            e.u8(*role as u8);
        }
        e.u64(self.position.x.to_bits())
            .u64(self.position.y.to_bits())
            .u64(self.pow_score)
            .u64(self.ranking)
            .u64(self.capacity.micros())
            .str(self.key_id.as_ref().map(KeyId::as_str).unwrap_or(""));
        e.digest_of()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkProof {
    pub node_id: NodeId,
    pub puzzle_seed: Digest,
    pub nonce: u64,
    /// Required leading zero bits.
    pub difficulty: u32,
}

impl WorkProof {
    pub fn work_digest(seed: &Digest, nonce: u64) -> Digest {
        Digest::of_parts(&[seed.as_bytes(), &nonce.to_be_bytes()])
    }

    pub fn verifies(&self) -> bool {
        Self::work_digest(&self.puzzle_seed, self.nonce).leading_zero_bits() >= self.difficulty
    }

    /// Smallest nonce meeting `difficulty`, by linear search from zero.
    pub fn solve(node_id: NodeId, puzzle_seed: Digest, difficulty: u32) -> Self {
        let nonce = (0u64..)
            .find(|&n| Self::work_digest(&puzzle_seed, n).leading_zero_bits() >= difficulty)
            .expect("nonce space exhausted");
        Self {
            node_id,
            puzzle_seed,
            nonce,
            difficulty,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    Failed,
    Rejected,
    ClaimFailed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunishmentParams {
    /// Capacity lost per failed task.
    pub capacity_step: Capacity,
    pub ranking_step: u64,
    /// Minimum difficulty a submitted work proof must claim.
    pub min_pow_difficulty: u32,
}

impl Default for PunishmentParams {
    fn default() -> Self {
        Self {
            capacity_step: Capacity::from_micros(Capacity::SCALE),
            ranking_step: 1,
            min_pow_difficulty: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("node id {0} already registered")]
    DuplicateId(NodeId),
    #[error("role violation: {0}")]
    RoleViolation(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} has been abandoned")]
    AbandonedNode(NodeId),
    #[error("invalid work proof from {0}")]
    InvalidProof(NodeId),
}

/// What an outcome did to the node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutcomeEffect {
    pub capacity: Capacity,
    pub ranking: u64,
    pub abandoned_now: bool,
}

#[derive(Clone, Debug, Default)]
pub struct NodeRegistry {
    nodes: BTreeMap<NodeId, NodeProfile>,
    accepted_proofs: BTreeSet<(NodeId, Digest, u64)>,
    params: PunishmentParams,
}

impl NodeRegistry {
    pub fn new(params: PunishmentParams) -> Self {
        Self {
            nodes: BTreeMap::new(),
            accepted_proofs: BTreeSet::new(),
            params,
        }
    }

    pub fn params(&self) -> &PunishmentParams {
        &self.params
    }

    pub fn register_node(&mut self, profile: NodeProfile) -> Result<NodeId, RegistryError> {
        if self.nodes.contains_key(&profile.node_id) {
            return Err(RegistryError::DuplicateId(profile.node_id));
        }
        profile.check_roles()?;
        let id = profile.node_id.clone();
        self.nodes.insert(id.clone(), profile);
        Ok(id)
    }

    pub fn get(&self, id: &NodeId) -> Result<&NodeProfile, RegistryError> {
        self.nodes
            .get(id)
            .ok_or_else(|| RegistryError::UnknownNode(id.clone()))
    }

    fn live_mut(&mut self, id: &NodeId) -> Result<&mut NodeProfile, RegistryError> {
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| RegistryError::UnknownNode(id.clone()))?;
        if node.abandoned {
            return Err(RegistryError::AbandonedNode(id.clone()));
        }
        Ok(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeProfile> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn fog_nodes(&self) -> impl Iterator<Item = &NodeProfile> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Fog)
    }

    pub fn submit_work_proof(
        &mut self,
        proof: &WorkProof,
        journal: &mut Journal,
    ) -> Result<u64, RegistryError> {
        let min_difficulty = self.params.min_pow_difficulty;
        let key = (proof.node_id.clone(), proof.puzzle_seed, proof.nonce);
        let duplicate = self.accepted_proofs.contains(&key);
        let node = self.live_mut(&proof.node_id)?;
        if duplicate || proof.difficulty < min_difficulty || !proof.verifies() {
            return Err(RegistryError::InvalidProof(proof.node_id.clone()));
        }
        node.pow_score += 1;
        let score = node.pow_score;
        self.accepted_proofs.insert(key);
        journal.record(
            TxBody::event(TxKind::WorkProofAccepted, proof.node_id.as_str(), proof.node_id.as_str())
                .digest(WorkProof::work_digest(&proof.puzzle_seed, proof.nonce)),
        );
        Ok(score)
    }

    pub fn distance(&self, a: &NodeId, b: &NodeId) -> Result<f64, RegistryError> {
        Ok(self.get(a)?.position.distance(&self.get(b)?.position))
    }

    /// Count a task assignment towards the completion-degree denominator.
    pub fn record_assignment(&mut self, id: &NodeId) -> Result<(), RegistryError> {
        self.live_mut(id)?.tasks_assigned += 1;
        Ok(())
    }

    /// Apply a task outcome. A `Failed` outcome drains capacity from CRO
    /// holders (abandoning them at zero) and costs ranking otherwise.
    pub fn record_outcome(
        &mut self,
        id: &NodeId,
        outcome: Outcome,
        journal: &mut Journal,
    ) -> Result<OutcomeEffect, RegistryError> {
        let params = self.params;
        let node = self.live_mut(id)?;
        let mut abandoned_now = false;
        match outcome {
            Outcome::Completed => {
                node.tasks_completed += 1;
                node.tasks_assigned = node.tasks_assigned.max(node.tasks_completed);
                node.active_level += 1;
            }
            Outcome::Failed if node.has_role(Role::Cro) => {
                node.capacity = node.capacity.saturating_sub(params.capacity_step);
                if node.capacity.is_zero() {
                    node.abandoned = true;
                    abandoned_now = true;
                }
            }
            Outcome::Failed | Outcome::Rejected | Outcome::ClaimFailed => {
                node.ranking = node.ranking.saturating_sub(params.ranking_step);
            }
        }
        let effect = OutcomeEffect {
            capacity: node.capacity,
            ranking: node.ranking,
            abandoned_now,
        };
        if abandoned_now {
            journal.record(TxBody::event(TxKind::NodeAbandoned, id.as_str(), id.as_str()));
        }
        Ok(effect)
    }
}
