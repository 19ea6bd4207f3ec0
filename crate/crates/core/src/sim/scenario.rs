//! Scenario files (`"schema": 1`) and their validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ids::{KeyId, NodeId, OfferId, PocId, TaskId};
use crate::oracle::{AuditTarget, TaskType};
use crate::registry::{Capacity, NodeKind, NodeProfile, Position, PunishmentParams, Role};
use crate::scheduler::ScoreWeights;
use crate::task::ServiceMode;
use crate::workflows::{ClaimDecision, ClaimFinding, NodeBehavior, ProtocolParams, RewardAmounts, WhaPolicy};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest accepted proof-of-work difficulty, in leading zero bits.
pub const MAX_POW_DIFFICULTY: u32 = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    /// Segments per task (s).
    pub segments: usize,
    /// Assignees per segment (r).
    pub redundancy: usize,
    pub quorum: usize,
    pub max_rounds: u32,
    pub wha_count: usize,
    /// Capacity lost per failed task (δ).
    pub capacity_step: f64,
    pub ranking_step: u64,
    pub w_pow: f64,
    pub w_dist: f64,
    pub rewards: RewardAmounts,
    pub fp_rate: f64,
    pub mint_enabled: bool,
    pub pow_difficulty: u32,
    pub claim_ttl: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        let p = ProtocolParams::default();
        Self {
            segments: p.segments,
            redundancy: p.redundancy,
            quorum: p.quorum,
            max_rounds: p.max_rounds,
            wha_count: p.wha_count,
            capacity_step: 1.0,
            ranking_step: 1,
            w_pow: p.weights.w_pow,
            w_dist: p.weights.w_dist,
            rewards: p.rewards,
            fp_rate: p.fp_rate,
            mint_enabled: p.mint_enabled,
            pow_difficulty: 0,
            claim_ttl: p.claim_ttl,
        }
    }
}

impl ScenarioParams {
    pub fn protocol(&self) -> ProtocolParams {
        ProtocolParams {
            segments: self.segments,
            redundancy: self.redundancy,
            quorum: self.quorum,
            max_rounds: self.max_rounds,
            wha_count: self.wha_count,
            weights: ScoreWeights {
                w_pow: self.w_pow,
                w_dist: self.w_dist,
            },
            rewards: self.rewards,
            fp_rate: self.fp_rate,
            mint_enabled: self.mint_enabled,
            claim_ttl: self.claim_ttl,
        }
    }

    pub fn punishment(&self) -> PunishmentParams {
        PunishmentParams {
            capacity_step: Capacity::from_f64(self.capacity_step).unwrap_or(Capacity::ZERO),
            ranking_step: self.ranking_step,
            min_pow_difficulty: self.pow_difficulty,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default = "ordinary")]
    pub kind: NodeKind,
    #[serde(default)]
    pub roles: BTreeSet<Role>,
    pub position: Position,
    #[serde(default = "one")]
    pub capacity: f64,
    #[serde(default)]
    pub ranking: u64,
    #[serde(default)]
    pub active_level: u64,
    #[serde(default)]
    pub key_id: Option<KeyId>,
    /// Work proofs mined at registration.
    #[serde(default)]
    pub proofs: u32,
    #[serde(default)]
    pub behavior: NodeBehavior,
}

fn ordinary() -> NodeKind {
    NodeKind::Ordinary
}

impl NodeSpec {
    pub fn profile(&self) -> NodeProfile {
        let mut p = match self.kind {
            NodeKind::Fog => NodeProfile::fog(self.id.as_str(), self.position),
            NodeKind::Ordinary => {
                let roles: Vec<Role> = self.roles.iter().copied().collect();
                let mut p = NodeProfile::ordinary(self.id.as_str(), &roles, self.position);
                p.capacity = Capacity::from_f64(self.capacity).unwrap_or(Capacity::ZERO);
                p
            }
        };
        p.ranking = self.ranking;
        p.active_level = self.active_level;
        p.key_id = self.key_id.clone();
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub at: u64,
    pub id: TaskId,
    pub user: NodeId,
    pub task_type: TaskType,
    pub service: ServiceMode,
    #[serde(default)]
    pub escrow: u64,
    pub targets: Vec<AuditTarget>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PocSpec {
    pub at: u64,
    pub id: PocId,
    pub author: NodeId,
    pub pattern: String,
    /// Ground truth the auditors judge against.
    #[serde(default = "yes")]
    pub valid: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionSpec {
    pub at: u64,
    pub action: ClaimDecision,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSpec {
    pub at: u64,
    pub id: OfferId,
    pub author: NodeId,
    pub user: NodeId,
    pub price: u64,
    pub finding: ClaimFinding,
    /// Absent: the offer is left to expire.
    #[serde(default)]
    pub decision: Option<DecisionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub run_seed: u64,
    #[serde(default)]
    pub params: ScenarioParams,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub initial_balances: BTreeMap<NodeId, u64>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub pocs: Vec<PocSpec>,
    #[serde(default)]
    pub claims: Vec<ClaimSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        field: ".".into(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn fail<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation(msg.into()))
}

fn probability(name: &str, v: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        fail(format!("{name} = {v} must lie in [0, 1]"))
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return fail(format!("schema {} is not supported (expected {SCHEMA_VERSION})", self.schema));
        }
        let p = &self.params;
        if p.segments == 0 || p.redundancy == 0 || p.max_rounds == 0 || p.wha_count == 0 {
            return fail("segments, redundancy, max_rounds and wha_count must be at least 1");
        }
        if p.quorum.is_multiple_of(2) {
            return fail(format!("quorum {} must be odd", p.quorum));
        }
        if !(p.capacity_step.is_finite() && p.capacity_step > 0.0)
            || Capacity::from_f64(p.capacity_step).is_none_or(Capacity::is_zero)
        {
            return fail(format!("capacity_step {} must be positive", p.capacity_step));
        }
        let weights = ScoreWeights {
            w_pow: p.w_pow,
            w_dist: p.w_dist,
        };
        if !weights.is_valid() {
            return fail(format!("weights w_pow {} + w_dist {} must lie in [0, 1] and sum to 1", p.w_pow, p.w_dist));
        }
        probability("fp_rate", p.fp_rate)?;
        if p.pow_difficulty > MAX_POW_DIFFICULTY {
            return fail(format!("pow_difficulty {} exceeds {MAX_POW_DIFFICULTY}", p.pow_difficulty));
        }

        let mut nodes = BTreeMap::new();
        for n in &self.nodes {
            if nodes.insert(&n.id, n).is_some() {
                return fail(format!("duplicate node id {}", n.id));
            }
            if Capacity::from_f64(n.capacity).is_none() {
                return fail(format!("node {}: capacity {} must be finite and >= 0", n.id, n.capacity));
            }
            if n.kind == NodeKind::Fog && !n.roles.is_empty() {
                return fail(format!("fog node {} cannot hold roles", n.id));
            }
            if n.roles.contains(&Role::Wha) && !n.roles.contains(&Role::Whh) {
                return fail(format!("node {} holds WHA without WHH", n.id));
            }
            if !n.position.x.is_finite() || !n.position.y.is_finite() {
                return fail(format!("node {}: position must be finite", n.id));
            }
            let b = &n.behavior;
            probability(&format!("node {} skill", n.id), b.skill)?;
            probability(&format!("node {} failure_rate", n.id), b.failure_rate)?;
            probability(&format!("node {} poca_error_rate", n.id), b.poca_error_rate)?;
            if let WhaPolicy::Erratic { reject_probability } = b.wha_policy {
                probability(&format!("node {} reject_probability", n.id), reject_probability)?;
            }
        }
        let node = |id: &NodeId, what: &str| -> Result<&NodeSpec, ScenarioError> {
            match nodes.get(id) {
                Some(n) => Ok(*n),
                None => fail(format!("{what} references unknown node {id}")),
            }
        };
        for id in self.initial_balances.keys() {
            node(id, "initial_balances")?;
        }
        let has_fog = self.nodes.iter().any(|n| n.kind == NodeKind::Fog);
        if !has_fog && !(self.tasks.is_empty() && self.claims.is_empty()) {
            return fail("tasks and claims need at least one fog node");
        }

        let mut task_ids = BTreeSet::new();
        for t in &self.tasks {
            if !task_ids.insert(&t.id) {
                return fail(format!("duplicate task id {}", t.id));
            }
            node(&t.user, &format!("task {}", t.id))?;
            if t.targets.is_empty() {
                return fail(format!("task {} has no targets", t.id));
            }
            let mut vulns = BTreeSet::new();
            for target in &t.targets {
                if target.target_type != t.task_type {
                    return fail(format!("task {}: target {} is not a {:?}", t.id, target.target_id, t.task_type));
                }
                for v in &target.planted {
                    if !vulns.insert(&v.vuln_id) {
                        return fail(format!("task {}: duplicate vuln id {}", t.id, v.vuln_id));
                    }
                    probability(&format!("task {} vuln {} detectability", t.id, v.vuln_id), v.base_detectability)?;
                }
            }
        }
        let mut poc_ids = BTreeSet::new();
        for poc in &self.pocs {
            if !poc_ids.insert(&poc.id) {
                return fail(format!("duplicate POC id {}", poc.id));
            }
            let author = node(&poc.author, &format!("POC {}", poc.id))?;
            if !author.roles.contains(&Role::Pocd) {
                return fail(format!("POC {}: author {} is not a POCD", poc.id, poc.author));
            }
        }
        let mut offer_ids = BTreeSet::new();
        for c in &self.claims {
            if !offer_ids.insert(&c.id) {
                return fail(format!("duplicate claim id {}", c.id));
            }
            let author = node(&c.author, &format!("claim {}", c.id))?;
            if !author.roles.contains(&Role::Whh) {
                return fail(format!("claim {}: author {} is not a WHH", c.id, c.author));
            }
            if node(&c.user, &format!("claim {}", c.id))?.key_id.is_none() {
                return fail(format!("claim {}: user {} has no key", c.id, c.user));
            }
            if let Some(d) = c.decision {
                if d.at < c.at {
                    return fail(format!("claim {}: decided at {} before it is offered at {}", c.id, d.at, c.at));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "schema": 1,
        "run_seed": 1,
        "params": {"segments": 1, "redundancy": 1},
        "nodes": [
            {"id": "fog", "kind": "fog", "position": [0, 0]},
            {"id": "alice", "roles": ["User"], "position": [1, 0]},
            {"id": "cro", "roles": ["CRO"], "position": [2, 0]}
        ],
        "initial_balances": {"alice": 10},
        "tasks": [{
            "at": 1, "id": "t1", "user": "alice", "task_type": "website",
            "service": "automatic", "escrow": 5,
            "targets": [{"target_id": "site", "target_type": "website"}]
        }]
    }"#;

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        edit(&mut v);
        v.to_string()
    }

    #[test]
    fn minimal_scenario_loads() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.nodes.len(), 3);
        assert_eq!(s.params.quorum, 3);
    }

    #[test]
    fn unknown_task_user_rejected() {
        let text = with(|v| v["tasks"][0]["user"] = "mallory".into());
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(ref m) if m.contains("mallory")), "{err}");
    }

    #[test]
    fn even_quorum_rejected() {
        let text = with(|v| v["params"]["quorum"] = 4.into());
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(ref m) if m.contains("odd")), "{err}");
    }

    #[test]
    fn parse_error_names_line_and_field() {
        let text = MINIMAL.replace("\"position\": [2, 0]", "\"position\": \"far\"");
        match parse_scenario(&text).unwrap_err() {
            ScenarioError::Parse { line, field, .. } => {
                assert_eq!(line, 8);
                assert_eq!(field, "nodes[2].position");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = with(|v| v["params"]["segmnets"] = 2.into());
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = with(|v| v["params"]["w_pow"] = 0.9.into());
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Validation(_))));
    }

    #[test]
    fn wha_without_whh_rejected() {
        let text = with(|v| v["nodes"][2]["roles"] = serde_json::json!(["WHA"]));
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Validation(_))));
    }
}
