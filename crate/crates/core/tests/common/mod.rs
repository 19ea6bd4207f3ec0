//! Independent oracles and generators shared by the integration tests and
//! the acceptance runner. Nothing here calls the library code it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use sapiens_core::ids::NodeId;
use sapiens_core::ledger::{Journal, Ledger, TxBody, TxKind};
use sapiens_core::oracle::{AuditTarget, TaskType};
use sapiens_core::scheduler::ScheduleError;
use sapiens_core::task::{fragment, ServiceMode, Task, TaskError, TaskStatus};
use sapiens_core::TaskId;
use sapiens_core::registry::{Capacity, NodeProfile, NodeRegistry, Outcome, Position, PunishmentParams, RegistryError, Role};
use sapiens_core::scheduler::{select_by_proximity_pow, ScoreWeights, SelectionRequest};
use sapiens_core::sim::{load_scenario, parse_scenario, run, RunOutput, Scenario};
use sapiens_core::{AccountId, Digest};
use serde_json::{json, Value};

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn bundled(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).expect("bundled scenario loads")
}

// ---------------------------------------------------------------- scheduler

/// Plain description of a candidate, for the sort oracles.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub id: String,
    pub roles: Vec<Role>,
    pub fog: bool,
    pub abandoned: bool,
    pub x: f64,
    pub y: f64,
    pub pow: u64,
    pub active: u64,
    pub completed: u64,
    pub assigned: u64,
    pub ranking: u64,
}

impl Candidate {
    pub fn profile(&self) -> NodeProfile {
        let mut p = if self.fog {
            NodeProfile::fog(self.id.as_str(), Position::new(self.x, self.y))
        } else {
            NodeProfile::ordinary(self.id.as_str(), &self.roles, Position::new(self.x, self.y))
        };
        p.pow_score = self.pow;
        p.active_level = self.active;
        p.tasks_completed = self.completed;
        p.tasks_assigned = self.assigned;
        p.ranking = self.ranking;
        p.abandoned = self.abandoned;
        p
    }
}

/// Random candidates with many deliberate ties (small value ranges, shared
/// grid positions).
pub fn random_candidates<R: Rng>(rng: &mut R, n: usize) -> Vec<Candidate> {
    let pool = [Role::Cro, Role::Whh, Role::Pocd, Role::User];
    (0..n)
        .map(|i| {
            let mut roles: Vec<Role> = pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            if roles.contains(&Role::Whh) && rng.gen_bool(0.3) {
                roles.push(Role::Wha);
            }
            let assigned = rng.gen_range(0..6);
            Candidate {
                id: format!("n{:02}", rng.gen_range(0..100) * 100 + i),
                roles,
                fog: rng.gen_bool(0.05),
                abandoned: rng.gen_bool(0.1),
                x: rng.gen_range(0..5) as f64,
                y: rng.gen_range(0..5) as f64,
                pow: rng.gen_range(0..4),
                active: rng.gen_range(0..3),
                completed: rng.gen_range(0..=assigned),
                assigned,
                ranking: rng.gen_range(0..3),
            }
        })
        .collect()
}

pub fn registry_of(candidates: &[Candidate]) -> NodeRegistry {
    let mut reg = NodeRegistry::new(PunishmentParams::default());
    for c in candidates {
        let mut p = c.profile();
        if c.fog {
            p.roles.clear();
        }
        reg.register_node(p).expect("valid candidate");
    }
    reg
}

fn eligible<'a>(cands: &'a [Candidate], role: Role, excluded: &'a [String]) -> impl Iterator<Item = &'a Candidate> {
    cands
        .iter()
        .filter(move |c| !c.fog && !c.abandoned && c.roles.contains(&role) && !excluded.contains(&c.id))
}

/// Exhaustive-sort oracle for proximity/work selection: score everyone,
/// sort all of them, take the head. `None` when too few are eligible.
pub fn proximity_oracle(
    cands: &[Candidate],
    origin: (f64, f64),
    role: Role,
    excluded: &[String],
    count: usize,
    w: ScoreWeights,
) -> Option<Vec<String>> {
    let pool: Vec<&Candidate> = eligible(cands, role, excluded).collect();
    if pool.len() < count {
        return None;
    }
    let dist = |c: &Candidate| (c.x - origin.0).hypot(c.y - origin.1);
    let max_pow = pool.iter().map(|c| c.pow).max().unwrap_or(0);
    let max_dist = pool.iter().map(|c| dist(c)).fold(0.0, f64::max);
    let mut scored: Vec<(f64, String)> = pool
        .iter()
        .map(|c| {
            let p = if max_pow == 0 { 0.0 } else { c.pow as f64 / max_pow as f64 };
            let d = if max_dist == 0.0 { 1.0 } else { 1.0 - dist(c) / max_dist };
            (w.w_pow * p + w.w_dist * d, c.id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Some(scored.into_iter().take(count).map(|(_, id)| id).collect())
}

/// Exhaustive-sort oracle for arbiter selection: active level, then
/// completed/assigned (cross-multiplied, 1 when nothing assigned), then
/// ranking, all descending; ties by ascending id.
pub fn arbiter_oracle(cands: &[Candidate], role: Role, excluded: &[String], count: usize) -> Option<Vec<String>> {
    let mut pool: Vec<&Candidate> = eligible(cands, role, excluded).collect();
    if pool.len() < count {
        return None;
    }
    let degree = |c: &Candidate| if c.assigned == 0 { (1u128, 1u128) } else { (c.completed as u128, c.assigned as u128) };
    pool.sort_by(|a, b| {
        let (an, ad) = degree(a);
        let (bn, bd) = degree(b);
        b.active
            .cmp(&a.active)
            .then_with(|| (bn * ad).cmp(&(an * bd)))
            .then_with(|| b.ranking.cmp(&a.ranking))
            .then_with(|| a.id.cmp(&b.id))
    });
    Some(pool.into_iter().take(count).map(|c| c.id.clone()).collect())
}

// ---------------------------------------------------------------- fragmentation

/// Registry with `n` CROs and one user, plus the task to fragment.
pub fn fragmentation_setup(n: usize, targets: usize) -> (NodeRegistry, Task) {
    let mut reg = NodeRegistry::new(PunishmentParams::default());
    reg.register_node(NodeProfile::ordinary("user", &[Role::User], Position::new(0.0, 0.0)))
        .unwrap();
    for i in 0..n {
        let mut p = NodeProfile::ordinary(format!("cro-{i:02}"), &[Role::Cro], Position::new(i as f64, 1.0));
        p.pow_score = (i % 3) as u64;
        reg.register_node(p).unwrap();
    }
    let task = Task {
        task_id: TaskId::new("t"),
        user: NodeId::new("user"),
        task_type: TaskType::Website,
        service: ServiceMode::Automatic,
        payload: (0..targets)
            .map(|i| AuditTarget {
                target_id: format!("u{i}"),
                target_type: TaskType::Website,
                planted: vec![],
            })
            .collect(),
        status: TaskStatus::Submitted,
        escrow_amount: 0,
    };
    (reg, task)
}

/// Checks every structural property of one fragmentation; `Err` describes
/// the first violation.
pub fn check_fragmentation(s: usize, r: usize, n: usize, targets: usize) -> Result<(), String> {
    let (mut reg, mut task) = fragmentation_setup(n, targets);
    let mut journal = Journal::new();
    let result = fragment(&mut task, s, r, &mut reg, ScoreWeights::default(), &mut journal);
    if n < r {
        return match result {
            Err(TaskError::Schedule(ScheduleError::InsufficientNodes { .. })) if task.status == TaskStatus::Failed => Ok(()),
            other => Err(format!("s={s} r={r} n={n}: expected InsufficientNodes, got {other:?}")),
        };
    }
    let segments = result.map_err(|e| format!("s={s} r={r} n={n}: {e}"))?;
    if segments.len() != s {
        return Err(format!("s={s} r={r} n={n}: {} segments", segments.len()));
    }
    let mut covered = vec![0usize; targets];
    let mut next = 0;
    for seg in &segments {
        if seg.slice.start != next || seg.slice.is_empty() {
            return Err(format!("s={s} r={r} n={n}: segment {} is {:?}", seg.index, seg.slice));
        }
        next = seg.slice.end;
        for i in seg.slice.clone() {
            covered[i] += 1;
        }
        if seg.assignees.len() != r {
            return Err(format!("s={s} r={r} n={n}: segment {} has {} assignees", seg.index, seg.assignees.len()));
        }
        if seg.assignees.contains(&NodeId::new("user")) {
            return Err(format!("s={s} r={r} n={n}: user audits own task"));
        }
    }
    if covered.iter().any(|&c| c != 1) {
        return Err(format!("s={s} r={r} n={n}: payload not partitioned"));
    }
    let mut pairs = BTreeMap::new();
    for tx in journal.pending().iter().filter(|t| t.kind == TxKind::SegmentAssigned) {
        *pairs.entry((tx.actor.clone(), tx.tag.clone())).or_insert(0) += 1;
    }
    if pairs.len() != s * r || pairs.values().any(|&c| c != 1) {
        return Err(format!("s={s} r={r} n={n}: duplicate or missing (node, segment) assignment"));
    }
    let workers: BTreeSet<&NodeId> = segments.iter().flat_map(|g| &g.assignees).collect();
    if workers.len() != n.min(s * r) {
        return Err(format!("s={s} r={r} n={n}: {} distinct workers", workers.len()));
    }
    Ok(())
}

// ---------------------------------------------------------------- ledger

/// A chain of `blocks` blocks with a few random transactions each.
pub fn random_chain<R: Rng>(rng: &mut R, blocks: usize) -> Ledger {
    let mut ledger = Ledger::new();
    let mut journal = Journal::new();
    let kinds = [TxKind::TaskSubmitted, TxKind::SegmentAssigned, TxKind::PocSubmitted, TxKind::VulnVerdict];
    for tick in 0..blocks as u64 {
        journal.set_tick(tick);
        for _ in 0..rng.gen_range(1..5) {
            let who = format!("node-{}", rng.gen_range(0..10));
            if rng.gen_bool(0.3) {
                journal.record(
                    TxBody::event(TxKind::Reward, who.as_str(), "t")
                        .transfer(Some(AccountId::Mint), AccountId::Node(NodeId::new(who.as_str())), rng.gen_range(1..50))
                        .tag("situation:5"),
                );
            } else {
                let kind = *kinds.choose(rng).unwrap();
                journal.record(
                    TxBody::event(kind, who.as_str(), format!("s{}", rng.gen_range(0..5)))
                        .digest(Digest::of(&rng.gen::<[u8; 8]>())),
                );
            }
        }
        ledger.append_block(journal.take_pending()).expect("non-empty batch");
    }
    ledger
}

// ---------------------------------------------------------------- replay

/// Independent replay over the dump text: balances per account string plus
/// the supply counters. Checks Σ balances = supply + minted after every
/// transaction; returns the first transaction id where it fails.
#[derive(Debug, Default, PartialEq)]
pub struct TextReplay {
    pub balances: BTreeMap<String, u64>,
    pub supply: u128,
    pub minted: u128,
    pub transactions: usize,
}

pub fn replay_dump(dump: &str) -> Result<TextReplay, String> {
    let mut state = TextReplay::default();
    for (n, line) in dump.lines().enumerate().skip(1) {
        let block: Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        for tx in block["transactions"].as_array().ok_or("block without transactions")? {
            let amount = tx["amount"].as_u64().ok_or("amount")?;
            let to = tx.get("to").and_then(Value::as_str);
            let from = tx.get("from").and_then(Value::as_str);
            if let Some(to) = to {
                match from {
                    None => state.supply += amount as u128,
                    Some("mint") => state.minted += amount as u128,
                    Some(from) => {
                        let bal = state.balances.get_mut(from).ok_or(format!("unknown payer {from}"))?;
                        *bal = bal.checked_sub(amount).ok_or(format!("tx {}: overdraft", tx["tx_id"]))?;
                    }
                }
                *state.balances.entry(to.to_owned()).or_insert(0) += amount;
                if tx["kind"] == "Escrow" && tx.get("tag").and_then(Value::as_str) == Some("release") {
                    state.balances.remove(from.unwrap_or_default());
                }
            }
            state.transactions += 1;
            let total: u128 = state.balances.values().map(|&b| b as u128).sum();
            if total != state.supply + state.minted {
                return Err(format!(
                    "tx {}: balances {total} != supply {} + minted {}",
                    tx["tx_id"], state.supply, state.minted
                ));
            }
        }
    }
    Ok(state)
}

pub fn balances_csv(balances: &BTreeMap<String, u64>) -> String {
    let mut out = String::from("account,balance\n");
    for (k, v) in balances {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

// ---------------------------------------------------------------- scenarios

pub const PATTERNS: [&str; 6] = ["sqli", "xss", "csrf", "rce", "ssrf", "idor"];

/// A random but valid scenario covering automatic and manual tasks, POCs
/// (some invalid) and claims. Built as JSON so it goes through the loader.
pub fn random_scenario<R: Rng>(rng: &mut R) -> Scenario {
    let pos = |rng: &mut R| json!([rng.gen_range(0..20), rng.gen_range(0..20)]);
    let mut nodes = vec![json!({"id": "fog-0", "kind": "fog", "position": pos(rng)})];
    if rng.gen_bool(0.5) {
        nodes.push(json!({"id": "fog-1", "kind": "fog", "position": pos(rng)}));
    }
    let users: Vec<String> = (0..rng.gen_range(1..4)).map(|i| format!("user-{i}")).collect();
    for u in &users {
        nodes.push(json!({"id": u, "roles": ["User"], "position": pos(rng), "key_id": format!("key-{u}")}));
    }
    let n_pocd = rng.gen_range(2..7);
    for i in 0..n_pocd {
        nodes.push(json!({"id": format!("pocd-{i}"), "roles": ["POCD"], "position": pos(rng),
            "behavior": {"poca_error_rate": rng.gen_range(0.0..0.3)}}));
    }
    for i in 0..rng.gen_range(1..8) {
        nodes.push(json!({"id": format!("cro-{i}"), "roles": ["CRO"], "position": pos(rng),
            "capacity": rng.gen_range(1..4) as f64, "proofs": rng.gen_range(0..3),
            "behavior": {"failure_rate": rng.gen_range(0.0..0.5)}}));
    }
    let n_whh = rng.gen_range(1..7);
    for i in 0..n_whh {
        let mut roles = vec!["WHH"];
        if rng.gen_bool(0.4) {
            roles.push("WHA");
        }
        let policy = match rng.gen_range(0..4) {
            0 => json!({"policy": "diligent"}),
            1 => json!({"policy": "approve"}),
            2 => json!({"policy": "reject"}),
            _ => json!({"policy": "erratic", "reject_probability": rng.gen_range(0.0..1.0)}),
        };
        nodes.push(json!({"id": format!("whh-{i}"), "roles": roles, "position": pos(rng),
            "ranking": rng.gen_range(0..3), "active_level": rng.gen_range(0..3),
            "behavior": {"skill": rng.gen_range(0.3..1.0), "failure_rate": rng.gen_range(0.0..0.3), "wha_policy": policy}}));
    }
    let balances: BTreeMap<&String, u64> = users.iter().map(|u| (u, rng.gen_range(0..200))).collect();
    let types = ["website", "application", "smart_contract"];
    let tasks: Vec<Value> = (0..rng.gen_range(0..8))
        .map(|i| {
            let tt = types[rng.gen_range(0..3)];
            let targets: Vec<Value> = (0..rng.gen_range(1..6))
                .map(|t| {
                    let planted: Vec<Value> = (0..rng.gen_range(0..4))
                        .map(|v| json!({"vuln_id": format!("t{i}-{t}-{v}"), "pattern": PATTERNS[rng.gen_range(0..6)],
                            "severity": (["low", "medium", "high"][rng.gen_range(0..3)]),
                            "base_detectability": rng.gen_range(0.0..=1.0)}))
                        .collect();
                    json!({"target_id": format!("t{i}-{t}"), "target_type": tt, "planted": planted})
                })
                .collect();
            json!({"at": rng.gen_range(0..6), "id": format!("task-{i}"), "user": users[rng.gen_range(0..users.len())],
                "task_type": tt, "service": if rng.gen_bool(0.5) { "automatic" } else { "manual" },
                "escrow": rng.gen_range(0..60), "targets": targets})
        })
        .collect();
    let pocs: Vec<Value> = (0..rng.gen_range(0..6))
        .map(|i| json!({"at": rng.gen_range(0..4), "id": format!("poc-{i}"), "author": format!("pocd-{}", rng.gen_range(0..n_pocd)),
            "pattern": PATTERNS[rng.gen_range(0..6)], "valid": rng.gen_bool(0.8)}))
        .collect();
    let claims: Vec<Value> = (0..rng.gen_range(0..4))
        .map(|i| {
            let at = rng.gen_range(0..6);
            let mut c = json!({"at": at, "id": format!("offer-{i}"), "author": format!("whh-{}", rng.gen_range(0..n_whh)),
                "user": users[rng.gen_range(0..users.len())], "price": rng.gen_range(0..100),
                "finding": {"target_id": "private", "pattern": "xss", "severity": "medium"}});
            if rng.gen_bool(0.7) {
                c["decision"] = json!({"at": at + rng.gen_range(0..4), "action": if rng.gen_bool(0.6) { "claim" } else { "decline" }});
            }
            c
        })
        .collect();
    let quorum = [1, 3, 5][rng.gen_range(0..3)];
    let w_pow = rng.gen_range(0..=4) as f64 / 4.0;
    let scenario = json!({
        "schema": 1,
        "run_seed": rng.gen::<u64>(),
        "params": {
            "segments": rng.gen_range(1..5), "redundancy": rng.gen_range(1..4), "quorum": quorum,
            "max_rounds": rng.gen_range(1..6), "wha_count": rng.gen_range(1..3),
            "capacity_step": ([0.5, 1.0, 1.5][rng.gen_range(0..3)]), "ranking_step": rng.gen_range(1..3),
            "w_pow": w_pow, "w_dist": 1.0 - w_pow, "fp_rate": rng.gen_range(0.0..0.3),
            "mint_enabled": rng.gen_bool(0.3), "pow_difficulty": rng.gen_range(0..6), "claim_ttl": rng.gen_range(1..5),
            "rewards": {"poc_adopted": rng.gen_range(0..4), "poc_audit_adopted": rng.gen_range(0..4),
                "vuln_adopted": rng.gen_range(0..4), "vuln_audit_adopted": rng.gen_range(0..4),
                "audit_service_complete": rng.gen_range(0..4)}
        },
        "nodes": nodes,
        "initial_balances": balances,
        "tasks": tasks,
        "pocs": pocs,
        "claims": claims,
    });
    sapiens_core::sim::parse_scenario(&scenario.to_string()).expect("generated scenario is valid")
}

/// The same scenario with every list permuted.
pub fn shuffled<R: Rng>(rng: &mut R, s: &Scenario) -> Scenario {
    let mut s = s.clone();
    s.nodes.shuffle(rng);
    s.tasks.shuffle(rng);
    s.pocs.shuffle(rng);
    s.claims.shuffle(rng);
    s
}

pub fn capacity(v: f64) -> Capacity {
    Capacity::from_f64(v).unwrap()
}

// ---------------------------------------------------------------- tampering

/// Change one field of one block; returns the block index touched.
pub fn mutate<R: Rng>(ledger: Ledger, rng: &mut R) -> (Ledger, u64) {
    let mut blocks = ledger.into_blocks();
    let b = rng.gen_range(0..blocks.len());
    let block = &mut blocks[b];
    let flip = |d: &mut Digest, rng: &mut R| {
        let mut bytes = *d.as_bytes();
        bytes[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
        *d = Digest(bytes);
    };
    match rng.gen_range(0..14) {
        0 => block.index += rng.gen_range(1..5),
        1 => flip(&mut block.prev_hash, rng),
        2 => flip(&mut block.content_hash, rng),
        3 => block.sealed_at ^= 1 << rng.gen_range(0..8),
        field => {
            let t = rng.gen_range(0..block.transactions.len());
            let tx = &mut block.transactions[t];
            match field {
                4 => tx.tx_id += 1,
                5 => tx.kind = if tx.kind == TxKind::Penalty { TxKind::Escrow } else { TxKind::Penalty },
                6 => tx.actor.push('x'),
                7 => tx.subject.push('x'),
                8 => tx.amount += 1,
                9 => tx.logical_time += 1,
                10 => flip(&mut tx.payload_digest, rng),
                11 => tx.to = Some(AccountId::Node(NodeId::new("mallory"))),
                12 => tx.from = if tx.from.is_some() { None } else { Some(AccountId::Mint) },
                _ => tx.tag.push('x'),
            }
        }
    }
    (Ledger::from_blocks(blocks), b as u64)
}

// ---------------------------------------------------------------- punishment

/// ⌈c0 / δ⌉ in integer millionths.
pub fn expected_failures(c0: f64, delta: f64) -> u64 {
    let c = (c0 * 1e6).round() as u64;
    let d = (delta * 1e6).round() as u64;
    c.div_ceil(d)
}

/// Fail one CRO until it is abandoned; returns the failure count.
pub fn failures_until_abandoned(c0: f64, delta: f64) -> u64 {
    let mut reg = NodeRegistry::new(PunishmentParams {
        capacity_step: capacity(delta),
        ..PunishmentParams::default()
    });
    let mut cro = NodeProfile::ordinary("cro", &[Role::Cro], Position::new(1.0, 0.0));
    cro.capacity = capacity(c0);
    reg.register_node(cro).unwrap();
    reg.register_node(NodeProfile::ordinary("spare", &[Role::Cro], Position::new(9.0, 0.0)))
        .unwrap();
    reg.register_node(NodeProfile::ordinary("user", &[Role::User], Position::new(0.0, 0.0)))
        .unwrap();
    let mut journal = Journal::new();
    let mut n = 0;
    while !reg.get(&"cro".into()).unwrap().abandoned {
        reg.record_outcome(&"cro".into(), Outcome::Failed, &mut journal).unwrap();
        n += 1;
        assert!(n <= 1_000_000, "never abandoned");
    }
    assert_eq!(
        reg.record_outcome(&"cro".into(), Outcome::Failed, &mut journal),
        Err(RegistryError::AbandonedNode("cro".into()))
    );
    let request = SelectionRequest {
        task_id: TaskId::new("t"),
        requester: NodeId::new("user"),
        role_needed: Role::Cro,
        count: 1,
        exclusions: Default::default(),
    };
    let picked = select_by_proximity_pow(&reg, &request, ScoreWeights::default()).unwrap();
    assert_eq!(picked, vec![NodeId::new("spare")]);
    assert_eq!(
        journal.pending().iter().filter(|t| t.kind == TxKind::NodeAbandoned).count(),
        1
    );
    n
}

// ---------------------------------------------------------------- manual review

/// Manual tasks judged by WHAs that reject at random.
pub fn manual_run(seed: u64, max_rounds: u32, reject: &[f64], fp_rate: f64, tasks: usize) -> (RunOutput, u64) {
    let mut nodes = vec![
        json!({"id": "fog", "kind": "fog", "position": [0, 0]}),
        json!({"id": "user", "roles": ["User"], "position": [0, 0]}),
        json!({"id": "h0", "roles": ["WHH"], "position": [1, 0]}),
        json!({"id": "h1", "roles": ["WHH"], "position": [2, 0]}),
    ];
    for (i, p) in reject.iter().enumerate() {
        nodes.push(json!({"id": format!("wha-{i}"), "roles": ["WHH", "WHA"], "position": [50, i],
            "active_level": 10, "behavior": {"wha_policy": {"policy": "erratic", "reject_probability": p}}}));
    }
    let tasks: Vec<_> = (0..tasks)
        .map(|i| json!({"at": i, "id": format!("m{i}"), "user": "user", "task_type": "application",
            "service": "manual", "escrow": 10 + i,
            "targets": [{"target_id": format!("app{i}"), "target_type": "application", "planted": [
                {"vuln_id": format!("v{i}"), "pattern": "idor", "severity": "medium", "base_detectability": 0.9}]}]}))
        .collect();
    let budget = 1_000u64;
    let scenario = json!({
        "schema": 1, "run_seed": seed,
        "params": {"segments": 1, "redundancy": 2, "max_rounds": max_rounds, "wha_count": reject.len(), "fp_rate": fp_rate},
        "nodes": nodes, "initial_balances": {"user": budget}, "tasks": tasks,
    });
    let scenario = parse_scenario(&scenario.to_string()).unwrap();
    (run(&scenario, seed).unwrap(), budget)
}

/// Eight one-CRO tasks where the nearest CRO (`cro-bad`, capacity 1.5,
/// step 0.5) always fails and a reliable one waits further away.
pub fn failing_cro_run() -> RunOutput {
    // cro-bad sits next to the user, so it is picked first until abandoned.
    let tasks: Vec<_> = (0..8)
        .map(|i| json!({"at": i, "id": format!("t{i}"), "user": "user", "task_type": "website",
            "service": "automatic", "escrow": 0,
            "targets": [{"target_id": format!("site{i}"), "target_type": "website"}]}))
        .collect();
    let scenario = json!({
        "schema": 1, "run_seed": 4,
        "params": {"segments": 1, "redundancy": 1, "capacity_step": 0.5, "w_pow": 0.0, "w_dist": 1.0},
        "nodes": [
            {"id": "fog", "kind": "fog", "position": [0, 0]},
            {"id": "user", "roles": ["User"], "position": [0, 0]},
            {"id": "cro-bad", "roles": ["CRO"], "position": [1, 0], "capacity": 1.5, "behavior": {"failure_rate": 1.0}},
            {"id": "cro-ok", "roles": ["CRO"], "position": [5, 0]},
            {"id": "d1", "roles": ["POCD"], "position": [9, 0]},
            {"id": "d2", "roles": ["POCD"], "position": [9, 1]},
            {"id": "d3", "roles": ["POCD"], "position": [9, 2]},
            {"id": "d4", "roles": ["POCD"], "position": [9, 3]}
        ],
        "pocs": [{"at": 0, "id": "p", "author": "d1", "pattern": "sqli"}],
        "tasks": tasks,
    });
    let scenario = parse_scenario(&scenario.to_string()).unwrap();
    run(&scenario, 4).unwrap()

}

/// Whether `actor` gets any segment after its abandonment; `None` when it
/// was never abandoned.
pub fn assigned_after_abandonment(out: &RunOutput, actor: &str) -> Option<bool> {
    let txs: Vec<_> = out.ledger.transactions().collect();
    let at = txs.iter().position(|t| t.kind == TxKind::NodeAbandoned && t.actor == actor)?;
    Some(txs[at..].iter().any(|t| t.kind == TxKind::SegmentAssigned && t.actor == actor))
}
