//! Node selection for every role a task needs.
//!
//! Workers (CRO, WHH, POCD) are ranked by a convex combination of normalized
//! proof-of-work score and normalized proximity to the requester. Arbiters
//! (POCA, WHA) come from a pool ranked lexicographically by
//! `(active_level, completion_degree, ranking)`. Both break ties by ascending
//! node id and never return fog, abandoned or excluded nodes.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, TaskId};
use crate::registry::{NodeProfile, NodeRegistry, Role};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_pow: f64,
    pub w_dist: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            w_pow: 0.5,
            w_dist: 0.5,
        }
    }
}

impl ScoreWeights {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.w_pow)
            && (0.0..=1.0).contains(&self.w_dist)
            && (self.w_pow + self.w_dist - 1.0).abs() <= 1e-9
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionRequest {
    pub task_id: TaskId,
    pub requester: NodeId,
    pub role_needed: Role,
    pub count: usize,
    pub exclusions: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeScore {
    pub node_id: NodeId,
    pub pow_rank_component: f64,
    pub proximity_component: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("need {needed} eligible {role} nodes, found {available}")]
    InsufficientNodes {
        role: Role,
        needed: usize,
        available: usize,
    },
    #[error("selection count must be at least 1")]
    ZeroCount,
    #[error("unknown requester {0}")]
    UnknownRequester(NodeId),
}

fn eligible<'a>(
    registry: &'a NodeRegistry,
    role: Role,
    exclusions: &'a BTreeSet<NodeId>,
) -> impl Iterator<Item = &'a NodeProfile> + 'a {
    registry
        .nodes()
        .filter(move |n| n.schedulable() && n.has_role(role) && !exclusions.contains(&n.node_id))
}

/// Composite scores of every eligible candidate, in node-id order.
pub fn score_candidates(
    registry: &NodeRegistry,
    request: &SelectionRequest,
    weights: ScoreWeights,
) -> Result<Vec<CompositeScore>, ScheduleError> {
    let origin = registry
        .get(&request.requester)
        .map_err(|_| ScheduleError::UnknownRequester(request.requester.clone()))?
        .position;
    let pool: Vec<(&NodeProfile, f64)> = eligible(registry, request.role_needed, &request.exclusions)
        .map(|n| (n, n.position.distance(&origin)))
        .collect();
    let max_pow = pool.iter().map(|(n, _)| n.pow_score).max().unwrap_or(0);
    let max_dist = pool.iter().map(|(_, d)| *d).fold(0.0_f64, f64::max);
    Ok(pool
        .into_iter()
        .map(|(n, d)| {
            let pow_rank_component = if max_pow == 0 {
                0.0
            } else {
                n.pow_score as f64 / max_pow as f64
            };
            let proximity_component = if max_dist == 0.0 { 1.0 } else { 1.0 - d / max_dist };
            CompositeScore {
                node_id: n.node_id.clone(),
                pow_rank_component,
                proximity_component,
                total: weights.w_pow * pow_rank_component + weights.w_dist * proximity_component,
            }
        })
        .collect())
}

/// Heap key where "greater" means "scheduled earlier".
struct Ranked(CompositeScore);

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total
            .total_cmp(&other.0.total)
            .then_with(|| other.0.node_id.cmp(&self.0.node_id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

pub fn select_by_proximity_pow(
    registry: &NodeRegistry,
    request: &SelectionRequest,
    weights: ScoreWeights,
) -> Result<Vec<NodeId>, ScheduleError> {
    if request.count == 0 {
        return Err(ScheduleError::ZeroCount);
    }
    let scores = score_candidates(registry, request, weights)?;
    if scores.len() < request.count {
        return Err(ScheduleError::InsufficientNodes {
            role: request.role_needed,
            needed: request.count,
            available: scores.len(),
        });
    }
    // Bounded min-heap keeps the best `count` candidates.
    let mut heap = BinaryHeap::with_capacity(request.count + 1);
    for score in scores {
        heap.push(Reverse(Ranked(score)));
        if heap.len() > request.count {
            heap.pop();
        }
    }
    let mut best: Vec<Ranked> = heap.into_iter().map(|Reverse(r)| r).collect();
    best.sort_by(|a, b| b.cmp(a));
    Ok(best.into_iter().map(|r| r.0.node_id).collect())
}

fn arbitration_order(a: &NodeProfile, b: &NodeProfile) -> Ordering {
    b.active_level
        .cmp(&a.active_level)
        .then_with(|| b.completion_degree().cmp(&a.completion_degree()))
        .then_with(|| b.ranking.cmp(&a.ranking))
        .then_with(|| a.node_id.cmp(&b.node_id))
}

/// Pick `count` arbiters from holders of `pool_role` (POCD for POC audits,
/// WHH for report approval).
pub fn select_arbiters(
    registry: &NodeRegistry,
    pool_role: Role,
    count: usize,
    exclusions: &BTreeSet<NodeId>,
) -> Result<Vec<NodeId>, ScheduleError> {
    if count == 0 {
        return Err(ScheduleError::ZeroCount);
    }
    let mut pool: Vec<&NodeProfile> = eligible(registry, pool_role, exclusions).collect();
    if pool.len() < count {
        return Err(ScheduleError::InsufficientNodes {
            role: pool_role,
            needed: count,
            available: pool.len(),
        });
    }
    if count < pool.len() {
        pool.select_nth_unstable_by(count - 1, |a, b| arbitration_order(a, b));
        pool.truncate(count);
    }
    pool.sort_by(|a, b| arbitration_order(a, b));
    Ok(pool.into_iter().map(|n| n.node_id.clone()).collect())
}
