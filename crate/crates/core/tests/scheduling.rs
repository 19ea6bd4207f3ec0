mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapiens_core::ledger::Journal;
use sapiens_core::registry::Role;
use sapiens_core::scheduler::{select_arbiters, select_by_proximity_pow, ScheduleError, ScoreWeights, SelectionRequest};
use sapiens_core::task::{fragment, TaskError};
use sapiens_core::{NodeId, TaskId};

fn ids(v: Vec<NodeId>) -> Vec<String> {
    v.into_iter().map(|n| n.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn proximity_selection_matches_full_sort(seed in any::<u64>(), n in 1usize..=20, count in 1usize..8, q in 0u8..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cands = common::random_candidates(&mut rng, n);
        let requester = cands[0].clone();
        cands[0].fog = false;
        let reg = common::registry_of(&cands);
        let role = [Role::Cro, Role::Whh, Role::Pocd][rng.gen_range(0..3)];
        let excluded: Vec<String> = cands.iter().filter(|_| rng.gen_bool(0.15)).map(|c| c.id.clone()).collect();
        let w = ScoreWeights { w_pow: f64::from(q) / 4.0, w_dist: 1.0 - f64::from(q) / 4.0 };
        let request = SelectionRequest {
            task_id: TaskId::new("t"),
            requester: NodeId::new(requester.id.as_str()),
            role_needed: role,
            count,
            exclusions: excluded.iter().map(|s| NodeId::new(s.as_str())).collect(),
        };
        let expected = common::proximity_oracle(&cands, (requester.x, requester.y), role, &excluded, count, w);
        match (select_by_proximity_pow(&reg, &request, w), expected) {
            (Ok(got), Some(want)) => prop_assert_eq!(ids(got), want),
            (Err(ScheduleError::InsufficientNodes { .. }), None) => {}
            (got, want) => prop_assert!(false, "library {:?} vs oracle {:?}", got, want),
        }
    }

    #[test]
    fn arbiter_selection_matches_full_sort(seed in any::<u64>(), n in 1usize..=20, count in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cands = common::random_candidates(&mut rng, n);
        let reg = common::registry_of(&cands);
        let role = if rng.gen_bool(0.5) { Role::Pocd } else { Role::Whh };
        let excluded: Vec<String> = cands.iter().filter(|_| rng.gen_bool(0.15)).map(|c| c.id.clone()).collect();
        let exclusions: BTreeSet<NodeId> = excluded.iter().map(|s| NodeId::new(s.as_str())).collect();
        match (select_arbiters(&reg, role, count, &exclusions), common::arbiter_oracle(&cands, role, &excluded, count)) {
            (Ok(got), Some(want)) => prop_assert_eq!(ids(got), want),
            (Err(ScheduleError::InsufficientNodes { .. }), None) => {}
            (got, want) => prop_assert!(false, "library {:?} vs oracle {:?}", got, want),
        }
    }
}

#[test]
fn fragmentation_properties_hold_for_all_small_shapes() {
    for s in 1..=8 {
        for r in 1..=4 {
            for n in 0..=12 {
                for targets in [s, s + 3, 17] {
                    common::check_fragmentation(s, r, n, targets).unwrap();
                }
            }
        }
    }
}

#[test]
fn more_segments_than_targets_rejected() {
    let (mut reg, mut task) = common::fragmentation_setup(4, 2);
    let err = fragment(&mut task, 3, 1, &mut reg, ScoreWeights::default(), &mut Journal::new()).unwrap_err();
    assert!(matches!(err, TaskError::BadSegmentCount { segments: 3, targets: 2 }));
}
