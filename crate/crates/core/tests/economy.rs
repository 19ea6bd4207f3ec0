mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sapiens_core::ledger::TxKind;
use sapiens_core::sim::{run, write_balances_csv};
use sapiens_core::task::TaskStatus;

fn csv_of(out: &sapiens_core::sim::RunOutput) -> String {
    let mut buf = Vec::new();
    write_balances_csv(&out.balances, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conservation_and_replay_hold_for_random_economies(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = common::random_scenario(&mut rng);
        let out = run(&scenario, scenario.run_seed).unwrap();

        let dump = out.ledger.dump_string();
        let replay = common::replay_dump(&dump).map_err(TestCaseError::fail)?;
        prop_assert_eq!(replay.transactions, out.ledger.tx_count());
        prop_assert_eq!(common::balances_csv(&replay.balances), csv_of(&out));

        // Earnings are exactly the Reward credits seen on the chain.
        let mut earned = std::collections::BTreeMap::new();
        for tx in out.ledger.transactions().filter(|t| t.kind == TxKind::Reward) {
            *earned.entry(tx.actor.clone()).or_insert(0u64) += tx.amount;
        }
        let reported: std::collections::BTreeMap<String, u64> =
            out.metrics.earnings.iter().map(|(k, v)| (k.0.clone(), *v)).collect();
        prop_assert_eq!(earned, reported);

        let m = &out.metrics;
        prop_assert_eq!(m.tasks_reported + m.tasks_failed, m.tasks_submitted);
        prop_assert_eq!(m.tasks_submitted + m.tasks_refused, scenario.tasks.len() as u64);
        for record in out.tasks.values() {
            prop_assert!(record.task.status.is_terminal());
            if record.task.status == TaskStatus::Failed {
                let s = record.settlement.as_ref().unwrap();
                prop_assert_eq!(s.refund, record.task.escrow_amount);
                prop_assert!(s.paid.is_empty());
            }
        }
    }

    #[test]
    fn other_seeds_keep_every_invariant(seed in any::<u64>(), run_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = common::random_scenario(&mut rng);
        let out = run(&scenario, run_seed).unwrap();
        common::replay_dump(&out.ledger.dump_string()).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn marketplace_balances_replay_exactly() {
    let scenario = common::bundled("marketplace");
    let out = run(&scenario, scenario.run_seed).unwrap();
    let replay = common::replay_dump(&out.ledger.dump_string()).unwrap();
    assert_eq!(common::balances_csv(&replay.balances), csv_of(&out));
    // No minting in this scenario except POC rewards, which the counter tracks.
    let supply: u64 = scenario.initial_balances.values().sum();
    assert_eq!(replay.supply, supply as u128);
}
