//! Scenario files, the event loop, metrics and result files.

mod engine;
mod metrics;
mod output;
mod scenario;

pub use engine::{genesis, run, run_scenario, seed_from_env, RunError, RunOutput, SEED_ENV};
pub use metrics::RunMetrics;
pub use output::{
    emit_report, ground_truth_diff, write_balances_csv, write_tasks_csv, DiffError, GroundTruthDiff, ReportFormat,
};
pub use scenario::{
    load_scenario, parse_scenario, ClaimSpec, DecisionSpec, NodeSpec, PocSpec, Scenario, ScenarioError,
    ScenarioParams, TaskSpec, MAX_POW_DIFFICULTY, SCHEMA_VERSION,
};
