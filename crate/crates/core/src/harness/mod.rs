//! Experiment orchestration: configuration, replications with exact regret
//! accounting, audits and CSV output.

mod config;
mod output;
mod run;

pub use config::{CorruptionSpec, ExperimentConfig, MdpSource, OutputConfig, World, WorldSpec};
pub use output::{aggregate, aggregate_curve, mean_std, write_report, AggregateRow, CurveRow};
pub use run::{
    condition_ledger, run_experiment, run_replication, run_with_player, EpisodeRow, ExperimentReport, Player,
    RunReport, RunSummary, SolverRow,
};
