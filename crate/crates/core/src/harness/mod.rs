//! Experiment orchestration: configuration, per-cell training and held-out
//! evaluation, cross-policy comparison, decision timing and plot exports.

mod config;
mod experiment;
mod plot;
mod timing;

pub use config::{
    apply_sweep, EnvSection, EvalSection, ExperimentConfig, MobilitySection, MobilitySource,
    SweepAxis, SweepSection, SweepValue,
};
pub use experiment::{
    eval_env, evaluate_policy, load_trace_file, mobility_plan, read_metrics_csv, run_cell,
    run_episode, run_experiment, train_env, write_manifest, write_metrics_csv, CellResult,
    EpisodeTotals, MetricsRow, MobilityPlan, RunSummary, METRICS_CSV_HEADER, TIMING_CSV_HEADER,
};
pub use plot::{emit_plot_data, median, sweep_compare, ComparisonTable};
pub use timing::{measure_decision_time, sample_states, DecisionTiming, WARMUP_DECISIONS};
