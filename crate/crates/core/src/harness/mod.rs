//! Experiment runner: baselines, sweeps and CSV outputs.
//!
//! A plan is a scenario file with two extra tables:
//!
//! ```toml
//! [experiment]
//! modes = ["proposed", "baseline1"]
//! axis = "tx_power"
//! grid = [0.0, 10.0, 20.0, 30.0]
//! seeds = [0, 1, 2]
//! out = "results"
//!
//! [train]
//! episodes = 300
//! ```

pub mod plan;
pub mod run;
pub mod summary;

pub use plan::{parse_sweep, ExperimentPlan, Method, SweepAxis};
pub use run::{read_summary, run, run_all, run_specs, summary_rows, write_summary, ExperimentOutput, RunResult, RunSpec, SummaryRow};
pub use summary::{aggregate, stats, summarize_into, AggregateRow, Stats};
