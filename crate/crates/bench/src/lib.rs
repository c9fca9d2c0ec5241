//! Scenario and experiment files, the Monte Carlo runner and CSV outputs
//! behind the `phdtrack` command.

pub mod error;
pub mod experiment;
pub mod output;
pub mod scenario;

pub use error::{BenchError, ConfigError};
pub use experiment::{
    parse_experiment, parse_experiment_file, run_experiment, ExperimentResult, ExperimentSpec,
    FilterKind, FilterSettings, RunResult, ScenarioSource, ScoreRow, SummaryRow, TrajectoryRow,
};
pub use output::{run_and_write, write_results};
pub use scenario::{parse_scenario, parse_scenario_file, write_scenario};
