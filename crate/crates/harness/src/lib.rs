//! Experiment harness for the SCR solver: TOML experiment specs, multi-seed
//! runs with per-run trace CSVs and summaries, the schedule comparison and
//! the verification suite behind the `scr` binary.

mod error;
pub mod experiment;
pub mod schedules;
pub mod spec;
pub mod verify;

pub use error::{Error, Result};
pub use experiment::{run_experiment, summarize, ExperimentReport, SummaryRow};
pub use schedules::{run_schedule_comparison, ScheduleReport};
pub use spec::ExperimentSpec;
pub use verify::{verify, VerifyOptions, VerifyReport};
