//! Closed-loop experiment harness: scenario files, runs, sweeps and the
//! checks that judge them.

pub mod analysis;
pub mod output;
pub mod run;
pub mod scenario;

pub use output::{CheckResult, DenoiseQuality, ExperimentReport, LinearFit, SweepRow, TelemetryRow};
pub use run::{choose_step_us, run, sweep, sweep_default, RunOptions, RunOutcome};
pub use scenario::{bundled, bundled_names, Check, ScenarioConfig};
