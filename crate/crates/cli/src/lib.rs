//! Experiment harness for the blind AVS DOA estimators: scenario presets,
//! Monte-Carlo sweeps over sample size or SNR with per-trial RNG streams,
//! CRLB overlays, and CSV/JSON emission for external plotting.

pub mod config;
pub mod output;
pub mod run;

pub use config::{preset, ExperimentConfig};
pub use output::emit;
pub use run::{run_experiment, RunSummary};
