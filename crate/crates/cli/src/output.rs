//! File emission: the fixed-header RMSE table, the ISR table, and the JSON
//! run manifest whose embedded config parses back through the config layer.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::RunSummary;

pub const RESULTS_HEADER: [&str; 10] = [
    "axis",
    "axis_value",
    "doa_index",
    "estimator",
    "rmse_rad",
    "rmse_deg",
    "std_env",
    "crlb_sqrt_rad",
    "trials",
    "failures",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub harness_version: String,
    pub wall_time_secs: f64,
    pub results_rows: usize,
    pub isr_rows: usize,
}

#[derive(Debug, Clone)]
pub struct EmittedPaths {
    pub results_csv: PathBuf,
    pub isr_csv: PathBuf,
    pub manifest: PathBuf,
}

/// Write `results.csv`, `isr.csv` and `run.json` under `out_dir`.
/// The summary is validated before anything touches the filesystem.
pub fn emit(summary: &RunSummary, out_dir: &Path) -> anyhow::Result<EmittedPaths> {
    if summary.config.estimators.is_empty() {
        bail!("refusing to emit: estimator set is empty");
    }
    if summary.rows.is_empty() {
        bail!("refusing to emit: no summary rows");
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let results_csv = out_dir.join("results.csv");
    let mut w = csv::Writer::from_path(&results_csv)
        .with_context(|| format!("opening {}", results_csv.display()))?;
    w.write_record(RESULTS_HEADER)?;
    let axis = summary.config.axis.csv_name();
    for row in &summary.rows {
        w.write_record(&[
            axis.to_string(),
            format_axis(row.axis_value),
            row.doa_index.to_string(),
            row.estimator.to_string(),
            row.rmse_rad.to_string(),
            row.rmse_deg.to_string(),
            row.std_env.to_string(),
            row.crlb_sqrt_rad.to_string(),
            row.trials.to_string(),
            row.failures.to_string(),
        ])?;
    }
    w.flush()?;

    let isr_csv = out_dir.join("isr.csv");
    let mut w = csv::Writer::from_path(&isr_csv)?;
    w.write_record([
        "axis",
        "axis_value",
        "estimator",
        "source_i",
        "source_j",
        "mean_isr",
        "trials_used",
    ])?;
    for row in &summary.isr_rows {
        w.write_record(&[
            axis.to_string(),
            format_axis(row.axis_value),
            row.estimator.to_string(),
            row.source_i.to_string(),
            row.source_j.to_string(),
            row.mean_isr.to_string(),
            row.trials_used.to_string(),
        ])?;
    }
    w.flush()?;

    let manifest_path = out_dir.join("run.json");
    let manifest = RunManifest {
        config: summary.config.clone(),
        seed: summary.config.seed,
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: summary.wall_time_secs,
        results_rows: summary.rows.len(),
        isr_rows: summary.isr_rows.len(),
    };
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).context("serializing manifest")?,
    )?;

    Ok(EmittedPaths {
        results_csv,
        isr_csv,
        manifest: manifest_path,
    })
}

fn format_axis(v: f64) -> String {
    v.to_string()
}
