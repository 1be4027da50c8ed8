use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Parser;

use avs_doa_cli::config::{preset, EstimatorSel, ExperimentConfig};
use avs_doa_cli::output::emit;
use avs_doa_cli::run::run_experiment;

/// Monte-Carlo benchmark harness for blind AVS DOA estimation.
#[derive(Debug, Parser)]
#[command(name = "avs-doa", version, about)]
struct Cli {
    /// Path to a JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Named preset: fig1a, fig1b, fig2, fig3 or fig4.
    #[arg(long)]
    preset: Option<String>,

    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,

    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for results.csv, isr.csv and run.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Comma-separated estimator subset, e.g. "cpd,kld".
    #[arg(long)]
    estimators: Option<String>,

    /// Worker threads for trial execution (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        (None, Some(name)) => preset(name)?,
        _ => bail!("exactly one of --config or --preset is required"),
    };
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(list) = &cli.estimators {
        config.estimators = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse::<EstimatorSel>)
            .collect::<anyhow::Result<Vec<_>>>()?;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = load_config(&cli)?;
    eprintln!(
        "running {} | axis {:?} over {:?} | {} trials | seed {}",
        config.label, config.axis, config.axis_values, config.trials, config.seed
    );
    let summary = run_experiment(&config)?;
    let paths = emit(&summary, &cli.out)?;

    println!(
        "{:<12} {:>4} {:<5} {:>12} {:>12} {:>12} {:>9}",
        "axis_value", "doa", "est", "rmse_deg", "crlb_deg", "std_env", "failures"
    );
    for row in &summary.rows {
        println!(
            "{:<12} {:>4} {:<5} {:>12.6} {:>12.6} {:>12.3e} {:>9}",
            row.axis_value,
            row.doa_index,
            row.estimator.to_string(),
            row.rmse_deg,
            row.crlb_sqrt_rad.to_degrees(),
            row.std_env,
            row.failures
        );
    }
    eprintln!(
        "wrote {}, {}, {} in {:.1}s",
        paths.results_csv.display(),
        paths.isr_csv.display(),
        paths.manifest.display(),
        summary.wall_time_secs
    );
    Ok(())
}
