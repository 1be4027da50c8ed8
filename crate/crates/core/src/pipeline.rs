//! End-to-end estimation: covariance statistics, joint-diagonalization
//! initialization, the alternating CPD fit, and the Fisher-scoring
//! refinement, with the intermediate estimates kept for evaluation.

use std::time::Instant;

use crate::covariance::CovarianceStats;
use crate::cpd::{acdc_run, ejd_init, AcdcSchedule, CpdState};
use crate::ml::{fsa_run, FsaOptions, FsaOutcome, ParamVector};
use crate::{CMatrix, Error, Result};

/// Estimator chain configuration.
#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    pub num_sources: usize,
    pub schedule: AcdcSchedule,
    pub fsa: FsaOptions,
    /// Skip the Fisher-scoring phase when false.
    pub run_refinement: bool,
}

impl PipelineOptions {
    pub fn new(num_sources: usize) -> Self {
        Self {
            num_sources,
            schedule: AcdcSchedule::default(),
            fsa: FsaOptions::default(),
            run_refinement: true,
        }
    }
}

/// Everything the estimation chain produced for one batch.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Noise-variance estimate used for denoising.
    pub sigma_sq: f64,
    /// Initializer output (ascending azimuths, matching steering columns).
    pub ejd_theta: Vec<f64>,
    pub ejd_a: CMatrix,
    /// Phase-1 state: normalized estimates, cost trajectory, interleaves.
    pub cpd: CpdState,
    /// Phase-2 outcome when refinement ran.
    pub refined: Option<FsaOutcome>,
    /// Whether phase 1 met its tolerance before the interleave cap.
    pub cpd_converged: bool,
    pub elapsed: std::time::Duration,
}

impl EstimationResult {
    pub fn theta_cpd(&self) -> &[f64] {
        &self.cpd.theta_hat
    }

    pub fn theta_refined(&self) -> Option<Vec<f64>> {
        self.refined.as_ref().map(|o| o.phi.theta().to_vec())
    }

    pub fn a_refined(&self) -> Option<CMatrix> {
        self.refined.as_ref().map(|o| o.phi.unpack().0)
    }
}

/// Run the full chain on a `3M × T` measurement batch with a known source
/// count.
pub fn estimate(y: &CMatrix, opts: &PipelineOptions) -> Result<EstimationResult> {
    if !y.nrows().is_multiple_of(3) || y.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "measurement batch needs 3M rows, got {}",
            y.nrows()
        )));
    }
    let start = Instant::now();
    let d = opts.num_sources;
    let stats = CovarianceStats::from_batch(y, d)?;
    let init = ejd_init(&stats, d)?;
    let ejd_theta = init.0.clone();
    let ejd_a = init.1.clone();
    let cpd = acdc_run(&stats, init, opts.schedule)?;
    let cpd_converged = cpd.interleaves < opts.schedule.max_interleaves;

    let refined = if opts.run_refinement {
        let sigma_sq = stats.noise_variance().max(opts.fsa.sigma_sq_floor);
        let phi0 = ParamVector::pack(&cpd.a_hat, &cpd.theta_hat, sigma_sq)?;
        Some(fsa_run(&phi0, stats.r_y(), y.ncols(), opts.fsa)?)
    } else {
        None
    };

    Ok(EstimationResult {
        sigma_sq: stats.noise_variance(),
        ejd_theta,
        ejd_a,
        cpd,
        refined,
        cpd_converged,
        elapsed: start.elapsed(),
    })
}
