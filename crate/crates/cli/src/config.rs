//! Experiment configuration: JSON-facing types, validation, and the named
//! presets that pin the benchmark scenarios.

use std::collections::BTreeSet;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use avs_doa::metrics::EstimatorKind;
use avs_doa::sim::{self, ArrayScenario, DoaVector, NoiseKind, SourceKind};

/// Stream tag for the one-time scenario perturbation draw.
const PERTURBATION_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    /// Half-wavelength uniform linear array.
    Ula,
    /// λ/2-radius uniform circular array.
    Uca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometryKind,
    pub sensors: usize,
    /// Draw per-sensor gain offsets from U(0.7, 1.3) and position errors
    /// from U(-1, 1) wavelengths, once per experiment.
    #[serde(default)]
    pub uncalibrated: bool,
    /// 1-based sensor numbers whose elements receive no signal.
    #[serde(default)]
    pub faulty: Vec<usize>,
}

impl ScenarioConfig {
    /// Realize the scenario; perturbations (when requested) come from a
    /// stream derived from the master seed so the draw is made once and
    /// reproduced exactly on reruns.
    pub fn build(&self, master_seed: u64) -> anyhow::Result<ArrayScenario> {
        let mut scenario = match self.geometry {
            GeometryKind::Ula => ArrayScenario::ula(self.sensors)?,
            GeometryKind::Uca => ArrayScenario::uca(self.sensors)?,
        };
        if self.uncalibrated {
            let mut rng = sim::derive_rng(master_seed, &[PERTURBATION_STREAM]);
            scenario = scenario.with_random_perturbations(&mut rng);
        }
        if !self.faulty.is_empty() {
            let mut faulty = BTreeSet::new();
            for &s in &self.faulty {
                if s == 0 || s > self.sensors {
                    bail!("faulty sensor number {s} outside 1..={}", self.sensors);
                }
                faulty.insert(s - 1);
            }
            scenario = scenario.with_faulty(faulty)?;
        }
        Ok(scenario)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceModel {
    CircularComplexNormal,
    Qpsk,
    GaussianMixture,
}

impl From<SourceModel> for SourceKind {
    fn from(m: SourceModel) -> Self {
        match m {
            SourceModel::CircularComplexNormal => SourceKind::CircularComplexNormal,
            SourceModel::Qpsk => SourceKind::Qpsk,
            SourceModel::GaussianMixture => SourceKind::GaussianMixture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    CircularComplexNormal,
    ComplexLaplace,
}

impl From<NoiseModel> for NoiseKind {
    fn from(m: NoiseModel) -> Self {
        match m {
            NoiseModel::CircularComplexNormal => NoiseKind::CircularComplexNormal,
            NoiseModel::ComplexLaplace => NoiseKind::ComplexLaplace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Sweep the snapshot count T at fixed SNR.
    SampleSize,
    /// Sweep the SNR in dB at fixed T.
    SnrDb,
}

impl SweepAxis {
    pub fn csv_name(&self) -> &'static str {
        match self {
            SweepAxis::SampleSize => "sample_size",
            SweepAxis::SnrDb => "snr_db",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorSel {
    Ejd,
    Cpd,
    Kld,
}

impl From<EstimatorSel> for EstimatorKind {
    fn from(e: EstimatorSel) -> Self {
        match e {
            EstimatorSel::Ejd => EstimatorKind::Ejd,
            EstimatorSel::Cpd => EstimatorKind::Cpd,
            EstimatorSel::Kld => EstimatorKind::Kld,
        }
    }
}

impl std::str::FromStr for EstimatorSel {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s.trim() {
            "ejd" => Ok(EstimatorSel::Ejd),
            "cpd" => Ok(EstimatorSel::Cpd),
            "kld" => Ok(EstimatorSel::Kld),
            other => bail!("unknown estimator {other:?} (expected ejd, cpd or kld)"),
        }
    }
}

/// One Monte-Carlo experiment: a scenario, source/noise models, a sweep axis
/// and the estimator set to evaluate at each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: String,
    pub scenario: ScenarioConfig,
    /// True azimuths in degrees, strictly ascending.
    pub doas_deg: Vec<f64>,
    pub source: SourceModel,
    pub noise: NoiseModel,
    pub axis: SweepAxis,
    pub axis_values: Vec<f64>,
    /// Fixed SNR in dB when sweeping the sample size. SNR is defined as
    /// `-10 log10(σ²)` under unit-variance sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Fixed snapshot count when sweeping the SNR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorSel>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.axis_values.is_empty() {
            bail!("sweep must contain at least one point");
        }
        if self.estimators.is_empty() {
            bail!("estimator set must not be empty");
        }
        let mut seen = BTreeSet::new();
        for &e in &self.estimators {
            if !seen.insert(e) {
                bail!("estimator {e:?} listed twice");
            }
        }
        self.doas()?;
        if self.doas_deg.len() >= self.scenario.sensors {
            bail!(
                "{} sources need more than {} sensors",
                self.doas_deg.len(),
                self.scenario.sensors
            );
        }
        match self.axis {
            SweepAxis::SampleSize => {
                if self.snr_db.is_none() {
                    bail!("sample-size sweep needs the fixed snr_db");
                }
                for &v in &self.axis_values {
                    if v < 1.0 || v.fract() != 0.0 {
                        bail!("sample-size sweep values must be positive integers, got {v}");
                    }
                }
            }
            SweepAxis::SnrDb => {
                if self.sample_size.is_none() {
                    bail!("SNR sweep needs the fixed sample_size");
                }
            }
        }
        Ok(())
    }

    pub fn doas(&self) -> anyhow::Result<DoaVector> {
        DoaVector::from_degrees(&self.doas_deg).context("invalid doas_deg")
    }

    /// (sample size, SNR dB) at a sweep point.
    pub fn point(&self, axis_value: f64) -> (usize, f64) {
        match self.axis {
            SweepAxis::SampleSize => (axis_value as usize, self.snr_db.unwrap()),
            SweepAxis::SnrDb => (self.sample_size.unwrap(), axis_value),
        }
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let config: Self = serde_json::from_str(text).context("parsing experiment config")?;
        config.validate()?;
        Ok(config)
    }
}

/// Noise variance from the SNR convention `snr = -10 log10(σ²)`.
pub fn noise_variance_for_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Named benchmark presets.
///
/// * `fig1a` / `fig1b` — calibrated 7-sensor ULA, three Gaussian sources at
///   (-56°, 43°, 71°); sample-size sweep at 10 dB / SNR sweep at T=100.
/// * `fig2` — the same ULA uncalibrated (random gain and position offsets),
///   QPSK sources in Laplace noise, sample-size sweep at 5 dB.
/// * `fig3` / `fig4` — 5-sensor UCA with sensors 2 and 4 dead, two
///   Gaussian-mixture sources at (24°, 92°); SNR sweep at T=500 and the
///   separation-focused sample-size sweep at 0 dB.
pub fn preset(name: &str) -> anyhow::Result<ExperimentConfig> {
    let ula = ScenarioConfig {
        geometry: GeometryKind::Ula,
        sensors: 7,
        uncalibrated: false,
        faulty: vec![],
    };
    let uca_faulty = ScenarioConfig {
        geometry: GeometryKind::Uca,
        sensors: 5,
        uncalibrated: false,
        faulty: vec![2, 4],
    };
    let all = vec![EstimatorSel::Ejd, EstimatorSel::Cpd, EstimatorSel::Kld];
    let config = match name {
        "fig1a" => ExperimentConfig {
            label: "fig1a".into(),
            scenario: ula,
            doas_deg: vec![-56.0, 43.0, 71.0],
            source: SourceModel::CircularComplexNormal,
            noise: NoiseModel::CircularComplexNormal,
            axis: SweepAxis::SampleSize,
            axis_values: vec![100.0, 1000.0, 10_000.0],
            snr_db: Some(10.0),
            sample_size: None,
            trials: 200,
            seed: 20_240_101,
            estimators: all,
        },
        "fig1b" => ExperimentConfig {
            label: "fig1b".into(),
            scenario: ula,
            doas_deg: vec![-56.0, 43.0, 71.0],
            source: SourceModel::CircularComplexNormal,
            noise: NoiseModel::CircularComplexNormal,
            axis: SweepAxis::SnrDb,
            axis_values: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            snr_db: None,
            sample_size: Some(100),
            trials: 200,
            seed: 20_240_102,
            estimators: all,
        },
        "fig2" => ExperimentConfig {
            label: "fig2".into(),
            scenario: ScenarioConfig {
                uncalibrated: true,
                ..ula
            },
            doas_deg: vec![-56.0, 43.0, 71.0],
            source: SourceModel::Qpsk,
            noise: NoiseModel::ComplexLaplace,
            axis: SweepAxis::SampleSize,
            axis_values: vec![100.0, 1000.0, 10_000.0],
            snr_db: Some(5.0),
            sample_size: None,
            trials: 200,
            seed: 20_240_103,
            estimators: all,
        },
        "fig3" => ExperimentConfig {
            label: "fig3".into(),
            scenario: uca_faulty,
            doas_deg: vec![24.0, 92.0],
            source: SourceModel::GaussianMixture,
            noise: NoiseModel::CircularComplexNormal,
            axis: SweepAxis::SnrDb,
            axis_values: vec![-5.0, 0.0, 5.0, 10.0],
            snr_db: None,
            sample_size: Some(500),
            trials: 200,
            seed: 20_240_104,
            estimators: all,
        },
        "fig4" => ExperimentConfig {
            label: "fig4".into(),
            scenario: uca_faulty,
            doas_deg: vec![24.0, 92.0],
            source: SourceModel::GaussianMixture,
            noise: NoiseModel::CircularComplexNormal,
            axis: SweepAxis::SampleSize,
            axis_values: vec![100.0, 1000.0],
            snr_db: Some(0.0),
            sample_size: None,
            trials: 200,
            seed: 20_240_105,
            estimators: vec![EstimatorSel::Cpd, EstimatorSel::Kld],
        },
        other => bail!("unknown preset {other:?} (expected fig1a, fig1b, fig2, fig3 or fig4)"),
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for name in ["fig1a", "fig1b", "fig2", "fig3", "fig4"] {
            let config = preset(name).unwrap();
            let json = serde_json::to_string_pretty(&config).unwrap();
            let back = ExperimentConfig::from_json(&json).unwrap();
            assert_eq!(config, back, "preset {name} did not roundtrip");
        }
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut config = preset("fig1a").unwrap();
        config.estimators.clear();
        assert!(config.validate().is_err());

        let mut config = preset("fig1a").unwrap();
        config.trials = 0;
        assert!(config.validate().is_err());

        let mut config = preset("fig1a").unwrap();
        config.snr_db = None;
        assert!(config.validate().is_err());

        let mut config = preset("fig1a").unwrap();
        config.doas_deg = vec![10.0, 10.0];
        assert!(config.validate().is_err());

        let mut config = preset("fig3").unwrap();
        config.scenario.faulty = vec![9];
        assert!(config.scenario.build(1).is_err());
    }

    #[test]
    fn uncalibrated_draw_is_fixed_by_seed() {
        let config = preset("fig2").unwrap();
        let s1 = config.scenario.build(7).unwrap();
        let s2 = config.scenario.build(7).unwrap();
        let s3 = config.scenario.build(8).unwrap();
        assert_eq!(s1.gains, s2.gains);
        assert_eq!(s1.position_offsets, s2.position_offsets);
        assert_ne!(s1.gains, s3.gains);
        for g in &s1.gains {
            assert!((0.7..1.3).contains(g));
        }
        for [dx, dy] in &s1.position_offsets {
            assert!((-1.0..1.0).contains(dx) && (-1.0..1.0).contains(dy));
        }
    }

    #[test]
    fn snr_convention() {
        assert!((noise_variance_for_snr_db(0.0) - 1.0).abs() < 1e-15);
        assert!((noise_variance_for_snr_db(10.0) - 0.1).abs() < 1e-15);
        assert!((noise_variance_for_snr_db(-10.0) - 10.0).abs() < 1e-12);
    }
}
