//! Experiment configuration: one TOML file covering every module.
//!
//! Every field has a default, so a partial file is valid; the repository
//! ships `configs/reference.toml` (the pinned adaptation-schedule and cost
//! constants) and `configs/desk.toml` (the full desk-scale setup including
//! all simulator plumbing).

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::adapt::AdaptConfig;
use crate::costmap::TrackSpec;
use crate::error::{Error, Result};
use crate::mppi::MppiConfig;
use crate::pretrain::PretrainConfig;
use crate::sim::{SimConfig, SurfaceMap};

/// Scenario-level knobs: which seeds, how long, where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    /// Seeds for batch experiments; each seed is an independent replicate.
    pub seeds: Vec<u64>,
    /// Laps per closed-loop control run.
    pub laps: usize,
    /// Leading laps excluded from the per-run control-error average.
    pub lap_skip: usize,
    /// Length of each recorded drive log (s).
    pub record_duration: f64,
    /// Closed-loop fine-tuning length on the cement oval (s).
    pub finetune_duration: f64,
    /// Abort a control run that has not finished its laps by this time (s).
    pub control_time_cap: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            seeds: vec![1, 2, 3, 4, 5],
            laps: 18,
            lap_skip: 1,
            record_duration: 60.0,
            finetune_duration: 20.0,
            control_time_cap: 300.0,
        }
    }
}

/// Complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub control: ControlTiming,
    pub sim: SimConfig,
    /// Surface layout during pre-training and fine-tuning.
    pub pretrain_surface: SurfaceMap,
    /// Surface layout during the online-adaptation experiments.
    #[serde(default = "SurfaceMap::two_mats")]
    pub experiment_surface: SurfaceMap,
    pub track: TrackSpec,
    pub mppi: MppiConfig,
    pub adapt: AdaptConfig,
    pub pretrain: PretrainConfig,
    pub run: RunParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            control: ControlTiming::default(),
            sim: SimConfig::default(),
            pretrain_surface: SurfaceMap::uniform_cement(),
            experiment_surface: SurfaceMap::two_mats(),
            track: TrackSpec::default(),
            mppi: MppiConfig::default(),
            adapt: AdaptConfig::default(),
            pretrain: PretrainConfig::default(),
            run: RunParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlTiming {
    /// Control period (s).
    pub dt: f64,
    /// Costmap sampling resolution (m/cell).
    pub costmap_resolution: f64,
}

impl Default for ControlTiming {
    fn default() -> Self {
        ControlTiming {
            dt: 0.02,
            costmap_resolution: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingInput {
            path: path.display().to_string(),
            hint: format!("config file not readable ({e})"),
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.control.dt <= 0.0 {
            return Err(Error::Config("control dt must be > 0".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("seed list must be non-empty".into()));
        }
        if self.run.laps <= self.run.lap_skip {
            return Err(Error::Config(format!(
                "laps ({}) must exceed lap_skip ({})",
                self.run.laps, self.run.lap_skip
            )));
        }
        self.sim.validate(self.control.dt)?;
        self.track.validate()?;
        self.mppi.validate()?;
        if (self.mppi.dt - self.control.dt).abs() > 1e-12 {
            return Err(Error::Config(
                "mppi dt must equal the control period".into(),
            ));
        }
        self.adapt.validate(self.control.dt)?;
        if self.control.costmap_resolution <= 0.0 {
            return Err(Error::Config("costmap resolution must be > 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

impl ExperimentConfig {
    /// The full desk-scale default setup.
    pub fn desk_default() -> Self {
        ExperimentConfig::default()
    }
}
