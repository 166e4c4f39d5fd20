//! Run configuration: one human-editable TOML file driving data generation,
//! training, calibration, and evaluation. Every run directory receives a
//! canonical snapshot of the config that produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::ProfileTiming;
use crate::nn::AdamParams;
use crate::sim::{CalibrationOptions, RobotParams, SimConfig};
use crate::train::{NetHyper, SaveCriteria, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountsSection {
    pub abrupt: usize,
    pub incipient: usize,
    pub intermittent: usize,
}

impl Default for CountsSection {
    fn default() -> Self {
        CountsSection {
            abrupt: 900,
            incipient: 900,
            intermittent: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_reserve: usize,
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_reserve: 200,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    /// Window length m in samples.
    pub length: usize,
    pub stride: usize,
    /// Maximum prediction horizon H (s).
    pub horizon: f64,
    /// Subtract the first retained sample before windowing (for sensor
    /// streams with offset drift).
    pub drift_correct: bool,
}

impl Default for WindowSection {
    fn default() -> Self {
        WindowSection {
            length: 30,
            stride: 1,
            horizon: 4.0,
            drift_correct: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs_fault: usize,
    pub epochs_interval: usize,
    pub epochs_regressor: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Saving rule 3 threshold on both trajectory-level FPRs.
    pub max_fpr: f64,
    /// Target validation FPR for the probability-threshold calibration.
    pub threshold_target_fpr: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs_fault: 4,
            epochs_interval: 12,
            epochs_regressor: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            max_fpr: 0.0,
            threshold_target_fpr: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    /// Master seed; all purpose-specific RNG streams derive from it.
    pub master: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection { master: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub robot: RobotParams<f64>,
    pub sim: SimConfig<f64>,
    pub forces: ProfileTiming<f64>,
    pub calibration: CalibrationOptions<f64>,
    pub counts: CountsSection,
    pub split: SplitSection,
    pub window: WindowSection,
    pub network: NetHyper,
    pub training: TrainingSection,
    pub seeds: SeedsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            robot: RobotParams::default(),
            sim: SimConfig::default(),
            forces: ProfileTiming::default(),
            calibration: CalibrationOptions::default(),
            counts: CountsSection::default(),
            split: SplitSection::default(),
            window: WindowSection::default(),
            network: NetHyper::default(),
            training: TrainingSection::default(),
            seeds: SeedsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config {
                key: path.display().to_string(),
                detail: e.to_string(),
            })?;
        let mut config: RunConfig = toml::from_str(&text)?;
        config.sim.seed = config.seeds.master;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, count) in [
            ("counts.abrupt", self.counts.abrupt),
            ("counts.incipient", self.counts.incipient),
            ("counts.intermittent", self.counts.intermittent),
        ] {
            if count < 1 {
                return Err(Error::Config {
                    key: key.into(),
                    detail: "count must be at least 1".into(),
                });
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config {
                key: "split.train_fraction".into(),
                detail: format!("must lie in (0, 1), got {}", self.split.train_fraction),
            });
        }
        if self.window.length == 0 || self.window.stride == 0 {
            return Err(Error::Config {
                key: "window".into(),
                detail: "length and stride must be positive".into(),
            });
        }
        if self.window.horizon <= 2.0 {
            return Err(Error::Config {
                key: "window.horizon".into(),
                detail: format!("must exceed 2 s, got {}", self.window.horizon),
            });
        }
        if !(0.0..=1.0).contains(&self.training.max_fpr)
            || !(0.0..=1.0).contains(&self.training.threshold_target_fpr)
        {
            return Err(Error::Config {
                key: "training".into(),
                detail: "max_fpr and threshold_target_fpr must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    /// Canonical TOML snapshot; written next to every output.
    pub fn to_snapshot(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config {
            key: "snapshot".into(),
            detail: e.to_string(),
        })
    }

    /// Derived purpose-specific seeds, all functions of the master seed.
    pub fn split_seed(&self) -> u64 {
        self.seeds.master ^ 0x53504c4954_u64
    }

    pub fn train_seed(&self, offset: u64) -> u64 {
        self.seeds.master ^ (0x545241494e00 + offset)
    }

    pub fn train_config(&self, epochs: usize, offset: u64) -> TrainConfig<f64> {
        TrainConfig {
            epochs,
            batch_size: self.training.batch_size,
            adam: AdamParams {
                learning_rate: self.training.learning_rate,
                ..Default::default()
            },
            seed: self.train_seed(offset),
        }
    }

    pub fn save_criteria(&self) -> SaveCriteria<f64> {
        SaveCriteria {
            max_fpr: self.training.max_fpr,
        }
    }
}
