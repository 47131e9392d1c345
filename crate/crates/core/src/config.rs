//! Run configuration shared by every command, read from TOML.
//!
//! ```toml
//! seed = 0
//! data_dir = "runs/data"
//! model_dir = "runs/model"
//! denoiser = "unet"          # or "analytic"
//!
//! [schedule]                 # t_max, beta_1, beta_t
//! [data]                     # dataset generation, see DatasetConfig
//! [data.phantom]             # phantom geometry, see PhantomParams
//! [arch]                     # network shape, see ArchConfig
//! [train]                    # optimizer and epochs, see TrainConfig
//! [pipeline]                 # detection settings, see PipelineConfig
//! [experiment]               # sweeps and trend thresholds, see ExperimentConfig
//! ```
//!
//! Every section is optional and falls back to its defaults. The top-level
//! `seed` is copied into `data.seed` and `train.seed` on resolution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{ArchConfig, TrainConfig};
use crate::diffusion::{NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::synthdata::DatasetConfig;

pub const CONFIG_FILE: &str = "run_config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    /// Trained network loaded from `model_dir`.
    #[default]
    Unet,
    /// Gaussian oracle fitted to the training split.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Noise levels of the single-level baseline sweep.
    pub noise_levels: Vec<usize>,
    /// Independent sampling replicates per image.
    pub eval_seeds: usize,
    /// Caps on the number of test images used; 0 means all.
    pub max_healthy: usize,
    pub max_anomalous: usize,
    /// Reconstruction panels written by the ablation command.
    pub panels: usize,
    /// Required SSIM gain of the full pipeline over the baseline at `t_mask`.
    pub ssim_margin: f64,
    /// Required fraction of cases where re-sampling lowers boundary energy.
    pub boundary_fraction: f64,
    /// Paired cases needed before the boundary-energy claim is judged.
    pub min_boundary_cases: usize,
    /// Strata in which the full pipeline must match the best single level.
    pub min_strata: usize,
    /// Fraction of replicates in which small and large lesions prefer different levels.
    pub dilemma_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![50, 100, 150, 200, 250, 300],
            eval_seeds: 5,
            max_healthy: 0,
            max_anomalous: 0,
            panels: 4,
            ssim_margin: 0.05,
            boundary_fraction: 0.8,
            min_boundary_cases: 50,
            min_strata: 2,
            dilemma_fraction: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub denoiser: DenoiserKind,
    pub schedule: ScheduleConfig,
    pub data: DatasetConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("runs/data"),
            model_dir: PathBuf::from("runs/model"),
            denoiser: DenoiserKind::default(),
            schedule: ScheduleConfig::default(),
            data: DatasetConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            pipeline: PipelineConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Propagates the master seed into the sections that carry their own.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.data.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule.build()?;
        self.data.validate()?;
        self.arch.validate()?;
        self.arch.check_input(self.data.phantom.height, self.data.phantom.width)?;
        if self.arch.t_max < schedule.t_max() {
            return Err(Error::InvalidConfig(format!(
                "arch.t_max {} is below schedule.t_max {}",
                self.arch.t_max,
                schedule.t_max()
            )));
        }
        if self.train.epochs > 0 {
            self.train.validate()?;
        }
        self.pipeline.validate(&schedule)?;
        let e = &self.experiment;
        if e.noise_levels.is_empty() || e.noise_levels.iter().any(|&t| t == 0 || t > schedule.t_max()) {
            return Err(Error::InvalidConfig(format!(
                "noise_levels must be non-empty and within 1..={}",
                schedule.t_max()
            )));
        }
        if e.eval_seeds == 0 {
            return Err(Error::InvalidConfig("eval_seeds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&e.boundary_fraction) || !(0.0..=1.0).contains(&e.dilemma_fraction) {
            return Err(Error::InvalidConfig("boundary_fraction and dilemma_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.model_dir.join(CHECKPOINT_FILE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default().resolve(Some(7)).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.data.seed, 7);
        assert_eq!(back.train.seed, 7);
    }

    #[test]
    fn partial_files_use_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\n[pipeline]\nn_resample = 2\n").unwrap();
        assert_eq!(cfg.pipeline.n_resample, 2);
        assert_eq!(cfg.pipeline.t_mask, 200);
        assert_eq!(cfg.experiment.noise_levels, vec![50, 100, 150, 200, 250, 300]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        let mut cfg = RunConfig::default();
        cfg.pipeline.t_stitch = 300;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.data.phantom.height = 63;
        assert!(cfg.validate().is_err());
    }
}
