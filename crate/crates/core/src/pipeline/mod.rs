//! Mask, stitch and re-sample detection on top of any noise predictor.

mod maps;
mod sampling;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use maps::{anomaly_heatmap, binarize, boundary_discontinuity, dilate, final_anomaly_map, norm_p};
pub use sampling::{anoddpm_reconstruct, reverse_chain, stitch_resample};

use crate::denoiser::Denoiser;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Heatmap, Image};
use crate::io;
use crate::metrics::PerceptualDistance;
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Noise level of the initial reconstruction.
    pub t_mask: usize,
    /// Starting level of the masked re-sampling chain.
    pub t_stitch: usize,
    /// Jump-backs per timestep; each timestep runs `n_resample + 1` denoise passes.
    pub n_resample: usize,
    pub dilation_kernel: usize,
    pub binarize_quantile: f64,
    pub use_uncertainty: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t_mask: 200,
            t_stitch: 50,
            n_resample: 5,
            dilation_kernel: 3,
            binarize_quantile: 0.70,
            use_uncertainty: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if !(1 <= self.t_stitch && self.t_stitch <= self.t_mask && self.t_mask <= schedule.t_max()) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= t_stitch ({}) <= t_mask ({}) <= t_max ({})",
                self.t_stitch,
                self.t_mask,
                schedule.t_max()
            )));
        }
        if self.dilation_kernel == 0 || self.dilation_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "dilation_kernel {} must be odd and >= 1",
                self.dilation_kernel
            )));
        }
        if !(0.0..=1.0).contains(&self.binarize_quantile) {
            return Err(Error::InvalidConfig("binarize_quantile must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Everything produced after the initial reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub initial_heatmap: Heatmap,
    pub mask: BinaryMask,
    pub ph_reconstruction: Image,
    /// Residual map of the pseudo-healthy reconstruction before gating.
    pub residual_map: Heatmap,
    pub final_map: Heatmap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub input: Image,
    pub initial_reconstruction: Image,
    pub initial_heatmap: Heatmap,
    pub mask: BinaryMask,
    pub ph_reconstruction: Image,
    pub final_map: Heatmap,
    pub config: PipelineConfig,
    pub seed: u64,
}

/// Stages after the initial reconstruction `xhat0`. With `mask` given, it
/// replaces the binarized and dilated heatmap.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    x: &Image,
    xhat0: &Image,
    mask: Option<&BinaryMask>,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    perceptual: &dyn PerceptualDistance,
    rng: &mut RandomSource,
) -> Result<Refinement> {
    cfg.validate(schedule)?;
    let initial_heatmap = anomaly_heatmap(x, xhat0, perceptual)?;
    let mask = match mask {
        Some(m) => m.clone(),
        None => dilate(&binarize(&initial_heatmap, cfg.binarize_quantile)?, cfg.dilation_kernel)?,
    };
    let ph_reconstruction = stitch_resample(x, xhat0, &mask, denoiser, schedule, cfg, rng)?;
    let residual_map = anomaly_heatmap(x, &ph_reconstruction, perceptual)?;
    let final_map = if cfg.use_uncertainty {
        residual_map.product(&initial_heatmap)?
    } else {
        residual_map.clone()
    };
    Ok(Refinement {
        initial_heatmap,
        mask,
        ph_reconstruction,
        residual_map,
        final_map,
    })
}

/// Full pipeline for one image; a pure function of `(x, denoiser, cfg, seed)`.
pub fn detect(
    x: &Image,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    perceptual: &dyn PerceptualDistance,
    seed: u64,
) -> Result<DetectionResult> {
    detect_with_mask(x, None, denoiser, schedule, cfg, perceptual, seed)
}

/// As [`detect`], optionally forcing the stitching mask.
pub fn detect_with_mask(
    x: &Image,
    mask: Option<&BinaryMask>,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    perceptual: &dyn PerceptualDistance,
    seed: u64,
) -> Result<DetectionResult> {
    cfg.validate(schedule)?;
    let mut rng = RandomSource::from_seed(seed);
    let xhat0 = anoddpm_reconstruct(x, denoiser, schedule, cfg.t_mask, &mut rng)?;
    let r = refine(x, &xhat0, mask, denoiser, schedule, cfg, perceptual, &mut rng)?;
    Ok(DetectionResult {
        input: x.clone(),
        initial_reconstruction: xhat0,
        initial_heatmap: r.initial_heatmap,
        mask: r.mask,
        ph_reconstruction: r.ph_reconstruction,
        final_map: r.final_map,
        config: cfg.clone(),
        seed,
    })
}

#[derive(Serialize)]
struct DetectionMetadata<'a> {
    height: usize,
    width: usize,
    seed: u64,
    mask_pixels: usize,
    final_map_mean: f64,
    config: &'a PipelineConfig,
    files: [&'static str; 6],
}

impl DetectionResult {
    pub const FILES: [&'static str; 6] = [
        "input.img",
        "initial_reconstruction.img",
        "initial_heatmap.img",
        "mask.mask",
        "ph_reconstruction.img",
        "final_map.img",
    ];

    /// Writes every grid as a container file plus a PNG preview, and
    /// `metadata.json` with the configuration and seed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let images: [(&str, &Image); 5] = [
            ("input", &self.input),
            ("initial_reconstruction", &self.initial_reconstruction),
            ("initial_heatmap", self.initial_heatmap.as_image()),
            ("ph_reconstruction", &self.ph_reconstruction),
            ("final_map", self.final_map.as_image()),
        ];
        for (name, img) in images {
            io::write_image(img, &dir.join(format!("{name}.img")))?;
            io::write_png(img, 0.0, 1.0, &dir.join(format!("{name}.png")))?;
        }
        io::write_mask(&self.mask, &dir.join("mask.mask"))?;
        io::write_png(&self.mask.to_image(), 0.0, 1.0, &dir.join("mask.png"))?;
        let (height, width) = self.input.shape();
        let meta = DetectionMetadata {
            height,
            width,
            seed: self.seed,
            mask_pixels: self.mask.count(),
            final_map_mean: self.final_map.mean(),
            config: &self.config,
            files: Self::FILES,
        };
        let path = dir.join("metadata.json");
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
