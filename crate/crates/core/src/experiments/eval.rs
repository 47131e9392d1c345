//! Per-image evaluation of the single-level baseline sweep and of the full
//! pipeline with its ablations.

use rayon::prelude::*;

use crate::denoiser::Denoiser;
use crate::diffusion::NoiseSchedule;
use crate::error::Result;
use crate::image::{BinaryMask, Heatmap, Image};
use crate::metrics::{self, EvalRecord, PerceptualDistance};
use crate::pipeline::{anoddpm_reconstruct, anomaly_heatmap, boundary_discontinuity, refine, PipelineConfig, Refinement};
use crate::rng::{derive_seed, fnv1a64, RandomSource};
use crate::synthdata::{DatasetEntry, Split, Stratum};

pub const AUTODDPM: &str = "autoddpm";
pub const AUTODDPM_NO_UNCERTAINTY: &str = "autoddpm_no_uncertainty";
pub const AUTODDPM_NO_RESAMPLE: &str = "autoddpm_no_resample";

pub fn anoddpm_method(t: usize) -> String {
    format!("anoddpm_t{t:03}")
}

/// Noise level encoded in a baseline method name.
pub fn anoddpm_level(method: &str) -> Option<usize> {
    method.strip_prefix("anoddpm_t")?.parse().ok()
}

#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: String,
    pub image: Image,
    pub gt_mask: BinaryMask,
    pub lesion_pixels: usize,
    pub stratum: Option<Stratum>,
}

impl EvalCase {
    pub fn from_entry(e: &DatasetEntry) -> Self {
        Self {
            id: e.id.clone(),
            image: e.sample.image.clone(),
            gt_mask: e.sample.gt_mask.clone(),
            lesion_pixels: e.sample.lesion_pixels,
            stratum: e.sample.stratum,
        }
    }

    pub fn is_anomalous(&self) -> bool {
        self.lesion_pixels > 0
    }
}

/// Test cases in id order, healthy and anomalous capped separately (0 = all).
pub fn test_cases(entries: &[DatasetEntry], max_healthy: usize, max_anomalous: usize) -> Vec<EvalCase> {
    let mut test: Vec<&DatasetEntry> = entries.iter().filter(|e| e.split == Split::Test).collect();
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let cap = |n: usize| if n == 0 { usize::MAX } else { n };
    let healthy = test.iter().filter(|e| !e.sample.is_anomalous()).take(cap(max_healthy));
    let anomalous = test.iter().filter(|e| e.sample.is_anomalous()).take(cap(max_anomalous));
    healthy.chain(anomalous).map(|e| EvalCase::from_entry(e)).collect()
}

/// Which methods to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPlan {
    pub noise_levels: Vec<usize>,
    pub full_pipeline: bool,
    /// Also report the pipeline without uncertainty gating and without re-sampling.
    pub ablations: bool,
    pub eval_seeds: usize,
    pub master_seed: u64,
}

/// Seed of one `(image, replicate)` pair; independent of evaluation order.
pub fn case_seed(master: u64, replicate: usize, id: &str) -> u64 {
    derive_seed(derive_seed(master, replicate as u64), fnv1a64(id.as_bytes()))
}

fn record(
    case: &EvalCase,
    method: String,
    replicate: usize,
    recon: &Image,
    map: &Heatmap,
    perceptual: &dyn PerceptualDistance,
    boundary_energy: Option<f64>,
) -> Result<EvalRecord> {
    let (auprc, max_dice) = if case.is_anomalous() {
        (
            Some(metrics::auprc(map, &case.gt_mask)?),
            Some(metrics::max_dice(map, &case.gt_mask)?),
        )
    } else {
        (None, None)
    };
    Ok(EvalRecord {
        image_id: case.id.clone(),
        method,
        seed: replicate as u64,
        mse: metrics::mse(&case.image, recon)?,
        ssim: metrics::ssim(&case.image, recon)?,
        perceptual: perceptual.scalar(&case.image, recon)?,
        auprc,
        max_dice,
        lesion_pixels: case.lesion_pixels,
        stratum: case.stratum,
        boundary_energy,
    })
}

/// Records for one case and replicate. The baseline at level `t` samples from
/// `derived(case_seed, t)`; the full pipeline starts from the stream of
/// `t_mask`, so its first stage is exactly the baseline at that level.
pub fn evaluate_case(
    case: &EvalCase,
    replicate: usize,
    plan: &EvalPlan,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    perceptual: &dyn PerceptualDistance,
) -> Result<Vec<EvalRecord>> {
    let seed = case_seed(plan.master_seed, replicate, &case.id);
    let x = &case.image;
    let mut out = Vec::new();
    let mut stage_one: Option<(Image, RandomSource)> = None;
    for &t in &plan.noise_levels {
        let mut rng = RandomSource::derived(seed, t as u64);
        let recon = anoddpm_reconstruct(x, denoiser, schedule, t, &mut rng)?;
        let map = anomaly_heatmap(x, &recon, perceptual)?;
        out.push(record(case, anoddpm_method(t), replicate, &recon, &map, perceptual, None)?);
        if t == cfg.t_mask {
            stage_one = Some((recon, rng));
        }
    }
    if !plan.full_pipeline {
        return Ok(out);
    }
    let (xhat0, rng) = match stage_one {
        Some(s) => s,
        None => {
            let mut rng = RandomSource::derived(seed, cfg.t_mask as u64);
            (anoddpm_reconstruct(x, denoiser, schedule, cfg.t_mask, &mut rng)?, rng)
        }
    };
    let full = refine(x, &xhat0, None, denoiser, schedule, cfg, perceptual, &mut rng.clone())?;
    let energy = boundary_discontinuity(&full.ph_reconstruction, &full.mask)?;
    out.push(record(case, AUTODDPM.into(), replicate, &full.ph_reconstruction, &full.final_map, perceptual, Some(energy))?);
    if plan.ablations {
        out.push(record(
            case,
            AUTODDPM_NO_UNCERTAINTY.into(),
            replicate,
            &full.ph_reconstruction,
            &full.residual_map,
            perceptual,
            Some(energy),
        )?);
        let naive_cfg = PipelineConfig {
            n_resample: 0,
            ..cfg.clone()
        };
        let naive = refine(x, &xhat0, Some(&full.mask), denoiser, schedule, &naive_cfg, perceptual, &mut rng.clone())?;
        let naive_energy = boundary_discontinuity(&naive.ph_reconstruction, &naive.mask)?;
        out.push(record(
            case,
            AUTODDPM_NO_RESAMPLE.into(),
            replicate,
            &naive.ph_reconstruction,
            &naive.final_map,
            perceptual,
            Some(naive_energy),
        )?);
    }
    Ok(out)
}

/// Stage-one reconstruction plus the full and non-re-sampled refinements of
/// one case, drawn from the same streams as [`evaluate_case`].
pub fn case_artifacts(
    case: &EvalCase,
    replicate: usize,
    master_seed: u64,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    perceptual: &dyn PerceptualDistance,
) -> Result<(Image, Refinement, Refinement)> {
    let seed = case_seed(master_seed, replicate, &case.id);
    let mut rng = RandomSource::derived(seed, cfg.t_mask as u64);
    let xhat0 = anoddpm_reconstruct(&case.image, denoiser, schedule, cfg.t_mask, &mut rng)?;
    let full = refine(&case.image, &xhat0, None, denoiser, schedule, cfg, perceptual, &mut rng.clone())?;
    let naive_cfg = PipelineConfig {
        n_resample: 0,
        ..cfg.clone()
    };
    let naive = refine(&case.image, &xhat0, Some(&full.mask), denoiser, schedule, &naive_cfg, perceptual, &mut rng)?;
    Ok((xhat0, full, naive))
}

/// Evaluates every `(case, replicate)` pair in parallel; the result order
/// does not depend on scheduling.
pub fn evaluate(
    cases: &[EvalCase],
    plan: &EvalPlan,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    perceptual: &dyn PerceptualDistance,
) -> Result<Vec<EvalRecord>> {
    let jobs: Vec<(usize, usize)> = (0..plan.eval_seeds)
        .flat_map(|r| (0..cases.len()).map(move |c| (c, r)))
        .collect();
    let nested: Vec<Vec<EvalRecord>> = jobs
        .into_par_iter()
        .map(|(c, r)| evaluate_case(&cases[c], r, plan, denoiser, schedule, cfg, perceptual))
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}
