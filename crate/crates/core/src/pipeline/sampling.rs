use crate::denoiser::Denoiser;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::rng::RandomSource;

use super::PipelineConfig;

pub(crate) fn check_unit_range(x: &Image) -> Result<()> {
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidImage(format!("intensity {v} outside [0, 1]")));
    }
    Ok(())
}

fn check_denoiser(denoiser: &dyn Denoiser, t: usize) -> Result<()> {
    match denoiser.t_max() {
        Some(t_max) if t > t_max => Err(Error::TimestepOutOfRange { t, t_max }),
        _ => Ok(()),
    }
}

/// `m ? a : b` per pixel; unmasked pixels are copied bit for bit.
fn select(m: &BinaryMask, a: &Image, b: &Image) -> Image {
    let (h, w) = b.shape();
    let data = m
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&on, (&av, &bv))| if on == 1 { av } else { bv })
        .collect();
    Image::from_vec_unchecked(h, w, data)
}

/// Runs the reverse chain from `x_t` at level `t` down to `x_0`.
pub fn reverse_chain(
    x_t: Image,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rng: &mut RandomSource,
) -> Result<Image> {
    schedule.check_t(t)?;
    check_denoiser(denoiser, t)?;
    let mut x = x_t;
    for s in (1..=t).rev() {
        let eps = denoiser.predict_eps(&x, s)?;
        x = schedule.reverse_step(&x, s, &eps, rng)?;
    }
    Ok(x)
}

/// Noises `x` to `t_start` and denoises back: the plain reconstruction used
/// both as the first stage and as the single-level baseline.
pub fn anoddpm_reconstruct(
    x: &Image,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    t_start: usize,
    rng: &mut RandomSource,
) -> Result<Image> {
    check_unit_range(x)?;
    schedule.check_t(t_start)?;
    check_denoiser(denoiser, t_start)?;
    let (x_t, _) = schedule.forward_to(x, t_start, rng)?;
    Ok(reverse_chain(x_t, t_start, denoiser, schedule, rng)?.clamp01())
}

/// Masked denoising from `t_stitch` with re-sampling. Context noise comes
/// from a stream split off `rng` first; the masked chain then continues on
/// `rng` itself. Pixels outside `m` are returned equal to `x`.
pub fn stitch_resample(
    x: &Image,
    xhat0: &Image,
    m: &BinaryMask,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PipelineConfig,
    rng: &mut RandomSource,
) -> Result<Image> {
    cfg.validate(schedule)?;
    check_unit_range(x)?;
    x.ensure_same_shape(xhat0)?;
    if m.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            left: x.shape(),
            right: m.shape(),
        });
    }
    check_denoiser(denoiser, cfg.t_stitch)?;
    if m.count() == 0 {
        return Ok(x.clone());
    }
    let mut ctx_rng = RandomSource::from_seed(rng.next_u64());
    let stitched = select(m, xhat0, x);
    let (mut x_t, _) = schedule.forward_to(&stitched, cfg.t_stitch, rng)?;
    for t in (1..=cfg.t_stitch).rev() {
        // At t = 1 the reverse step is deterministic, so repeating it is a no-op.
        let passes = if t > 1 { cfg.n_resample + 1 } else { 1 };
        for pass in 0..passes {
            let context = if t > 1 {
                schedule.forward_to(x, t - 1, &mut ctx_rng)?.0
            } else {
                x.clone()
            };
            let eps = denoiser.predict_eps(&x_t, t)?;
            let ph = schedule.reverse_step(&x_t, t, &eps, rng)?;
            let combined = select(m, &ph, &context);
            x_t = if pass + 1 < passes {
                schedule.forward_step(&combined, t, rng)?
            } else {
                combined
            };
        }
    }
    Ok(select(m, &x_t.clamp01(), x))
}
