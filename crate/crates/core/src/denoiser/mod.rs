//! Noise predictors: a trainable U-Net and an exact oracle for Gaussian data.

mod analytic;
mod checkpoint;
mod layers;
mod tensor;
mod train;
mod unet;

pub use analytic::AnalyticGaussianDenoiser;
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::{Scalar, Tensor};
pub use train::{
    train, train_with_validation, validation_loss, zero_predictor_loss, AdamState, LossCurve, LossRow, TrainConfig, TrainState};
pub use unet::{param_count, ArchConfig, ParamTensor, TinyUNet};

use crate::error::Result;
use crate::image::Image;

/// Anything that predicts the noise component of `x_t` at timestep `t`.
/// Implementations are read-only and safe to share across threads.
pub trait Denoiser: Send + Sync {
    fn predict_eps(&self, x_t: &Image, t: usize) -> Result<Image>;

    /// Largest timestep the predictor accepts, if it is bounded.
    fn t_max(&self) -> Option<usize> {
        None
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_eps(&self, x_t: &Image, t: usize) -> Result<Image> {
        (**self).predict_eps(x_t, t)
    }

    fn t_max(&self) -> Option<usize> {
        (**self).t_max()
    }
}

/// Predicts zero noise everywhere; the baseline a trained model must beat.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_eps(&self, x_t: &Image, _t: usize) -> Result<Image> {
        Ok(Image::zeros(x_t.height(), x_t.width()))
    }
}
