use super::Denoiser;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Image;

/// Exact `E[ε | x_t]` for data drawn from `N(mu0, sigma0_sq I)`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    mu0: Image,
    sigma0_sq: f64,
    schedule: NoiseSchedule,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mu0: Image, sigma0_sq: f64, schedule: &NoiseSchedule) -> Result<Self> {
        if !(sigma0_sq >= 0.0) || !sigma0_sq.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma0_sq must be finite and >= 0, got {sigma0_sq}")));
        }
        Ok(Self {
            mu0,
            sigma0_sq,
            schedule: schedule.clone(),
        })
    }

    /// Per-pixel mean and pooled per-pixel variance of `images`.
    pub fn fit(images: &[Image], schedule: &NoiseSchedule) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyDataset)?;
        let (h, w) = first.shape();
        let n = images.len() as f64;
        let mut mean = vec![0.0; h * w];
        for img in images {
            first.ensure_same_shape(img)?;
            for (m, v) in mean.iter_mut().zip(img.data()) {
                *m += v / n;
            }
        }
        let mut var = 0.0;
        for img in images {
            for (m, v) in mean.iter().zip(img.data()) {
                var += (v - m) * (v - m);
            }
        }
        var /= n * (h * w) as f64;
        Self::new(Image::new(h, w, mean)?, var, schedule)
    }

    pub fn mu0(&self) -> &Image {
        &self.mu0
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// `E[x0 | x_t] = (sqrt(ᾱ) σ0² x_t + (1 - ᾱ) μ0) / (ᾱ σ0² + 1 - ᾱ)`.
    pub fn posterior_mean_x0(&self, x_t: &Image, t: usize) -> Result<Image> {
        self.schedule.check_t(t)?;
        let ab = self.schedule.alpha_bar(t);
        let s2 = self.sigma0_sq;
        let denom = ab * s2 + 1.0 - ab;
        let a = ab.sqrt() * s2 / denom;
        let b = (1.0 - ab) / denom;
        x_t.zip_map(&self.mu0, |x, m| a * x + b * m)
    }

    /// Posterior variance of each `x0` pixel given `x_t`.
    pub fn posterior_var_x0(&self, t: usize) -> Result<f64> {
        self.schedule.check_t(t)?;
        let ab = self.schedule.alpha_bar(t);
        let s2 = self.sigma0_sq;
        Ok(s2 * (1.0 - ab) / (ab * s2 + 1.0 - ab))
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict_eps(&self, x_t: &Image, t: usize) -> Result<Image> {
        let x0 = self.posterior_mean_x0(x_t, t)?;
        let ab = self.schedule.alpha_bar(t);
        let sa = ab.sqrt();
        let inv = 1.0 / (1.0 - ab).sqrt();
        x_t.zip_map(&x0, |x, m| (x - sa * m) * inv)
    }

    fn t_max(&self) -> Option<usize> {
        Some(self.schedule.t_max())
    }
}
