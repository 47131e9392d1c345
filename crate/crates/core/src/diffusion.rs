//! Linear variance schedule and the Gaussian forward/reverse kernels.
//!
//! Timesteps are 1-based: `t` ranges over `1..=t_max`, and `alpha_bar(0)` is
//! defined as 1. Schedule tables are computed in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RandomSource;

pub const DEFAULT_T_MAX: usize = 1000;
pub const DEFAULT_BETA_1: f64 = 1e-4;
pub const DEFAULT_BETA_T: f64 = 0.02;

/// Schedule endpoints as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_max: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            beta_1: DEFAULT_BETA_1,
            beta_t: DEFAULT_BETA_T,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_max, self.beta_1, self.beta_t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl NoiseSchedule {
    /// β increases linearly from `beta_1` at `t = 1` to `beta_t` at `t = t_max`.
    pub fn linear(t_max: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::InvalidSchedule(format!("t_max must be >= 2, got {t_max}")));
        }
        if !(beta_1.is_finite() && beta_t.is_finite()) || beta_1 <= 0.0 || beta_t >= 1.0 {
            return Err(Error::InvalidSchedule(format!(
                "beta endpoints must satisfy 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_t}"
            )));
        }
        if beta_1 > beta_t {
            return Err(Error::InvalidSchedule(format!(
                "beta_1 ({beta_1}) exceeds beta_T ({beta_t})"
            )));
        }
        let span = (t_max - 1) as f64;
        let beta: Vec<f64> = (0..t_max)
            .map(|i| {
                if i + 1 == t_max {
                    beta_t
                } else {
                    beta_1 + (beta_t - beta_1) * (i as f64 / span)
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_max);
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_var = (0..t_max)
            .map(|i| {
                if i == 0 {
                    beta[0]
                } else {
                    (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i]
                }
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            posterior_var,
        })
    }

    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(Error::TimestepOutOfRange {
                t,
                t_max: self.t_max(),
            });
        }
        Ok(())
    }

    /// Panics when `t` is outside `1..=t_max`; use [`check_t`](Self::check_t) first.
    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of α up to `t`; `alpha_bar(0) == 1`.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    #[inline]
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_var
    }

    /// One forward step: `x_t ~ N(sqrt(1 - β_t) x_{t-1}, β_t I)`.
    pub fn forward_step(&self, x_prev: &Image, t: usize, rng: &mut RandomSource) -> Result<Image> {
        self.check_t(t)?;
        let keep = (1.0 - self.beta(t)).sqrt();
        let sd = self.beta(t).sqrt();
        Ok(x_prev.map_with_rng(rng, |v, z| keep * v + sd * z))
    }

    /// Closed-form jump `x_t ~ N(sqrt(ᾱ_t) x0, (1 - ᾱ_t) I)`. Returns `(x_t, ε)`.
    pub fn forward_to(&self, x0: &Image, t: usize, rng: &mut RandomSource) -> Result<(Image, Image)> {
        self.check_t(t)?;
        let (h, w) = x0.shape();
        let mut eps = Vec::with_capacity(x0.len());
        for _ in 0..x0.len() {
            eps.push(rng.normal());
        }
        let eps = Image::from_vec_unchecked(h, w, eps);
        let xt = self.noise_with(x0, t, &eps)?;
        Ok((xt, eps))
    }

    /// `sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) ε` for a given noise realization.
    pub fn noise_with(&self, x0: &Image, t: usize, eps: &Image) -> Result<Image> {
        self.check_t(t)?;
        let ab = self.alpha_bar(t);
        let (s0, s1) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(eps, |x, e| s0 * x + s1 * e)
    }

    /// Mean of the reverse kernel from an ε estimate:
    /// `(x_t - β_t / sqrt(1 - ᾱ_t) ε̂) / sqrt(α_t)`.
    pub fn predict_mu(&self, x_t: &Image, t: usize, eps_hat: &Image) -> Result<Image> {
        self.check_t(t)?;
        let coef = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / self.alpha(t).sqrt();
        x_t.zip_map(eps_hat, |x, e| inv_sqrt_alpha * (x - coef * e))
    }

    /// Samples `x_{t-1} ~ N(μ, posterior_var_t I)`; at `t = 1` the mean is
    /// returned without noise.
    pub fn reverse_step(
        &self,
        x_t: &Image,
        t: usize,
        eps_hat: &Image,
        rng: &mut RandomSource,
    ) -> Result<Image> {
        let mut mu = self.predict_mu(x_t, t, eps_hat)?;
        if t > 1 {
            let sd = self.posterior_var(t).sqrt();
            for v in mu.data_mut() {
                *v += sd * rng.normal();
            }
        }
        Ok(mu)
    }
}

/// Pixel-mean squared error between the true and predicted noise.
pub fn simple_loss(eps: &Image, eps_hat: &Image) -> Result<f64> {
    eps.ensure_same_shape(eps_hat)?;
    let sum: f64 = eps
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / eps.len() as f64)
}

impl Image {
    fn map_with_rng(&self, rng: &mut RandomSource, f: impl Fn(f64, f64) -> f64) -> Image {
        let data = self.data().iter().map(|&v| f(v, rng.normal())).collect();
        Image::from_vec_unchecked(self.height(), self.width(), data)
    }
}
