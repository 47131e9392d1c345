use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::unet::{image_to_tensor, TinyUNet};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RandomSource;

/// Stream offset separating the split shuffle and the validation noise from
/// the per-epoch training streams.
const SPLIT_STREAM: u64 = u64::MAX;
const VAL_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be >= 0");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// First/second moment estimates, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Optimizer state persisted alongside parameters so runs can resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: u64,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(n_params: usize) -> Self {
        Self {
            epochs_done: 0,
            adam: AdamState::new(n_params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<LossRow>,
}

impl LossCurve {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{:.9e},{:.9e}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::HEADER) {
            return Err(Error::Serialization("loss curve header mismatch".into()));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Serialization(e.to_string()));
                if f.len() != 3 {
                    return Err(Error::Serialization(format!("bad loss row {l:?}")));
                }
                Ok(LossRow {
                    epoch: f[0].parse().map_err(|e: std::num::ParseIntError| Error::Serialization(e.to_string()))?,
                    train_loss: parse(f[1])?,
                    val_loss: parse(f[2])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn last_val(&self) -> Option<f64> {
        self.rows.last().map(|r| r.val_loss)
    }

    /// Trailing moving average of the validation loss.
    pub fn smoothed_val(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.rows.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let span = &self.rows[lo..=i];
                span.iter().map(|r| r.val_loss).sum::<f64>() / span.len() as f64
            })
            .collect()
    }
}

fn check_images(images: &[Image]) -> Result<(usize, usize)> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    for img in images {
        first.ensure_same_shape(img)?;
    }
    Ok(first.shape())
}

/// One noised training example.
struct Draw {
    t: usize,
    x_t: Tensor<f32>,
    eps: Vec<f32>,
}

fn draw(images: &[Image], index: usize, schedule: &NoiseSchedule, rng: &mut RandomSource) -> Result<Draw> {
    let t = rng.int_inclusive(1, schedule.t_max());
    let (x_t, eps) = schedule.forward_to(&images[index], t, rng)?;
    Ok(Draw {
        t,
        x_t: image_to_tensor(&x_t),
        eps: eps.data().iter().map(|&v| v as f32).collect(),
    })
}

/// Mean simple loss over `images` with noise drawn from a fixed stream.
pub fn validation_loss(
    net: &TinyUNet<f32>,
    images: &[Image],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    if images.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = RandomSource::derived(seed, VAL_STREAM);
    let draws: Vec<Draw> = (0..images.len())
        .map(|i| draw(images, i, schedule, &mut rng))
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = draws
        .into_par_iter()
        .map(|d| {
            let y = net.predict_tensor(d.x_t, d.t)?;
            let n = y.data.len() as f64;
            Ok(y.data.iter().zip(&d.eps).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / n)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Loss of the all-zero predictor on the same draws as [`validation_loss`].
pub fn zero_predictor_loss(images: &[Image], schedule: &NoiseSchedule, seed: u64) -> Result<f64> {
    if images.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = RandomSource::derived(seed, VAL_STREAM);
    let mut total = 0.0;
    for i in 0..images.len() {
        let d = draw(images, i, schedule, &mut rng)?;
        total += d.eps.iter().map(|&e| (e as f64).powi(2)).sum::<f64>() / d.eps.len() as f64;
    }
    Ok(total / images.len() as f64)
}

fn adam_update(net: &mut TinyUNet<f32>, state: &mut AdamState, grads: &[f32], cfg: &TrainConfig) {
    state.step += 1;
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let lr = cfg.learning_rate;
    for (((p, m), v), &g) in net
        .params_mut()
        .iter_mut()
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
        .zip(grads)
    {
        let g = g as f64;
        let mn = b1 * *m as f64 + (1.0 - b1) * g;
        let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
        *m = mn as f32;
        *v = vn as f32;
        let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + cfg.adam_eps);
        *p = (*p as f64 - update) as f32;
    }
}

/// Trains from `state` up to `cfg.epochs` total epochs. Epoch `e` draws its
/// shuffle and noise from `RandomSource::derived(cfg.seed, e)`, so a run
/// split across several calls matches an uninterrupted one. `on_epoch` sees
/// the network and state after every completed epoch.
pub fn train_with_validation(
    mut net: TinyUNet<f32>,
    mut state: TrainState,
    train_images: &[Image],
    val_images: &[Image],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TinyUNet<f32>, &TrainState, &LossRow) -> Result<()>,
) -> Result<(TinyUNet<f32>, TrainState, LossCurve)> {
    cfg.validate()?;
    let (h, w) = check_images(train_images)?;
    if let Some(v) = val_images.first() {
        if v.shape() != (h, w) {
            return Err(Error::ShapeMismatch { left: (h, w), right: v.shape() });
        }
        check_images(val_images)?;
    }
    net.arch().check_input(h, w)?;
    if net.arch().t_max < schedule.t_max() {
        return Err(Error::InvalidConfig(format!(
            "network embeds {} timesteps but the schedule has {}",
            net.arch().t_max,
            schedule.t_max()
        )));
    }
    if state.adam.m.len() != net.param_count() || state.adam.v.len() != net.param_count() {
        return Err(Error::InvalidConfig("optimizer state does not match the network".into()));
    }
    let n_params = net.param_count();
    let mut curve = LossCurve::default();
    for epoch in state.epochs_done as usize..cfg.epochs {
        let mut rng = RandomSource::derived(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train_images.len()).collect();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let draws: Vec<Draw> = batch
                .iter()
                .map(|&i| draw(train_images, i, schedule, &mut rng))
                .collect::<Result<_>>()?;
            let model = &net;
            let per_sample: Vec<(f64, Vec<f32>)> = draws
                .into_par_iter()
                .map(|d| {
                    let mut g = vec![0.0f32; n_params];
                    let loss = model.loss_and_grad(d.x_t, &d.eps, d.t, &mut g)?;
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            // Reduce in batch order so the sum does not depend on scheduling.
            let scale = 1.0 / per_sample.len() as f64;
            let mut grads = vec![0.0f64; n_params];
            for (loss, g) in &per_sample {
                epoch_loss += loss;
                for (a, &b) in grads.iter_mut().zip(g) {
                    *a += b as f64;
                }
            }
            for a in &mut grads {
                *a *= scale;
            }
            if cfg.grad_clip > 0.0 {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    for a in &mut grads {
                        *a *= s;
                    }
                }
            }
            let grads: Vec<f32> = grads.iter().map(|&g| g as f32).collect();
            adam_update(&mut net, &mut state.adam, &grads, cfg);
        }
        if !net.is_finite() {
            return Err(Error::InvalidConfig(format!("training diverged in epoch {epoch}")));
        }
        state.epochs_done = epoch as u64 + 1;
        let row = LossRow {
            epoch: epoch + 1,
            train_loss: epoch_loss / train_images.len() as f64,
            val_loss: validation_loss(&net, val_images, schedule, cfg.seed)?,
        };
        curve.rows.push(row);
        on_epoch(&net, &state, &row)?;
    }
    Ok((net, state, curve))
}

/// Splits `images` into train/validation by `cfg.val_fraction` (seeded
/// shuffle) and trains from scratch.
pub fn train(
    net: TinyUNet<f32>,
    images: &[Image],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(TinyUNet<f32>, LossCurve)> {
    cfg.validate()?;
    check_images(images)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    RandomSource::derived(cfg.seed, SPLIT_STREAM).shuffle(&mut order);
    let n_val = ((images.len() as f64 * cfg.val_fraction).round() as usize).min(images.len() - 1);
    let val: Vec<Image> = order[..n_val].iter().map(|&i| images[i].clone()).collect();
    let tr: Vec<Image> = order[n_val..].iter().map(|&i| images[i].clone()).collect();
    let state = TrainState::new(net.param_count());
    let (net, _, curve) = train_with_validation(net, state, &tr, &val, schedule, cfg, |_, _, _| Ok(()))?;
    Ok((net, curve))
}
