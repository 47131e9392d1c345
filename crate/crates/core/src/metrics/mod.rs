//! Reconstruction-fidelity and localization metrics.

mod perceptual;
mod pr;
mod report;
mod ssim;

pub use perceptual::{PerceptualDistance, PerceptualSurrogate};
pub use pr::{auprc, dice, max_dice};
pub use report::{AggregateRow, EvalRecord, EvalReport, Pooling};
pub use ssim::{ssim, ssim_map};

use crate::error::Result;
use crate::image::{BinaryMask, Heatmap, Image};

/// Pixel-mean squared difference.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// AUPRC and max-Dice over the concatenation of several score/label pairs.
pub fn pooled_localization(pairs: &[(&Heatmap, &BinaryMask)]) -> Result<(f64, f64)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (s, g) in pairs {
        crate::image::check_shapes(s.shape(), g.shape())?;
        scores.extend_from_slice(s.data());
        labels.extend_from_slice(g.data());
    }
    if scores.is_empty() {
        return Err(crate::error::Error::EmptyDataset);
    }
    let n = scores.len();
    let s = Heatmap::new(Image::new(1, n, scores)?)?;
    let g = BinaryMask::new(1, n, labels)?;
    Ok((auprc(&s, &g)?, max_dice(&s, &g)?))
}
