//! Training-free stand-in for a learned perceptual distance.
//!
//! At scales 1, 1/2 and 1/4 (2x2 average pooling) two maps are computed:
//! `1 - cs`, where `cs` is the contrast-structure factor of SSIM, and the
//! normalized gradient-magnitude difference `|g_a - g_b| / (g_a + g_b + c)`.
//! Each map is clipped to `[0, 1]`, upsampled by nearest neighbour, and the
//! six maps are averaged.

use crate::error::Result;
use crate::image::{Heatmap, Image};

use super::ssim::contrast_structure_map;

/// Per-pixel and scalar perceptual distance. Implementations must return zero
/// on identical inputs, be symmetric and non-negative.
pub trait PerceptualDistance: Send + Sync {
    fn per_pixel(&self, a: &Image, b: &Image) -> Result<Heatmap>;

    fn scalar(&self, a: &Image, b: &Image) -> Result<f64> {
        Ok(self.per_pixel(a, b)?.mean())
    }
}

/// Gradient-magnitude stabilizer, in intensity units per pixel.
const GRAD_EPS: f64 = 1e-2;

#[derive(Debug, Clone, Copy)]
pub struct PerceptualSurrogate {
    pub scales: usize,
}

impl Default for PerceptualSurrogate {
    fn default() -> Self {
        Self { scales: 3 }
    }
}

fn avg_pool2(img: &Image) -> Image {
    let (h, w) = img.shape();
    let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
    Image::from_fn(oh, ow, |r, c| {
        let r0 = (2 * r).min(h - 1);
        let r1 = (2 * r + 1).min(h - 1);
        let c0 = (2 * c).min(w - 1);
        let c1 = (2 * c + 1).min(w - 1);
        (img.get(r0, c0) + img.get(r0, c1) + img.get(r1, c0) + img.get(r1, c1)) / 4.0
    })
}

fn gradient_magnitude(img: &Image) -> Vec<f64> {
    let (h, w) = img.shape();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let gx = (img.get(r, (c + 1).min(w - 1)) - img.get(r, c.saturating_sub(1))) / 2.0;
            let gy = (img.get((r + 1).min(h - 1), c) - img.get(r.saturating_sub(1), c)) / 2.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

impl PerceptualSurrogate {
    fn scale_maps(a: &Image, b: &Image) -> [Vec<f64>; 2] {
        let structural = contrast_structure_map(a, b)
            .into_iter()
            .map(|cs| (1.0 - cs).clamp(0.0, 1.0))
            .collect();
        let ga = gradient_magnitude(a);
        let gb = gradient_magnitude(b);
        let gradient = ga
            .iter()
            .zip(&gb)
            .map(|(x, y)| ((x - y).abs() / (x + y + GRAD_EPS)).clamp(0.0, 1.0))
            .collect();
        [structural, gradient]
    }
}

impl PerceptualDistance for PerceptualSurrogate {
    fn per_pixel(&self, a: &Image, b: &Image) -> Result<Heatmap> {
        a.ensure_same_shape(b)?;
        let (h, w) = a.shape();
        let mut acc = vec![0.0; h * w];
        let mut maps = 0usize;
        let (mut sa, mut sb) = (a.clone(), b.clone());
        for level in 0..self.scales.max(1) {
            if level > 0 {
                sa = avg_pool2(&sa);
                sb = avg_pool2(&sb);
            }
            let (sh, sw) = sa.shape();
            for map in Self::scale_maps(&sa, &sb) {
                for r in 0..h {
                    let sr = (r * sh / h).min(sh - 1);
                    for c in 0..w {
                        let sc = (c * sw / w).min(sw - 1);
                        acc[r * w + c] += map[sr * sw + sc];
                    }
                }
                maps += 1;
            }
        }
        let scale = 1.0 / maps as f64;
        let data = acc.into_iter().map(|v| (v * scale).clamp(0.0, 1.0)).collect();
        Ok(Heatmap::from_image_unchecked(Image::from_vec_unchecked(h, w, data)))
    }
}
