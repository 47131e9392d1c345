//! Gaussian-window SSIM (11x11, σ = 1.5, K1 = 0.01, K2 = 0.03, L = 1).

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 1.0;

pub(crate) fn c1() -> f64 {
    (K1 * DYNAMIC_RANGE).powi(2)
}

pub(crate) fn c2() -> f64 {
    (K2 * DYNAMIC_RANGE).powi(2)
}

/// Normalized 1-D Gaussian taps.
pub(crate) fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum Border {
    /// Output shrinks by `window - 1` on each axis.
    Valid,
    /// Output keeps the input size; out-of-range reads clamp to the edge.
    Replicate,
}

/// Separable filtering of a row-major grid.
pub(crate) fn filter2d(
    data: &[f64],
    h: usize,
    w: usize,
    taps: &[f64],
    border: Border,
) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let half = k / 2;
    let (oh, ow) = match border {
        Border::Valid => (h + 1 - k, w + 1 - k),
        Border::Replicate => (h, w),
    };
    // Horizontal pass over all input rows.
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            let mut acc = 0.0;
            for (j, &tap) in taps.iter().enumerate() {
                let src = match border {
                    Border::Valid => c + j,
                    Border::Replicate => (c + j).saturating_sub(half).min(w - 1),
                };
                acc += tap * row[src];
            }
            tmp[r * ow + c] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, &tap) in taps.iter().enumerate() {
                let src = match border {
                    Border::Valid => r + i,
                    Border::Replicate => (r + i).saturating_sub(half).min(h - 1),
                };
                acc += tap * tmp[src * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    (out, oh, ow)
}

/// Local statistics needed by both the full SSIM and the contrast-structure term.
pub(crate) struct LocalStats {
    pub mu_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub var_a: Vec<f64>,
    pub var_b: Vec<f64>,
    pub cov: Vec<f64>,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn local_stats(a: &Image, b: &Image, border: Border) -> LocalStats {
    let (h, w) = a.shape();
    let taps = gaussian_taps(WINDOW, SIGMA);
    let aa: Vec<f64> = a.data().iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data().iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (mu_a, oh, ow) = filter2d(a.data(), h, w, &taps, border);
    let (mu_b, _, _) = filter2d(b.data(), h, w, &taps, border);
    let (e_aa, _, _) = filter2d(&aa, h, w, &taps, border);
    let (e_bb, _, _) = filter2d(&bb, h, w, &taps, border);
    let (e_ab, _, _) = filter2d(&ab, h, w, &taps, border);
    let var_a = e_aa.iter().zip(&mu_a).map(|(e, m)| e - m * m).collect();
    let var_b = e_bb.iter().zip(&mu_b).map(|(e, m)| e - m * m).collect();
    let cov = e_ab
        .iter()
        .zip(mu_a.iter().zip(&mu_b))
        .map(|(e, (ma, mb))| e - ma * mb)
        .collect();
    LocalStats {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
        h: oh,
        w: ow,
    }
}

/// Local SSIM over every fully-contained 11x11 window.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Image> {
    a.ensure_same_shape(b)?;
    let (h, w) = a.shape();
    if h < WINDOW || w < WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {WINDOW}x{WINDOW}, got {h}x{w}"
        )));
    }
    let s = local_stats(a, b, Border::Valid);
    let (c1, c2) = (c1(), c2());
    let data = (0..s.mu_a.len())
        .map(|i| {
            let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
            let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            let cs = (2.0 * s.cov[i] + c2) / (s.var_a[i] + s.var_b[i] + c2);
            lum * cs
        })
        .collect();
    Ok(Image::from_vec_unchecked(s.h, s.w, data))
}

/// Mean SSIM.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_map(a, b)?.mean())
}

/// Contrast-structure factor of SSIM at every pixel ("same" output size,
/// replicated borders). Intensity offsets leave it unchanged.
pub(crate) fn contrast_structure_map(a: &Image, b: &Image) -> Vec<f64> {
    let s = local_stats(a, b, Border::Replicate);
    let c2 = c2();
    (0..s.cov.len())
        .map(|i| (2.0 * s.cov[i] + c2) / (s.var_a[i] + s.var_b[i] + c2))
        .collect()
}
