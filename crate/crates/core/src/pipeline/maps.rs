use crate::error::{Error, Result};
use crate::image::{BinaryMask, Heatmap, Image};
use crate::metrics::PerceptualDistance;
use crate::stats;

/// Divides by the `p`-th percentile and clips to `[0, 1]`; a zero percentile
/// gives an all-zero map.
pub fn norm_p(r: &Heatmap, p: f64) -> Result<Heatmap> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::InvalidConfig(format!("percentile {p} must lie in (0, 100)")));
    }
    let (h, w) = r.shape();
    let q = stats::percentile(r.data(), p).unwrap_or(0.0);
    if q <= 0.0 {
        return Ok(Heatmap::zeros(h, w));
    }
    let data = r.data().iter().map(|v| (v / q).clamp(0.0, 1.0)).collect();
    Ok(Heatmap::from_image_unchecked(Image::from_vec_unchecked(h, w, data)))
}

/// Normalized absolute residual gated by the perceptual distance map.
pub fn anomaly_heatmap(x: &Image, xhat: &Image, perceptual: &dyn PerceptualDistance) -> Result<Heatmap> {
    x.ensure_same_shape(xhat)?;
    let residual = Heatmap::from_image_unchecked(xhat.zip_map(x, |a, b| (a - b).abs())?);
    let residual = norm_p(&residual, 95.0)?;
    residual.product(&perceptual.per_pixel(x, xhat)?)
}

/// Morphological dilation with a `k x k` square; pixels outside the grid are ignored.
pub fn dilate(m: &BinaryMask, k: usize) -> Result<BinaryMask> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidConfig(format!("dilation kernel {k} must be odd and >= 1")));
    }
    let r = k / 2;
    let (h, w) = m.shape();
    // A square structuring element separates into a row pass and a column pass.
    let mut rows = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = (lo..=hi).any(|c| m.get(y, c)) as u8;
        }
    }
    Ok(BinaryMask::from_fn(h, w, |y, x| {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        (lo..=hi).any(|rr| rows[rr * w + x] == 1)
    }))
}

/// A pixel is set iff its score is nonzero and at least the `quantile` of all
/// nonzero scores.
pub fn binarize(h: &Heatmap, quantile: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InvalidConfig(format!("binarize quantile {quantile} must lie in [0, 1]")));
    }
    let (height, width) = h.shape();
    let nonzero: Vec<f64> = h.data().iter().copied().filter(|&v| v > 0.0).collect();
    let Some(threshold) = stats::quantile(&nonzero, quantile) else {
        return Ok(BinaryMask::zeros(height, width));
    };
    Ok(BinaryMask::from_fn(height, width, |r, c| {
        let v = h.data()[r * width + c];
        v > 0.0 && v >= threshold
    }))
}

/// Residual map of the pseudo-healthy reconstruction, optionally gated by the
/// initial heatmap.
pub fn final_anomaly_map(
    x: &Image,
    x_ph: &Image,
    initial: &Heatmap,
    perceptual: &dyn PerceptualDistance,
    use_uncertainty: bool,
) -> Result<Heatmap> {
    let residual = anomaly_heatmap(x, x_ph, perceptual)?;
    if use_uncertainty {
        residual.product(initial)
    } else {
        Ok(residual)
    }
}

/// Mean absolute intensity jump over 4-neighbour pairs that straddle the
/// mask border; 0 when the mask has no border.
pub fn boundary_discontinuity(img: &Image, m: &BinaryMask) -> Result<f64> {
    if img.shape() != m.shape() {
        return Err(Error::ShapeMismatch {
            left: img.shape(),
            right: m.shape(),
        });
    }
    let (h, w) = img.shape();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w && m.get(y, x) != m.get(y, x + 1) {
                sum += (img.get(y, x) - img.get(y, x + 1)).abs();
                n += 1;
            }
            if y + 1 < h && m.get(y, x) != m.get(y + 1, x) {
                sum += (img.get(y, x) - img.get(y + 1, x)).abs();
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_p_ramp() {
        let r = Heatmap::from_scores(10, 10, (1..=100).map(|i| i as f64 / 100.0).collect()).unwrap();
        let n = norm_p(&r, 95.0).unwrap();
        let q = 0.01 + 0.95 * 99.0 * 0.01;
        for (a, b) in n.data().iter().zip(r.data()) {
            assert!((*a - (b / q).min(1.0)).abs() < 1e-12);
        }
        assert!(norm_p(&Heatmap::zeros(3, 3), 95.0).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(norm_p(&r, 0.0).is_err());
    }

    #[test]
    fn dilate_cases() {
        let mut m = BinaryMask::zeros(5, 5);
        m.set(2, 2, true);
        assert_eq!(dilate(&m, 3).unwrap().count(), 9);
        let mut c = BinaryMask::zeros(5, 5);
        c.set(0, 0, true);
        let d = dilate(&c, 3).unwrap();
        assert_eq!(d.count(), 4);
        assert!(d.get(1, 1) && !d.get(2, 2));
        assert_eq!(dilate(&BinaryMask::ones(4, 4), 3).unwrap(), BinaryMask::ones(4, 4));
        assert!(dilate(&m, 2).is_err());
        assert_eq!(dilate(&m, 1).unwrap(), m);
    }

    #[test]
    fn binarize_two_valued() {
        let scores: Vec<f64> = (0..100).map(|i| if i < 90 { 0.1 } else { 0.9 }).collect();
        let h = Heatmap::from_scores(10, 10, scores).unwrap();
        // 0.7 quantile of 90 x 0.1 and 10 x 0.9 sits at position 69.3, inside the 0.1 run.
        assert_eq!(binarize(&h, 0.7).unwrap().count(), 100);
        let m = binarize(&h, 0.95).unwrap();
        assert_eq!(m.count(), 10);
        assert_eq!(binarize(&Heatmap::zeros(4, 4), 0.7).unwrap().count(), 0);
    }

    #[test]
    fn boundary_energy_counts_crossings() {
        let img = Image::from_fn(2, 2, |_, c| c as f64);
        let m = BinaryMask::from_fn(2, 2, |_, c| c == 1);
        assert_eq!(boundary_discontinuity(&img, &m).unwrap(), 1.0);
        assert_eq!(boundary_discontinuity(&img, &BinaryMask::zeros(2, 2)).unwrap(), 0.0);
    }
}
