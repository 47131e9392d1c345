//! Synthetic phantoms standing in for healthy and lesioned scans.

mod anomaly;
mod dataset;
mod phantom;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use anomaly::{inject_anomaly, AnomalySpec, IntensityMode, SizeRanges, BLEND_EPSILON};
pub use dataset::{
    build_dataset, dataset_load, dataset_save, DatasetConfig, DatasetEntry, Split, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use phantom::{foreground_fraction, generate_healthy, generate_healthy_staged, PhantomParams, PhantomSeeds};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Small,
    Medium,
    Large,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Small, Stratum::Medium, Stratum::Large];
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::Small => "small",
            Stratum::Medium => "medium",
            Stratum::Large => "large",
        })
    }
}

impl FromStr for Stratum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Stratum::Small),
            "medium" => Ok(Stratum::Medium),
            "large" => Ok(Stratum::Large),
            other => Err(Error::InvalidConfig(format!("unknown stratum {other:?}"))),
        }
    }
}

/// An image with its ground-truth lesion mask. Healthy samples carry an
/// empty mask and no stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub gt_mask: BinaryMask,
    pub lesion_pixels: usize,
    pub stratum: Option<Stratum>,
}

impl LabeledSample {
    pub fn healthy(image: Image) -> Self {
        let (h, w) = image.shape();
        Self {
            image,
            gt_mask: BinaryMask::zeros(h, w),
            lesion_pixels: 0,
            stratum: None,
        }
    }

    pub fn is_anomalous(&self) -> bool {
        self.lesion_pixels > 0
    }

    /// Number of pixels that differ from `reference` by more than the blend epsilon.
    pub fn altered_pixels(&self, reference: &Image) -> usize {
        self.image
            .data()
            .iter()
            .zip(reference.data())
            .filter(|(a, b)| (*a - *b).abs() > BLEND_EPSILON)
            .count()
    }

    /// Popcount and stratum consistency.
    pub fn check(&self, ranges: &SizeRanges) -> Result<()> {
        if self.gt_mask.count() != self.lesion_pixels {
            return Err(Error::InvalidImage(format!(
                "lesion_pixels {} != mask popcount {}",
                self.lesion_pixels,
                self.gt_mask.count()
            )));
        }
        if self.gt_mask.shape() != self.image.shape() {
            return Err(Error::ShapeMismatch {
                left: self.image.shape(),
                right: self.gt_mask.shape(),
            });
        }
        match self.stratum {
            None if self.lesion_pixels == 0 => Ok(()),
            Some(s) if ranges.classify(self.lesion_pixels) == Some(s) => Ok(()),
            _ => Err(Error::InvalidImage(format!(
                "stratum {:?} inconsistent with {} lesion pixels",
                self.stratum, self.lesion_pixels
            ))),
        }
    }
}

/// Divides by the 98th-percentile intensity and clips to `[0, 1]`.
pub fn normalize_98(img: &Image) -> Result<Image> {
    let p = stats::percentile(img.data(), 98.0).unwrap_or(0.0);
    if p <= 0.0 {
        return Err(Error::InvalidImage(
            "98th percentile is not positive; cannot normalize".into(),
        ));
    }
    Ok(img.map(|v| (v / p).clamp(0.0, 1.0)))
}

/// Quartile stratification by lesion size: strictly below the `q_low`
/// quantile is small, strictly above the `q_high` quantile is large, and
/// everything else (ties included) is medium.
pub fn stratify_sizes(sizes: &[usize], q_low: f64, q_high: f64) -> Result<Vec<Stratum>> {
    if sizes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&q_low) || !(0.0..=1.0).contains(&q_high) || q_low > q_high {
        return Err(Error::InvalidConfig(format!(
            "stratification quantiles {q_low}, {q_high} must satisfy 0 <= low <= high <= 1"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig("lesion sizes must be positive".into()));
    }
    let values: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let lo = stats::quantile(&values, q_low).expect("non-empty");
    let hi = stats::quantile(&values, q_high).expect("non-empty");
    Ok(values
        .iter()
        .map(|&v| {
            if v < lo {
                Stratum::Small
            } else if v > hi {
                Stratum::Large
            } else {
                Stratum::Medium
            }
        })
        .collect())
}

pub fn stratify(samples: &[LabeledSample], q_low: f64, q_high: f64) -> Result<Vec<Stratum>> {
    let sizes: Vec<usize> = samples.iter().map(|s| s.lesion_pixels).collect();
    stratify_sizes(&sizes, q_low, q_high)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartile_example() {
        let s = stratify_sizes(&[10, 20, 30, 40], 0.25, 0.75).unwrap();
        assert_eq!(s, vec![Stratum::Small, Stratum::Medium, Stratum::Medium, Stratum::Large]);
    }

    #[test]
    fn all_equal_is_medium() {
        let s = stratify_sizes(&[7; 9], 0.25, 0.75).unwrap();
        assert!(s.iter().all(|&x| x == Stratum::Medium));
    }

    #[test]
    fn stratify_errors() {
        assert!(matches!(stratify_sizes(&[], 0.25, 0.75), Err(Error::EmptyDataset)));
        assert!(stratify_sizes(&[1, 0], 0.25, 0.75).is_err());
    }

    #[test]
    fn normalize_cases() {
        let c = Image::filled(4, 4, 0.4);
        assert!(normalize_98(&c).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(normalize_98(&Image::zeros(4, 4)).is_err());

        let ramp = Image::from_fn(10, 10, |r, c| (r * 10 + c) as f64 / 200.0);
        let once = normalize_98(&ramp).unwrap();
        let mut sorted = ramp.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        let pos = 0.98 * 99.0;
        let p98 = sorted[97] + (sorted[98] - sorted[97]) * (pos - 97.0);
        for (a, b) in once.data().iter().zip(ramp.data()) {
            assert_eq!(*a, (b / p98).clamp(0.0, 1.0));
        }
        // Re-application only rescales by the interpolation into the clipped tail.
        let twice = normalize_98(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!(*b >= *a && b - a < 1e-3);
        }
    }
}
