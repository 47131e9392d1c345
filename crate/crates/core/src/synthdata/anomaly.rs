//! Star-convex lesion injection with size classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::rng::RandomSource;

use super::{LabeledSample, Stratum};

/// Minimum intensity change that counts as "altered".
pub const BLEND_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityMode {
    Hypo,
    Hyper,
}

/// Inclusive pixel-count ranges per size class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeRanges {
    pub small: (usize, usize),
    pub medium: (usize, usize),
    pub large: (usize, usize),
}

impl Default for SizeRanges {
    /// Quartile cutoffs of 71 and 570 pixels at 128x128, scaled by the area
    /// ratio 1/4 to 64x64: small < 18 px, large >= 143 px.
    fn default() -> Self {
        Self {
            small: (6, 17),
            medium: (18, 142),
            large: (143, 320),
        }
    }
}

impl SizeRanges {
    /// Rescales the default 64x64 ranges to another image area.
    pub fn for_area(pixels: usize) -> Self {
        let s = pixels as f64 / (64.0 * 64.0);
        let scale = |v: usize| ((v as f64 * s).round() as usize).max(1);
        let d = Self::default();
        let small = (scale(d.small.0).max(2), scale(d.medium.0).saturating_sub(1).max(2));
        let medium = (small.1 + 1, scale(d.large.0).saturating_sub(1).max(small.1 + 1));
        let large = (medium.1 + 1, scale(d.large.1).max(medium.1 + 1));
        Self { small, medium, large }
    }

    pub fn range(&self, class: Stratum) -> (usize, usize) {
        match class {
            Stratum::Small => self.small,
            Stratum::Medium => self.medium,
            Stratum::Large => self.large,
        }
    }

    pub fn classify(&self, pixels: usize) -> Option<Stratum> {
        [Stratum::Small, Stratum::Medium, Stratum::Large]
            .into_iter()
            .find(|&s| {
                let (lo, hi) = self.range(s);
                (lo..=hi).contains(&pixels)
            })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.small.0 >= 1
            && self.small.0 <= self.small.1
            && self.small.1 < self.medium.0
            && self.medium.0 <= self.medium.1
            && self.medium.1 < self.large.0
            && self.large.0 <= self.large.1;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "size ranges must be non-empty, disjoint and ordered: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub class: Stratum,
    pub ranges: SizeRanges,
    pub mode: IntensityMode,
    /// Relative amplitude of the radial noise; 0 gives an ellipse-free disc.
    pub irregularity: f64,
    /// Fraction of the way towards black (hypo) or white (hyper).
    pub depth: (f64, f64),
    /// Pixels at or below this value are not foreground.
    pub foreground_threshold: f64,
}

impl AnomalySpec {
    pub fn new(class: Stratum, mode: IntensityMode) -> Self {
        Self {
            class,
            ranges: SizeRanges::default(),
            mode,
            irregularity: 0.35,
            depth: (0.45, 0.75),
            foreground_threshold: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if !(0.0..1.0).contains(&self.irregularity) {
            return Err(Error::InvalidConfig("irregularity must lie in [0, 1)".into()));
        }
        let (lo, hi) = self.depth;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("depth {:?} must satisfy 0 < lo <= hi <= 1", self.depth)));
        }
        Ok(())
    }
}

struct RadialProfile {
    harmonics: Vec<(f64, f64)>,
}

impl RadialProfile {
    fn sample(rng: &mut RandomSource, irregularity: f64) -> Self {
        let harmonics = (1..=5)
            .map(|k| {
                let amp = irregularity * rng.uniform_range(0.3, 1.0) / k as f64;
                (amp, rng.uniform_range(0.0, std::f64::consts::TAU))
            })
            .collect();
        Self { harmonics }
    }

    fn radius(&self, theta: f64) -> f64 {
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, &(a, ph))| a * ((i + 1) as f64 * theta + ph).cos())
            .sum();
        (1.0 + wobble).max(0.2)
    }

    /// Pixel offsets (relative to the centre pixel) covered at base radius `r0`.
    fn offsets(&self, r0: f64) -> Vec<(isize, isize)> {
        let reach = (r0 * 2.5).ceil() as isize + 1;
        let mut out = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (y, x) = (dy as f64, dx as f64);
                let d = (y * y + x * x).sqrt();
                if d <= r0 * self.radius(y.atan2(x)) {
                    out.push((dy, dx));
                }
            }
        }
        out
    }
}

/// Shape whose pixel count is as close as possible to `target`, within `[lo, hi]`.
fn fit_shape(profile: &RadialProfile, target: usize, lo: usize, hi: usize) -> Option<Vec<(isize, isize)>> {
    let (mut a, mut b) = (0.3f64, 40.0f64);
    let mut best: Option<Vec<(isize, isize)>> = None;
    for _ in 0..40 {
        let mid = 0.5 * (a + b);
        let shape = profile.offsets(mid);
        let n = shape.len();
        if (lo..=hi).contains(&n) {
            let better = best
                .as_ref()
                .map(|s| n.abs_diff(target) < s.len().abs_diff(target))
                .unwrap_or(true);
            if better {
                best = Some(shape);
            }
        }
        if n == target {
            break;
        }
        if n < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    best
}

/// Blends an irregular lesion of the requested size class into the
/// foreground of `img`. The returned mask marks exactly the altered pixels.
pub fn inject_anomaly(img: &Image, spec: &AnomalySpec, rng: &mut RandomSource) -> Result<LabeledSample> {
    spec.validate()?;
    let (h, w) = img.shape();
    let (lo, hi) = spec.ranges.range(spec.class);
    let fg: Vec<bool> = img.data().iter().map(|&v| v > spec.foreground_threshold).collect();
    let fg_count = fg.iter().filter(|&&f| f).count();
    if fg_count < lo {
        return Err(Error::LesionPlacement(format!(
            "foreground has {fg_count} pixels, class {} needs at least {lo}",
            spec.class
        )));
    }
    let fg_pixels: Vec<usize> = (0..h * w).filter(|&i| fg[i]).collect();

    for _attempt in 0..64 {
        let target = rng.int_inclusive(lo, hi);
        let profile = RadialProfile::sample(rng, spec.irregularity);
        let Some(shape) = fit_shape(&profile, target, lo, hi) else {
            continue;
        };
        for _ in 0..64 {
            let centre = fg_pixels[rng.int_inclusive(0, fg_pixels.len() - 1)];
            let (cr, cc) = ((centre / w) as isize, (centre % w) as isize);
            let fits = shape.iter().all(|&(dy, dx)| {
                let (r, c) = (cr + dy, cc + dx);
                r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && fg[r as usize * w + c as usize]
            });
            if !fits {
                continue;
            }
            let depth = rng.uniform_range(spec.depth.0, spec.depth.1);
            let mut out = img.clone();
            let mut mask = BinaryMask::zeros(h, w);
            for &(dy, dx) in &shape {
                let (r, c) = ((cr + dy) as usize, (cc + dx) as usize);
                let old = img.get(r, c);
                let new = match spec.mode {
                    IntensityMode::Hypo => old * (1.0 - depth),
                    IntensityMode::Hyper => old + depth * (1.0 - old),
                };
                out.set(r, c, new.clamp(0.0, 1.0) as f32 as f64);
                mask.set(r, c, true);
            }
            let sample = LabeledSample {
                lesion_pixels: mask.count(),
                image: out,
                gt_mask: mask,
                stratum: Some(spec.class),
            };
            if sample.altered_pixels(img) != sample.lesion_pixels {
                // Saturated pixels cannot be altered visibly; try elsewhere.
                continue;
            }
            sample.check(&spec.ranges)?;
            return Ok(sample);
        }
    }
    Err(Error::LesionPlacement(format!(
        "no placement found for a {} lesion inside {fg_count} foreground pixels",
        spec.class
    )))
}
