//! Nested-ellipse "brain-like" phantoms with smooth random warping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{derive_seed, RandomSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomParams {
    pub height: usize,
    pub width: usize,
    /// Number of small dark inner ellipses, inclusive range.
    pub ellipse_count: (usize, usize),
    pub background: f64,
    /// Intensity band of the outer tissue layer.
    pub tissue_band: (f64, f64),
    /// Intensity band of the bright inner core.
    pub core_band: (f64, f64),
    /// Intensity band of the small dark inner ellipses.
    pub cavity_band: (f64, f64),
    /// Head semi-axes as fractions of the half image size.
    pub head_extent: (f64, f64),
    /// Peak displacement of the smooth warp, in pixels.
    pub deform_amplitude: f64,
    /// Amplitude of the low-frequency intensity texture.
    pub texture_amplitude: f64,
    /// Standard deviation of the per-pixel noise inside the head.
    pub noise_sigma: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            ellipse_count: (2, 4),
            background: 0.0,
            tissue_band: (0.45, 0.6),
            core_band: (0.7, 0.85),
            cavity_band: (0.15, 0.3),
            head_extent: (0.72, 0.88),
            deform_amplitude: 2.0,
            texture_amplitude: 0.03,
            noise_sigma: 0.005,
        }
    }
}

fn band_ok(b: (f64, f64)) -> bool {
    (0.0..=1.0).contains(&b.0) && (0.0..=1.0).contains(&b.1) && b.0 <= b.1
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidConfig(format!("phantom: {why}")));
        if self.height < 8 || self.width < 8 || self.height % 4 != 0 || self.width % 4 != 0 {
            return bad(format!(
                "size {}x{} must be at least 8 and divisible by 4",
                self.height, self.width
            ));
        }
        for (name, b) in [
            ("tissue_band", self.tissue_band),
            ("core_band", self.core_band),
            ("cavity_band", self.cavity_band),
        ] {
            if !band_ok(b) {
                return bad(format!("{name} {b:?} must be an ordered pair within [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.background) {
            return bad(format!("background {} outside [0, 1]", self.background));
        }
        if self.ellipse_count.0 > self.ellipse_count.1 {
            return bad("ellipse_count range is reversed".into());
        }
        let (lo, hi) = self.head_extent;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("head_extent {:?} must satisfy 0 < lo <= hi < 1", self.head_extent));
        }
        if self.deform_amplitude < 0.0 || self.texture_amplitude < 0.0 || self.noise_sigma < 0.0 {
            return bad("amplitudes must be non-negative".into());
        }
        Ok(())
    }

    /// Pixels brighter than this belong to the head.
    pub fn foreground_threshold(&self) -> f64 {
        self.background + 0.05
    }
}

/// Seeds for the two independent generator stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhantomSeeds {
    /// Ellipse layout, intensities and texture.
    pub geometry: u64,
    /// Smooth displacement field.
    pub warp: u64,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
    amp: f64,
}

fn waves(rng: &mut RandomSource, n: usize, max_freq: f64, amp: f64) -> Vec<Wave> {
    (0..n)
        .map(|_| Wave {
            ky: rng.uniform_range(-max_freq, max_freq),
            kx: rng.uniform_range(-max_freq, max_freq),
            phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            amp: amp * rng.uniform_range(0.5, 1.0),
        })
        .collect()
}

fn eval_waves(ws: &[Wave], y: f64, x: f64) -> f64 {
    ws.iter()
        .map(|w| w.amp * (w.ky * y + w.kx * x + w.phase).sin())
        .sum::<f64>()
        / (ws.len().max(1) as f64).sqrt()
}

/// Draws seeds for both stages from `rng` and renders a phantom.
pub fn generate_healthy(params: &PhantomParams, rng: &mut RandomSource) -> Result<Image> {
    let seeds = PhantomSeeds {
        geometry: rng.next_u64(),
        warp: rng.next_u64(),
    };
    generate_healthy_staged(params, seeds)
}

/// Renders a phantom from explicit per-stage seeds.
pub fn generate_healthy_staged(params: &PhantomParams, seeds: PhantomSeeds) -> Result<Image> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let (hh, hw) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut geo = RandomSource::from_seed(seeds.geometry);

    let angle = geo.uniform_range(-0.3, 0.3);
    let (cos, sin) = (angle.cos(), angle.sin());
    let head = Ellipse {
        cy: hh + geo.uniform_range(-1.5, 1.5),
        cx: hw + geo.uniform_range(-1.5, 1.5),
        ry: hh * geo.uniform_range(params.head_extent.0, params.head_extent.1),
        rx: hw * geo.uniform_range(params.head_extent.0, params.head_extent.1),
        cos,
        sin,
        value: geo.uniform_range(params.tissue_band.0, params.tissue_band.1),
    };
    let core_scale = geo.uniform_range(0.55, 0.7);
    let core = Ellipse {
        ry: head.ry * core_scale,
        rx: head.rx * core_scale * geo.uniform_range(0.9, 1.1),
        value: geo.uniform_range(params.core_band.0, params.core_band.1),
        ..head
    };
    let n_cavities = geo.int_inclusive(params.ellipse_count.0, params.ellipse_count.1);
    let cavities: Vec<Ellipse> = (0..n_cavities)
        .map(|_| {
            let a = geo.uniform_range(-0.8, 0.8);
            Ellipse {
                cy: head.cy + core.ry * geo.uniform_range(-0.45, 0.45),
                cx: head.cx + core.rx * geo.uniform_range(-0.45, 0.45),
                ry: head.ry * geo.uniform_range(0.07, 0.16),
                rx: head.rx * geo.uniform_range(0.05, 0.12),
                cos: a.cos(),
                sin: a.sin(),
                value: geo.uniform_range(params.cavity_band.0, params.cavity_band.1),
            }
        })
        .collect();
    let texture = waves(&mut geo, 4, 0.35, params.texture_amplitude);
    let mut noise = RandomSource::from_seed(derive_seed(seeds.geometry, 0x6e6f_6973_65));

    let mut warp_rng = RandomSource::from_seed(seeds.warp);
    let warp_y = waves(&mut warp_rng, 3, 0.12, params.deform_amplitude);
    let warp_x = waves(&mut warp_rng, 3, 0.12, params.deform_amplitude);

    let geometry_at = |y: f64, x: f64| -> f64 {
        if !head.contains(y, x) {
            return params.background;
        }
        let mut v = head.value;
        if core.contains(y, x) {
            v = core.value;
        }
        for c in &cavities {
            if c.contains(y, x) {
                v = c.value;
            }
        }
        v
    };

    // 2x2 supersampling for partial-volume edges.
    const OFFSETS: [f64; 2] = [0.25, 0.75];
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            let mut inside = 0.0;
            for oy in OFFSETS {
                for ox in OFFSETS {
                    let y = r as f64 + oy;
                    let x = c as f64 + ox;
                    let (wy, wx) = if params.deform_amplitude > 0.0 {
                        (y + eval_waves(&warp_y, y, x), x + eval_waves(&warp_x, y, x))
                    } else {
                        (y, x)
                    };
                    acc += geometry_at(wy, wx);
                    if head.contains(wy, wx) {
                        inside += 1.0;
                    }
                }
            }
            let mut v = acc / 4.0;
            let cover = inside / 4.0;
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            v += cover * eval_waves(&texture, y, x);
            let n = noise.normal();
            v += cover * params.noise_sigma * n;
            data.push(v.clamp(0.0, 1.0) as f32 as f64);
        }
    }
    Ok(Image::from_vec_unchecked(h, w, data))
}

/// Fraction of pixels above the foreground threshold.
pub fn foreground_fraction(img: &Image, params: &PhantomParams) -> f64 {
    let thr = params.foreground_threshold();
    img.data().iter().filter(|&&v| v > thr).count() as f64 / img.len() as f64
}
