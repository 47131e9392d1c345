//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use autoddpm::denoiser::{AnalyticGaussianDenoiser, ArchConfig, TinyUNet};
use autoddpm::diffusion::NoiseSchedule;
use autoddpm::{BinaryMask, Heatmap, Image, RandomSource};

pub fn default_schedule() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

/// Smooth gradient image in [0.2, 0.8].
pub fn ramp(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |r, c| 0.2 + 0.6 * (r + c) as f64 / (h + w - 2).max(1) as f64)
}

/// Ramp with a bright square, the simplest lesioned input.
pub fn lesioned(h: usize, w: usize) -> Image {
    let mut x = ramp(h, w);
    for r in h / 3..h / 3 + h / 4 {
        for c in w / 3..w / 3 + w / 4 {
            x.set(r, c, 1.0);
        }
    }
    x
}

pub fn analytic(h: usize, w: usize, sigma0_sq: f64, schedule: &NoiseSchedule) -> AnalyticGaussianDenoiser {
    AnalyticGaussianDenoiser::new(ramp(h, w), sigma0_sq, schedule).unwrap()
}

/// Scores on a coarse grid so that ties are common.
pub fn random_scores(h: usize, w: usize, rng: &mut RandomSource) -> Heatmap {
    let levels = rng.int_inclusive(1, 6);
    Heatmap::from_scores(
        h,
        w,
        (0..h * w).map(|_| rng.int_inclusive(0, levels) as f64 / levels as f64).collect(),
    )
    .unwrap()
}

pub fn random_mask(h: usize, w: usize, p: f64, rng: &mut RandomSource) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.uniform() < p)
}

fn distinct_desc(v: &[f64]) -> Vec<f64> {
    let mut d = v.to_vec();
    d.sort_by(|a, b| b.total_cmp(a));
    d.dedup();
    d
}

/// Counts (tp, fp) for `score >= thr` by scanning every pixel.
fn confusion(scores: &[f64], gt: &[u8], thr: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for (s, g) in scores.iter().zip(gt) {
        if *s >= thr {
            if *g == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

/// Step-sum AUPRC over every distinct threshold, each evaluated from scratch.
pub fn oracle_auprc(scores: &Heatmap, gt: &BinaryMask) -> f64 {
    let p = gt.count() as f64;
    let mut area = 0.0;
    let mut prev = 0.0;
    for thr in distinct_desc(scores.data()) {
        let (tp, fp) = confusion(scores.data(), gt.data(), thr);
        let recall = tp as f64 / p;
        area += (recall - prev) * (tp as f64 / (tp + fp) as f64);
        prev = recall;
    }
    area
}

/// Dice of every positive-threshold prediction, maximized.
pub fn oracle_max_dice(scores: &Heatmap, gt: &BinaryMask) -> f64 {
    let mut best = 0.0f64;
    for thr in distinct_desc(scores.data()).into_iter().filter(|t| *t > 0.0) {
        let pred = BinaryMask::new(
            gt.height(),
            gt.width(),
            scores.data().iter().map(|&s| u8::from(s >= thr)).collect(),
        )
        .unwrap();
        best = best.max(oracle_dice(&pred, gt));
    }
    best
}

pub fn oracle_dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.data().iter().zip(b.data()).filter(|(x, y)| **x == 1 && **y == 1).count();
    let total = a.count() + b.count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

pub fn oracle_mse(a: &Image, b: &Image) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        s += (x - y) * (x - y);
    }
    s / a.len() as f64
}

/// Pixel set iff any pixel of the k x k window around it is set.
pub fn oracle_dilate(m: &BinaryMask, k: usize) -> BinaryMask {
    let r = (k / 2) as isize;
    let (h, w) = (m.height() as isize, m.width() as isize);
    BinaryMask::from_fn(m.height(), m.width(), |y, x| {
        let mut on = false;
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && yy < h && xx >= 0 && xx < w && m.get(yy as usize, xx as usize) {
                    on = true;
                }
            }
        }
        on
    })
}

/// Linear interpolation between closest ranks on a fully sorted copy.
pub fn oracle_percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }
}

/// Default architecture with non-zero output weights, so every layer
/// receives a gradient.
pub fn gradcheck_arch() -> ArchConfig {
    ArchConfig {
        zero_output_init: false,
        ..ArchConfig::default()
    }
}

pub struct GradCheck {
    pub checked: usize,
    pub tensors: usize,
    pub worst_excess: f64,
    pub failures: Vec<String>,
}

/// Central finite differences against the analytic gradient of the simple
/// loss in f64, for sampled entries of every parameter tensor and every input
/// pixel of an 8x8 probe. Passes when `|a - n| <= 1e-3 max(|a|, |n|) + 1e-8`.
pub fn gradient_check() -> GradCheck {
    let mut net = TinyUNet::<f64>::init(&gradcheck_arch(), &mut RandomSource::from_seed(11)).unwrap();
    let mut rng = RandomSource::from_seed(12);
    let layout: Vec<(String, usize, usize)> = net
        .layout()
        .map(|(n, s, o)| (n.to_string(), s.iter().product(), o))
        .collect();
    // Non-trivial norm affine parameters and biases so their gradients are exercised.
    for (name, len, off) in &layout {
        if name.ends_with("gamma") || name.ends_with("beta") || name.ends_with("bias") {
            for v in &mut net.params_mut()[*off..off + len] {
                *v += 0.2 * rng.normal();
            }
        }
    }
    let x = Image::from_fn(8, 8, |_, _| rng.normal());
    let eps = Image::from_fn(8, 8, |_, _| rng.normal());
    let t = 37;
    let (_, grads, dx) = net.simple_loss_grad(&x, &eps, t).unwrap();
    let h = 1e-5;
    let mut report = GradCheck {
        checked: 0,
        tensors: layout.len(),
        worst_excess: f64::NEG_INFINITY,
        failures: Vec::new(),
    };
    let judge = |what: String, a: f64, n: f64, report: &mut GradCheck| {
        let excess = (a - n).abs() - (1e-3 * a.abs().max(n.abs()) + 1e-8);
        report.worst_excess = report.worst_excess.max(excess);
        report.checked += 1;
        if excess > 0.0 {
            report.failures.push(format!("{what}: analytic {a} vs numeric {n}"));
        }
    };
    for (name, len, off) in &layout {
        let picks: Vec<usize> = if *len <= 6 {
            (0..*len).collect()
        } else {
            (0..6).map(|_| rng.int_inclusive(0, len - 1)).collect()
        };
        for i in picks {
            let k = off + i;
            let orig = net.params()[k];
            net.params_mut()[k] = orig + h;
            let lp = net.simple_loss(&x, &eps, t).unwrap();
            net.params_mut()[k] = orig - h;
            let lm = net.simple_loss(&x, &eps, t).unwrap();
            net.params_mut()[k] = orig;
            judge(format!("{name}[{i}]"), grads[k], (lp - lm) / (2.0 * h), &mut report);
        }
    }
    for i in 0..64 {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let numeric = (net.simple_loss(&xp, &eps, t).unwrap() - net.simple_loss(&xm, &eps, t).unwrap()) / (2.0 * h);
        judge(format!("input[{i}]"), dx.data()[i], numeric, &mut report);
    }
    report
}
