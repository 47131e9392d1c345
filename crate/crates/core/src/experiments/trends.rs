//! Directional claims checked against evaluation records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::metrics::EvalReport;
use crate::stats;
use crate::synthdata::Stratum;

use super::eval::{anoddpm_method, AUTODDPM, AUTODDPM_NO_RESAMPLE, AUTODDPM_NO_UNCERTAINTY};
use super::table::per_seed_means;

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    /// Observed statistic and the threshold it is compared with.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl TrendCheck {
    fn new(name: &str, passed: bool, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            value,
            threshold,
            detail,
        }
    }
}

pub const TRENDS_HEADER: &str = "check,passed,value,threshold,detail";

pub fn trends_csv(checks: &[TrendCheck]) -> String {
    let mut out = String::from(TRENDS_HEADER);
    out.push('\n');
    for c in checks {
        let _ = writeln!(
            out,
            "{},{},{},{},\"{}\"",
            c.name,
            c.passed,
            c.value,
            c.threshold,
            c.detail.replace('"', "'")
        );
    }
    out
}

fn mean_std(values: &BTreeMap<u64, f64>) -> (f64, f64) {
    let v: Vec<f64> = values.values().copied().collect();
    (stats::mean(&v), stats::std_dev(&v))
}

/// Healthy-image SSIM of the baseline over `levels`: mean and std across replicates.
pub fn ssim_curve(report: &EvalReport, levels: &[usize]) -> Vec<(usize, f64, f64)> {
    levels
        .iter()
        .map(|&t| {
            let (m, s) = mean_std(&per_seed_means(report, &anoddpm_method(t), "all", "ssim"));
            (t, m, s)
        })
        .collect()
}

/// SSIM non-increasing in `t` with at most one inversion, and that inversion
/// no larger than one replicate standard deviation.
pub fn check_ssim_monotone(report: &EvalReport, levels: &[usize]) -> TrendCheck {
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    let curve = ssim_curve(report, &sorted);
    let mut inversions = Vec::new();
    for w in curve.windows(2) {
        let rise = w[1].1 - w[0].1;
        if rise > 0.0 {
            inversions.push((w[1].0, rise, w[0].2.max(w[1].2)));
        }
    }
    let passed = match inversions.as_slice() {
        [] => true,
        [(_, rise, sd)] => rise <= sd,
        _ => false,
    };
    let detail = curve
        .iter()
        .map(|(t, m, s)| format!("t={t}: {m:.4}+-{s:.4}"))
        .collect::<Vec<_>>()
        .join("; ");
    TrendCheck::new(
        "anoddpm_ssim_non_increasing",
        passed && curve.iter().all(|c| c.1.is_finite()),
        inversions.len() as f64,
        1.0,
        detail,
    )
}

/// Full-pipeline SSIM on healthy images exceeds the baseline at `t_mask` by `margin`.
pub fn check_ssim_gain(report: &EvalReport, t_mask: usize, margin: f64) -> TrendCheck {
    let (auto, _) = mean_std(&per_seed_means(report, AUTODDPM, "all", "ssim"));
    let (base, _) = mean_std(&per_seed_means(report, &anoddpm_method(t_mask), "all", "ssim"));
    let gain = auto - base;
    TrendCheck::new(
        "autoddpm_ssim_gain",
        gain >= margin,
        gain,
        margin,
        format!("autoddpm {auto:.4} vs anoddpm t={t_mask} {base:.4}"),
    )
}

fn strata_present(report: &EvalReport) -> Vec<Stratum> {
    Stratum::ALL
        .into_iter()
        .filter(|s| report.records.iter().any(|r| r.stratum == Some(*s)))
        .collect()
}

/// Best baseline level and its mean max-Dice for one stratum; ties go to the lowest level.
fn best_level(report: &EvalReport, levels: &[usize], group: &str, seed: Option<u64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &t in levels {
        let means = per_seed_means(report, &anoddpm_method(t), group, "max_dice");
        let v = match seed {
            Some(s) => match means.get(&s) {
                Some(v) => *v,
                None => continue,
            },
            None if means.is_empty() => continue,
            None => mean_std(&means).0,
        };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((t, v));
        }
    }
    best
}

/// Full pipeline at least as good as the best single level in `min_strata` strata.
pub fn check_beats_best_level(report: &EvalReport, levels: &[usize], min_strata: usize) -> TrendCheck {
    let mut wins = 0;
    let mut parts = Vec::new();
    for s in strata_present(report) {
        let g = s.to_string();
        let (auto, _) = mean_std(&per_seed_means(report, AUTODDPM, &g, "max_dice"));
        let Some((t, base)) = best_level(report, levels, &g, None) else { continue };
        if auto >= base {
            wins += 1;
        }
        parts.push(format!("{g}: autoddpm {auto:.4} vs best t={t} {base:.4}"));
    }
    TrendCheck::new(
        "autoddpm_beats_best_anoddpm_per_stratum",
        wins >= min_strata,
        wins as f64,
        min_strata as f64,
        parts.join("; "),
    )
}

/// The best baseline level for small lesions differs from the one for large
/// lesions in at least `min_seeds` replicates.
pub fn check_level_dilemma(report: &EvalReport, levels: &[usize], min_seeds: usize) -> TrendCheck {
    let seeds: Vec<u64> = per_seed_means(report, AUTODDPM, "all", "max_dice")
        .keys()
        .copied()
        .chain(per_seed_means(report, &anoddpm_method(levels[0]), "all", "max_dice").keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut differ = 0;
    let mut parts = Vec::new();
    for s in seeds {
        let small = best_level(report, levels, "small", Some(s));
        let large = best_level(report, levels, "large", Some(s));
        if let (Some((ts, _)), Some((tl, _))) = (small, large) {
            if ts != tl {
                differ += 1;
            }
            parts.push(format!("seed {s}: small t={ts}, large t={tl}"));
        }
    }
    TrendCheck::new(
        "optimal_level_differs_small_vs_large",
        differ >= min_seeds,
        differ as f64,
        min_seeds as f64,
        parts.join("; "),
    )
}

/// Fraction of paired cases where re-sampling lowers the boundary energy.
pub fn check_boundary_energy(report: &EvalReport, fraction: f64, min_cases: usize) -> TrendCheck {
    let mut naive: BTreeMap<(&str, u64), f64> = BTreeMap::new();
    for r in &report.records {
        if r.method == AUTODDPM_NO_RESAMPLE {
            if let Some(e) = r.boundary_energy {
                naive.insert((r.image_id.as_str(), r.seed), e);
            }
        }
    }
    let mut lower = 0usize;
    let mut n = 0usize;
    for r in &report.records {
        if r.method != AUTODDPM {
            continue;
        }
        let (Some(e), Some(&b)) = (r.boundary_energy, naive.get(&(r.image_id.as_str(), r.seed))) else {
            continue;
        };
        if e == 0.0 && b == 0.0 {
            continue;
        }
        n += 1;
        if e < b {
            lower += 1;
        }
    }
    let frac = if n == 0 { 0.0 } else { lower as f64 / n as f64 };
    TrendCheck::new(
        "resampling_lowers_boundary_energy",
        n >= min_cases && frac >= fraction,
        frac,
        fraction,
        format!("{lower} of {n} cases (minimum {min_cases})"),
    )
}

/// Uncertainty gating does not lower mean max-Dice on the small stratum.
pub fn check_uncertainty_small(report: &EvalReport) -> TrendCheck {
    let (on, _) = mean_std(&per_seed_means(report, AUTODDPM, "small", "max_dice"));
    let (off, _) = mean_std(&per_seed_means(report, AUTODDPM_NO_UNCERTAINTY, "small", "max_dice"));
    TrendCheck::new(
        "uncertainty_helps_small_stratum",
        on.is_finite() && off.is_finite() && on >= off,
        on - off,
        0.0,
        format!("with {on:.4} vs without {off:.4}"),
    )
}
