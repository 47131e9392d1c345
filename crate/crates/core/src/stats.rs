//! Small numeric helpers shared across modules.

/// Percentile with linear interpolation between closest ranks
/// (`pos = q * (n - 1)` on the sorted values). `q` is a fraction in `[0, 1]`.
///
/// Returns `None` for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let q = q.clamp(0.0, 1.0);
    let mut buf = values.to_vec();
    let pos = q * (buf.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    // Two selections instead of a full sort.
    let (_, lo_val, right) = buf.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if hi == lo {
        return Some(lo_val);
    }
    let hi_val = right
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .unwrap_or(lo_val);
    Some(lo_val + (hi_val - lo_val) * frac)
}

/// `p`-th percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    quantile(values, p / 100.0)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
