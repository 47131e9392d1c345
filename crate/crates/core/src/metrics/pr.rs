//! Pixel-level localization metrics: AUPRC, Dice and max-Dice.

use crate::error::{Error, Result};
use crate::image::{check_shapes, BinaryMask, Heatmap};

/// Cumulative (tp, fp) after each group of tied scores, highest score first.
/// Each entry also carries the group's score.
fn sweep(scores: &Heatmap, gt: &BinaryMask) -> Vec<(f64, usize, usize)> {
    let s = scores.data();
    let g = gt.data();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let v = s[order[i]];
        while i < order.len() && s[order[i]] == v {
            if g[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((v, tp, fp));
    }
    out
}

fn positives(scores: &Heatmap, gt: &BinaryMask) -> Result<usize> {
    check_shapes(scores.shape(), gt.shape())?;
    let p = gt.count();
    if p == 0 {
        return Err(Error::NoPositives);
    }
    Ok(p)
}

/// Area under the precision-recall curve. A pixel is predicted positive when
/// its score is `>=` the threshold; thresholds are every distinct score and
/// the area is the step sum `Σ (R_k - R_{k-1}) P_k`.
pub fn auprc(scores: &Heatmap, gt: &BinaryMask) -> Result<f64> {
    let p = positives(scores, gt)? as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in sweep(scores, gt) {
        let recall = tp as f64 / p;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Maximum Dice over thresholds at every distinct positive score (pixels
/// scoring `>=` the threshold are predicted). Zero-score pixels are never
/// predicted, so an all-zero map scores 0.
pub fn max_dice(scores: &Heatmap, gt: &BinaryMask) -> Result<f64> {
    let p = positives(scores, gt)?;
    let mut best = 0.0f64;
    for (v, tp, fp) in sweep(scores, gt) {
        if v <= 0.0 {
            break;
        }
        let d = 2.0 * tp as f64 / (tp + fp + p) as f64;
        best = best.max(d);
    }
    Ok(best)
}

/// `2|A ∩ B| / (|A| + |B|)`, with two empty masks scoring 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_shapes(pred.shape(), gt.shape())?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        inter += (a & b) as usize;
        total += (a + b) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
