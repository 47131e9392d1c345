use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::stats;
use crate::synthdata::Stratum;

/// How localization metrics are reduced over a test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Compute per image, then average.
    #[default]
    PerImage,
    /// Concatenate all pixels, then compute once.
    Pooled,
}

/// Metrics of one method on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub method: String,
    pub seed: u64,
    pub mse: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub auprc: Option<f64>,
    pub max_dice: Option<f64>,
    pub lesion_pixels: usize,
    pub stratum: Option<Stratum>,
    /// Mean intensity jump across the stitching-mask border, for stitched outputs.
    pub boundary_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    /// `"all"` or a stratum name.
    pub group: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

const CSV_HEADER: &str =
    "image_id,method,seed,mse,ssim,perceptual,auprc,max_dice,lesion_pixels,stratum,boundary_energy";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn new(mut records: Vec<EvalRecord>) -> Self {
        records.sort_by(|a, b| {
            (a.image_id.as_str(), a.method.as_str(), a.seed)
                .cmp(&(b.image_id.as_str(), b.method.as_str(), b.seed))
        });
        Self { records }
    }

    /// Mean and sample std of every metric per (method, group), where group
    /// is `"all"` plus each stratum present. Rows are in a fixed order.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut buckets: BTreeMap<(String, String, &'static str), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            let mut groups = vec!["all".to_string()];
            if let Some(s) = r.stratum {
                groups.push(s.to_string());
            }
            let metrics: [(&'static str, Option<f64>); 6] = [
                ("mse", Some(r.mse)),
                ("ssim", Some(r.ssim)),
                ("perceptual", Some(r.perceptual)),
                ("auprc", r.auprc),
                ("max_dice", r.max_dice),
                ("boundary_energy", r.boundary_energy),
            ];
            for g in &groups {
                for (name, value) in metrics {
                    if let Some(v) = value {
                        buckets
                            .entry((r.method.clone(), g.clone(), name))
                            .or_default()
                            .push(v);
                    }
                }
            }
        }
        buckets
            .into_iter()
            .map(|((method, group, metric), values)| AggregateRow {
                method,
                group,
                metric: metric.to_string(),
                n: values.len(),
                mean: stats::mean(&values),
                std: stats::std_dev(&values),
            })
            .collect()
    }

    pub fn aggregate(&self, method: &str, group: &str, metric: &str) -> Option<AggregateRow> {
        self.aggregates()
            .into_iter()
            .find(|r| r.method == method && r.group == group && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.image_id,
                r.method,
                r.seed,
                r.mse,
                r.ssim,
                r.perceptual,
                opt(r.auprc),
                opt(r.max_dice),
                r.lesion_pixels,
                r.stratum.map(|s| s.to_string()).unwrap_or_default(),
                opt(r.boundary_energy)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> crate::Result<Self> {
        let bad = |line: usize, why: &str| {
            crate::Error::Serialization(format!("report csv line {line}: {why}"))
        };
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(bad(1, "unexpected header"));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad(i + 2, "expected 11 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
            let optnum = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            records.push(EvalRecord {
                image_id: f[0].to_string(),
                method: f[1].to_string(),
                seed: f[2].parse().map_err(|_| bad(i + 2, "bad seed"))?,
                mse: num(f[3])?,
                ssim: num(f[4])?,
                perceptual: num(f[5])?,
                auprc: optnum(f[6])?,
                max_dice: optnum(f[7])?,
                lesion_pixels: f[8].parse().map_err(|_| bad(i + 2, "bad lesion size"))?,
                stratum: if f[9].is_empty() {
                    None
                } else {
                    Some(f[9].parse().map_err(|_| bad(i + 2, "bad stratum"))?)
                },
                boundary_energy: optnum(f[10])?,
            });
        }
        Ok(Self::new(records))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.aggregates()).expect("aggregate rows serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, method: &str, ssim: f64, dice: Option<f64>, stratum: Option<Stratum>) -> EvalRecord {
        EvalRecord {
            image_id: id.into(),
            method: method.into(),
            seed: 0,
            mse: 0.01,
            ssim,
            perceptual: 0.1,
            auprc: dice.map(|d| d / 2.0),
            max_dice: dice,
            lesion_pixels: 10,
            stratum,
            boundary_energy: None,
        }
    }

    #[test]
    fn aggregates_recompute_from_records() {
        let report = EvalReport::new(vec![
            rec("a", "m", 0.9, Some(0.5), Some(Stratum::Small)),
            rec("b", "m", 0.7, Some(0.3), Some(Stratum::Large)),
            rec("c", "m", 0.8, None, None),
        ]);
        let all = report.aggregate("m", "all", "ssim").unwrap();
        assert_eq!(all.n, 3);
        assert!((all.mean - 0.8).abs() < 1e-12);
        let small = report.aggregate("m", "small", "max_dice").unwrap();
        assert_eq!((small.n, small.mean), (1, 0.5));
        let dice_all = report.aggregate("m", "all", "max_dice").unwrap();
        assert_eq!(dice_all.n, 2);
    }

    #[test]
    fn csv_round_trip() {
        let report = EvalReport::new(vec![
            rec("a", "m", 0.123456789, Some(0.5), Some(Stratum::Medium)),
            rec("b", "n", -0.25, None, None),
        ]);
        let back = EvalReport::from_csv(&report.to_csv()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.aggregates(), report.aggregates());
    }
}
