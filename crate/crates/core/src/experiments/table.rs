use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::metrics::{EvalRecord, EvalReport};
use crate::stats;

use super::eval::anoddpm_level;

/// One aggregated cell: the mean over replicates of the per-replicate mean,
/// with the standard deviation across replicates as dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub noise_level: Option<usize>,
    /// `"all"` or a stratum name.
    pub group: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub n_records: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
}

pub const TABLE_HEADER: &str = "method,noise_level,group,metric,mean,std,n_seeds,n_records";

fn metric_values(r: &EvalRecord) -> [(&'static str, Option<f64>); 6] {
    [
        ("mse", Some(r.mse)),
        ("ssim", Some(r.ssim)),
        ("perceptual", Some(r.perceptual)),
        ("auprc", r.auprc),
        ("max_dice", r.max_dice),
        ("boundary_energy", r.boundary_energy),
    ]
}

/// Healthy images only report reconstruction metrics; lesioned images only
/// localization metrics. The split mirrors how the tables are read.
fn keep(r: &EvalRecord, metric: &str) -> bool {
    match metric {
        "mse" | "ssim" | "perceptual" => r.stratum.is_none() && r.lesion_pixels == 0,
        _ => true,
    }
}

impl ExperimentTable {
    /// Aggregates per-image records; a pure function of the record set.
    pub fn from_report(report: &EvalReport) -> Self {
        // (method, group, metric) -> seed -> values
        type Cells = BTreeMap<(String, String, String), BTreeMap<u64, Vec<f64>>>;
        let mut cells: Cells = BTreeMap::new();
        for r in &report.records {
            let mut groups = vec!["all".to_string()];
            if let Some(s) = r.stratum {
                groups.push(s.to_string());
            }
            for (metric, value) in metric_values(r) {
                let Some(v) = value else { continue };
                if !keep(r, metric) {
                    continue;
                }
                for g in &groups {
                    cells
                        .entry((r.method.clone(), g.clone(), metric.to_string()))
                        .or_default()
                        .entry(r.seed)
                        .or_default()
                        .push(v);
                }
            }
        }
        let rows = cells
            .into_iter()
            .map(|((method, group, metric), by_seed)| {
                let n_records = by_seed.values().map(Vec::len).sum();
                let seed_means: Vec<f64> = by_seed.values().map(|v| stats::mean(v)).collect();
                TableRow {
                    noise_level: anoddpm_level(&method),
                    method,
                    group,
                    metric,
                    mean: stats::mean(&seed_means),
                    std: stats::std_dev(&seed_means),
                    n_seeds: seed_means.len(),
                    n_records,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn get(&self, method: &str, group: &str, metric: &str) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.group == group && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.noise_level.map(|t| t.to_string()).unwrap_or_default(),
                r.group,
                r.metric,
                r.mean,
                r.std,
                r.n_seeds,
                r.n_records
            );
        }
        out
    }
}

/// Mean of one metric per replicate for a method and group, keyed by seed.
pub fn per_seed_means(report: &EvalReport, method: &str, group: &str, metric: &str) -> BTreeMap<u64, f64> {
    let mut acc: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &report.records {
        if r.method != method {
            continue;
        }
        if group != "all" && r.stratum.map(|s| s.to_string()).as_deref() != Some(group) {
            continue;
        }
        if !keep(r, metric) {
            continue;
        }
        if let Some((_, Some(v))) = metric_values(r).into_iter().find(|(m, _)| *m == metric) {
            acc.entry(r.seed).or_default().push(v);
        }
    }
    acc.into_iter().map(|(s, v)| (s, stats::mean(&v))).collect()
}
