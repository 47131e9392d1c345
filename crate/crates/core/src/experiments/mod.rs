//! Commands behind the CLI: dataset generation, training, single-image
//! detection and the three experiments.

pub mod eval;
pub mod plot;
pub mod table;
pub mod trends;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{DenoiserKind, RunConfig, CHECKPOINT_FILE, CONFIG_FILE};
use crate::denoiser::{
    checkpoint_load, checkpoint_save, train_with_validation, zero_predictor_loss, AnalyticGaussianDenoiser, Denoiser,
    LossCurve, TinyUNet, TrainState,
};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::metrics::{EvalReport, PerceptualSurrogate};
use crate::pipeline::detect;
use crate::rng::RandomSource;
use crate::synthdata::{build_dataset, dataset_load, DatasetEntry, Split, Stratum, MANIFEST_FILE};

pub use eval::{evaluate, test_cases, EvalCase, EvalPlan};
pub use table::ExperimentTable;
pub use trends::TrendCheck;

pub const LOSS_FILE: &str = "loss.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const TRENDS_FILE: &str = "trends.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.svg";

/// Stream used for network initialization; disjoint from the epoch streams.
const INIT_STREAM: u64 = u64::MAX - 2;

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub message: String,
    pub checks: Vec<TrendCheck>,
}

impl Outcome {
    pub fn trends_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

/// Writes the synthetic dataset to `out`. A directory already holding a
/// dataset from the same configuration is left untouched; one from a
/// different configuration is only replaced with `force`.
pub fn generate_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.data_dir = out.to_path_buf();
    let manifest = out.join(MANIFEST_FILE);
    if manifest.exists() && !force {
        let previous = RunConfig::load(&out.join(CONFIG_FILE)).ok();
        if previous.as_ref().is_some_and(|p| p.data == cfg.data) {
            return Ok(Outcome {
                out_dir: out.to_path_buf(),
                message: format!("dataset in {} is up to date", out.display()),
                checks: Vec::new(),
            });
        }
        return Err(Error::InvalidConfig(format!(
            "{} already holds a dataset from a different configuration; pass --force to replace it",
            out.display()
        )));
    }
    if manifest.exists() {
        remove_dataset_files(out)?;
    }
    let entries = build_dataset(&cfg.data)?;
    crate::synthdata::dataset_save(&entries, out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let count = |s: Split| entries.iter().filter(|e| e.split == s).count();
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        message: format!(
            "wrote {} train, {} val, {} test images to {}",
            count(Split::Train),
            count(Split::Val),
            count(Split::Test),
            out.display()
        ),
        checks: Vec::new(),
    })
}

/// Removes only files a previous generation wrote.
fn remove_dataset_files(dir: &Path) -> Result<()> {
    let read = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        let name = path.file_name().and_then(|n| n.to_str());
        if matches!(ext, Some("img") | Some("mask")) || name == Some(MANIFEST_FILE) || name == Some(CONFIG_FILE) {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Loads the dataset in `cfg.data_dir`, refusing one generated from another
/// data configuration.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<DatasetEntry>> {
    let dir = &cfg.data_dir;
    if let Ok(previous) = RunConfig::load(&dir.join(CONFIG_FILE)) {
        if previous.data != cfg.data {
            return Err(Error::InvalidConfig(format!(
                "dataset in {} was generated from a different data configuration",
                dir.display()
            )));
        }
    }
    let entries = dataset_load(dir)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(entries)
}

fn split_images(entries: &[DatasetEntry], split: Split) -> Vec<Image> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| e.sample.image.clone())
        .collect()
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_done: u64,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
    zero_predictor_val_loss: f64,
    param_count: usize,
}

/// Trains the network, resuming from `out/checkpoint.ckpt` when present. The
/// checkpoint and `loss.csv` are rewritten after every epoch.
pub fn train(cfg: &RunConfig, out: &Path, force: bool) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.model_dir = out.to_path_buf();
    let schedule = cfg.schedule()?;
    let entries = load_dataset(&cfg)?;
    let train_images = split_images(&entries, Split::Train);
    let val_images = split_images(&entries, Split::Val);
    if train_images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    create_dir(out)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let loss_path = out.join(LOSS_FILE);
    let (net, state, mut curve) = if ckpt_path.exists() && !force {
        check_resumable(&cfg, out)?;
        let ckpt = checkpoint_load(&ckpt_path, Some(&cfg.arch))?;
        let mut curve = match fs::read_to_string(&loss_path) {
            Ok(text) => LossCurve::from_csv(&text)?,
            Err(_) => LossCurve::default(),
        };
        curve.rows.retain(|r| r.epoch as u64 <= ckpt.state.epochs_done);
        (ckpt.net, ckpt.state, curve)
    } else {
        let net = TinyUNet::<f32>::init(&cfg.arch, &mut RandomSource::derived(cfg.train.seed, INIT_STREAM))?;
        let state = TrainState::new(net.param_count());
        (net, state, LossCurve::default())
    };
    cfg.save(&out.join(CONFIG_FILE))?;
    if state.epochs_done == 0 {
        checkpoint_save(&net, &state, &ckpt_path)?;
        write_text(&loss_path, &curve.to_csv())?;
    }
    let start = state.epochs_done;
    let (net, state, _) = if (start as usize) < cfg.train.epochs {
        let mut rows = curve.rows.clone();
        let result = train_with_validation(
            net,
            state,
            &train_images,
            &val_images,
            &schedule,
            &cfg.train,
            |net, state, row| {
                rows.push(*row);
                checkpoint_save(net, state, &ckpt_path)?;
                write_text(&loss_path, &LossCurve { rows: rows.clone() }.to_csv())
            },
        )?;
        curve.rows = rows;
        result
    } else {
        (net, state, LossCurve::default())
    };
    let zero = zero_predictor_loss(&val_images, &schedule, cfg.train.seed)?;
    write_text(&out.join("loss.svg"), &loss_chart(&curve, zero))?;
    let last = curve.rows.last();
    let summary = TrainSummary {
        epochs_done: state.epochs_done,
        final_train_loss: last.map(|r| r.train_loss),
        final_val_loss: last.map(|r| r.val_loss),
        zero_predictor_val_loss: zero,
        param_count: net.param_count(),
    };
    write_text(&out.join(SUMMARY_FILE), &to_json(&summary))?;
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        message: format!(
            "trained epochs {}..{} ({} parameters); val loss {} vs zero predictor {zero:.4}",
            start,
            state.epochs_done,
            net.param_count(),
            last.map(|r| format!("{:.4}", r.val_loss)).unwrap_or_else(|| "n/a".into())
        ),
        checks: Vec::new(),
    })
}

/// A checkpoint may only be resumed under the configuration that produced
/// it; only the epoch budget may change.
fn check_resumable(cfg: &RunConfig, out: &Path) -> Result<()> {
    let Ok(previous) = RunConfig::load(&out.join(CONFIG_FILE)) else {
        return Ok(());
    };
    let mut prev_train = previous.train.clone();
    prev_train.epochs = cfg.train.epochs;
    if prev_train != cfg.train || previous.data != cfg.data || previous.schedule != cfg.schedule || previous.arch != cfg.arch {
        return Err(Error::InvalidConfig(format!(
            "checkpoint in {} was trained under a different configuration; pass --force to start over",
            out.display()
        )));
    }
    Ok(())
}

fn loss_chart(curve: &LossCurve, zero: f64) -> String {
    let series = [
        plot::Series {
            name: "train".into(),
            points: curve.rows.iter().map(|r| (r.epoch as f64, r.train_loss, 0.0)).collect(),
        },
        plot::Series {
            name: "validation".into(),
            points: curve.rows.iter().map(|r| (r.epoch as f64, r.val_loss, 0.0)).collect(),
        },
    ];
    let hlines = if zero.is_finite() {
        vec![("zero predictor".to_string(), zero)]
    } else {
        Vec::new()
    };
    plot::line_chart("Noise prediction loss", "epoch", "mean squared error", &series, &hlines)
}

/// The configured denoiser: the trained network, or the Gaussian oracle
/// fitted to the training split.
pub fn load_denoiser(cfg: &RunConfig, schedule: &NoiseSchedule) -> Result<Box<dyn Denoiser>> {
    match cfg.denoiser {
        DenoiserKind::Unet => {
            let ckpt = checkpoint_load(&cfg.checkpoint_path(), Some(&cfg.arch))?;
            Ok(Box::new(ckpt.net))
        }
        DenoiserKind::Analytic => {
            let entries = load_dataset(cfg)?;
            let images = split_images(&entries, Split::Train);
            Ok(Box::new(AnalyticGaussianDenoiser::fit(&images, schedule)?))
        }
    }
}

/// Runs the full pipeline on one image file and writes every intermediate.
pub fn detect_image(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Outcome> {
    let schedule = cfg.schedule()?;
    let x = io::read_image(input)?;
    let denoiser = load_denoiser(cfg, &schedule)?;
    let result = detect(&x, denoiser.as_ref(), &schedule, &cfg.pipeline, &PerceptualSurrogate::default(), cfg.seed)?;
    result.save(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        message: format!(
            "mask covers {} of {} pixels; outputs in {}",
            result.mask.count(),
            x.len(),
            out.display()
        ),
        checks: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Baseline sweep over noise levels against the full pipeline on all test images.
    NoiseParadox,
    /// Localization per lesion-size stratum.
    SizeStrata,
    /// Components of the pipeline switched off one at a time.
    Ablate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::NoiseParadox => "noise_paradox",
            Experiment::SizeStrata => "size_strata",
            Experiment::Ablate => "ablate",
        }
    }

    pub fn plan(self, cfg: &RunConfig) -> EvalPlan {
        let sweep = !matches!(self, Experiment::Ablate);
        EvalPlan {
            noise_levels: if sweep { cfg.experiment.noise_levels.clone() } else { Vec::new() },
            full_pipeline: true,
            ablations: matches!(self, Experiment::Ablate),
            eval_seeds: cfg.experiment.eval_seeds,
            master_seed: cfg.seed,
        }
    }

    pub fn cases(self, cfg: &RunConfig, entries: &[DatasetEntry]) -> Vec<EvalCase> {
        let e = &cfg.experiment;
        let cases = test_cases(entries, e.max_healthy, e.max_anomalous);
        match self {
            Experiment::NoiseParadox => cases,
            _ => cases.into_iter().filter(EvalCase::is_anomalous).collect(),
        }
    }

    pub fn checks(self, cfg: &RunConfig, report: &EvalReport) -> Vec<TrendCheck> {
        let e = &cfg.experiment;
        match self {
            Experiment::NoiseParadox => vec![
                trends::check_ssim_monotone(report, &e.noise_levels),
                trends::check_ssim_gain(report, cfg.pipeline.t_mask, e.ssim_margin),
            ],
            Experiment::SizeStrata => {
                let min_seeds = (e.dilemma_fraction * e.eval_seeds as f64).ceil() as usize;
                vec![
                    trends::check_beats_best_level(report, &e.noise_levels, e.min_strata),
                    trends::check_level_dilemma(report, &e.noise_levels, min_seeds),
                ]
            }
            Experiment::Ablate => vec![
                trends::check_boundary_energy(report, e.boundary_fraction, e.min_boundary_cases),
                trends::check_uncertainty_small(report),
            ],
        }
    }
}

/// Evaluates one experiment with `denoiser` and writes its artifacts to `out`.
pub fn run_experiment_with(
    experiment: Experiment,
    cfg: &RunConfig,
    entries: &[DatasetEntry],
    denoiser: &dyn Denoiser,
    out: &Path,
) -> Result<Outcome> {
    let schedule = cfg.schedule()?;
    let cases = experiment.cases(cfg, entries);
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let plan = experiment.plan(cfg);
    let perceptual = PerceptualSurrogate::default();
    let records = evaluate(&cases, &plan, denoiser, &schedule, &cfg.pipeline, &perceptual)?;
    let report = EvalReport::new(records);
    let table = ExperimentTable::from_report(&report);
    let checks = experiment.checks(cfg, &report);
    create_dir(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    write_text(&out.join(RECORDS_FILE), &report.to_csv())?;
    write_text(&out.join(TABLE_FILE), &table.to_csv())?;
    write_text(&out.join(TRENDS_FILE), &trends::trends_csv(&checks))?;
    write_text(&out.join(SUMMARY_FILE), &report.summary_json())?;
    write_text(&out.join(PLOT_FILE), &experiment_plot(experiment, cfg, &table))?;
    if experiment == Experiment::Ablate {
        write_panels(cfg, &cases, denoiser, &schedule, &out.join("panels"))?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Ok(Outcome {
        out_dir: out.to_path_buf(),
        message: format!(
            "{}: {} records over {} images x {} replicates; {}",
            experiment.name(),
            report.records.len(),
            cases.len(),
            plan.eval_seeds,
            if failed.is_empty() {
                "all trend checks passed".to_string()
            } else {
                format!("failed: {}", failed.join(", "))
            }
        ),
        checks,
    })
}

/// Loads data and denoiser from `cfg`, then runs [`run_experiment_with`].
pub fn run_experiment(experiment: Experiment, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let schedule = cfg.schedule()?;
    let entries = load_dataset(cfg)?;
    let denoiser = load_denoiser(cfg, &schedule)?;
    run_experiment_with(experiment, cfg, &entries, denoiser.as_ref(), out)
}

fn row_point(table: &ExperimentTable, method: &str, group: &str, metric: &str) -> Option<(f64, f64)> {
    table.get(method, group, metric).map(|r| (r.mean, r.std))
}

fn experiment_plot(experiment: Experiment, cfg: &RunConfig, table: &ExperimentTable) -> String {
    let levels = &cfg.experiment.noise_levels;
    match experiment {
        Experiment::NoiseParadox => {
            let series: Vec<plot::Series> = ["ssim", "max_dice"]
                .iter()
                .map(|metric| plot::Series {
                    name: format!("single level {metric}"),
                    points: levels
                        .iter()
                        .filter_map(|&t| {
                            row_point(table, &eval::anoddpm_method(t), "all", metric).map(|(m, s)| (t as f64, m, s))
                        })
                        .collect(),
                })
                .collect();
            let hlines: Vec<(String, f64)> = ["ssim", "max_dice"]
                .iter()
                .filter_map(|metric| {
                    row_point(table, eval::AUTODDPM, "all", metric).map(|(m, _)| (format!("full pipeline {metric}"), m))
                })
                .collect();
            plot::line_chart("Reconstruction fidelity vs localization", "noise level t", "score", &series, &hlines)
        }
        Experiment::SizeStrata => {
            let series: Vec<plot::Series> = Stratum::ALL
                .iter()
                .map(|s| plot::Series {
                    name: format!("{s}"),
                    points: levels
                        .iter()
                        .filter_map(|&t| {
                            row_point(table, &eval::anoddpm_method(t), &s.to_string(), "max_dice")
                                .map(|(m, sd)| (t as f64, m, sd))
                        })
                        .collect(),
                })
                .collect();
            let hlines: Vec<(String, f64)> = Stratum::ALL
                .iter()
                .filter_map(|s| {
                    row_point(table, eval::AUTODDPM, &s.to_string(), "max_dice")
                        .map(|(m, _)| (format!("full pipeline {s}"), m))
                })
                .collect();
            plot::line_chart("Max Dice per lesion size", "noise level t", "max Dice", &series, &hlines)
        }
        Experiment::Ablate => {
            let groups: Vec<String> = Stratum::ALL.iter().map(|s| s.to_string()).collect();
            let series: Vec<(String, Vec<f64>)> = [eval::AUTODDPM, eval::AUTODDPM_NO_UNCERTAINTY, eval::AUTODDPM_NO_RESAMPLE]
                .iter()
                .map(|m| {
                    (
                        m.to_string(),
                        groups
                            .iter()
                            .map(|g| row_point(table, m, g, "max_dice").map_or(f64::NAN, |p| p.0))
                            .collect(),
                    )
                })
                .collect();
            plot::bar_chart("Ablations: max Dice per lesion size", "max Dice", &groups, &series)
        }
    }
}

/// One PNG per case: input, ground truth, initial reconstruction, mask,
/// stitched result without and with re-sampling, and the final map.
fn write_panels(
    cfg: &RunConfig,
    cases: &[EvalCase],
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    dir: &Path,
) -> Result<()> {
    if cfg.experiment.panels == 0 {
        return Ok(());
    }
    create_dir(dir)?;
    let perceptual = PerceptualSurrogate::default();
    for case in cases.iter().take(cfg.experiment.panels) {
        let (xhat0, full, naive) =
            eval::case_artifacts(case, 0, cfg.seed, denoiser, schedule, &cfg.pipeline, &perceptual)?;
        let tiles = [
            case.image.clone(),
            case.gt_mask.to_image(),
            xhat0,
            full.mask.to_image(),
            naive.ph_reconstruction,
            full.ph_reconstruction,
            normalized(full.final_map.as_image()),
        ];
        write_strip(&tiles, &dir.join(format!("{}.png", case.id)))?;
    }
    Ok(())
}

fn normalized(img: &Image) -> Image {
    let max = img.data().iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        img.map(|v| v / max)
    } else {
        img.clone()
    }
}

/// Tiles laid side by side with a two-pixel white gap.
fn write_strip(tiles: &[Image], path: &Path) -> Result<()> {
    const GAP: usize = 2;
    let (h, w) = tiles[0].shape();
    let width = tiles.len() * w + (tiles.len() - 1) * GAP;
    let mut pixels = vec![255u8; width * h];
    for (i, tile) in tiles.iter().enumerate() {
        let x0 = i * (w + GAP);
        for r in 0..h {
            for c in 0..w {
                pixels[r * width + x0 + c] = (tile.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    io::write_gray_png(width, h, &pixels, path)
}
