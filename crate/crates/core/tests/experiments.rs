mod common;

use std::fs;

use autoddpm::config::{DenoiserKind, RunConfig};
use autoddpm::experiments::eval::{anoddpm_method, case_seed, AUTODDPM, AUTODDPM_NO_RESAMPLE, AUTODDPM_NO_UNCERTAINTY};
use autoddpm::experiments::trends::{
    check_beats_best_level, check_boundary_energy, check_level_dilemma, check_ssim_gain, check_ssim_monotone,
    check_uncertainty_small,
};
use autoddpm::experiments::{
    self, evaluate, run_experiment_with, EvalPlan, Experiment, ExperimentTable, RECORDS_FILE, TABLE_FILE,
    TRENDS_FILE,
};
use autoddpm::metrics::{EvalRecord, EvalReport, PerceptualSurrogate};
use autoddpm::pipeline::PipelineConfig;
use autoddpm::synthdata::{build_dataset, PhantomParams, Stratum};
use autoddpm::Error;

fn rec(id: &str, method: &str, seed: u64, stratum: Option<Stratum>, ssim: f64, dice: f64) -> EvalRecord {
    EvalRecord {
        image_id: id.into(),
        method: method.into(),
        seed,
        mse: 1.0 - ssim,
        ssim,
        perceptual: 0.0,
        auprc: stratum.map(|_| dice),
        max_dice: stratum.map(|_| dice),
        lesion_pixels: if stratum.is_some() { 10 } else { 0 },
        stratum,
        boundary_energy: None,
    }
}

#[test]
fn table_is_mean_of_seed_means() {
    let report = EvalReport::new(vec![
        rec("h0", AUTODDPM, 0, None, 0.9, 0.0),
        rec("h1", AUTODDPM, 0, None, 0.7, 0.0),
        rec("h0", AUTODDPM, 1, None, 0.6, 0.0),
        // Lesioned images do not enter reconstruction metrics.
        rec("a0", AUTODDPM, 0, Some(Stratum::Small), 0.1, 0.4),
        rec("a0", AUTODDPM, 1, Some(Stratum::Small), 0.1, 0.6),
    ]);
    let t = ExperimentTable::from_report(&report);
    let ssim = t.get(AUTODDPM, "all", "ssim").unwrap();
    // Seed means 0.8 and 0.6.
    assert!((ssim.mean - 0.7).abs() < 1e-12);
    assert!((ssim.std - (0.02f64).sqrt()).abs() < 1e-12);
    assert_eq!((ssim.n_seeds, ssim.n_records), (2, 3));
    let dice = t.get(AUTODDPM, "small", "max_dice").unwrap();
    assert!((dice.mean - 0.5).abs() < 1e-12);
    assert!(t.get(AUTODDPM, "small", "ssim").is_none());
    assert!(t.get(AUTODDPM, "all", "boundary_energy").is_none());
    let csv = t.to_csv();
    assert!(csv.starts_with("method,noise_level,group,metric,mean,std,n_seeds,n_records\n"));
    assert_eq!(csv.lines().count(), t.rows.len() + 1);
}

fn sweep(values: &[(usize, [f64; 2])]) -> EvalReport {
    let mut records = Vec::new();
    for (t, per_seed) in values {
        for (seed, v) in per_seed.iter().enumerate() {
            records.push(rec("h", &anoddpm_method(*t), seed as u64, None, *v, 0.0));
        }
    }
    EvalReport::new(records)
}

#[test]
fn ssim_monotone_check() {
    let levels = [50, 100, 150];
    assert!(check_ssim_monotone(&sweep(&[(50, [0.9, 0.9]), (100, [0.8, 0.8]), (150, [0.7, 0.7])]), &levels).passed);
    // One inversion of 0.01 inside a replicate std of about 0.07.
    assert!(check_ssim_monotone(&sweep(&[(50, [0.9, 0.9]), (100, [0.8, 0.9]), (150, [0.86, 0.86])]), &levels).passed);
    // One inversion larger than the spread.
    assert!(!check_ssim_monotone(&sweep(&[(50, [0.9, 0.9]), (100, [0.5, 0.5]), (150, [0.8, 0.8])]), &levels).passed);
    // Two inversions.
    let c = check_ssim_monotone(
        &sweep(&[(50, [0.5, 0.5]), (100, [0.6, 0.6]), (150, [0.7, 0.7])]),
        &levels,
    );
    assert!(!c.passed);
    assert_eq!(c.value, 2.0);
}

#[test]
fn ssim_gain_check() {
    let mut records = sweep(&[(200, [0.70, 0.70])]).records;
    records.push(rec("h", AUTODDPM, 0, None, 0.80, 0.0));
    records.push(rec("h", AUTODDPM, 1, None, 0.76, 0.0));
    let c = check_ssim_gain(&EvalReport::new(records), 200, 0.05);
    assert!(c.passed);
    assert!((c.value - 0.08).abs() < 1e-12);
    assert!(!check_ssim_gain(&sweep(&[(200, [0.7, 0.7])]), 200, 0.05).passed);
}

fn strata_report(auto: [f64; 3], best: [(usize, f64); 3]) -> EvalReport {
    let mut records = Vec::new();
    for seed in 0..3 {
        for (i, s) in Stratum::ALL.into_iter().enumerate() {
            records.push(rec("a", AUTODDPM, seed, Some(s), 0.0, auto[i]));
            for t in [50, 150] {
                let v = if t == best[i].0 { best[i].1 } else { 0.1 };
                records.push(rec("a", &anoddpm_method(t), seed, Some(s), 0.0, v));
            }
        }
    }
    EvalReport::new(records)
}

#[test]
fn stratum_checks() {
    let levels = [50, 150];
    let r = strata_report([0.5, 0.5, 0.2], [(50, 0.4), (150, 0.5), (150, 0.6)]);
    let beats = check_beats_best_level(&r, &levels, 2);
    assert!(beats.passed, "{}", beats.detail);
    assert_eq!(beats.value, 2.0);
    assert!(!check_beats_best_level(&r, &levels, 3).passed);
    let dilemma = check_level_dilemma(&r, &levels, 3);
    assert!(dilemma.passed, "{}", dilemma.detail);
    let same = strata_report([0.5; 3], [(150, 0.4), (150, 0.5), (150, 0.6)]);
    assert_eq!(check_level_dilemma(&same, &levels, 1).value, 0.0);
}

#[test]
fn ablation_checks() {
    let mut records = Vec::new();
    for i in 0..10 {
        let id = format!("a{i}");
        let mut full = rec(&id, AUTODDPM, 0, Some(Stratum::Small), 0.0, 0.6);
        full.boundary_energy = Some(if i < 9 { 0.1 } else { 0.3 });
        let mut naive = rec(&id, AUTODDPM_NO_RESAMPLE, 0, Some(Stratum::Small), 0.0, 0.5);
        naive.boundary_energy = Some(0.2);
        records.push(full);
        records.push(naive);
        records.push(rec(&id, AUTODDPM_NO_UNCERTAINTY, 0, Some(Stratum::Small), 0.0, 0.4));
    }
    let report = EvalReport::new(records);
    let c = check_boundary_energy(&report, 0.8, 10);
    assert!(c.passed);
    assert!((c.value - 0.9).abs() < 1e-12);
    assert!(!check_boundary_energy(&report, 0.8, 11).passed, "too few cases must fail");
    assert!(!check_boundary_energy(&report, 0.95, 10).passed);
    assert!(check_uncertainty_small(&report).passed);
    assert!(!check_uncertainty_small(&EvalReport::new(Vec::new())).passed);
}

#[test]
fn case_seeds_are_distinct() {
    let a = case_seed(0, 0, "test-a-00001");
    assert_ne!(a, case_seed(0, 1, "test-a-00001"));
    assert_ne!(a, case_seed(1, 0, "test-a-00001"));
    assert_ne!(a, case_seed(0, 0, "test-a-00002"));
    assert_eq!(a, case_seed(0, 0, "test-a-00001"));
}

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig {
        denoiser: DenoiserKind::Analytic,
        ..RunConfig::default()
    };
    cfg.data.phantom = PhantomParams { height: 16, width: 16, ..PhantomParams::default() };
    cfg.data.n_train = 8;
    cfg.data.n_val = 2;
    cfg.data.n_test_healthy = 2;
    cfg.data.n_test_anomalous = 3;
    cfg.data.class_weights = [1.0, 1.0, 1.0];
    cfg.pipeline = PipelineConfig { t_mask: 40, t_stitch: 10, n_resample: 1, ..PipelineConfig::default() };
    cfg.experiment.noise_levels = vec![20, 40];
    cfg.experiment.eval_seeds = 2;
    cfg.experiment.panels = 1;
    cfg.resolve(Some(3)).unwrap()
}

#[test]
fn evaluation_covers_every_method_and_is_order_free() {
    let cfg = tiny_config();
    let entries = build_dataset(&cfg.data).unwrap();
    let schedule = cfg.schedule().unwrap();
    let train: Vec<_> = entries.iter().filter(|e| !e.sample.is_anomalous() && e.id.starts_with("train")).map(|e| e.sample.image.clone()).collect();
    let den = autoddpm::denoiser::AnalyticGaussianDenoiser::fit(&train, &schedule).unwrap();
    let plan = EvalPlan {
        noise_levels: vec![20, 40],
        full_pipeline: true,
        ablations: true,
        eval_seeds: 2,
        master_seed: 3,
    };
    let cases = Experiment::NoiseParadox.cases(&cfg, &entries);
    assert_eq!(cases.len(), 5);
    let p = PerceptualSurrogate::default();
    let forward = EvalReport::new(evaluate(&cases, &plan, &den, &schedule, &cfg.pipeline, &p).unwrap());
    let reversed: Vec<_> = cases.iter().rev().cloned().collect();
    let backward = EvalReport::new(evaluate(&reversed, &plan, &den, &schedule, &cfg.pipeline, &p).unwrap());
    assert_eq!(forward, backward);
    // 2 levels + full + 2 ablations, per case and replicate.
    assert_eq!(forward.records.len(), 5 * 2 * 5);
    for r in &forward.records {
        assert_eq!(r.max_dice.is_some(), r.stratum.is_some());
        assert_eq!(r.boundary_energy.is_some(), r.method.starts_with("autoddpm"));
    }
}

#[test]
fn experiment_directory_is_reproducible() {
    let cfg = tiny_config();
    let entries = build_dataset(&cfg.data).unwrap();
    let schedule = cfg.schedule().unwrap();
    let den = autoddpm::denoiser::AnalyticGaussianDenoiser::fit(
        &entries.iter().filter(|e| e.id.starts_with("train")).map(|e| e.sample.image.clone()).collect::<Vec<_>>(),
        &schedule,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for exp in [Experiment::NoiseParadox, Experiment::SizeStrata, Experiment::Ablate] {
        let a = dir.path().join(format!("{}-a", exp.name()));
        let b = dir.path().join(format!("{}-b", exp.name()));
        let out = run_experiment_with(exp, &cfg, &entries, &den, &a).unwrap();
        assert_eq!(out.checks.len(), 2);
        let persisted = RunConfig::load(&a.join("run_config.toml")).unwrap().resolve(None).unwrap();
        assert_eq!(persisted, cfg);
        run_experiment_with(exp, &persisted, &entries, &den, &b).unwrap();
        for f in [RECORDS_FILE, TABLE_FILE, TRENDS_FILE, experiments::SUMMARY_FILE, experiments::PLOT_FILE] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        if exp == Experiment::Ablate {
            assert_eq!(fs::read_dir(a.join("panels")).unwrap().count(), 1);
        }
    }
}

#[test]
fn experiment_without_cases_is_a_data_error() {
    let mut cfg = tiny_config();
    cfg.data.n_test_anomalous = 0;
    let entries = build_dataset(&cfg.data).unwrap();
    let den = common::analytic(16, 16, 0.01, &cfg.schedule().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment_with(Experiment::SizeStrata, &cfg, &entries, &den, dir.path()).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
}
