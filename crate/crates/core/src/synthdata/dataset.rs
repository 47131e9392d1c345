use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::io;
use crate::rng::{derive_seed, RandomSource};

use super::{generate_healthy, inject_anomaly, normalize_98, AnomalySpec, IntensityMode, LabeledSample, PhantomParams, SizeRanges, Stratum};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub sample: LabeledSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub phantom: PhantomParams,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test_healthy: usize,
    pub n_test_anomalous: usize,
    /// Relative weights of the small, medium and large classes among anomalous samples.
    pub class_weights: [f64; 3],
    /// Fraction of lesions that are hyper-intense.
    pub hyper_fraction: f64,
    pub irregularity: f64,
    pub depth: (f64, f64),
    /// Apply the 98th-percentile normalization to every phantom.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        // 131/15/30 split ratio, scaled so the training split has 512 images.
        Self {
            phantom: PhantomParams::default(),
            n_train: 512,
            n_val: 59,
            n_test_healthy: 24,
            n_test_anomalous: 48,
            class_weights: [0.25, 0.5, 0.25],
            hyper_fraction: 0.5,
            irregularity: 0.35,
            depth: (0.45, 0.75),
            normalize: true,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn size_ranges(&self) -> SizeRanges {
        SizeRanges::for_area(self.phantom.height * self.phantom.width)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.size_ranges().validate()?;
        if self.class_weights.iter().any(|w| *w < 0.0) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("class_weights must be non-negative with a positive sum".into()));
        }
        if !(0.0..=1.0).contains(&self.hyper_fraction) {
            return Err(Error::InvalidConfig("hyper_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn anomaly_spec(&self, class: Stratum, mode: IntensityMode) -> AnomalySpec {
        AnomalySpec {
            ranges: self.size_ranges(),
            irregularity: self.irregularity,
            depth: self.depth,
            ..AnomalySpec::new(class, mode)
        }
    }

    fn healthy(&self, rng: &mut RandomSource) -> Result<LabeledSample> {
        let mut img = generate_healthy(&self.phantom, rng)?;
        if self.normalize {
            img = normalize_98(&img)?.quantize_f32();
        }
        Ok(LabeledSample::healthy(img))
    }
}

enum Plan {
    Healthy,
    Anomalous,
}

/// Generates the full dataset; every sample is a pure function of
/// `(config, index)`.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Vec<DatasetEntry>> {
    cfg.validate()?;
    let mut plan: Vec<(String, Split, Plan)> = Vec::new();
    plan.extend((0..cfg.n_train).map(|i| (format!("train-{i:05}"), Split::Train, Plan::Healthy)));
    plan.extend((0..cfg.n_val).map(|i| (format!("val-{i:05}"), Split::Val, Plan::Healthy)));
    plan.extend((0..cfg.n_test_healthy).map(|i| (format!("test-h-{i:05}"), Split::Test, Plan::Healthy)));
    plan.extend((0..cfg.n_test_anomalous).map(|i| (format!("test-a-{i:05}"), Split::Test, Plan::Anomalous)));

    let weights = cfg.class_weights;
    let total: f64 = weights.iter().sum();
    plan.into_par_iter()
        .enumerate()
        .map(|(index, (id, split, kind))| {
            let seed = derive_seed(cfg.seed, index as u64);
            let mut rng = RandomSource::from_seed(seed);
            let sample = match kind {
                Plan::Healthy => cfg.healthy(&mut rng)?,
                Plan::Anomalous => {
                    let base = cfg.healthy(&mut rng)?;
                    let u = rng.uniform() * total;
                    let class = if u < weights[0] {
                        Stratum::Small
                    } else if u < weights[0] + weights[1] {
                        Stratum::Medium
                    } else {
                        Stratum::Large
                    };
                    let mode = if rng.uniform() < cfg.hyper_fraction {
                        IntensityMode::Hyper
                    } else {
                        IntensityMode::Hypo
                    };
                    inject_anomaly(&base.image, &cfg.anomaly_spec(class, mode), &mut rng)?
                }
            };
            sample.check(&cfg.size_ranges())?;
            Ok(DatasetEntry { id, split, seed, sample })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    split: Split,
    seed: u64,
    lesion_pixels: usize,
    stratum: Option<Stratum>,
    image: String,
    mask: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    entries: Vec<ManifestEntry>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Writes `manifest.json` plus one image file (and a mask file for lesioned
/// samples) per entry.
pub fn dataset_save(entries: &[DatasetEntry], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        entries: Vec::with_capacity(entries.len()),
    };
    for e in entries {
        if !valid_id(&e.id) {
            return Err(Error::InvalidConfig(format!("sample id {:?} is not file-safe", e.id)));
        }
        let image = format!("{}.img", e.id);
        io::write_image(&e.sample.image, &dir.join(&image))?;
        let mask = if e.sample.is_anomalous() {
            let name = format!("{}.mask", e.id);
            io::write_mask(&e.sample.gt_mask, &dir.join(&name))?;
            Some(name)
        } else {
            None
        };
        manifest.entries.push(ManifestEntry {
            id: e.id.clone(),
            split: e.split,
            seed: e.seed,
            lesion_pixels: e.sample.lesion_pixels,
            stratum: e.sample.stratum,
            image,
            mask,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn dataset_load(dir: &Path) -> Result<Vec<DatasetEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::VersionMismatch {
            path,
            expected: MANIFEST_VERSION,
            found: manifest.version,
        });
    }
    manifest
        .entries
        .into_iter()
        .map(|m| {
            let image = io::read_image(&dir.join(&m.image))?;
            let gt_mask = match &m.mask {
                Some(name) => io::read_mask(&dir.join(name))?,
                None => BinaryMask::zeros(image.height(), image.width()),
            };
            if gt_mask.count() != m.lesion_pixels || gt_mask.shape() != image.shape() {
                return Err(Error::corrupt(
                    dir.join(&m.image),
                    format!("mask does not match manifest for {}", m.id),
                ));
            }
            Ok(DatasetEntry {
                id: m.id,
                split: m.split,
                seed: m.seed,
                sample: LabeledSample {
                    image,
                    gt_mask,
                    lesion_pixels: m.lesion_pixels,
                    stratum: m.stratum,
                },
            })
        })
        .collect()
}
