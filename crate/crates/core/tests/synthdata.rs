use std::fs;

use autoddpm::synthdata::{
    build_dataset, dataset_load, dataset_save, generate_healthy, inject_anomaly, stratify_sizes, AnomalySpec,
    DatasetConfig, IntensityMode, PhantomParams, SizeRanges, Split, Stratum, MANIFEST_FILE,
};
use autoddpm::{Error, RandomSource};
use proptest::prelude::*;

fn small_cfg(seed: u64) -> DatasetConfig {
    DatasetConfig {
        phantom: PhantomParams { height: 32, width: 32, ..PhantomParams::default() },
        n_train: 6,
        n_val: 2,
        n_test_healthy: 2,
        n_test_anomalous: 9,
        class_weights: [1.0, 1.0, 1.0],
        seed,
        ..DatasetConfig::default()
    }
}

#[test]
fn dataset_is_deterministic_and_seed_dependent() {
    let a = build_dataset(&small_cfg(1)).unwrap();
    let b = build_dataset(&small_cfg(1)).unwrap();
    let c = build_dataset(&small_cfg(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].sample.image, c[0].sample.image);
}

#[test]
fn dataset_layout() {
    let entries = build_dataset(&small_cfg(3)).unwrap();
    assert_eq!(entries.len(), 19);
    let count = |s: Split| entries.iter().filter(|e| e.split == s).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (6, 2, 11));
    let ranges = small_cfg(3).size_ranges();
    for e in &entries {
        assert!(e.sample.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(e.sample.image.shape(), (32, 32));
        e.sample.check(&ranges).unwrap();
        let anomalous = e.id.starts_with("test-a-");
        assert_eq!(e.sample.is_anomalous(), anomalous, "{}", e.id);
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let entries = build_dataset(&small_cfg(4)).unwrap();
    dataset_save(&entries, dir.path()).unwrap();
    assert_eq!(dataset_load(dir.path()).unwrap(), entries);
}

#[test]
fn manifest_faults() {
    let dir = tempfile::tempdir().unwrap();
    let entries = build_dataset(&small_cfg(5)).unwrap();
    dataset_save(&entries, dir.path()).unwrap();
    let manifest = dir.path().join(MANIFEST_FILE);
    let good = fs::read_to_string(&manifest).unwrap();

    fs::write(&manifest, &good[..good.len() / 2]).unwrap();
    assert!(matches!(dataset_load(dir.path()), Err(Error::Corrupt { .. })));

    fs::write(&manifest, good.replacen("\"version\": 1", "\"version\": 7", 1)).unwrap();
    assert!(matches!(dataset_load(dir.path()), Err(Error::VersionMismatch { found: 7, .. })));

    let anomalous = entries.iter().find(|e| e.sample.is_anomalous()).unwrap();
    let needle = format!("\"lesion_pixels\": {}", anomalous.sample.lesion_pixels);
    fs::write(&manifest, good.replacen(&needle, "\"lesion_pixels\": 1", 1)).unwrap();
    let err = dataset_load(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Corrupt { .. }), "{err}");

    fs::write(&manifest, &good).unwrap();
    fs::remove_file(dir.path().join(format!("{}.img", entries[0].id))).unwrap();
    assert!(matches!(dataset_load(dir.path()), Err(Error::Io { .. })));

    assert!(matches!(dataset_load(&dir.path().join("absent")), Err(Error::Io { .. })));
}

#[test]
fn invalid_configs_rejected() {
    let bad = [
        DatasetConfig { class_weights: [0.0; 3], ..small_cfg(0) },
        DatasetConfig { hyper_fraction: 2.0, ..small_cfg(0) },
        DatasetConfig { phantom: PhantomParams { height: 30, ..PhantomParams::default() }, ..small_cfg(0) },
    ];
    for cfg in bad {
        assert!(matches!(build_dataset(&cfg), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn size_ranges_scale_with_area() {
    assert_eq!(SizeRanges::for_area(64 * 64), SizeRanges::default());
    for side in [16usize, 32, 48, 128] {
        let r = SizeRanges::for_area(side * side);
        r.validate().unwrap();
        assert_eq!(r.classify(r.small.0), Some(Stratum::Small));
        assert_eq!(r.classify(r.large.1), Some(Stratum::Large));
        assert_eq!(r.classify(r.large.1 + 1), None);
    }
}

#[test]
fn stratify_sizes_quartiles() {
    let s = stratify_sizes(&[5, 1, 9, 3, 7], 0.25, 0.75).unwrap();
    assert_eq!(s, vec![Stratum::Medium, Stratum::Small, Stratum::Large, Stratum::Medium, Stratum::Medium]);
    assert!(matches!(stratify_sizes(&[], 0.25, 0.75), Err(Error::EmptyDataset)));
    assert!(stratify_sizes(&[1, 2], 0.8, 0.2).is_err());
    assert!(stratify_sizes(&[0, 2], 0.25, 0.75).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lesion_mask_marks_exactly_the_altered_pixels(seed in any::<u64>(), class in 0usize..3, hyper in any::<bool>()) {
        let params = PhantomParams { height: 32, width: 32, ..PhantomParams::default() };
        let mut rng = RandomSource::from_seed(seed);
        let img = generate_healthy(&params, &mut rng).unwrap();
        let mode = if hyper { IntensityMode::Hyper } else { IntensityMode::Hypo };
        let spec = AnomalySpec {
            ranges: SizeRanges::for_area(32 * 32),
            foreground_threshold: params.foreground_threshold(),
            ..AnomalySpec::new(Stratum::ALL[class], mode)
        };
        let s = inject_anomaly(&img, &spec, &mut rng).unwrap();
        let (lo, hi) = spec.ranges.range(Stratum::ALL[class]);
        prop_assert!((lo..=hi).contains(&s.lesion_pixels));
        prop_assert_eq!(s.altered_pixels(&img), s.gt_mask.count());
        for i in 0..img.len() {
            let changed = s.image.data()[i] != img.data()[i];
            prop_assert_eq!(changed, s.gt_mask.data()[i] == 1);
            if changed {
                let up = s.image.data()[i] > img.data()[i];
                prop_assert_eq!(up, hyper);
            }
        }
    }

    #[test]
    fn phantoms_stay_in_unit_range(seed in any::<u64>()) {
        let params = PhantomParams { height: 16, width: 16, ..PhantomParams::default() };
        let img = generate_healthy(&params, &mut RandomSource::from_seed(seed)).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn stratify_orders_by_size(sizes in prop::collection::vec(1usize..500, 1..40)) {
        let s = stratify_sizes(&sizes, 0.25, 0.75).unwrap();
        for i in 0..sizes.len() {
            for j in 0..sizes.len() {
                if sizes[i] < sizes[j] {
                    prop_assert!(s[i] <= s[j]);
                }
            }
        }
    }
}
