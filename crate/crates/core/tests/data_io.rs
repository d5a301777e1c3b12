use std::fs;

use mim::data::{fnc_features, generate_synthetic, load_dataset, save_dataset, zscore, Split, SubjectSeries, SynthConfig};
use mim::harness::metrics::welch_t_test;
use mim::{MimError, Tensor};
use proptest::prelude::*;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        regions: 6,
        timepoints: 30,
        subjects: 5,
        block_size: 2,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn save_then_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = generate_synthetic(&small(1)).unwrap();
    data[0].split = Some(Split::Test);
    data[1].label = None;
    data[1].split = Some(Split::Val);
    let manifest = save_dataset(&data, dir.path()).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back, data);
}

#[test]
fn same_seed_writes_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(&generate_synthetic(&small(3)).unwrap(), a.path()).unwrap();
    save_dataset(&generate_synthetic(&small(3)).unwrap(), b.path()).unwrap();
    for name in ["manifest.csv", "subjects/sub000.csv", "subjects/sub004.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

fn write(dir: &std::path::Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn loader_errors_are_specific() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "a.csv", "1,2,3\n4,5,6\n");
    write(d, "ragged.csv", "1,2,3\n4,5\n");
    write(d, "text.csv", "1,2,x\n4,5,6\n");
    write(d, "wide.csv", "1,2,3,4\n4,5,6,7\n");

    write(d, "m1.csv", "s1,missing.csv,0\n");
    assert!(matches!(load_dataset(&d.join("m1.csv")), Err(MimError::MissingFile { .. })));
    write(d, "m2.csv", "s1,ragged.csv\n");
    assert!(matches!(load_dataset(&d.join("m2.csv")), Err(MimError::RaggedRow { line: 2, .. })));
    write(d, "m3.csv", "s1,text.csv\n");
    match load_dataset(&d.join("m3.csv")) {
        Err(MimError::NonNumeric { cell, .. }) => assert_eq!(cell, "x"),
        other => panic!("{other:?}"),
    }
    write(d, "m4.csv", "s1,a.csv,1\ns1,a.csv,0\n");
    assert!(matches!(load_dataset(&d.join("m4.csv")), Err(MimError::DuplicateSubject(_))));
    write(d, "m5.csv", "s1,a.csv\ns2,wide.csv\n");
    assert!(matches!(load_dataset(&d.join("m5.csv")), Err(MimError::Heterogeneous { .. })));
    write(d, "m6.csv", "s1,a.csv,1,holdout\n");
    assert!(matches!(load_dataset(&d.join("m6.csv")), Err(MimError::Manifest { line: 1, .. })));
    write(d, "m7.csv", "s1,a.csv,1,train\ns2,a.csv,,test\n");
    let ok = load_dataset(&d.join("m7.csv")).unwrap();
    assert_eq!((ok[0].label, ok[0].split), (Some(1), Some(Split::Train)));
    assert_eq!((ok[1].label, ok[1].split), (None, Some(Split::Test)));
}

#[test]
fn classes_are_alternating_and_ids_unique() {
    let data = generate_synthetic(&small(2)).unwrap();
    let labels: Vec<_> = data.iter().map(|s| s.label.unwrap()).collect();
    assert_eq!(labels, vec![0, 1, 0, 1, 0]);
    let unl = generate_synthetic(&SynthConfig { labeled: false, ..small(2) }).unwrap();
    assert!(unl.iter().all(|s| s.label.is_none() && s.subject_id.starts_with("pre")));
}

fn mean_fnc(s: &SubjectSeries) -> f64 {
    let f = fnc_features(s).unwrap();
    f.iter().sum::<f64>() / f.len() as f64
}

#[test]
fn without_block_the_classes_match() {
    let cfg = SynthConfig {
        subjects: 120,
        block_strength: 0.0,
        seed: 11,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg).unwrap();
    let (a, b): (Vec<_>, Vec<_>) = data.iter().partition(|s| s.label == Some(0));
    let ma: Vec<f64> = a.iter().map(|s| mean_fnc(s)).collect();
    let mb: Vec<f64> = b.iter().map(|s| mean_fnc(s)).collect();
    let t = welch_t_test(&ma, &mb).unwrap();
    assert!(t.p > 0.01, "p = {}", t.p);
}

#[test]
fn generated_series_are_finite_and_sized() {
    for s in generate_synthetic(&small(4)).unwrap() {
        assert_eq!((s.regions(), s.timepoints()), (6, 30));
        assert!(s.series.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zscore_gives_unit_rows(rows in 1usize..5, cols in 2usize..30, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = SubjectSeries::new("p", Tensor::new(vec![rows, cols], data).unwrap());
        let z = zscore(&s).unwrap();
        for i in 0..rows {
            let r = z.series.row(i);
            let m = r.iter().sum::<f64>() / cols as f64;
            let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(m.abs() < 1e-12);
            prop_assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn fnc_is_bounded_and_sized(seed in any::<u64>()) {
        let s = &generate_synthetic(&SynthConfig { subjects: 1, seed, ..small(0) }).unwrap()[0];
        let f = fnc_features(s).unwrap();
        prop_assert_eq!(f.len(), 15);
        prop_assert!(f.iter().all(|c| c.abs() <= 1.0 + 1e-12));
    }
}
