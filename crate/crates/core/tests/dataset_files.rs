use std::path::{Path, PathBuf};

use coughpipe::audio_io::{write_wav, AudioClip};
use coughpipe::dsp::{SpectralAnalyzer, SpectralConfig};
use coughpipe::features::{
    build_dataset, read_manifest, write_manifest, Activity, ActivityFilter, FeatureError, FeatureExtractor, Label,
    ManifestRow,
};
use coughpipe::rng::substream;
use rand::Rng;

fn noise_clip(seed: u64, secs: f64) -> AudioClip {
    let mut rng = substream(seed, 0);
    let n = (secs * 16_000.0) as usize;
    AudioClip::new((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect(), 16_000)
}

/// Writes `rows` clips named `clip_{i}.wav` (skipping indices in `missing`)
/// and a manifest listing all of them.
fn corpus(dir: &Path, rows: &[(Label, Activity)], missing: &[usize]) -> PathBuf {
    let mut manifest = Vec::new();
    for (i, &(label, activity)) in rows.iter().enumerate() {
        let rel = PathBuf::from(format!("clip_{i:03}.wav"));
        if !missing.contains(&i) {
            write_wav(dir.join(&rel), &noise_clip(i as u64, 0.5)).unwrap();
        }
        manifest.push(ManifestRow {
            path: rel,
            label,
            activity,
            subject: format!("s{}", i % 3),
            burst_count: None,
        });
    }
    let path = dir.join("manifest.csv");
    write_manifest(&path, &manifest).unwrap();
    path
}

fn extractor() -> FeatureExtractor {
    FeatureExtractor::new(&SpectralConfig::default()).unwrap()
}

#[test]
fn small_manifest_builds_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [
        (Label::Cough, Activity::Walking),
        (Label::Cough, Activity::Sitting),
        (Label::NonCough, Activity::Walking),
        (Label::NonCough, Activity::Standing),
        (Label::NonCough, Activity::Unknown),
    ];
    let manifest = read_manifest(corpus(dir.path(), &rows, &[])).unwrap();
    let out = build_dataset(&manifest, &extractor(), ActivityFilter::All).unwrap();
    assert_eq!(out.dataset.len(), 5);
    assert!(out.failures.is_empty());
    let label_sum: u32 = out.dataset.rows.iter().map(|r| u32::from(r.label.as_u8())).sum();
    assert_eq!(label_sum, 2);
    assert!(out.dataset.rows.iter().all(|r| r.features.values.len() == 80));
}

#[test]
fn one_missing_file_in_a_hundred_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (0..100)
        .map(|i| (if i % 2 == 0 { Label::Cough } else { Label::NonCough }, Activity::Unknown))
        .collect();
    let manifest = read_manifest(corpus(dir.path(), &rows, &[37])).unwrap();
    let out = build_dataset(&manifest, &extractor(), ActivityFilter::All).unwrap();
    assert_eq!(out.dataset.len(), 99);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].index, 37);
    assert!(out.dataset.rows.iter().all(|r| r.clip_id() != "clip_037.wav"));
}

#[test]
fn too_many_missing_files_abort() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![(Label::Cough, Activity::Unknown); 20];
    let manifest = read_manifest(corpus(dir.path(), &rows, &[1, 2, 3])).unwrap();
    let err = build_dataset(&manifest, &extractor(), ActivityFilter::All).unwrap_err();
    assert!(matches!(err, FeatureError::TooManyFailures { failed: 3, total: 20, .. }), "{err}");
}

#[test]
fn activity_filter_keeps_only_matching_rows() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (0..12)
        .map(|i| {
            let activity = [Activity::Walking, Activity::Sitting, Activity::Standing, Activity::Unknown][i % 4];
            (if i % 2 == 0 { Label::Cough } else { Label::NonCough }, activity)
        })
        .collect();
    let manifest = read_manifest(corpus(dir.path(), &rows, &[])).unwrap();
    let walking = build_dataset(&manifest, &extractor(), ActivityFilter::Walking).unwrap();
    assert_eq!(walking.dataset.len(), 3);
    assert!(walking.dataset.rows.iter().all(|r| r.activity == Activity::Walking));
    let non_walking = build_dataset(&manifest, &extractor(), ActivityFilter::NonWalking).unwrap();
    assert_eq!(non_walking.dataset.len(), 6);
    assert!(non_walking
        .dataset
        .rows
        .iter()
        .all(|r| matches!(r.activity, Activity::Sitting | Activity::Standing)));
    assert_eq!(build_dataset(&manifest, &extractor(), ActivityFilter::All).unwrap().dataset.len(), 12);
}

#[test]
fn features_are_column_means_of_mfcc_and_log_mel() {
    let clip = noise_clip(99, 1.3);
    let cfg = SpectralConfig::default();
    let analyzer = SpectralAnalyzer::new(&cfg, 16_000).unwrap();
    let column_means = |rows: Vec<&[f64]>| {
        let n = rows.len() as f64;
        (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect::<Vec<f64>>()
    };
    let mfcc = analyzer.mfcc(&clip).unwrap();
    let log_mel = analyzer.log_mel(&clip).unwrap();
    let mut expected = column_means(mfcc.rows().collect());
    expected.extend(column_means(log_mel.rows().collect()));
    let got = extractor().extract(&clip, "x").unwrap();
    assert_eq!(got.values.len(), 80);
    for (a, b) in got.values.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn manifest_without_required_column_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "path,label,subject\na.wav,cough,s\n").unwrap();
    let err = read_manifest(&path).unwrap_err();
    assert!(err.to_string().contains("activity"), "{err}");
}
