//! Video-atomic holdout splitting and style-source sampling.
//!
//! Splits assign whole videos so consecutive near-duplicate frames never
//! straddle train/test. Per-(subject,label) RNG streams are derived from the
//! base seed, so the assignment of one group never disturbs another.

use std::collections::BTreeMap;

use fas_nn::rng::{derive_seed, seeded_rng};
use rand::seq::SliceRandom;

use crate::error::{CoreError, Result};
use crate::ingest::{DatasetManifest, Label, SampleRecord, Split};

const RATIO_EPS: f64 = 1e-9;

/// Assigns splits video-atomically: per (subject, label), seeded-shuffled
/// videos go to train until the train side holds >= train_fraction of the
/// group's frames; the rest go to test. Returns the split manifest and any
/// leakage warnings (single-video groups, empty test sides).
pub fn split_holdout(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, Vec<String>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CoreError::InvalidInput(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    // (subject, label) -> video -> frame count.
    let mut groups: BTreeMap<(String, Label), BTreeMap<String, usize>> = BTreeMap::new();
    for r in &manifest.records {
        *groups
            .entry((r.subject_id.clone(), r.label))
            .or_default()
            .entry(r.video_id.clone())
            .or_insert(0) += 1;
    }

    let mut warnings = Vec::new();
    // (subject, label, video) -> split.
    let mut assignment: BTreeMap<(String, Label, String), Split> = BTreeMap::new();
    for ((subject, label), videos) in &groups {
        let mut names: Vec<&String> = videos.keys().collect();
        if names.len() == 1 {
            warnings.push(format!(
                "subject {subject} has a single {label} video '{}'; assigned to train \
                 (no held-out {label} data)",
                names[0]
            ));
            assignment.insert((subject.clone(), *label, names[0].clone()), Split::Train);
            continue;
        }
        let mut rng = seeded_rng(derive_seed(seed, &format!("split/{subject}/{label}")));
        names.shuffle(&mut rng);
        let total: usize = videos.values().sum();
        let need = train_fraction * total as f64 - RATIO_EPS;
        let mut train_frames = 0usize;
        let mut test_started = false;
        for name in names {
            let split = if !test_started && (train_frames as f64) < need {
                train_frames += videos[name];
                Split::Train
            } else {
                test_started = true;
                Split::Test
            };
            assignment.insert((subject.clone(), *label, name.clone()), split);
        }
        if !test_started {
            warnings.push(format!(
                "subject {subject} {label}: every video needed to reach the train \
                 fraction; test side is empty"
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let records = manifest
        .records
        .iter()
        .map(|r| {
            let split = assignment[&(r.subject_id.clone(), r.label, r.video_id.clone())];
            SampleRecord {
                split,
                ..r.clone()
            }
        })
        .collect();
    Ok((
        DatasetManifest {
            seed,
            root: manifest.root.clone(),
            records,
        },
        warnings,
    ))
}

/// Uniform per-subject sample (without replacement) of live train records,
/// size round(fraction x live-train count) each. Subjects with no live train
/// records are skipped with a warning.
pub fn sample_style_sources(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CoreError::InvalidInput(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if manifest.records.iter().any(|r| r.split == Split::Unassigned) {
        return Err(CoreError::InvalidInput(
            "manifest has unassigned splits; run split_holdout first".into(),
        ));
    }
    let mut by_subject: BTreeMap<String, Vec<&SampleRecord>> = BTreeMap::new();
    for r in &manifest.records {
        by_subject.entry(r.subject_id.clone()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (subject, records) in &by_subject {
        let mut live_train: Vec<&SampleRecord> = records
            .iter()
            .copied()
            .filter(|r| r.label == Label::Live && r.split == Split::Train)
            .collect();
        if live_train.is_empty() {
            log::warn!("subject {subject} has no live train records; skipped for style sources");
            continue;
        }
        let k = (fraction * live_train.len() as f64).round() as usize;
        let mut rng = seeded_rng(derive_seed(seed, &format!("style-src/{subject}")));
        live_train.shuffle(&mut rng);
        let mut chosen: Vec<SampleRecord> =
            live_train.into_iter().take(k).cloned().collect();
        chosen.sort_by(|a, b| {
            (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index))
        });
        out.extend(chosen);
    }
    Ok(out)
}
