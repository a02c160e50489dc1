//! Crop-tree walking and manifest assembly.
//!
//! Layout: root/<subject_id>/<live|spoof>/<attack_type?>/<video_id>/<frame>.png
//! where the attack_type level exists exactly for spoof branches.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::ingest::{AttackType, DatasetManifest, Label, SampleRecord, Split};

/// One video directory found in a layout walk.
#[derive(Debug, Clone)]
pub(crate) struct VideoEntry {
    pub subject_id: String,
    pub label: Label,
    pub attack_type: AttackType,
    pub video_id: String,
    pub dir: PathBuf,
}

fn dir_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| CoreError::layout(path, "non-UTF8 or empty path component"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))? {
        out.push(entry.map_err(|e| CoreError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn expect_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CoreError::layout(
            path,
            format!("expected a {what} directory, found a file"),
        ))
    }
}

/// Walks a dataset tree, validating structure; returns videos in
/// lexicographic (subject, label, attack, video) order.
pub(crate) fn walk_layout(root: &Path) -> Result<Vec<VideoEntry>> {
    let mut videos = Vec::new();
    if !root.is_dir() {
        return Err(CoreError::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    for subject_dir in sorted_entries(root)? {
        expect_dir(&subject_dir, "subject")?;
        let subject_id = dir_name(&subject_dir)?;
        for label_dir in sorted_entries(&subject_dir)? {
            expect_dir(&label_dir, "label")?;
            let label = match dir_name(&label_dir)?.as_str() {
                "live" => Label::Live,
                "spoof" => Label::Spoof,
                other => {
                    return Err(CoreError::layout(
                        &label_dir,
                        format!("label directory must be 'live' or 'spoof', got '{other}'"),
                    ))
                }
            };
            let attack_dirs: Vec<(AttackType, PathBuf)> = match label {
                Label::Live => vec![(AttackType::None, label_dir.clone())],
                Label::Spoof => {
                    let mut dirs = Vec::new();
                    for attack_dir in sorted_entries(&label_dir)? {
                        expect_dir(&attack_dir, "attack-type")?;
                        let name = dir_name(&attack_dir)?;
                        let attack = AttackType::parse(&name).ok_or_else(|| {
                            CoreError::layout(
                                &attack_dir,
                                format!("unknown attack type '{name}'"),
                            )
                        })?;
                        if attack == AttackType::None {
                            return Err(CoreError::layout(
                                &attack_dir,
                                "spoof branch cannot use attack type 'none'",
                            ));
                        }
                        dirs.push((attack, attack_dir));
                    }
                    dirs
                }
            };
            for (attack_type, parent) in attack_dirs {
                for video_dir in sorted_entries(&parent)? {
                    expect_dir(&video_dir, "video")?;
                    videos.push(VideoEntry {
                        subject_id: subject_id.clone(),
                        label,
                        attack_type,
                        video_id: dir_name(&video_dir)?,
                        dir: video_dir,
                    });
                }
            }
        }
    }
    Ok(videos)
}

/// Builds a manifest over a crop tree: one record per stored frame, ordered
/// lexicographically by (subject, video, frame); splits start unassigned.
pub fn build_manifest(root: &Path, seed: u64) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let mut seen: BTreeSet<(String, String, u32)> = BTreeSet::new();
    for video in walk_layout(root)? {
        for frame_path in sorted_entries(&video.dir)? {
            if frame_path.is_dir() {
                return Err(CoreError::layout(
                    &frame_path,
                    "unexpected directory inside a video",
                ));
            }
            let stem = frame_path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CoreError::layout(&frame_path, "unreadable frame filename"))?;
            if frame_path.extension().and_then(|e| e.to_str()) != Some("png") {
                return Err(CoreError::layout(&frame_path, "frame files must be .png"));
            }
            let frame_index: u32 = stem.parse().map_err(|_| {
                CoreError::layout(
                    &frame_path,
                    format!("frame stem '{stem}' is not a non-negative integer"),
                )
            })?;
            let key = (
                video.subject_id.clone(),
                video.video_id.clone(),
                frame_index,
            );
            if !seen.insert(key) {
                return Err(CoreError::Duplicate { path: frame_path });
            }
            records.push(SampleRecord {
                subject_id: video.subject_id.clone(),
                video_id: video.video_id.clone(),
                frame_index,
                label: video.label,
                attack_type: video.attack_type,
                split: Split::Unassigned,
                path: frame_path,
            });
        }
    }
    records.sort_by(|a, b| {
        (&a.subject_id, &a.video_id, a.frame_index).cmp(&(
            &b.subject_id,
            &b.video_id,
            b.frame_index,
        ))
    });
    Ok(DatasetManifest {
        seed,
        root: root.to_path_buf(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;

    fn touch_png(path: &Path) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        crate::image_buffer::ImageBuffer::constant(2, 2, [0.5; 3])
            .save_png(path)
            .unwrap();
    }

    fn two_subject_fixture(root: &Path) {
        for s in ["s1", "s2"] {
            for i in 0..3u32 {
                touch_png(&root.join(s).join("live/v_live/").join(format!("{i}.png")));
                touch_png(&root.join(s).join("spoof/print/v_print/").join(format!("{i}.png")));
            }
        }
    }

    #[test]
    fn empty_root_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_manifest(dir.path(), 1).unwrap();
        assert!(m.records.is_empty());
    }

    #[test]
    fn missing_root_is_io_error() {
        let err = build_manifest(Path::new("/nonexistent/tree"), 1).unwrap_err();
        assert!(matches!(err, CoreError::Io { .. }));
    }

    #[test]
    fn fixture_counts_and_order() {
        let dir = tempfile::tempdir().unwrap();
        two_subject_fixture(dir.path());
        let m = build_manifest(dir.path(), 1).unwrap();
        assert_eq!(m.records.len(), 12);
        let t = m.tallies();
        for s in ["s1", "s2"] {
            assert_eq!(t[&(s.to_string(), Label::Live)], 3);
            assert_eq!(t[&(s.to_string(), Label::Spoof)], 3);
        }
        let ordered: Vec<_> = m
            .records
            .iter()
            .map(|r| (r.subject_id.clone(), r.video_id.clone(), r.frame_index))
            .collect();
        let mut sorted = ordered.clone();
        sorted.sort();
        assert_eq!(ordered, sorted);
        for r in &m.records {
            r.validate().unwrap();
            assert_eq!(r.split, Split::Unassigned);
            assert!(r.path.exists());
        }
    }

    #[test]
    fn rebuild_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        two_subject_fixture(dir.path());
        let a = build_manifest(dir.path(), 5).unwrap();
        let b = build_manifest(dir.path(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_frame_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        // "7.png" and "07.png" parse to the same frame index.
        touch_png(&dir.path().join("s1/live/v1/7.png"));
        touch_png(&dir.path().join("s1/live/v1/07.png"));
        let err = build_manifest(dir.path(), 1).unwrap_err();
        assert!(matches!(err, CoreError::Duplicate { .. }));
    }

    #[test]
    fn malformed_layouts_name_offending_path() {
        let dir = tempfile::tempdir().unwrap();
        touch_png(&dir.path().join("s1/live/v1/0.png"));

        std::fs::write(dir.path().join("stray.txt"), "x").unwrap();
        let err = build_manifest(dir.path(), 1).unwrap_err();
        assert!(err.to_string().contains("stray.txt"));
        std::fs::remove_file(dir.path().join("stray.txt")).unwrap();

        let bad_label = dir.path().join("s1/synthetic");
        std::fs::create_dir_all(&bad_label).unwrap();
        let err = build_manifest(dir.path(), 1).unwrap_err();
        assert!(err.to_string().contains("synthetic"));
        std::fs::remove_dir(&bad_label).unwrap();

        touch_png(&dir.path().join("s1/spoof/paper/v1/0.png"));
        let err = build_manifest(dir.path(), 1).unwrap_err();
        assert!(err.to_string().contains("paper"));
    }

    #[test]
    fn non_integer_frame_stem_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch_png(&dir.path().join("s1/live/v1/frame_a.png"));
        let err = build_manifest(dir.path(), 1).unwrap_err();
        assert!(err.to_string().contains("frame_a"));
    }
}
