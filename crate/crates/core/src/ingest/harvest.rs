//! Frame extraction and face cropping.
//!
//! A "video" is a directory of frame images; frames are ordered by numeric
//! filename stem when every stem parses, lexicographically otherwise. This
//! keeps the pipeline free of codec dependencies while preserving the
//! frame-at-stride contract.

use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;
use crate::ingest::detector::FaceDetector;
use crate::ingest::manifest::walk_layout;
use crate::ingest::{CropSpec, Label};

fn ordered_frame_paths(video: &Path) -> Result<Vec<PathBuf>> {
    if !video.is_dir() {
        return Err(CoreError::io(
            video,
            std::io::Error::new(std::io::ErrorKind::NotFound, "video directory not found"),
        ));
    }
    let mut names: Vec<(Option<u64>, String)> = Vec::new();
    for entry in std::fs::read_dir(video).map_err(|e| CoreError::io(video, e))? {
        let entry = entry.map_err(|e| CoreError::io(video, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let stem = Path::new(&name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        names.push((stem.parse::<u64>().ok(), name));
    }
    let numeric = names.iter().all(|(n, _)| n.is_some());
    if numeric {
        names.sort_by_key(|(n, name)| (n.unwrap(), name.clone()));
    } else {
        names.sort_by(|a, b| a.1.cmp(&b.1));
    }
    Ok(names.into_iter().map(|(_, name)| video.join(name)).collect())
}

/// Decodes frames at indices 0, stride, 2·stride, …; count = ceil(total/stride).
pub fn extract_frames(video: &Path, stride: usize) -> Result<Vec<ImageBuffer>> {
    if stride == 0 {
        return Err(CoreError::InvalidInput("stride must be >= 1".into()));
    }
    let paths = ordered_frame_paths(video)?;
    if paths.is_empty() {
        return Err(CoreError::EmptySource {
            path: video.to_path_buf(),
        });
    }
    paths
        .iter()
        .step_by(stride)
        .map(|p| ImageBuffer::load_png(p))
        .collect()
}

/// Crops the detected face, expanded by `margin` x box dimension per side and
/// clamped to image bounds, then resized to the square output size. Returns
/// none when the detector finds no face.
pub fn detect_and_crop(
    image: &ImageBuffer,
    spec: &CropSpec,
    detector: &dyn FaceDetector,
) -> Result<Option<ImageBuffer>> {
    spec.validate()?;
    let Some(b) = detector.detect(image) else {
        return Ok(None);
    };
    if b.h == 0 || b.w == 0 || b.y + b.h > image.height() || b.x + b.w > image.width() {
        return Err(CoreError::InvalidInput(format!(
            "detector returned box {b:?} outside image {}x{}",
            image.height(),
            image.width()
        )));
    }
    let my = spec.margin * b.h as f64;
    let mx = spec.margin * b.w as f64;
    let y0 = (b.y as f64 - my).floor().max(0.0) as usize;
    let x0 = (b.x as f64 - mx).floor().max(0.0) as usize;
    let y1 = ((b.y + b.h) as f64 + my).ceil().min(image.height() as f64) as usize;
    let x1 = ((b.x + b.w) as f64 + mx).ceil().min(image.width() as f64) as usize;
    let region = image.crop(y0, x0, y1 - y0, x1 - x0)?;
    Ok(Some(region.resize_bilinear(spec.output_size, spec.output_size)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HarvestStats {
    pub videos: usize,
    pub saved: usize,
    /// Frames where no face was detected (logged, not errors).
    pub skipped: usize,
}

/// Harvests a source tree (same subject/label/attack/video layout as the crop
/// tree) into `out`, storing crops as <frame_source_index>.png.
pub fn materialize(
    src: &Path,
    out: &Path,
    spec: &CropSpec,
    stride: usize,
    detector: &dyn FaceDetector,
) -> Result<HarvestStats> {
    spec.validate()?;
    let mut stats = HarvestStats::default();
    for video in walk_layout(src)? {
        stats.videos += 1;
        let frames = extract_frames(&video.dir, stride)?;
        let rel = match video.label {
            Label::Live => PathBuf::from(&video.subject_id)
                .join("live")
                .join(&video.video_id),
            Label::Spoof => PathBuf::from(&video.subject_id)
                .join("spoof")
                .join(video.attack_type.as_str())
                .join(&video.video_id),
        };
        for (i, frame) in frames.iter().enumerate() {
            match detect_and_crop(frame, spec, detector)? {
                Some(crop) => {
                    let path = out.join(&rel).join(format!("{}.png", i * stride));
                    crop.save_png(&path)?;
                    stats.saved += 1;
                }
                None => {
                    stats.skipped += 1;
                    log::warn!(
                        "no face in {} frame {} of video {}",
                        video.subject_id,
                        i * stride,
                        video.video_id
                    );
                }
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::detector::{FaceBox, FullFrameDetector};
    use crate::ingest::manifest::build_manifest;

    fn write_frames(dir: &Path, count: usize) {
        std::fs::create_dir_all(dir).unwrap();
        for i in 0..count {
            ImageBuffer::constant(8, 8, [i as f64 / 255.0; 3])
                .save_png(&dir.join(format!("{i}.png")))
                .unwrap();
        }
    }

    #[test]
    fn stride_counts_match_ceiling() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), 100);
        assert_eq!(extract_frames(dir.path(), 1).unwrap().len(), 100);
        assert_eq!(extract_frames(dir.path(), 7).unwrap().len(), 15);
        assert!(matches!(
            extract_frames(dir.path(), 0),
            Err(CoreError::InvalidInput(_))
        ));
    }

    #[test]
    fn frames_are_ordered_numerically() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path()).unwrap();
        // 2 and 10 sort wrongly as strings; numerically 2 < 10.
        for i in [10u32, 2, 1] {
            ImageBuffer::constant(4, 4, [i as f64 / 255.0; 3])
                .save_png(&dir.path().join(format!("{i}.png")))
                .unwrap();
        }
        let frames = extract_frames(dir.path(), 1).unwrap();
        let vals: Vec<u32> = frames
            .iter()
            .map(|f| (f.get(0, 0, 0) * 255.0).round() as u32)
            .collect();
        assert_eq!(vals, vec![1, 2, 10]);
    }

    #[test]
    fn empty_and_missing_sources_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            extract_frames(dir.path(), 1),
            Err(CoreError::EmptySource { .. })
        ));
        assert!(matches!(
            extract_frames(&dir.path().join("missing"), 1),
            Err(CoreError::Io { .. })
        ));
    }

    #[test]
    fn undecodable_frame_is_image_error_with_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("0.png"), b"not a png").unwrap();
        let err = extract_frames(dir.path(), 1).unwrap_err();
        assert!(matches!(err, CoreError::Image { .. }));
        assert!(err.to_string().contains("0.png"));
    }

    #[test]
    fn full_frame_crop_has_contract_shape() {
        let img = ImageBuffer::constant(64, 48, [0.3; 3]);
        let spec = CropSpec::default();
        let out = detect_and_crop(&img, &spec, &FullFrameDetector)
            .unwrap()
            .unwrap();
        assert_eq!((out.height(), out.width()), (256, 256));
    }

    struct FixedBox(Option<FaceBox>);
    impl FaceDetector for FixedBox {
        fn detect(&self, _: &ImageBuffer) -> Option<FaceBox> {
            self.0
        }
    }

    #[test]
    fn no_face_returns_none() {
        let img = ImageBuffer::constant(32, 32, [0.0; 3]);
        let out = detect_and_crop(&img, &CropSpec::default(), &FixedBox(None)).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn corner_box_is_clamped_and_still_square_output() {
        // Position-coded image: value = (y*W + x) scaled into [0,1].
        let img = ImageBuffer::from_fn(40, 40, |_, y, x| (y * 40 + x) as f64 / 1600.0);
        let spec = CropSpec {
            output_size: 22,
            margin: 0.1,
            detector: "full-frame".into(),
        };
        // Box at the corner: expansion by 2px would go negative; clamped to 0.
        let det = FixedBox(Some(FaceBox { y: 0, x: 0, h: 20, w: 20 }));
        let out = detect_and_crop(&img, &spec, &det).unwrap().unwrap();
        assert_eq!((out.height(), out.width()), (22, 22));
        // Clamped region is rows/cols [0, 22): identity resize, so pixels match.
        let expect = img.crop(0, 0, 22, 22).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn interior_box_expands_by_margin() {
        let img = ImageBuffer::from_fn(40, 40, |_, y, x| (y * 40 + x) as f64 / 1600.0);
        let spec = CropSpec {
            output_size: 24,
            margin: 0.1,
            detector: "full-frame".into(),
        };
        let det = FixedBox(Some(FaceBox { y: 10, x: 10, h: 20, w: 20 }));
        let out = detect_and_crop(&img, &spec, &det).unwrap().unwrap();
        // Expanded region: [8, 32) in both axes, 24x24 at output 24: identity.
        let expect = img.crop(8, 8, 24, 24).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn materialize_builds_crop_tree_and_counts_skips() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        let out = dir.path().join("crops");
        write_frames(&src.join("s1/live/v1"), 5);
        write_frames(&src.join("s1/spoof/print/v2"), 4);
        let spec = CropSpec {
            output_size: 16,
            margin: 0.1,
            detector: "full-frame".into(),
        };
        let stats = materialize(&src, &out, &spec, 2, &FullFrameDetector).unwrap();
        assert_eq!(stats, HarvestStats { videos: 2, saved: 5, skipped: 0 });
        let m = build_manifest(&out, 0).unwrap();
        assert_eq!(m.records.len(), 5);
        // Frame indices carry the source position at stride 2.
        let idx: Vec<u32> = m
            .records
            .iter()
            .filter(|r| r.video_id == "v1")
            .map(|r| r.frame_index)
            .collect();
        assert_eq!(idx, vec![0, 2, 4]);

        struct EveryOther;
        impl FaceDetector for EveryOther {
            fn detect(&self, image: &ImageBuffer) -> Option<FaceBox> {
                // Skips frames whose top-left intensity is odd (position-coded).
                let v = (image.get(0, 0, 0) * 255.0).round() as u32;
                (v % 2 == 0).then(|| FaceBox { y: 0, x: 0, h: 8, w: 8 })
            }
        }
        let out2 = dir.path().join("crops2");
        let stats = materialize(&src, &out2, &spec, 1, &EveryOther).unwrap();
        assert_eq!(stats.videos, 2);
        assert_eq!(stats.saved + stats.skipped, 9);
        assert!(stats.skipped > 0);
    }
}
