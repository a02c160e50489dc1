//! Dataset ingest: harvest face crops from frame sequences, catalog them in a
//! manifest, and produce deterministic train/test splits and style-source
//! subsamples.

mod detector;
mod harvest;
mod manifest;
mod split;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use detector::{detector_for, FaceBox, FaceDetector, FullFrameDetector};
pub use harvest::{detect_and_crop, extract_frames, materialize, HarvestStats};
pub use manifest::build_manifest;
pub use split::{sample_style_sources, split_holdout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Live,
    Spoof,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Live => "live",
            Label::Spoof => "spoof",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackType {
    None,
    Print,
    Phone,
    Monitor,
    Tablet,
}

impl AttackType {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(AttackType::None),
            "print" => Some(AttackType::Print),
            "phone" => Some(AttackType::Phone),
            "monitor" => Some(AttackType::Monitor),
            "tablet" => Some(AttackType::Tablet),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackType::None => "none",
            AttackType::Print => "print",
            AttackType::Phone => "phone",
            AttackType::Monitor => "monitor",
            AttackType::Tablet => "tablet",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub subject_id: String,
    pub video_id: String,
    pub frame_index: u32,
    pub label: Label,
    pub attack_type: AttackType,
    pub split: Split,
    pub path: PathBuf,
}

impl SampleRecord {
    /// live ⟺ attack_type none.
    pub fn validate(&self) -> Result<()> {
        let consistent = (self.label == Label::Live) == (self.attack_type == AttackType::None);
        if consistent {
            Ok(())
        } else {
            Err(CoreError::InvalidInput(format!(
                "record {}/{} frame {}: label {} with attack_type {}",
                self.subject_id, self.video_id, self.frame_index, self.label, self.attack_type
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Per-(subject, label) frame tallies, recomputed from the records.
    pub fn tallies(&self) -> std::collections::BTreeMap<(String, Label), usize> {
        let mut out = std::collections::BTreeMap::new();
        for r in &self.records {
            *out.entry((r.subject_id.clone(), r.label)).or_insert(0) += 1;
        }
        out
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.records.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::json(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| CoreError::json(path, e.to_string()))?;
        for r in &manifest.records {
            r.validate()?;
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropSpec {
    pub output_size: usize,
    /// Fraction of the detected box added on each side before resize.
    pub margin: f64,
    pub detector: String,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            output_size: 256,
            margin: 0.1,
            detector: "full-frame".into(),
        }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        if self.output_size == 0 {
            return Err(CoreError::InvalidInput("output_size must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(CoreError::InvalidInput(format!(
                "margin must lie in [0, 1), got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_label_attack_consistency() {
        let mut r = SampleRecord {
            subject_id: "s1".into(),
            video_id: "v1".into(),
            frame_index: 0,
            label: Label::Live,
            attack_type: AttackType::None,
            split: Split::Unassigned,
            path: PathBuf::from("x.png"),
        };
        assert!(r.validate().is_ok());
        r.attack_type = AttackType::Print;
        assert!(r.validate().is_err());
        r.label = Label::Spoof;
        assert!(r.validate().is_ok());
        r.attack_type = AttackType::None;
        assert!(r.validate().is_err());
    }

    #[test]
    fn manifest_json_uses_contract_field_names() {
        let m = DatasetManifest {
            seed: 9,
            root: PathBuf::from("/data"),
            records: vec![SampleRecord {
                subject_id: "s1".into(),
                video_id: "v1".into(),
                frame_index: 3,
                label: Label::Spoof,
                attack_type: AttackType::Print,
                split: Split::Train,
                path: PathBuf::from("/data/s1/spoof/print/v1/3.png"),
            }],
        };
        let text = serde_json::to_string(&m).unwrap();
        for needle in [
            "\"seed\":9",
            "\"root\":",
            "\"records\":",
            "\"subject_id\":\"s1\"",
            "\"video_id\":\"v1\"",
            "\"frame_index\":3",
            "\"label\":\"spoof\"",
            "\"attack_type\":\"print\"",
            "\"split\":\"train\"",
            "\"path\":",
        ] {
            assert!(text.contains(needle), "missing {needle} in {text}");
        }
    }

    #[test]
    fn manifest_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = DatasetManifest {
            seed: 4,
            root: dir.path().to_path_buf(),
            records: vec![],
        };
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn load_rejects_inconsistent_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let text = r#"{"seed":1,"root":"/d","records":[{"subject_id":"s","video_id":"v",
            "frame_index":0,"label":"live","attack_type":"print","split":"train","path":"/d/x.png"}]}"#;
        std::fs::write(&path, text).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }

    #[test]
    fn crop_spec_validation() {
        assert!(CropSpec::default().validate().is_ok());
        let bad_size = CropSpec {
            output_size: 0,
            ..CropSpec::default()
        };
        assert!(bad_size.validate().is_err());
        let bad_margin = CropSpec {
            margin: 1.0,
            ..CropSpec::default()
        };
        assert!(bad_margin.validate().is_err());
    }

    #[test]
    fn tallies_recompute_from_records() {
        let rec = |s: &str, label, attack| SampleRecord {
            subject_id: s.into(),
            video_id: "v".into(),
            frame_index: 0,
            label,
            attack_type: attack,
            split: Split::Unassigned,
            path: PathBuf::new(),
        };
        let m = DatasetManifest {
            seed: 0,
            root: PathBuf::new(),
            records: vec![
                rec("a", Label::Live, AttackType::None),
                rec("a", Label::Spoof, AttackType::Print),
                rec("a", Label::Spoof, AttackType::Phone),
                rec("b", Label::Live, AttackType::None),
            ],
        };
        let t = m.tallies();
        assert_eq!(t[&("a".to_string(), Label::Live)], 1);
        assert_eq!(t[&("a".to_string(), Label::Spoof)], 2);
        assert_eq!(t[&("b".to_string(), Label::Live)], 1);
        assert_eq!(t.len(), 3);
    }
}
