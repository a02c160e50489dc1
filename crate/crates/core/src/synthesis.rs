//! Style-bank construction and balanced synthetic-spoof generation. One bank
//! is trained from a single subject's spoof references; every other subject's
//! sampled live training frames are pushed through all bank models.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::FeatureExtractor;
use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;
use crate::ingest::{sample_style_sources, AttackType, DatasetManifest, Label, SampleRecord};
use crate::style::TOTAL_STRIDE;
use crate::style::{
    stylize, train_style_model, LossWeights, StyleConfig, StyleModel, StyleReference,
};

/// Style identity of a spoof record: `<attack>` when the video id has no
/// `"__"` separator, `<attack>-<tag>` otherwise, with the tag taken from the
/// video-id prefix. Distinct tags within one attack type are what give
/// SiW-shaped data its ten styles. Live records have no style.
pub fn style_key(record: &SampleRecord) -> Option<String> {
    if record.label == Label::Live {
        return None;
    }
    let attack = record.attack_type.as_str();
    Some(match record.video_id.split_once("__") {
        Some((tag, _)) if !tag.is_empty() => format!("{attack}-{tag}"),
        _ => attack.to_string(),
    })
}

/// All distinct spoof styles present in the dataset, any split.
pub fn dataset_styles(manifest: &DatasetManifest) -> BTreeSet<String> {
    manifest.records.iter().filter_map(style_key).collect()
}

#[derive(Debug, Clone)]
pub struct BankEntry {
    pub reference: StyleReference,
    /// Frame the reference image was taken from.
    pub reference_source: PathBuf,
    pub model: StyleModel,
}

#[derive(Debug, Clone)]
pub struct StyleBank {
    pub source_subject: String,
    pub styles: Vec<BankEntry>,
}

/// Training-scale knobs for bank construction.
#[derive(Debug, Clone, Copy)]
pub struct BankTrainOptions {
    /// Square side used for style training; multiple of the net stride.
    pub train_size: usize,
    /// Cap on the number of live training frames in the content corpus.
    pub corpus_cap: usize,
    pub weights: LossWeights,
    pub config: StyleConfig,
}

impl Default for BankTrainOptions {
    fn default() -> Self {
        Self {
            train_size: 256,
            corpus_cap: 64,
            weights: LossWeights::default(),
            config: StyleConfig::default(),
        }
    }
}

impl BankTrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.train_size < 2 * TOTAL_STRIDE || self.train_size % TOTAL_STRIDE != 0 {
            return Err(CoreError::InvalidInput(format!(
                "train_size must be a multiple of {TOTAL_STRIDE} and at least {}, got {}",
                2 * TOTAL_STRIDE,
                self.train_size
            )));
        }
        if self.corpus_cap == 0 {
            return Err(CoreError::InvalidInput("corpus_cap must be positive".into()));
        }
        self.weights.validate()?;
        self.config.validate()
    }
}

/// Resolves the bank's source subject. An explicit id must cover every style
/// in the dataset; `"random"` picks uniformly (seeded) among subjects that do.
pub fn select_bank_subject(
    manifest: &DatasetManifest,
    selector: &str,
    seed: u64,
) -> Result<String> {
    let styles = dataset_styles(manifest);
    if styles.is_empty() {
        return Err(CoreError::InvalidInput(
            "dataset has no spoof records to build a style bank from".into(),
        ));
    }
    let mut coverage: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for r in &manifest.records {
        let entry = coverage.entry(r.subject_id.as_str()).or_default();
        if let Some(key) = style_key(r) {
            entry.insert(key);
        }
    }
    if selector == "random" {
        let eligible: Vec<&str> = coverage
            .iter()
            .filter(|(_, covered)| styles.is_subset(covered))
            .map(|(s, _)| *s)
            .collect();
        if eligible.is_empty() {
            return Err(CoreError::InvalidInput(format!(
                "no subject covers all {} spoof styles",
                styles.len()
            )));
        }
        let mut rng = fas_nn::rng::seeded_rng(fas_nn::rng::derive_seed(seed, "bank-subject"));
        let pick = rand::Rng::random_range(&mut rng, 0..eligible.len());
        Ok(eligible[pick].to_string())
    } else {
        let covered = coverage.get(selector).ok_or_else(|| {
            CoreError::InvalidInput(format!("unknown subject {selector:?}"))
        })?;
        let missing: Vec<&String> = styles.difference(covered).collect();
        if !missing.is_empty() {
            let list: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
            return Err(CoreError::InvalidInput(format!(
                "subject {selector:?} is missing styles: {}",
                list.join(", ")
            )));
        }
        Ok(selector.to_string())
    }
}

/// One reference record per style of the subject: the lowest-indexed frame of
/// the lexicographically first video carrying that style.
pub fn select_bank_references(
    manifest: &DatasetManifest,
    subject: &str,
) -> Result<Vec<(String, SampleRecord)>> {
    let mut best: BTreeMap<String, &SampleRecord> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| r.subject_id == subject) {
        if let Some(key) = style_key(r) {
            let slot = best.entry(key).or_insert(r);
            if (&r.video_id, r.frame_index) < (&slot.video_id, slot.frame_index) {
                *slot = r;
            }
        }
    }
    if best.is_empty() {
        return Err(CoreError::InvalidInput(format!(
            "subject {subject:?} has no spoof records"
        )));
    }
    Ok(best.into_iter().map(|(k, r)| (k, r.clone())).collect())
}

fn load_resized(path: &Path, side: usize) -> Result<ImageBuffer> {
    let img = ImageBuffer::load_png(path)?;
    if img.height() == side && img.width() == side {
        Ok(img)
    } else {
        Ok(img.resize_bilinear(side, side))
    }
}

/// Trains one style model per distinct spoof style of the chosen subject.
/// The content corpus is a seeded sample of live training frames across the
/// whole dataset, resized to the training scale.
pub fn build_style_bank(
    manifest: &DatasetManifest,
    selector: &str,
    seed: u64,
    ext: &FeatureExtractor,
    opts: &BankTrainOptions,
) -> Result<StyleBank> {
    opts.validate()?;
    let subject = select_bank_subject(manifest, selector, seed)?;
    let references = select_bank_references(manifest, &subject)?;

    let mut live_train: Vec<&SampleRecord> = manifest
        .records
        .iter()
        .filter(|r| r.label == Label::Live && r.split == crate::ingest::Split::Train)
        .collect();
    if live_train.is_empty() {
        return Err(CoreError::InvalidInput(
            "no live training frames available for the style corpus".into(),
        ));
    }
    let mut rng = fas_nn::rng::seeded_rng(fas_nn::rng::derive_seed(seed, "bank-corpus"));
    for i in (1..live_train.len()).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        live_train.swap(i, j);
    }
    live_train.truncate(opts.corpus_cap);
    let corpus: Vec<ImageBuffer> = live_train
        .iter()
        .map(|r| load_resized(&r.path, opts.train_size))
        .collect::<Result<_>>()?;

    let mut styles = Vec::with_capacity(references.len());
    for (style_id, record) in references {
        let image = load_resized(&record.path, opts.train_size)?;
        let reference = StyleReference {
            style_id: style_id.clone(),
            image,
            attack_type: record.attack_type,
        };
        let config = StyleConfig {
            seed: fas_nn::rng::derive_seed(opts.config.seed, &format!("style/{style_id}")),
            ..opts.config
        };
        log::info!("training style model {style_id} ({} iterations)", config.iterations);
        let model = train_style_model(&reference, &corpus, ext, opts.weights, &config)?;
        styles.push(BankEntry { reference, reference_source: record.path.clone(), model });
    }
    Ok(StyleBank { source_subject: subject, styles })
}

fn compute_bank_hash(source_subject: &str, styles: &[BankEntry]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source_subject.as_bytes());
    for entry in styles {
        hasher.update(entry.model.style_id.as_bytes());
        hasher.update(entry.model.attack_type.as_str().as_bytes());
        hasher.update(entry.model.net.fingerprint().as_bytes());
    }
    fas_nn::archive::hex(&hasher.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankFileEntry {
    style_id: String,
    attack_type: AttackType,
    reference_image: String,
    reference_source: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankFile {
    source_subject: String,
    bank_hash: String,
    styles: Vec<BankFileEntry>,
}

impl StyleBank {
    pub fn hash(&self) -> String {
        compute_bank_hash(&self.source_subject, &self.styles)
    }

    /// Writes per-style model archives, reference images, and `bank.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.styles.len());
        for entry in &self.styles {
            let id = &entry.model.style_id;
            entry.model.save(&dir.join(id))?;
            let ref_name = format!("{id}.png");
            entry.reference.image.save_png(&dir.join(&ref_name))?;
            entries.push(BankFileEntry {
                style_id: id.clone(),
                attack_type: entry.model.attack_type,
                reference_image: ref_name,
                reference_source: entry.reference_source.clone(),
            });
        }
        let file = BankFile {
            source_subject: self.source_subject.clone(),
            bank_hash: self.hash(),
            styles: entries,
        };
        let path = dir.join("bank.json");
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| CoreError::json(&path, e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("bank.json");
        let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        let file: BankFile =
            serde_json::from_str(&text).map_err(|e| CoreError::json(&path, e.to_string()))?;
        let mut styles = Vec::with_capacity(file.styles.len());
        for entry in &file.styles {
            let model = StyleModel::load(&dir.join(format!("{}.json", entry.style_id)))?;
            if model.style_id != entry.style_id {
                return Err(CoreError::Config(format!(
                    "bank entry {} points at model {}",
                    entry.style_id, model.style_id
                )));
            }
            let image = ImageBuffer::load_png(&dir.join(&entry.reference_image))?;
            styles.push(BankEntry {
                reference: StyleReference {
                    style_id: entry.style_id.clone(),
                    image,
                    attack_type: entry.attack_type,
                },
                reference_source: entry.reference_source.clone(),
                model,
            });
        }
        let bank = StyleBank { source_subject: file.source_subject, styles };
        let recomputed = bank.hash();
        if recomputed != file.bank_hash {
            return Err(CoreError::Config(format!(
                "bank hash mismatch: manifest says {}, models give {recomputed}",
                file.bank_hash
            )));
        }
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for entry in &self.styles {
            if entry.model.style_id != entry.reference.style_id {
                return Err(CoreError::InvalidInput(format!(
                    "bank entry {} has mismatched model id {}",
                    entry.reference.style_id, entry.model.style_id
                )));
            }
            if !seen.insert(entry.model.style_id.clone()) {
                return Err(CoreError::InvalidInput(format!(
                    "duplicate style id {} in bank",
                    entry.model.style_id
                )));
            }
        }
        if self.styles.is_empty() {
            return Err(CoreError::InvalidInput("style bank is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticItem {
    pub source: SampleRecord,
    pub style_id: String,
    /// Inherited from the style reference.
    pub attack_type: AttackType,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoofProvenance {
    pub bank_hash: String,
    pub sample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpoofSet {
    pub subject_id: String,
    pub items: Vec<SyntheticItem>,
    pub provenance: SpoofProvenance,
}

impl SyntheticSpoofSet {
    pub fn provenance_path(out_root: &Path, subject: &str) -> PathBuf {
        out_root.join(subject).join("synthetic").join("provenance.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::json(path, e.to_string()))
    }
}

/// Pushes the subject's sampled live training frames through every bank
/// model. Output count is `round(fraction * live_train) * |styles|`; with the
/// default ten styles and fraction 0.10 that equals the live training count.
/// Any failure removes the files written so far.
pub fn generate_spoofs(
    subject: &str,
    bank: &StyleBank,
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
    out_root: &Path,
) -> Result<SyntheticSpoofSet> {
    bank.validate()?;
    let n_styles = bank.styles.len();
    if (fraction * n_styles as f64 - 1.0).abs() > 1e-9 {
        log::warn!(
            "fraction {fraction} with {n_styles} styles does not balance 1:1; \
             consider fraction = {:.4}",
            1.0 / n_styles as f64
        );
    }
    let has_live_train = manifest.records.iter().any(|r| {
        r.subject_id == subject
            && r.label == Label::Live
            && r.split == crate::ingest::Split::Train
    });
    if !has_live_train {
        return Err(CoreError::InvalidInput(format!(
            "subject {subject:?} has no live training frames"
        )));
    }
    let sampled: Vec<SampleRecord> = sample_style_sources(manifest, fraction, seed)?
        .into_iter()
        .filter(|r| r.subject_id == subject)
        .collect();
    if sampled.is_empty() {
        log::warn!("fraction {fraction} rounds to zero sources for subject {subject}");
    }

    let synth_dir = out_root.join(subject).join("synthetic");
    let mut created: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<Vec<SyntheticItem>> {
        let mut items = Vec::with_capacity(sampled.len() * n_styles);
        for record in &sampled {
            let source = ImageBuffer::load_png(&record.path)?;
            for entry in &bank.styles {
                let out = stylize(&entry.model, &source)?;
                let name = format!("{}_{}.png", record.video_id, record.frame_index);
                let path = synth_dir.join(&entry.model.style_id).join(name);
                out.save_png(&path)?;
                created.push(path.clone());
                items.push(SyntheticItem {
                    source: record.clone(),
                    style_id: entry.model.style_id.clone(),
                    attack_type: entry.model.attack_type,
                    path,
                });
            }
        }
        Ok(items)
    })();

    let items = match result {
        Ok(items) => items,
        Err(e) => {
            for p in &created {
                let _ = std::fs::remove_file(p);
            }
            for entry in &bank.styles {
                let _ = std::fs::remove_dir(synth_dir.join(&entry.model.style_id));
            }
            let _ = std::fs::remove_dir(&synth_dir);
            let _ = std::fs::remove_dir(out_root.join(subject));
            return Err(e);
        }
    };

    let set = SyntheticSpoofSet {
        subject_id: subject.to_string(),
        items,
        provenance: SpoofProvenance { bank_hash: bank.hash(), sample_seed: seed },
    };
    let prov_path = write_provenance(&set, out_root)?;
    log::info!(
        "subject {subject}: {} synthetic spoofs across {n_styles} styles ({prov_path:?})",
        set.items.len()
    );
    Ok(set)
}

fn write_provenance(set: &SyntheticSpoofSet, out_root: &Path) -> Result<PathBuf> {
    let path = SyntheticSpoofSet::provenance_path(out_root, &set.subject_id);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(set).map_err(|e| CoreError::json(&path, e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
    Ok(path)
}
