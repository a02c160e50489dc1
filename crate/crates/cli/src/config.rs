//! Strict pipeline configuration. Unknown keys are rejected with a nearest-
//! match suggestion, defaults follow the published training recipe, and the
//! resolved config hashes canonically so artifacts can embed their origin.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Source tree (fixture output or harvested data).
    pub data_root: PathBuf,
    /// Directory holding the perceptual-backbone weights (backbone.json).
    pub weights: PathBuf,
    /// Artifact root for every stage output.
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_root: "data/source".into(),
            weights: "weights".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub size: usize,
    pub margin: f64,
    pub stride: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { size: 256, margin: 0.1, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub content_weight: f64,
    pub style_weight: f64,
    pub tv_weight: f64,
    pub seed: u64,
    pub batch: usize,
    /// Transform-net width (encoder runs base, 2x, 4x channels).
    pub base_channels: usize,
    /// Square side for style training; multiple of the net stride.
    pub train_size: usize,
    /// Cap on live training frames in the style content corpus.
    pub corpus_cap: usize,
}

impl Default for StyleSection {
    fn default() -> Self {
        let w = fas_core::style::LossWeights::default();
        let c = fas_core::style::StyleConfig::default();
        Self {
            iterations: c.iterations,
            learning_rate: c.learning_rate,
            content_weight: w.content,
            style_weight: w.style,
            tv_weight: w.tv,
            seed: c.seed,
            batch: c.batch_size,
            base_channels: c.base_channels,
            train_size: 256,
            corpus_cap: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Fraction of live training frames stylized per style model.
    pub fraction: f64,
    /// Subject whose spoofs seed the style bank, or "random".
    pub bank_subject: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { fraction: 0.10, bank_subject: "random".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub backbone: String,
    pub learning_rate: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Required when backbone = "external": trunk descriptor JSON.
    pub external_descriptor: Option<PathBuf>,
    /// Required when backbone = "external": pretrained trunk archive.
    pub external_weights: Option<PathBuf>,
    /// Head fine-tuning steps when backbone = "external".
    pub steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            backbone: "spoof_modnet".into(),
            learning_rate: 1e-4,
            batch: 8,
            epochs: 50,
            seed: 0,
            external_descriptor: None,
            external_weights: None,
            steps: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub split: SplitConfig,
    pub style: StyleSection,
    pub synth: SynthConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

/// Known sections and their keys; the single source of truth for strict
/// parsing and typo suggestions.
const SCHEMA: &[(&str, &[&str])] = &[
    ("paths", &["data_root", "weights", "output"]),
    ("ingest", &["size", "margin", "stride"]),
    ("split", &["train_fraction", "seed"]),
    (
        "style",
        &[
            "iterations",
            "learning_rate",
            "content_weight",
            "style_weight",
            "tv_weight",
            "seed",
            "batch",
            "base_channels",
            "train_size",
            "corpus_cap",
        ],
    ),
    ("synth", &["fraction", "bank_subject"]),
    (
        "train",
        &[
            "backbone",
            "learning_rate",
            "batch",
            "epochs",
            "seed",
            "external_descriptor",
            "external_weights",
            "steps",
        ],
    ),
    ("eval", &["threshold"]),
];

fn suggest(unknown: &str, candidates: &[String]) -> Option<String> {
    candidates
        .iter()
        .map(|c| {
            let tail = c.rsplit('.').next().unwrap_or(c);
            (strsim::levenshtein(unknown, tail), c)
        })
        .filter(|(d, _)| *d <= 3.max(unknown.len() / 3))
        .min_by_key(|(d, c)| (*d, (*c).clone()))
        .map(|(_, c)| c.clone())
}

/// `name` is shown to the user; `bare` (no section prefix) drives matching.
fn unknown_key_error(kind: &str, name: &str, bare: &str, candidates: &[String]) -> String {
    match suggest(bare, candidates) {
        Some(s) => format!("unknown {kind} '{name}'; did you mean '{s}'?"),
        None => format!("unknown {kind} '{name}'"),
    }
}

/// Checks every key in the parsed TOML against the schema; unknown sections
/// and keys produce errors with nearest-match suggestions.
fn check_keys(table: &toml::Table, errors: &mut Vec<String>) {
    let sections: Vec<String> = SCHEMA.iter().map(|(s, _)| s.to_string()).collect();
    let all_keys: Vec<String> = SCHEMA
        .iter()
        .flat_map(|(s, keys)| keys.iter().map(move |k| format!("{s}.{k}")))
        .collect();
    for (name, body) in table {
        match SCHEMA.iter().find(|(s, _)| s == name) {
            None => {
                // Top-level entries that look like misplaced keys get key
                // suggestions; otherwise suggest a section.
                let candidates = if body.is_table() { &sections } else { &all_keys };
                let kind = if body.is_table() { "section" } else { "key" };
                errors.push(unknown_key_error(kind, name, name, candidates));
            }
            Some((section, keys)) => {
                let Some(body) = body.as_table() else {
                    errors.push(format!("section '{section}' must be a table"));
                    continue;
                };
                let qualified: Vec<String> =
                    keys.iter().map(|k| format!("{section}.{k}")).collect();
                for key in body.keys() {
                    if !keys.contains(&key.as_str()) {
                        // Prefer same-section matches; fall back to the whole
                        // schema so a key filed under the wrong section still
                        // resolves.
                        let candidates = if suggest(key, &qualified).is_some() {
                            &qualified
                        } else {
                            &all_keys
                        };
                        errors.push(unknown_key_error(
                            "key",
                            &format!("{section}.{key}"),
                            key,
                            candidates,
                        ));
                    }
                }
            }
        }
    }
}

fn check_ranges(cfg: &PipelineConfig, errors: &mut Vec<String>) {
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if cfg.ingest.size < 8 {
        errors.push(format!("ingest.size must be at least 8, got {}", cfg.ingest.size));
    }
    if !(0.0..1.0).contains(&cfg.ingest.margin) {
        errors.push(format!("ingest.margin must lie in [0, 1), got {}", cfg.ingest.margin));
    }
    if cfg.ingest.stride == 0 {
        errors.push("ingest.stride must be at least 1".into());
    }
    if !(cfg.split.train_fraction > 0.0 && cfg.split.train_fraction < 1.0) {
        errors.push(format!(
            "split.train_fraction must lie in (0, 1), got {}",
            cfg.split.train_fraction
        ));
    }
    if cfg.style.iterations == 0 {
        errors.push("style.iterations must be at least 1".into());
    }
    if !positive(cfg.style.learning_rate) {
        errors.push(format!(
            "style.learning_rate must be positive, got {}",
            cfg.style.learning_rate
        ));
    }
    for (name, w) in [
        ("style.content_weight", cfg.style.content_weight),
        ("style.style_weight", cfg.style.style_weight),
        ("style.tv_weight", cfg.style.tv_weight),
    ] {
        if !(w >= 0.0 && w.is_finite()) {
            errors.push(format!("{name} must be non-negative, got {w}"));
        }
    }
    if cfg.style.content_weight == 0.0 && cfg.style.style_weight == 0.0 && cfg.style.tv_weight == 0.0
    {
        errors.push("style loss weights cannot all be zero".into());
    }
    if cfg.style.batch == 0 {
        errors.push("style.batch must be at least 1".into());
    }
    if cfg.style.base_channels == 0 {
        errors.push("style.base_channels must be at least 1".into());
    }
    let stride = fas_core::style::TOTAL_STRIDE;
    if cfg.style.train_size < 2 * stride || cfg.style.train_size % stride != 0 {
        errors.push(format!(
            "style.train_size must be a multiple of {stride} and at least {}, got {}",
            2 * stride,
            cfg.style.train_size
        ));
    }
    if cfg.style.corpus_cap == 0 {
        errors.push("style.corpus_cap must be at least 1".into());
    }
    if !(cfg.synth.fraction > 0.0 && cfg.synth.fraction <= 1.0) {
        errors.push(format!("synth.fraction must lie in (0, 1], got {}", cfg.synth.fraction));
    }
    if cfg.synth.bank_subject.is_empty() {
        errors.push("synth.bank_subject cannot be empty".into());
    }
    match cfg.train.backbone.as_str() {
        "spoof_modnet" => {
            if cfg.train.external_descriptor.is_some() || cfg.train.external_weights.is_some() {
                errors.push(
                    "train.external_descriptor/external_weights require train.backbone = \"external\""
                        .into(),
                );
            }
        }
        "external" => {
            if cfg.train.external_descriptor.is_none() {
                errors.push("train.backbone = \"external\" needs train.external_descriptor".into());
            }
            if cfg.train.external_weights.is_none() {
                errors.push("train.backbone = \"external\" needs train.external_weights".into());
            }
        }
        other => errors.push(format!(
            "train.backbone must be \"spoof_modnet\" or \"external\", got \"{other}\""
        )),
    }
    if !positive(cfg.train.learning_rate) {
        errors.push(format!(
            "train.learning_rate must be positive, got {}",
            cfg.train.learning_rate
        ));
    }
    if cfg.train.batch == 0 {
        errors.push("train.batch must be at least 1".into());
    }
    if cfg.train.epochs == 0 {
        errors.push("train.epochs must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&cfg.eval.threshold) {
        errors.push(format!("eval.threshold must lie in [0, 1], got {}", cfg.eval.threshold));
    }
}

/// Parses and validates a config file. An empty file resolves to the full
/// default (published-recipe) config.
pub fn validate_config(path: &Path) -> Result<PipelineConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
    validate_config_text(&text)
}

pub fn validate_config_text(text: &str) -> Result<PipelineConfig, Vec<String>> {
    let table: toml::Table = text.parse().map_err(|e| vec![format!("config parse error: {e}")])?;
    let mut errors = Vec::new();
    check_keys(&table, &mut errors);
    if !errors.is_empty() {
        return Err(errors);
    }
    let cfg: PipelineConfig = table
        .try_into()
        .map_err(|e| vec![format!("config type error: {e}")])?;
    check_ranges(&cfg, &mut errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

impl PipelineConfig {
    /// Canonical rendering; fixed field order, used for hashing only.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash embedded in every artifact this config produces.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical().as_bytes());
        fas_nn::archive::hex(&hasher.finalize())
    }

    /// Human-readable list of fields that differ from the defaults.
    pub fn deviations(&self) -> Vec<String> {
        let d = PipelineConfig::default();
        let mut out = Vec::new();
        let mut dev = |field: &str, got: String, def: String| {
            if got != def {
                out.push(format!("{field} = {got} (default {def})"));
            }
        };
        dev(
            "paths.data_root",
            self.paths.data_root.display().to_string(),
            d.paths.data_root.display().to_string(),
        );
        dev(
            "paths.weights",
            self.paths.weights.display().to_string(),
            d.paths.weights.display().to_string(),
        );
        dev(
            "paths.output",
            self.paths.output.display().to_string(),
            d.paths.output.display().to_string(),
        );
        dev("ingest.size", self.ingest.size.to_string(), d.ingest.size.to_string());
        dev("ingest.margin", self.ingest.margin.to_string(), d.ingest.margin.to_string());
        dev("ingest.stride", self.ingest.stride.to_string(), d.ingest.stride.to_string());
        dev(
            "split.train_fraction",
            self.split.train_fraction.to_string(),
            d.split.train_fraction.to_string(),
        );
        dev("split.seed", self.split.seed.to_string(), d.split.seed.to_string());
        dev(
            "style.iterations",
            self.style.iterations.to_string(),
            d.style.iterations.to_string(),
        );
        dev(
            "style.learning_rate",
            self.style.learning_rate.to_string(),
            d.style.learning_rate.to_string(),
        );
        dev(
            "style.content_weight",
            self.style.content_weight.to_string(),
            d.style.content_weight.to_string(),
        );
        dev(
            "style.style_weight",
            self.style.style_weight.to_string(),
            d.style.style_weight.to_string(),
        );
        dev("style.tv_weight", self.style.tv_weight.to_string(), d.style.tv_weight.to_string());
        dev("style.seed", self.style.seed.to_string(), d.style.seed.to_string());
        dev("style.batch", self.style.batch.to_string(), d.style.batch.to_string());
        dev(
            "style.base_channels",
            self.style.base_channels.to_string(),
            d.style.base_channels.to_string(),
        );
        dev(
            "style.train_size",
            self.style.train_size.to_string(),
            d.style.train_size.to_string(),
        );
        dev(
            "style.corpus_cap",
            self.style.corpus_cap.to_string(),
            d.style.corpus_cap.to_string(),
        );
        dev("synth.fraction", self.synth.fraction.to_string(), d.synth.fraction.to_string());
        dev("synth.bank_subject", self.synth.bank_subject.clone(), d.synth.bank_subject.clone());
        dev("train.backbone", self.train.backbone.clone(), d.train.backbone.clone());
        dev(
            "train.learning_rate",
            self.train.learning_rate.to_string(),
            d.train.learning_rate.to_string(),
        );
        dev("train.batch", self.train.batch.to_string(), d.train.batch.to_string());
        dev("train.epochs", self.train.epochs.to_string(), d.train.epochs.to_string());
        dev("train.seed", self.train.seed.to_string(), d.train.seed.to_string());
        dev("train.steps", self.train.steps.to_string(), d.train.steps.to_string());
        let show_opt = |p: &Option<PathBuf>| match p {
            Some(p) => p.display().to_string(),
            None => "none".to_string(),
        };
        dev(
            "train.external_descriptor",
            show_opt(&self.train.external_descriptor),
            show_opt(&d.train.external_descriptor),
        );
        dev(
            "train.external_weights",
            show_opt(&self.train.external_weights),
            show_opt(&d.train.external_weights),
        );
        dev("eval.threshold", self.eval.threshold.to_string(), d.eval.threshold.to_string());
        out
    }

    /// Pretty one-per-line resolved dump for `validate-config`.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config hash: {}", self.hash());
        let devs = self.deviations();
        if devs.is_empty() {
            let _ = writeln!(s, "all values at defaults");
        } else {
            for d in &devs {
                let _ = writeln!(s, "deviation: {d}");
            }
        }
        s
    }
}
