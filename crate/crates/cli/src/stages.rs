//! Stage runner: makefile-like dependency checking over content hashes.
//!
//! Each stage records a state file under <output>/state/ holding the hash of
//! its config slice, the hash of its inputs (upstream output hashes plus
//! external files), and the hash of its outputs. A stage reruns only when
//! that chain breaks. State files carry no wall-clock data; timing lives in
//! the append-only run-log, which is excluded from determinism comparisons.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fas_core::classifier::{
    self, attach_external_backbone, train_external_model, ClassifierModel, FinetuneConfig,
    TrainConfig,
};
use fas_core::ingest::{
    build_manifest, detector_for, materialize, split_holdout, CropSpec, DatasetManifest, Label,
    SampleRecord, Split,
};
use fas_core::metrics::{
    build_report, emit_report, read_scores, write_scores, ReportFormat, ScoreRecord,
};
use fas_core::backbone::FeatureExtractor;
use fas_core::style::{LossWeights, StyleConfig};
use fas_core::synthesis::{
    build_style_bank, generate_spoofs, BankTrainOptions, StyleBank, SyntheticSpoofSet,
};
use fas_core::CoreError;

use crate::config::PipelineConfig;

#[derive(Debug)]
pub enum CliError {
    /// Exit 2: the config file or command arguments are invalid.
    Validation(Vec<String>),
    /// Exit 3: an upstream stage is missing or stale.
    Prerequisite(String),
    /// Exit 4: a stage failed while executing.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Prerequisite(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn report(&self) -> String {
        match self {
            CliError::Validation(errs) => {
                let mut s = String::from("config error:\n");
                for e in errs {
                    s.push_str("  - ");
                    s.push_str(e);
                    s.push('\n');
                }
                s
            }
            CliError::Prerequisite(msg) => format!("prerequisite error: {msg}\n"),
            CliError::Runtime(msg) => format!("error: {msg}\n"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Prefixes runtime failures with the subject being processed.
fn with_subject(subject: &str, e: CliError) -> CliError {
    match e {
        CliError::Runtime(m) => CliError::Runtime(format!("subject {subject}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Split,
    StyleTrain,
    SpoofGen,
    Train,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Split,
        Stage::StyleTrain,
        Stage::SpoofGen,
        Stage::Train,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::StyleTrain => "style-train",
            Stage::SpoofGen => "spoof-gen",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Split => &[Stage::Ingest],
            Stage::StyleTrain => &[Stage::Split],
            Stage::SpoofGen => &[Stage::StyleTrain, Stage::Split],
            Stage::Train => &[Stage::SpoofGen, Stage::Split],
            Stage::Eval => &[Stage::Train, Stage::Split],
            Stage::Report => &[Stage::Eval],
        }
    }
}

/// Persisted per-stage record; intentionally free of timestamps so reruns
/// in deterministic mode leave byte-identical state.
#[derive(Debug, Serialize, Deserialize)]
struct StageState {
    stage: String,
    config_hash: String,
    slice_hash: String,
    input_hash: String,
    output_hash: String,
    /// Paths relative to the output root, hashed in order.
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize)]
struct RunLogEntry<'a> {
    stage: &'a str,
    status: &'a str,
    config_hash: &'a str,
    seeds: &'a BTreeMap<String, u64>,
    deviations: &'a [String],
    wall_ms: u64,
    warnings: &'a [String],
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    config_hash: &'a str,
    stage: &'a str,
}

fn hex(bytes: &[u8]) -> String {
    fas_nn::archive::hex(bytes)
}

/// Content hash of a file tree: sorted relative paths and file bytes.
fn hash_tree(root: &Path, hasher: &mut Sha256) -> CliResult<()> {
    let mut stack = vec![root.to_path_buf()];
    let mut files = Vec::new();
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let entry = entry.map_err(|e| io_err(&dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    for path in files {
        let rel = path.strip_prefix(root).unwrap_or(&path);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(())
}

fn hash_path(path: &Path, hasher: &mut Sha256) -> CliResult<()> {
    if path.is_dir() {
        hash_tree(path, hasher)
    } else {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        Ok(())
    }
}

/// Deterministic indexed fan-out; results come back in input order and the
/// first error (by index) wins, independent of scheduling.
fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every index filled"))
        .collect()
}

pub struct Runner {
    cfg: PipelineConfig,
    out: PathBuf,
    jobs: usize,
    /// Output hashes of stages verified fresh this invocation.
    verified: BTreeMap<Stage, String>,
}

impl Runner {
    pub fn new(cfg: PipelineConfig, jobs: usize) -> Self {
        let out = cfg.paths.output.clone();
        Self { cfg, out, jobs, verified: BTreeMap::new() }
    }

    pub fn run_all(&mut self) -> CliResult<()> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    pub fn run_stage(&mut self, stage: Stage) -> CliResult<()> {
        let slice_hash = self.slice_hash(stage);
        let input_hash = self.input_hash(stage)?;
        if let Some(state) = self.load_state(stage) {
            if state.slice_hash == slice_hash
                && state.input_hash == input_hash
                && self.outputs_intact(&state)
            {
                println!("{}: up-to-date", stage.name());
                self.log_run(stage, "up-to-date", &state.seeds, 0, &[]);
                self.verified.insert(stage, state.output_hash);
                return Ok(());
            }
        }

        println!("{}: running", stage.name());
        let started = Instant::now();
        let (outputs, seeds, warnings) = self.execute(stage)?;
        let wall_ms = started.elapsed().as_millis() as u64;

        let output_hash = self.hash_outputs(&outputs)?;
        let state = StageState {
            stage: stage.name().to_string(),
            config_hash: self.cfg.hash(),
            slice_hash,
            input_hash,
            output_hash: output_hash.clone(),
            outputs: outputs.clone(),
            seeds: seeds.clone(),
        };
        self.write_state(stage, &state)?;
        for rel in &outputs {
            self.write_provenance(rel, stage)?;
        }
        self.log_run(stage, "ok", &seeds, wall_ms, &warnings);
        for w in &warnings {
            log::warn!("{}: {w}", stage.name());
        }
        self.verified.insert(stage, output_hash);
        println!("{}: done ({} ms)", stage.name(), wall_ms);
        Ok(())
    }

    /// Config slice a stage depends on; changing anything else leaves the
    /// stage up-to-date.
    fn slice_hash(&self, stage: Stage) -> String {
        let c = &self.cfg;
        let slice = match stage {
            Stage::Ingest => format!(
                "data_root={}\nsize={}\nmargin={}\nstride={}\n",
                c.paths.data_root.display(),
                c.ingest.size,
                c.ingest.margin,
                c.ingest.stride
            ),
            Stage::Split => {
                format!("train_fraction={}\nseed={}\n", c.split.train_fraction, c.split.seed)
            }
            Stage::StyleTrain => format!(
                "weights={}\nbank_subject={}\niterations={}\nlr={}\ncontent={}\nstyle={}\ntv={}\nseed={}\nbatch={}\nbase={}\ntrain_size={}\ncorpus_cap={}\n",
                c.paths.weights.display(),
                c.synth.bank_subject,
                c.style.iterations,
                c.style.learning_rate,
                c.style.content_weight,
                c.style.style_weight,
                c.style.tv_weight,
                c.style.seed,
                c.style.batch,
                c.style.base_channels,
                c.style.train_size,
                c.style.corpus_cap
            ),
            Stage::SpoofGen => format!("fraction={}\n", c.synth.fraction),
            Stage::Train => format!(
                "backbone={}\nlr={}\nbatch={}\nepochs={}\nseed={}\nsteps={}\ndescriptor={:?}\nweights={:?}\n",
                c.train.backbone,
                c.train.learning_rate,
                c.train.batch,
                c.train.epochs,
                c.train.seed,
                c.train.steps,
                c.train.external_descriptor,
                c.train.external_weights
            ),
            Stage::Eval | Stage::Report => format!("threshold={}\n", c.eval.threshold),
        };
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update([0]);
        h.update(slice.as_bytes());
        hex(&h.finalize())
    }

    /// Upstream output hashes plus external files a stage reads directly.
    fn input_hash(&mut self, stage: Stage) -> CliResult<String> {
        let mut h = Sha256::new();
        for prereq in stage.prerequisites() {
            let out_hash = self.require_fresh(*prereq)?;
            h.update(prereq.name().as_bytes());
            h.update([0]);
            h.update(out_hash.as_bytes());
        }
        match stage {
            Stage::Ingest => {
                let root = self.cfg.paths.data_root.clone();
                if !root.is_dir() {
                    return Err(CliError::Runtime(format!(
                        "data root {} does not exist; point paths.data_root at a dataset or run `fas-ucm fixture`",
                        root.display()
                    )));
                }
                hash_tree(&root, &mut h)?;
            }
            Stage::StyleTrain => {
                let manifest = self.cfg.paths.weights.join("backbone.json");
                if !manifest.is_file() {
                    return Err(CliError::Runtime(format!(
                        "weights manifest {} not found; run `fas-ucm weights` or point paths.weights at one",
                        manifest.display()
                    )));
                }
                // The manifest names the archive; hash the whole directory so
                // swapped weights invalidate downstream stages.
                hash_tree(&self.cfg.paths.weights, &mut h)?;
            }
            Stage::Train => {
                if self.cfg.train.backbone == "external" {
                    for p in [&self.cfg.train.external_descriptor, &self.cfg.train.external_weights]
                        .into_iter()
                        .flatten()
                    {
                        hash_path(p, &mut h)?;
                    }
                }
            }
            _ => {}
        }
        Ok(hex(&h.finalize()))
    }

    /// A prerequisite counts only if its recorded state still matches the
    /// current config and input chain and its outputs are present.
    fn require_fresh(&mut self, stage: Stage) -> CliResult<String> {
        if let Some(hash) = self.verified.get(&stage) {
            return Ok(hash.clone());
        }
        // Walk upstream first so the deepest missing stage is the one named.
        for p in stage.prerequisites() {
            self.require_fresh(*p)?;
        }
        let state = self.load_state(stage).ok_or_else(|| {
            CliError::Prerequisite(format!(
                "stage '{0}' has not run; run `fas-ucm run {0}` first",
                stage.name()
            ))
        })?;
        let slice_hash = self.slice_hash(stage);
        let input_hash = self.input_hash(stage)?;
        if state.slice_hash != slice_hash || state.input_hash != input_hash {
            return Err(CliError::Prerequisite(format!(
                "stage '{0}' is stale (its config slice or inputs changed); rerun `fas-ucm run {0}`",
                stage.name()
            )));
        }
        if !self.outputs_intact(&state) {
            return Err(CliError::Prerequisite(format!(
                "outputs of stage '{0}' changed on disk; rerun `fas-ucm run {0}`",
                stage.name()
            )));
        }
        self.verified.insert(stage, state.output_hash.clone());
        Ok(state.output_hash)
    }

    fn outputs_intact(&self, state: &StageState) -> bool {
        if !state.outputs.iter().all(|rel| self.out.join(rel).exists()) {
            return false;
        }
        match self.hash_outputs(&state.outputs) {
            Ok(h) => h == state.output_hash,
            Err(_) => false,
        }
    }

    fn hash_outputs(&self, outputs: &[String]) -> CliResult<String> {
        let mut h = Sha256::new();
        for rel in outputs {
            h.update(rel.as_bytes());
            h.update([0]);
            hash_path(&self.out.join(rel), &mut h)?;
        }
        Ok(hex(&h.finalize()))
    }

    fn state_path(&self, stage: Stage) -> PathBuf {
        self.out.join("state").join(format!("{}.json", stage.name()))
    }

    fn load_state(&self, stage: Stage) -> Option<StageState> {
        let text = std::fs::read_to_string(self.state_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn write_state(&self, stage: Stage, state: &StageState) -> CliResult<()> {
        let path = self.state_path(stage);
        let dir = path.parent().expect("state dir");
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let text = serde_json::to_string_pretty(state).expect("state serializes");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    /// Sidecar stamping the artifact with the config hash that created it.
    fn write_provenance(&self, rel: &str, stage: Stage) -> CliResult<()> {
        let artifact = self.out.join(rel);
        let prov_path = if artifact.extension().is_some() {
            artifact.with_extension("prov.json")
        } else {
            artifact.with_file_name(format!(
                "{}.prov.json",
                artifact.file_name().unwrap_or_default().to_string_lossy()
            ))
        };
        let hash = self.cfg.hash();
        let prov = Provenance { config_hash: &hash, stage: stage.name() };
        let text = serde_json::to_string_pretty(&prov).expect("provenance serializes");
        std::fs::write(&prov_path, text).map_err(|e| io_err(&prov_path, e))
    }

    fn log_run(
        &self,
        stage: Stage,
        status: &str,
        seeds: &BTreeMap<String, u64>,
        wall_ms: u64,
        warnings: &[String],
    ) {
        let hash = self.cfg.hash();
        let entry = RunLogEntry {
            stage: stage.name(),
            status,
            config_hash: &hash,
            seeds,
            deviations: &self.cfg.deviations(),
            wall_ms,
            warnings,
        };
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        let path = self.out.join("run-log.jsonl");
        if let Some(dir) = path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        use std::io::Write as _;
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(&path) {
            let _ = writeln!(f, "{line}");
        }
    }

    fn execute(
        &self,
        stage: Stage,
    ) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        match stage {
            Stage::Ingest => self.exec_ingest(),
            Stage::Split => self.exec_split(),
            Stage::StyleTrain => self.exec_style_train(),
            Stage::SpoofGen => self.exec_spoof_gen(),
            Stage::Train => self.exec_train(),
            Stage::Eval => self.exec_eval(),
            Stage::Report => self.exec_report(),
        }
    }

    fn load_split_manifest(&self) -> CliResult<DatasetManifest> {
        Ok(DatasetManifest::load(&self.out.join("manifest.split.json"))?)
    }

    fn exec_ingest(&self) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        let spec = CropSpec {
            output_size: self.cfg.ingest.size,
            margin: self.cfg.ingest.margin,
            detector: "full-frame".into(),
        };
        let detector = detector_for(&spec.detector)?;
        let crops = self.out.join("crops");
        if crops.exists() {
            std::fs::remove_dir_all(&crops).map_err(|e| io_err(&crops, e))?;
        }
        let stats = materialize(
            &self.cfg.paths.data_root,
            &crops,
            &spec,
            self.cfg.ingest.stride,
            detector.as_ref(),
        )?;
        println!(
            "  {} videos, {} crops saved, {} frames skipped",
            stats.videos, stats.saved, stats.skipped
        );
        let mut warnings = Vec::new();
        if stats.skipped > 0 {
            warnings.push(format!("{} frames had no detectable face", stats.skipped));
        }
        Ok((vec!["crops".into()], BTreeMap::new(), warnings))
    }

    fn exec_split(&self) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        let manifest = build_manifest(&self.out.join("crops"), self.cfg.split.seed)?;
        manifest.save(&self.out.join("manifest.json"))?;
        let (split_manifest, warnings) =
            split_holdout(&manifest, self.cfg.split.train_fraction, self.cfg.split.seed)?;
        split_manifest.save(&self.out.join("manifest.split.json"))?;
        let train = split_manifest.records.iter().filter(|r| r.split == Split::Train).count();
        let test = split_manifest.records.len() - train;
        println!(
            "  {} records across {} subjects: {train} train / {test} test",
            split_manifest.records.len(),
            split_manifest.subjects().len()
        );
        let seeds = BTreeMap::from([("split".to_string(), self.cfg.split.seed)]);
        Ok((vec!["manifest.json".into(), "manifest.split.json".into()], seeds, warnings))
    }

    fn exec_style_train(&self) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        let manifest = self.load_split_manifest()?;
        let ext = FeatureExtractor::load_backbone(&self.cfg.paths.weights.join("backbone.json"))?;
        let opts = BankTrainOptions {
            train_size: self.cfg.style.train_size,
            corpus_cap: self.cfg.style.corpus_cap,
            weights: LossWeights {
                content: self.cfg.style.content_weight,
                style: self.cfg.style.style_weight,
                tv: self.cfg.style.tv_weight,
            },
            config: StyleConfig {
                iterations: self.cfg.style.iterations,
                batch_size: self.cfg.style.batch,
                learning_rate: self.cfg.style.learning_rate,
                seed: self.cfg.style.seed,
                base_channels: self.cfg.style.base_channels,
            },
        };
        let bank = build_style_bank(
            &manifest,
            &self.cfg.synth.bank_subject,
            self.cfg.style.seed,
            &ext,
            &opts,
        )?;
        let dir = self.out.join("style_bank");
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        bank.save(&dir)?;
        println!(
            "  {} style models from subject {} (bank hash {})",
            bank.styles.len(),
            bank.source_subject,
            &bank.hash()[..12]
        );
        let seeds = BTreeMap::from([("style".to_string(), self.cfg.style.seed)]);
        Ok((vec!["style_bank".into()], seeds, Vec::new()))
    }

    fn exec_spoof_gen(&self) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        let manifest = self.load_split_manifest()?;
        let bank = StyleBank::load(&self.out.join("style_bank"))?;
        let out_root = self.out.join("synthetic");
        if out_root.exists() {
            std::fs::remove_dir_all(&out_root).map_err(|e| io_err(&out_root, e))?;
        }
        let subjects = manifest.subjects();
        let seed = self.cfg.split.seed;
        let results = par_map(self.jobs, &subjects, |subject| {
            generate_spoofs(subject, &bank, &manifest, self.cfg.synth.fraction, seed, &out_root)
        });
        let mut total = 0usize;
        for (subject, result) in subjects.iter().zip(results) {
            let set = result.map_err(|e| CliError::Runtime(format!("subject {subject}: {e}")))?;
            total += set.items.len();
        }
        println!("  {total} synthetic spoof frames across {} subjects", subjects.len());
        let seeds = BTreeMap::from([("synth".to_string(), seed)]);
        Ok((vec!["synthetic".into()], seeds, Vec::new()))
    }

    fn exec_train(&self) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        let manifest = self.load_split_manifest()?;
        let models_dir = self.out.join("models");
        if models_dir.exists() {
            std::fs::remove_dir_all(&models_dir).map_err(|e| io_err(&models_dir, e))?;
        }
        std::fs::create_dir_all(&models_dir).map_err(|e| io_err(&models_dir, e))?;
        let synth_root = self.out.join("synthetic");
        let subjects = manifest.subjects();

        let external = if self.cfg.train.backbone == "external" {
            let descriptor = self.cfg.train.external_descriptor.as_ref().expect("validated");
            let weights = self.cfg.train.external_weights.as_ref().expect("validated");
            let fc = FinetuneConfig {
                learning_rate: self.cfg.train.learning_rate,
                batch_size: self.cfg.train.batch,
                steps: self.cfg.train.steps,
                seed: self.cfg.train.seed,
            };
            Some((attach_external_backbone(descriptor, weights, &fc)?, fc))
        } else {
            None
        };
        let train_config = TrainConfig {
            learning_rate: self.cfg.train.learning_rate,
            batch_size: self.cfg.train.batch,
            epochs: self.cfg.train.epochs,
            seed: self.cfg.train.seed,
            ..TrainConfig::default()
        };

        let train_one = |subject: &String| -> Result<f64, CliError> {
            let live_train: Vec<SampleRecord> = manifest
                .records
                .iter()
                .filter(|r| {
                    r.subject_id == *subject && r.label == Label::Live && r.split == Split::Train
                })
                .cloned()
                .collect();
            let synthetic =
                SyntheticSpoofSet::load(&SyntheticSpoofSet::provenance_path(&synth_root, subject))?;
            let model: ClassifierModel = match &external {
                Some((backbone, fc)) => {
                    train_external_model(subject, backbone, &live_train, &synthetic, fc)?
                }
                None => classifier::train_subject_model(
                    subject,
                    &live_train,
                    &synthetic,
                    &train_config,
                )?,
            };
            let loss = model.fingerprint.final_train_loss;
            model.save(&models_dir.join(subject))?;
            Ok(loss)
        };
        let results = par_map(self.jobs, &subjects, train_one);
        for (subject, result) in subjects.iter().zip(results) {
            let loss = result.map_err(|e| with_subject(subject, e))?;
            println!("  {subject}: final train loss {loss:.4}");
        }
        let seeds = BTreeMap::from([("train".to_string(), self.cfg.train.seed)]);
        Ok((vec!["models".into()], seeds, Vec::new()))
    }

    fn exec_eval(&self) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        let manifest = self.load_split_manifest()?;
        let models_dir = self.out.join("models");
        let threshold = self.cfg.eval.threshold;
        let subjects = manifest.subjects();

        let eval_one = |subject: &String| -> Result<Vec<ScoreRecord>, CliError> {
            let test: Vec<&SampleRecord> = manifest
                .records
                .iter()
                .filter(|r| r.subject_id == *subject && r.split == Split::Test)
                .collect();
            if test.is_empty() {
                return Ok(Vec::new());
            }
            let sidecar = models_dir.join(format!("{subject}.json"));
            if !sidecar.is_file() {
                return Err(CliError::Runtime(format!(
                    "subject {subject} has test frames but no trained model at {}",
                    sidecar.display()
                )));
            }
            let model = ClassifierModel::load(&sidecar)?;
            let mut scores = Vec::with_capacity(test.len());
            for record in test {
                let img = fas_core::ImageBuffer::load_png(&record.path)?;
                let pred = classifier::predict(&model, &img)?;
                scores.push(ScoreRecord {
                    subject_id: record.subject_id.clone(),
                    video_id: record.video_id.clone(),
                    frame_index: record.frame_index,
                    true_label: record.label,
                    p_spoof: pred.p_spoof,
                    decision: pred.decision(threshold),
                });
            }
            Ok(scores)
        };
        let results = par_map(self.jobs, &subjects, eval_one);
        let mut records = Vec::new();
        for (subject, result) in subjects.iter().zip(results) {
            records.extend(result.map_err(|e| with_subject(subject, e))?);
        }
        if records.is_empty() {
            return Err(CliError::Runtime(
                "no test frames to evaluate; check the split configuration".into(),
            ));
        }
        write_scores(&records, &self.out.join("scores.csv"))?;
        println!("  {} scored frames", records.len());
        Ok((vec!["scores.csv".into()], BTreeMap::new(), Vec::new()))
    }

    fn exec_report(&self) -> CliResult<(Vec<String>, BTreeMap<String, u64>, Vec<String>)> {
        let records = read_scores(&self.out.join("scores.csv"))?;
        let report = build_report(&records, self.cfg.eval.threshold)?;
        emit_report(
            &report,
            ReportFormat::Json,
            &self.out.join("report.json"),
            Some(&self.out.join("boxplot.png")),
        )?;
        emit_report(&report, ReportFormat::Csv, &self.out.join("per_subject.csv"), None)?;
        let show = |r: fas_core::metrics::Rate| match r.value() {
            Some(v) => format!("{v:.4}"),
            None => "undefined".to_string(),
        };
        println!(
            "  accuracy {}  apcer {}  npcer {}  acer {}",
            show(report.accuracy),
            show(report.apcer),
            show(report.npcer),
            show(report.acer)
        );
        Ok((
            vec!["report.json".into(), "per_subject.csv".into(), "boxplot.png".into()],
            BTreeMap::new(),
            Vec::new(),
        ))
    }
}
