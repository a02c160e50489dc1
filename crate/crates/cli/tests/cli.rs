//! Binary-level tests: config validation, exit codes, prerequisite checking,
//! and idempotent reruns. Heavy end-to-end coverage lives in acceptance.rs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fas-ucm")
}

struct Env {
    #[allow(dead_code)]
    temp: TempDir,
    root: PathBuf,
    cfg: PathBuf,
}

impl Env {
    /// Workspace with a config pointing all paths inside a tempdir; `extra`
    /// is appended verbatim to the config body.
    fn new(extra: &str) -> Env {
        let temp = TempDir::new().unwrap();
        let root = temp.path().to_path_buf();
        let cfg = root.join("cfg.toml");
        let body = format!(
            "[paths]\ndata_root = {:?}\nweights = {:?}\noutput = {:?}\n{extra}",
            root.join("data"),
            root.join("weights"),
            root.join("out")
        );
        std::fs::write(&cfg, body).unwrap();
        Env { temp, root, cfg }
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with_config(&self.cfg, args)
    }

    fn run_with_config(&self, cfg: &Path, args: &[&str]) -> Output {
        Command::new(bin())
            .arg("--config")
            .arg(cfg)
            .args(args)
            .output()
            .expect("binary runs")
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn empty_config_resolves_to_full_defaults() {
    let temp = TempDir::new().unwrap();
    let cfg = temp.path().join("empty.toml");
    std::fs::write(&cfg, "").unwrap();
    let out = Command::new(bin())
        .args(["--config", cfg.to_str().unwrap(), "validate-config"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("all values at defaults"), "{text}");
    assert!(text.contains("margin = 0.1"), "{text}");
    assert!(text.contains("train_fraction = 0.7"), "{text}");
    assert!(text.contains("learning_rate = 0.0001"), "{text}");
    assert!(text.contains("batch = 8"), "{text}");
    assert!(text.contains("epochs = 50"), "{text}");
    assert!(text.contains("fraction = 0.1"), "{text}");
}

#[test]
fn unknown_key_is_rejected_with_suggestion() {
    let env = Env::new("[train]\nbatchsz = 4\n");
    let out = env.run(&["validate-config"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("train.batchsz"), "{err}");
    assert!(err.contains("did you mean 'train.batch'"), "{err}");
}

#[test]
fn invalid_values_exit_with_validation_code() {
    let env = Env::new("[train]\nlearning_rate = -1.0\n");
    let out = env.run(&["validate-config"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train.learning_rate"), "{}", stderr(&out));

    let env = Env::new("[eval]\nthreshold = 2.0\n");
    let out = env.run(&["validate-config"]);
    assert_eq!(code(&out), 2);

    let env = Env::new("");
    let out = env.run(&["run", "bogus-stage"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown stage"), "{}", stderr(&out));
}

#[test]
fn missing_prerequisites_name_the_stage_to_run_first() {
    let env = Env::new("");
    // Nothing has run: the deepest missing prerequisite is named.
    let out = env.run(&["run", "eval"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("'ingest' has not run"), "{}", stderr(&out));
    assert!(stderr(&out).contains("run `fas-ucm run ingest` first"), "{}", stderr(&out));
}

/// One tiny pipeline exercised through spoof-gen, covering: eval-before-train
/// prerequisite error, up-to-date rerun notices, and staleness detection on a
/// config change.
#[test]
fn stage_chain_checks_prerequisites_and_freshness() {
    let env = Env::new(
        "[ingest]\nsize = 32\n\
         [style]\niterations = 2\nbatch = 1\nbase_channels = 2\ntrain_size = 16\ncorpus_cap = 2\n\
         [synth]\nfraction = 1.0\n",
    );
    let out = env.run(&[
        "fixture",
        "--subjects",
        "2",
        "--live-videos",
        "4",
        "--frames-per-video",
        "2",
        "--styles",
        "1",
        "--spoof-videos-per-style",
        "4",
        "--spoof-frames-per-video",
        "2",
        "--frame-size",
        "32",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = env.run(&["weights"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    for stage in ["ingest", "split", "style-train", "spoof-gen"] {
        let out = env.run(&["run", stage]);
        assert_eq!(code(&out), 0, "{stage}: {}", stderr(&out));
    }

    // eval needs train, which has not run.
    let out = env.run(&["run", "eval"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("'train' has not run"), "{}", stderr(&out));

    // Unchanged rerun is a no-op.
    let out = env.run(&["run", "spoof-gen"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("up-to-date"), "{}", stdout(&out));

    // A style-slice change makes style-train stale, which blocks spoof-gen.
    let cfg2 = env.root.join("cfg2.toml");
    let body = std::fs::read_to_string(&env.cfg)
        .unwrap()
        .replace("iterations = 2", "iterations = 3");
    std::fs::write(&cfg2, body).unwrap();
    let out = env.run_with_config(&cfg2, &["run", "spoof-gen"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("'style-train' is stale"), "{}", stderr(&out));

    // Artifact provenance embeds the creating config's hash.
    let prov = env.root.join("out").join("style_bank.prov.json");
    let text = std::fs::read_to_string(&prov).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["stage"], "style-train");
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);

    // The run-log carries config hash, seeds, and timing for every stage run.
    let log = std::fs::read_to_string(env.root.join("out").join("run-log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> =
        log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() >= 5, "{log}");
    for entry in &lines {
        assert!(entry["config_hash"].is_string());
        assert!(entry["wall_ms"].is_number());
    }
    assert!(lines.iter().any(|e| e["status"] == "up-to-date"));
}

#[test]
fn audit_reports_published_layer_table() {
    let out = Command::new(bin()).arg("audit").output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("total params:     148562"), "{text}");
    assert!(text.contains("trainable params: 148242"), "{text}");
    for layer_params in ["448", "2320", "4640", "9248", "131136"] {
        assert!(text.contains(layer_params), "missing {layer_params} in {text}");
    }
}
