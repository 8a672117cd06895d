//! The binary end to end on a small simulated market.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "market": {"days": 5, "session": {"open": 34200, "close": 37800, "open_trim_s": 300, "close_trim_s": 300}},
  "experiment": {
    "model": {"window": 8,
              "es": {"gru_units": 3, "decay_mlp": [3], "decoder": [3], "latent": 2},
              "hc": {"gru_units": 3, "decoder": [3], "latent": 2},
              "ws": {"gru_units": 3, "decoder": [3], "latent": 2}},
    "train": {"iterations": 1, "lr": 0.005, "batch_size": 128}
  },
  "eval": {"permutations": 50}
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("config.json");
        std::fs::write(&config, CONFIG).unwrap();
        Self { _dir: dir, root, config }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lobrm"))
            .args(args)
            .arg("-c")
            .arg(&self.config)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stdout));
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_owned()
    }

    /// Simulated market, its manifest path, and a trained checkpoint.
    fn trained(&self) -> (String, String) {
        self.ok(&["simulate", "--seed", "3", "--out", &self.path("sim")]);
        let manifest = self.path("sim/manifest.json");
        self.ok(&["train", "--manifest", &manifest, "--side", "bid", "--out", &self.path("train")]);
        let ckpt = self.path("train/SYN_bid_decay-t_full.ckpt.json");
        assert!(Path::new(&ckpt).exists());
        (manifest, ckpt)
    }
}

fn error_body(out: &Output) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("error JSON on stdout");
    v["error"].clone()
}

#[test]
fn train_then_eval_writes_reports() {
    let f = Fixture::new();
    let (manifest, ckpt) = f.trained();
    f.ok(&["eval", "--manifest", &manifest, "--checkpoint", &ckpt, "--out", &f.path("eval")]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("eval/eval.json")).unwrap()).unwrap();
    assert!(report.is_object());
    let csv = std::fs::read_to_string(f.path("eval/eval.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(Path::new(&f.path("train/curve.csv")).exists());
    assert!(Path::new(&f.path("train/run.log")).exists());
}

#[test]
fn replay_emits_one_row_per_trade_and_deep_level() {
    let f = Fixture::new();
    let (manifest, ckpt) = f.trained();
    f.ok(&["ingest", "--manifest", &manifest, "--out", &f.path("ingest")]);
    let taq = f.path("ingest/SYN_day5_taq.csv");

    // a narrower session than the ingested one, so the filter matters
    let (open, close) = (34_200.0 + 900.0, 34_200.0 + 2_700.0);
    let text = std::fs::read_to_string(&taq).unwrap();
    let stamps: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    let inside: Vec<f64> = stamps.iter().copied().filter(|t| (open..=close).contains(t)).collect();
    assert!(!inside.is_empty() && inside.len() < stamps.len());

    let narrow = f.root.join("narrow.json");
    let mut cfg: serde_json::Value = serde_json::from_str(CONFIG).unwrap();
    cfg["session"] = serde_json::json!({"open": open, "close": close, "open_trim_s": 0, "close_trim_s": 0});
    std::fs::write(&narrow, cfg.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lobrm"))
        .args(["replay", "--checkpoint", &ckpt, "--input", &taq, "--out", &f.path("replay")])
        .arg("-c")
        .arg(&narrow)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    let replay = std::fs::read_to_string(f.path("replay/replay.csv")).unwrap();
    let mut lines = replay.lines();
    assert_eq!(lines.next(), Some("timestamp,level,side,volume"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), inside.len() * 4);
    for (chunk, t) in rows.chunks(4).zip(&inside) {
        for (j, row) in chunk.iter().enumerate() {
            assert_eq!(row[0].parse::<f64>().unwrap(), *t);
            assert_eq!(row[1], (j + 2).to_string());
            assert_eq!(row[2], "bid");
            assert!(row[3].parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn gradcheck_passes_and_fails_at_zero_tolerance() {
    let f = Fixture::new();
    f.ok(&["gradcheck", "--out", &f.path("gc")]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("gc/gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);

    let strict = f.root.join("strict.json");
    let mut cfg: serde_json::Value = serde_json::from_str(CONFIG).unwrap();
    cfg["gradcheck"] = serde_json::json!({"tolerance": 0.0, "instances": 1});
    std::fs::write(&strict, cfg.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lobrm"))
        .args(["gradcheck", "--out", &f.path("gc0"), "-c"])
        .arg(&strict)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_body(&out)["kind"], "GradientMismatch");
}

#[test]
fn failures_map_to_exit_codes() {
    let f = Fixture::new();
    let out = f.run(&["train", "--out", &f.path("a")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_body(&out)["class"], "config");

    let out = f.run(&["train", "--manifest", &f.path("missing.json"), "--out", &f.path("b")]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_body(&out)["class"], "data");

    std::fs::write(f.root.join("bad.json"), "{\"market\": 5}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lobrm"))
        .args(["simulate", "--out", &f.path("c"), "-c", &f.path("bad.json")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = f.run(&["train", "--side", "middle"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let f = Fixture::new();
    let out = Command::new(env!("CARGO_BIN_EXE_lobrm"))
        .args(["simulate", "--seed", "1", "-c"])
        .arg(&f.config)
        .env("LOBRM_OUT", f.path("from_env"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(Path::new(&f.path("from_env/manifest.json")).exists());
}
