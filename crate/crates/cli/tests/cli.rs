use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[synthetic]
n_stocks = 8
n_days = 120
seed = 3

[data]
lookback = 20

[model]
hidden = 4
ffn_hidden = 4

[train]
max_epochs = 3
patience = 3
"#;

fn ssgraph(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ssgraph"))
        .current_dir(dir)
        .args(args)
        .env_remove("SSGRAPH__OUTPUT__DIR")
        .output()
        .expect("binary runs");
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ssgraph(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    dir
}

#[test]
fn synth_writes_every_row_and_is_reproducible() {
    let dir = tiny_dir();
    let stdout = ok(dir.path(), &["--config", "run.toml", "synth", "--out", "a"]);
    assert!(stdout.contains("planted edges: 1"), "{stdout}");
    let text = fs::read_to_string(dir.path().join("a/panel.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 120);

    ok(dir.path(), &["--config", "run.toml", "synth", "--out", "b"]);
    assert_eq!(
        fs::read(dir.path().join("a/panel.csv")).unwrap(),
        fs::read(dir.path().join("b/panel.csv")).unwrap()
    );

    ok(dir.path(), &["--config", "run.toml", "synth", "--out", "c", "--seed", "4"]);
    assert_ne!(text, fs::read_to_string(dir.path().join("c/panel.csv")).unwrap());
}

#[test]
fn synth_reports_each_planted_edge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[synthetic]
n_stocks = 10
n_days = 60
followers = [
  { follower = 1, leader = 0, lag = 1, beta = 0.8 },
  { follower = 3, leader = 2, lag = 2, beta = 0.5 },
  { follower = 5, leader = 4, lag = 1, beta = 0.3 },
]
"#;
    fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let stdout = ok(dir.path(), &["--config", "run.toml", "synth"]);
    assert!(stdout.contains("planted edges: 3"), "{stdout}");
    assert!(stdout.contains("S003 <- S002 lag 2 beta 0.5"), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.contains(" <- ")).count(), 3);
}

#[test]
fn train_then_backtest_writes_reports() {
    let dir = tiny_dir();
    let first = ok(dir.path(), &["--config", "run.toml", "train"]);
    let log = fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_loss,valid_ic"));
    assert!((2..=4).contains(&log.lines().count()), "{log}");
    assert!(dir.path().join("out/model.ckpt").exists());

    ok(dir.path(), &["--config", "run.toml", "train", "--out", "again"]);
    assert_eq!(
        fs::read(dir.path().join("out/model.ckpt")).unwrap(),
        fs::read(dir.path().join("again/model.ckpt")).unwrap()
    );
    let second = ok(dir.path(), &["--config", "run.toml", "train", "--out", "again"]);
    assert_eq!(first.lines().next(), second.lines().next());

    ok(dir.path(), &["--config", "run.toml", "backtest"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let obj = report.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["arr", "asr", "avol", "equity_curve", "ic", "icir", "ir", "mdd", "rank_ic", "rank_icir"]
    );
    let scores = fs::read_to_string(dir.path().join("out/scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("date,symbol,score,return"));

    let before = fs::read(dir.path().join("out/report.json")).unwrap();
    ok(dir.path(), &["--config", "run.toml", "backtest"]);
    assert_eq!(before, fs::read(dir.path().join("out/report.json")).unwrap());

    ok(dir.path(), &["--config", "run.toml", "eval-metrics", "--scores", "out/scores.csv"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["ic"], report["ic"]);
}

#[test]
fn ablation_flags_change_the_checkpoint() {
    let dir = tiny_dir();
    ok(dir.path(), &["--config", "run.toml", "train", "--no-wdn", "--out", "nw"]);
    let bytes = fs::read(dir.path().join("nw/model.ckpt")).unwrap();
    let has = |needle: &[u8]| bytes.windows(needle.len()).any(|w| w == needle);
    assert!(!has(b"wdn."), "denoiser tensors present without the denoiser");
    ok(dir.path(), &["--config", "run.toml", "backtest", "--no-wdn", "--out", "nw"]);
    let text = fs::read_to_string(dir.path().join("nw/report.json")).unwrap();
    serde_json::from_str::<serde_json::Value>(&text).unwrap();

    ok(dir.path(), &["--config", "run.toml", "train", "--no-ssgl", "--out", "ns"]);
    ok(dir.path(), &["--config", "run.toml", "backtest", "--no-ssgl", "--out", "ns"]);
    let text = fs::read_to_string(dir.path().join("ns/report.json")).unwrap();
    serde_json::from_str::<serde_json::Value>(&text).unwrap();

    // A checkpoint trained without the denoiser does not fit the full model.
    let out = ssgraph(dir.path(), &["--config", "run.toml", "backtest", "--checkpoint", "nw/model.ckpt"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[E_"), "{stderr}");
    assert!(stderr.to_lowercase().contains("fingerprint"), "{stderr}");
}

#[test]
fn oracle_scores_beat_the_benchmark() {
    let dir = tiny_dir();
    ok(dir.path(), &["--config", "run.toml", "backtest", "--oracle-scores", "--table"]);
    let read = |name: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(dir.path().join("out").join(name)).unwrap()).unwrap()
    };
    let model = read("report.json");
    let bench = read("benchmark_report.json");
    assert!(model["arr"].as_f64().unwrap() > bench["arr"].as_f64().unwrap());
    assert!((model["ic"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(bench["ic"].is_null());
}

#[test]
fn env_overrides_file() {
    let dir = tiny_dir();
    let out = Command::new(env!("CARGO_BIN_EXE_ssgraph"))
        .current_dir(dir.path())
        .args(["--config", "run.toml", "synth"])
        .env("SSGRAPH__SYNTHETIC__N_DAYS", "50")
        .env("SSGRAPH__OUTPUT__DIR", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("from_env/panel.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 50);
}

#[test]
fn grad_check_passes_and_fails_on_demand() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["grad-check"]);
    assert!(stdout.starts_with("max relative error"), "{stdout}");
    ok(dir.path(), &["grad-check", "--no-ssgl", "--no-wdn"]);

    let out = ssgraph(dir.path(), &["grad-check", "--tolerance", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_GRADCHECK]"));
}

#[test]
fn errors_are_single_coded_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[model]\nno_such_key = 1\n").unwrap();
    for (args, code) in [
        (&["--config", "bad.toml", "synth"][..], "E_CONFIG"),
        (&["--config", "missing.toml", "synth"][..], "E_CONFIG"),
        (&["nonsense"][..], "E_USAGE"),
        (&["eval-metrics", "--scores", "nope.csv"][..], "E_"),
    ] {
        let out = ssgraph(dir.path(), args);
        assert!(!out.status.success(), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
        assert!(stderr.starts_with(&format!("error[{code}")), "{args:?}: {stderr}");
    }
    assert!(ssgraph(dir.path(), &["--help"]).status.success());
}
