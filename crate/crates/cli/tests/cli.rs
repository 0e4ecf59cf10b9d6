use std::path::Path;
use std::process::{Command, Output};

use hypervd::data_io::{read_frame_labels, Manifest};

fn hypervd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypervd"))
        .args(args)
        .env_remove("HYPERVD_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_dataset(dir: &Path) {
    ok(&hypervd(&[
        "gen-synth", "--out", p(dir), "--seed", "2", "--n-train", "8", "--n-test", "4", "--t-min", "4", "--t-max", "6",
    ]));
}

/// Rewrites the generated config with a short schedule.
fn short_config(dir: &Path, epochs: usize) -> std::path::PathBuf {
    let cfg = dir.join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("epochs = 50", &format!("epochs = {epochs}"));
    assert!(text.contains(&format!("epochs = {epochs}")));
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn help_documents_every_subcommand() {
    let top = ok(&hypervd(&["--help"]));
    for sub in ["gen-synth", "train", "score", "eval", "ablate", "gradcheck"] {
        assert!(top.contains(sub), "{sub} missing from --help");
        let help = ok(&hypervd(&[sub, "--help"]));
        assert!(help.contains("--"), "{sub} --help lists no flags");
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nhiden = 3\n").unwrap();
    let out = hypervd(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: config:"));

    assert_eq!(hypervd(&["train", "--config", p(&tmp.path().join("missing.toml"))]).status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_hypervd"))
        .args(["gradcheck"])
        .env("HYPERVD_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let first = Manifest::read(tmp.path().join("train.csv")).unwrap().entries[0].visual.clone();
    std::fs::write(tmp.path().join(first), b"HVDF\x01").unwrap();
    let out = hypervd(&["train", "--config", p(&tmp.path().join("config.toml"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data_io"));
}

#[test]
fn failed_gradient_check_exits_4() {
    let out = hypervd(&["gradcheck", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));
    assert!(ok(&hypervd(&["gradcheck"])).starts_with("PASS"));
}

#[test]
fn eval_of_perfect_scores_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let manifest = Manifest::read(tmp.path().join("test.csv")).unwrap();
    let scores = tmp.path().join("scores");
    std::fs::create_dir(&scores).unwrap();
    for e in &manifest.entries {
        let labels = read_frame_labels(manifest.resolve(e.frame_labels.as_ref().unwrap())).unwrap();
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(scores.join(format!("{}.scores", e.id)), text).unwrap();
    }
    let report = tmp.path().join("report.txt");
    let out = ok(&hypervd(&[
        "eval", "--scores", p(&scores), "--manifest", p(&tmp.path().join("test.csv")), "--out", p(&report),
    ]));
    assert!(out.starts_with("ap: 1.000000\n"), "{out}");
    assert_eq!(std::fs::read_to_string(report).unwrap(), out);
}

#[test]
fn train_then_score_writes_one_score_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let cfg = short_config(tmp.path(), 2);
    let run = tmp.path().join("run");
    let log = ok(&hypervd(&["train", "--config", p(&cfg), "--out", p(&run)]));
    assert!(log.contains("best epoch"));
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let scores = tmp.path().join("scores");
    let test = tmp.path().join("test.csv");
    ok(&hypervd(&[
        "score", "--checkpoint", p(&run.join("checkpoint.hvdm")), "--manifest", p(&test), "--out", p(&scores),
    ]));
    let manifest = Manifest::read(&test).unwrap();
    for e in &manifest.entries {
        let labels = read_frame_labels(manifest.resolve(e.frame_labels.as_ref().unwrap())).unwrap();
        let text = std::fs::read_to_string(scores.join(format!("{}.scores", e.id))).unwrap();
        assert_eq!(text.lines().count(), labels.len());
        assert!(text.lines().all(|l| (0.0..=1.0).contains(&l.parse::<f64>().unwrap())));
        let curve = std::fs::read_to_string(scores.join(format!("{}.curve.csv", e.id))).unwrap();
        assert_eq!(curve.lines().count(), labels.len() + 1);
    }
    let report = ok(&hypervd(&["eval", "--scores", p(&scores), "--manifest", p(&test)]));
    let frames: usize = manifest
        .entries
        .iter()
        .map(|e| read_frame_labels(manifest.resolve(e.frame_labels.as_ref().unwrap())).unwrap().len())
        .sum();
    assert!(report.contains(&format!("n_frames: {frames}\n")), "{report}");
}

#[test]
fn ablation_tables_have_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let cfg = short_config(tmp.path(), 1);
    for (axis, rows) in [("branch", vec!["hfsg", "htrg", "hfsg+htrg"]), ("geometry", vec!["euclidean", "hyperbolic"])] {
        let table = ok(&hypervd(&["ablate", "--config", p(&cfg), "--axis", axis]));
        let mut lines = table.lines();
        assert_eq!(lines.next(), Some("variant,ap,params"));
        let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, rows);
    }
    assert_eq!(hypervd(&["ablate", "--config", p(&cfg), "--axis", "depth"]).status.code(), Some(2));
}
