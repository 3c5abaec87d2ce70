use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
env = coop-targets:2
variant = FDCo
hidden_widths = 8
batch = 8
capacity = 2000
min_experiences_before_training = 200
grad_steps_per_episode = 2
max_episodes = 6
";

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refer-marl")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_quick_succeeds() {
    let out = cli(&["verify", "--quick"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [("unknown.cfg", "gama = 0.9\n"), ("value.cfg", "gamma = 1.5\n"), ("syntax.cfg", "gamma\n"), ("dup.cfg", "lr = 0.1\nlr = 0.2\n")];
    for (name, text) in cases {
        let cfg = dir.path().join(name);
        fs::write(&cfg, text).unwrap();
        let out = cli(&["train", "--config", path(&cfg), "--out", path(&dir.path().join("run"))]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = cli(&["train", "--config", path(&dir.path().join("missing.cfg"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_resume_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    let out = cli(&["train", "--config", path(&cfg), "--out", path(&run), "--checkpoint-every", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = run.join("metrics.jsonl");
    let full = fs::read_to_string(&metrics).unwrap();
    assert_eq!(full.lines().count(), 6);
    assert!(run.join("checkpoint.bin").exists());
    assert!(run.join("config.txt").exists());

    // A finished run resumes as a no-op and keeps its metrics.
    let out = cli(&["train", "--resume", "--out", path(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&metrics).unwrap().lines().count(), 6);

    let out = cli(&["eval", "--checkpoint", path(&run.join("checkpoint.bin")), "--episodes", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean_return"));

    let out = cli(&["plot", "--metrics", path(&metrics), "--window", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("metrics.curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(fs::read_to_string(run.join("metrics.curves.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn runtime_failures_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("checkpoint.bin");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = cli(&["eval", "--checkpoint", path(&bogus)]);
    assert_eq!(out.status.code(), Some(3));
    let out = cli(&["train", "--resume", "--out", path(&dir.path().join("nothing"))]);
    assert_eq!(out.status.code(), Some(3));
}
