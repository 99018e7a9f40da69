use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pixiu_core::ProofLog;
use tempfile::TempDir;

fn pixiu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixiu")).args(args).env_remove("PIXIU_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn result(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("result.json")).unwrap()).unwrap()
}

fn run(scenario: &str, seed: &str, dir: &Path) -> Output {
    pixiu(&["run", "--scenario", scenario, "--seed", seed, "--out", dir.to_str().unwrap()])
}

fn verify(dir: &Path) -> Output {
    let task = result(dir)["task_id"].as_str().unwrap().to_owned();
    let log = dir.join("proofs.log");
    let plan = dir.join("plan.json");
    pixiu(&["verify", "--log", log.to_str().unwrap(), "--task", &task, "--plan", plan.to_str().unwrap()])
}

#[test]
fn ads_run_reports_noisy_count_and_deliveries() {
    let dir = TempDir::new().unwrap();
    let o = run("ads", "1", dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("(noised)"));
    assert!(report.contains("sealed deliveries: 100"));
    assert_eq!(report, fs::read_to_string(dir.path().join("report.txt")).unwrap());
    for f in ["proofs.log", "proofs.log.annex", "result.json", "plan.json", "registry.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(dir.path().join("inbox")).unwrap().count(), 17);
}

#[test]
fn run_then_verify_passes_for_every_scenario() {
    for name in ["ads", "dpquery", "fedavg", "survey"] {
        let dir = TempDir::new().unwrap();
        assert_eq!(code(&run(name, "3", dir.path())), 0, "{name}");
        let v = verify(dir.path());
        assert_eq!(code(&v), 0, "{name}: {}", stdout(&v));
        assert_eq!(stdout(&v).lines().filter(|l| l.ends_with(" ok")).count(), if name == "survey" { 2 } else { 3 });
    }
}

#[test]
fn tampering_exits_two_and_logs_a_failure_proof() {
    let dir = TempDir::new().unwrap();
    let o = pixiu(&["attack", "--scenario", "ads", "--seed", "1", "--fault", "tamper_output@1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let log = ProofLog::open(&dir.path().join("proofs.log")).unwrap();
    assert!(log.entries().last().unwrap().is_failure());
    assert_eq!(result(dir.path())["status"], "failed");
    let v = verify(dir.path());
    assert_eq!(code(&v), 1);
    assert!(stdout(&v).contains("first bad step: 1"));
}

#[test]
fn edited_log_is_rejected() {
    let dir = TempDir::new().unwrap();
    run("ads", "1", dir.path());
    let path = dir.path().join("proofs.log");
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut fields: Vec<String> = lines[1].split('|').map(str::to_owned).collect();
    fields[5] = "f".repeat(64);
    let edited = [lines[0].to_owned(), fields.join("|"), lines[2].to_owned()].join("\n") + "\n";
    fs::write(&path, edited).unwrap();
    let v = verify(dir.path());
    assert_eq!(code(&v), 1);
    assert!(stdout(&v).contains("first bad step: 1"), "{}", stdout(&v));
}

#[test]
fn unknown_task_and_digest_exit_four() {
    let dir = TempDir::new().unwrap();
    run("survey", "1", dir.path());
    let log = dir.path().join("proofs.log");
    let plan = dir.path().join("plan.json");
    let o = pixiu(&["verify", "--log", log.to_str().unwrap(), "--task", &"ab".repeat(16), "--plan", plan.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let o = pixiu(&["trace", "--log", log.to_str().unwrap(), "--digest", &"cd".repeat(32)]);
    assert_eq!(code(&o), 4);
}

#[test]
fn trace_reaches_every_batch() {
    let dir = TempDir::new().unwrap();
    run("ads", "1", dir.path());
    let r = result(dir.path());
    let log = dir.path().join("proofs.log");
    let o = pixiu(&["trace", "--log", log.to_str().unwrap(), "--digest", r["output_digest"].as_str().unwrap(), "--json"]);
    assert_eq!(code(&o), 0);
    let tree: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let leaves: Vec<&str> = tree["leaves"].as_array().unwrap().iter().map(|l| l["batch_digest"].as_str().unwrap()).collect();
    let batches: Vec<&str> = r["input_batches"].as_array().unwrap().iter().map(|b| b.as_str().unwrap()).collect();
    assert_eq!(leaves, batches);
    assert_eq!(tree["complete"], true);
}

#[test]
fn configuration_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let o = pixiu(&["run", "--scenario", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "name = \"x\"\n[network]\nnodes = \"many\"\n").unwrap();
    let o = pixiu(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(!o.stderr.is_empty());
    let o = pixiu(&["attack", "--scenario", "ads", "--fault", "teleport@1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let o = pixiu(&["run", "--bogus"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn config_file_resolves_its_data_relative_to_itself() {
    let dir = TempDir::new().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/survey/scenario.toml");
    let out = dir.path().join("out");
    let o = pixiu(&["run", "--config", fixtures.to_str().unwrap(), "--out", out.to_str().unwrap(), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["status"], "ok");
}

#[test]
fn identical_seeds_give_identical_files() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run("dpquery", "9", a.path());
    run("dpquery", "9", b.path());
    for f in ["proofs.log", "proofs.log.annex", "result.json", "report.txt", "plan.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_comes_from_flag_then_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let with_env = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_pixiu")).args(args).env("PIXIU_SEED", "77").output().unwrap();
    assert_eq!(code(&with_env(&["run", "--scenario", "survey", "--out", out])), 0);
    assert_eq!(result(dir.path())["seed"], 77);
    assert_eq!(code(&with_env(&["run", "--scenario", "survey", "--seed", "5", "--out", out])), 0);
    assert_eq!(result(dir.path())["seed"], 5);
    let bad = Command::new(env!("CARGO_BIN_EXE_pixiu"))
        .args(["run", "--scenario", "survey", "--out", out])
        .env("PIXIU_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 3);
}
