use std::path::Path;
use std::process::{Command, Output};

use pose_cvae::cvae::ModelParams;
use pose_cvae::geometry::orthonormality_error;
use pose_cvae::scenes::read_dataset;
use pose_cvae_cli::commands::{cmd_bench, cmd_train, Workspace};
use pose_cvae_cli::{Checkpoint, Model, RunConfig};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "hidden_width=16",
    "hidden_layers=2",
    "fusion_width=8",
    "feature_width=8",
    "mc_samples=4",
    "iterations=60",
    "warmup_start=10",
    "warmup_length=20",
    "n_train=30",
    "n_test=6",
    "samples=200",
];

fn run(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pose-cvae"));
    cmd.env("POSE_CVAE_OUT", out);
    for s in SMALL {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn small_config() -> RunConfig {
    let overrides: Vec<String> = SMALL.iter().map(|s| s.to_string()).collect();
    RunConfig::default().with_overrides(&overrides).unwrap()
}

#[test]
fn generate_writes_both_splits_reproducibly() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate"]);
    let train = read(&dir.path().join("dataset_train.txt"));
    let test = read(&dir.path().join("dataset_test.txt"));
    assert_eq!(read_dataset(train.as_slice()).unwrap().len(), 30);
    assert_eq!(read_dataset(test.as_slice()).unwrap().len(), 6);
    assert!(dir.path().join("scene.json").exists());
    assert!(String::from_utf8_lossy(&train).contains("\"scene_seed\":0"));

    ok(dir.path(), &["generate"]);
    assert_eq!(read(&dir.path().join("dataset_train.txt")), train);
    assert_eq!(read(&dir.path().join("dataset_test.txt")), test);
}

#[test]
fn invalid_pattern_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["--set", "pattern=[\"red\",\"mauve\",\"red\"]", "generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("InvalidScene"));
}

#[test]
fn usage_errors_and_help() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["sample"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    let o = run(dir.path(), &["--set", "iteratons=3", "generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("InvalidConfig"));
}

#[test]
fn config_file_and_out_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n_train = 12\nn_test = 4\nscene_seed = 3\n").unwrap();
    let elsewhere = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_pose-cvae"))
        .args(["--config", cfg.to_str().unwrap(), "--out", elsewhere.to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let d = read_dataset(read(&elsewhere.join("dataset_train.txt")).as_slice()).unwrap();
    assert_eq!((d.len(), d.seed), (12, 3));
}

#[test]
fn zero_iterations_checkpoint_is_the_initialization() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["--set", "iterations=0", "train"]);
    let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ck.final_iteration, 0);
    let cfg = small_config();
    let fresh = ModelParams::<f32>::init(cfg.train_config().architecture(3), cfg.init_seed);
    assert_eq!(ck.model().unwrap(), Model::F32(fresh));
}

#[test]
fn full_pipeline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["train"]);
    let log = read(&dir.path().join("loss_log.csv"));
    let ck = read(&dir.path().join("checkpoint.json"));
    let text = String::from_utf8_lossy(&log);
    assert!(text.lines().any(|l| l == "iteration,beta,kl,reconstruction,total"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 61);

    ok(dir.path(), &["train"]);
    assert_eq!(read(&dir.path().join("loss_log.csv")), log);
    assert_eq!(read(&dir.path().join("checkpoint.json")), ck);

    ok(dir.path(), &["sample", "--index", "0", "-m", "1000", "--seed", "5", "--plot", "x"]);
    let samples = read(&dir.path().join("samples.txt"));
    let parsed = read_dataset(samples.as_slice()).unwrap();
    assert_eq!(parsed.len(), 1000);
    assert!(parsed
        .records
        .iter()
        .all(|r| orthonormality_error(&r.pose.rotation) <= 1e-6));
    assert!(dir.path().join("kde.svg").exists() && dir.path().join("kde.dat").exists());
    ok(dir.path(), &["sample", "--index", "0", "-m", "1000", "--seed", "5"]);
    assert_eq!(read(&dir.path().join("samples.txt")), samples);

    let o = ok(dir.path(), &["evaluate"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("recall @ 0.1/10°"));
    let report = String::from_utf8(read(&dir.path().join("report.csv"))).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("# recall")).count(), 3);
    assert!(dir.path().join("mode_coverage.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("summary.json"))).unwrap();
    assert_eq!(summary["recall_monotone"], serde_json::Value::Bool(true));

    let o = ok(dir.path(), &["bench", "-m", "10", "--repetitions", "3"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ms over 3 repetitions"));
}

#[test]
fn untrained_model_has_low_recall() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["--set", "iterations=0", "train"]);
    ok(dir.path(), &["evaluate"]);
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("summary.json"))).unwrap();
    assert!(summary["recall"][0].as_f64().unwrap() <= 0.2, "{summary}");
}

#[test]
fn non_finite_training_data_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate"]);
    let path = dir.path().join("dataset_train.txt");
    let text = String::from_utf8(read(&path)).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let first = lines.iter().position(|l| !l.starts_with('#')).unwrap();
    let mut fields: Vec<&str> = lines[first].split(' ').collect();
    fields[11] = "inf";
    lines[first] = fields.join(" ");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = run(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NonFiniteValue"));
}

#[test]
fn mismatched_dataset_is_an_architecture_error() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["--set", "iterations=0", "train"]);
    let wide = dir.path().join("wide");
    ok(&wide, &["--set", "feature_dim=6", "generate"]);
    let data = wide.join("dataset_test.txt");
    let o = run(dir.path(), &["evaluate", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ArchitectureMismatch"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Io"));
}

#[test]
fn bench_statistics() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["generate"]);
    let ws = Workspace::new(small_config().with_overrides(&["iterations=0".into()]).unwrap(), dir.path()).unwrap();
    let out = cmd_train(&ws, &dir.path().join("dataset_train.txt"), |_| {}).unwrap();
    let one = cmd_bench(&ws, &out.checkpoint, 1, 1).unwrap();
    assert_eq!(one.std_ms, 0.0);
    let small = cmd_bench(&ws, &out.checkpoint, 1, 20).unwrap();
    let large = cmd_bench(&ws, &out.checkpoint, 1000, 20).unwrap();
    assert!(large.mean_ms > small.mean_ms);
}
