use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fingerdiff::cli::Verification;
use fingerdiff::config::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_fingerdiff");

fn write_config(dir: &Path) -> PathBuf {
    let text = format!(
        r#"[paths]
data_dir = "{data}"

[model]
condition = "feat_diff"
clip_length = 4
ccc_k = 2
embed_dim = 16
convstack_channels = [4, 8, 8, 8]
frame_size = 32
head_channels = [8, 8]
mlp_hidden = 16

[train]
n_identities_per_batch = 2
clips_per_identity = 2
epochs = 1
steps_per_epoch = 2
warmup_epochs = 0
base_lr = 0.003

[synth]
n_identities = 4
videos_per_pair = 2
frame_count_range = [8, 10]
frame_size = 32
test_identities = 2
"#,
        data = dir.join("data").display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("FINGERDIFF_OUT").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn dataset_hash(stdout: &str) -> String {
    stdout.lines().find_map(|l| l.strip_prefix("dataset sha256 ")).unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let gen = |data: &str, seed: &str| {
        dataset_hash(&ok(&run(&["synth-data", "--config", s(&cfg), "--seed", seed, "--set", &format!("paths.data_dir=\"{data}\"")], &[])))
    };
    let a = gen(s(&dir.path().join("a")), "3");
    let b = gen(s(&dir.path().join("b")), "3");
    let c = gen(s(&dir.path().join("c")), "4");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(dir.path().join("a/manifest.jsonl").exists());
}

#[test]
fn configuration_errors_exit_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for bad in ["model.bogus=1", "nosection=1", "model.clip_length=\"long\""] {
        let out = run(&["train", "--config", s(&cfg), "--set", bad], &[]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));
    }
}

#[test]
fn missing_manifest_exits_with_the_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("runs"))], &[]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[io]") && err.contains("manifest.jsonl"), "{err}");
}

#[test]
fn train_evaluate_embed_verify_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let runs = dir.path().join("runs");
    ok(&run(&["synth-data", "--config", s(&cfg)], &[]));

    // Output root from the environment when --out is absent.
    ok(&run(&["train", "--config", s(&cfg)], &[("FINGERDIFF_OUT", &runs)]));
    let checkpoint = runs.join("train/checkpoints/final");
    assert!(checkpoint.join("model.safetensors").exists());
    let resolved = RunConfig::resolve(Some(&runs.join("train/resolved_config.toml")), &[]).unwrap();
    assert_eq!(resolved, RunConfig::resolve(Some(&cfg), &[]).unwrap());

    let stdout = ok(&run(&["evaluate", "--config", s(&cfg), "--out", s(&runs), "--checkpoint", s(&checkpoint)], &[]));
    assert!(stdout.contains("mean AUC"));
    let report = runs.join("evaluate/report.json");
    let rendered = ok(&run(&["report", "--config", s(&cfg), "--out", s(&runs), "--input", s(&report)], &[]));
    assert!(rendered.contains("condition_bars.svg"));

    let video = std::fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(video.lines().next().unwrap()).unwrap();
    let video = dir.path().join("data").join(first["video_path"].as_str().unwrap());
    let enrolled = dir.path().join("enrolled.json");
    ok(&run(&["embed", "--config", s(&cfg), "--out", s(&runs), "--checkpoint", s(&checkpoint), "--video", s(&video), "--output", s(&enrolled)], &[]));
    let verdict = ok(&run(&["verify", "--config", s(&cfg), "--out", s(&runs), "--checkpoint", s(&checkpoint), "--video", s(&video), "--enrolled", s(&enrolled)], &[]));
    let v: Verification = serde_json::from_str(verdict.trim()).unwrap();
    assert!(v.score >= 0.999, "score {}", v.score);
    assert_eq!(v.threshold, 0.5);
    assert_eq!(v.decision, "accept");
}

#[test]
fn condition_ablation_writes_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&run(&["synth-data", "--config", s(&cfg)], &[]));
    let runs = dir.path().join("runs");
    ok(&run(&["ablate", "--axis", "condition", "--config", s(&cfg), "--out", s(&runs), "--set", "train.steps_per_epoch=1"], &[]));
    let table = std::fs::read_to_string(runs.join("ablate/ablation_condition.tsv")).unwrap();
    let rows: Vec<_> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, name) in rows.iter().zip(["feat_diff", "pixel_diff", "raw_feat", "static"]) {
        assert!(row.starts_with(name), "{row}");
    }
    let bad = run(&["ablate", "--axis", "depth", "--config", s(&cfg)], &[]);
    assert_eq!(bad.status.code(), Some(2));
}
