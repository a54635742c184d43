use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
train_pairs = 30
heldout_pairs = 8
sts_per_level = 3
mrc_train_examples = 12
mrc_test_examples = 6
encoder_dim = 8
encoder_blocks = 1
latent_dim = 6
hidden = 10
stage1_steps = 3
stage1_batch = 4
stage2_epochs = 1
stage2_batch = 4
probe_steps = 2
probe_sentences = 8
"#;

fn s2dm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2dm"))
        .args([
            "--config",
            dir.join("run.toml").to_str().unwrap(),
            "--out-dir",
            dir.join("out").to_str().unwrap(),
        ])
        .args(args)
        .env_remove("S2DM_SEED")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), TINY).unwrap();
    dir
}

#[test]
fn end_to_end_run() {
    let dir = setup();
    for cmd in ["gen-data", "train-stage1", "train-stage2", "eval"] {
        let out = s2dm(dir.path(), &[cmd]);
        assert!(
            out.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = s2dm(dir.path(), &["export-pca", "--vector", "z"]);
    assert!(out.status.success());
    assert!(dir.path().join("out/eval/pca.z.csv").exists());
    let out = s2dm(
        dir.path(),
        &["ablate", "--subsets", "rl+kl+wpl+stl", "--single-network"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("out/ablate/cells.jsonl").exists());
}

#[test]
fn configuration_problems_exit_with_code_two() {
    let dir = setup();
    assert_eq!(
        s2dm(dir.path(), &["--set", "latent_dim=0", "gen-data"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        s2dm(dir.path(), &["--set", "no_such_key=1", "gen-data"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        s2dm(
            dir.path(),
            &[
                "--set",
                "losses=\"rl+crl\"",
                "--set",
                "siamese=false",
                "gen-data"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    let out = s2dm(
        dir.path(),
        &["ablate", "--subsets", "rl+crl", "--single-network"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("siamese"));
}

#[test]
fn missing_artifacts_exit_with_code_one() {
    let dir = setup();
    let out = s2dm(dir.path(), &["train-stage1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn seed_flag_and_environment_change_the_data() {
    let dir = setup();
    let read = |d: &Path| std::fs::read(d.join("out/data/train.l1.conllu")).unwrap();
    assert!(s2dm(dir.path(), &["gen-data"]).status.success());
    let base = read(dir.path());
    assert!(s2dm(dir.path(), &["--seed", "5", "gen-data"])
        .status
        .success());
    let flagged = read(dir.path());
    assert_ne!(base, flagged);
    let out = Command::new(env!("CARGO_BIN_EXE_s2dm"))
        .args([
            "--config",
            dir.path().join("run.toml").to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
            "gen-data",
        ])
        .env("S2DM_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(dir.path()), flagged);
}
