//! End-to-end checks of the command-line surface: subcommands, config
//! loading, and exit codes (0 success, 1 usage, 2 runtime, 3 partial).

use std::fs;
use std::path::Path;
use std::process::Command;

fn banditlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_banditlab"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let out = dir.join("out");
    let text = format!(
        "task = 1\nn_runs = 4\nseed = 9\nout_dir = {:?}\n{extra}",
        out.to_string_lossy()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_then_report_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[optimizer]\nn_restarts = 3\n");
    let status = banditlab()
        .args(["simulate", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let transcripts = dir.path().join("out/transcripts");
    assert_eq!(fs::read_dir(&transcripts).unwrap().count(), 4);

    let output = banditlab()
        .args(["report", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("manifest config hash"));
    assert!(dir
        .path()
        .join("out/reports/task1_cogsim/regret.csv")
        .exists());
}

#[test]
fn compare_prints_posterior_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[optimizer]\nn_restarts = 3\n");
    banditlab()
        .args(["simulate", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    let output = banditlab()
        .args(["compare", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("PP(RW)"), "{stdout}");
    assert!(stdout.contains("PP(RWpm)"), "{stdout}");
}

#[test]
fn unknown_model_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "models = [\"Nonsense\"]\n");
    banditlab()
        .args(["simulate", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    let output = banditlab()
        .args(["fit", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1), "{output:?}");
}

#[test]
fn bad_flag_is_usage_error() {
    let output = banditlab().arg("--nope").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn evaluate_without_checkpoint_points_to_train() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let output = banditlab()
        .args(["evaluate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("train"));
}

#[test]
fn missing_transcripts_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let output = banditlab()
        .args(["fit", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn train_zero_episodes_writes_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[metarl]\nepisodes_total = 0\n");
    let output = banditlab()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stderr).contains("untrained"));
    assert!(dir.path().join("out/checkpoint.json").exists());
    // An untrained checkpoint evaluates fine (at the random baseline).
    let output = banditlab()
        .args(["evaluate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
}

#[test]
fn gen_prompts_and_ingest_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let status = banditlab()
        .args(["gen-prompts", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let prompts = fs::read_to_string(dir.path().join("out/prompts/task1_run00.txt")).unwrap();
    assert!(prompts.contains("A: Machine"));

    banditlab()
        .args(["simulate", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    // Concatenate the runs into one external file and ingest it back.
    let mut combined = String::new();
    for i in 0..4 {
        combined.push_str(
            &fs::read_to_string(dir.path().join(format!("out/transcripts/run_{i:03}.jsonl")))
                .unwrap(),
        );
    }
    let external = dir.path().join("external.jsonl");
    fs::write(&external, combined).unwrap();
    let ingest_out = dir.path().join("ingested");
    let output = banditlab()
        .args(["ingest", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&ingest_out)
        .arg(&external)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stdout).contains("ingested 4 transcript(s)"));
}
