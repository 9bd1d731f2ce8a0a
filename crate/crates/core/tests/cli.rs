//! End-to-end CLI checks: subcommand plumbing, exit codes, and
//! deterministic artifacts.

use std::path::Path;
use std::process::Command;

fn memact() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memact"))
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn gen_demos_is_byte_deterministic() {
    let dir = tmp();
    for run in ["a", "b"] {
        let out = memact()
            .args(["gen-demos", "--task", "markov_reach", "--n", "5", "--seed", "3"])
            .arg("--out")
            .arg(dir.path().join(run))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for i in 0..5 {
        let name = format!("ep_{i:05}.jsonl");
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "episode file {name} differs between runs");
    }
}

#[test]
fn full_cli_pipeline_runs() {
    let dir = tmp();
    let demos = dir.path().join("demos");
    let run = dir.path().join("run");
    let status = memact()
        .args(["gen-demos", "--task", "markov_reach", "--n", "12", "--seed", "1"])
        .arg("--out")
        .arg(&demos)
        .status()
        .unwrap();
    assert!(status.success());

    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "task = \"markov_reach\"\ntotal_steps = 10\nbatch_size = 8\nchunk_len = 4\n\
         exec_horizon = 1\nn_p = 2\nd_p = 8\nd_c = 8\nd_model = 16\nn_blocks = 1\n\
         heads = 2\nheads_perceptual = 2\nse_ratio = 2\n",
    )
    .unwrap();
    let status = memact()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--demos")
        .arg(&demos)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(run.join("checkpoint.json").is_file());
    assert!(run.join("metrics.csv").is_file());

    let out = memact()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run.join("checkpoint.json"))
        .args(["--task", "markov_reach", "--trials", "3", "--ensemble", "adaptive"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"mean_score\""), "eval must print a report: {text}");

    let status = memact()
        .arg("plot-metrics")
        .arg("--csv")
        .arg(run.join("metrics.csv"))
        .arg("--out")
        .arg(dir.path().join("chart"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("chart_loss.png").is_file());
}

#[test]
fn config_errors_exit_2() {
    // missing config file
    let out = memact()
        .args(["train", "--config", "/nonexistent.toml", "--demos", "/tmp", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // unknown task name
    let out = memact()
        .args(["gen-demos", "--task", "bogus_task", "--n", "1", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // invalid field value
    let dir = tmp();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "learning_rate = -1.0\n").unwrap();
    let demos = dir.path().join("demos");
    let status = memact()
        .args(["gen-demos", "--task", "markov_reach", "--n", "2", "--seed", "0"])
        .arg("--out")
        .arg(&demos)
        .status()
        .unwrap();
    assert!(status.success());
    let out = memact()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--demos")
        .arg(&demos)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn data_errors_exit_3() {
    let dir = tmp();
    // demos directory without episodes
    std::fs::create_dir_all(dir.path().join("empty")).unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "task = \"markov_reach\"\ntotal_steps = 1\n").unwrap();
    let out = memact()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--demos")
        .arg(dir.path().join("empty"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // corrupt checkpoint
    let ckpt = dir.path().join("ckpt.json");
    std::fs::write(&ckpt, "{not json").unwrap();
    let out = memact()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--task", "markov_reach", "--trials", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_rejects_wrong_task_with_exit_2() {
    let dir = tmp();
    let demos = dir.path().join("demos");
    memact()
        .args(["gen-demos", "--task", "markov_reach", "--n", "8", "--seed", "1"])
        .arg("--out")
        .arg(&demos)
        .status()
        .unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "task = \"markov_reach\"\ntotal_steps = 2\nbatch_size = 4\nchunk_len = 2\n\
         exec_horizon = 1\nn_p = 2\nd_p = 8\nd_c = 8\nd_model = 16\nn_blocks = 1\n\
         heads = 2\nheads_perceptual = 2\nse_ratio = 2\n",
    )
    .unwrap();
    memact()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--demos")
        .arg(&demos)
        .arg("--out")
        .arg(dir.path().join("run"))
        .status()
        .unwrap();
    let out = memact()
        .arg("eval")
        .arg("--checkpoint")
        .arg(dir.path().join("run").join("checkpoint.json"))
        .args(["--task", "guess_where", "--trials", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
