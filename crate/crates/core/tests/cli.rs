use std::fs;
use std::path::Path;
use std::process::Command;

use reflab::cli::main_with_args;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = main_with_args(std::iter::once("reflab").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

const TINY: &[&str] = &[
    "--set", "model.hidden=8", "--set", "model.blocks=1", "--set", "model.heads=1",
    "--set", "model.d_x=2", "--set", "model.d_y=2", "--set", "model.d_t=4",
    "--set", "model.tag_hidden=4", "--set", "model.time_dim=4", "--set", "model.frames=6",
    "--set", "model.height=3", "--set", "model.width=3",
    "--set", "train.scene.pattern_height=1", "--set", "train.scene.pattern_width=1", "--set", "train.scene.max_len=3",
    "--set", "train.batch_size=1", "--set", "sampler.steps=2",
];

fn with(root: &Path, cmd: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
    v.extend(["--run-root".to_string(), root.display().to_string()]);
    v.extend(TINY.iter().map(|s| s.to_string()));
    v
}

fn run(args: &[String]) -> (i32, String, String) {
    cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn profile_csv() {
    let (code, out, _) = cli(&["profile", "--variant", "we", "--t0", "8", "--t1", "10", "--frames", "18"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "frame,score,variant,t0,t1,w_p,w_n");
    assert_eq!(lines.len(), 19);
    let scores: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let peak = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(peak, 9);

    let (_, mid_a, _) = cli(&["profile", "--variant", "mid", "--t0", "8", "--t1", "10", "--frames", "18"]);
    let (_, mid_b, _) = cli(&["profile", "--variant", "mid", "--t0", "1", "--t1", "17", "--frames", "18"]);
    let col = |s: &str| s.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(col(&mid_a), col(&mid_b));

    let (code, _, _) = cli(&["profile", "--t0", "8", "--t1", "10", "--frames", "18", "--wp", "1", "--wn", "-0.25"]);
    assert_eq!(code, 0);
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["--help"]).0, 0);
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&["profile", "--t0", "9", "--t1", "3", "--frames", "12"]).0, 2);
    assert_eq!(cli(&["profile", "--t0", "0", "--t1", "3", "--frames", "2"]).0, 2);
    let (code, _, err) = cli(&["eval", "--oracle", "--set", "model.hiden=3"]);
    assert_eq!(code, 2);
    assert!(err.contains("hiden"), "{err}");

    let status = Command::new(env!("CARGO_BIN_EXE_reflab")).args(["profile", "--t0", "1"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn train_zero_steps_writes_checkpoint_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&with(tmp.path(), &["train", "--name", "z", "--steps", "0"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("0 -> 0 steps"));
    let dir = tmp.path().join("z");
    assert!(dir.join("ckpt/last.bin").exists());
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["model"]["hidden"], 8);
    assert_eq!(cfg["train"]["scene"]["frames"], 6);
}

#[test]
fn train_resume_and_sample() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&with(tmp.path(), &["train", "--name", "r", "--steps", "2"])).0, 0);
    let (code, out, err) = run(&with(tmp.path(), &["train", "--name", "r", "--steps", "4", "--resume"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("trained 2 -> 4"), "{out}");
    let logs = fs::read_to_string(tmp.path().join("r/logs.jsonl")).unwrap();
    assert!(logs.lines().count() >= 2);
    let (code, _, err) = run(&with(tmp.path(), &["sample", "--name", "r", "--case", "1"]));
    assert_eq!(code, 0, "{err}");
    let sample: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r/samples/case_1.json")).unwrap()).unwrap();
    assert_eq!(sample["case_id"], 1);
}

#[test]
fn sample_without_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&with(tmp.path(), &["sample", "--name", "missing"])).0, 2);
}

#[test]
fn oracle_and_noise_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&with(tmp.path(), &["eval", "--name", "o", "--oracle", "--cases", "6"]));
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["aggregates"]["all"]["t_iou"], 1.0);
    assert_eq!(report["aggregates"]["all"]["t_l2"], 0.0);
    let csv = fs::read_to_string(tmp.path().join("o/report.csv")).unwrap();
    assert!(csv.starts_with("case_id,ref_index,ref_count,t_iou,t_l2,pattern_sim,failed"));

    assert_eq!(run(&with(tmp.path(), &["eval", "--name", "n", "--noise", "--cases", "6"])).0, 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("n/report.json")).unwrap()).unwrap();
    assert!(report["aggregates"]["all"]["t_iou"].as_f64().unwrap() <= 0.2);
}

#[test]
fn ablate_writes_six_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&with(tmp.path(), &["ablate", "--name", "a", "--steps", "2", "--cases", "2"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("noise baseline"));
    let csv = fs::read_to_string(tmp.path().join("a/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,t_l2,t_iou,pattern_sim");
    assert_eq!(lines.len(), 7);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
}

#[test]
fn gen_data_writes_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("data");
    let (code, _, err) = run(&with(tmp.path(), &["gen-data", "--out", out_dir.to_str().unwrap(), "--count", "3"]));
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_dir(out_dir.join("scenes")).unwrap().count(), 3);
}
