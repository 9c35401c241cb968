//! Runs every example binary with small arguments and checks its output.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str) -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().unwrap().parent().unwrap().join("examples");
    dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
}

fn run(name: &str, args: &[&str]) -> String {
    let path = example(name);
    if !path.exists() {
        let status = Command::new(env!("CARGO"))
            .args(["build", "--example", name, "--manifest-path", concat!(env!("CARGO_MANIFEST_DIR"), "/Cargo.toml")])
            .status()
            .unwrap();
        assert!(status.success(), "could not build example {name}");
    }
    let out = Command::new(&path).args(args).output().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(out.status.success(), "{name} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn rope_identities() {
    let out = run("rope_identities", &[]);
    let norms: Vec<&str> = out.lines().next().unwrap().split(", ").map(|s| s.split(" = ").nth(1).unwrap()).collect();
    assert_eq!(norms[0], norms[1]);
}

#[test]
fn decay_profile() {
    let out = run("decay_profile", &[]);
    assert!(out.contains("we [8, 10]  argmax frame 9"));
}

#[test]
fn token_layout() {
    assert!(!run("token_layout", &[]).is_empty());
}

#[test]
fn synth_scenes() {
    let out = run("synth_scenes", &[]);
    assert!(out.contains("dedup: 3 tracks -> 2"));
}

#[test]
fn flow_sampling() {
    assert!(run("flow_sampling", &[]).contains("forward passes per guided step: 4"));
}

#[test]
fn train_toy() {
    assert!(run("train_toy", &["8"]).contains("finished at step 8"));
}

#[test]
fn benchmark() {
    let out = run("benchmark", &[]);
    assert!(out.contains("t-IoU 0.3333"));
}

#[test]
fn ablation() {
    let out = run("ablation", &["2", "2"]);
    assert_eq!(out.lines().filter(|l| l.contains("final loss")).count(), 6);
}
