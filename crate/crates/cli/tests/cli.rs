use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfg_sinkhorn::config::RunConfig;
use mfg_sinkhorn::output::{read_frame, Manifest, MANIFEST, PARTIAL};

const TRIVIAL: &str = r#"
[grid]
points = [16, 12]

[problem]
horizon = 1.0
steps = 6

[[population]]
initial = { kind = "gaussian", center = [0.3, 0.5], weights = [30.0, 30.0] }
final_cost = { kind = "quadratic_bowl", center = [0.7, 0.5], strength = 4.0 }
"#;

const TWO_POP: &str = r#"
[grid]
points = [10, 10]

[problem]
horizon = 1.0
steps = 4

[[population]]
initial = { kind = "gaussian", center = [0.2, 0.5], weights = [50.0, 50.0] }
final_cost = { kind = "quadratic_bowl", center = [0.8, 0.45], strength = 50.0 }

[[population]]
initial = { kind = "gaussian", center = [0.8, 0.5], weights = [50.0, 50.0] }
final_cost = { kind = "quadratic_bowl", center = [0.2, 0.5], strength = 50.0 }

[interaction]
kind = "ball"
strength = 120.0
radius = 0.2
"#;

fn mfgsolve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfgsolve"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn solve(config: &Path, out: &Path) -> Output {
    mfgsolve(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ])
}

#[test]
fn trivial_run_exits_zero_with_normalized_frames() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "trivial.toml", TRIVIAL);
    let out = dir.path().join("run");
    let result = solve(&config, &out);
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stderr));

    let manifest = Manifest::read(&out).unwrap();
    assert_eq!(manifest.frames.len(), 7);
    assert_eq!(manifest.populations, 1);
    assert_eq!(manifest.dtype, "f64");
    for entry in &manifest.frames {
        let frame = read_frame(&out.join(&entry.file)).unwrap();
        assert_eq!(frame.len(), 16 * 12);
        assert!((frame.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }
    assert!(out.join("iterations.csv").exists());
    assert!(!out.join(PARTIAL).exists());
}

#[test]
fn max_iter_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "pair.toml", TWO_POP);
    let out = dir.path().join("run");
    let result = mfgsolve(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--max-iter",
        "2",
        "--tol",
        "1e-14",
        "--quiet",
    ]);
    assert_eq!(result.status.code(), Some(2));
    let manifest = Manifest::read(&out).unwrap();
    assert_eq!(manifest.iterations, 2);
}

#[test]
fn malformed_config_exits_one_without_frames() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TRIVIAL.replace("steps = 6", "steps = 6\nviscosity = 2.0");
    let config = write_config(dir.path(), "bad.toml", &bad);
    let out = dir.path().join("run");
    let result = solve(&config, &out);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("viscosity"), "{stderr}");
    assert!(!out.join(MANIFEST).exists());
    assert!(!out.join("frames").exists());

    let negative = TRIVIAL.replace("horizon = 1.0", "horizon = -1.0");
    let config = write_config(dir.path(), "neg.toml", &negative);
    let result = solve(&config, &out);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("problem.horizon"));
    assert!(!out.join("frames").exists());

    let result = solve(&dir.path().join("missing.toml"), &out);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn describe_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "pair.toml", TWO_POP);
    let first = mfgsolve(&["describe", "--config", config.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0));
    let text = String::from_utf8(first.stdout).unwrap();
    let again = write_config(dir.path(), "described.toml", &text);
    let second = mfgsolve(&["describe", "--config", again.to_str().unwrap()]);
    assert_eq!(String::from_utf8(second.stdout).unwrap(), text);
    let parsed = RunConfig::from_toml(&text).unwrap();
    let original = RunConfig::from_toml(TWO_POP).unwrap();
    assert_eq!(parsed, original);
}

#[test]
fn diagnose_reproduces_trivial_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "trivial.toml", TRIVIAL);
    let out = dir.path().join("run");
    assert_eq!(solve(&config, &out).status.code(), Some(0));
    let result = mfgsolve(&["diagnose", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert_eq!(result.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("interaction   0.000000000000e0"), "{stdout}");
    let deviation: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("energy deviation from run"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(deviation <= 1e-12, "{stdout}");
}

#[test]
fn diagnose_reports_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let result = mfgsolve(&["diagnose", dir.path().to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains(MANIFEST));
}

#[test]
fn verify_oracle_passes() {
    let result = mfgsolve(&["verify-oracle", "--count", "20"]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert_eq!(result.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().last().unwrap().starts_with("PASS"));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("case")).count(), 20);
}

#[test]
fn frames_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "pair.toml", TWO_POP);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(solve(&config, &a).status.code(), Some(0));
    assert_eq!(solve(&config, &b).status.code(), Some(0));
    let ma = Manifest::read(&a).unwrap();
    let mb = Manifest::read(&b).unwrap();
    assert_eq!(ma.frames.len(), 2 * 5);
    assert_eq!(ma.frames, mb.frames);
    for (x, y) in ma.frames.iter().chain(&ma.potentials).zip(mb.frames.iter().chain(&mb.potentials)) {
        assert_eq!(fs::read(a.join(&x.file)).unwrap(), fs::read(b.join(&y.file)).unwrap());
    }
}

#[test]
fn single_bit_corruption_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "trivial.toml", TRIVIAL);
    let out = dir.path().join("run");
    assert_eq!(solve(&config, &out).status.code(), Some(0));
    let manifest = Manifest::read(&out).unwrap();
    let victim = out.join(&manifest.frames[3].file);
    let mut bytes = fs::read(&victim).unwrap();
    bytes[17] ^= 0b0000_0100;
    fs::write(&victim, bytes).unwrap();
    assert_eq!(manifest.verify(&out).len(), 1);
    let result = mfgsolve(&["diagnose", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains(&manifest.frames[3].file));
}

#[test]
fn frame_stride_thins_frames() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "trivial.toml", TRIVIAL);
    let out = dir.path().join("run");
    let result = mfgsolve(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--frame-stride",
        "4",
        "--sweep",
        "jacobi",
        "--log-domain",
        "on",
        "--quiet",
    ]);
    assert_eq!(result.status.code(), Some(0));
    let steps: Vec<usize> = Manifest::read(&out).unwrap().frames.iter().map(|f| f.step).collect();
    assert_eq!(steps, vec![0, 4, 6]);
}
