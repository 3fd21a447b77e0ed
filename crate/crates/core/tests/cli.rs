//! The `horosim` binary end to end.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_horosim");

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn horosim(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env_remove("HOROSIM_OUT_DIR").output().unwrap()
}

#[test]
fn bad_config_lists_every_violation() {
    let dir = common::scratch_dir("cli-bad");
    let cfg = write_config(&dir, "d = 3\nsides = [4, 4]\nbeta = 2\nbta = 1\n");
    let out_dir = dir.join("out");
    let out = horosim(&["ward", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let failure: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("failure.json")).unwrap()).unwrap();
    let errs = failure["reason"]["config_errors"].as_array().unwrap();
    let text: Vec<&str> = errs.iter().map(|e| e.as_str().unwrap()).collect();
    assert!(text.iter().any(|e| e.contains("arity") || e.contains("2 entries but d = 3")), "{text:?}");
    assert!(text.iter().any(|e| e.contains("unknown key `bta`")), "{text:?}");
    assert!(text.iter().any(|e| e.contains("`h` or `h_rule`")), "{text:?}");
}

#[test]
fn pushforward_runs_and_replays() {
    let dir = common::scratch_dir("cli-push");
    let cfg = write_config(&dir, "seed = 4\n[pushforward]\nn = 1\nbig_n = 1\ndraws = 20000\n");
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.join(run);
        let out = horosim(&["pushforward", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
        assert!(!out_dir.join("failure.json").exists());
        csvs.push(fs::read(out_dir.join("pushforward.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert!(text.starts_with("# seed: 4\n# config: {"));
}

#[test]
fn seed_flag_overrides_and_env_sets_only_the_output_dir() {
    let dir = common::scratch_dir("cli-seed");
    let cfg = write_config(&dir, "seed = 4\n[pushforward]\nn = 1\nbig_n = 2\ndraws = 2000\n");
    let env_dir = dir.join("from-env");
    let out = Command::new(BIN)
        .args(["pushforward", "--config", cfg.to_str().unwrap(), "--seed", "9"])
        .env("HOROSIM_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(env_dir.join("pushforward.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["config"]["seed"], 9);

    // --out wins over the environment.
    let flag_dir = dir.join("from-flag");
    let out = Command::new(BIN)
        .args(["pushforward", "--config", cfg.to_str().unwrap(), "--out", flag_dir.to_str().unwrap()])
        .env("HOROSIM_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_dir.join("pushforward.csv").exists());
}

#[test]
fn certify_small_lattice_passes() {
    let dir = common::scratch_dir("cli-certify");
    let cfg = write_config(
        &dir,
        "d = 2\nsides = [3, 3]\nbeta = 2\nh_rule = \"inverse_volume\"\n[chain]\nnum_sweeps = 1200\nburn_in = 200\n[certify]\nconfigs = 100\n",
    );
    let out_dir = dir.join("out");
    let out = horosim(&["certify", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(out_dir.join("certify.csv")).unwrap();
    // Two comment lines, the header, then one row per configuration.
    assert_eq!(csv.lines().count(), 3 + 100);
}

#[test]
fn ward_subcommand_passes_at_unit_volume_field() {
    let dir = common::scratch_dir("cli-ward");
    let cfg = write_config(
        &dir,
        "d = 1\nsides = [8]\nbeta = 2\nh_rule = \"inverse_volume\"\n[chain]\nnum_sweeps = 20000\nburn_in = 1000\nchains = 2\n",
    );
    let out_dir = dir.join("out");
    let out = horosim(&["ward", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("ward.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}
