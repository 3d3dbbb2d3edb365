use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

const SMALL: &str = r#"{
  "seed": 4,
  "scene": {"height": 12, "width": 12, "endmembers": 3, "bands": 108, "snr_db": 30.0, "length_scale": 3.0},
  "solver": {"max_outer": 20, "multi_start": 1},
  "train": {"epochs": 2, "batch_size": 32},
  "network": {"mode": "1d", "patch": 3}
}"#;

fn mlmunmix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlmunmix"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("MLMUNMIX_THREADS")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("small.json");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_string_lossy().to_string();
    (dir, cfg)
}

fn prepare(dir: &Path, cfg: &str, extra: &[&str]) {
    for cmd in [&["generate"][..], &["vca"][..]] {
        let mut args = cmd.to_vec();
        args.extend(["--config", cfg]);
        args.extend(extra);
        ok(mlmunmix(dir, &args));
    }
}

#[test]
fn full_pipeline_writes_metrics_for_every_method() {
    let (dir, cfg) = setup();
    let d = dir.path();
    prepare(d, &cfg, &[]);
    for m in ["fcls", "supervised", "mlmp"] {
        let out = mlmunmix(d, &["unmix-classic", "--method", m, "--config", &cfg]);
        assert!(matches!(out.status.code(), Some(0) | Some(7)), "{m}: {out:?}");
    }
    ok(mlmunmix(d, &["train", "--config", &cfg]));
    ok(mlmunmix(d, &["infer", "--config", &cfg]));
    ok(mlmunmix(d, &["train", "--mode", "3d", "--patch", "3", "--config", &cfg]));
    ok(mlmunmix(d, &["infer", "--mode", "3d", "--config", &cfg]));
    ok(mlmunmix(d, &["evaluate", "--config", &cfg]));

    let out = d.join("out");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "method,seed,snr_db,sad_endmembers,rmse_abundance,rmse_p,sad_pixels,config_hash");
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["fcls", "supervised", "mlmp", "1dae", "3dae"]);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("4")));
    let summary = fs::read_to_string(out.join("metrics_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);

    let run = out.join("runs/1dae/seed_4");
    for f in ["checkpoint.bin", "loss_history.csv", "endmembers.csv", "maps/abundance_3.pgm", "maps/phist.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_time_s"].as_f64().is_some());
    assert!(manifest["version"].is_string());
    let header = fs::read_to_string(out.join("scene/cube.hdr.json")).unwrap();
    assert!(header.contains("config_hash") && header.contains("\"seed\": 4"));
}

#[test]
fn generate_is_deterministic_and_emits_one_cube_per_snr() {
    let (dir, cfg) = setup();
    let d = dir.path();
    ok(mlmunmix(d, &["generate", "--config", &cfg]));
    let first = fs::read(d.join("out/scene/cube.raw")).unwrap();
    ok(mlmunmix(d, &["generate", "--config", &cfg]));
    assert_eq!(first, fs::read(d.join("out/scene/cube.raw")).unwrap());
    ok(mlmunmix(d, &["generate", "--config", &cfg, "--seed", "5"]));
    assert_ne!(first, fs::read(d.join("out/scene/cube.raw")).unwrap());

    let levels = SMALL.replacen("\"seed\": 4,", "\"seed\": 4, \"snr_levels\": [25, 30, 35],", 1);
    let lcfg = d.join("levels.json");
    fs::write(&lcfg, levels).unwrap();
    ok(mlmunmix(d, &["generate", "--config", lcfg.to_str().unwrap()]));
    for snr in [25, 30, 35] {
        assert!(d.join(format!("out/scene_snr{snr}/cube.raw")).exists());
    }
}

#[test]
fn desk_scale_generation_is_fast() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    ok(mlmunmix(dir.path(), &["generate"]));
    assert!(start.elapsed() < Duration::from_secs(10), "{:?}", start.elapsed());
    let hdr = fs::read_to_string(dir.path().join("out/scene/cube.hdr.json")).unwrap();
    assert!(hdr.contains("\"height\": 64") && hdr.contains("\"bands\": 224"));
}

#[test]
fn missing_inputs_name_the_stage() {
    let (dir, cfg) = setup();
    let out = mlmunmix(dir.path(), &["vca", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `generate` first"));

    ok(mlmunmix(dir.path(), &["generate", "--config", &cfg]));
    let out = mlmunmix(dir.path(), &["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `vca` first"));
    let out = mlmunmix(dir.path(), &["evaluate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_configuration_and_infeasible_network_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"unknown_section": 1}"#).unwrap();
    let out = mlmunmix(dir.path(), &["generate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let narrow = SMALL.replace("\"bands\": 108", "\"bands\": 64");
    let cfg = dir.path().join("narrow.json");
    fs::write(&cfg, narrow).unwrap();
    let cfg = cfg.to_str().unwrap();
    prepare(dir.path(), cfg, &[]);
    let out = mlmunmix(dir.path(), &["train", "--config", cfg]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("block 3"));
}

#[test]
fn repeats_and_single_thread_reproducibility() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let mut metrics = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(d.join("out"));
        prepare(d, &cfg, &["--threads", "1"]);
        ok(mlmunmix(d, &["train", "--repeats", "2", "--threads", "1", "--config", &cfg]));
        ok(mlmunmix(d, &["infer", "--repeats", "2", "--threads", "1", "--config", &cfg]));
        ok(mlmunmix(d, &["evaluate", "--methods", "1dae", "--threads", "1", "--config", &cfg]));
        metrics.push(fs::read(d.join("out/metrics.csv")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
    let text = String::from_utf8(metrics.pop().unwrap()).unwrap();
    let seeds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(seeds, ["4", "5"]);
    let summary = fs::read_to_string(d.join("out/metrics_summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("1dae,2,"));
}

#[test]
fn single_candidate_sweep_equals_plain_run() {
    let (dir, _) = setup();
    let d = dir.path();
    let sweep = SMALL.replacen("\"seed\": 4,", "\"seed\": 4, \"sweep\": {\"axis\": \"batch_size\", \"values\": [32]},", 1);
    let cfg = d.join("sweep.json");
    fs::write(&cfg, sweep).unwrap();
    let cfg = cfg.to_str().unwrap();
    prepare(d, cfg, &["--threads", "1"]);
    ok(mlmunmix(d, &["sweep", "--threads", "1", "--config", cfg]));
    ok(mlmunmix(d, &["train", "--threads", "1", "--config", cfg]));
    ok(mlmunmix(d, &["infer", "--threads", "1", "--config", cfg]));
    ok(mlmunmix(d, &["evaluate", "--methods", "1dae", "--threads", "1", "--config", cfg]));
    let sweep = fs::read_to_string(d.join("out/sweep_batch_size.csv")).unwrap();
    let plain = fs::read_to_string(d.join("out/metrics.csv")).unwrap();
    let sweep_row = sweep.lines().nth(1).unwrap();
    assert!(sweep_row.starts_with("batch_size,32,1dae,4,"));
    assert_eq!(sweep_row.strip_prefix("batch_size,32,").unwrap(), plain.lines().nth(1).unwrap());
}

#[test]
fn patch_sweep_maps_one_to_the_1d_network() {
    let (dir, _) = setup();
    let d = dir.path();
    let sweep = SMALL.replacen("\"seed\": 4,", "\"seed\": 4, \"sweep\": {\"axis\": \"patch_size\", \"values\": [1, 3]},", 1);
    let cfg = d.join("sweep.json");
    fs::write(&cfg, sweep).unwrap();
    let cfg = cfg.to_str().unwrap();
    prepare(d, cfg, &[]);
    ok(mlmunmix(d, &["sweep", "--config", cfg]));
    let csv = fs::read_to_string(d.join("out/sweep_patch_size.csv")).unwrap();
    let kinds: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(kinds, ["patch_size,1,1dae", "patch_size,3,3dae"]);
}
