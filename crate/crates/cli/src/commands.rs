use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mlmunmix::classic::{fcls_unmix, mlmp_unmix, unmix_supervised, P_MAX_SUPERVISED};
use mlmunmix::hsi::{AbundanceMap, EndmemberMatrix, HsiCube, ProbabilityMap};
use mlmunmix::io::{
    append_csv, cube_paths, read_abundance, read_cube, read_cube_header, read_endmembers, read_pmap, write_cube_with_meta,
    write_endmembers, write_maps,
};
use mlmunmix::metrics::{evaluate, EvalInputs, EvalReport};
use mlmunmix::model::{
    infer_maps, init_network, load_checkpoint, loss_history_csv, save_checkpoint, train, Mode, Network, NetworkSpec,
};
use mlmunmix::scene::{generate_scene, mlm_from_linear};
use mlmunmix::vca::{vca, VcaConfig};
use serde_json::json;

use crate::config::{RunConfig, SweepAxis};
use crate::failure::Failure;
use crate::manifest::Stage;

pub const METHODS: [&str; 5] = ["fcls", "supervised", "mlmp", "1dae", "3dae"];

const CUBE: &str = "cube";
const ENDMEMBERS: &str = "endmembers.csv";
const MAPS: &str = "maps";
const RECONSTRUCTION: &str = "reconstruction";
const CHECKPOINT: &str = "checkpoint.bin";
const LOSS_HISTORY: &str = "loss_history.csv";

pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
    pub repeats: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ClassicMethod {
    Fcls,
    Supervised,
    Mlmp,
}

impl ClassicMethod {
    fn name(self) -> &'static str {
        match self {
            ClassicMethod::Fcls => "fcls",
            ClassicMethod::Supervised => "supervised",
            ClassicMethod::Mlmp => "mlmp",
        }
    }
}

impl Ctx {
    fn stage<'a>(&'a self, command: &'a str) -> Stage<'a> {
        Stage {
            command,
            cfg: &self.cfg,
            hash: &self.hash,
            started: Instant::now(),
        }
    }

    /// Seeds of the repeated runs: `seed, seed + 1, ...`.
    fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|k| self.cfg.seed + k).collect()
    }

    pub fn scene_dir(&self, arg: Option<PathBuf>) -> PathBuf {
        arg.unwrap_or_else(|| self.cfg.out.join("scene"))
    }

    fn run_dir(&self, method: &str, seed: u64) -> PathBuf {
        self.cfg.out.join("runs").join(method).join(format!("seed_{seed}"))
    }

    fn vca_path(&self) -> PathBuf {
        self.cfg.out.join("vca").join(ENDMEMBERS)
    }

    fn load_vca(&self) -> Result<EndmemberMatrix, Failure> {
        let path = self.vca_path();
        if !path.exists() {
            return Err(Failure::missing_stage(&path, "VCA endmembers", "vca"));
        }
        Ok(read_endmembers(&path)?)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Core(mlmunmix::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_cube(scene: &Path) -> Result<HsiCube, Failure> {
    let base = scene.join(CUBE);
    let (raw, _) = cube_paths(&base);
    if !raw.exists() {
        return Err(Failure::missing_stage(&raw, "scene cube", "generate"));
    }
    Ok(read_cube(&base)?)
}

fn scene_snr(scene: &Path) -> Option<f64> {
    read_cube_header(&scene.join(CUBE)).ok()?.meta?.get("snr_db")?.as_f64()
}

pub fn generate(ctx: &Ctx) -> Result<(), Failure> {
    let stage = ctx.stage("generate");
    let cfg = &ctx.cfg;
    let levels: Vec<Option<f64>> = if cfg.snr_levels.is_empty() {
        vec![cfg.scene.snr_db]
    } else {
        cfg.snr_levels.iter().map(|&s| Some(s)).collect()
    };
    for snr in &levels {
        let mut sc = cfg.scene.clone();
        sc.snr_db = *snr;
        let dir = if cfg.snr_levels.is_empty() {
            cfg.out.join("scene")
        } else {
            cfg.out.join(format!("scene_snr{}", snr.unwrap()))
        };
        let scene = generate_scene(&sc, None)?;
        let mut meta = stage.meta(cfg.seed);
        meta["snr_db"] = json!(snr);
        write_cube_with_meta(&scene.cube, &dir.join(CUBE), Some(meta.clone()))?;
        write_cube_with_meta(&scene.clean, &dir.join("clean"), Some(meta))?;
        write_endmembers(&scene.endmembers, &dir.join(ENDMEMBERS))?;
        write_maps(&scene.abundance, &scene.p, &dir.join("truth"))?;
        stage.write(
            &dir,
            cfg.seed,
            "completed",
            &["cube.raw", "cube.hdr.json", "clean.raw", "clean.hdr.json", ENDMEMBERS, "truth/"],
            json!({ "snr_db": snr }),
        )?;
        println!("generate: wrote {}", dir.display());
    }
    Ok(())
}

pub fn run_vca(ctx: &Ctx, scene: &Path) -> Result<(), Failure> {
    let stage = ctx.stage("vca");
    let cube = load_cube(scene)?;
    let vcfg = VcaConfig {
        endmembers: ctx.cfg.scene.endmembers,
        seed: ctx.cfg.seed,
        snr_db: ctx.cfg.vca.snr_db,
    };
    let out = vca(&cube, &vcfg)?;
    let dir = ctx.cfg.out.join("vca");
    write_endmembers(&out.endmembers, &dir.join(ENDMEMBERS))?;
    stage.write(
        &dir,
        ctx.cfg.seed,
        "completed",
        &[ENDMEMBERS],
        json!({ "indices": out.indices, "snr_db": out.snr_db, "scene": scene }),
    )?;
    println!("vca: {} endmembers, SNR {:.2} dB", out.endmembers.count(), out.snr_db);
    Ok(())
}

fn linear_reconstruction(e: &EndmemberMatrix, a: &AbundanceMap) -> Result<HsiCube, Failure> {
    let data: Vec<f64> = (0..a.pixels()).flat_map(|i| e.mix_linear(a.pixel(i))).collect();
    Ok(HsiCube::new(a.height(), a.width(), e.bands(), data)?)
}

/// MLM closed form per pixel; `P` is capped below 1 so no spectrum vanishes.
fn mlm_reconstruction(e: &EndmemberMatrix, a: &AbundanceMap, p: &ProbabilityMap) -> Result<HsiCube, Failure> {
    let mut data = Vec::with_capacity(a.pixels() * e.bands());
    for i in 0..a.pixels() {
        data.extend(mlm_from_linear(&e.mix_linear(a.pixel(i)), p.get(i).min(P_MAX_SUPERVISED))?);
    }
    Ok(HsiCube::new(a.height(), a.width(), e.bands(), data)?)
}

struct RunOutputs<'a> {
    endmembers: &'a EndmemberMatrix,
    abundance: &'a AbundanceMap,
    p: &'a ProbabilityMap,
    reconstruction: &'a HsiCube,
}

fn write_run(dir: &Path, out: &RunOutputs<'_>, meta: serde_json::Value) -> Result<(), Failure> {
    write_endmembers(out.endmembers, &dir.join(ENDMEMBERS))?;
    write_maps(out.abundance, out.p, &dir.join(MAPS))?;
    write_cube_with_meta(out.reconstruction, &dir.join(RECONSTRUCTION), Some(meta))?;
    Ok(())
}

const RUN_FILES: [&str; 4] = [ENDMEMBERS, "maps/", "reconstruction.raw", "reconstruction.hdr.json"];

pub fn unmix_classic(ctx: &Ctx, scene: &Path, method: ClassicMethod) -> Result<(), Failure> {
    let stage = ctx.stage("unmix-classic");
    let cube = load_cube(scene)?;
    let e = ctx.load_vca()?;
    let (h, w) = (cube.height(), cube.width());
    let mut not_converged = Vec::new();
    for seed in ctx.seeds() {
        let mut solver = ctx.cfg.solver.clone();
        solver.seed = seed;
        let dir = ctx.run_dir(method.name(), seed);
        let (status, details) = match method {
            ClassicMethod::Fcls => {
                let a = fcls_unmix(&cube, &e)?;
                let p = ProbabilityMap::new_unit(h, w, vec![0.0; h * w])?;
                let rec = linear_reconstruction(&e, &a)?;
                write_run(&dir, &RunOutputs { endmembers: &e, abundance: &a, p: &p, reconstruction: &rec }, stage.meta(seed))?;
                ("completed", json!({}))
            }
            ClassicMethod::Supervised => {
                let maps = unmix_supervised(&cube, &e, &solver)?;
                let rec = mlm_reconstruction(&e, &maps.abundance, &maps.p)?;
                write_run(
                    &dir,
                    &RunOutputs { endmembers: &e, abundance: &maps.abundance, p: &maps.p, reconstruction: &rec },
                    stage.meta(seed),
                )?;
                let total: f64 = maps.objective.iter().sum();
                if maps.unconverged > 0 {
                    not_converged.push(format!("supervised seed {seed}: {} pixels", maps.unconverged));
                }
                let status = if maps.unconverged == 0 { "completed" } else { "not_converged" };
                (status, json!({ "unconverged_pixels": maps.unconverged, "objective": total }))
            }
            ClassicMethod::Mlmp => {
                let res = mlmp_unmix(&cube, e.count(), Some(&e), &solver, false)?;
                let rec = mlm_reconstruction(&res.endmembers, &res.abundance, &res.p)?;
                write_run(
                    &dir,
                    &RunOutputs {
                        endmembers: &res.endmembers,
                        abundance: &res.abundance,
                        p: &res.p,
                        reconstruction: &rec,
                    },
                    stage.meta(seed),
                )?;
                let rows: Vec<String> = res.trace.iter().enumerate().map(|(k, f)| format!("{k},{f}")).collect();
                let trace = dir.join("objective_trace.csv");
                let _ = fs::remove_file(&trace);
                append_csv(&trace, "iteration,objective", &rows)?;
                if !res.converged {
                    not_converged.push(format!("mlmp seed {seed}: {} iterations", res.trace.len() - 1));
                }
                let status = if res.converged { "completed" } else { "not_converged" };
                (status, json!({ "iterations": res.trace.len() - 1, "objective": res.trace.last() }))
            }
        };
        stage.write(&dir, seed, status, &RUN_FILES, details)?;
        println!("unmix-classic: {} seed {seed} -> {} ({status})", method.name(), dir.display());
    }
    if not_converged.is_empty() {
        Ok(())
    } else {
        Err(Failure::NotConverged(not_converged.join("; ")))
    }
}

/// Network method name and spec for a patch size (1 selects the 1-D network).
fn network_spec(cube: &HsiCube, r: usize, patch: usize, seed: u64) -> Result<(&'static str, NetworkSpec), Failure> {
    let spec = NetworkSpec::for_patch(cube.bands(), r, patch, seed)?;
    let name = if spec.mode == Mode::OneD { "1dae" } else { "3dae" };
    Ok((name, spec))
}

fn patch_for(ctx: &Ctx, mode: Option<Mode>, patch: Option<usize>) -> usize {
    match mode.unwrap_or(ctx.cfg.network.mode) {
        Mode::OneD => 1,
        Mode::ThreeD => patch.unwrap_or(ctx.cfg.network.patch),
    }
}

/// Train one network into `dir` and run inference on the training cube.
fn train_and_infer(
    ctx: &Ctx,
    stage: &Stage<'_>,
    cube: &HsiCube,
    e: &EndmemberMatrix,
    spec: NetworkSpec,
    batch_size: usize,
    dir: &Path,
) -> Result<Network, Failure> {
    let seed = spec.seed;
    let mut net = init_network(spec, e)?;
    let mut tcfg = ctx.cfg.train.clone();
    tcfg.seed = seed;
    tcfg.batch_size = batch_size;
    let history = train(&mut net, cube, &tcfg)?;
    save_checkpoint(&net, &dir.join(CHECKPOINT))?;
    let csv = dir.join(LOSS_HISTORY);
    fs::write(&csv, loss_history_csv(&history)).map_err(|e| io_err(&csv, e))?;
    stage.write(
        dir,
        seed,
        "completed",
        &[CHECKPOINT, LOSS_HISTORY],
        json!({ "epochs": history.len(), "final_loss": history.last(), "batch_size": batch_size, "patch": net.spec().patch }),
    )?;
    Ok(net)
}

pub fn run_train(ctx: &Ctx, scene: &Path, mode: Option<Mode>, patch: Option<usize>) -> Result<(), Failure> {
    let stage = ctx.stage("train");
    let cube = load_cube(scene)?;
    let e = ctx.load_vca()?;
    let patch = patch_for(ctx, mode, patch);
    for seed in ctx.seeds() {
        let (name, spec) = network_spec(&cube, e.count(), patch, seed)?;
        let dir = ctx.run_dir(name, seed);
        fs::create_dir_all(&dir).map_err(|err| io_err(&dir, err))?;
        train_and_infer(ctx, &stage, &cube, &e, spec, ctx.cfg.train.batch_size, &dir)?;
        println!("train: {name} seed {seed} -> {}", dir.display());
    }
    Ok(())
}

fn infer_into(stage: &Stage<'_>, net: &Network, cube: &HsiCube, dir: &Path) -> Result<f64, Failure> {
    let inf = infer_maps(net, cube)?;
    let e = net.extract_endmembers()?;
    let seed = net.spec().seed;
    write_run(
        dir,
        &RunOutputs { endmembers: &e, abundance: &inf.abundance, p: &inf.p, reconstruction: &inf.reconstruction },
        stage.meta(seed),
    )?;
    Ok(inf.loss)
}

pub fn run_infer(ctx: &Ctx, scene: &Path, mode: Option<Mode>) -> Result<(), Failure> {
    let stage = ctx.stage("infer");
    let cube = load_cube(scene)?;
    let name = match mode.unwrap_or(ctx.cfg.network.mode) {
        Mode::OneD => "1dae",
        Mode::ThreeD => "3dae",
    };
    for seed in ctx.seeds() {
        let dir = ctx.run_dir(name, seed);
        let ckpt = dir.join(CHECKPOINT);
        if !ckpt.exists() {
            return Err(Failure::missing_stage(&ckpt, "network checkpoint", "train"));
        }
        let net = load_checkpoint(&ckpt)?;
        let loss = infer_into(&stage, &net, &cube, &dir)?;
        stage.write(&dir, seed, "completed", &RUN_FILES, json!({ "mean_sad": loss }))?;
        println!("infer: {name} seed {seed} mean SAD {loss:.6}");
    }
    Ok(())
}

struct Truth {
    endmembers: EndmemberMatrix,
    abundance: AbundanceMap,
    p: ProbabilityMap,
    cube: HsiCube,
    snr_db: Option<f64>,
}

fn load_truth(scene: &Path) -> Result<Truth, Failure> {
    let cube = load_cube(scene)?;
    let e_path = scene.join(ENDMEMBERS);
    let truth = scene.join("truth");
    if !e_path.exists() {
        return Err(Failure::missing(&e_path, "ground-truth endmembers"));
    }
    if !truth.join("pmap.csv").exists() {
        return Err(Failure::missing(&truth, "ground-truth maps"));
    }
    Ok(Truth {
        endmembers: read_endmembers(&e_path)?,
        abundance: read_abundance(&truth)?,
        p: read_pmap(&truth)?,
        cube,
        snr_db: scene_snr(scene),
    })
}

fn evaluate_dir(truth: &Truth, dir: &Path, has_p: bool, stage_hint: &str) -> Result<EvalReport, Failure> {
    let e_path = dir.join(ENDMEMBERS);
    if !e_path.exists() {
        return Err(Failure::missing_stage(&e_path, "estimated endmembers", stage_hint));
    }
    let endmembers = read_endmembers(&e_path)?;
    let abundance = read_abundance(&dir.join(MAPS))?;
    let p = if has_p { Some(read_pmap(&dir.join(MAPS))?) } else { None };
    let rec = read_cube(&dir.join(RECONSTRUCTION))?;
    Ok(evaluate(&EvalInputs {
        truth_endmembers: &truth.endmembers,
        truth_abundance: &truth.abundance,
        truth_p: Some(&truth.p),
        endmembers: &endmembers,
        abundance: &abundance,
        p: p.as_ref(),
        observed: Some(&truth.cube),
        reconstructed: Some(&rec),
    })?)
}

fn seed_dirs(method_dir: &Path) -> Vec<(u64, PathBuf)> {
    let mut out: Vec<(u64, PathBuf)> = fs::read_dir(method_dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|entry| {
            let name = entry.file_name().to_string_lossy().to_string();
            let seed = name.strip_prefix("seed_")?.parse().ok()?;
            Some((seed, entry.path()))
        })
        .collect();
    out.sort();
    out
}

fn stage_for(method: &str) -> &'static str {
    match method {
        "1dae" | "3dae" => "infer",
        _ => "unmix-classic",
    }
}

const METRIC_NAMES: [&str; 4] = ["sad_endmembers", "rmse_abundance", "rmse_p", "sad_pixels"];

fn metric_values(r: &EvalReport) -> [Option<f64>; 4] {
    [Some(r.sad_endmembers), Some(r.rmse_abundance), r.rmse_p, r.sad_pixels]
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn run_evaluate(ctx: &Ctx, scene: &Path, methods: &[String]) -> Result<(), Failure> {
    let stage = ctx.stage("evaluate");
    let truth = load_truth(scene)?;
    let runs_root = ctx.cfg.out.join("runs");
    let selected: Vec<String> = if methods.is_empty() {
        METHODS.iter().filter(|m| runs_root.join(m).is_dir()).map(|m| m.to_string()).collect()
    } else {
        methods.to_vec()
    };
    if selected.is_empty() {
        return Err(Failure::missing_stage(&runs_root, "method runs", "unmix-classic or train"));
    }
    let header = format!("{},config_hash", EvalReport::CSV_HEADER);
    let mut rows = Vec::new();
    let mut summary = vec![format!(
        "method,runs,{}",
        METRIC_NAMES.iter().map(|m| format!("{m}_mean,{m}_std")).collect::<Vec<_>>().join(",")
    )];
    for method in &selected {
        if !METHODS.contains(&method.as_str()) {
            return Err(Failure::Config(format!("unknown method {method:?}; expected one of {METHODS:?}")));
        }
        let dirs = seed_dirs(&runs_root.join(method));
        if dirs.is_empty() {
            return Err(Failure::missing_stage(&runs_root.join(method), "method runs", stage_for(method)));
        }
        let mut reports = Vec::new();
        for (seed, dir) in dirs {
            let r = evaluate_dir(&truth, &dir, method != "fcls", stage_for(method))?;
            rows.push(format!("{},{}", r.csv_row(method, seed, truth.snr_db), ctx.hash));
            reports.push(r);
        }
        let mut cells = vec![method.clone(), reports.len().to_string()];
        for k in 0..4 {
            let vals: Vec<f64> = reports.iter().filter_map(|r| metric_values(r)[k]).collect();
            if vals.is_empty() {
                cells.extend([String::new(), String::new()]);
            } else {
                let (m, s) = mean_std(&vals);
                cells.extend([m.to_string(), s.to_string()]);
            }
        }
        println!("evaluate: {method:<10} {}", fmt_summary(&cells[2..]));
        summary.push(cells.join(","));
    }
    let metrics = ctx.cfg.out.join("metrics.csv");
    append_csv(&metrics, &header, &rows)?;
    let summary_path = ctx.cfg.out.join("metrics_summary.csv");
    fs::write(&summary_path, summary.join("\n") + "\n").map_err(|e| io_err(&summary_path, e))?;
    stage.write(
        &ctx.cfg.out,
        ctx.cfg.seed,
        "completed",
        &["metrics.csv", "metrics_summary.csv"],
        json!({ "methods": selected, "rows": rows.len() }),
    )?;
    Ok(())
}

fn fmt_summary(cells: &[String]) -> String {
    METRIC_NAMES
        .iter()
        .zip(cells.chunks(2))
        .map(|(name, ms)| match (ms[0].parse::<f64>(), ms[1].parse::<f64>()) {
            (Ok(m), Ok(s)) => format!("{name} {m:.4} ± {s:.4}"),
            _ => format!("{name} -"),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn run_sweep(ctx: &Ctx, scene: &Path, axis: Option<SweepAxis>) -> Result<(), Failure> {
    let stage = ctx.stage("sweep");
    let axis = axis.unwrap_or(ctx.cfg.sweep.axis);
    let values = if ctx.cfg.sweep.values.is_empty() || axis != ctx.cfg.sweep.axis {
        axis.default_values()
    } else {
        ctx.cfg.sweep.values.clone()
    };
    let truth = load_truth(scene)?;
    let e = ctx.load_vca()?;
    let mut rows = Vec::new();
    for &v in &values {
        for seed in ctx.seeds() {
            let (patch, batch) = match axis {
                SweepAxis::BatchSize => (patch_for(ctx, None, None), v),
                SweepAxis::PatchSize => (v, ctx.cfg.train.batch_size),
            };
            let (name, spec) = network_spec(&truth.cube, e.count(), patch, seed)?;
            let dir = ctx.cfg.out.join("sweep").join(format!("{}_{v}", axis.name())).join(format!("seed_{seed}"));
            fs::create_dir_all(&dir).map_err(|err| io_err(&dir, err))?;
            let net = train_and_infer(ctx, &stage, &truth.cube, &e, spec, batch, &dir)?;
            infer_into(&stage, &net, &truth.cube, &dir)?;
            let r = evaluate_dir(&truth, &dir, true, "sweep")?;
            println!("sweep: {}={v} {name} seed {seed} pixel SAD {:.5}", axis.name(), r.sad_pixels.unwrap_or(f64::NAN));
            rows.push(format!("{},{v},{},{}", axis.name(), r.csv_row(name, seed, truth.snr_db), ctx.hash));
        }
    }
    let path = ctx.cfg.out.join(format!("sweep_{}.csv", axis.name()));
    let _ = fs::remove_file(&path);
    append_csv(&path, &format!("axis,value,{},config_hash", EvalReport::CSV_HEADER), &rows)?;
    stage.write(
        &ctx.cfg.out.join("sweep"),
        ctx.cfg.seed,
        "completed",
        &[path.file_name().unwrap().to_str().unwrap()],
        json!({ "axis": axis.name(), "values": values }),
    )?;
    Ok(())
}
