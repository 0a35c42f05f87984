use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};
use snode_core::analysis::{
    encoded_trajectory, endpoint_dispersion, exact_dmd, full_grid_l1, match_eigenvalues, mode_portrait_levels,
    mode_similarity, eigen_log_ratio, predict_sequence, trajectories_csv, trajectory_ensemble, Horizon,
    TrajectoryConfig,
};
use snode_core::io::{load_dataset, save_dataset, write_f64s};
use snode_core::sim::{gen_grayscott, gen_synthetic, gen_vorticity, GrayScottConfig, SynthConfig, VorticityConfig};
use snode_core::train::{log_csv, Checkpoint, EpochLog, TrainConfig, Trainer};
use snode_core::types::{linspace_closed, linspace_periodic, CoordSet, Dataset};
use snode_core::Error;

use crate::config::{parse_grid, CliError, CliResult, Resolver};
use crate::manifest::RunManifest;
use crate::{BaselineArgs, EvalArgs, SimulateArgs, TrainArgs};

pub const SYSTEMS: [&str; 3] = ["synthetic", "grayscott", "vorticity"];
pub const PORTRAIT_PERCENTILES: [f64; 3] = [30.0, 60.0, 90.0];

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_pretty(path: &Path, v: &Value) -> CliResult<()> {
    write_text(path, &serde_json::to_string_pretty(v).expect("json value"))
}

fn load(dir: &Path) -> CliResult<Dataset> {
    load_dataset(dir).map_err(|e| CliError::runtime(format!("cannot load dataset {}: {e}", dir.display())))
}

fn cz(z: num_complex::Complex64) -> Value {
    json!([z.re, z.im])
}

pub fn simulate(a: SimulateArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let mut r = Resolver::new(a.config.as_deref())?;
    let system: String = r.required("system", a.system)?;
    if !SYSTEMS.contains(&system.as_str()) {
        return Err(CliError::usage(format!("unsupported system `{system}` (expected one of {})", SYSTEMS.join(", "))));
    }
    let out = r.path("out", a.out)?;
    let seed = r.or("seed", a.seed, 0u64)?;
    let t = r.get("T", a.t)?;
    let grid = r.get("grid", a.grid)?;
    let frac = r.or("sensor-frac", a.sensor_frac, 0.1)?;
    let sigma = r.get("noise-sigma", a.noise_sigma)?;
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CliError::usage("--sensor-frac must lie in (0, 1]"));
    }
    if sigma.is_some_and(|s| !(s >= 0.0)) {
        return Err(CliError::usage("--noise-sigma must be >= 0"));
    }
    if t == Some(0) || grid.is_some_and(|g| g < 2) {
        return Err(CliError::usage("--T must be >= 1 and --grid >= 2"));
    }
    let ds = match system.as_str() {
        "synthetic" => {
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                grid: grid.unwrap_or(d.grid),
                snapshots: t.unwrap_or(d.snapshots),
                noise_sigma: sigma.unwrap_or(d.noise_sigma),
                sensor_fraction: frac,
                ..d
            };
            gen_synthetic(&cfg, seed)?
        }
        "grayscott" => {
            let d = GrayScottConfig::default();
            let n = grid.unwrap_or(d.grid);
            // Keep the physical box fixed when the resolution changes.
            let cfg = GrayScottConfig {
                grid: n,
                dx: d.dx * d.grid as f64 / n as f64,
                snapshots: t.unwrap_or(d.snapshots),
                noise_sigma: sigma.unwrap_or(d.noise_sigma),
                sensor_fraction: frac,
                ..d
            };
            gen_grayscott(&cfg, seed)?
        }
        _ => {
            let d = VorticityConfig::default();
            let cfg = VorticityConfig {
                grid: grid.unwrap_or(d.grid),
                snapshots: t.unwrap_or(d.snapshots),
                noise_sigma: sigma.unwrap_or(d.noise_sigma),
                sensor_fraction: frac,
                ..d
            };
            gen_vorticity(&cfg, seed)?
        }
    };
    create_dir(&out)?;
    save_dataset(&ds, &out).map_err(|e| CliError::runtime(e.to_string()))?;
    eprintln!(
        "{system}: {} snapshots, {} sensors of {} points -> {}",
        ds.len(),
        ds.sensor_indices.len(),
        ds.full_grid.len(),
        out.display()
    );
    RunManifest::write(&out, "simulate", r.resolved(), Some(seed), &[], threads, started)
}

fn default_rank(ds: &Dataset) -> usize {
    if ds.meta.system == "synthetic" {
        4
    } else {
        8
    }
}

pub fn train(a: TrainArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let mut r = Resolver::new(a.config.as_deref())?;
    let data = r.path("data", a.data)?;
    let out = r.path("out", a.out)?;
    let from: Option<PathBuf> = r.get("from", a.from)?;
    let rank = r.get("rank", a.rank)?;
    let epochs = r.get("epochs", a.epochs)?;
    let batch = r.get("batch", a.batch)?;
    let lr = r.get("lr", a.lr)?;
    let seed = r.get("seed", a.seed)?;
    let save_every = r.get("save-every", a.save_every)?;
    let bands = r.get("posenc-bands", a.posenc_bands)?;
    let window = r.get("window", a.window)?;
    if epochs == Some(0) {
        return Err(CliError::usage("--epochs must be >= 1"));
    }
    if rank == Some(0) || batch == Some(0) || save_every == Some(0) {
        return Err(CliError::usage("--rank, --batch and --save-every must be >= 1"));
    }
    if lr.is_some_and(|x| !(x > 0.0)) {
        return Err(CliError::usage("--lr must be > 0"));
    }
    let ds = load(&data)?;
    let datasets = std::slice::from_ref(&ds);

    let mut trainer = match &from {
        Some(dir) => {
            if rank.is_some() || batch.is_some() || lr.is_some() || seed.is_some() || bands.is_some() || window.is_some() {
                return Err(CliError::usage("--from resumes the stored configuration; only --epochs may change"));
            }
            let ckpt = Checkpoint::load(dir)
                .map_err(|e| CliError::runtime(format!("cannot load checkpoint {}: {e}", dir.display())))?;
            Trainer::resume(datasets, ckpt, epochs)?
        }
        None => {
            let d = TrainConfig::default();
            let cfg = TrainConfig {
                rank: rank.unwrap_or_else(|| default_rank(&ds)),
                epochs: epochs.unwrap_or(d.epochs),
                batch_size: batch.unwrap_or(d.batch_size),
                lr: lr.unwrap_or(d.lr),
                seed: seed.unwrap_or(d.seed),
                posenc_bands: bands.unwrap_or(d.posenc_bands),
                window: window.unwrap_or(d.window),
                ..d
            };
            Trainer::new(datasets, cfg)?
        }
    };
    create_dir(&out)?;
    let cfg_value = serde_json::to_value(&trainer.cfg).expect("config serializes");
    let mut resolved = r.resolved();
    resolved
        .as_object_mut()
        .expect("object")
        .insert("train".into(), cfg_value);
    eprintln!(
        "training rank {} for {} epochs ({} steps/epoch) on {}",
        trainer.cfg.rank,
        trainer.cfg.epochs,
        trainer.steps_per_epoch(),
        data.display()
    );

    let ckpt_dir = out.join("checkpoint");
    let result = trainer.run_with(|tr, log: &EpochLog| {
        eprintln!(
            "epoch {:>4} eps {:.3} loss {:.5} val {}",
            log.epoch,
            log.eps,
            log.loss_total,
            log.val_nll.map_or("-".into(), |v| format!("{v:.5}"))
        );
        if let Some(n) = save_every {
            if tr.ckpt.epoch % n == 0 {
                tr.ckpt.save(&out.join(format!("epoch_{:04}", tr.ckpt.epoch)))?;
            }
        }
        Ok(())
    });
    write_text(&out.join("train_log.csv"), &log_csv(&trainer.history))?;
    let inputs: Vec<&Path> = std::iter::once(data.as_path()).chain(from.as_deref()).collect();
    if let Err(e) = result {
        // Parameters are never updated by a failed step, so the running
        // state is the last good one.
        let keep = out.join("last_good");
        trainer.ckpt.save(&keep).map_err(|e| CliError::runtime(e.to_string()))?;
        RunManifest::write(&out, "train", resolved, Some(trainer.cfg.seed), &inputs, threads, started)?;
        return Err(CliError::runtime(format!("{e}; last good state saved to {}", keep.display())));
    }
    trainer.ckpt.save(&ckpt_dir).map_err(|e| CliError::runtime(e.to_string()))?;
    trainer
        .best_checkpoint()
        .save(&out.join("best"))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    RunManifest::write(&out, "train", resolved, Some(trainer.cfg.seed), &inputs, threads, started)
}

fn output_grid(ds: &Dataset, w: usize, h: usize) -> CoordSet {
    let axis = |n| {
        if ds.meta.system == "vorticity" {
            linspace_periodic(n)
        } else {
            linspace_closed(n)
        }
    };
    CoordSet::grid(&axis(w), &axis(h)).expect("finite grid")
}

fn skipped(note: impl Into<String>) -> Value {
    json!({ "skipped": note.into() })
}

pub fn eval(a: EvalArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let mut r = Resolver::new(a.config.as_deref())?;
    let ckpt_dir = r.path("ckpt", a.ckpt)?;
    let data = r.path("data", a.data)?;
    let out = r.path("out", a.out)?;
    let horizon_s: String = r.or("horizon", a.horizon, "1".to_string())?;
    let metrics_s: String = r.or("metrics", a.metrics, "l1".to_string())?;
    let grid_out: Option<String> = r.get("grid-out", a.grid_out)?;
    let seed = r.or("seed", a.seed, 0u64)?;
    let horizon = match horizon_s.as_str() {
        "1" => Horizon::One,
        "m" => Horizon::Multi,
        other => return Err(CliError::usage(format!("--horizon must be 1 or m, got `{other}`"))),
    };
    let metrics: Vec<&str> = metrics_s.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    const KNOWN: [&str; 5] = ["l1", "modes", "eigs", "portraits", "traj"];
    if let Some(bad) = metrics.iter().find(|m| !KNOWN.contains(m)) {
        return Err(CliError::usage(format!("unknown metric `{bad}` (known: {})", KNOWN.join(","))));
    }
    let grid_out = grid_out.as_deref().map(parse_grid).transpose()?;

    let ckpt = Checkpoint::load(&ckpt_dir)
        .map_err(|e| CliError::runtime(format!("cannot load checkpoint {}: {e}", ckpt_dir.display())))?;
    let model = &ckpt.model;
    let ds = load(&data)?;
    if model.cfg.dt != ds.dt {
        return Err(CliError::runtime(format!("checkpoint dt {} differs from dataset dt {}", model.cfg.dt, ds.dt)));
    }
    create_dir(&out)?;

    let mut report = Map::new();
    report.insert("horizon".into(), json!(horizon_s));
    for &m in &metrics {
        let v = match m {
            "l1" => match &ds.truth {
                None => skipped("dataset carries no ground truth"),
                Some(_) => json!({ "l1": full_grid_l1(model, &ds, horizon)? }),
            },
            "modes" => match &ds.gt_spectrum {
                None => skipped("mode similarity needs a ground-truth spectrum"),
                Some(gt) if gt.rank() != model.rank() => {
                    skipped(format!("model rank {} differs from reference rank {}", model.rank(), gt.rank()))
                }
                Some(gt) => {
                    let w = model.eval_modes(&ds.full_grid)?;
                    serde_json::to_value(mode_similarity(&w, &gt.modes)?).expect("report")
                }
            },
            "eigs" => {
                let traj = encoded_trajectory(model, &ds)?;
                let est = eigen_log_ratio(&traj, ds.dt)?;
                let params: Vec<Value> = model.eigen().lambdas().into_iter().map(cz).collect();
                match &ds.gt_spectrum {
                    Some(gt) if gt.rank() == model.rank() => {
                        let mut rep = serde_json::to_value(match_eigenvalues(&est, &gt.lambdas)?).expect("report");
                        rep["reference"] = gt.lambdas.iter().copied().map(cz).collect();
                        rep["parameters"] = params.into();
                        rep
                    }
                    _ => json!({
                        "estimated": est.iter().map(|e| e.map(cz)).collect::<Vec<_>>(),
                        "parameters": params,
                        "note": "no matching ground-truth spectrum; errors not computed",
                    }),
                }
            }
            "portraits" => {
                let w = model.eval_modes(&ds.full_grid)?;
                let traj = encoded_trajectory(model, &ds)?;
                let levels = mode_portrait_levels(&w, &traj, &PORTRAIT_PERCENTILES)?;
                json!({ "percentiles": PORTRAIT_PERCENTILES, "modes": levels })
            }
            "traj" => {
                if ds.meta.system != "vorticity" {
                    skipped("particle trajectories need a vorticity dataset")
                } else {
                    let intervals = TrajectoryConfig::default().intervals.min(ds.len().saturating_sub(1)).max(1);
                    let tc = TrajectoryConfig { seed, intervals, ..Default::default() };
                    let trajs = trajectory_ensemble(model, &ds, &tc)?;
                    write_text(&out.join("trajectories.csv"), &trajectories_csv(&trajs))?;
                    json!({
                        "samples": tc.samples,
                        "intervals": tc.intervals,
                        "endpoint_dispersion": endpoint_dispersion(&trajs, 2.0 * std::f64::consts::PI),
                        "file": "trajectories.csv",
                    })
                }
            }
            _ => unreachable!("validated above"),
        };
        report.insert(m.to_string(), v);
    }

    if let Some((w, h)) = grid_out {
        let q = output_grid(&ds, w, h);
        let preds = predict_sequence(model, &ds, horizon, &q)?;
        let mut values = Vec::with_capacity(preds.len() * q.len() * 2);
        for p in &preds {
            values.extend(p.mean.iter().flat_map(|z| [z.re, z.im]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::runtime("reconstruction produced non-finite values"));
        }
        let name = format!("recon_{w}x{h}.bin");
        write_f64s(&out.join(&name), &values).map_err(|e| CliError::runtime(e.to_string()))?;
        report.insert(
            "grid_out".into(),
            json!({
                "file": name,
                "shape": [preds.len(), h, w, 2],
                "layout": "frame-major, x fastest, interleaved (re, im), little-endian f64",
                "times": preds.iter().map(|p| p.time).collect::<Vec<_>>(),
            }),
        );
    }
    write_pretty(&out.join("metrics.json"), &Value::Object(report))?;
    RunManifest::write(&out, "eval", r.resolved(), Some(seed), &[&ckpt_dir, &data], threads, started)
}

pub fn baseline(a: BaselineArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let mut r = Resolver::new(a.config.as_deref())?;
    let data = r.path("data", a.data)?;
    let out = r.path("out", a.out)?;
    let ds = load(&data)?;
    let rank = r.or("rank", a.rank, default_rank(&ds))?;
    if rank == 0 {
        return Err(CliError::usage("--rank must be >= 1"));
    }
    let res = exact_dmd(&ds.observations, rank, ds.dt).map_err(|e| match e {
        Error::Config(m) => CliError::usage(m),
        e => CliError::runtime(e.to_string()),
    })?;
    if res.rank < rank {
        eprintln!("warning: rank {rank} exceeds the data rank; using {}", res.rank);
    }
    let mut rep = json!({
        "requested_rank": rank,
        "rank": res.rank,
        "mus": res.mus.iter().copied().map(cz).collect::<Vec<_>>(),
        "lambdas": res.lambdas.iter().copied().map(cz).collect::<Vec<_>>(),
        "amplitudes": res.amplitudes.iter().copied().map(cz).collect::<Vec<_>>(),
        "residual": res.residual,
        "modes_file": "modes.bin",
        "modes_shape": [res.modes.rows(), res.modes.cols(), 2],
    });
    if let Some(gt) = &ds.gt_spectrum {
        let n = res.mus.len().min(gt.mus.len());
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (res.mus[i] - gt.mus[j]).norm()).collect())
            .collect();
        if n == res.mus.len() && n == gt.mus.len() {
            let perm = snode_core::analysis::hungarian(&cost)?;
            let mu_err: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).collect();
            let lam_err: Vec<f64> = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (res.lambdas[i] - gt.lambdas[j]).norm())
                .collect();
            rep["ground_truth"] = json!({
                "permutation": perm,
                "mu_abs_errors": mu_err,
                "max_mu_abs_error": mu_err.iter().cloned().fold(0.0, f64::max),
                "lambda_abs_errors": lam_err,
            });
        } else {
            rep["ground_truth"] = skipped("rank differs from the reference spectrum");
        }
    }
    create_dir(&out)?;
    let modes: Vec<f64> = res.modes.as_slice().iter().flat_map(|z| [z.re, z.im]).collect();
    write_f64s(&out.join("modes.bin"), &modes).map_err(|e| CliError::runtime(e.to_string()))?;
    write_pretty(&out.join("baseline.json"), &rep)?;
    RunManifest::write(&out, "baseline", r.resolved(), None, &[&data], threads, started)
}
