//! Minibatch training with the teacher-forcing to autoregressive curriculum.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate_with_gradients, ParamStore, Segment};
use crate::error::{Error, Result};
use crate::io::{read_f64s, read_json, write_f64s, write_json};
use crate::losses::{recon_nll, total_loss, LossContext, LossTerms, LossWeights, Sequence};
use crate::model::{Model, ModelConfig, RolloutMode};
use crate::nets::{encode_coords, NetConfig, PosEncConfig};
use crate::rng;
use crate::types::{CoordSet, Dataset, Field};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub rank: usize,
    pub weights: LossWeights,
    /// SDE substeps per observation interval.
    pub substeps: usize,
    /// Sub-sequence length in frames.
    pub window: usize,
    pub grad_clip: f64,
    /// Fraction of trailing timesteps held out for checkpoint selection.
    pub val_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub posenc_bands: usize,
    pub mode_hidden: Vec<usize>,
    pub enc_hidden: Vec<usize>,
    pub drift_hidden: Vec<usize>,
    /// Parameter segments (by name prefix) excluded from updates.
    pub frozen: Vec<String>,
    /// Pins `log tau^2` to this value and freezes it.
    pub fixed_log_tau2: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            rank: 4,
            weights: LossWeights::default(),
            substeps: 5,
            window: 8,
            grad_clip: 10.0,
            val_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            posenc_bands: 6,
            mode_hidden: vec![128; 4],
            enc_hidden: vec![64, 64],
            drift_hidden: vec![64, 64],
            frozen: Vec::new(),
            fixed_log_tau2: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.rank < 1 {
            return bad("rank must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size < 1 || self.substeps < 1 || self.window < 2 {
            return bad("batch size and substeps must be >= 1, window >= 2");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        if !(self.grad_clip > 0.0) {
            return bad("gradient clip must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("invalid optimizer moments");
        }
        self.weights.validate()
    }

    pub fn net_config(&self, time_scale: f64) -> NetConfig {
        NetConfig {
            rank: self.rank,
            posenc: PosEncConfig {
                bands: self.posenc_bands,
                dim: 2,
            },
            mode_hidden: self.mode_hidden.clone(),
            enc_hidden: self.enc_hidden.clone(),
            drift_hidden: self.drift_hidden.clone(),
            time_scale,
        }
    }
}

/// `1 - epoch / (total - 1)`; a single-epoch run stays teacher forced.
pub fn curriculum_epsilon(epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    (1.0 - epoch as f64 / (total - 1) as f64).clamp(0.0, 1.0)
}

/// One Bernoulli(`eps`) draw: teacher forcing with probability `eps`.
pub fn select_mode<R: Rng>(eps: f64, rng: &mut R) -> RolloutMode {
    if rng.random::<f64>() < eps {
        RolloutMode::TeacherForced
    } else {
        RolloutMode::Autoregressive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Bias-corrected update of `x`; entries with `mask == false` are left alone.
    pub fn step(&mut self, x: &mut [f64], g: &[f64], mask: &[bool], cfg: &TrainConfig) {
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            if !mask[i] {
                continue;
            }
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            x[i] -= cfg.lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Scales `g` so its Euclidean norm is at most `max`; returns the original norm.
pub fn clip_grad_norm(g: &mut [f64], max: f64) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
    norm
}

/// Per-epoch record. `wall_ms` is informational and never persisted in
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub eps: f64,
    pub loss_total: f64,
    pub loss_recon: f64,
    pub loss_kl: f64,
    pub loss_cons: f64,
    pub val_nll: Option<f64>,
    #[serde(skip)]
    pub wall_ms: u128,
}

pub const LOG_HEADER: &str = "epoch,eps,loss_total,loss_recon,loss_kl,loss_cons,wall_ms";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.eps, self.loss_total, self.loss_recon, self.loss_kl, self.loss_cons, self.wall_ms
        )
    }
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Trainer state sufficient to continue bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps; indexes every random stream.
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
    pub last: Option<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    train: TrainConfig,
    model: ModelConfig,
    segments: Vec<Segment>,
    epoch: usize,
    step: u64,
    adam_t: u64,
    best_val: Option<f64>,
    best_epoch: Option<usize>,
    last: Option<EpochLog>,
}

const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = CheckpointManifest {
            version: CKPT_VERSION,
            train: self.train.clone(),
            model: self.model.cfg.clone(),
            segments: self.model.params.segments().to_vec(),
            epoch: self.epoch,
            step: self.step,
            adam_t: self.adam.t,
            best_val: self.best_val,
            best_epoch: self.best_epoch,
            last: self.last.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        write_f64s(&dir.join("params.bin"), self.model.params.flat())?;
        write_f64s(&dir.join("adam_m.bin"), &self.adam.m)?;
        write_f64s(&dir.join("adam_v.bin"), &self.adam.v)
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let man: CheckpointManifest = read_json(&dir.join("manifest.json"))?;
        if man.version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", man.version)));
        }
        let params = ParamStore::from_parts(man.segments, read_f64s(&dir.join("params.bin"))?)?;
        let model = Model::from_parts(man.model, params)?;
        let n = model.params.len();
        let m = read_f64s(&dir.join("adam_m.bin"))?;
        let v = read_f64s(&dir.join("adam_v.bin"))?;
        if m.len() != n || v.len() != n {
            return Err(Error::Format("optimizer state does not match the parameters".into()));
        }
        Ok(Checkpoint {
            train: man.train,
            model,
            adam: Adam { m, v, t: man.adam_t },
            epoch: man.epoch,
            step: man.step,
            best_val: man.best_val,
            best_epoch: man.best_epoch,
            last: man.last,
        })
    }
}

/// Training data derived from one or more datasets on a shared sensor set.
#[derive(Debug, Clone)]
pub struct TrainData {
    /// Training frames of every dataset, network units.
    pub sequences: Vec<Sequence>,
    /// Held-out trailing frames, including the last training frame.
    pub validation: Vec<Vec<Field>>,
    pub sensors: CoordSet,
    pub dt: f64,
    pub obs_scale: f64,
    pub real_valued: bool,
    pub duration: f64,
}

impl TrainData {
    pub fn new(datasets: &[Dataset], val_fraction: f64) -> Result<TrainData> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::Config("no training data".into()))?;
        for ds in datasets {
            ds.validate()?;
            if ds.len() < 2 {
                return Err(Error::Config("training needs at least 2 snapshots".into()));
            }
            if ds.sensor_indices != first.sensor_indices || ds.dt != first.dt || ds.len() != first.len() {
                return Err(Error::Config("datasets must share sensors, dt and length".into()));
            }
        }
        let t = first.len();
        let mut n_val = (val_fraction * t as f64).round() as usize;
        if t - n_val < 2 {
            n_val = 0;
        }
        let n_train = t - n_val;
        let (mut sum, mut count) = (0.0, 0usize);
        for ds in datasets {
            for f in &ds.observations[..n_train] {
                sum += f.values.iter().map(|z| z.norm_sqr()).sum::<f64>();
                count += f.len();
            }
        }
        let rms = (sum / count as f64).sqrt();
        let obs_scale = if rms > 0.0 && rms.is_finite() { rms } else { 1.0 };
        let sequences = datasets
            .iter()
            .map(|ds| Sequence::from_fields(&ds.observations[..n_train], obs_scale))
            .collect();
        let validation = if n_val > 0 {
            datasets
                .iter()
                .map(|ds| ds.observations[n_train - 1..].to_vec())
                .collect()
        } else {
            Vec::new()
        };
        Ok(TrainData {
            sequences,
            validation,
            sensors: first.sensor_set.clone(),
            dt: first.dt,
            obs_scale,
            real_valued: datasets.iter().all(Dataset::is_real_valued),
            duration: first.dt * (t - 1) as f64,
        })
    }

    fn frames(&self) -> usize {
        self.sequences[0].values.len()
    }

    /// `(dataset, offset)` of every full-length window.
    fn windows(&self, h: usize) -> Vec<(usize, usize)> {
        let h = h.min(self.frames());
        let per = self.frames() - h + 1;
        (0..self.sequences.len())
            .flat_map(|d| (0..per).map(move |o| (d, o)))
            .collect()
    }
}

/// Teacher-forced mean reconstruction NLL over held-out transitions.
pub fn validation_nll(model: &Model, data: &TrainData) -> Result<Option<f64>> {
    if data.validation.is_empty() {
        return Ok(None);
    }
    let (mut acc, mut n) = (0.0, 0usize);
    for seq in &data.validation {
        let h = seq.len() - 1;
        let r = model.rollout(seq, &data.sensors, h, RolloutMode::TeacherForced, None)?;
        for (k, pred) in r.predictions.iter().enumerate() {
            acc += recon_nll(&seq[k + 1], pred, data.real_valued)?;
            n += 1;
        }
    }
    Ok(Some(acc / n as f64))
}

/// Drives optimization; holds everything a checkpoint records.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub data: TrainData,
    pub ckpt: Checkpoint,
    /// Best checkpoint so far by validation NLL (training loss when no
    /// frames are held out).
    pub best: Option<Checkpoint>,
    pub history: Vec<EpochLog>,
    ctx: LossContext,
    mask: Vec<bool>,
}

fn frozen_mask(segments: &[Segment], cfg: &TrainConfig) -> Vec<bool> {
    let n = segments.iter().map(Segment::len).sum();
    let mut mask = vec![true; n];
    for s in segments {
        let fixed = cfg.frozen.iter().any(|p| s.name.starts_with(p.as_str()))
            || (cfg.fixed_log_tau2.is_some() && s.name == "log_tau2");
        if fixed {
            mask[s.offset..s.offset + s.len()].iter_mut().for_each(|m| *m = false);
        }
    }
    mask
}

impl Trainer {
    pub fn new(datasets: &[Dataset], cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let data = TrainData::new(datasets, cfg.val_fraction)?;
        let model_cfg = ModelConfig {
            net: cfg.net_config(data.duration.max(data.dt)),
            substeps: cfg.substeps,
            dt: data.dt,
            obs_scale: data.obs_scale,
            real_valued: data.real_valued,
        };
        let mut model = Model::init(model_cfg, cfg.seed)?;
        if let Some(v) = cfg.fixed_log_tau2 {
            if let Some(mut p) = model.params.get_mut("log_tau2") {
                p[[0, 0]] = v;
            }
        }
        let n = model.params.len();
        let ckpt = Checkpoint {
            train: cfg.clone(),
            model,
            adam: Adam::new(n),
            epoch: 0,
            step: 0,
            best_val: None,
            best_epoch: None,
            last: None,
        };
        Self::assemble(cfg, data, ckpt, None)
    }

    /// Continues from `ckpt`; `epochs` may extend the run.
    pub fn resume(datasets: &[Dataset], ckpt: Checkpoint, epochs: Option<usize>) -> Result<Trainer> {
        let mut cfg = ckpt.train.clone();
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        let data = TrainData::new(datasets, cfg.val_fraction)?;
        if (data.obs_scale - ckpt.model.cfg.obs_scale).abs() > 1e-12 * data.obs_scale
            || data.dt != ckpt.model.cfg.dt
        {
            return Err(Error::Config("checkpoint was trained on different data".into()));
        }
        Self::assemble(cfg, data, ckpt, None)
    }

    fn assemble(cfg: TrainConfig, data: TrainData, mut ckpt: Checkpoint, best: Option<Checkpoint>) -> Result<Trainer> {
        ckpt.train = cfg.clone();
        let mc = &ckpt.model.cfg;
        let ctx = LossContext {
            coords: encode_coords(&data.sensors, &mc.net.posenc)?,
            substeps: mc.substeps,
            delta_t: mc.delta_t(),
            time_scale: mc.net.time_scale,
            real_valued: mc.real_valued,
            weights: cfg.weights,
        };
        let mask = frozen_mask(ckpt.model.params.segments(), &cfg);
        Ok(Trainer {
            cfg,
            data,
            best,
            history: Vec::new(),
            ctx,
            mask,
            ckpt,
        })
    }

    pub fn model(&self) -> &Model {
        &self.ckpt.model
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.windows(self.cfg.window).len().div_ceil(self.cfg.batch_size)
    }

    fn batch(&self, step: u64) -> Vec<Sequence> {
        let windows = self.data.windows(self.cfg.window);
        let h = self.cfg.window.min(self.data.frames());
        let mut r = rng::stream(self.cfg.seed, step, rng::site::BATCH_OFFSETS);
        (0..self.cfg.batch_size)
            .map(|_| {
                let (d, o) = windows[r.random_range(0..windows.len())];
                let s = &self.data.sequences[d];
                Sequence {
                    values: s.values[o..o + h].to_vec(),
                    times: s.times[o..o + h].to_vec(),
                }
            })
            .collect()
    }

    /// One optimizer step. Parameters stay untouched when the loss or its
    /// gradient is not finite.
    pub fn step(&mut self, eps: f64) -> Result<LossTerms> {
        let step = self.ckpt.step;
        let mode = select_mode(eps, &mut rng::stream(self.cfg.seed, step, rng::site::BATCH_MODE));
        let batch = self.batch(step);
        let ctx = &self.ctx;
        let mut terms = LossTerms::default();
        let cell = std::cell::Cell::new(terms);
        let res = evaluate_with_gradients(
            |t, p, b: &Vec<Sequence>| {
                let l = total_loss(t, p, b, mode, ctx)?;
                cell.set(l.terms(t));
                Ok(l.total)
            },
            &self.ckpt.model.params,
            &batch,
        );
        let mut res = res.map_err(|e| Error::Training {
            epoch: self.ckpt.epoch,
            reason: format!("step {step}: {e}"),
        })?;
        if !res.loss.is_finite() {
            return Err(Error::Training {
                epoch: self.ckpt.epoch,
                reason: format!("step {step}: non-finite loss"),
            });
        }
        terms = cell.get();
        for (g, &m) in res.grads.iter_mut().zip(&self.mask) {
            if !m {
                *g = 0.0;
            }
        }
        clip_grad_norm(&mut res.grads, self.cfg.grad_clip);
        let mut flat = self.ckpt.model.params.flat().to_vec();
        self.ckpt.adam.step(&mut flat, &res.grads, &self.mask, &self.cfg);
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training {
                epoch: self.ckpt.epoch,
                reason: format!("step {step}: non-finite parameters"),
            });
        }
        self.ckpt.model.params.flat_mut().copy_from_slice(&flat);
        self.ckpt.step += 1;
        Ok(terms)
    }

    /// Runs the next epoch and updates the best checkpoint.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.ckpt.epoch;
        let eps = curriculum_epsilon(epoch, self.cfg.epochs);
        let steps = self.steps_per_epoch();
        let w = self.cfg.weights;
        let mut acc = LossTerms::default();
        let mut total = 0.0;
        for _ in 0..steps {
            let t = self.step(eps)?;
            acc.recon += t.recon / steps as f64;
            acc.kl += t.kl / steps as f64;
            acc.cons += t.cons / steps as f64;
            total += t.total(&w) / steps as f64;
        }
        let val = validation_nll(&self.ckpt.model, &self.data).map_err(|e| Error::Training {
            epoch,
            reason: format!("validation: {e}"),
        })?;
        let log = EpochLog {
            epoch,
            eps,
            loss_total: total,
            loss_recon: acc.recon,
            loss_kl: acc.kl,
            loss_cons: acc.cons,
            val_nll: val,
            wall_ms: start.elapsed().as_millis(),
        };
        self.ckpt.epoch += 1;
        self.ckpt.last = Some(EpochLog { wall_ms: 0, ..log.clone() });
        let score = val.unwrap_or(total);
        if score.is_finite() && self.ckpt.best_val.is_none_or(|b| score < b) {
            self.ckpt.best_val = Some(score);
            self.ckpt.best_epoch = Some(epoch);
            self.best = Some(self.ckpt.clone());
        }
        self.history.push(log.clone());
        Ok(log)
    }

    /// Runs the remaining epochs; `on_epoch` sees each finished epoch.
    pub fn run_with(&mut self, mut on_epoch: impl FnMut(&Trainer, &EpochLog) -> Result<()>) -> Result<()> {
        while self.ckpt.epoch < self.cfg.epochs {
            let log = self.run_epoch()?;
            on_epoch(self, &log)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_, _| Ok(()))
    }

    /// Best checkpoint, falling back to the current state.
    pub fn best_checkpoint(&self) -> &Checkpoint {
        self.best.as_ref().unwrap_or(&self.ckpt)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Trains a fresh model on `ds`.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_multi(std::slice::from_ref(ds), cfg)
}

/// Trains one model on several realizations sharing sensors and timing.
pub fn train_multi(datasets: &[Dataset], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut tr = Trainer::new(datasets, cfg.clone())?;
    tr.run()?;
    Ok(TrainOutcome {
        best: tr.best_checkpoint().clone(),
        last: tr.ckpt,
        log: tr.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_synthetic, SynthConfig};

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            window: 4,
            rank: 2,
            posenc_bands: 2,
            mode_hidden: vec![16, 16],
            enc_hidden: vec![16],
            drift_hidden: vec![8],
            substeps: 2,
            seed: 5,
            ..Default::default()
        }
    }

    fn data() -> Dataset {
        gen_synthetic(&SynthConfig { grid: 8, snapshots: 12, sensor_fraction: 0.5, ..Default::default() }, 1).unwrap()
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(curriculum_epsilon(0, 10), 1.0);
        assert_eq!(curriculum_epsilon(9, 10), 0.0);
        assert_eq!(curriculum_epsilon(50, 101), 0.5);
        assert_eq!(curriculum_epsilon(0, 1), 1.0);
    }

    #[test]
    fn mode_selection_frequencies() {
        let mut r = rng::stream(1, 0, rng::site::BATCH_MODE);
        for _ in 0..100 {
            assert_eq!(select_mode(1.0, &mut r), RolloutMode::TeacherForced);
            assert_eq!(select_mode(0.0, &mut r), RolloutMode::Autoregressive);
        }
        let tf = (0..10_000)
            .filter(|_| select_mode(0.5, &mut r) == RolloutMode::TeacherForced)
            .count();
        assert!((tf as f64 / 1e4 - 0.5).abs() < 0.02, "{tf}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut a = Adam::new(3);
        let mut x = vec![1.0, 1.0, 1.0];
        a.step(&mut x, &[2.0, -0.5, 7.0], &[true, true, false], &cfg);
        assert!((x[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((x[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(x[2], 1.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut g = vec![1.0, 1.0];
        clip_grad_norm(&mut g, 10.0);
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn config_errors() {
        let d = data();
        for cfg in [
            TrainConfig { epochs: 0, ..tiny() },
            TrainConfig { rank: 0, ..tiny() },
            TrainConfig { lr: 0.0, ..tiny() },
        ] {
            assert!(matches!(train(&d, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn deterministic_and_resumable() {
        let d = data();
        let a = train(&d, &tiny()).unwrap();
        let b = train(&d, &tiny()).unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.last.epoch, 3);
        assert!(a.log.iter().all(|l| l.loss_total.is_finite()));

        let mut tr = Trainer::new(std::slice::from_ref(&d), tiny()).unwrap();
        tr.run_epoch().unwrap();
        let dir = tempfile::tempdir().unwrap();
        tr.ckpt.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded, tr.ckpt);
        let mut resumed = Trainer::resume(std::slice::from_ref(&d), loaded, None).unwrap();
        resumed.run().unwrap();
        assert_eq!(resumed.ckpt, a.last);
    }

    #[test]
    fn frozen_segments_do_not_move() {
        let d = data();
        let cfg = TrainConfig {
            frozen: vec!["drift.".into()],
            fixed_log_tau2: Some(-30.0),
            epochs: 2,
            ..tiny()
        };
        let out = train(&d, &cfg).unwrap();
        let init = Trainer::new(std::slice::from_ref(&d), cfg).unwrap();
        for s in init.model().params.segments() {
            let a = init.model().params.get(&s.name).unwrap();
            let b = out.last.model.params.get(&s.name).unwrap();
            if s.name.starts_with("drift.") || s.name == "log_tau2" {
                assert_eq!(a, b, "{}", s.name);
            }
        }
        assert_eq!(out.last.model.params.get("log_tau2").unwrap()[[0, 0]], -30.0);
    }

    #[test]
    fn csv_log_layout() {
        let d = data();
        let out = train(&d, &TrainConfig { epochs: 1, ..tiny() }).unwrap();
        let csv = log_csv(&out.log);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), LOG_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
    }
}
