//! Exact-DMD baseline, evaluation metrics, mode portraits and particle
//! trajectories.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_eig, complex_svd};
use crate::model::{FieldPrediction, Model, RolloutMode};
use crate::rng;
use crate::sde::{sample_trajectory, LatentGaussian};
use crate::sim::SpectralGrid;
use crate::types::{ComplexMat, ComplexVec, CoordSet, Dataset, Field};

/// Relative singular-value floor below which DMD drops directions.
pub const SVD_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DmdResult {
    /// Reduced operator `U^H Y' V S^-1`.
    pub a_tilde: ComplexMat,
    /// Exact-DMD modes with unit 2-norm columns.
    pub modes: ComplexMat,
    pub mus: ComplexVec,
    /// `Log(mu) / dt`, principal branch.
    pub lambdas: ComplexVec,
    /// Least-squares coefficients of the first snapshot in the modes.
    pub amplitudes: ComplexVec,
    /// `||Y' - A Y||_F / ||Y'||_F` with `A = U A_tilde U^H`.
    pub residual: f64,
    /// Rank actually used.
    pub rank: usize,
}

fn snapshot_matrix(fields: &[Field]) -> Result<ComplexMat> {
    let m = fields[0].len();
    if fields.iter().any(|f| f.len() != m) {
        return Err(Error::Shape("snapshots differ in size".into()));
    }
    Ok(ComplexMat::from_fn(m, fields.len(), |i, k| fields[k].values[i]))
}

/// SVD-truncated exact DMD of consecutive snapshot pairs spaced `dt`.
pub fn exact_dmd(snapshots: &[Field], rank: usize, dt: f64) -> Result<DmdResult> {
    if snapshots.len() < 2 {
        return Err(Error::Config("DMD needs at least 2 snapshots".into()));
    }
    if rank == 0 {
        return Err(Error::Config("DMD rank must be >= 1".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config("DMD time step must be positive".into()));
    }
    let y = snapshot_matrix(&snapshots[..snapshots.len() - 1])?;
    let yp = snapshot_matrix(&snapshots[1..])?;
    let svd = complex_svd(&y)?;
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let usable = svd.sigma.iter().filter(|&&s| s > SVD_RANK_TOL * smax).count();
    if usable == 0 {
        return Err(Error::Numerical("snapshot matrix is zero".into()));
    }
    let r = if rank > usable {
        eprintln!("warning: DMD rank {rank} reduced to {usable} (numerical rank of the data)");
        usable
    } else {
        rank
    };
    let idx: Vec<usize> = (0..r).collect();
    let u = svd.u.select_cols(&idx);
    let v = svd.v.select_cols(&idx);
    let inv_s = ComplexMat::from_fn(r, r, |i, j| {
        Complex64::new(if i == j { 1.0 / svd.sigma[i] } else { 0.0 }, 0.0)
    });
    let yv_s = yp.matmul(&v)?.matmul(&inv_s)?;
    let a_tilde = u.conj_transpose().matmul(&yv_s)?;
    let (mus, w) = complex_eig(&a_tilde)?;
    let mut modes = yv_s.matmul(&w)?;
    for k in 0..r {
        let norm = modes.col(k).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..modes.rows() {
                modes[(i, k)] /= norm;
            }
        }
    }
    let lambdas = mus.iter().map(|mu| mu.ln() / dt).collect();
    let amplitudes = least_squares(&modes, &snapshots[0].values)?;
    let proj = u.matmul(&a_tilde)?.matmul(&u.conj_transpose().matmul(&y)?)?;
    let diff = ComplexMat::from_fn(yp.rows(), yp.cols(), |i, j| yp[(i, j)] - proj[(i, j)]);
    let denom = yp.frobenius_norm();
    let residual = if denom > 0.0 { diff.frobenius_norm() / denom } else { 0.0 };
    Ok(DmdResult {
        a_tilde,
        modes,
        mus,
        lambdas,
        amplitudes,
        residual,
        rank: r,
    })
}

fn least_squares(a: &ComplexMat, b: &[Complex64]) -> Result<ComplexVec> {
    let svd = complex_svd(a)?;
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let utb = svd.u.conj_transpose().mul_vec(b)?;
    let scaled: ComplexVec = utb
        .iter()
        .zip(&svd.sigma)
        .map(|(z, &s)| if s > SVD_RANK_TOL * smax { z / s } else { Complex64::new(0.0, 0.0) })
        .collect();
    svd.v.mul_vec(&scaled)
}

/// Mean absolute error over time and points; real parts only when
/// `real_valued`.
pub fn l1_error(pred: &[Field], truth: &[Field], real_valued: bool) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} truth frames", pred.len(), truth.len())));
    }
    let (mut acc, mut n) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::Shape("prediction and truth differ in size".into()));
        }
        for (a, b) in p.values.iter().zip(&t.values) {
            acc += if real_valued { (a.re - b.re).abs() } else { (a - b).norm() };
        }
        n += p.len();
    }
    Ok(acc / n as f64)
}

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn–Munkres
/// with potentials). Returns `assign[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("assignment needs a square cost matrix".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite assignment cost".into()));
    }
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMatchReport {
    /// `permutation[k]` is the reference mode matched to estimated mode `k`.
    pub permutation: Vec<usize>,
    /// Phase `theta_k` aligning estimated mode `k` to its match.
    pub phases: Vec<f64>,
    pub cosines: Vec<f64>,
    pub mean_cosine: f64,
}

/// Phase-aligned cosine similarity under the best one-to-one matching.
pub fn mode_similarity(w_hat: &ComplexMat, w_gt: &ComplexMat) -> Result<ModeMatchReport> {
    if w_hat.shape() != w_gt.shape() {
        return Err(Error::Shape(format!("mode matrices {:?} and {:?}", w_hat.shape(), w_gt.shape())));
    }
    let r = w_hat.cols();
    let inner = |a: &ComplexVec, b: &ComplexVec| -> Complex64 { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
    let norm = |a: &ComplexVec| a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let hat: Vec<ComplexVec> = (0..r).map(|k| w_hat.col(k)).collect();
    let gt: Vec<ComplexVec> = (0..r).map(|k| w_gt.col(k)).collect();
    let mut sim = vec![vec![0.0; r]; r];
    let mut ip = vec![vec![Complex64::new(0.0, 0.0); r]; r];
    for k in 0..r {
        for j in 0..r {
            let d = norm(&hat[k]) * norm(&gt[j]);
            ip[k][j] = inner(&hat[k], &gt[j]);
            sim[k][j] = if d > 0.0 { (ip[k][j].norm() / d).min(1.0) } else { 0.0 };
        }
    }
    if (0..r).any(|k| norm(&hat[k]) == 0.0 || norm(&gt[k]) == 0.0) {
        eprintln!("warning: zero-norm mode column scored 0");
    }
    let cost: Vec<Vec<f64>> = sim.iter().map(|row| row.iter().map(|s| -s).collect()).collect();
    let permutation = hungarian(&cost)?;
    let cosines: Vec<f64> = (0..r).map(|k| sim[k][permutation[k]]).collect();
    // <e^{i theta} w_hat, w> is real positive for theta = arg <w_hat, w>.
    let phases = (0..r).map(|k| ip[k][permutation[k]].arg()).collect();
    let mean_cosine = if r > 0 { cosines.iter().sum::<f64>() / r as f64 } else { 0.0 };
    Ok(ModeMatchReport {
        permutation,
        phases,
        cosines,
        mean_cosine,
    })
}

/// Magnitude below which a coefficient is treated as unusable.
pub const EIG_MAG_FLOOR: f64 = 1e-12;

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-mode continuous eigenvalue from consecutive coefficient ratios:
/// componentwise median over time of `Log(phi(t+dt)/phi(t)) / dt`, with each
/// phase increment unwrapped to within `pi` of the previous one. `None`
/// marks modes without any usable pair.
pub fn eigen_log_ratio(traj: &[ComplexVec], dt: f64) -> Result<Vec<Option<Complex64>>> {
    if traj.len() < 2 {
        return Err(Error::Config("eigenvalue estimation needs at least 2 points".into()));
    }
    let r = traj[0].len();
    if traj.iter().any(|p| p.len() != r) {
        return Err(Error::Shape("trajectory points differ in rank".into()));
    }
    let mut out = Vec::with_capacity(r);
    for k in 0..r {
        let (mut re, mut im) = (Vec::new(), Vec::new());
        let mut prev: Option<f64> = None;
        for w in traj.windows(2) {
            let (a, b) = (w[0][k], w[1][k]);
            if a.norm() <= EIG_MAG_FLOOR || b.norm() <= EIG_MAG_FLOOR {
                continue;
            }
            let ratio = b / a;
            let mut d = ratio.arg();
            if let Some(p) = prev {
                d += 2.0 * PI * ((p - d) / (2.0 * PI)).round();
            }
            prev = Some(d);
            re.push(ratio.norm().ln() / dt);
            im.push(d / dt);
        }
        out.push(if re.is_empty() {
            None
        } else {
            Some(Complex64::new(median(&mut re), median(&mut im)))
        });
    }
    Ok(out)
}

/// Linear-interpolation percentile of sorted data (`p` in `[0, 100]`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortraitLevels {
    pub levels: Vec<f64>,
    /// `|W_k|` is (nearly) flat in space, so its isocontours carry no shape.
    pub degenerate: bool,
}

/// Relative spatial range of `|W_k|` under which a mode counts as flat.
pub const FLAT_MODE_TOL: f64 = 1e-2;

/// Percentile levels of `|W_k(x) phi_k(t)|` pooled over all points and times.
pub fn mode_portrait_levels(w: &ComplexMat, traj: &[ComplexVec], percentiles: &[f64]) -> Result<Vec<PortraitLevels>> {
    let r = w.cols();
    if traj.iter().any(|p| p.len() != r) {
        return Err(Error::Shape("trajectory rank differs from the mode count".into()));
    }
    let mut out = Vec::with_capacity(r);
    for k in 0..r {
        let mags: Vec<f64> = w.col(k).iter().map(|z| z.norm()).collect();
        let mut pooled: Vec<f64> = traj
            .iter()
            .flat_map(|p| mags.iter().map(move |m| m * p[k].norm()))
            .collect();
        pooled.sort_by(f64::total_cmp);
        let levels = percentiles.iter().map(|&p| percentile_sorted(&pooled, p)).collect();
        let max = mags.iter().cloned().fold(0.0, f64::max);
        let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        let phi_max = traj.iter().map(|p| p[k].norm()).fold(0.0, f64::max);
        let degenerate = max == 0.0 || phi_max == 0.0 || (max - min) <= FLAT_MODE_TOL * max;
        out.push(PortraitLevels { levels, degenerate });
    }
    Ok(out)
}

/// Velocity `(u, v) = (d psi/dy, -d psi/dx)` of a periodic `n x n` vorticity
/// field on `[0, 2 pi)^2`, with `lap psi = -omega` solved spectrally after
/// removing the mean.
pub fn velocity_from_vorticity(omega: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if omega.len() != n * n {
        return Err(Error::Shape(format!("{} values for a {n}x{n} grid", omega.len())));
    }
    let grid = SpectralGrid::new(n)?;
    let mean = omega.iter().sum::<f64>() / omega.len() as f64;
    let centered: Vec<f64> = omega.iter().map(|w| w - mean).collect();
    let (u, v) = grid.velocity_hat(&grid.forward(&centered));
    Ok((grid.inverse(&u), grid.inverse(&v)))
}

/// Spectral curl `dv/dx - du/dy`.
pub fn curl(u: &[f64], v: &[f64], n: usize) -> Result<Vec<f64>> {
    if u.len() != n * n || v.len() != n * n {
        return Err(Error::Shape("velocity components must be n x n".into()));
    }
    let grid = SpectralGrid::new(n)?;
    let vx = grid.ddx(&grid.forward(v));
    let uy = grid.ddy(&grid.forward(u));
    let d: Vec<Complex64> = vx.iter().zip(&uy).map(|(a, b)| a - b).collect();
    Ok(grid.inverse(&d))
}

/// Spectral divergence `du/dx + dv/dy`.
pub fn divergence(u: &[f64], v: &[f64], n: usize) -> Result<Vec<f64>> {
    if u.len() != n * n || v.len() != n * n {
        return Err(Error::Shape("velocity components must be n x n".into()));
    }
    let grid = SpectralGrid::new(n)?;
    let ux = grid.ddx(&grid.forward(u));
    let vy = grid.ddy(&grid.forward(v));
    let d: Vec<Complex64> = ux.iter().zip(&vy).map(|(a, b)| a + b).collect();
    Ok(grid.inverse(&d))
}

/// Velocity samples on a periodic `n x n` grid of side `length`, node
/// `(i, j)` at `(i h, j h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub n: usize,
    pub length: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl VelocityField {
    pub fn new(n: usize, length: f64, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != n * n || v.len() != n * n || n == 0 || !(length > 0.0) {
            return Err(Error::Shape("velocity field must be n x n with positive side".into()));
        }
        Ok(VelocityField { n, length, u, v })
    }

    /// Bilinear interpolation with periodic wrapping.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let n = self.n;
        let h = self.length / n as f64;
        let fx = (x / h).rem_euclid(n as f64);
        let fy = (y / h).rem_euclid(n as f64);
        let (i0, j0) = (fx.floor() as usize % n, fy.floor() as usize % n);
        let (ax, ay) = (fx - fx.floor(), fy - fy.floor());
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        let lerp = |f: &[f64]| {
            let a = f[j0 * n + i0] * (1.0 - ax) + f[j0 * n + i1] * ax;
            let b = f[j1 * n + i0] * (1.0 - ax) + f[j1 * n + i1] * ax;
            a * (1.0 - ay) + b * ay
        };
        (lerp(&self.u), lerp(&self.v))
    }
}

fn velocity_at(fields: &[VelocityField], frame_dt: f64, t: f64, x: f64, y: f64) -> (f64, f64) {
    let s = (t / frame_dt).clamp(0.0, (fields.len() - 1) as f64);
    let k = (s.floor() as usize).min(fields.len() - 1);
    let a = s - k as f64;
    let (u0, v0) = fields[k].sample(x, y);
    if a == 0.0 || k + 1 >= fields.len() {
        return (u0, v0);
    }
    let (u1, v1) = fields[k + 1].sample(x, y);
    (u0 + a * (u1 - u0), v0 + a * (v1 - v0))
}

/// RK4 particle path through time-indexed velocity fields spaced
/// `frame_dt` (linear in time between frames, held after the last one).
/// Positions are wrapped into `[0, length)`; the start is included.
pub fn advect_particle(
    start: [f64; 2],
    fields: &[VelocityField],
    frame_dt: f64,
    dt: f64,
    steps: usize,
) -> Result<Vec<[f64; 2]>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Config("no velocity fields".into()))?;
    if !(frame_dt > 0.0 && dt > 0.0) {
        return Err(Error::Config("time steps must be positive".into()));
    }
    let l = first.length;
    let mut p = [start[0].rem_euclid(l), start[1].rem_euclid(l)];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p);
    for s in 0..steps {
        let t = s as f64 * dt;
        let f = |t: f64, x: f64, y: f64| velocity_at(fields, frame_dt, t, x, y);
        let k1 = f(t, p[0], p[1]);
        let k2 = f(t + 0.5 * dt, p[0] + 0.5 * dt * k1.0, p[1] + 0.5 * dt * k1.1);
        let k3 = f(t + 0.5 * dt, p[0] + 0.5 * dt * k2.0, p[1] + 0.5 * dt * k2.1);
        let k4 = f(t + dt, p[0] + dt * k3.0, p[1] + dt * k3.1);
        p[0] = (p[0] + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0)).rem_euclid(l);
        p[1] = (p[1] + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1)).rem_euclid(l);
        out.push(p);
    }
    Ok(out)
}

/// Distance on the periodic square of side `length`.
pub fn periodic_distance(a: [f64; 2], b: [f64; 2], length: f64) -> f64 {
    let d = |x: f64| {
        let m = (x).rem_euclid(length);
        m.min(length - m)
    };
    d(a[0] - b[0]).hypot(d(a[1] - b[1]))
}

/// Mean distance over all pairs of trajectory endpoints.
pub fn endpoint_dispersion(trajs: &[Vec<[f64; 2]>], length: f64) -> f64 {
    let ends: Vec<[f64; 2]> = trajs.iter().filter_map(|t| t.last().copied()).collect();
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..ends.len() {
        for j in i + 1..ends.len() {
            acc += periodic_distance(ends[i], ends[j], length);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Settings for posterior particle ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub samples: usize,
    /// Start in physical coordinates on `[0, 2 pi)^2`.
    pub start: [f64; 2],
    /// Observation intervals to roll out.
    pub intervals: usize,
    /// RK4 steps per observation interval.
    pub substeps: usize,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            samples: 10,
            start: [PI, PI],
            intervals: 20,
            substeps: 10,
            seed: 0,
        }
    }
}

/// Particle paths through posterior vorticity samples of a model trained on
/// a periodic `n x n` vorticity grid: each sample draws a latent path from
/// the encoding of the first observation, decodes it on the full grid and
/// advects a particle through the induced velocity.
pub fn trajectory_ensemble(model: &Model, ds: &Dataset, cfg: &TrajectoryConfig) -> Result<Vec<Vec<[f64; 2]>>> {
    let (nx, ny) = ds.grid_shape;
    if nx != ny {
        return Err(Error::Shape("trajectories need a square periodic grid".into()));
    }
    if cfg.samples == 0 || cfg.intervals == 0 || cfg.substeps == 0 {
        return Err(Error::Config("samples, intervals and substeps must be >= 1".into()));
    }
    let n = nx;
    let w = model.eval_modes(&ds.full_grid)?;
    let g0 = model.encode(&ds.observations[0], &ds.sensor_set)?;
    let t0 = ds.observations[0].time;
    let mut seeds = rng::stream(cfg.seed, 0, rng::site::LATENT_SAMPLE);
    let mut out = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let path = sample_trajectory(
            &g0,
            &model.params,
            &model.cfg.net,
            t0,
            &model.sde_config(),
            cfg.intervals,
            seeds.next_u64(),
        )?;
        let mut fields = Vec::with_capacity(path.len());
        for phi in &path {
            let omega: Vec<f64> = w.mul_vec(phi)?.iter().map(|z| z.re).collect();
            let (u, v) = velocity_from_vorticity(&omega, n)?;
            fields.push(VelocityField::new(n, 2.0 * PI, u, v)?);
        }
        let dt = ds.dt / cfg.substeps as f64;
        out.push(advect_particle(cfg.start, &fields, ds.dt, dt, cfg.intervals * cfg.substeps)?);
    }
    Ok(out)
}

/// Trajectory ensemble rows `sample_id,step,x,y`.
pub fn trajectories_csv(trajs: &[Vec<[f64; 2]>]) -> String {
    let mut s = String::from("sample_id,step,x,y\n");
    for (i, t) in trajs.iter().enumerate() {
        for (k, p) in t.iter().enumerate() {
            s.push_str(&format!("{i},{k},{},{}\n", p[0], p[1]));
        }
    }
    s
}

/// Prediction horizon for full-field evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Teacher forced: each frame predicted from the observed previous one.
    One,
    /// Autoregressive from the first observation over the whole sequence.
    Multi,
}

/// Predictions of frames `1..T` decoded at `query`.
pub fn predict_sequence(model: &Model, ds: &Dataset, horizon: Horizon, query: &CoordSet) -> Result<Vec<FieldPrediction>> {
    let steps = ds.len().saturating_sub(1);
    let mode = match horizon {
        Horizon::One => RolloutMode::TeacherForced,
        Horizon::Multi => RolloutMode::Autoregressive,
    };
    Ok(model
        .rollout(&ds.observations, &ds.sensor_set, steps, mode, Some(query))?
        .predictions)
}

/// Full-grid L1 of [`predict_sequence`] against the noise-free truth.
pub fn full_grid_l1(model: &Model, ds: &Dataset, horizon: Horizon) -> Result<f64> {
    let truth = ds
        .truth
        .as_ref()
        .ok_or_else(|| Error::Config("dataset carries no ground truth".into()))?;
    let preds = predict_sequence(model, ds, horizon, &ds.full_grid)?;
    let fields: Vec<Field> = preds.iter().map(FieldPrediction::as_field).collect();
    l1_error(&fields, &truth[1..], ds.is_real_valued())
}

/// Teacher-forced encoded latent means over the whole dataset.
pub fn encoded_trajectory(model: &Model, ds: &Dataset) -> Result<Vec<ComplexVec>> {
    ds.observations
        .iter()
        .map(|y| model.encode(y, &ds.sensor_set).map(|g: LatentGaussian| g.complex_mean()))
        .collect()
}

/// Propagated latent means, one interval ahead of each observation.
pub fn propagated_trajectory(model: &Model, ds: &Dataset) -> Result<Vec<ComplexVec>> {
    ds.observations
        .iter()
        .map(|y| {
            let g = model.encode(y, &ds.sensor_set)?;
            Ok(model.propagate(&g, y.time)?.complex_mean())
        })
        .collect()
}

/// Eigenvalue errors after optimal matching to a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    /// Estimated eigenvalues as `(re, im)`; `None` when undetermined.
    pub estimated: Vec<Option<[f64; 2]>>,
    /// `permutation[k]` is the reference eigenvalue matched to estimate `k`.
    pub permutation: Vec<usize>,
    pub abs_errors: Vec<f64>,
    pub mean_abs_error: f64,
}

/// Hungarian matching of estimates to `reference` by `|lambda_hat - lambda|`.
/// Undetermined estimates cost a large constant and score as infinite error.
pub fn match_eigenvalues(est: &[Option<Complex64>], reference: &[Complex64]) -> Result<EigenReport> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!("{} estimates for {} reference eigenvalues", est.len(), reference.len())));
    }
    let big = 1e12;
    let cost: Vec<Vec<f64>> = est
        .iter()
        .map(|e| reference.iter().map(|r| e.map_or(big, |e| (e - r).norm())).collect())
        .collect();
    let permutation = hungarian(&cost)?;
    let abs_errors: Vec<f64> = est
        .iter()
        .zip(&permutation)
        .map(|(e, &j)| e.map_or(f64::INFINITY, |e| (e - reference[j]).norm()))
        .collect();
    let mean_abs_error = abs_errors.iter().sum::<f64>() / abs_errors.len().max(1) as f64;
    Ok(EigenReport {
        estimated: est.iter().map(|e| e.map(|z| [z.re, z.im])).collect(),
        permutation,
        abs_errors,
        mean_abs_error,
    })
}
