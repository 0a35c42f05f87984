use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{assemble, NoiseKind, Sensing};
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{linspace_periodic, CoordSet, Dataset, Field};

/// FFT helpers on an `n x n` periodic box of side `2 pi` (x fastest).
#[derive(Clone)]
pub struct SpectralGrid {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Integer wavenumber of each FFT index along one axis.
    pub k: Vec<f64>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("n", &self.n).finish()
    }
}

impl SpectralGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("spectral grid size {n} must be a power of two >= 4")));
        }
        let mut planner = FftPlanner::new();
        let k = (0..n)
            .map(|i| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 })
            .collect();
        Ok(SpectralGrid {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k,
        })
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        for row in data.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                col[j] = data[j * n + i];
            }
            plan.process(&mut col);
            for j in 0..n {
                data[j * n + i] = col[j];
            }
        }
    }

    pub fn forward(&self, real: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = real.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut d, &self.fwd);
        d
    }

    /// Inverse transform, normalized, real part.
    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut d = spec.to_vec();
        self.transform(&mut d, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        d.iter().map(|z| z.re * s).collect()
    }

    pub fn kx(&self, idx: usize) -> f64 {
        self.k[idx % self.n]
    }

    pub fn ky(&self, idx: usize) -> f64 {
        self.k[idx / self.n]
    }

    pub fn k2(&self, idx: usize) -> f64 {
        self.kx(idx).powi(2) + self.ky(idx).powi(2)
    }

    /// Two-thirds truncation: keeps `|kx|, |ky| < n / 3`.
    pub fn dealias_keep(&self, idx: usize) -> bool {
        let cut = self.n as f64 / 3.0;
        self.kx(idx).abs() < cut && self.ky(idx).abs() < cut
    }

    /// Derivatives along an axis vanish at the Nyquist index, which keeps
    /// real fields real.
    fn ik(&self, kk: f64) -> Complex64 {
        if kk.abs() == (self.n / 2) as f64 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, kk)
        }
    }

    /// Streamfunction spectrum `psi = omega / |k|^2`, zero mean.
    pub fn streamfunction(&self, w_hat: &[Complex64]) -> Vec<Complex64> {
        (0..w_hat.len())
            .map(|i| {
                let k2 = self.k2(i);
                if k2 == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    w_hat[i] / k2
                }
            })
            .collect()
    }

    /// Spectra of `u = d psi / dy` and `v = -d psi / dx`.
    pub fn velocity_hat(&self, w_hat: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let psi = self.streamfunction(w_hat);
        let u = (0..psi.len()).map(|i| self.ik(self.ky(i)) * psi[i]).collect();
        let v = (0..psi.len()).map(|i| -self.ik(self.kx(i)) * psi[i]).collect();
        (u, v)
    }

    pub fn ddx(&self, f_hat: &[Complex64]) -> Vec<Complex64> {
        (0..f_hat.len()).map(|i| self.ik(self.kx(i)) * f_hat[i]).collect()
    }

    pub fn ddy(&self, f_hat: &[Complex64]) -> Vec<Complex64> {
        (0..f_hat.len()).map(|i| self.ik(self.ky(i)) * f_hat[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VorticityConfig {
    pub grid: usize,
    pub nu: f64,
    pub dt: f64,
    pub steps_per_snapshot: usize,
    pub snapshots: usize,
    /// Wavenumber at which the initial amplitude spectrum peaks.
    pub peak_k: f64,
    /// RMS of the initial vorticity.
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub sensor_fraction: f64,
}

impl Default for VorticityConfig {
    fn default() -> Self {
        VorticityConfig {
            grid: 128,
            nu: 1e-3,
            dt: 1e-3,
            steps_per_snapshot: 100,
            snapshots: 100,
            peak_k: 2.0,
            amplitude: 1.0,
            noise_sigma: 0.0,
            sensor_fraction: 0.1,
        }
    }
}

/// Pseudo-spectral vorticity integrator: RK4 for dealiased advection, then
/// a Crank–Nicolson diffusion factor, every step.
#[derive(Debug, Clone)]
pub struct VorticitySolver {
    pub grid: SpectralGrid,
    pub nu: f64,
    pub dt: f64,
    pub w_hat: Vec<Complex64>,
}

impl VorticitySolver {
    pub fn new(n: usize, nu: f64, dt: f64, omega: &[f64]) -> Result<Self> {
        let grid = SpectralGrid::new(n)?;
        if omega.len() != n * n {
            return Err(Error::Shape(format!("{} values for a {n}x{n} grid", omega.len())));
        }
        let mut w_hat = grid.forward(omega);
        for (i, w) in w_hat.iter_mut().enumerate() {
            if !grid.dealias_keep(i) {
                *w = Complex64::new(0.0, 0.0);
            }
        }
        Ok(VorticitySolver { grid, nu, dt, w_hat })
    }

    pub fn vorticity(&self) -> Vec<f64> {
        self.grid.inverse(&self.w_hat)
    }

    pub fn velocity(&self) -> (Vec<f64>, Vec<f64>) {
        let (u, v) = self.grid.velocity_hat(&self.w_hat);
        (self.grid.inverse(&u), self.grid.inverse(&v))
    }

    /// Kinetic energy `1/2 mean(|u|^2)`.
    pub fn energy(&self) -> f64 {
        let (u, v) = self.velocity();
        0.5 * u.iter().zip(&v).map(|(a, b)| a * a + b * b).sum::<f64>() / u.len() as f64
    }

    fn advection(&self, w_hat: &[Complex64]) -> Vec<Complex64> {
        let g = &self.grid;
        let (uh, vh) = g.velocity_hat(w_hat);
        let u = g.inverse(&uh);
        let v = g.inverse(&vh);
        let wx = g.inverse(&g.ddx(w_hat));
        let wy = g.inverse(&g.ddy(w_hat));
        let adv: Vec<f64> = (0..u.len()).map(|i| u[i] * wx[i] + v[i] * wy[i]).collect();
        let mut out = g.forward(&adv);
        for (i, z) in out.iter_mut().enumerate() {
            *z = if g.dealias_keep(i) { -*z } else { Complex64::new(0.0, 0.0) };
        }
        out
    }

    pub fn step(&mut self) {
        let dt = self.dt;
        let w0 = self.w_hat.clone();
        let axpy = |a: &[Complex64], b: &[Complex64], s: f64| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x + y * s).collect()
        };
        let k1 = self.advection(&w0);
        let k2 = self.advection(&axpy(&w0, &k1, 0.5 * dt));
        let k3 = self.advection(&axpy(&w0, &k2, 0.5 * dt));
        let k4 = self.advection(&axpy(&w0, &k3, dt));
        for i in 0..w0.len() {
            let adv = w0[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0);
            let a = 0.5 * self.nu * dt * self.grid.k2(i);
            self.w_hat[i] = adv * ((1.0 - a) / (1.0 + a));
        }
    }

    /// `max(|u|, |v|) dt / dx`.
    pub fn cfl(&self) -> f64 {
        let (u, v) = self.velocity();
        let vmax = u.iter().chain(&v).fold(0.0f64, |m, x| m.max(x.abs()));
        vmax * self.dt / (2.0 * PI / self.grid.n as f64)
    }
}

/// Random field with amplitude spectrum `(k/k0)^2 exp(-(k/k0)^2)`, zero
/// mean, dealiased and scaled to the requested RMS.
pub(crate) fn initial_vorticity(grid: &SpectralGrid, peak_k: f64, amplitude: f64, seed: u64) -> Vec<f64> {
    let n = grid.n;
    let mut r = rng::stream(seed, 0, rng::site::SIM_INIT);
    let noise = rng::normals(&mut r, n * n);
    let mut spec = grid.forward(&noise);
    for (i, z) in spec.iter_mut().enumerate() {
        let q = grid.k2(i).sqrt() / peak_k;
        let f = q * q * (-q * q).exp();
        *z = if grid.dealias_keep(i) { *z * f } else { Complex64::new(0.0, 0.0) };
    }
    let w = grid.inverse(&spec);
    let rms = (w.iter().map(|x| x * x).sum::<f64>() / (n * n) as f64).sqrt();
    if rms == 0.0 {
        return w;
    }
    w.iter().map(|x| x * amplitude / rms).collect()
}

fn validate(cfg: &VorticityConfig) -> Result<()> {
    if cfg.snapshots < 1 || cfg.steps_per_snapshot < 1 {
        return Err(Error::Config("vorticity snapshots and steps must be >= 1".into()));
    }
    if !(cfg.dt > 0.0 && cfg.nu >= 0.0) {
        return Err(Error::Config("vorticity dt must be positive and nu >= 0".into()));
    }
    SpectralGrid::new(cfg.grid).map(|_| ())
}

fn run(cfg: &VorticityConfig, omega0: &[f64]) -> Result<(Vec<Field>, f64)> {
    let mut solver = VorticitySolver::new(cfg.grid, cfg.nu, cfg.dt, omega0)?;
    let snap_dt = cfg.dt * cfg.steps_per_snapshot as f64;
    let mut truth = Vec::with_capacity(cfg.snapshots);
    let mut max_cfl = solver.cfl();
    let mut step = 0;
    for k in 0..cfg.snapshots {
        if k > 0 {
            for _ in 0..cfg.steps_per_snapshot {
                solver.step();
                step += 1;
            }
            if solver.w_hat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Simulation {
                    step,
                    reason: "non-finite vorticity".into(),
                });
            }
            max_cfl = max_cfl.max(solver.cfl());
        }
        truth.push(Field::from_real(&solver.vorticity(), k as f64 * snap_dt));
    }
    if max_cfl > 1.0 {
        eprintln!("warning: vorticity run exceeded CFL 1 (max {max_cfl:.3})");
    }
    Ok((truth, max_cfl))
}

fn dataset(cfg: &VorticityConfig, seed: u64, truth: Vec<Field>, max_cfl: f64) -> Result<Dataset> {
    let n = cfg.grid;
    let xs = linspace_periodic(n);
    let grid = CoordSet::grid(&xs, &xs)?;
    let mut params = match serde_json::to_value(cfg) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => Default::default(),
    };
    params.insert("max_cfl".into(), max_cfl.into());
    assemble(
        "vorticity",
        seed,
        (n, n),
        grid,
        truth,
        cfg.dt * cfg.steps_per_snapshot as f64,
        Sensing {
            fraction: cfg.sensor_fraction,
            noise_sigma: cfg.noise_sigma,
            noise: NoiseKind::Real,
        },
        None,
        params,
    )
}

/// Decaying 2-D turbulence from a filtered random initial field.
pub fn gen_vorticity(cfg: &VorticityConfig, seed: u64) -> Result<Dataset> {
    validate(cfg)?;
    let grid = SpectralGrid::new(cfg.grid)?;
    let w0 = initial_vorticity(&grid, cfg.peak_k, cfg.amplitude, seed);
    let (truth, cfl) = run(cfg, &w0)?;
    dataset(cfg, seed, truth, cfl)
}

/// Realizations sharing the initial field and sensors of `seed` but with
/// the given viscosities.
pub fn gen_vorticity_ensemble(cfg: &VorticityConfig, seed: u64, nus: &[f64]) -> Result<Vec<Dataset>> {
    validate(cfg)?;
    let grid = SpectralGrid::new(cfg.grid)?;
    let w0 = initial_vorticity(&grid, cfg.peak_k, cfg.amplitude, seed);
    nus.iter()
        .map(|&nu| {
            let c = VorticityConfig { nu, ..cfg.clone() };
            let (truth, cfl) = run(&c, &w0)?;
            dataset(&c, seed, truth, cfl)
        })
        .collect()
}

/// Bilinear resampling of a periodic `n x n` field onto an `m x m` grid
/// covering the same box.
pub fn resample_periodic(values: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
    if values.len() != n * n || n == 0 || m == 0 {
        return Err(Error::Shape(format!("{} values for a {n}x{n} grid", values.len())));
    }
    let scale = n as f64 / m as f64;
    let mut out = Vec::with_capacity(m * m);
    for j in 0..m {
        let y = j as f64 * scale;
        let (j0, fy) = (y.floor() as usize % n, y - y.floor());
        let j1 = (j0 + 1) % n;
        for i in 0..m {
            let x = i as f64 * scale;
            let (i0, fx) = (x.floor() as usize % n, x - x.floor());
            let i1 = (i0 + 1) % n;
            let a = values[j0 * n + i0] * (1.0 - fx) + values[j0 * n + i1] * fx;
            let b = values[j1 * n + i0] * (1.0 - fx) + values[j1 * n + i1] * fx;
            out.push(a * (1.0 - fy) + b * fy);
        }
    }
    Ok(out)
}
