use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{assemble, NoiseKind, Sensing};
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{linspace_closed, CoordSet, Dataset, Field};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrayScottConfig {
    pub grid: usize,
    /// Spacing used by the finite-difference Laplacian.
    pub dx: f64,
    pub du: f64,
    pub dv: f64,
    pub feed: f64,
    pub kill: f64,
    /// Standard deviation of the per-point perturbation of `feed`.
    pub feed_sigma: f64,
    /// Requested time step; reduced to the diffusion limit when larger.
    pub dt: f64,
    pub steps_per_snapshot: usize,
    pub snapshots: usize,
    pub noise_sigma: f64,
    pub sensor_fraction: f64,
}

impl Default for GrayScottConfig {
    fn default() -> Self {
        GrayScottConfig {
            grid: 100,
            dx: 0.01,
            du: 2e-4,
            dv: 1e-5,
            feed: 0.035,
            kill: 0.065,
            feed_sigma: 1e-3,
            dt: 1.0,
            steps_per_snapshot: 4,
            snapshots: 100,
            noise_sigma: 0.0,
            sensor_fraction: 0.1,
        }
    }
}

impl GrayScottConfig {
    /// Largest stable explicit step `dx^2 / (4 max(D_u, D_v))`.
    pub fn stable_dt(&self) -> f64 {
        self.dx * self.dx / (4.0 * self.du.max(self.dv))
    }

    pub fn effective_dt(&self) -> f64 {
        self.dt.min(self.stable_dt())
    }
}

/// 5-point Laplacian on an `n x n` periodic grid (x fastest), built from
/// nearest-neighbour rolls.
pub fn laplacian_periodic(f: &[f64], n: usize, dx: f64) -> Vec<f64> {
    let inv = 1.0 / (dx * dx);
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
        for i in 0..n {
            let (im, ip) = ((i + n - 1) % n, (i + 1) % n);
            out[j * n + i] = (f[j * n + im] + f[j * n + ip] + f[jm * n + i] + f[jp * n + i]
                - 4.0 * f[j * n + i])
                * inv;
        }
    }
    out
}

/// One forward-Euler step of the reaction–diffusion system.
pub(crate) fn euler_step(u: &mut [f64], v: &mut [f64], feed: &[f64], cfg: &GrayScottConfig, dt: f64, n: usize) {
    let lu = laplacian_periodic(u, n, cfg.dx);
    let lv = laplacian_periodic(v, n, cfg.dx);
    for i in 0..n * n {
        let uvv = u[i] * v[i] * v[i];
        let du = cfg.du * lu[i] - uvv + feed[i] * (1.0 - u[i]);
        let dv = cfg.dv * lv[i] + uvv - (feed[i] + cfg.kill) * v[i];
        u[i] += dt * du;
        v[i] += dt * dv;
    }
}

/// Gray–Scott run from the wave-modulated initial state; `v` is observed.
pub fn gen_grayscott(cfg: &GrayScottConfig, seed: u64) -> Result<Dataset> {
    if cfg.grid < 3 || cfg.snapshots < 1 || cfg.steps_per_snapshot < 1 {
        return Err(Error::Config("Gray-Scott grid >= 3, snapshots and steps >= 1 required".into()));
    }
    if !(cfg.dx > 0.0 && cfg.dt > 0.0) {
        return Err(Error::Config("dx and dt must be positive".into()));
    }
    let n = cfg.grid;
    let dt = cfg.effective_dt();
    let xs = linspace_closed(n);
    let grid = CoordSet::grid(&xs, &xs)?;
    let mut u: Vec<f64> = grid
        .iter()
        .map(|s| 0.9 + 0.1 * (4.0 * PI * s[0]).sin() * (2.0 * PI * s[1]).cos())
        .collect();
    let mut v: Vec<f64> = grid.iter().map(|s| 0.1 + 0.05 * (PI * s[0]).sin()).collect();
    let mut r = rng::stream(seed, 0, rng::site::SIM_PARAMS);
    let feed: Vec<f64> = (0..n * n)
        .map(|_| cfg.feed + cfg.feed_sigma * rng::standard_normal(&mut r))
        .collect();

    let snap_dt = dt * cfg.steps_per_snapshot as f64;
    let mut truth = Vec::with_capacity(cfg.snapshots);
    let mut step = 0;
    for k in 0..cfg.snapshots {
        if k > 0 {
            for _ in 0..cfg.steps_per_snapshot {
                euler_step(&mut u, &mut v, &feed, cfg, dt, n);
                step += 1;
            }
            if u.iter().chain(&v).any(|x| !x.is_finite()) {
                return Err(Error::Simulation {
                    step,
                    reason: "non-finite concentration".into(),
                });
            }
        }
        truth.push(Field::from_real(&v, k as f64 * snap_dt));
    }
    let mut params = match serde_json::to_value(cfg) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => Default::default(),
    };
    params.insert("dt_effective".into(), dt.into());
    params.insert("snapshot_dt".into(), snap_dt.into());
    assemble(
        "grayscott",
        seed,
        (n, n),
        grid,
        truth,
        snap_dt,
        Sensing {
            fraction: cfg.sensor_fraction,
            noise_sigma: cfg.noise_sigma,
            noise: NoiseKind::Real,
        },
        None,
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = vec![3.7; 36];
        assert!(laplacian_periodic(&f, 6, 0.01).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_of_fourier_mode() {
        let n = 16;
        let dx = 2.0 * PI / n as f64;
        let f: Vec<f64> = (0..n * n).map(|k| ((k % n) as f64 * dx).sin()).collect();
        let l = laplacian_periodic(&f, n, dx);
        // Discrete symbol of the 3-point stencil.
        let sym = -(2.0 - 2.0 * dx.cos()) / (dx * dx);
        for k in 0..n * n {
            assert!((l[k] - sym * f[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_state_is_fixed() {
        let cfg = GrayScottConfig::default();
        let n = 8;
        let mut u = vec![1.0; n * n];
        let mut v = vec![0.0; n * n];
        let feed = vec![cfg.feed; n * n];
        for _ in 0..10 {
            euler_step(&mut u, &mut v, &feed, &cfg, 0.1, n);
        }
        assert!(u.iter().all(|&x| x == 1.0) && v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dt_is_clamped_to_stability_limit() {
        let cfg = GrayScottConfig::default();
        assert!((cfg.effective_dt() - 0.125).abs() < 1e-15);
        let ds = gen_grayscott(&GrayScottConfig { grid: 20, snapshots: 3, ..cfg }, 1).unwrap();
        assert_eq!(ds.meta.params["dt_effective"], serde_json::json!(0.125));
        assert!(ds.is_real_valued());
    }

    #[test]
    fn v_stays_in_unit_interval() {
        let ds = gen_grayscott(&GrayScottConfig::default(), 2).unwrap();
        for f in ds.truth.as_ref().unwrap() {
            assert!(f.values.iter().all(|z| (0.0..=1.0).contains(&z.re)));
        }
        assert_eq!(ds.sensor_indices.len(), 1000);
    }
}
