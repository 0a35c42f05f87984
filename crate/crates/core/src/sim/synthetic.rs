use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{assemble, NoiseKind, Sensing};
use crate::error::{Error, Result};
use crate::types::{linspace_closed, ComplexMat, CoordSet, Dataset, Field, Spectrum};

/// Four fixed modes with damped oscillatory coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub grid: usize,
    /// Number of snapshots.
    pub snapshots: usize,
    pub dt_eff: f64,
    pub alpha: [f64; 4],
    pub omega: [f64; 4],
    /// Initial coefficients as `(re, im)` pairs.
    pub b: [[f64; 2]; 4],
    pub noise_sigma: f64,
    pub sensor_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid: 32,
            snapshots: 50,
            dt_eff: 0.1,
            alpha: [-0.01, -0.05, -0.20, -0.01],
            omega: [2.00, 4.00, 1.00, 0.30],
            b: [[1.0, 0.5], [0.8, -0.3], [0.7, 0.2], [0.2, 0.0]],
            noise_sigma: 0.1,
            sensor_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn lambdas(&self) -> Vec<Complex64> {
        (0..4).map(|k| Complex64::new(self.alpha[k], self.omega[k])).collect()
    }

    pub fn coefficients(&self) -> Vec<Complex64> {
        self.b.iter().map(|b| Complex64::new(b[0], b[1])).collect()
    }
}

/// `[m0, m1, m2, m3]` at `(x, y)`.
pub fn synthetic_modes(x: f64, y: f64) -> [f64; 4] {
    [
        (0.5 * PI * (x + 1.0)).sin() * (0.5 * PI * (y + 1.0)).cos(),
        (PI * (x + 1.0)).cos() * (PI * (y + 1.0)).sin(),
        (2.0 * PI * x).sin() * (2.0 * PI * y).sin(),
        0.5,
    ]
}

/// `I(x, t_k) = sum_k m_k(x) b_k exp(lambda_k t_k)` with `t_k = k dt_eff`,
/// observed at a random sensor subset with complex noise.
pub fn gen_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    if cfg.grid < 2 || cfg.snapshots < 1 || !(cfg.dt_eff > 0.0) {
        return Err(Error::Config("synthetic grid >= 2, snapshots >= 1 and dt_eff > 0 required".into()));
    }
    let xs = linspace_closed(cfg.grid);
    let grid = CoordSet::grid(&xs, &xs)?;
    let n = grid.len();
    let modes = ComplexMat::from_fn(n, 4, |i, k| {
        let s = grid.get(i);
        Complex64::new(synthetic_modes(s[0], s[1])[k], 0.0)
    });
    let lambdas = cfg.lambdas();
    let b = cfg.coefficients();
    let truth: Vec<Field> = (0..cfg.snapshots)
        .map(|step| {
            let t = step as f64 * cfg.dt_eff;
            let phi: Vec<Complex64> = (0..4).map(|k| b[k] * (lambdas[k] * t).exp()).collect();
            Field::new(modes.mul_vec(&phi).expect("rank 4"), t)
        })
        .collect();
    let spectrum = Spectrum::from_continuous(lambdas, modes, cfg.dt_eff);
    let params = match serde_json::to_value(cfg) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => Default::default(),
    };
    assemble(
        "synthetic",
        seed,
        (cfg.grid, cfg.grid),
        grid,
        truth,
        cfg.dt_eff,
        Sensing {
            fraction: cfg.sensor_fraction,
            noise_sigma: cfg.noise_sigma,
            noise: NoiseKind::Complex,
        },
        Some(spectrum),
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_constants() {
        let ds = gen_synthetic(&SynthConfig::default(), 7).unwrap();
        assert_eq!(ds.sensor_indices.len(), 102);
        assert_eq!(ds.dt, 0.1);
        let spec = ds.gt_spectrum.as_ref().unwrap();
        let mu0 = spec.mus[0];
        let decay = (-0.001f64).exp();
        assert!((mu0.re - decay * 0.2f64.cos()).abs() < 1e-12);
        assert!((mu0.im - decay * 0.2f64.sin()).abs() < 1e-12);
        // Rounded reference value 0.97917 + 0.19849j.
        assert!((mu0.re - 0.979_17).abs() < 1e-4 && (mu0.im - 0.198_49).abs() < 1e-4, "{mu0}");
        assert!(spec.consistency_error(0.1) < 1e-10);
        for i in 0..1024 {
            assert_eq!(spec.modes[(i, 3)], Complex64::new(0.5, 0.0));
        }
    }

    #[test]
    fn truth_reconstructs_from_spectrum() {
        let cfg = SynthConfig { snapshots: 7, ..Default::default() };
        let ds = gen_synthetic(&cfg, 1).unwrap();
        let spec = ds.gt_spectrum.as_ref().unwrap();
        let b = cfg.coefficients();
        for (k, f) in ds.truth.as_ref().unwrap().iter().enumerate() {
            let phi: Vec<Complex64> = (0..4).map(|i| b[i] * spec.mus[i].powu(k as u32)).collect();
            let again = spec.modes.mul_vec(&phi).unwrap();
            for (a, c) in again.iter().zip(&f.values) {
                assert!((a - c).norm() < 1e-12);
            }
        }
        // At t = 0 the coefficients are b.
        let f0 = &ds.truth.as_ref().unwrap()[0];
        let direct = spec.modes.mul_vec(&b).unwrap();
        assert_eq!(&direct, &f0.values);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = gen_synthetic(&SynthConfig::default(), 3).unwrap();
        let b = gen_synthetic(&SynthConfig::default(), 3).unwrap();
        let c = gen_synthetic(&SynthConfig::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.observations, c.observations);
    }
}
