//! Benchmark generators and sparse sensing.

mod grayscott;
mod synthetic;
mod vorticity;

pub use grayscott::{gen_grayscott, laplacian_periodic, GrayScottConfig};
pub use synthetic::{gen_synthetic, synthetic_modes, SynthConfig};
pub use vorticity::{
    gen_vorticity, gen_vorticity_ensemble, resample_periodic, SpectralGrid, VorticityConfig,
    VorticitySolver,
};

use num_complex::Complex64;
use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{CoordSet, Dataset, DatasetMeta, Field, Spectrum};

/// `floor(fraction * n)`, rejecting fractions that select nothing.
pub fn sensor_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("sensor fraction {fraction} outside (0, 1]")));
    }
    // The small offset keeps e.g. 0.29 * 100 from flooring to 28.
    let m = (fraction * n as f64 + 1e-9).floor() as usize;
    if m == 0 {
        return Err(Error::Config(format!("sensor fraction {fraction} of {n} points selects no sensors")));
    }
    Ok(m.min(n))
}

/// One uniform draw of `floor(fraction * n)` distinct indices, sorted.
pub fn choose_sensors(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let m = sensor_count(n, fraction)?;
    let mut r = rng::stream(seed, 0, rng::site::SENSORS);
    let mut idx = index::sample(&mut r, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Noise added to sensor readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// Circular complex Gaussian `CN(0, sigma^2)`: each part has variance
    /// `sigma^2 / 2`.
    Complex,
    /// Real Gaussian `N(0, sigma^2)`; imaginary parts stay zero.
    Real,
}

/// Selects the sensors from every truth snapshot and adds i.i.d. noise.
pub fn subsample(
    truth: &[Field],
    fraction: f64,
    noise_sigma: f64,
    noise: NoiseKind,
    seed: u64,
) -> Result<(Vec<Field>, Vec<usize>)> {
    let n = truth.first().map(Field::len).unwrap_or(0);
    if truth.iter().any(|f| f.len() != n) {
        return Err(Error::Shape("truth snapshots differ in size".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let idx = choose_sensors(n, fraction, seed)?;
    let mut r = rng::stream(seed, 0, rng::site::OBS_NOISE);
    let obs = truth
        .iter()
        .map(|f| {
            let mut y = f.select(&idx);
            if noise_sigma > 0.0 {
                for v in &mut y.values {
                    *v += match noise {
                        NoiseKind::Complex => {
                            let s = noise_sigma / std::f64::consts::SQRT_2;
                            Complex64::new(s * rng::standard_normal(&mut r), s * rng::standard_normal(&mut r))
                        }
                        NoiseKind::Real => Complex64::new(noise_sigma * rng::standard_normal(&mut r), 0.0),
                    };
                }
            }
            y
        })
        .collect();
    Ok((obs, idx))
}

/// Sensing parameters shared by all generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Sensing {
    pub fraction: f64,
    pub noise_sigma: f64,
    pub noise: NoiseKind,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    system: &str,
    seed: u64,
    grid_shape: (usize, usize),
    grid: CoordSet,
    truth: Vec<Field>,
    dt: f64,
    sensing: Sensing,
    spectrum: Option<Spectrum>,
    params: serde_json::Map<String, serde_json::Value>,
) -> Result<Dataset> {
    let (obs, idx) = subsample(&truth, sensing.fraction, sensing.noise_sigma, sensing.noise, seed)?;
    Dataset::new(
        DatasetMeta {
            system: system.to_string(),
            seed,
            noise_sigma: sensing.noise_sigma,
            sensor_fraction: sensing.fraction,
            params,
        },
        grid_shape,
        grid,
        idx,
        dt,
        obs,
        Some(truth),
        spectrum,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensor_counts() {
        assert_eq!(sensor_count(1024, 0.1).unwrap(), 102);
        assert_eq!(sensor_count(10_000, 0.1).unwrap(), 1000);
        assert_eq!(sensor_count(100, 0.29).unwrap(), 29);
        assert!(sensor_count(5, 0.1).is_err());
        assert!(sensor_count(5, 0.0).is_err());
        assert!(sensor_count(5, 1.5).is_err());
    }

    #[test]
    fn sensors_are_reproducible() {
        let a = choose_sensors(1024, 0.1, 4).unwrap();
        assert_eq!(a, choose_sensors(1024, 0.1, 4).unwrap());
        assert_ne!(a, choose_sensors(1024, 0.1, 5).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(choose_sensors(50, 1.0, 1).unwrap(), (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn complex_noise_has_requested_power() {
        let truth = vec![Field::new(vec![Complex64::new(0.0, 0.0); 10_000], 0.0)];
        let (obs, _) = subsample(&truth, 1.0, 0.1, NoiseKind::Complex, 9).unwrap();
        let p: f64 = obs[0].values.iter().map(|z| z.norm_sqr()).sum::<f64>() / 10_000.0;
        assert!((p - 0.01).abs() < 0.0006, "{p}");
        let (obs, _) = subsample(&truth, 1.0, 0.1, NoiseKind::Real, 9).unwrap();
        assert!(obs[0].values.iter().all(|z| z.im == 0.0));
    }
}
