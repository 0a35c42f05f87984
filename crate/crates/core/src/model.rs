//! The generative forward pass: encode a snapshot into a latent Gaussian,
//! evolve it with the SDE, and decode a predictive mean and variance at any
//! set of coordinates.
//!
//! The networks work on observations divided by `obs_scale`; everything
//! exposed here (fields, modes, variances) is in data units. Latent
//! coefficients stay in network units.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{self, EigenParams, NetConfig};
use crate::sde::{self, LatentGaussian, SdeConfig};
use crate::types::{ComplexMat, ComplexVec, CoordSet, Field};

/// Everything besides the parameters needed to run a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub net: NetConfig,
    /// Euler–Maruyama substeps per observation interval.
    pub substeps: usize,
    /// Observation interval.
    pub dt: f64,
    /// Observations are divided by this before entering the networks.
    pub obs_scale: f64,
    /// Feedback and errors use only the real part.
    pub real_valued: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.substeps == 0 {
            return Err(Error::Config("at least one substep is required".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("interval {} must be positive", self.dt)));
        }
        if !(self.obs_scale > 0.0 && self.obs_scale.is_finite()) {
            return Err(Error::Config(format!("observation scale {} must be positive", self.obs_scale)));
        }
        Ok(())
    }

    pub fn delta_t(&self) -> f64 {
        self.dt / self.substeps as f64
    }
}

/// Predictive mean and per-point variance of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPrediction {
    pub mean: ComplexVec,
    /// `E|y_i - mean_i|^2`: latent spread plus observation noise.
    pub var: Vec<f64>,
    pub time: f64,
}

impl FieldPrediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn as_field(&self) -> Field {
        Field::new(self.mean.clone(), self.time)
    }

    pub fn select(&self, idx: &[usize]) -> FieldPrediction {
        FieldPrediction {
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            var: idx.iter().map(|&i| self.var[i]).collect(),
            time: self.time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    TeacherForced,
    Autoregressive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Predictions for times `t_1 ..= t_T`.
    pub predictions: Vec<FieldPrediction>,
    /// Encoder output that was propagated at step `k` (input time `t_k`).
    pub latents_encoded: Vec<LatentGaussian>,
    /// SDE image of `latents_encoded[k]` at time `t_{k+1}`.
    pub latents_propagated: Vec<LatentGaussian>,
    /// Modes at the query coordinates, data units.
    pub mode_matrix: ComplexMat,
}

/// `mean = W mu`, `var_i = w_i Sigma w_i^H + sigma_obs2` with `w_i` row `i`
/// of `W` and `Sigma` the complex latent covariance.
pub fn decode(g: &LatentGaussian, w: &ComplexMat, sigma_obs2: f64, time: f64) -> Result<FieldPrediction> {
    if w.cols() != g.rank() {
        return Err(Error::Shape(format!(
            "{} modes for a latent of rank {}",
            w.cols(),
            g.rank()
        )));
    }
    let mu = g.complex_mean();
    let sigma = g.complex_cov();
    let mean = w.mul_vec(&mu)?;
    let r = g.rank();
    let var = (0..w.rows())
        .map(|i| {
            let row = w.row(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..r {
                for k in 0..r {
                    acc += row[j] * sigma[(j, k)] * row[k].conj();
                }
            }
            acc.re.max(0.0) + sigma_obs2
        })
        .collect();
    Ok(FieldPrediction { mean, var, time })
}

/// Decoded quantities as tape nodes, each `1 x m`.
#[derive(Debug, Clone, Copy)]
pub struct TapeDecode {
    pub mean_re: Var,
    pub mean_im: Var,
    pub var: Var,
}

/// Tape version of [`decode`] on the real lift: `w` is `m x 2r` with
/// interleaved `(Re, Im)` columns, `mu` is `1 x 2r`, `cov` is `2r x 2r`
/// and `sigma2` a scalar.
pub fn decode_tape(t: &mut Tape, w: Var, mu: Var, cov: Var, sigma2: Var) -> TapeDecode {
    let n = t.shape(w).1;
    let signs = t.row(&(0..n).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>());
    // Re(y) = a . x and Im(y) = b . x with x the lifted latent.
    let a = t.mul_row(w, signs);
    let b = t.swap_pairs(w);
    let at = t.transpose(a);
    let bt = t.transpose(b);
    let mean_re = t.matmul(mu, at);
    let mean_im = t.matmul(mu, bt);
    let ca = t.matmul(cov, at);
    let qa = t.mul(ca, at);
    let va = t.sum_rows(qa);
    let cb = t.matmul(cov, bt);
    let qb = t.mul(cb, bt);
    let vb = t.sum_rows(qb);
    let v = t.add(va, vb);
    let var = t.add_scalar_var(v, sigma2);
    TapeDecode { mean_re, mean_im, var }
}

/// Parameters plus configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh model with parameters initialized under `seed`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let params = nets::init_params(&cfg.net, seed)?;
        Ok(Model { cfg, params })
    }

    pub fn from_parts(cfg: ModelConfig, params: ParamStore) -> Result<Model> {
        cfg.validate()?;
        let fresh = nets::init_params(&cfg.net, 0)?;
        if fresh.segments() != params.segments() {
            return Err(Error::Format("parameter layout does not match the configuration".into()));
        }
        Ok(Model { cfg, params })
    }

    pub fn rank(&self) -> usize {
        self.cfg.net.rank
    }

    fn scalar(&self, name: &str) -> f64 {
        self.params.get(name).map(|v| v[[0, 0]]).expect("scalar parameter")
    }

    /// Diffusion scale `tau` (latent units per sqrt time).
    pub fn tau(&self) -> f64 {
        (0.5 * self.scalar("log_tau2")).exp()
    }

    /// Observation noise variance in data units.
    pub fn sigma_obs2(&self) -> f64 {
        self.scalar("log_sigma2").exp() * self.cfg.obs_scale.powi(2)
    }

    pub fn eigen(&self) -> EigenParams {
        EigenParams::from_params(&self.params).expect("model has eigenvalues")
    }

    pub fn sde_config(&self) -> SdeConfig {
        SdeConfig {
            tau: self.tau(),
            substeps: self.cfg.substeps,
            delta_t: self.cfg.delta_t(),
        }
    }

    /// Mode values at `set`, data units.
    pub fn eval_modes(&self, set: &CoordSet) -> Result<ComplexMat> {
        let mut w = nets::eval_modes(&self.params, &self.cfg.net, set)?;
        let s = self.cfg.obs_scale;
        let (rows, cols) = w.shape();
        for i in 0..rows {
            for j in 0..cols {
                w[(i, j)] *= s;
            }
        }
        Ok(w)
    }

    pub fn encode(&self, y: &Field, set: &CoordSet) -> Result<LatentGaussian> {
        let s = self.cfg.obs_scale;
        let scaled = Field::new(y.values.iter().map(|v| v / s).collect(), y.time);
        nets::encode_latent(&self.params, &self.cfg.net, &scaled, set)
    }

    /// Latent at `t0 + dt` from a latent at `t0`.
    pub fn propagate(&self, g: &LatentGaussian, t0: f64) -> Result<LatentGaussian> {
        sde::propagate(g, &self.params, &self.cfg.net, t0, &self.sde_config())
    }

    pub fn decode(&self, g: &LatentGaussian, w: &ComplexMat, time: f64) -> Result<FieldPrediction> {
        decode(g, w, self.sigma_obs2(), time)
    }

    /// Decodes `g` at arbitrary coordinates.
    pub fn reconstruct_at(&self, g: &LatentGaussian, q: &CoordSet, time: f64) -> Result<FieldPrediction> {
        let w = self.eval_modes(q)?;
        self.decode(g, &w, time)
    }

    /// Encode `y_in`, propagate one interval and decode at `set`.
    pub fn step(
        &self,
        y_in: &Field,
        set: &CoordSet,
    ) -> Result<(FieldPrediction, LatentGaussian, LatentGaussian)> {
        let enc = self.encode(y_in, set)?;
        let prop = self.propagate(&enc, y_in.time)?;
        let pred = self.reconstruct_at(&prop, set, y_in.time + self.cfg.dt)?;
        Ok((pred, enc, prop))
    }

    fn feedback(&self, pred: &FieldPrediction) -> Field {
        let values = if self.cfg.real_valued {
            pred.mean.iter().map(|z| Complex64::new(z.re, 0.0)).collect()
        } else {
            pred.mean.clone()
        };
        Field::new(values, pred.time)
    }

    /// Multi-step prediction over `horizon` intervals.
    ///
    /// Teacher forcing encodes `observations[k]` at every step and needs
    /// `horizon + 1` observations; autoregressive rollouts use only
    /// `observations[0]` and re-encode the predicted mean at the sensors.
    /// Predictions are decoded at `query` (the sensors when `None`).
    pub fn rollout(
        &self,
        observations: &[Field],
        sensors: &CoordSet,
        horizon: usize,
        mode: RolloutMode,
        query: Option<&CoordSet>,
    ) -> Result<RolloutResult> {
        let needed = match mode {
            RolloutMode::TeacherForced => horizon + 1,
            RolloutMode::Autoregressive => 1,
        };
        if observations.len() < needed.max(1) {
            return Err(Error::Config(format!(
                "rollout of {horizon} steps needs {needed} observations, got {}",
                observations.len()
            )));
        }
        let w_s = self.eval_modes(sensors)?;
        let w_q = match query {
            Some(q) => self.eval_modes(q)?,
            None => w_s.clone(),
        };
        let mut out = RolloutResult {
            predictions: Vec::with_capacity(horizon),
            latents_encoded: Vec::with_capacity(horizon),
            latents_propagated: Vec::with_capacity(horizon),
            mode_matrix: w_q.clone(),
        };
        let mut input = observations[0].clone();
        for k in 0..horizon {
            if mode == RolloutMode::TeacherForced {
                input = observations[k].clone();
            }
            let enc = self.encode(&input, sensors)?;
            let prop = self.propagate(&enc, input.time)?;
            let t1 = input.time + self.cfg.dt;
            if mode == RolloutMode::Autoregressive {
                let at_sensors = self.decode(&prop, &w_s, t1)?;
                input = self.feedback(&at_sensors);
            }
            out.predictions.push(self.decode(&prop, &w_q, t1)?);
            out.latents_encoded.push(enc);
            out.latents_propagated.push(prop);
        }
        Ok(out)
    }
}

/// Shared tape inputs for a forward pass over one sensor set.
#[derive(Debug, Clone, Copy)]
pub struct TapeModel {
    pub coords: Var,
    pub modes: Var,
    pub tau2: Var,
    pub sigma2: Var,
}

impl TapeModel {
    /// Records the sensor modes and noise scales once per tape.
    pub fn record(t: &mut Tape, p: &BoundParams, encoded_coords: &Array2<f64>) -> TapeModel {
        let coords = t.constant(encoded_coords.clone());
        let modes = nets::mode_forward(t, p, coords);
        let tau2 = t.exp(p.get("log_tau2"));
        let sigma2 = t.exp(p.get("log_sigma2"));
        TapeModel {
            coords,
            modes,
            tau2,
            sigma2,
        }
    }
}

/// Diagonal covariance from a `1 x n` log-variance row.
pub fn diag_cov_tape(t: &mut Tape, logvar: Var) -> Var {
    let n = t.shape(logvar).1;
    let eye = t.constant(Array2::eye(n));
    let var = t.exp(logvar);
    t.mul_row(eye, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lift_from_complex_cov;
    use crate::nets::PosEncConfig;
    use crate::rng;
    use crate::types::linspace_closed;

    fn small_model(rank: usize, real_valued: bool) -> Model {
        let cfg = ModelConfig {
            net: NetConfig {
                rank,
                posenc: PosEncConfig { bands: 2, dim: 2 },
                mode_hidden: vec![8, 8],
                enc_hidden: vec![8],
                drift_hidden: vec![6],
                time_scale: 1.0,
            },
            substeps: 3,
            dt: 0.1,
            obs_scale: 2.0,
            real_valued,
        };
        Model::init(cfg, 5).unwrap()
    }

    fn grid(n: usize) -> CoordSet {
        let xs = linspace_closed(n);
        CoordSet::grid(&xs, &xs).unwrap()
    }

    fn random_mat(rows: usize, cols: usize, seed: u64) -> ComplexMat {
        let mut r = rng::stream(seed, 0, 0);
        ComplexMat::from_fn(rows, cols, |_, _| {
            Complex64::new(rng::standard_normal(&mut r), rng::standard_normal(&mut r))
        })
    }

    fn random_cov(r: usize, seed: u64) -> ComplexMat {
        let a = random_mat(r, r, seed);
        a.matmul(&a.conj_transpose()).unwrap()
    }

    #[test]
    fn decode_examples() {
        let g = LatentGaussian::point(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0)]);
        let w = random_mat(5, 2, 1);
        let p = decode(&g, &w, 1e-4, 0.0).unwrap();
        assert!(p.var.iter().all(|&v| (v - 1e-4).abs() < 1e-18));

        let g = LatentGaussian::from_complex(&[Complex64::new(0.0, 0.0); 3], &ComplexMat::identity(3)).unwrap();
        let w = ComplexMat::identity(3);
        let p = decode(&g, &w, 0.01, 0.0).unwrap();
        assert!(p.var.iter().all(|&v| (v - 1.01).abs() < 1e-14));
        assert!(decode(&g, &random_mat(4, 2, 3), 0.0, 0.0).is_err());
    }

    #[test]
    fn decode_variance_shift_identity() {
        let r = 3;
        let w = random_mat(6, r, 2);
        let s = random_cov(r, 3);
        let mu: Vec<Complex64> = (0..r).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let g1 = LatentGaussian::from_complex(&mu, &s).unwrap();
        let mut s2 = s.clone();
        let c = 0.37;
        for i in 0..r {
            s2[(i, i)] += c;
        }
        let g2 = LatentGaussian::from_complex(&mu, &s2).unwrap();
        let p1 = decode(&g1, &w, 0.1, 0.0).unwrap();
        let p2 = decode(&g2, &w, 0.1, 0.0).unwrap();
        for i in 0..6 {
            let nrm: f64 = w.row(i).iter().map(|z| z.norm_sqr()).sum();
            assert!((p2.var[i] - p1.var[i] - c * nrm).abs() < 1e-10);
        }
    }

    #[test]
    fn decode_variance_matches_monte_carlo() {
        let r = 2;
        let w = random_mat(4, r, 7);
        let s = random_cov(r, 8);
        let g = LatentGaussian::from_complex(&[Complex64::new(0.3, -0.1), Complex64::new(-0.5, 0.2)], &s).unwrap();
        let sigma2 = 0.05;
        let pred = decode(&g, &w, sigma2, 0.0).unwrap();
        let l = sde::psd_sqrt(&g.cov);
        let n = 100_000;
        let mut rn = rng::stream(1, 0, 0);
        let mut acc = vec![(Complex64::new(0.0, 0.0), 0.0); 4];
        for _ in 0..n {
            let e = rng::normals(&mut rn, 2 * r);
            let x: Vec<f64> = (0..2 * r)
                .map(|i| g.mean[i] + (0..2 * r).map(|j| l[[i, j]] * e[j]).sum::<f64>())
                .collect();
            let phi = nets::unlift_row(&x);
            let y = w.mul_vec(&phi).unwrap();
            for i in 0..4 {
                let noise = Complex64::new(rng::standard_normal(&mut rn), rng::standard_normal(&mut rn))
                    * (sigma2 / 2.0).sqrt();
                let yi = y[i] + noise;
                acc[i].0 += yi;
                acc[i].1 += yi.norm_sqr();
            }
        }
        for i in 0..4 {
            let m = acc[i].0 / n as f64;
            let v = acc[i].1 / n as f64 - m.norm_sqr();
            assert!((v - pred.var[i]).abs() / pred.var[i] < 0.05, "{v} vs {}", pred.var[i]);
        }
    }

    #[test]
    fn tape_decode_matches_value_decode() {
        let r = 3;
        let w = random_mat(5, r, 11);
        let s = random_cov(r, 12);
        let mu: Vec<Complex64> = (0..r).map(|i| Complex64::new(0.2 * i as f64, -0.3)).collect();
        let g = LatentGaussian::from_complex(&mu, &s).unwrap();
        let p = decode(&g, &w, 0.02, 0.0).unwrap();
        let mut t = Tape::new();
        let wl = Array2::from_shape_fn((5, 2 * r), |(i, k)| {
            let z = w[(i, k / 2)];
            if k % 2 == 0 {
                z.re
            } else {
                z.im
            }
        });
        let wv = t.constant(wl);
        let mv = t.row(&g.mean);
        let cv = t.constant(lift_from_complex_cov(&s));
        let sv = t.scalar_const(0.02);
        let d = decode_tape(&mut t, wv, mv, cv, sv);
        for i in 0..5 {
            assert!((t.value(d.mean_re)[[0, i]] - p.mean[i].re).abs() < 1e-12);
            assert!((t.value(d.mean_im)[[0, i]] - p.mean[i].im).abs() < 1e-12);
            assert!((t.value(d.var)[[0, i]] - p.var[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_is_total_and_deterministic() {
        let m = small_model(2, true);
        let s = grid(4);
        let zero = Field::new(vec![Complex64::new(0.0, 0.0); 16], 0.0);
        let (p1, e1, q1) = m.step(&zero, &s).unwrap();
        assert!(p1.mean.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert!(p1.var.iter().all(|&v| v > 0.0 && v.is_finite()));
        let (p2, e2, q2) = m.step(&zero, &s).unwrap();
        assert_eq!((p1, e1, q1), (p2, e2, q2));
    }

    fn frames(n: usize, m: usize) -> Vec<Field> {
        (0..n)
            .map(|k| {
                Field::from_real(
                    &(0..m).map(|i| ((i + 3 * k) as f64 * 0.4).sin()).collect::<Vec<_>>(),
                    k as f64 * 0.1,
                )
            })
            .collect()
    }

    #[test]
    fn rollout_modes_agree_on_first_step() {
        let m = small_model(2, true);
        let s = grid(3);
        let obs = frames(4, 9);
        let tf = m.rollout(&obs, &s, 1, RolloutMode::TeacherForced, None).unwrap();
        let ar = m.rollout(&obs, &s, 1, RolloutMode::Autoregressive, None).unwrap();
        assert_eq!(tf, ar);
        let tf3 = m.rollout(&obs, &s, 3, RolloutMode::TeacherForced, None).unwrap();
        let ar3 = m.rollout(&obs, &s, 3, RolloutMode::Autoregressive, None).unwrap();
        assert_eq!(tf3.predictions.len(), 3);
        assert_ne!(tf3.predictions[2], ar3.predictions[2]);
        for k in 0..3 {
            assert_eq!(tf3.latents_encoded[k], m.encode(&obs[k], &s).unwrap());
        }
        assert!(m.rollout(&obs, &s, 4, RolloutMode::TeacherForced, None).is_err());
        assert!(m.rollout(&obs[..1], &s, 6, RolloutMode::Autoregressive, None).is_ok());
    }

    #[test]
    fn reconstruction_is_grid_free() {
        let m = small_model(2, true);
        let s = grid(5);
        let obs = frames(2, 25);
        let (pred, _, prop) = m.step(&obs[0], &s).unwrap();
        let at_sensors = m.reconstruct_at(&prop, &s, pred.time).unwrap();
        assert_eq!(at_sensors, pred);

        // A 9x9 grid contains the 5x5 grid at every other node.
        let fine = grid(9);
        let pf = m.reconstruct_at(&prop, &fine, pred.time).unwrap();
        assert!(pf.mean.iter().all(|z| z.re.is_finite()));
        for i in 0..5 {
            for j in 0..5 {
                let a = pf.mean[(2 * i) * 9 + 2 * j];
                let b = pred.mean[i * 5 + j];
                assert!((a - b).norm() < 1e-12);
            }
        }
        let one = CoordSet::new(2, vec![0.1, -0.3]).unwrap();
        assert_eq!(m.reconstruct_at(&prop, &one, 0.0).unwrap().len(), 1);
    }
}
