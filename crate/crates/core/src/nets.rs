//! Learned function families: positional encoding, the coordinate-based
//! mode network, the set encoder for latent coefficients and the residual
//! drift network.
//!
//! All networks are recorded on a [`Tape`] so the same code serves training
//! (differentiable parameters) and inference (constant parameters).

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{ComplexMat, ComplexVec, CoordSet, Field};

/// Bounds applied to the encoder's log-variance head.
pub const LOGVAR_MIN: f64 = -12.0;
pub const LOGVAR_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosEncConfig {
    /// Frequency bands `L`.
    pub bands: usize,
    /// Coordinate dimension `d`.
    pub dim: usize,
}

impl PosEncConfig {
    pub fn new(bands: usize, dim: usize) -> Result<Self> {
        if bands == 0 || dim == 0 {
            return Err(Error::Config("positional encoding needs L >= 1 and d >= 1".into()));
        }
        Ok(PosEncConfig { bands, dim })
    }

    /// `(2L + 1) * d`: the raw coordinate plus a sine/cosine pair per band.
    pub fn out_len(&self) -> usize {
        (2 * self.bands + 1) * self.dim
    }
}

/// `[s_j, sin(2^0 pi s_j), cos(2^0 pi s_j), ..., sin(2^(L-1) pi s_j), cos(...)]`
/// per dimension, concatenated over dimensions.
pub fn positional_encode(s: &[f64], cfg: &PosEncConfig) -> Result<Vec<f64>> {
    if s.len() != cfg.dim {
        return Err(Error::Shape(format!(
            "coordinate of dimension {} for encoding of dimension {}",
            s.len(),
            cfg.dim
        )));
    }
    let mut out = Vec::with_capacity(cfg.out_len());
    for &x in s {
        out.push(x);
        for l in 0..cfg.bands {
            let arg = (1u64 << l) as f64 * std::f64::consts::PI * x;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    Ok(out)
}

/// Encodes every coordinate of a set; one row per point.
pub fn encode_coords(set: &CoordSet, cfg: &PosEncConfig) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((set.len(), cfg.out_len()));
    for (i, s) in set.iter().enumerate() {
        let row = positional_encode(s, cfg)?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    Ok(out)
}

/// Architecture of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub rank: usize,
    pub posenc: PosEncConfig,
    pub mode_hidden: Vec<usize>,
    pub enc_hidden: Vec<usize>,
    pub drift_hidden: Vec<usize>,
    /// Drift networks see `t / time_scale`.
    pub time_scale: f64,
}

impl NetConfig {
    pub fn new(rank: usize) -> Self {
        NetConfig {
            rank,
            posenc: PosEncConfig { bands: 6, dim: 2 },
            mode_hidden: vec![128; 4],
            enc_hidden: vec![64, 64],
            drift_hidden: vec![64, 64],
            time_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        if self.enc_hidden.is_empty() {
            return Err(Error::Config("encoder needs at least one hidden layer".into()));
        }
        if !(self.time_scale > 0.0) {
            return Err(Error::Config("time scale must be positive".into()));
        }
        PosEncConfig::new(self.posenc.bands, self.posenc.dim).map(|_| ())
    }

    fn lift(&self) -> usize {
        2 * self.rank
    }
}

fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a))
}

fn add_mlp<R: Rng>(
    p: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    sizes: &[usize],
    zero_last: bool,
) -> Result<()> {
    let n = sizes.len() - 1;
    for l in 0..n {
        let w = if zero_last && l == n - 1 {
            Array2::zeros((sizes[l], sizes[l + 1]))
        } else {
            xavier(rng, sizes[l], sizes[l + 1])
        };
        p.add(&format!("{prefix}.w{l}"), w)?;
        p.add(&format!("{prefix}.b{l}"), Array2::zeros((1, sizes[l + 1])))?;
    }
    Ok(())
}

/// Initial log variances of the process (`tau^2`) and observation noise.
pub const INIT_LOG_TAU2: f64 = -4.605_170_185_988_091; // ln 1e-2
pub const INIT_LOG_SIGMA2: f64 = -4.605_170_185_988_091;
pub const INIT_ENC_LOGVAR: f64 = -4.605_170_185_988_091;

/// Fresh parameters for `cfg` under `seed`.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, 0, rng::site::INIT);
    let mut p = ParamStore::new();
    let e = cfg.posenc.out_len();
    let lift = cfg.lift();

    let mut sizes = vec![e];
    sizes.extend(&cfg.mode_hidden);
    sizes.push(lift);
    add_mlp(&mut p, &mut rng, "mode", &sizes, false)?;

    let mut sizes = vec![2 + e];
    sizes.extend(&cfg.enc_hidden);
    add_mlp(&mut p, &mut rng, "enc", &sizes, false)?;
    let h = *cfg.enc_hidden.last().expect("validated");
    p.add("enc.mu.w", xavier(&mut rng, h, lift))?;
    p.add("enc.mu.b", Array2::zeros((1, lift)))?;
    p.add("enc.lv.w", xavier(&mut rng, h, lift) * 0.1)?;
    p.add("enc.lv.b", Array2::from_elem((1, lift), INIT_ENC_LOGVAR))?;
    // Mixing of the mode projection `mean_i conj(W(s_i)) y_i`.
    p.add("enc.proj", Array2::eye(lift))?;

    let mut sizes = vec![lift + 1];
    sizes.extend(&cfg.drift_hidden);
    sizes.push(lift);
    add_mlp(&mut p, &mut rng, "drift", &sizes, true)?;

    let mut eig = Array2::zeros((1, lift));
    for i in 0..cfg.rank {
        eig[[0, 2 * i]] = rng.random_range(-0.1..0.0);
        eig[[0, 2 * i + 1]] = rng.random_range(0.0..5.0);
    }
    p.add("eig", eig)?;
    p.add("log_tau2", Array2::from_elem((1, 1), INIT_LOG_TAU2))?;
    p.add("log_sigma2", Array2::from_elem((1, 1), INIT_LOG_SIGMA2))?;
    Ok(p)
}

fn n_layers(p: &BoundParams, prefix: &str) -> usize {
    (0..).take_while(|l| p.try_get(&format!("{prefix}.w{l}")).is_some()).count()
}

/// Dense tanh network; the last layer is linear unless `tanh_last`.
fn mlp(t: &mut Tape, p: &BoundParams, prefix: &str, x: Var, tanh_last: bool) -> Var {
    let n = n_layers(p, prefix);
    let mut h = x;
    for l in 0..n {
        let z = t.matmul(h, p.get(&format!("{prefix}.w{l}")));
        let z = t.add_row(z, p.get(&format!("{prefix}.b{l}")));
        h = if l + 1 < n || tanh_last { t.tanh(z) } else { z };
    }
    h
}

/// Mode values at encoded coordinates: `m x 2r`, columns interleave
/// `(Re W_j, Im W_j)`.
pub fn mode_forward(t: &mut Tape, p: &BoundParams, coords: Var) -> Var {
    mlp(t, p, "mode", coords, false)
}

/// Latent mean and (clamped) log-variance, both `1 x 2r`.
///
/// `values` is `m x 2` (real, imaginary); `coords` is the encoded sensor
/// set and `modes` the mode values there (`m x 2r`). The mean adds a
/// per-sensor MLP feature pool and a learned mixing of the projection
/// `mean_i conj(W(s_i)) y_i`. Both are means over sensors, so the output
/// does not depend on sensor order or on uniform duplication of the set.
pub fn encoder_forward(t: &mut Tape, p: &BoundParams, values: Var, coords: Var, modes: Var) -> (Var, Var) {
    let x = t.concat_cols(&[values, coords]);
    let h = mlp(t, p, "enc", x, true);
    let pooled = t.mean_rows(h);
    let mu = t.matmul(pooled, p.get("enc.mu.w"));
    let mu = t.add_row(mu, p.get("enc.mu.b"));

    let (m, lift) = t.shape(modes);
    let re = t.slice_cols(values, 0, 1);
    let im = t.slice_cols(values, 1, 1);
    let wt = t.transpose(modes);
    let a = t.matmul(wt, re);
    let a = t.transpose(a);
    let b = t.matmul(wt, im);
    let b = t.transpose(b);
    // conj(w) y in the lift: (a_re + b_im, b_re - a_im) per mode.
    let sign = t.constant(Array2::from_shape_fn((1, lift), |(_, j)| if j % 2 == 0 { 1.0 } else { -1.0 }));
    let a = t.mul(a, sign);
    let b = t.swap_pairs(b);
    let proj = t.add(a, b);
    let proj = t.scale(proj, 1.0 / m as f64);
    let read = t.matmul(proj, p.get("enc.proj"));
    let mu = t.add(mu, read);

    let lv = t.matmul(pooled, p.get("enc.lv.w"));
    let lv = t.add_row(lv, p.get("enc.lv.b"));
    let lv = t.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
    (mu, lv)
}

fn drift_input(t: &mut Tape, mu: Var, time: f64, time_scale: f64) -> Var {
    let tv = t.scalar_const(time / time_scale);
    t.concat_cols(&[mu, tv])
}

/// Residual network output `f_theta(phi, t)` (`1 x 2r`).
pub fn residual_forward(t: &mut Tape, p: &BoundParams, mu: Var, time: f64, time_scale: f64) -> Var {
    let x = drift_input(t, mu, time, time_scale);
    mlp(t, p, "drift", x, false)
}

/// Total drift `Lambda phi + f_theta(phi, t)` in the real lift.
pub fn drift_forward(t: &mut Tape, p: &BoundParams, mu: Var, time: f64, time_scale: f64) -> Var {
    let lin = t.cmul(p.get("eig"), mu);
    let res = residual_forward(t, p, mu, time, time_scale);
    t.add(lin, res)
}

/// Both the total drift and its exact `2r x 2r` Jacobian with respect to
/// the real-lifted latent, `J[j][i] = d drift_j / d phi_i`.
pub fn drift_with_jacobian(
    t: &mut Tape,
    p: &BoundParams,
    mu: Var,
    time: f64,
    time_scale: f64,
) -> (Var, Var) {
    let lift = t.shape(mu).1;
    let x = drift_input(t, mu, time, time_scale);
    let n = n_layers(p, "drift");
    let mut h = x;
    // Chain of d(layer output)/d(latent input) in row convention
    // (rows index inputs, columns index outputs).
    let mut chain: Option<Var> = None;
    for l in 0..n {
        let w = p.get(&format!("drift.w{l}"));
        let z = t.matmul(h, w);
        let z = t.add_row(z, p.get(&format!("drift.b{l}")));
        let wl = match chain {
            None => t.slice_rows(w, 0, lift),
            Some(c) => t.matmul(c, w),
        };
        if l + 1 < n {
            let a = t.tanh(z);
            let sq = t.square(a);
            let neg = t.scale(sq, -1.0);
            let d = t.add_const(neg, 1.0);
            chain = Some(t.mul_row(wl, d));
            h = a;
        } else {
            chain = Some(wl);
            h = z;
        }
    }
    let lin = t.cmul(p.get("eig"), mu);
    let drift = t.add(lin, h);
    let jf = t.transpose(chain.expect("drift has layers"));
    let lam = t.lift_block_diag(p.get("eig"));
    let jac = t.add(lam, jf);
    (drift, jac)
}

/// Continuous-time eigenvalues `lambda_i = alpha_i + j beta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenParams {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl EigenParams {
    pub fn from_params(p: &ParamStore) -> Result<Self> {
        let e = p
            .get("eig")
            .ok_or_else(|| Error::Format("parameters have no `eig` segment".into()))?;
        let r = e.ncols() / 2;
        Ok(EigenParams {
            alphas: (0..r).map(|i| e[[0, 2 * i]]).collect(),
            betas: (0..r).map(|i| e[[0, 2 * i + 1]]).collect(),
        })
    }

    pub fn lambdas(&self) -> ComplexVec {
        self.alphas
            .iter()
            .zip(&self.betas)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect()
    }

    pub fn write_into(&self, p: &mut ParamStore) -> Result<()> {
        let mut e = p
            .get_mut("eig")
            .ok_or_else(|| Error::Format("parameters have no `eig` segment".into()))?;
        if e.ncols() != 2 * self.alphas.len() {
            return Err(Error::Shape("eigenvalue count differs from rank".into()));
        }
        for i in 0..self.alphas.len() {
            e[[0, 2 * i]] = self.alphas[i];
            e[[0, 2 * i + 1]] = self.betas[i];
        }
        Ok(())
    }
}

pub(crate) fn lift_row(z: &[Complex64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub(crate) fn unlift_row(v: &[f64]) -> ComplexVec {
    v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub(crate) fn field_matrix(values: &[Complex64]) -> Array2<f64> {
    Array2::from_shape_fn((values.len(), 2), |(i, k)| {
        if k == 0 {
            values[i].re
        } else {
            values[i].im
        }
    })
}

pub(crate) fn mode_matrix_from_lift(w: &Array2<f64>) -> ComplexMat {
    ComplexMat::from_fn(w.nrows(), w.ncols() / 2, |i, j| {
        Complex64::new(w[[i, 2 * j]], w[[i, 2 * j + 1]])
    })
}

/// `W_psi(gamma(s_i))` for every point of `set`, as an `m x r` matrix.
pub fn eval_modes(params: &ParamStore, cfg: &NetConfig, set: &CoordSet) -> Result<ComplexMat> {
    let mut t = Tape::new();
    let p = params.bind_const(&mut t);
    let enc = t.constant(encode_coords(set, &cfg.posenc)?);
    let w = mode_forward(&mut t, &p, enc);
    Ok(mode_matrix_from_lift(t.value(w)))
}

/// Diagonal Gaussian over the latent coefficients from one field.
pub fn encode_latent(
    params: &ParamStore,
    cfg: &NetConfig,
    y: &Field,
    set: &CoordSet,
) -> Result<crate::sde::LatentGaussian> {
    if set.is_empty() {
        return Err(Error::Shape("cannot encode from an empty sensor set".into()));
    }
    if y.len() != set.len() {
        return Err(Error::Shape(format!(
            "field of {} values over {} sensors",
            y.len(),
            set.len()
        )));
    }
    let mut t = Tape::new();
    let p = params.bind_const(&mut t);
    let vals = t.constant(field_matrix(&y.values));
    let enc = t.constant(encode_coords(set, &cfg.posenc)?);
    let modes = mode_forward(&mut t, &p, enc);
    let (mu, lv) = encoder_forward(&mut t, &p, vals, enc, modes);
    let mean = t.value(mu).row(0).to_vec();
    let var: Vec<f64> = t.value(lv).row(0).iter().map(|v| v.exp()).collect();
    Ok(crate::sde::LatentGaussian::diagonal(mean, &var))
}

/// `Lambda phi + f_theta(phi, t)` for a complex latent.
pub fn drift(params: &ParamStore, cfg: &NetConfig, phi: &[Complex64], time: f64) -> Result<ComplexVec> {
    if phi.len() != cfg.rank {
        return Err(Error::Shape(format!("latent of length {} for rank {}", phi.len(), cfg.rank)));
    }
    let mut t = Tape::new();
    let p = params.bind_const(&mut t);
    let mu = t.row(&lift_row(phi));
    let d = drift_forward(&mut t, &p, mu, time, cfg.time_scale);
    Ok(unlift_row(t.value(d).as_slice().expect("contiguous")))
}
