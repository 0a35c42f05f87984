//! Euler–Maruyama integration of the latent SDE with first-order
//! covariance transport.
//!
//! Latent Gaussians are stored in the real lift: a complex `r`-vector is a
//! real `2r`-vector with interleaved `(re, im)` coordinates, and its
//! covariance is the `2r x 2r` covariance of those coordinates. Complex
//! circular noise `CN(0, s I)` lifts to `N(0, s/2 I)`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::autodiff::{BoundParams, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, complex_cov_from_lift, lift_from_complex_cov};
use crate::nets::{self, lift_row, unlift_row, NetConfig};
use crate::rng;
use crate::types::{ComplexMat, ComplexVec};

/// Gaussian over the latent mode coefficients, in the real lift.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    /// Interleaved `(re, im)` mean, length `2r`.
    pub mean: Vec<f64>,
    /// Covariance of the lifted coordinates, `2r x 2r`.
    pub cov: Array2<f64>,
}

impl LatentGaussian {
    /// Independent lifted coordinates with the given variances.
    pub fn diagonal(mean: Vec<f64>, var: &[f64]) -> Self {
        let n = mean.len();
        let mut cov = Array2::zeros((n, n));
        for (i, v) in var.iter().enumerate() {
            cov[[i, i]] = *v;
        }
        LatentGaussian { mean, cov }
    }

    /// From a complex mean and circular complex covariance `E[z z^H]`.
    pub fn from_complex(mean: &[Complex64], cov: &ComplexMat) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::Shape("covariance does not match mean".into()));
        }
        Ok(LatentGaussian {
            mean: lift_row(mean),
            cov: lift_from_complex_cov(cov),
        })
    }

    /// Point mass at `mean`.
    pub fn point(mean: &[Complex64]) -> Self {
        let n = 2 * mean.len();
        LatentGaussian {
            mean: lift_row(mean),
            cov: Array2::zeros((n, n)),
        }
    }

    pub fn rank(&self) -> usize {
        self.mean.len() / 2
    }

    /// Lifted dimension `2r`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn complex_mean(&self) -> ComplexVec {
        unlift_row(&self.mean)
    }

    pub fn complex_cov(&self) -> ComplexMat {
        complex_cov_from_lift(&self.cov)
    }

    pub fn diag_var(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.cov[[i, i]]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

/// Substep configuration for one observation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeConfig {
    pub tau: f64,
    pub substeps: usize,
    pub delta_t: f64,
}

impl SdeConfig {
    /// `substeps` steps of `dt / substeps`.
    pub fn for_interval(tau: f64, substeps: usize, dt: f64) -> Result<Self> {
        let cfg = SdeConfig {
            tau,
            substeps,
            delta_t: dt / substeps.max(1) as f64,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config("at least one substep is required".into()));
        }
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(Error::Config(format!("substep {} must be positive", self.delta_t)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("diffusion scale {} must be >= 0", self.tau)));
        }
        Ok(())
    }

    /// Checks `P * delta_t == dt`.
    pub fn check_interval(&self, dt: f64) -> Result<()> {
        let h = self.substeps as f64 * self.delta_t;
        if (h - dt).abs() > 1e-9 * dt.abs() {
            return Err(Error::Config(format!(
                "{} substeps of {} do not cover the interval {dt}",
                self.substeps, self.delta_t
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.substeps as f64 * self.delta_t
    }
}

/// Records the uncertainty-propagating Euler–Maruyama recursion.
///
/// Per substep: `mu += dt (Lambda mu + f(mu, t_p))`, `A = I + dt J`,
/// `C = A C A^T + (dt tau^2 / 2) I`, then symmetrize and, only when a
/// negative eigenvalue appears, project onto the PSD cone. The projection
/// enters the tape as a constant offset, so gradients flow through the
/// unprojected covariance.
#[allow(clippy::too_many_arguments)]
pub fn propagate_tape(
    t: &mut Tape,
    p: &BoundParams,
    mean: Var,
    cov: Var,
    t0: f64,
    tau2: Var,
    substeps: usize,
    delta_t: f64,
    time_scale: f64,
) -> Result<(Var, Var)> {
    let n = t.shape(mean).1;
    let eye = t.constant(Array2::eye(n));
    let mut mu = mean;
    let mut c = cov;
    for step in 0..substeps {
        let tp = t0 + step as f64 * delta_t;
        let (d, j) = nets::drift_with_jacobian(t, p, mu, tp, time_scale);
        if !t.value(d).iter().chain(t.value(j).iter()).all(|v| v.is_finite()) {
            return Err(Error::Integration {
                substep: step,
                reason: "non-finite drift or Jacobian".into(),
            });
        }
        let dd = t.scale(d, delta_t);
        mu = t.add(mu, dd);
        let jd = t.scale(j, delta_t);
        let a = t.add(eye, jd);
        let ac = t.matmul(a, c);
        let at = t.transpose(a);
        let aca = t.matmul(ac, at);
        let q = t.mul_scalar_var(eye, tau2);
        let q = t.scale(q, 0.5 * delta_t);
        let next = t.add(aca, q);
        let nt = t.transpose(next);
        let sym = t.add(next, nt);
        c = t.scale(sym, 0.5);
        if !t.value(c).iter().all(|v| v.is_finite()) {
            return Err(Error::Integration {
                substep: step,
                reason: "non-finite covariance".into(),
            });
        }
        if linalg::min_symmetric_eigenvalue(t.value(c)) < 0.0 {
            let cv = t.value(c);
            let delta = linalg::symmetric_psd_project(cv) - cv;
            c = t.straight_through(c, &delta);
        }
    }
    Ok((mu, c))
}

fn check_rank(g: &LatentGaussian, cfg: &NetConfig) -> Result<()> {
    if g.rank() != cfg.rank || g.cov.dim() != (g.dim(), g.dim()) {
        return Err(Error::Shape(format!(
            "latent of rank {} for a model of rank {}",
            g.rank(),
            cfg.rank
        )));
    }
    Ok(())
}

/// Advances `g` by one interval of `cfg.substeps` substeps from time `t0`.
pub fn propagate(
    g: &LatentGaussian,
    params: &ParamStore,
    net: &NetConfig,
    t0: f64,
    cfg: &SdeConfig,
) -> Result<LatentGaussian> {
    cfg.validate()?;
    check_rank(g, net)?;
    let mut t = Tape::new();
    let p = params.bind_const(&mut t);
    let mean = t.row(&g.mean);
    let cov = t.constant(g.cov.clone());
    let tau2 = t.scalar_const(cfg.tau * cfg.tau);
    let (mu, c) = propagate_tape(
        &mut t,
        &p,
        mean,
        cov,
        t0,
        tau2,
        cfg.substeps,
        cfg.delta_t,
        net.time_scale,
    )?;
    Ok(LatentGaussian {
        mean: t.value(mu).row(0).to_vec(),
        cov: t.value(c).clone(),
    })
}

/// Exact `2r x 2r` Jacobian of the lifted drift at `phi`.
pub fn jacobian_real_lift(
    params: &ParamStore,
    net: &NetConfig,
    phi: &[Complex64],
    time: f64,
) -> Result<Array2<f64>> {
    if phi.len() != net.rank {
        return Err(Error::Shape(format!("latent of length {} for rank {}", phi.len(), net.rank)));
    }
    let mut t = Tape::new();
    let p = params.bind_const(&mut t);
    let mu = t.row(&lift_row(phi));
    let (_, j) = nets::drift_with_jacobian(&mut t, &p, mu, time, net.time_scale);
    Ok(t.value(j).clone())
}

/// Symmetric square root factor `L` with `L L^T = C` for PSD `C`.
pub(crate) fn psd_sqrt(c: &Array2<f64>) -> Array2<f64> {
    let n = c.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (c[[i, j]] + c[[j, i]]));
    let e = nalgebra::SymmetricEigen::new(m);
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let s = e.eigenvalues[k].max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += e.eigenvectors[(i, k)] * s * e.eigenvectors[(j, k)];
            }
        }
    }
    out
}

fn lifted_drift(params: &ParamStore, net: &NetConfig, x: &[f64], time: f64) -> Vec<f64> {
    let mut t = Tape::new();
    let p = params.bind_const(&mut t);
    let mu = t.row(x);
    let d = nets::drift_forward(&mut t, &p, mu, time, net.time_scale);
    t.value(d).row(0).to_vec()
}

/// One sampled latent trajectory: `phi_0 ~ g0`, then `intervals` observation
/// intervals of Euler–Maruyama substeps with complex standard normal
/// increments. Returns the state at the end of each interval (the initial
/// sample first, so the output has `intervals + 1` entries).
pub fn sample_trajectory(
    g0: &LatentGaussian,
    params: &ParamStore,
    net: &NetConfig,
    t0: f64,
    cfg: &SdeConfig,
    intervals: usize,
    seed: u64,
) -> Result<Vec<ComplexVec>> {
    cfg.validate()?;
    check_rank(g0, net)?;
    let n = g0.dim();
    let l = psd_sqrt(&g0.cov);
    let eps = rng::normals(&mut rng::stream(seed, 0, rng::site::LATENT_SAMPLE), n);
    let mut x: Vec<f64> = (0..n)
        .map(|i| g0.mean[i] + (0..n).map(|j| l[[i, j]] * eps[j]).sum::<f64>())
        .collect();
    let mut out = vec![unlift_row(&x)];
    let mut noise = rng::stream(seed, 0, rng::site::DIFFUSION);
    let scale = cfg.tau * (cfg.delta_t * 0.5).sqrt();
    let mut time = t0;
    for k in 0..intervals {
        for step in 0..cfg.substeps {
            let d = lifted_drift(params, net, &x, time);
            for i in 0..n {
                x[i] += cfg.delta_t * d[i] + scale * rng::standard_normal(&mut noise);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration {
                    substep: k * cfg.substeps + step,
                    reason: "non-finite sample".into(),
                });
            }
            time += cfg.delta_t;
        }
        out.push(unlift_row(&x));
    }
    Ok(out)
}

/// One pathwise sample at the end of a single interval.
pub fn sample_path(
    g0: &LatentGaussian,
    params: &ParamStore,
    net: &NetConfig,
    t0: f64,
    cfg: &SdeConfig,
    seed: u64,
) -> Result<ComplexVec> {
    let mut traj = sample_trajectory(g0, params, net, t0, cfg, 1, seed)?;
    Ok(traj.pop().expect("two entries"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_params, EigenParams, PosEncConfig};

    fn cfg(rank: usize) -> NetConfig {
        NetConfig {
            rank,
            posenc: PosEncConfig { bands: 1, dim: 2 },
            mode_hidden: vec![4],
            enc_hidden: vec![4],
            drift_hidden: vec![6, 6],
            time_scale: 1.0,
        }
    }

    fn linear(lambdas: &[Complex64]) -> (ParamStore, NetConfig) {
        let net = cfg(lambdas.len());
        let mut p = init_params(&net, 11).unwrap();
        EigenParams {
            alphas: lambdas.iter().map(|l| l.re).collect(),
            betas: lambdas.iter().map(|l| l.im).collect(),
        }
        .write_into(&mut p)
        .unwrap();
        (p, net)
    }

    fn nonlinear(lambdas: &[Complex64]) -> (ParamStore, NetConfig) {
        let (mut p, net) = linear(lambdas);
        let seg = p.segment("drift.w2").unwrap().clone();
        for (k, v) in p.flat_mut()[seg.offset..seg.offset + seg.len()].iter_mut().enumerate() {
            *v = 0.4 * ((k as f64) * 0.9 + 0.3).sin();
        }
        (p, net)
    }

    #[test]
    fn identity_flow() {
        let (p, net) = linear(&[Complex64::new(0.0, 0.0); 2]);
        let g = LatentGaussian::diagonal(vec![0.3, -0.2, 1.0, 0.5], &[0.1, 0.2, 0.3, 0.4]);
        let out = propagate(&g, &p, &net, 0.0, &SdeConfig::for_interval(0.0, 4, 0.1).unwrap()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn scalar_linear_step() {
        let lam = Complex64::new(-0.3, 1.7);
        let (p, net) = linear(&[lam]);
        let phi = Complex64::new(0.8, -0.4);
        let sc = ComplexMat::from_vec(1, 1, vec![Complex64::new(0.5, 0.0)]).unwrap();
        let g = LatentGaussian::from_complex(&[phi], &sc).unwrap();
        let c = SdeConfig { tau: 0.0, substeps: 1, delta_t: 0.05 };
        let out = propagate(&g, &p, &net, 0.0, &c).unwrap();
        let a = 1.0 + 0.05 * lam;
        let want = a * phi;
        let got = out.complex_mean()[0];
        assert!((got - want).norm() < 1e-14);
        let s = out.complex_cov()[(0, 0)];
        assert!((s.re - a.norm_sqr() * 0.5).abs() < 1e-14 && s.im.abs() < 1e-14);
    }

    #[test]
    fn linear_closed_form_any_substeps() {
        let lams = [Complex64::new(-0.05, 4.0), Complex64::new(-0.2, 1.0)];
        let (p, net) = linear(&lams);
        let phi = [Complex64::new(1.0, 0.5), Complex64::new(-0.3, 0.2)];
        let g = LatentGaussian::from_complex(&phi, &ComplexMat::identity(2)).unwrap();
        let tau = 0.3;
        for substeps in [1, 3, 10] {
            let c = SdeConfig::for_interval(tau, substeps, 0.1).unwrap();
            let out = propagate(&g, &p, &net, 0.0, &c).unwrap();
            let mean = out.complex_mean();
            let cov = out.complex_cov();
            for i in 0..2 {
                let a = 1.0 + c.delta_t * lams[i];
                let want = a.powu(substeps as u32) * phi[i];
                assert!((mean[i] - want).norm() < 1e-13);
                let mut s = 1.0;
                for _ in 0..substeps {
                    s = a.norm_sqr() * s + c.delta_t * tau * tau;
                }
                assert!((cov[(i, i)].re - s).abs() < 1e-13, "{} vs {s}", cov[(i, i)].re);
            }
            // Off-diagonal blocks stay zero: modes evolve independently.
            assert!(cov[(0, 1)].norm() < 1e-14);
        }
    }

    #[test]
    fn jacobian_examples() {
        let (p, net) = linear(&[Complex64::new(0.0, 1.0)]);
        let j = jacobian_real_lift(&p, &net, &[Complex64::new(0.3, 0.1)], 0.0).unwrap();
        assert_eq!(j, ndarray::array![[0.0, -1.0], [1.0, 0.0]]);
        let (p, net) = linear(&[Complex64::new(-0.7, 0.0)]);
        let j = jacobian_real_lift(&p, &net, &[Complex64::new(0.3, 0.1)], 0.0).unwrap();
        assert_eq!(j, ndarray::array![[-0.7, 0.0], [0.0, -0.7]]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (p, net) = nonlinear(&[Complex64::new(-0.1, 2.0), Complex64::new(0.05, -1.0)]);
        let phi = [Complex64::new(0.4, -0.3), Complex64::new(0.9, 0.2)];
        let j = jacobian_real_lift(&p, &net, &phi, 0.7).unwrap();
        let x0 = lift_row(&phi);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[i] += h;
            xm[i] -= h;
            let (dp, dm) = (lifted_drift(&p, &net, &xp, 0.7), lifted_drift(&p, &net, &xm, 0.7));
            for k in 0..4 {
                let fd = (dp[k] - dm[k]) / (2.0 * h);
                assert!((fd - j[[k, i]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn covariance_stays_psd() {
        let (p, net) = nonlinear(&[Complex64::new(-3.0, 2.0), Complex64::new(0.5, -1.0)]);
        let mut g = LatentGaussian::diagonal(vec![0.5, 0.1, -0.2, 0.8], &[1e-6, 0.0, 2.0, 1e-3]);
        let c = SdeConfig::for_interval(0.05, 5, 0.5).unwrap();
        for k in 0..20 {
            g = propagate(&g, &p, &net, k as f64 * 0.5, &c).unwrap();
            let sc = g.complex_cov();
            assert!(sc.is_hermitian(1e-12));
            assert!(linalg::min_symmetric_eigenvalue(&g.cov) >= -1e-12);
        }
    }

    #[test]
    fn sample_without_noise_is_the_mean() {
        let (p, net) = nonlinear(&[Complex64::new(-0.1, 2.0)]);
        let g = LatentGaussian::point(&[Complex64::new(0.5, 0.5)]);
        let c = SdeConfig::for_interval(0.0, 5, 0.1).unwrap();
        let s = sample_path(&g, &p, &net, 0.0, &c, 3).unwrap();
        let m = propagate(&g, &p, &net, 0.0, &c).unwrap().complex_mean();
        assert!((s[0] - m[0]).norm() < 1e-14);
        let s2 = sample_path(&g, &p, &net, 0.0, &c, 3).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn covariance_matches_monte_carlo() {
        let lam = Complex64::new(-0.05, 4.0);
        let (p, net) = linear(&[lam]);
        let c = SdeConfig { tau: 0.1, substeps: 10, delta_t: 0.01 };
        let g = LatentGaussian::point(&[Complex64::new(1.0, 0.0)]);
        let prop = propagate(&g, &p, &net, 0.0, &c).unwrap();
        // Oracle: direct Euler–Maruyama on the complex scalar recursion.
        let n = 100_000;
        let mut rng = rng::stream(99, 0, 0);
        let a = 1.0 + c.delta_t * lam;
        let s = c.tau * (c.delta_t / 2.0).sqrt();
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let mut z = Complex64::new(1.0, 0.0);
            for _ in 0..c.substeps {
                let e = Complex64::new(rng::standard_normal(&mut rng), rng::standard_normal(&mut rng));
                z = a * z + s * e;
            }
            xs.push([z.re, z.im]);
        }
        let mean = [
            xs.iter().map(|x| x[0]).sum::<f64>() / n as f64,
            xs.iter().map(|x| x[1]).sum::<f64>() / n as f64,
        ];
        let mut sample = Array2::<f64>::zeros((2, 2));
        for x in &xs {
            for i in 0..2 {
                for j in 0..2 {
                    sample[[i, j]] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let diff = &prop.cov - &sample;
        let rel = diff.iter().map(|v| v * v).sum::<f64>().sqrt()
            / sample.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn sample_mean_matches_propagated_mean() {
        let lam = Complex64::new(-0.05, 4.0);
        let (p, net) = linear(&[lam]);
        let c = SdeConfig { tau: 0.1, substeps: 10, delta_t: 0.01 };
        let g = LatentGaussian::from_complex(
            &[Complex64::new(1.0, -0.5)],
            &ComplexMat::from_vec(1, 1, vec![Complex64::new(0.02, 0.0)]).unwrap(),
        )
        .unwrap();
        let prop = propagate(&g, &p, &net, 0.0, &c).unwrap();
        // Linear drift: sampling can be done in closed loop without the tape.
        let n = 100_000usize;
        let a = 1.0 + c.delta_t * lam;
        let s = c.tau * (c.delta_t / 2.0).sqrt();
        let (mut sr, mut si, mut qr, mut qi) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..n as u64 {
            let l = psd_sqrt(&g.cov);
            let e0 = rng::normals(&mut rng::stream(seed, 0, rng::site::LATENT_SAMPLE), 2);
            let mut z = Complex64::new(
                g.mean[0] + l[[0, 0]] * e0[0] + l[[0, 1]] * e0[1],
                g.mean[1] + l[[1, 0]] * e0[0] + l[[1, 1]] * e0[1],
            );
            let mut noise = rng::stream(seed, 0, rng::site::DIFFUSION);
            for _ in 0..c.substeps {
                let er = rng::standard_normal(&mut noise);
                let ei = rng::standard_normal(&mut noise);
                z = a * z + s * Complex64::new(er, ei);
            }
            sr += z.re;
            si += z.im;
            qr += z.re * z.re;
            qi += z.im * z.im;
        }
        let nf = n as f64;
        let (mr, mi) = (sr / nf, si / nf);
        let (se_r, se_i) = (((qr / nf - mr * mr) / nf).sqrt(), ((qi / nf - mi * mi) / nf).sqrt());
        assert!((mr - prop.mean[0]).abs() < 3.0 * se_r);
        assert!((mi - prop.mean[1]).abs() < 3.0 * se_i);

        // The library sampler agrees with the hand-rolled loop above.
        let one = sample_path(&g, &p, &net, 0.0, &c, 5).unwrap();
        let l = psd_sqrt(&g.cov);
        let e0 = rng::normals(&mut rng::stream(5, 0, rng::site::LATENT_SAMPLE), 2);
        let mut z = Complex64::new(
            g.mean[0] + l[[0, 0]] * e0[0] + l[[0, 1]] * e0[1],
            g.mean[1] + l[[1, 0]] * e0[0] + l[[1, 1]] * e0[1],
        );
        let mut noise = rng::stream(5, 0, rng::site::DIFFUSION);
        for _ in 0..c.substeps {
            let er = rng::standard_normal(&mut noise);
            let ei = rng::standard_normal(&mut noise);
            z = a * z + s * Complex64::new(er, ei);
        }
        assert!((one[0] - z).norm() < 1e-12);
    }

    #[test]
    fn euler_mean_converges_first_order() {
        let (p, net) = nonlinear(&[Complex64::new(-0.5, 2.0), Complex64::new(-0.1, 1.0)]);
        let g = LatentGaussian::point(&[Complex64::new(0.7, 0.1), Complex64::new(-0.4, 0.6)]);
        let run = |sub: usize| {
            propagate(&g, &p, &net, 0.0, &SdeConfig::for_interval(0.0, sub, 0.5).unwrap())
                .unwrap()
                .mean
        };
        let (a, b, c) = (run(8), run(16), run(32));
        let d1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d2: f64 = b.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let order = (d1 / d2).log2();
        assert!(order >= 0.9, "observed order {order}");
    }
}
