//! Training objective: Gaussian reconstruction likelihood, a KL prior on
//! the encoder output, and consistency between encoded and propagated
//! latents. All quantities use the real lift and mean reductions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{decode_tape, diag_cov_tape, FieldPrediction, RolloutMode, TapeModel};
use crate::nets;
use crate::sde::{propagate_tape, LatentGaussian};
use crate::types::Field;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;
/// Variance floor inside KL terms.
const VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_recon: f64,
    pub w_kl: f64,
    pub w_cons: f64,
    pub kappa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_recon: 3.0,
            w_kl: 1e-3,
            w_cons: 0.15,
            kappa: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_recon, self.w_kl, self.w_cons, self.kappa];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Mean Gaussian negative log-likelihood of `y` under `pred`.
///
/// Real-valued data compare the real part against the full variance.
/// Complex data compare real and imaginary residuals each against half of
/// it; the per-point value is the sum of the two.
pub fn recon_nll(y: &Field, pred: &FieldPrediction, real_valued: bool) -> Result<f64> {
    if y.len() != pred.len() {
        return Err(Error::Shape(format!("{} values against {} predictions", y.len(), pred.len())));
    }
    assert!(pred.var.iter().all(|&v| v > 0.0), "predictive variance must be positive");
    let total: f64 = y
        .values
        .iter()
        .zip(&pred.mean)
        .zip(&pred.var)
        .map(|((y, m), &v)| {
            let r = y - m;
            if real_valued {
                0.5 * (v.ln() + r.re * r.re / v + LOG_2PI)
            } else {
                let h = 0.5 * v;
                0.5 * (2.0 * h.ln() + r.norm_sqr() / h + 2.0 * LOG_2PI)
            }
        })
        .sum();
    Ok(total / y.len().max(1) as f64)
}

/// `-1/2 sum_i (1 + log s_i - m_i^2 - s_i)` over the lifted coordinates,
/// using the diagonal of the covariance.
pub fn latent_kl(g: &LatentGaussian) -> f64 {
    g.mean
        .iter()
        .zip(g.diag_var())
        .map(|(m, s)| {
            let s = s.max(VAR_FLOOR);
            -0.5 * (1.0 + s.ln() - m * m - s)
        })
        .sum()
}

/// `MSE(mu_enc, mu_prop) + kappa KL(N(mu_enc, s_enc) || N(mu_prop, s_prop))`
/// with diagonal variances; the propagated covariance contributes only its
/// diagonal.
pub fn consistency(enc: &LatentGaussian, prop: &LatentGaussian, kappa: f64) -> Result<f64> {
    if enc.dim() != prop.dim() {
        return Err(Error::Shape("latents of different rank".into()));
    }
    let n = enc.dim() as f64;
    let (se, sp) = (enc.diag_var(), prop.diag_var());
    let mut mse = 0.0;
    let mut kl = 0.0;
    for i in 0..enc.dim() {
        let d = enc.mean[i] - prop.mean[i];
        mse += d * d / n;
        let (a, b) = (se[i].max(VAR_FLOOR), sp[i] + VAR_FLOOR);
        kl += 0.5 * ((b / a).ln() + (a + d * d) / b - 1.0);
    }
    Ok(mse + kappa * kl)
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon: f64,
    pub kl: f64,
    pub cons: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.w_recon * self.recon + w.w_kl * self.kl + w.w_cons * self.cons
    }
}

/// Tape NLL; `y_re`/`y_im` are `1 x m` constants.
pub fn recon_nll_tape(t: &mut Tape, y_re: Var, y_im: Var, mean_re: Var, mean_im: Var, var: Var, real_valued: bool) -> Var {
    let r = t.sub(y_re, mean_re);
    let r2 = t.square(r);
    if real_valued {
        let inv = t.recip(var);
        let q = t.mul(r2, inv);
        let lv = t.log(var);
        let s = t.add(lv, q);
        let s = t.add_const(s, LOG_2PI);
        let m = t.mean(s);
        t.scale(m, 0.5)
    } else {
        let ri = t.sub(y_im, mean_im);
        let ri2 = t.square(ri);
        let num = t.add(r2, ri2);
        let h = t.scale(var, 0.5);
        let inv = t.recip(h);
        let q = t.mul(num, inv);
        let lh = t.log(h);
        let lh2 = t.scale(lh, 2.0);
        let s = t.add(lh2, q);
        let s = t.add_const(s, 2.0 * LOG_2PI);
        let m = t.mean(s);
        t.scale(m, 0.5)
    }
}

/// Tape KL of a diagonal Gaussian given its mean and log-variance rows.
pub fn latent_kl_tape(t: &mut Tape, mu: Var, logvar: Var) -> Var {
    let m2 = t.square(mu);
    let v = t.exp(logvar);
    let a = t.sub(logvar, m2);
    let a = t.sub(a, v);
    let a = t.add_const(a, 1.0);
    let s = t.sum(a);
    t.scale(s, -0.5)
}

fn diag_tape(t: &mut Tape, cov: Var) -> Var {
    let n = t.shape(cov).0;
    let eye = t.constant(Array2::eye(n));
    let d = t.mul(cov, eye);
    t.sum_rows(d)
}

/// Tape consistency between an encoded latent (mean, log-variance) and a
/// propagated one (mean, full covariance).
pub fn consistency_tape(t: &mut Tape, mu_e: Var, lv_e: Var, mu_p: Var, cov_p: Var, kappa: f64) -> Var {
    let n = t.shape(mu_e).1 as f64;
    let d = t.sub(mu_e, mu_p);
    let d2 = t.square(d);
    let sd = t.sum(d2);
    let mse = t.scale(sd, 1.0 / n);
    if kappa == 0.0 {
        return mse;
    }
    let sp = diag_tape(t, cov_p);
    let sp = t.add_const(sp, VAR_FLOOR);
    let se = t.exp(lv_e);
    let lsp = t.log(sp);
    let ratio = t.sub(lsp, lv_e);
    let num = t.add(se, d2);
    let inv = t.recip(sp);
    let q = t.mul(num, inv);
    let k = t.add(ratio, q);
    let k = t.add_const(k, -1.0);
    let ks = t.sum(k);
    let kl = t.scale(ks, 0.5 * kappa);
    t.add(mse, kl)
}

/// One training sequence at the sensors, in network units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// `m x 2` (real, imaginary) per frame.
    pub values: Vec<Array2<f64>>,
    pub times: Vec<f64>,
}

impl Sequence {
    pub fn from_fields(fields: &[Field], scale: f64) -> Sequence {
        Sequence {
            values: fields
                .iter()
                .map(|f| nets::field_matrix(&f.values) / scale)
                .collect(),
            times: fields.iter().map(|f| f.time).collect(),
        }
    }
}

/// Fixed inputs of the objective.
#[derive(Debug, Clone)]
pub struct LossContext {
    /// Positional encoding of the sensor coordinates, `m x E`.
    pub coords: Array2<f64>,
    pub substeps: usize,
    pub delta_t: f64,
    pub time_scale: f64,
    pub real_valued: bool,
    pub weights: LossWeights,
}

/// Loss nodes (all scalars).
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub cons: Var,
}

impl LossVars {
    pub fn terms(&self, t: &Tape) -> LossTerms {
        LossTerms {
            recon: t.scalar(self.recon),
            kl: t.scalar(self.kl),
            cons: t.scalar(self.cons),
        }
    }
}

/// Weighted objective over a batch of sequences, recorded on `t`.
///
/// Every transition `k -> k+1` encodes an input frame, propagates it one
/// interval and scores the decoded prediction against frame `k+1`. The
/// input is the observed frame under teacher forcing; autoregressive mode
/// uses the observed first frame and afterwards the predicted mean at the
/// sensors. The KL prior applies to each encoded input and the consistency
/// target is the encoding of the observed frame `k+1`. Terms are averaged
/// over all transitions of the batch.
pub fn total_loss(
    t: &mut Tape,
    p: &BoundParams,
    batch: &[Sequence],
    mode: RolloutMode,
    ctx: &LossContext,
) -> Result<LossVars> {
    let transitions: usize = batch.iter().map(|s| s.values.len().saturating_sub(1)).sum();
    if transitions == 0 {
        return Err(Error::Config("batch has no transitions".into()));
    }
    let tm = TapeModel::record(t, p, &ctx.coords);
    let mut recon = Vec::with_capacity(transitions);
    let mut kl = Vec::with_capacity(transitions);
    let mut cons = Vec::with_capacity(transitions);
    for seq in batch {
        let h = seq.values.len();
        let truth: Vec<Var> = seq.values.iter().map(|v| t.constant(v.clone())).collect();
        let encoded: Vec<(Var, Var)> = truth
            .iter()
            .map(|&v| nets::encoder_forward(t, p, v, tm.coords, tm.modes))
            .collect();
        let mut input = encoded[0];
        for k in 0..h.saturating_sub(1) {
            if mode == RolloutMode::TeacherForced {
                input = encoded[k];
            }
            let (mu, lv) = input;
            let cov = diag_cov_tape(t, lv);
            let (mu_p, cov_p) = propagate_tape(
                t,
                p,
                mu,
                cov,
                seq.times[k],
                tm.tau2,
                ctx.substeps,
                ctx.delta_t,
                ctx.time_scale,
            )?;
            let dec = decode_tape(t, tm.modes, mu_p, cov_p, tm.sigma2);
            let y = truth[k + 1];
            let y_re = t.slice_cols(y, 0, 1);
            let y_re = t.transpose(y_re);
            let y_im = t.slice_cols(y, 1, 1);
            let y_im = t.transpose(y_im);
            recon.push(recon_nll_tape(t, y_re, y_im, dec.mean_re, dec.mean_im, dec.var, ctx.real_valued));
            kl.push(latent_kl_tape(t, mu, lv));
            let (mu_t, lv_t) = encoded[k + 1];
            cons.push(consistency_tape(t, mu_t, lv_t, mu_p, cov_p, ctx.weights.kappa));
            if mode == RolloutMode::Autoregressive && k + 2 < h {
                let re = t.transpose(dec.mean_re);
                let im = if ctx.real_valued {
                    t.scale(re, 0.0)
                } else {
                    t.transpose(dec.mean_im)
                };
                let fed = t.concat_cols(&[re, im]);
                input = nets::encoder_forward(t, p, fed, tm.coords, tm.modes);
            }
        }
    }
    let avg = |t: &mut Tape, xs: &[Var]| {
        let c = t.concat_cols(xs);
        t.mean(c)
    };
    let recon = avg(t, &recon);
    let kl = avg(t, &kl);
    let cons = avg(t, &cons);
    let w = ctx.weights;
    let a = t.scale(recon, w.w_recon);
    let b = t.scale(kl, w.w_kl);
    let c = t.scale(cons, w.w_cons);
    let ab = t.add(a, b);
    let total = t.add(ab, c);
    Ok(LossVars { total, recon, kl, cons })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{evaluate_with_gradients, finite_difference_check};
    use crate::model::{Model, ModelConfig};
    use crate::nets::{encode_coords, NetConfig, PosEncConfig};
    use crate::rng;
    use crate::types::{linspace_closed, CoordSet};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn pred(mean: Vec<Complex64>, var: Vec<f64>) -> FieldPrediction {
        FieldPrediction { mean, var, time: 0.0 }
    }

    #[test]
    fn nll_examples() {
        let y = Field::from_real(&[0.3, -1.0], 0.0);
        let p = pred(y.values.clone(), vec![1.0, 1.0]);
        assert!((recon_nll(&y, &p, true).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);
        let p = pred(vec![Complex64::new(-0.7, 0.0), Complex64::new(-2.0, 0.0)], vec![1.0, 1.0]);
        assert!((recon_nll(&y, &p, true).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn nll_minimized_at_squared_residual(r in 0.05f64..3.0, f in 0.2f64..5.0) {
            let y = Field::from_real(&[r], 0.0);
            let at = |v: f64| recon_nll(&y, &pred(vec![Complex64::new(0.0, 0.0)], vec![v]), true).unwrap();
            let best = at(r * r);
            prop_assume!((f - 1.0).abs() > 1e-3);
            prop_assert!(at(r * r * f) > best);
        }

        #[test]
        fn kl_is_nonnegative(m in prop::collection::vec(-3.0f64..3.0, 4), lv in prop::collection::vec(-5.0f64..3.0, 4)) {
            let v: Vec<f64> = lv.iter().map(|x| x.exp()).collect();
            let g = LatentGaussian::diagonal(m, &v);
            prop_assert!(latent_kl(&g) >= 0.0);
        }

        #[test]
        fn consistency_is_nonnegative(
            a in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-2.0f64..2.0, 4),
            va in prop::collection::vec(0.01f64..3.0, 4),
            vb in prop::collection::vec(0.01f64..3.0, 4),
        ) {
            let e = LatentGaussian::diagonal(a, &va);
            let p = LatentGaussian::diagonal(b, &vb);
            prop_assert!(consistency(&e, &p, 0.5).unwrap() >= 0.0);
            prop_assert!(consistency(&e, &e, 0.5).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(latent_kl(&LatentGaussian::diagonal(vec![0.0; 4], &[1.0; 4])), 0.0);
        assert!((latent_kl(&LatentGaussian::diagonal(vec![1.0], &[1.0])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let m = [0.4, -0.8, 1.2, 0.1];
        let v = [0.5, 1.7, 0.2, 1.0];
        let g = LatentGaussian::diagonal(m.to_vec(), &v);
        let n = 1_000_000;
        let mut rn = rng::stream(4, 0, 0);
        let mut acc = 0.0;
        for _ in 0..n {
            for i in 0..4 {
                let x = m[i] + v[i].sqrt() * rng::standard_normal(&mut rn);
                let lq = -0.5 * ((x - m[i]).powi(2) / v[i] + v[i].ln());
                let lp = -0.5 * x * x;
                acc += lq - lp;
            }
        }
        let mc = acc / n as f64;
        let exact = latent_kl(&g);
        assert!((mc - exact).abs() / exact < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn consistency_examples() {
        let r = 2;
        let s2 = 0.4;
        let e = LatentGaussian::diagonal(vec![0.0; 2 * r], &[s2; 4]);
        let mut pm = vec![0.0; 2 * r];
        pm[1] = 1.0;
        let p = LatentGaussian::diagonal(pm, &[s2; 4]);
        let kappa = 0.3;
        let want = 1.0 / (2 * r) as f64 + kappa / (2.0 * s2);
        assert!((consistency(&e, &p, kappa).unwrap() - want).abs() < 1e-10);
        assert!((consistency(&e, &p, 0.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn total_is_linear_in_weights() {
        let terms = LossTerms { recon: 1.3, kl: 4.0, cons: 0.2 };
        let w = LossWeights::default();
        let mut w2 = w;
        w2.w_kl *= 3.0;
        assert!((terms.total(&w2) - terms.total(&w) - 2.0 * w.w_kl * terms.kl).abs() < 1e-14);
        let zero = LossWeights { w_recon: 0.0, w_kl: 0.0, w_cons: 0.0, kappa: 0.0 };
        assert_eq!(terms.total(&zero), 0.0);
    }

    fn tape_scalar(f: impl FnOnce(&mut Tape) -> Var) -> f64 {
        let mut t = Tape::new();
        let v = f(&mut t);
        t.scalar(v)
    }

    #[test]
    fn tape_terms_match_value_terms() {
        let e = LatentGaussian::diagonal(vec![0.3, -0.2, 0.5, 0.9], &[0.5, 1.2, 0.1, 2.0]);
        let mut pcov = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.3 + i as f64 * 0.1 } else { 0.01 });
        pcov[[0, 1]] = 0.05;
        pcov[[1, 0]] = 0.05;
        let p = LatentGaussian { mean: vec![0.1, 0.0, -0.4, 1.0], cov: pcov.clone() };
        let lv: Vec<f64> = e.diag_var().iter().map(|v| v.ln()).collect();
        let got = tape_scalar(|t| {
            let a = t.row(&e.mean);
            let b = t.row(&lv);
            let c = t.row(&p.mean);
            let d = t.constant(pcov.clone());
            consistency_tape(t, a, b, c, d, 0.2)
        });
        assert!((got - consistency(&e, &p, 0.2).unwrap()).abs() < 1e-12, "{got} vs {}", consistency(&e, &p, 0.2).unwrap());
        let got = tape_scalar(|t| {
            let a = t.row(&e.mean);
            let b = t.row(&lv);
            latent_kl_tape(t, a, b)
        });
        assert!((got - latent_kl(&e)).abs() < 1e-12);

        for real in [true, false] {
            let y = Field::new(vec![Complex64::new(0.3, 0.2), Complex64::new(-1.0, 0.5)], 0.0);
            let pr = pred(vec![Complex64::new(0.1, -0.1), Complex64::new(-0.5, 0.0)], vec![0.4, 2.0]);
            let got = tape_scalar(|t| {
                let yr = t.row(&[0.3, -1.0]);
                let yi = t.row(&[0.2, 0.5]);
                let mr = t.row(&[0.1, -0.5]);
                let mi = t.row(&[-0.1, 0.0]);
                let v = t.row(&[0.4, 2.0]);
                recon_nll_tape(t, yr, yi, mr, mi, v, real)
            });
            assert!((got - recon_nll(&y, &pr, real).unwrap()).abs() < 1e-12);
        }
    }

    fn toy() -> (Model, Vec<Sequence>, LossContext) {
        let cfg = ModelConfig {
            net: NetConfig {
                rank: 2,
                posenc: PosEncConfig { bands: 1, dim: 2 },
                mode_hidden: vec![5],
                enc_hidden: vec![4],
                drift_hidden: vec![4],
                time_scale: 0.4,
            },
            substeps: 2,
            dt: 0.1,
            obs_scale: 1.0,
            real_valued: false,
        };
        let mut model = Model::init(cfg, 21).unwrap();
        let seg = model.params.segment("drift.w1").unwrap().clone();
        for (k, v) in model.params.flat_mut()[seg.offset..seg.offset + seg.len()].iter_mut().enumerate() {
            *v = 0.3 * (k as f64 * 1.1).sin();
        }
        let xs = linspace_closed(4);
        let set = CoordSet::grid(&xs, &xs).unwrap();
        let fields: Vec<Field> = (0..3)
            .map(|k| {
                Field::new(
                    (0..16)
                        .map(|i| Complex64::new((0.3 * i as f64 + k as f64).sin(), 0.2 * (0.5 * i as f64).cos()))
                        .collect(),
                    0.1 * k as f64,
                )
            })
            .collect();
        let ctx = LossContext {
            coords: encode_coords(&set, &model.cfg.net.posenc).unwrap(),
            substeps: 2,
            delta_t: 0.05,
            time_scale: 0.4,
            real_valued: false,
            weights: LossWeights::default(),
        };
        (model, vec![Sequence::from_fields(&fields, 1.0)], ctx)
    }

    #[test]
    fn total_loss_gradients_pass_fd_check() {
        let (model, batch, ctx) = toy();
        for mode in [RolloutMode::TeacherForced, RolloutMode::Autoregressive] {
            let rep = finite_difference_check(
                |t, p, b: &Vec<Sequence>| Ok(total_loss(t, p, b, mode, &ctx)?.total),
                &model.params,
                &batch,
                1e-4,
                1e-4,
            )
            .unwrap();
            assert!(rep.passed, "{mode:?}: max rel err {}", rep.max_rel_error);
        }
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let (model, batch, mut ctx) = toy();
        ctx.weights = LossWeights { w_recon: 0.0, w_kl: 0.0, w_cons: 0.0, kappa: 0.0 };
        let r = evaluate_with_gradients(
            |t, p, b: &Vec<Sequence>| Ok(total_loss(t, p, b, RolloutMode::TeacherForced, &ctx)?.total),
            &model.params,
            &batch,
        )
        .unwrap();
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn tape_objective_matches_model_forward() {
        let (model, batch, ctx) = toy();
        let mut t = Tape::new();
        let p = model.params.bind_const(&mut t);
        let lv = total_loss(&mut t, &p, &batch, RolloutMode::TeacherForced, &ctx).unwrap();
        let terms = lv.terms(&t);

        let xs = linspace_closed(4);
        let set = CoordSet::grid(&xs, &xs).unwrap();
        let fields: Vec<Field> = batch[0]
            .values
            .iter()
            .zip(&batch[0].times)
            .map(|(v, &tm)| Field::new((0..16).map(|i| Complex64::new(v[[i, 0]], v[[i, 1]])).collect(), tm))
            .collect();
        let mut want = LossTerms::default();
        for k in 0..2 {
            let (pred, enc, prop) = model.step(&fields[k], &set).unwrap();
            want.recon += recon_nll(&fields[k + 1], &pred, false).unwrap() / 2.0;
            want.kl += latent_kl(&enc) / 2.0;
            let next = model.encode(&fields[k + 1], &set).unwrap();
            want.cons += consistency(&next, &prop, ctx.weights.kappa).unwrap() / 2.0;
        }
        assert!((terms.recon - want.recon).abs() < 1e-10);
        assert!((terms.kl - want.kl).abs() < 1e-10);
        assert!((terms.cons - want.cons).abs() < 1e-10);
    }
}
