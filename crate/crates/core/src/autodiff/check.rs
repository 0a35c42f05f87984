use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Loss value and its gradient in the flat [`ParamStore`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// Records `f` on a fresh tape and differentiates its scalar output with
/// respect to every parameter. Any randomness inside `f` must be drawn
/// from counter-based streams so that repeated calls replay exactly.
pub fn evaluate_with_gradients<I, F>(f: F, params: &ParamStore, inputs: &I) -> Result<GradResult>
where
    F: Fn(&mut Tape, &BoundParams, &I) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound, inputs)?;
    if let Some(op) = tape.first_non_finite() {
        return Err(Error::NonFinite { op });
    }
    let loss = tape.scalar(out);
    let grads = params.collect_grads(&bound, &tape.backward(out));
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "backward" });
    }
    Ok(GradResult { loss, grads })
}

fn forward_only<I, F>(f: &F, params: &ParamStore, inputs: &I) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &BoundParams, &I) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind_const(&mut tape);
    let out = f(&mut tape, &bound, inputs)?;
    Ok((tape.scalar(out), tape.branch_signature()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub index: usize,
    pub segment: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Set when the stencil straddles a non-smooth point.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn excluded(&self) -> impl Iterator<Item = &FdEntry> {
        self.entries.iter().filter(|e| e.excluded)
    }
}

/// Compares analytic gradients with fourth-order central differences
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
///
/// The relative error per coordinate is `|g_ad - g_fd| / (|g_fd| + 1e-8)`.
/// Coordinates whose stencil crosses a relu/clamp kink are reported as
/// excluded and do not count towards pass/fail.
pub fn finite_difference_check<I, F>(
    f: F,
    params: &ParamStore,
    inputs: &I,
    h: f64,
    tol: f64,
) -> Result<FdReport>
where
    F: Fn(&mut Tape, &BoundParams, &I) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let analytic = evaluate_with_gradients(&f, params, inputs)?;
    let mut entries = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for seg in params.segments() {
        for index in seg.offset..seg.offset + seg.len() {
            let x0 = params.flat()[index];
            let mut eval = |delta: f64| -> Result<(f64, u64)> {
                probe.flat_mut()[index] = x0 + delta;
                let r = forward_only(&f, &probe, inputs);
                probe.flat_mut()[index] = x0;
                r
            };
            let (fp2, sp2) = eval(2.0 * h)?;
            let (fp1, sp1) = eval(h)?;
            let (fm1, sm1) = eval(-h)?;
            let (fm2, sm2) = eval(-2.0 * h)?;
            let excluded = !(sp2 == sp1 && sp1 == sm1 && sm1 == sm2);
            let numeric = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
            let ad = analytic.grads[index];
            entries.push(FdEntry {
                index,
                segment: seg.name.clone(),
                analytic: ad,
                numeric,
                rel_error: (ad - numeric).abs() / (numeric.abs() + 1e-8),
                excluded,
            });
        }
    }
    let max_rel_error = entries
        .iter()
        .filter(|e| !e.excluded)
        .map(|e| e.rel_error)
        .fold(0.0, f64::max);
    Ok(FdReport {
        entries,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn store(name: &str, v: Array2<f64>) -> ParamStore {
        let mut p = ParamStore::new();
        p.add(name, v).unwrap();
        p
    }

    #[test]
    fn square_at_three() {
        let p = store("x", array![[3.0]]);
        let r = evaluate_with_gradients(
            |t, b, _: &()| Ok(t.square(b.get("x"))),
            &p,
            &(),
        )
        .unwrap();
        assert_eq!(r.loss, 9.0);
        assert_eq!(r.grads, vec![6.0]);
    }

    #[test]
    fn sum_of_squares_at_ones() {
        let p = store("x", Array2::ones((1, 10)));
        let r = evaluate_with_gradients(
            |t, b, _: &()| {
                let s = t.square(b.get("x"));
                Ok(t.sum(s))
            },
            &p,
            &(),
        )
        .unwrap();
        assert_eq!(r.loss, 10.0);
        assert!(r.grads.iter().all(|&g| g == 2.0));
    }

    #[test]
    fn linear_function_is_exact() {
        let p = store("x", array![[0.3, -1.2, 2.5]]);
        let rep = finite_difference_check(
            |t, b, w: &Vec<f64>| {
                let c = t.row(w);
                let m = t.mul(b.get("x"), c);
                Ok(t.sum(m))
            },
            &p,
            &vec![1.5, -0.25, 4.0],
            1e-4,
            1e-10,
        )
        .unwrap();
        assert!(rep.passed, "max rel error {}", rep.max_rel_error);
    }

    #[test]
    fn relu_kink_is_excluded() {
        let p = store("x", array![[0.0, 0.7]]);
        let rep = finite_difference_check(
            |t, b, _: &()| {
                let r = t.relu(b.get("x"));
                Ok(t.sum(r))
            },
            &p,
            &(),
            1e-5,
            1e-6,
        )
        .unwrap();
        let excluded: Vec<usize> = rep.excluded().map(|e| e.index).collect();
        assert_eq!(excluded, vec![0]);
        assert!(rep.passed);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let p = store("x", array![[-1.0]]);
        let err = evaluate_with_gradients(|t, b, _: &()| {
            let l = t.log(b.get("x"));
            Ok(t.sum(l))
        }, &p, &())
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "log" }));
    }

    #[test]
    fn step_outside_range_rejected() {
        let p = store("x", array![[1.0]]);
        let r = finite_difference_check(|t, b, _: &()| Ok(t.sum(b.get("x"))), &p, &(), 1e-2, 1e-4);
        assert!(r.is_err());
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let p = store("x", array![[0.4, -0.3, 1.1]]);
        let f = |t: &mut Tape, b: &BoundParams, _: &()| {
            let s = t.sin(b.get("x"));
            Ok(t.sum(s))
        };
        let g = |t: &mut Tape, b: &BoundParams, _: &()| {
            let e = t.exp(b.get("x"));
            let q = t.square(e);
            Ok(t.sum(q))
        };
        let fg = |t: &mut Tape, b: &BoundParams, i: &()| {
            let a = f(t, b, i)?;
            let c = g(t, b, i)?;
            Ok(t.add(a, c))
        };
        let rf = evaluate_with_gradients(f, &p, &()).unwrap();
        let rg = evaluate_with_gradients(g, &p, &()).unwrap();
        let rfg = evaluate_with_gradients(fg, &p, &()).unwrap();
        for i in 0..3 {
            assert!((rfg.grads[i] - rf.grads[i] - rg.grads[i]).abs() < 1e-12);
        }
    }
}
