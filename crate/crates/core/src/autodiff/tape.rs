//! Reverse-mode differentiation over a dynamically recorded tape of dense
//! real matrices.
//!
//! Every node holds a 2-D `f64` array. Vectors are `1 x n` rows, scalars are
//! `1 x 1`. Complex quantities use the real lift: columns interleave
//! `(re, im)` pairs.

use ndarray::{s, Array2, Axis, Zip};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    AddScalarVar(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Softplus(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Square(Var),
    Recip(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    CMul(Var, Var),
    SwapPairs(Var),
    LiftBlockDiag(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::AddScalarVar(..) => "add_scalar_var",
            Op::MulScalarVar(..) => "mul_scalar_var",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Square(..) => "square",
            Op::Recip(..) => "recip",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::CMul(..) => "cmul",
            Op::SwapPairs(..) => "swap_pairs",
            Op::LiftBlockDiag(..) => "lift_block_diag",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Single-threaded; build one per evaluation.
pub struct Tape {
    nodes: Vec<Node>,
    branch_hash: u64,
    first_non_finite: Option<&'static str>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn fnv(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0100_0000_01b3)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            branch_hash: 0xcbf2_9ce4_8422_2325,
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every branch taken by non-smooth ops (relu, clamp). Two
    /// evaluations with equal hashes stayed on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        self.branch_hash
    }

    /// Name of the first op that produced a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.first_non_finite
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b)
            | Op::AddScalarVar(a, b)
            | Op::MulScalarVar(a, b)
            | Op::CMul(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::Clamp(a, _, _)
            | Op::Square(a)
            | Op::Recip(a)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SwapPairs(a)
            | Op::LiftBlockDiag(a) => self.nodes[a.0].needs_grad,
        };
        if self.first_non_finite.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.first_non_finite = Some(op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row"))
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.dim(), (1, 1));
        t[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + row` with the `1 x c` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "add_row shape");
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// Scales column `j` of `a` by `row[j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "mul_row shape");
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col), (self.shape(a).0, 1), "mul_col shape");
        let out = self.value(a) * self.value(col);
        self.push(out, Op::MulCol(a, col))
    }

    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let out = self.value(a) + c;
        self.push(out, Op::AddScalarVar(a, s))
    }

    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let out = self.value(a) * c;
        self.push(out, Op::MulScalarVar(a, s))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::Shift(a))
    }

    /// Value `a + delta`, gradient passed straight through to `a`.
    pub fn straight_through(&mut self, a: Var, delta: &Tensor) -> Var {
        let out = self.value(a) + delta;
        self.push(out, Op::Shift(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::sin);
        self.push(out, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::cos);
        self.push(out, Op::Cos(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| if x > 30.0 { x } else { x.exp().ln_1p() });
        self.push(out, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut h = self.branch_hash;
        for &x in self.value(a) {
            h = fnv(h, (x > 0.0) as u64);
        }
        self.branch_hash = h;
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let mut h = self.branch_hash;
        for &x in self.value(a) {
            h = fnv(h, if x < lo { 0 } else if x > hi { 2 } else { 1 });
        }
        self.branch_hash = h;
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::recip);
        self.push(out, Op::Recip(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(out, Op::SumRows(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).0 as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols rows differ");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows cols differ");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("reshape size");
        self.push(out, Op::Reshape(a))
    }

    /// Elementwise complex product of two real-lifted arrays.
    pub fn cmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "cmul shape mismatch");
        let (rows, cols) = self.shape(a);
        assert!(cols % 2 == 0, "cmul needs interleaved columns");
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Array2::zeros((rows, cols));
        for i in 0..rows {
            for k in (0..cols).step_by(2) {
                let (ar, ai, br, bi) = (va[[i, k]], va[[i, k + 1]], vb[[i, k]], vb[[i, k + 1]]);
                out[[i, k]] = ar * br - ai * bi;
                out[[i, k + 1]] = ar * bi + ai * br;
            }
        }
        self.push(out, Op::CMul(a, b))
    }

    /// Swaps columns `2j` and `2j + 1` for every `j`.
    pub fn swap_pairs(&mut self, a: Var) -> Var {
        let out = swap_pairs(self.value(a));
        self.push(out, Op::SwapPairs(a))
    }

    /// `1 x 2r` interleaved `(alpha_i, beta_i)` to the `2r x 2r` block
    /// diagonal with blocks `[[alpha, -beta], [beta, alpha]]`.
    pub fn lift_block_diag(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), 1);
        let n = v.ncols();
        let mut out = Array2::zeros((n, n));
        for k in (0..n).step_by(2) {
            let (al, be) = (v[[0, k]], v[[0, k + 1]]);
            out[[k, k]] = al;
            out[[k + 1, k + 1]] = al;
            out[[k, k + 1]] = -be;
            out[[k + 1, k]] = be;
        }
        self.push(out, Op::LiftBlockDiag(a))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        self.backward_with_seeds(&[(out, Array2::ones((1, 1)))])
    }

    /// Reverse sweep from arbitrary upstream gradients.
    pub fn backward_with_seeds(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(self.shape(*v), g.dim(), "seed shape mismatch");
            accumulate(&mut grads, *v, g.clone());
            last = last.max(v.0);
        }
        for idx in (0..=last).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || -g);
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, || g * self.value(*b));
                self.acc(grads, *b, || g * self.value(*a));
            }
            Op::AddRow(a, r) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *r, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, r) => {
                self.acc(grads, *a, || g * self.value(*r));
                self.acc(grads, *r, || {
                    (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0))
                });
            }
            Op::MulCol(a, c) => {
                self.acc(grads, *a, || g * self.value(*c));
                self.acc(grads, *c, || {
                    (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1))
                });
            }
            Op::AddScalarVar(a, s) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *s, || Array2::from_elem((1, 1), g.sum()));
            }
            Op::MulScalarVar(a, s) => {
                let c = self.scalar(*s);
                self.acc(grads, *a, || g * c);
                self.acc(grads, *s, || {
                    Array2::from_elem((1, 1), (g * self.value(*a)).sum())
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, || g * *c),
            Op::Shift(a) => self.acc(grads, *a, || g.clone()),
            Op::Tanh(a) => self.acc(grads, *a, || {
                let mut out = g.clone();
                Zip::from(&mut out).and(y).for_each(|o, &t| *o *= 1.0 - t * t);
                out
            }),
            Op::Exp(a) => self.acc(grads, *a, || g * y),
            Op::Log(a) => self.acc(grads, *a, || g / self.value(*a)),
            Op::Sin(a) => self.acc(grads, *a, || g * &self.value(*a).mapv(f64::cos)),
            Op::Cos(a) => self.acc(grads, *a, || -(g * &self.value(*a).mapv(f64::sin))),
            Op::Softplus(a) => self.acc(grads, *a, || {
                g * &self.value(*a).mapv(|x| 1.0 / (1.0 + (-x).exp()))
            }),
            Op::Relu(a) => self.acc(grads, *a, || {
                g * &self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 })
            }),
            Op::Clamp(a, lo, hi) => self.acc(grads, *a, || {
                g * &self
                    .value(*a)
                    .mapv(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 })
            }),
            Op::Square(a) => self.acc(grads, *a, || g * &(self.value(*a) * 2.0)),
            Op::Recip(a) => self.acc(grads, *a, || -(g * &(y * y))),
            Op::Sum(a) => {
                let c = g[[0, 0]];
                self.acc(grads, *a, || Array2::from_elem(self.shape(*a), c));
            }
            Op::SumRows(a) => {
                let rows = self.shape(*a).0;
                self.acc(grads, *a, || {
                    g.broadcast((rows, g.ncols())).expect("broadcast").to_owned()
                });
            }
            Op::SumCols(a) => {
                let cols = self.shape(*a).1;
                self.acc(grads, *a, || {
                    g.broadcast((g.nrows(), cols)).expect("broadcast").to_owned()
                });
            }
            Op::SliceCols(a, start) => self.acc(grads, *a, || {
                let mut out = Array2::zeros(self.shape(*a));
                out.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                out
            }),
            Op::SliceRows(a, start) => self.acc(grads, *a, || {
                let mut out = Array2::zeros(self.shape(*a));
                out.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                out
            }),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    self.acc(grads, *p, || g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = self.shape(*p).0;
                    self.acc(grads, *p, || g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, || g.t().to_owned()),
            Op::Reshape(a) => self.acc(grads, *a, || {
                let flat: Vec<f64> = g.iter().copied().collect();
                Array2::from_shape_vec(self.shape(*a), flat).expect("reshape")
            }),
            Op::CMul(a, b) => {
                self.acc(grads, *a, || cmul_conj(g, self.value(*b)));
                self.acc(grads, *b, || cmul_conj(g, self.value(*a)));
            }
            Op::SwapPairs(a) => self.acc(grads, *a, || swap_pairs(g)),
            Op::LiftBlockDiag(a) => self.acc(grads, *a, || {
                let n = g.nrows();
                let mut out = Array2::zeros((1, n));
                for k in (0..n).step_by(2) {
                    out[[0, k]] = g[[k, k]] + g[[k + 1, k + 1]];
                    out[[0, k + 1]] = g[[k + 1, k]] - g[[k, k + 1]];
                }
                out
            }),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.needs(v) {
            accumulate(grads, v, f());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn swap_pairs(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for k in (0..a.ncols()).step_by(2) {
        out.column_mut(k).assign(&a.column(k + 1));
        out.column_mut(k + 1).assign(&a.column(k));
    }
    out
}

/// `g * conj(b)` elementwise in the real lift.
fn cmul_conj(g: &Tensor, b: &Tensor) -> Tensor {
    let (rows, cols) = g.dim();
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for k in (0..cols).step_by(2) {
            let (gr, gi, br, bi) = (g[[i, k]], g[[i, k + 1]], b[[i, k]], b[[i, k + 1]]);
            out[[i, k]] = gr * br + gi * bi;
            out[[i, k + 1]] = gi * br - gr * bi;
        }
    }
    out
}

/// Gradients from a reverse sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}
