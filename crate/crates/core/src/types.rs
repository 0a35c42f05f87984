//! Shared domain types: coordinates, complex arrays, fields and datasets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex vector. `Complex64` is `repr(C)`, so the backing buffer is
/// interleaved `[re, im, re, im, ...]`.
pub type ComplexVec = Vec<Complex64>;

/// A single point of the spatial domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Coord(pub Vec<f64>);

impl Coord {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Shape("coordinate must have dimension >= 1".into()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite coordinate component".into()));
        }
        Ok(Coord(s))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Ordered, duplicate-free set of coordinates stored flat (`m * dim` reals).
#[derive(Debug, Clone, PartialEq)]
pub struct CoordSet {
    dim: usize,
    points: Vec<f64>,
}

impl CoordSet {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("coordinate dimension must be >= 1".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not split into {dim}-d points",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite coordinate component".into()));
        }
        let set = CoordSet { dim, points };
        let mut keys: Vec<Vec<u64>> = (0..set.len())
            .map(|i| set.get(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Shape("duplicate coordinate in set".into()));
        }
        Ok(set)
    }

    pub fn from_coords(coords: &[Coord]) -> Result<Self> {
        let dim = coords.first().map(Coord::dim).unwrap_or(2);
        if coords.iter().any(|c| c.dim() != dim) {
            return Err(Error::Shape("mixed coordinate dimensions".into()));
        }
        CoordSet::new(dim, coords.iter().flat_map(|c| c.0.iter().copied()).collect())
    }

    /// Uniform `nx * ny` grid, row-major with x varying fastest.
    pub fn grid(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let mut pts = Vec::with_capacity(xs.len() * ys.len() * 2);
        for &y in ys {
            for &x in xs {
                pts.push(x);
                pts.push(y);
            }
        }
        CoordSet::new(2, pts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<CoordSet> {
        let mut pts = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("index {i} outside set of {}", self.len())));
            }
            pts.extend_from_slice(self.get(i));
        }
        CoordSet::new(self.dim, pts)
    }
}

/// `n` points evenly spaced on `[-1, 1]`, both ends included.
pub fn linspace_closed(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// `n` points of a periodic grid mapped onto `[-1, 1)`.
pub fn linspace_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect()
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMat {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(ComplexMat { rows, cols, data })
    }

    /// Fills row-major, calling `f` once per entry in order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        ComplexMat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> ComplexVec {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn conj_transpose(&self) -> ComplexMat {
        ComplexMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, other: &ComplexMat) -> Result<ComplexMat> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = ComplexMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Result<ComplexVec> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `M == M^H` within `tol` relative to the Frobenius norm.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self.frobenius_norm().max(f64::MIN_POSITIVE);
        (0..self.rows).all(|i| {
            (0..self.cols).all(|j| (self[(i, j)] - self[(j, i)].conj()).norm() <= tol * scale)
        })
    }

    pub fn select_rows(&self, indices: &[usize]) -> ComplexMat {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        ComplexMat {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, indices: &[usize]) -> ComplexMat {
        ComplexMat::from_fn(self.rows, indices.len(), |i, j| self[(i, indices[j])])
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A snapshot of the state over some coordinate set.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: ComplexVec,
    pub time: f64,
}

impl Field {
    pub fn new(values: ComplexVec, time: f64) -> Self {
        Field { values, time }
    }

    pub fn from_real(values: &[f64], time: f64) -> Self {
        Field {
            values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            time,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Field {
        Field {
            values: indices.iter().map(|&i| self.values[i]).collect(),
            time: self.time,
        }
    }
}

/// Continuous-time eigenvalues, their discrete counterparts and modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub lambdas: ComplexVec,
    pub mus: ComplexVec,
    pub modes: ComplexMat,
}

impl Spectrum {
    /// Builds a spectrum whose discrete eigenvalues are `exp(lambda * dt)`.
    pub fn from_continuous(lambdas: ComplexVec, modes: ComplexMat, dt: f64) -> Self {
        let mus = lambdas.iter().map(|l| (l * dt).exp()).collect();
        Spectrum {
            lambdas,
            mus,
            modes,
        }
    }

    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    /// Largest `|mu - exp(lambda dt)|` over modes.
    pub fn consistency_error(&self, dt: f64) -> f64 {
        self.lambdas
            .iter()
            .zip(&self.mus)
            .map(|(l, m)| ((l * dt).exp() - m).norm())
            .fold(0.0, f64::max)
    }
}

/// Provenance of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub seed: u64,
    pub noise_sigma: f64,
    pub sensor_fraction: f64,
    /// Generator parameters actually used (including effective values
    /// that were adjusted at run time).
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

/// Sparse observations of one trajectory plus optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub grid_shape: (usize, usize),
    pub full_grid: CoordSet,
    pub sensor_indices: Vec<usize>,
    pub sensor_set: CoordSet,
    pub dt: f64,
    pub observations: Vec<Field>,
    pub truth: Option<Vec<Field>>,
    pub gt_spectrum: Option<Spectrum>,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        meta: DatasetMeta,
        grid_shape: (usize, usize),
        full_grid: CoordSet,
        sensor_indices: Vec<usize>,
        dt: f64,
        observations: Vec<Field>,
        truth: Option<Vec<Field>>,
        gt_spectrum: Option<Spectrum>,
    ) -> Result<Self> {
        if grid_shape.0 * grid_shape.1 != full_grid.len() {
            return Err(Error::Shape(format!(
                "grid shape {grid_shape:?} does not match {} grid points",
                full_grid.len()
            )));
        }
        let sensor_set = full_grid.subset(&sensor_indices)?;
        let ds = Dataset {
            meta,
            grid_shape,
            full_grid,
            sensor_indices,
            sensor_set,
            dt,
            observations,
            truth,
            gt_spectrum,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Format(format!("dt must be positive, got {}", self.dt)));
        }
        let m = self.sensor_set.len();
        for (k, f) in self.observations.iter().enumerate() {
            if f.len() != m {
                return Err(Error::Shape(format!(
                    "observation {k} has {} values for {m} sensors",
                    f.len()
                )));
            }
        }
        if let Some(t0) = self.observations.first().map(|f| f.time) {
            for (k, f) in self.observations.iter().enumerate() {
                let expect = t0 + k as f64 * self.dt;
                if (f.time - expect).abs() > 1e-9 * expect.abs().max(self.dt) {
                    return Err(Error::Format(format!(
                        "time {k} is {} but uniform spacing predicts {expect}",
                        f.time
                    )));
                }
            }
        }
        if let Some(truth) = &self.truth {
            if truth.len() != self.observations.len() {
                return Err(Error::Shape(format!(
                    "{} truth snapshots for {} observations",
                    truth.len(),
                    self.observations.len()
                )));
            }
            let n = self.full_grid.len();
            if truth.iter().any(|f| f.len() != n) {
                return Err(Error::Shape("truth snapshot size differs from grid".into()));
            }
        }
        if let Some(spec) = &self.gt_spectrum {
            if spec.modes.rows() != self.full_grid.len() || spec.modes.cols() != spec.rank() {
                return Err(Error::Shape("ground-truth modes do not match grid".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|f| f.time).collect()
    }

    /// True when every observed value has a zero imaginary part.
    pub fn is_real_valued(&self) -> bool {
        self.observations
            .iter()
            .all(|f| f.values.iter().all(|z| z.im == 0.0))
    }
}
