use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat `f64` parameter storage split into named, shaped segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment. Names must be unique.
    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        if self.segments.iter().any(|s| s.name == name) {
            return Err(Error::Config(format!("duplicate parameter segment `{name}`")));
        }
        let (rows, cols) = value.dim();
        self.segments.push(Segment {
            name: name.to_string(),
            rows,
            cols,
            offset: self.data.len(),
        });
        self.data.extend(value.iter());
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rebuilds a store with this layout around new flat values.
    pub fn with_flat(&self, data: Vec<f64>) -> Result<ParamStore> {
        if data.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                data.len(),
                self.data.len()
            )));
        }
        Ok(ParamStore {
            segments: self.segments.clone(),
            data,
        })
    }

    pub fn from_parts(segments: Vec<Segment>, data: Vec<f64>) -> Result<ParamStore> {
        let mut off = 0;
        for s in &segments {
            if s.offset != off {
                return Err(Error::Format(format!("segment `{}` is not contiguous", s.name)));
            }
            off += s.len();
        }
        if off != data.len() {
            return Err(Error::Format(format!(
                "layout covers {off} values but {} were given",
                data.len()
            )));
        }
        Ok(ParamStore { segments, data })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let s = self.segment(name)?;
        Some(
            ArrayView2::from_shape((s.rows, s.cols), &self.data[s.offset..s.offset + s.len()])
                .expect("segment shape"),
        )
    }

    pub fn get_mut(&mut self, name: &str) -> Option<ArrayViewMut2<'_, f64>> {
        let s = self.segment(name)?.clone();
        Some(
            ArrayViewMut2::from_shape(
                (s.rows, s.cols),
                &mut self.data[s.offset..s.offset + s.len()],
            )
            .expect("segment shape"),
        )
    }

    /// Binds every segment onto `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .segments
            .iter()
            .map(|s| {
                let v = Array2::from_shape_vec(
                    (s.rows, s.cols),
                    self.data[s.offset..s.offset + s.len()].to_vec(),
                )
                .expect("segment shape");
                tape.var(v)
            })
            .collect();
        BoundParams {
            names: self.segments.iter().map(|s| s.name.clone()).collect(),
            vars,
        }
    }

    /// Like [`bind`](Self::bind) but every segment is a constant.
    pub fn bind_const(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .segments
            .iter()
            .map(|s| {
                tape.constant(
                    Array2::from_shape_vec(
                        (s.rows, s.cols),
                        self.data[s.offset..s.offset + s.len()].to_vec(),
                    )
                    .expect("segment shape"),
                )
            })
            .collect();
        BoundParams {
            names: self.segments.iter().map(|s| s.name.clone()).collect(),
            vars,
        }
    }

    /// Flat gradient aligned with this layout; unreached segments are zero.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &Gradients) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for (s, v) in self.segments.iter().zip(&bound.vars) {
            if let Some(g) = grads.get(*v) {
                out[s.offset..s.offset + s.len()]
                    .iter_mut()
                    .zip(g.iter())
                    .for_each(|(o, gi)| *o = *gi);
            }
        }
        out
    }
}

/// Tape handles for every segment of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter segment `{name}`"));
        self.vars[i]
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.names.iter().position(|n| n == name).map(|i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
