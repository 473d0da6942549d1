//! Minimal differentiable substrate: dense layers, a child-aggregating tree
//! module, hand-written backward passes, an Adam optimizer and a
//! finite-difference gradient checker. Everything is `f64`.

mod gradcheck;
mod layers;
mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport, LossEval};
pub use layers::{leaky_relu, leaky_relu_grad, Dense, TreeCache, TreeModule, LEAKY_SLOPE};
pub use optim::{Adam, AdamConfig};

use crate::util::Fnv64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parameter record: {0}")]
    Record(String),
}

/// Row-major matrix; vectors are `rows x 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Uniform Xavier/Glorot initialisation.
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Tensor {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `y += self * x`
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *yr += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `x += self^T * y`
    pub fn matvec_t_acc(&self, y: &[f64], x: &mut [f64]) {
        for (r, yr) in y.iter().enumerate() {
            if *yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (xi, w) in x.iter_mut().zip(row) {
                *xi += w * yr;
            }
        }
    }

    /// `self += y x^T`
    pub fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        for (r, yr) in y.iter().enumerate() {
            if *yr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += yr * xi;
            }
        }
    }

    pub fn add_vec(&mut self, v: &[f64]) {
        for (a, b) in self.data.iter_mut().zip(v) {
            *a += b;
        }
    }
}

/// Anything that owns named parameter tensors in a fixed visiting order.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.data.iter().all(|v| v.is_finite()));
        ok
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, t| t.data.iter_mut().for_each(|v| *v = value));
    }

    /// Stable hash over names, shapes and value bits.
    fn checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        self.visit(&mut |name, t| {
            h.write_str(name);
            h.write_u64(t.rows as u64);
            h.write_u64(t.cols as u64);
            for v in &t.data {
                h.write_f64(*v);
            }
        });
        h.finish()
    }

    fn to_record(&self) -> ParamRecord {
        let mut entries = Vec::new();
        self.visit(&mut |name, t| {
            entries.push(NamedTensor {
                name: name.to_string(),
                shape: [t.rows, t.cols],
                values: t.data.clone(),
            })
        });
        ParamRecord { entries }
    }
}

/// A zero-filled copy with the same shapes, for gradient accumulation.
pub fn zeros_like<P: Parameterized + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.fill(0.0);
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Flat, self-describing parameter listing: name, shape, row-major values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub entries: Vec<NamedTensor>,
}

impl ParamRecord {
    /// Removes and returns the named tensor, validating its shape.
    pub fn take(&mut self, name: &str) -> Result<Tensor, NnError> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| NnError::Record(format!("missing tensor `{name}`")))?;
        let e = self.entries.remove(pos);
        if e.shape[0] * e.shape[1] != e.values.len() {
            return Err(NnError::Record(format!(
                "tensor `{name}` has shape {:?} but {} values",
                e.shape,
                e.values.len()
            )));
        }
        if !e.values.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite(name.to_string()));
        }
        Ok(Tensor {
            rows: e.shape[0],
            cols: e.shape[1],
            data: e.values,
        })
    }

    pub fn finish(self) -> Result<(), NnError> {
        match self.entries.first() {
            None => Ok(()),
            Some(e) => Err(NnError::Record(format!("unexpected tensor `{}`", e.name))),
        }
    }
}
