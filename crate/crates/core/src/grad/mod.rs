//! Minimal differentiable substrate: dense matrices, a reverse-mode tape over
//! a fixed operation set, Xavier initialization and Adam.

mod matrix;
mod optim;
mod tape;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use matrix::{affine_backward, affine_forward, Matrix};
pub use optim::{Adam, AdamConfig, AdamState};
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

/// Named parameter matrices in a fixed declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Same names, new values (shapes must agree).
    pub fn with_values(&self, values: Vec<Matrix>) -> Result<Self> {
        if values.len() != self.values.len()
            || values.iter().zip(&self.values).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Contract("replacement parameters do not match shapes".into()));
        }
        Ok(Self {
            names: self.names.clone(),
            values,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.scalar_count() {
            return Err(Error::Contract("flat parameter length mismatch".into()));
        }
        let mut off = 0;
        let values = self
            .values
            .iter()
            .map(|m| {
                let v = Matrix::from_vec(m.rows(), m.cols(), flat[off..off + m.len()].to_vec());
                off += m.len();
                v
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: self.names.clone(),
            values,
        })
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Uniform in ±√(6 / (fan_in + fan_out)) for an `out × in` weight.
pub fn xavier_uniform<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (inp + out).max(1) as f64).sqrt();
    let data = (0..out * inp).map(|_| rng.gen_range(-limit..=limit)).collect();
    Matrix::from_vec(out, inp, data).expect("shape")
}
