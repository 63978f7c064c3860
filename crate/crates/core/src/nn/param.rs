use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A trainable matrix with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub value: Array2<S>,
    pub grad: Array2<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(value: Array2<S>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    /// Uniform(−b, b) with b = √(6 / fan_in) scaled by `gain`.
    pub fn kaiming(rows: usize, cols: usize, fan_in: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt() * 0.5f64.sqrt();
        Self::new(Array2::from_shape_fn((rows, cols), |_| {
            S::of(rng.random_range(-bound..=bound))
        }))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Serialisable copy of a parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub shapes: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

/// Anything that owns an ordered list of parameters.
pub trait HasParams<S: Scalar> {
    fn params(&self) -> Vec<&Param<S>>;
    fn params_mut(&mut self) -> Vec<&mut Param<S>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn snapshot(&self) -> ParamSnapshot {
        let ps = self.params();
        ParamSnapshot {
            shapes: ps.iter().map(|p| p.value.dim()).collect(),
            values: ps
                .iter()
                .flat_map(|p| p.value.iter().map(|v| v.to_f64_lossy()))
                .collect(),
        }
    }

    fn restore(&mut self, snap: &ParamSnapshot) -> Result<()> {
        let mut ps = self.params_mut();
        if ps.len() != snap.shapes.len() {
            return Err(Error::Data(format!(
                "snapshot has {} tensors, model has {}",
                snap.shapes.len(),
                ps.len()
            )));
        }
        let mut offset = 0;
        for (p, &shape) in ps.iter_mut().zip(&snap.shapes) {
            if p.value.dim() != shape {
                return Err(Error::Data(format!(
                    "snapshot tensor shape {shape:?} does not match {:?}",
                    p.value.dim()
                )));
            }
            let n = shape.0 * shape.1;
            let src = snap
                .values
                .get(offset..offset + n)
                .ok_or_else(|| Error::Data("snapshot truncated".into()))?;
            for (dst, &v) in p.value.iter_mut().zip(src) {
                *dst = S::of(v);
            }
            offset += n;
        }
        if offset != snap.values.len() {
            return Err(Error::Data("snapshot has trailing values".into()));
        }
        Ok(())
    }

    /// SHA-256 over the exact bit patterns of every parameter.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for v in p.value.iter() {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
