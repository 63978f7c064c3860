//! Minimal neural-network building blocks with explicit backward passes.

mod convnet;
mod layers;
mod optim;
mod param;

pub use convnet::{images_to_rows, row_to_image, ConvNet, ConvNetArch};
pub use layers::{Activation, ActivationLayer, Conv2d, ConvGeometry, Dense};
pub use optim::{Adam, LrSchedule, Sgd};
pub use param::{HasParams, Param, ParamSnapshot};

use ndarray::Array2;

use crate::scalar::Scalar;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Scalar>(logits: &Array2<S>) -> Array2<S> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows<S: Scalar>(m: &Array2<S>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, S::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
