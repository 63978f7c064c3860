//! Softmax cross-entropy and its label-frequency-corrected variant.
//!
//! Balanced Softmax shifts every logit by the log of its class's training
//! frequency before the usual cross-entropy:
//! `−log(n_y·e^{z_y} / Σ_k n_k·e^{z_k})`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    BalancedSoftmax,
    CrossEntropy,
}

/// `ln n_k` for each class; every count must be positive.
pub fn log_prior<S: Scalar>(class_counts: &[u64]) -> Result<Vec<S>> {
    class_counts
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if n == 0 {
                Err(Error::Parameter(format!("class {k} has count 0; balanced softmax needs counts ≥ 1")))
            } else {
                Ok(S::of((n as f64).ln()))
            }
        })
        .collect()
}

fn shifted_nll<S: Scalar>(logits: &[S], label: usize, shift: Option<&[S]>) -> S {
    let a = |k: usize| logits[k] + shift.map_or(S::zero(), |s| s[k]);
    let m = (0..logits.len()).fold(S::neg_infinity(), |acc, k| acc.max(a(k)));
    let lse = (0..logits.len()).fold(S::zero(), |acc, k| acc + (a(k) - m).exp()).ln();
    lse - (a(label) - m)
}

/// Balanced Softmax loss for one example.
pub fn balanced_softmax_loss<S: Scalar>(logits: &[S], label: usize, class_counts: &[u64]) -> Result<S> {
    if logits.len() != class_counts.len() {
        return Err(Error::Shape(format!(
            "{} logits but {} class counts",
            logits.len(),
            class_counts.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::Parameter(format!("label {label} out of range")));
    }
    let prior = log_prior::<S>(class_counts)?;
    Ok(shifted_nll(logits, label, Some(&prior)))
}

/// Standard softmax cross-entropy for one example.
pub fn cross_entropy_loss<S: Scalar>(logits: &[S], label: usize) -> Result<S> {
    if label >= logits.len() {
        return Err(Error::Parameter(format!("label {label} out of range")));
    }
    Ok(shifted_nll(logits, label, None))
}

/// Analytic gradient of the single-example Balanced Softmax loss w.r.t. the logits.
pub fn balanced_softmax_grad<S: Scalar>(logits: &[S], label: usize, class_counts: &[u64]) -> Result<Vec<S>> {
    let prior = log_prior::<S>(class_counts)?;
    let a: Vec<S> = logits.iter().zip(&prior).map(|(&z, &p)| z + p).collect();
    let m = a.iter().fold(S::neg_infinity(), |x, &y| x.max(y));
    let e: Vec<S> = a.iter().map(|&v| (v - m).exp()).collect();
    let z = e.iter().fold(S::zero(), |x, &y| x + y);
    Ok(e.iter()
        .enumerate()
        .map(|(k, &v)| v / z - if k == label { S::one() } else { S::zero() })
        .collect())
}

/// Mean loss over a batch and its gradient w.r.t. the logits. `shift` holds
/// per-class additive logit offsets (the log prior), or `None` for plain
/// cross-entropy.
pub fn batch_loss_and_grad<S: Scalar>(
    logits: &Array2<S>,
    labels: &[usize],
    shift: Option<&[S]>,
) -> (S, Array2<S>) {
    let n = logits.nrows();
    let inv_n = S::one() / S::of(n.max(1) as f64);
    let mut grad = logits.clone();
    let mut total = S::zero();
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        if let Some(s) = shift {
            for (v, &o) in row.iter_mut().zip(s) {
                *v += o;
            }
        }
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        let y = labels[i];
        total += z.ln() - row[y].ln();
        row.mapv_inplace(|v| v / z * inv_n);
        row[y] -= inv_n;
    }
    (total * inv_n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_two_class_case() {
        let l = balanced_softmax_loss(&[0.0f64, 0.0], 0, &[1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386_294_361_119_890_6).abs() < 1e-6);
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(
            balanced_softmax_loss(&[0.0f64, 1.0], 0, &[2, 0]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn equal_counts_match_cross_entropy() {
        let z = [0.3f64, -1.2, 2.5, 0.0];
        for y in 0..4 {
            let a = balanced_softmax_loss(&z, y, &[7; 4]).unwrap();
            let b = cross_entropy_loss(&z, y).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_matches_single_example() {
        let logits = Array2::from_shape_vec((2, 3), vec![0.1f64, 0.5, -0.3, 2.0, 1.0, 0.0]).unwrap();
        let counts = [3u64, 10, 1];
        let prior = log_prior::<f64>(&counts).unwrap();
        let (loss, grad) = batch_loss_and_grad(&logits, &[2, 0], Some(&prior));
        let l0 = balanced_softmax_loss(&[0.1, 0.5, -0.3], 2, &counts).unwrap();
        let l1 = balanced_softmax_loss(&[2.0, 1.0, 0.0], 0, &counts).unwrap();
        assert!((loss - (l0 + l1) / 2.0).abs() < 1e-12);
        let g1 = balanced_softmax_grad(&[2.0, 1.0, 0.0], 0, &counts).unwrap();
        for k in 0..3 {
            assert!((grad[(1, k)] - g1[k] / 2.0).abs() < 1e-12);
        }
    }
}
