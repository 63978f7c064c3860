use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::curriculum::{categorize_class, Category, CategoryThresholds};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Top-1 accuracy overall and per shot category. A category with no test
/// samples is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub overall: f64,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
    /// Number of evaluated samples in many, medium and few classes.
    pub support: [usize; 3],
}

impl CategoryAccuracy {
    pub fn get(&self, c: Category) -> Option<f64> {
        match c {
            Category::Many => self.many,
            Category::Medium => self.medium,
            Category::Few => self.few,
        }
    }
}

pub fn top1_by_category(
    predictions: &[usize],
    labels: &[usize],
    class_counts: &[usize],
    thresholds: &CategoryThresholds,
) -> Result<CategoryAccuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let mut hits = [0usize; 3];
    let mut support = [0usize; 3];
    for (&p, &y) in predictions.iter().zip(labels) {
        let n = *class_counts
            .get(y)
            .ok_or_else(|| Error::Parameter(format!("label {y} has no class count")))?;
        let c = categorize_class(n, thresholds) as usize;
        support[c] += 1;
        if p == y {
            hits[c] += 1;
        }
    }
    let acc = |c: usize| (support[c] > 0).then(|| hits[c] as f64 / support[c] as f64);
    Ok(CategoryAccuracy {
        overall: hits.iter().sum::<usize>() as f64 / predictions.len() as f64,
        many: acc(0),
        medium: acc(1),
        few: acc(2),
        support,
    })
}

fn to_matrix<S: Scalar>(x: &Array2<S>) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("features contain non-finite values".into()));
    }
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)].to_f64_lossy()))
}

fn mean_and_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1.0).max(1.0);
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ra = sym_sqrt(a);
    let inner = &ra * b * &ra;
    let sym = (&inner + inner.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum()
}

/// Fréchet distance between Gaussians fitted to two feature sets (rows are
/// samples).
pub fn fid_score<S: Scalar>(features_a: &Array2<S>, features_b: &Array2<S>) -> Result<f64> {
    if features_a.ncols() != features_b.ncols() {
        return Err(Error::Shape(format!(
            "feature widths differ: {} vs {}",
            features_a.ncols(),
            features_b.ncols()
        )));
    }
    if features_a.nrows() < 2 || features_b.nrows() < 2 {
        return Err(Error::Data("FID needs at least two samples per set".into()));
    }
    let d = features_a.ncols();
    if features_a.nrows() <= d || features_b.nrows() <= d {
        log::warn!(
            "FID on {} and {} samples of dimension {d}: covariance is rank deficient",
            features_a.nrows(),
            features_b.nrows()
        );
    }
    let (ma, ca) = mean_and_cov(&to_matrix(features_a)?);
    let (mb, cb) = mean_and_cov(&to_matrix(features_b)?);
    let mean_term = (&ma - &mb).norm_squared();
    let mut cross = trace_sqrt_product(&ca, &cb);
    if !cross.is_finite() {
        let jitter = DMatrix::<f64>::identity(d, d) * 1e-6;
        cross = trace_sqrt_product(&(&ca + &jitter), &(&cb + &jitter));
    }
    let fid = mean_term + ca.trace() + cb.trace() - 2.0 * cross;
    if !fid.is_finite() {
        return Err(Error::Data("FID is not finite".into()));
    }
    Ok(fid.max(0.0))
}

/// Mean Euclidean distance between distinct rows, or `None` with fewer than two rows.
pub fn mean_pairwise_distance<S: Scalar>(x: &Array2<S>) -> Option<f64> {
    let n = x.nrows();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2))
                .sum();
            total += d.sqrt();
        }
    }
    Some(total / (n * (n - 1) / 2) as f64)
}

/// Sum of per-coordinate variances of the rows.
pub fn total_variance<S: Scalar>(x: &Array2<S>) -> Option<f64> {
    let n = x.nrows();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for col in x.columns() {
        let vals: Vec<f64> = col.iter().map(|v| v.to_f64_lossy()).collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        total += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    Some(total)
}

/// Average over classes of a within-class statistic of the rows of `features`
/// grouped by `labels`. Classes with too few rows are skipped.
pub fn per_class_mean(
    features: &Array2<f64>,
    labels: &[usize],
    stat: impl Fn(&Array2<f64>) -> Option<f64>,
) -> Option<f64> {
    let k = labels.iter().copied().max()? + 1;
    let vals: Vec<f64> = (0..k)
        .filter_map(|c| {
            let idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
            stat(&features.select(ndarray::Axis(0), &idx))
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
