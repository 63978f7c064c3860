//! Pixel- and embedding-space CutMix, Mixup and Dropout.
//!
//! Both mixing operators satisfy the endpoint identities exactly: λ = 1
//! returns the first input and λ = 0 the second, bit for bit.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingVector, ImageTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mixing weight λ ∈ [0, 1] given to the first input.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MixCoefficient(f64);

impl MixCoefficient {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Parameter(format!("mix coefficient {lambda} outside [0,1]")));
        }
        Ok(Self(lambda))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Draw λ ~ Beta(alpha, alpha).
pub fn sample_mix_coefficient(alpha: f64, rng: &mut impl Rng) -> Result<MixCoefficient> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("beta alpha must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(MixCoefficient(beta.sample(rng).clamp(0.0, 1.0)))
}

/// Axis-aligned rectangle lying fully inside an H×W image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchMask {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchMask {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.top + self.height <= height && self.left + self.width <= width
    }
}

/// Patch of side `round(side·√(1−λ))` placed uniformly so it never clips.
pub fn sample_patch_mask(
    lambda: MixCoefficient,
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> PatchMask {
    let cut = (1.0 - lambda.value()).sqrt();
    let ph = ((height as f64 * cut).round() as usize).min(height);
    let pw = ((width as f64 * cut).round() as usize).min(width);
    let top = rng.random_range(0..=height - ph);
    let left = rng.random_range(0..=width - pw);
    PatchMask {
        top,
        left,
        height: ph,
        width: pw,
    }
}

/// Replace the pixels of `x1` inside `mask` with those of `x2`.
pub fn cutmix_pixel_with_mask<S: Scalar>(
    x1: &ImageTensor<S>,
    x2: &ImageTensor<S>,
    mask: &PatchMask,
) -> Result<ImageTensor<S>> {
    x1.ensure_same_shape(x2)?;
    let shape = x1.shape();
    if !mask.fits(shape.height, shape.width) {
        return Err(Error::Shape(format!("patch {mask:?} does not fit a {shape} image")));
    }
    let mut out = x1.clone();
    for y in mask.top..mask.top + mask.height {
        for x in mask.left..mask.left + mask.width {
            for c in 0..shape.channels {
                out.set(y, x, c, x2.get(y, x, c));
            }
        }
    }
    Ok(out)
}

pub fn cutmix_pixel<S: Scalar>(
    x1: &ImageTensor<S>,
    x2: &ImageTensor<S>,
    lambda: MixCoefficient,
    rng: &mut impl Rng,
) -> Result<ImageTensor<S>> {
    x1.ensure_same_shape(x2)?;
    let shape = x1.shape();
    let mask = sample_patch_mask(lambda, shape.height, shape.width, rng);
    cutmix_pixel_with_mask(x1, x2, &mask)
}

/// λ·a + (1−λ)·b with exact endpoints and exact result when a == b.
#[inline]
fn convex<S: Scalar>(a: S, b: S, lambda: S) -> S {
    if a == b {
        a
    } else {
        lambda * a + (S::one() - lambda) * b
    }
}

pub fn mixup_pixel<S: Scalar>(
    x1: &ImageTensor<S>,
    x2: &ImageTensor<S>,
    lambda: MixCoefficient,
) -> Result<ImageTensor<S>> {
    x1.ensure_same_shape(x2)?;
    let l = S::of(lambda.value());
    let data = x1
        .data()
        .iter()
        .zip(x2.data())
        .map(|(&a, &b)| convex(a, b, l).max(S::zero()).min(S::one()))
        .collect();
    ImageTensor::new(x1.shape(), data)
}

/// How embedding-space CutMix chooses the coordinates taken from the second input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedCutMode {
    /// One contiguous segment at a uniform offset.
    #[default]
    Contiguous,
    /// A uniformly random coordinate subset of the same size.
    Scattered,
}

/// Replace `round((1−λ)·d)` coordinates of `e1` with those of `e2`.
pub fn cutmix_embedding<S: Scalar>(
    e1: &EmbeddingVector<S>,
    e2: &EmbeddingVector<S>,
    lambda: MixCoefficient,
    mode: EmbedCutMode,
    rng: &mut impl Rng,
) -> Result<EmbeddingVector<S>> {
    e1.ensure_compatible(e2)?;
    let d = e1.dim();
    let len = (((1.0 - lambda.value()) * d as f64).round() as usize).min(d);
    let mut out = e1.values().to_vec();
    match mode {
        EmbedCutMode::Contiguous => {
            let start = rng.random_range(0..=d - len);
            out[start..start + len].copy_from_slice(&e2.values()[start..start + len]);
        }
        EmbedCutMode::Scattered => {
            for i in rand::seq::index::sample(rng, d, len) {
                out[i] = e2.values()[i];
            }
        }
    }
    e1.with_values(out)
}

pub fn mixup_embedding<S: Scalar>(
    e1: &EmbeddingVector<S>,
    e2: &EmbeddingVector<S>,
    lambda: MixCoefficient,
) -> Result<EmbeddingVector<S>> {
    e1.ensure_compatible(e2)?;
    let l = S::of(lambda.value());
    let out = e1
        .values()
        .iter()
        .zip(e2.values())
        .map(|(&a, &b)| convex(a, b, l))
        .collect();
    e1.with_values(out)
}

/// Inverted dropout: zero each coordinate with probability `p`, scale
/// survivors by `1/(1−p)`. `p = 1` yields the zero vector.
pub fn dropout_embedding<S: Scalar>(
    e: &EmbeddingVector<S>,
    p: f64,
    rng: &mut impl Rng,
) -> Result<EmbeddingVector<S>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability {p} outside [0,1]")));
    }
    if p == 1.0 {
        return e.with_values(vec![S::zero(); e.dim()]);
    }
    let scale = S::of(1.0 / (1.0 - p));
    let out = e
        .values()
        .iter()
        .map(|&v| if rng.random::<f64>() < p { S::zero() } else { v * scale })
        .collect();
    e.with_values(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ImageShape;
    use crate::rng::seeded;

    fn lam(v: f64) -> MixCoefficient {
        MixCoefficient::new(v).unwrap()
    }

    fn emb(v: Vec<f64>) -> EmbeddingVector<f64> {
        EmbeddingVector::new(v, "enc").unwrap()
    }

    fn const_img(v: f64, side: usize) -> ImageTensor<f64> {
        ImageTensor::filled(ImageShape::new(side, side, 3), v)
    }

    #[test]
    fn coefficient_rejects_bad_alpha() {
        let mut rng = seeded(0);
        assert!(sample_mix_coefficient(0.0, &mut rng).is_err());
        assert!(sample_mix_coefficient(-1.0, &mut rng).is_err());
        assert!(MixCoefficient::new(1.5).is_err());
    }

    #[test]
    fn coefficient_is_seed_deterministic() {
        let a = sample_mix_coefficient(1.0, &mut seeded(42)).unwrap();
        let b = sample_mix_coefficient(1.0, &mut seeded(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn patch_endpoints() {
        let mut rng = seeded(1);
        let none = sample_patch_mask(lam(1.0), 8, 13, &mut rng);
        assert_eq!((none.height, none.width), (0, 0));
        let full = sample_patch_mask(lam(0.0), 8, 8, &mut rng);
        assert_eq!(full, PatchMask { top: 0, left: 0, height: 8, width: 8 });
    }

    #[test]
    fn patch_for_three_quarters_is_four_by_four() {
        let mut rng = seeded(2);
        for _ in 0..100 {
            let m = sample_patch_mask(lam(0.75), 8, 8, &mut rng);
            assert_eq!((m.height, m.width), (4, 4));
            assert!(m.fits(8, 8));
        }
    }

    #[test]
    fn cutmix_pixel_patch_arithmetic() {
        let x1 = ImageTensor::filled(ImageShape::new(8, 8, 2), 0.0f64);
        let x2 = ImageTensor::filled(ImageShape::new(8, 8, 2), 1.0f64);
        let out = cutmix_pixel(&x1, &x2, lam(0.75), &mut seeded(3)).unwrap();
        assert_eq!(out.channel_sum(0), 16.0);
        assert_eq!(out.channel_sum(1), 16.0);
    }

    #[test]
    fn cutmix_pixel_endpoints() {
        let x1 = const_img(0.2, 6);
        let x2 = const_img(0.9, 6);
        let mut rng = seeded(4);
        assert_eq!(cutmix_pixel(&x1, &x2, lam(1.0), &mut rng).unwrap(), x1);
        assert_eq!(cutmix_pixel(&x1, &x2, lam(0.0), &mut rng).unwrap(), x2);
    }

    #[test]
    fn mixing_shape_mismatch_errors() {
        let a = const_img(0.0, 4);
        let b = const_img(0.0, 5);
        assert!(matches!(mixup_pixel(&a, &b, lam(0.5)), Err(Error::Shape(_))));
        assert!(matches!(cutmix_pixel(&a, &b, lam(0.5), &mut seeded(0)), Err(Error::Shape(_))));
        let e1 = emb(vec![0.0; 3]);
        let e2 = emb(vec![0.0; 4]);
        assert!(mixup_embedding(&e1, &e2, lam(0.5)).is_err());
        let e3 = EmbeddingVector::new(vec![0.0; 3], "other").unwrap();
        assert!(cutmix_embedding(&e1, &e3, lam(0.5), EmbedCutMode::Contiguous, &mut seeded(0)).is_err());
    }

    #[test]
    fn mixup_pixel_examples() {
        let x1 = const_img(0.0, 4);
        let x2 = const_img(1.0, 4);
        assert_eq!(mixup_pixel(&x1, &x2, lam(1.0)).unwrap(), x1);
        let out = mixup_pixel(&x1, &x2, lam(0.3)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let same = const_img(0.37, 4);
        assert_eq!(mixup_pixel(&same, &same, lam(0.123)).unwrap(), same);
    }

    #[test]
    fn mixup_embedding_midpoint() {
        let out = mixup_embedding(&emb(vec![2.0, 0.0]), &emb(vec![0.0, 2.0]), lam(0.5)).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0]);
        let e1 = emb(vec![0.3, -1.2]);
        assert_eq!(mixup_embedding(&e1, &emb(vec![5.0, 5.0]), lam(1.0)).unwrap(), e1);
    }

    #[test]
    fn cutmix_embedding_examples() {
        let e1 = emb(vec![0.0; 10]);
        let e2 = emb(vec![1.0; 10]);
        let mut rng = seeded(5);
        for mode in [EmbedCutMode::Contiguous, EmbedCutMode::Scattered] {
            assert_eq!(cutmix_embedding(&e1, &e2, lam(1.0), mode, &mut rng).unwrap(), e1);
            assert_eq!(cutmix_embedding(&e1, &e2, lam(0.0), mode, &mut rng).unwrap(), e2);
            let out = cutmix_embedding(&e1, &e2, lam(0.6), mode, &mut rng).unwrap();
            assert_eq!(out.values().iter().filter(|&&v| v == 1.0).count(), 4);
        }
    }

    #[test]
    fn contiguous_segment_is_contiguous() {
        let e1 = emb(vec![0.0; 32]);
        let e2 = emb(vec![1.0; 32]);
        let mut rng = seeded(6);
        for _ in 0..50 {
            let out = cutmix_embedding(&e1, &e2, lam(0.5), EmbedCutMode::Contiguous, &mut rng).unwrap();
            let ones: Vec<usize> = (0..32).filter(|&i| out.values()[i] == 1.0).collect();
            assert_eq!(ones.len(), 16);
            assert_eq!(ones.last().unwrap() - ones[0], 15);
        }
    }

    #[test]
    fn dropout_endpoints_and_errors() {
        let e = emb(vec![1.5, -2.0, 0.25]);
        let mut rng = seeded(7);
        assert_eq!(dropout_embedding(&e, 0.0, &mut rng).unwrap(), e);
        assert_eq!(dropout_embedding(&e, 1.0, &mut rng).unwrap().values(), &[0.0; 3]);
        assert!(dropout_embedding(&e, -0.1, &mut rng).is_err());
        assert!(dropout_embedding(&e, 1.1, &mut rng).is_err());
    }
}
