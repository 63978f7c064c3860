//! Procedural ten-class 28×28 grayscale dataset used for desk-scale runs.
//!
//! Each class is a parametric shape rendered with random position, size,
//! stroke, rotation, intensity and background noise. Rendering is a pure
//! function of `(seed, split, class, index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sample::{ImageSample, LabeledDataset, Split};
use super::tensor::{ImageShape, ImageTensor};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

pub const DESK_SIDE: usize = 28;

pub const DESK_CLASSES: [&str; 10] = [
    "disk", "square", "ring", "hbar", "vbar", "plus", "cross", "triangle", "frame", "dots",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeskSpec {
    pub seed: u64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DeskSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train_per_class: 300,
            val_per_class: 50,
            test_per_class: 50,
        }
    }
}

struct ShapeParams {
    cx: f64,
    cy: f64,
    r: f64,
    t: f64,
    theta: f64,
    intensity: f64,
}

fn rotate(x: f64, y: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * x + s * y, -s * x + c * y)
}

fn box_sdf(u: f64, v: f64, hu: f64, hv: f64) -> f64 {
    let dx = u.abs() - hu;
    let dy = v.abs() - hv;
    let outside = (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt();
    outside + dx.max(dy).min(0.0)
}

fn triangle_sdf(u: f64, v: f64, r: f64) -> f64 {
    // equilateral, apex up, circumradius r; intersection of three half-planes
    let k = 3f64.sqrt();
    let base = v - r * 0.5;
    let sides = (k * u.abs() - v) * 0.5 - r * 0.5;
    base.max(sides)
}

/// Signed distance (in pixels) from point `(x, y)` to the class shape.
fn class_sdf(class: usize, x: f64, y: f64, p: &ShapeParams) -> f64 {
    let (u, v) = rotate(x - p.cx, y - p.cy, p.theta);
    match class {
        0 => (u * u + v * v).sqrt() - p.r,
        1 => box_sdf(u, v, p.r * 0.8, p.r * 0.8),
        2 => ((u * u + v * v).sqrt() - p.r).abs() - p.t * 0.5,
        3 => box_sdf(u, v, p.r, p.t * 0.5),
        4 => box_sdf(u, v, p.t * 0.5, p.r),
        5 => box_sdf(u, v, p.r, p.t * 0.5).min(box_sdf(u, v, p.t * 0.5, p.r)),
        6 => {
            let (a, b) = rotate(u, v, std::f64::consts::FRAC_PI_4);
            box_sdf(a, b, p.r, p.t * 0.5).min(box_sdf(a, b, p.t * 0.5, p.r))
        }
        7 => triangle_sdf(u, v, p.r),
        8 => box_sdf(u, v, p.r * 0.8, p.r * 0.8).abs() - p.t * 0.5,
        9 => {
            let d = p.r * 0.6;
            let rr = p.t * 0.9 + 1.0;
            (((u - d).powi(2) + v * v).sqrt() - rr).min(((u + d).powi(2) + v * v).sqrt() - rr)
        }
        _ => f64::INFINITY,
    }
}

/// Render one image of `class`.
pub fn render_desk_image<S: Scalar>(class: usize, rng: &mut impl Rng) -> ImageTensor<S> {
    let half = DESK_SIDE as f64 / 2.0;
    let p = ShapeParams {
        cx: half + rng.random_range(-3.0..3.0),
        cy: half + rng.random_range(-3.0..3.0),
        r: rng.random_range(5.5..9.5),
        t: rng.random_range(1.5..3.2),
        theta: rng.random_range(-0.35..0.35),
        intensity: rng.random_range(0.6..1.0),
    };
    let noise = Normal::new(0.0, 0.06).expect("valid normal");
    let shape = ImageShape::new(DESK_SIDE, DESK_SIDE, 1);
    let mut img = ImageTensor::zeros(shape);
    for y in 0..DESK_SIDE {
        for x in 0..DESK_SIDE {
            let d = class_sdf(class, x as f64 + 0.5, y as f64 + 0.5, &p);
            let coverage = (0.5 - d).clamp(0.0, 1.0);
            let v = 0.08 + coverage * p.intensity + noise.sample(rng);
            img.set(y, x, 0, S::of(v.clamp(0.0, 1.0)));
        }
    }
    img.quantized()
}

/// Build the full (balanced) desk dataset with train/val/test splits.
pub fn desk_dataset<S: Scalar>(spec: &DeskSpec) -> LabeledDataset<S> {
    let mut samples = Vec::new();
    let splits = [
        (Split::Train, spec.train_per_class, "train"),
        (Split::Val, spec.val_per_class, "val"),
        (Split::Test, spec.test_per_class, "test"),
    ];
    for (si, (split, n, tag)) in splits.into_iter().enumerate() {
        for (k, _) in DESK_CLASSES.iter().enumerate() {
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    spec.seed,
                    &[si as u64, k as u64, i as u64],
                ));
                let pixels = render_desk_image(k, &mut rng);
                samples.push(ImageSample::real(format!("{tag}-{k}-{i:05}"), pixels, k, split));
            }
        }
    }
    LabeledDataset::new(DESK_CLASSES.iter().map(|s| s.to_string()).collect(), samples)
        .expect("desk dataset is well-formed")
}
