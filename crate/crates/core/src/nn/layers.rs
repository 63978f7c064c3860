//! Layers with hand-written backward passes. Activations are row-major
//! `batch × features` matrices; convolutional features are laid out
//! channel-major (`C×H×W`) within a row.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{HasParams, Param};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Dense<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Option<Array2<S>>,
}

impl<S: Scalar> Dense<S> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::kaiming(inputs, outputs, inputs, 2f64.sqrt(), rng),
            bias: Param::zeros(1, outputs),
            input: None,
        }
    }

    /// Zero-initialised weights, used for output heads.
    pub fn zeroed(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(inputs, outputs),
            bias: Param::zeros(1, outputs),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }

    /// Inference-only forward pass; nothing is cached.
    pub fn apply(&self, x: &Array2<S>) -> Array2<S> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        let y = self.apply(x);
        self.input = Some(x.clone());
        y
    }

    /// Accumulate parameter gradients and return the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: &Array2<S>) -> Array2<S> {
        let x = self.input.take().expect("Dense::backward called without forward");
        self.backward_with(&x, grad)
    }

    /// Backward pass against an input the caller kept itself.
    pub fn backward_with(&mut self, x: &Array2<S>, grad: &Array2<S>) -> Array2<S> {
        self.weight.grad += &x.t().dot(grad);
        self.bias.grad += &grad.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.dot(&self.weight.value.t())
    }
}

impl<S: Scalar> HasParams<S> for Dense<S> {
    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn eval<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Relu => v.max(S::zero()),
            Activation::Silu => v / (S::one() + (-v).exp()),
        }
    }

    #[inline]
    pub fn derivative<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Relu => {
                if v > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Silu => {
                let sig = S::one() / (S::one() + (-v).exp());
                sig * (S::one() + v * (S::one() - sig))
            }
        }
    }

    pub fn apply<S: Scalar>(self, x: &Array2<S>) -> Array2<S> {
        x.mapv(|v| self.eval(v))
    }
}

/// Elementwise activation with its pre-activation cached for backward.
#[derive(Debug, Clone)]
pub struct ActivationLayer<S> {
    pub kind: Activation,
    input: Option<Array2<S>>,
}

impl<S: Scalar> ActivationLayer<S> {
    pub fn new(kind: Activation) -> Self {
        Self { kind, input: None }
    }

    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        let y = self.kind.apply(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, grad: &Array2<S>) -> Array2<S> {
        let x = self.input.take().expect("activation backward without forward");
        let kind = self.kind;
        let mut g = grad.clone();
        g.zip_mut_with(&x, |g, &v| *g *= kind.derivative(v));
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn in_features(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_features(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// 2-D convolution implemented as im2col followed by one matrix product.
#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    pub geometry: ConvGeometry,
    pub weight: Param<S>,
    pub bias: Param<S>,
    cols: Option<Array2<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(geometry: ConvGeometry, rng: &mut impl Rng) -> Self {
        let fan_in = geometry.patch_len();
        Self {
            geometry,
            weight: Param::kaiming(fan_in, geometry.out_channels, fan_in, 2f64.sqrt(), rng),
            bias: Param::zeros(1, geometry.out_channels),
            cols: None,
        }
    }

    fn im2col(&self, x: &Array2<S>) -> Array2<S> {
        let g = &self.geometry;
        let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
        let batch = x.nrows();
        let mut cols = Array2::zeros((batch * oh * ow, g.patch_len()));
        for b in 0..batch {
            let row = x.row(b);
            for oy in 0..oh {
                for ox in 0..ow {
                    let r = (b * oh + oy) * ow + ox;
                    let mut dst = cols.row_mut(r);
                    for c in 0..g.in_channels {
                        for ky in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            if iy < 0 || iy >= g.in_height as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix < 0 || ix >= g.in_width as isize {
                                    continue;
                                }
                                dst[(c * k + ky) * k + kx] = row
                                    [(c * g.in_height + iy as usize) * g.in_width + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<S>, batch: usize) -> Array2<S> {
        let g = &self.geometry;
        let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
        let mut dx = Array2::zeros((batch, g.in_features()));
        for b in 0..batch {
            let mut row = dx.row_mut(b);
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = dcols.row((b * oh + oy) * ow + ox);
                    for c in 0..g.in_channels {
                        for ky in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            if iy < 0 || iy >= g.in_height as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if ix < 0 || ix >= g.in_width as isize {
                                    continue;
                                }
                                let o = (c * g.in_height + iy as usize) * g.in_width + ix as usize;
                                row[o] += src[(c * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn to_rows(&self, y: &Array2<S>, batch: usize) -> Array2<S> {
        let g = &self.geometry;
        let ohw = g.out_height() * g.out_width();
        let mut out = Array2::zeros((batch, g.out_features()));
        for b in 0..batch {
            let block = y.slice(s![b * ohw..(b + 1) * ohw, ..]);
            let mut dst = out.row_mut(b);
            for p in 0..ohw {
                for oc in 0..g.out_channels {
                    dst[oc * ohw + p] = block[(p, oc)];
                }
            }
        }
        out
    }

    fn rows_to_maps(&self, grad: &Array2<S>) -> Array2<S> {
        let g = &self.geometry;
        let ohw = g.out_height() * g.out_width();
        let batch = grad.nrows();
        let mut y = Array2::zeros((batch * ohw, g.out_channels));
        for b in 0..batch {
            let src = grad.row(b);
            for p in 0..ohw {
                for oc in 0..g.out_channels {
                    y[(b * ohw + p, oc)] = src[oc * ohw + p];
                }
            }
        }
        y
    }

    pub fn apply(&self, x: &Array2<S>) -> Array2<S> {
        let cols = self.im2col(x);
        let y = cols.dot(&self.weight.value) + &self.bias.value;
        self.to_rows(&y, x.nrows())
    }

    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        let cols = self.im2col(x);
        let y = cols.dot(&self.weight.value) + &self.bias.value;
        let out = self.to_rows(&y, x.nrows());
        self.cols = Some(cols);
        out
    }

    pub fn backward(&mut self, grad: &Array2<S>) -> Array2<S> {
        let cols = self.cols.take().expect("Conv2d::backward called without forward");
        let gy = self.rows_to_maps(grad);
        self.weight.grad += &cols.t().dot(&gy);
        self.bias.grad += &gy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dcols = gy.dot(&self.weight.value.t());
        self.col2im(&dcols, grad.nrows())
    }
}

impl<S: Scalar> HasParams<S> for Conv2d<S> {
    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    /// Scalar objective Σ w⊙y with fixed random weights; gradient is w.
    fn probe(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
        (y * w).sum()
    }

    fn rand_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = seeded(1);
        let mut layer = Dense::<f64>::new(5, 3, &mut rng);
        let x = rand_matrix(4, 5, 2);
        let w = rand_matrix(4, 3, 3);
        layer.forward(&x);
        let dx = layer.backward(&w);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let num = (probe(&layer.apply(&xp), &w) - probe(&layer.apply(&xm), &w)) / (2.0 * h);
                assert!((num - dx[(i, j)]).abs() < 1e-7);
            }
        }
        let base = layer.clone();
        for i in 0..5 {
            for j in 0..3 {
                let mut lp = base.clone();
                lp.weight.value[(i, j)] += h;
                let mut lm = base.clone();
                lm.weight.value[(i, j)] -= h;
                let num = (probe(&lp.apply(&x), &w) - probe(&lm.apply(&x), &w)) / (2.0 * h);
                assert!((num - base.weight.grad[(i, j)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let g = ConvGeometry {
            in_channels: 2,
            out_channels: 3,
            in_height: 5,
            in_width: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let mut conv = Conv2d::<f64>::new(g, &mut seeded(4));
        let x = rand_matrix(2, g.in_features(), 5);
        let w = rand_matrix(2, g.out_features(), 6);
        conv.forward(&x);
        let dx = conv.backward(&w);
        let h = 1e-6;
        for j in 0..g.in_features() {
            let mut xp = x.clone();
            xp[(1, j)] += h;
            let mut xm = x.clone();
            xm[(1, j)] -= h;
            let num = (probe(&conv.apply(&xp), &w) - probe(&conv.apply(&xm), &w)) / (2.0 * h);
            assert!((num - dx[(1, j)]).abs() < 1e-7, "input {j}");
        }
        let base = conv.clone();
        for i in 0..base.weight.value.nrows() {
            for oc in 0..3 {
                let mut cp = base.clone();
                cp.weight.value[(i, oc)] += h;
                let mut cm = base.clone();
                cm.weight.value[(i, oc)] -= h;
                let num = (probe(&cp.apply(&x), &w) - probe(&cm.apply(&x), &w)) / (2.0 * h);
                assert!((num - base.weight.grad[(i, oc)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let g = ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            in_height: 3,
            in_width: 3,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let mut conv = Conv2d::<f64>::new(g, &mut seeded(0));
        conv.weight.value.fill(1.0);
        let x = Array2::from_shape_vec((1, 9), (1..=9).map(f64::from).collect()).unwrap();
        let y = conv.apply(&x);
        // centre sees all nine, corner sees a 2x2 block
        assert_eq!(y[(0, 4)], 45.0);
        assert_eq!(y[(0, 0)], 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn activation_derivatives() {
        for kind in [Activation::Relu, Activation::Silu] {
            let mut layer = ActivationLayer::<f64>::new(kind);
            let x = Array2::from_shape_vec((1, 4), vec![-1.3, -0.2, 0.4, 2.0]).unwrap();
            layer.forward(&x);
            let g = layer.backward(&Array2::ones((1, 4)));
            for j in 0..4 {
                let h = 1e-6;
                let num = (kind.eval(x[(0, j)] + h) - kind.eval(x[(0, j)] - h)) / (2.0 * h);
                assert!((num - g[(0, j)]).abs() < 1e-6);
            }
        }
    }
}
