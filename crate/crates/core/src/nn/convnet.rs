use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, ActivationLayer, ConvGeometry, Conv2d, Dense};
use super::param::{HasParams, Param};
use crate::datamodel::{ImageShape, ImageTensor};
use crate::scalar::Scalar;

/// Stack `images` as rows in channel-major order, mapped from [0,1] to [−1,1].
pub fn images_to_rows<'a, S: Scalar>(images: impl IntoIterator<Item = &'a ImageTensor<S>>) -> Array2<S> {
    let images: Vec<&ImageTensor<S>> = images.into_iter().collect();
    let Some(first) = images.first() else {
        return Array2::zeros((0, 0));
    };
    let shape = first.shape();
    let plane = shape.height * shape.width;
    let (two, one) = (S::of(2.0), S::one());
    let mut rows = Array2::zeros((images.len(), shape.len()));
    for (r, img) in images.iter().enumerate() {
        let mut row = rows.row_mut(r);
        for (i, &v) in img.data().iter().enumerate() {
            let (p, c) = (i / shape.channels, i % shape.channels);
            row[c * plane + p] = v * two - one;
        }
    }
    rows
}

/// Inverse of [`images_to_rows`] for one row, clipping to [0,1].
pub fn row_to_image<S: Scalar>(row: ndarray::ArrayView1<S>, shape: ImageShape) -> ImageTensor<S> {
    let plane = shape.height * shape.width;
    let half = S::of(0.5);
    let mut data = vec![S::zero(); shape.len()];
    for (i, d) in data.iter_mut().enumerate() {
        let (p, c) = (i / shape.channels, i % shape.channels);
        let v = (row[c * plane + p] + S::one()) * half;
        *d = if v.is_nan() { S::zero() } else { v.max(S::zero()).min(S::one()) };
    }
    ImageTensor::new(shape, data).expect("row length matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNetArch {
    pub image: ImageShape,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl ConvNetArch {
    pub fn desk(image: ImageShape, num_classes: usize) -> Self {
        Self {
            image,
            conv1: 8,
            conv2: 16,
            hidden: 64,
            num_classes,
        }
    }
}

/// conv(3×3, stride 2) → ReLU → conv(3×3, stride 2) → ReLU → dense → ReLU → linear head.
///
/// The ReLU output of the hidden dense layer is the feature/embedding vector.
#[derive(Debug, Clone)]
pub struct ConvNet<S> {
    pub arch: ConvNetArch,
    conv1: Conv2d<S>,
    act1: ActivationLayer<S>,
    conv2: Conv2d<S>,
    act2: ActivationLayer<S>,
    dense: Dense<S>,
    act3: ActivationLayer<S>,
    head: Dense<S>,
}

impl<S: Scalar> ConvNet<S> {
    pub fn new(arch: ConvNetArch, rng: &mut impl Rng) -> Self {
        let g1 = ConvGeometry {
            in_channels: arch.image.channels,
            out_channels: arch.conv1,
            in_height: arch.image.height,
            in_width: arch.image.width,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let g2 = ConvGeometry {
            in_channels: arch.conv1,
            out_channels: arch.conv2,
            in_height: g1.out_height(),
            in_width: g1.out_width(),
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let conv1 = Conv2d::new(g1, rng);
        let conv2 = Conv2d::new(g2, rng);
        let dense = Dense::new(g2.out_features(), arch.hidden, rng);
        let mut head = Dense::new(arch.hidden, arch.num_classes, rng);
        head.weight.value.mapv_inplace(|w| w * S::of(0.5));
        Self {
            arch,
            conv1,
            act1: ActivationLayer::new(Activation::Relu),
            conv2,
            act2: ActivationLayer::new(Activation::Relu),
            dense,
            act3: ActivationLayer::new(Activation::Relu),
            head,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// Penultimate features, no caching.
    pub fn features(&self, x: &Array2<S>) -> Array2<S> {
        let h = Activation::Relu.apply(&self.conv1.apply(x));
        let h = Activation::Relu.apply(&self.conv2.apply(&h));
        Activation::Relu.apply(&self.dense.apply(&h))
    }

    pub fn head_apply(&self, features: &Array2<S>) -> Array2<S> {
        self.head.apply(features)
    }

    pub fn logits(&self, x: &Array2<S>) -> Array2<S> {
        self.head.apply(&self.features(x))
    }

    /// Training forward pass through every layer.
    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        let h = self.conv1.forward(x);
        let h = self.act1.forward(&h);
        let h = self.conv2.forward(&h);
        let h = self.act2.forward(&h);
        let h = self.dense.forward(&h);
        let h = self.act3.forward(&h);
        self.head.forward(&h)
    }

    pub fn backward(&mut self, grad_logits: &Array2<S>) {
        let g = self.head.backward(grad_logits);
        let g = self.act3.backward(&g);
        let g = self.dense.backward(&g);
        let g = self.act2.backward(&g);
        let g = self.conv2.backward(&g);
        let g = self.act1.backward(&g);
        self.conv1.backward(&g);
    }

    /// Forward through the head only, from precomputed features.
    pub fn head_forward(&mut self, features: &Array2<S>) -> Array2<S> {
        self.head.forward(features)
    }

    pub fn head_backward(&mut self, grad_logits: &Array2<S>) {
        self.head.backward(grad_logits);
    }

    pub fn head_params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.head.params_mut()
    }

    pub fn backbone_params(&self) -> Vec<&Param<S>> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v.extend(self.dense.params());
        v
    }

    /// Replace the head with a freshly initialised one for `num_classes` outputs.
    pub fn reset_head(&mut self, num_classes: usize, rng: &mut impl Rng) {
        self.arch.num_classes = num_classes;
        self.head = Dense::new(self.arch.hidden, num_classes, rng);
        self.head.weight.value.mapv_inplace(|w| w * S::of(0.5));
    }
}

impl<S: Scalar> HasParams<S> for ConvNet<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.backbone_params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v.extend(self.dense.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}
