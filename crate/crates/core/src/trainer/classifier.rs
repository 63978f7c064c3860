use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{ImageTensor, LabeledDataset, Split};
use crate::error::Result;
use crate::nn::{argmax_rows, images_to_rows, ConvNet, ConvNetArch, HasParams, Param, ParamSnapshot};
use crate::scalar::Scalar;

/// A K-way image classifier split into a backbone and a linear head.
pub trait ClassifierInterface<S: Scalar>: HasParams<S> + Clone {
    fn num_classes(&self) -> usize;
    /// Inference logits, one row of K per input row.
    fn logits(&self, x: &Array2<S>) -> Array2<S>;
    fn features(&self, x: &Array2<S>) -> Array2<S>;
    fn forward_train(&mut self, x: &Array2<S>) -> Array2<S>;
    fn backward(&mut self, grad_logits: &Array2<S>);
    fn head_logits(&self, features: &Array2<S>) -> Array2<S>;
    fn head_forward(&mut self, features: &Array2<S>) -> Array2<S>;
    fn head_backward(&mut self, grad_logits: &Array2<S>);
    /// Parameters updated by last-layer fine-tuning.
    fn head_params_mut(&mut self) -> Vec<&mut Param<S>>;
    fn backbone_checksum(&self) -> String;
    fn reset_head(&mut self, num_classes: usize, rng: &mut impl Rng);
}

impl<S: Scalar> ClassifierInterface<S> for ConvNet<S> {
    fn num_classes(&self) -> usize {
        ConvNet::num_classes(self)
    }

    fn logits(&self, x: &Array2<S>) -> Array2<S> {
        ConvNet::logits(self, x)
    }

    fn features(&self, x: &Array2<S>) -> Array2<S> {
        ConvNet::features(self, x)
    }

    fn forward_train(&mut self, x: &Array2<S>) -> Array2<S> {
        self.forward(x)
    }

    fn backward(&mut self, grad_logits: &Array2<S>) {
        ConvNet::backward(self, grad_logits)
    }

    fn head_logits(&self, features: &Array2<S>) -> Array2<S> {
        self.head_apply(features)
    }

    fn head_forward(&mut self, features: &Array2<S>) -> Array2<S> {
        ConvNet::head_forward(self, features)
    }

    fn head_backward(&mut self, grad_logits: &Array2<S>) {
        ConvNet::head_backward(self, grad_logits)
    }

    fn head_params_mut(&mut self) -> Vec<&mut Param<S>> {
        ConvNet::head_params_mut(self)
    }

    fn backbone_checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.backbone_params() {
            for v in p.value.iter() {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn reset_head(&mut self, num_classes: usize, rng: &mut impl Rng) {
        ConvNet::reset_head(self, num_classes, rng)
    }
}

/// Predicted class for each image, evaluated in chunks.
pub fn predict<S: Scalar, C: ClassifierInterface<S>>(clf: &C, images: &[&ImageTensor<S>]) -> Vec<usize> {
    images
        .chunks(256)
        .flat_map(|chunk| argmax_rows(&clf.logits(&images_to_rows(chunk.iter().copied()))))
        .collect()
}

/// Top-1 accuracy on the samples of `split`, or `None` if the split is empty.
pub fn split_accuracy<S: Scalar, C: ClassifierInterface<S>>(
    clf: &C,
    ds: &LabeledDataset<S>,
    split: Split,
) -> Option<f64> {
    let samples: Vec<_> = ds.samples().iter().filter(|s| s.split == split).collect();
    if samples.is_empty() {
        return None;
    }
    let imgs: Vec<_> = samples.iter().map(|s| &s.pixels).collect();
    let preds = predict(clf, &imgs);
    let hits = preds.iter().zip(&samples).filter(|(p, s)| **p == s.label).count();
    Some(hits as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_top1: Option<f64>,
}

/// Weights plus everything needed to reproduce them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    pub arch: ConvNetArch,
    pub params: ParamSnapshot,
    pub config: serde_json::Value,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
}

impl ClassifierCheckpoint {
    pub fn new<S: Scalar>(
        net: &ConvNet<S>,
        config: &impl Serialize,
        seed: u64,
        history: Vec<EpochMetrics>,
    ) -> Self {
        Self {
            arch: net.arch,
            params: net.snapshot(),
            config: serde_json::to_value(config).expect("config serialises"),
            seed,
            history,
        }
    }

    pub fn restore<S: Scalar>(&self) -> Result<ConvNet<S>> {
        let mut net = ConvNet::new(self.arch, &mut crate::rng::seeded(0));
        net.restore(&self.params)?;
        Ok(net)
    }
}
