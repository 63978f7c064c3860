//! Desk-scale image encoder: a small classifier whose penultimate
//! activations serve as the image embedding (and as FID features).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augcond::ImageEncoder;
use crate::datamodel::{EmbeddingVector, ImageTensor, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, images_to_rows, Adam, ConvNet, ConvNetArch, HasParams, ParamSnapshot};
use crate::scalar::Scalar;
use crate::trainer::batch_loss_and_grad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch: 64,
            lr: 2e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoderNet<S> {
    net: ConvNet<S>,
    id: String,
    trained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub arch: ConvNetArch,
    pub id: String,
    pub params: ParamSnapshot,
}

impl<S: Scalar> ImageEncoderNet<S> {
    /// An encoder with random weights; `encode` refuses to run until trained.
    pub fn untrained(arch: ConvNetArch, rng: &mut impl Rng) -> Self {
        Self {
            net: ConvNet::new(arch, rng),
            id: "untrained".into(),
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn dim(&self) -> usize {
        self.net.feature_dim()
    }

    pub fn net(&self) -> &ConvNet<S> {
        &self.net
    }

    /// Embeddings for a batch of images, one row each.
    pub fn encode_rows(&self, images: &[&ImageTensor<S>]) -> Result<Array2<S>> {
        if !self.trained {
            return Err(Error::Training("image encoder has not been trained".into()));
        }
        let mut out = Array2::zeros((images.len(), self.dim()));
        for (start, chunk) in images.chunks(256).enumerate().map(|(i, c)| (i * 256, c)) {
            let f = self.net.features(&images_to_rows(chunk.iter().copied()));
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&f);
        }
        Ok(out)
    }

    /// Top-1 accuracy of the encoder's own classification head.
    pub fn accuracy(&self, ds: &LabeledDataset<S>) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let imgs: Vec<_> = ds.samples().iter().map(|s| &s.pixels).collect();
        let preds = argmax_rows(&self.net.logits(&images_to_rows(imgs)));
        let hits = preds.iter().zip(ds.samples()).filter(|(p, s)| **p == s.label).count();
        hits as f64 / ds.len() as f64
    }

    pub fn checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint {
            arch: self.net.arch,
            id: self.id.clone(),
            params: self.net.snapshot(),
        }
    }

    pub fn from_checkpoint(ck: &EncoderCheckpoint) -> Result<Self> {
        let mut net = ConvNet::new(ck.arch, &mut crate::rng::seeded(0));
        net.restore(&ck.params)?;
        Ok(Self {
            net,
            id: ck.id.clone(),
            trained: true,
        })
    }
}

impl<S: Scalar> ImageEncoder<S> for ImageEncoderNet<S> {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn encode(&self, x: &ImageTensor<S>) -> Result<EmbeddingVector<S>> {
        let row = self.encode_rows(&[x])?;
        EmbeddingVector::new(row.row(0).to_vec(), self.id.clone())
    }
}

/// Train the encoder as a classifier on the real training split of `ds`.
pub fn train_encoder<S: Scalar>(
    ds: &LabeledDataset<S>,
    cfg: &EncoderTrainConfig,
    rng: &mut impl Rng,
) -> Result<ImageEncoderNet<S>> {
    let train: Vec<_> = ds
        .samples()
        .iter()
        .filter(|s| s.split == Split::Train && s.provenance.is_real())
        .collect();
    let shape = ds
        .image_shape()
        .ok_or_else(|| Error::Data("cannot train an encoder on an empty dataset".into()))?;
    if train.is_empty() {
        return Err(Error::Data("no real training images for the encoder".into()));
    }
    let arch = ConvNetArch::desk(shape, ds.num_classes());
    let mut net = ConvNet::new(arch, rng);
    let mut opt = Adam::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let x = images_to_rows(chunk.iter().map(|&i| &train[i].pixels));
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            net.zero_grad();
            let logits = net.forward(&x);
            let (loss, grad) = batch_loss_and_grad(&logits, &labels, None);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("encoder loss {loss} at epoch {epoch}")));
            }
            net.backward(&grad);
            opt.step(net.params_mut(), cfg.lr);
        }
    }
    let checksum = net.checksum();
    Ok(ImageEncoderNet {
        net,
        id: format!("desk-encoder-{}", &checksum[..12]),
        trained: true,
    })
}
