use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{CondBatch, Denoiser, DenoiserConfig};
use super::encoder::ImageEncoderNet;
use super::schedule::NoiseSchedule;
use crate::datamodel::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{images_to_rows, Adam, HasParams};
use crate::scalar::Scalar;

/// Per-timestep weight on the clean-image error `‖x̂₀ − x₀‖²`.
///
/// `Epsilon` weights by the signal-to-noise ratio ᾱ/(1−ᾱ), which makes the
/// loss equal to the noise-prediction error `‖ε − ε̂‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LossWeighting {
    Epsilon,
    /// `min(SNR, gamma)`.
    MinSnr { gamma: f64 },
    Uniform,
}

impl Default for LossWeighting {
    fn default() -> Self {
        LossWeighting::MinSnr { gamma: 5.0 }
    }
}

impl LossWeighting {
    pub fn weight(self, alpha_bar: f64) -> f64 {
        let snr = alpha_bar / (1.0 - alpha_bar);
        match self {
            LossWeighting::Epsilon => snr,
            LossWeighting::MinSnr { gamma } => snr.min(gamma),
            LossWeighting::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(default)]
    pub weighting: LossWeighting,
    /// Fraction of conditioned examples whose embedding goes through inverted
    /// dropout with a rate drawn uniformly from [0, `embedding_dropout_max`).
    #[serde(default)]
    pub embedding_dropout: f64,
    #[serde(default = "default_dropout_max")]
    pub embedding_dropout_max: f64,
}

fn default_dropout_max() -> f64 {
    0.7
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 64,
            lr: 1e-3,
            weighting: LossWeighting::default(),
            embedding_dropout: 0.0,
            embedding_dropout_max: default_dropout_max(),
        }
    }
}

/// Per-epoch record of a denoiser training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of examples trained with the null conditioning.
    pub null_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser<S> {
    pub denoiser: Denoiser<S>,
    pub schedule: NoiseSchedule,
    pub history: Vec<GeneratorEpoch>,
}

/// Fit the denoiser to the real training images of `ds`, conditioned on the
/// encoder's embedding of each image and its class.
pub fn train_generator<S: Scalar>(
    ds: &LabeledDataset<S>,
    encoder: &ImageEncoderNet<S>,
    denoiser_cfg: DenoiserConfig,
    schedule: &NoiseSchedule,
    cfg: &GeneratorTrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainedDenoiser<S>> {
    denoiser_cfg.validate()?;
    let train: Vec<_> = ds
        .samples()
        .iter()
        .filter(|s| s.split == Split::Train && s.provenance.is_real())
        .collect();
    let hist = ds.filter(|s| s.split == Split::Train && s.provenance.is_real()).class_histogram();
    if let Some(k) = hist.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {k} has no training images for the generator")));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("generator batch must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.embedding_dropout) {
        return Err(Error::Config(format!("embedding_dropout {} outside [0,1]", cfg.embedding_dropout)));
    }
    if !(0.0..1.0).contains(&cfg.embedding_dropout_max) {
        return Err(Error::Config(format!("embedding_dropout_max {} outside [0,1)", cfg.embedding_dropout_max)));
    }
    let images: Vec<_> = train.iter().map(|s| &s.pixels).collect();
    let x0_all = images_to_rows(images.iter().copied());
    let emb_all = encoder.encode_rows(&images)?;
    let labels_all: Vec<usize> = train.iter().map(|s| s.label).collect();

    let mut den = Denoiser::new(denoiser_cfg, rng)?;
    let mut opt = Adam::default();
    let t_max = schedule.len();
    let sqrt_ab: Vec<f64> = schedule.alpha_bars().iter().map(|a| a.sqrt()).collect();
    let sqrt_1mab: Vec<f64> = schedule.alpha_bars().iter().map(|a| (1.0 - a).sqrt()).collect();
    let weights: Vec<f64> = schedule.alpha_bars().iter().map(|&a| cfg.weighting.weight(a)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let p = denoiser_cfg.image.len();

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut loss_sum, mut nulls) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let t: Vec<usize> = (0..b).map(|_| rng.random_range(0..t_max)).collect();
            let eps = Array2::<S>::from_shape_fn((b, p), |_| S::of(rng.sample::<f64, _>(StandardNormal)));
            let null: Vec<bool> = (0..b).map(|_| rng.random::<f64>() < denoiser_cfg.null_prob).collect();
            nulls += null.iter().filter(|&&n| n).count();
            let mut xt = Array2::<S>::zeros((b, p));
            let mut emb = Array2::<S>::zeros((b, emb_all.ncols()));
            let mut labels = Vec::with_capacity(b);
            let mut x0 = Array2::<S>::zeros((b, p));
            for (r, &i) in chunk.iter().enumerate() {
                x0.row_mut(r).assign(&x0_all.row(i));
                let (a, c) = (S::of(sqrt_ab[t[r]]), S::of(sqrt_1mab[t[r]]));
                let mut row = xt.row_mut(r);
                row.assign(&x0_all.row(i));
                row.zip_mut_with(&eps.row(r), |x, &e| *x = a * *x + c * e);
                emb.row_mut(r).assign(&emb_all.row(i));
                if cfg.embedding_dropout > 0.0 && rng.random::<f64>() < cfg.embedding_dropout {
                    let rate = rng.random::<f64>() * cfg.embedding_dropout_max;
                    let keep = S::of(1.0 / (1.0 - rate));
                    emb.row_mut(r)
                        .mapv_inplace(|v| if rng.random::<f64>() < rate { S::zero() } else { v * keep });
                }
                labels.push(labels_all[i]);
            }
            let cond = CondBatch { embeddings: &emb, labels: &labels, null: &null };
            den.zero_grad();
            let (pred, tape) = den.forward(&xt, &t, &cond)?;
            let mut grad = &pred - &x0;
            let mut loss = 0.0;
            for (r, mut row) in grad.rows_mut().into_iter().enumerate() {
                let w = weights[t[r]];
                loss += w * row.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
                let scale = S::of(2.0 * w / (b * p) as f64);
                row.mapv_inplace(|v| v * scale);
            }
            let loss = loss / (b * p) as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("denoiser loss {loss} at epoch {epoch}")));
            }
            den.backward(tape, &grad);
            opt.step(den.params_mut(), cfg.lr);
            loss_sum += loss * b as f64;
        }
        let n = train.len() as f64;
        let rec = GeneratorEpoch {
            epoch,
            loss: loss_sum / n,
            null_fraction: nulls as f64 / n,
        };
        log::info!("generator epoch {epoch}: loss {:.5} null {:.3}", rec.loss, rec.null_fraction);
        history.push(rec);
    }
    Ok(TrainedDenoiser {
        denoiser: den,
        schedule: schedule.clone(),
        history,
    })
}
