use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{split_accuracy, ClassifierInterface, EpochMetrics};
use super::loss::{batch_loss_and_grad, LossKind};
use crate::curriculum::{mixed_batch_stream, MixMode, Source};
use crate::datamodel::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{images_to_rows, LrSchedule, Sgd};
use crate::rng::seeded;
use crate::scalar::Scalar;

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub loss: LossKind,
    /// Share of each batch drawn from real images when synthetic data is present.
    #[serde(default = "half")]
    pub real_ratio: f64,
}

impl TrainConfig {
    /// Large-scale preset: ResNeXt-sized runs.
    pub fn full_scale() -> Self {
        Self {
            epochs: 150,
            batch: 512,
            lr: 0.2,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::CosineAnneal,
            loss: LossKind::BalancedSoftmax,
            real_ratio: 0.5,
        }
    }

    /// Desk-scale preset for the small convolutional classifier.
    pub fn desk() -> Self {
        Self {
            epochs: 12,
            batch: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::CosineAnneal,
            loss: LossKind::BalancedSoftmax,
            real_ratio: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0,1) and weight decay be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(Error::Config(format!("real_ratio {} outside [0,1]", self.real_ratio)));
        }
        Ok(())
    }
}

/// Log label prior of the training stream. With a synthetic pool, a batch
/// draws real images with probability `r` and synthetic ones otherwise, so
/// class `k` appears at rate `r·n_k/N + (1−r)·q_k/Q`.
pub fn stream_log_prior<S: Scalar>(real_counts: &[usize], synth_counts: &[usize], real_ratio: f64) -> Result<Vec<S>> {
    let n: usize = real_counts.iter().sum();
    let q: usize = synth_counts.iter().sum();
    let (wr, ws) = match (n, q) {
        (0, 0) => return Err(Error::Data("no training images".into())),
        (_, 0) => (1.0, 0.0),
        (0, _) => (0.0, 1.0),
        _ => (real_ratio, 1.0 - real_ratio),
    };
    real_counts
        .iter()
        .zip(synth_counts)
        .enumerate()
        .map(|(k, (&a, &b))| {
            let mut f = 0.0;
            if n > 0 {
                f += wr * a as f64 / n as f64;
            }
            if q > 0 {
                f += ws * b as f64 / q as f64;
            }
            if f <= 0.0 {
                Err(Error::Data(format!("class {k} never appears in the training stream")))
            } else {
                Ok(S::of(f.ln()))
            }
        })
        .collect()
}

fn class_counts<S: Scalar>(samples: &[&crate::datamodel::ImageSample<S>], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for s in samples {
        c[s.label] += 1;
    }
    c
}

/// Train every parameter of `clf` on real and synthetic training images.
///
/// Batches mix the two pools at `cfg.real_ratio` with a fixed split per batch.
/// An epoch is `⌈(|real| + |synthetic|) / batch⌉` batches. Validation top-1 is
/// measured on `real`'s validation split after each epoch. When `metric_log`
/// is given, one JSON record per epoch is appended to it.
pub fn train_from_scratch<S: Scalar, C: ClassifierInterface<S>>(
    clf: &mut C,
    real: &LabeledDataset<S>,
    synth: &LabeledDataset<S>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    metric_log: Option<&Path>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let k = clf.num_classes();
    if real.num_classes() != k {
        return Err(Error::Data(format!(
            "classifier has {k} outputs, dataset has {} classes",
            real.num_classes()
        )));
    }
    let real_train: Vec<_> = real
        .samples()
        .iter()
        .filter(|s| s.split == Split::Train && s.provenance.is_real())
        .collect();
    let synth_train: Vec<_> = synth.samples().iter().filter(|s| s.split == Split::Train).collect();
    if real_train.is_empty() {
        return Err(Error::Data("no real training images".into()));
    }
    if synth_train.iter().any(|s| s.label >= k) {
        return Err(Error::Data("synthetic label out of range".into()));
    }
    let real_ratio = if synth_train.is_empty() { 1.0 } else { cfg.real_ratio };
    let shift = match cfg.loss {
        LossKind::BalancedSoftmax => Some(stream_log_prior::<S>(
            &class_counts(&real_train, k),
            &class_counts(&synth_train, k),
            real_ratio,
        )?),
        LossKind::CrossEntropy => None,
    };

    let real_x = images_to_rows(real_train.iter().map(|s| &s.pixels));
    let real_y: Vec<usize> = real_train.iter().map(|s| s.label).collect();
    let synth_x = images_to_rows(synth_train.iter().map(|s| &s.pixels));
    let synth_y: Vec<usize> = synth_train.iter().map(|s| s.label).collect();

    let mut stream = mixed_batch_stream(
        real_train.len(),
        synth_train.len(),
        cfg.batch,
        MixMode::Deterministic,
        real_ratio,
        seeded(rng.random()),
    )?;
    let per_epoch = (real_train.len() + synth_train.len()).div_ceil(cfg.batch);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate(cfg.lr, epoch, cfg.epochs);
        let mut loss_sum = 0.0;
        for b in 0..per_epoch {
            let batch = stream.next().expect("stream is endless");
            let (ri, si): (Vec<_>, Vec<_>) = batch.iter().partition(|(src, _)| *src == Source::Real);
            let ri: Vec<usize> = ri.into_iter().map(|&(_, i)| i).collect();
            let si: Vec<usize> = si.into_iter().map(|&(_, i)| i).collect();
            let x = stack_rows(&real_x, &ri, &synth_x, &si);
            let labels: Vec<usize> = ri.iter().map(|&i| real_y[i]).chain(si.iter().map(|&i| synth_y[i])).collect();
            clf.zero_grad();
            let logits = clf.forward_train(&x);
            let (loss, grad) = batch_loss_and_grad(&logits, &labels, shift.as_deref());
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "classifier loss {loss} at epoch {epoch}, batch {b}, lr {lr}"
                )));
            }
            clf.backward(&grad);
            opt.step(clf.params_mut(), lr);
            loss_sum += loss;
        }
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / per_epoch as f64,
            val_top1: split_accuracy(clf, real, Split::Val),
        };
        log::info!("epoch {epoch}: loss {:.4} val {:?}", m.train_loss, m.val_top1);
        if let Some(path) = metric_log {
            append_jsonl(path, &m)?;
        }
        history.push(m);
    }
    Ok(history)
}

/// Rows `a[ia]` followed by rows `b[ib]`.
pub(crate) fn stack_rows<S: Scalar>(a: &Array2<S>, ia: &[usize], b: &Array2<S>, ib: &[usize]) -> Array2<S> {
    match (ia.is_empty(), ib.is_empty()) {
        (_, true) => a.select(Axis(0), ia),
        (true, false) => b.select(Axis(0), ib),
        (false, false) => {
            ndarray::concatenate![Axis(0), a.select(Axis(0), ia), b.select(Axis(0), ib)]
        }
    }
}

pub(crate) fn append_jsonl(path: &Path, record: &impl Serialize) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serialises");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
