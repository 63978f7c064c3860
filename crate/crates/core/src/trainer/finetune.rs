use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classifier::ClassifierInterface;
use super::loss::batch_loss_and_grad;
use super::scratch::stack_rows;
use crate::curriculum::{mixed_batch_stream, FewShotTrial, MixMode, Source};
use crate::datamodel::{ImageSample, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, images_to_rows, Adam};
use crate::rng::child;
use crate::scalar::Scalar;

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Probability that a slot holds a real image when synthetic data is present.
    #[serde(default = "half")]
    pub real_ratio: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-4,
            batch: 32,
            real_ratio: 0.5,
        }
    }
}

impl FineTuneConfig {
    /// Desk-scale preset: the small head needs a larger step to move in 50 epochs.
    pub fn desk() -> Self {
        Self {
            lr: 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("fine-tune epochs and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("fine-tune learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(Error::Config(format!("real_ratio {} outside [0,1]", self.real_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Highest validation top-1 over all epochs.
    pub best_val_top1: f64,
    pub best_epoch: usize,
    pub val_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub trials: Vec<TrialResult>,
    pub mean: f64,
    /// Unbiased sample variance across trials; 0 for a single trial.
    pub variance: f64,
    pub backbone_checksum: String,
}

pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

fn features_of<S: Scalar, C: ClassifierInterface<S>>(clf: &C, samples: &[&ImageSample<S>]) -> Array2<S> {
    let mut out: Option<Array2<S>> = None;
    for chunk in samples.chunks(256) {
        let f = clf.features(&images_to_rows(chunk.iter().map(|s| &s.pixels)));
        out = Some(match out {
            None => f,
            Some(prev) => ndarray::concatenate![ndarray::Axis(0), prev, f],
        });
    }
    out.unwrap_or_else(|| Array2::zeros((0, 0)))
}

/// Retrain only the last layer of `pretrained` on each few-shot trial.
///
/// Every trial starts from the same backbone with a freshly initialised head.
/// `synth` holds one synthetic set per trial, or is empty for real-only
/// fine-tuning. Each slot of a batch is real with probability
/// `cfg.real_ratio`. An epoch is `⌈(|real| + |synthetic|) / batch⌉` batches.
pub fn finetune_last_layer<S: Scalar, C: ClassifierInterface<S>>(
    pretrained: Option<&C>,
    trials: &[FewShotTrial<S>],
    synth: &[LabeledDataset<S>],
    cfg: &FineTuneConfig,
    rng: &mut impl Rng,
) -> Result<FineTuneReport> {
    cfg.validate()?;
    let base = pretrained.ok_or_else(|| Error::Training("fine-tuning needs a pretrained backbone".into()))?;
    if trials.is_empty() {
        return Err(Error::Config("no few-shot trials to fine-tune on".into()));
    }
    if !synth.is_empty() && synth.len() != trials.len() {
        return Err(Error::Config(format!(
            "{} synthetic sets for {} trials",
            synth.len(),
            trials.len()
        )));
    }
    let checksum = base.backbone_checksum();
    let run_seed: u64 = rng.random();
    let mut results = Vec::with_capacity(trials.len());

    for (ti, trial) in trials.iter().enumerate() {
        let ds = &trial.dataset;
        let k = ds.num_classes();
        let mut clf = base.clone();
        let mut trng = child(run_seed, &[trial.seed]);
        clf.reset_head(k, &mut trng);

        let real: Vec<_> = ds
            .samples()
            .iter()
            .filter(|s| s.split == Split::Train && s.provenance.is_real())
            .collect();
        let val: Vec<_> = ds.samples().iter().filter(|s| s.split == Split::Val).collect();
        let syn: Vec<_> = synth
            .get(ti)
            .map(|d| d.samples().iter().filter(|s| s.split == Split::Train).collect())
            .unwrap_or_default();
        if real.is_empty() || val.is_empty() {
            return Err(Error::Data(format!("trial {} lacks training or validation images", trial.trial)));
        }
        let real_f = features_of(&clf, &real);
        let syn_f = features_of(&clf, &syn);
        let val_f = features_of(&clf, &val);
        let real_y: Vec<usize> = real.iter().map(|s| s.label).collect();
        let syn_y: Vec<usize> = syn.iter().map(|s| s.label).collect();
        let val_y: Vec<usize> = val.iter().map(|s| s.label).collect();

        let ratio = if syn.is_empty() { 1.0 } else { cfg.real_ratio };
        let mut stream = mixed_batch_stream(
            real.len(),
            syn.len(),
            cfg.batch,
            MixMode::Stochastic,
            ratio,
            child(run_seed, &[trial.seed, 1]),
        )?;
        let per_epoch = (real.len() + syn.len()).div_ceil(cfg.batch);
        let mut opt = Adam::default();
        let mut val_history = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            for _ in 0..per_epoch {
                let batch = stream.next().expect("stream is endless");
                let ri: Vec<usize> = batch.iter().filter(|(s, _)| *s == Source::Real).map(|&(_, i)| i).collect();
                let si: Vec<usize> = batch
                    .iter()
                    .filter(|(s, _)| *s == Source::Synthetic)
                    .map(|&(_, i)| i)
                    .collect();
                let x = stack_rows(&real_f, &ri, &syn_f, &si);
                let labels: Vec<usize> = ri.iter().map(|&i| real_y[i]).chain(si.iter().map(|&i| syn_y[i])).collect();
                for p in clf.head_params_mut() {
                    p.zero_grad();
                }
                let logits = clf.head_forward(&x);
                let (loss, grad) = batch_loss_and_grad(&logits, &labels, None);
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "fine-tune loss {loss} in trial {} epoch {epoch}",
                        trial.trial
                    )));
                }
                clf.head_backward(&grad);
                opt.step(clf.head_params_mut(), cfg.lr);
            }
            let preds = argmax_rows(&clf.head_logits(&val_f));
            let acc = preds.iter().zip(&val_y).filter(|(p, y)| p == y).count() as f64 / val_y.len() as f64;
            val_history.push(acc);
        }
        if clf.backbone_checksum() != checksum {
            return Err(Error::Training("fine-tuning modified the backbone".into()));
        }
        let (best_epoch, best) = val_history
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
        results.push(TrialResult {
            trial: trial.trial,
            seed: trial.seed,
            best_val_top1: best,
            best_epoch,
            val_history,
        });
    }
    let (mean, variance) = mean_and_variance(&results.iter().map(|r| r.best_val_top1).collect::<Vec<_>>());
    Ok(FineTuneReport {
        trials: results,
        mean,
        variance,
        backbone_checksum: checksum,
    })
}
