//! Long-tail subsets, synthetic balance plans, few-shot trials and the
//! mixed real/synthetic batch stream.

mod stream;

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

pub use stream::{mixed_batch_stream, MixMode, MixedBatchStream, Source};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTailProfile {
    pub targets: Vec<usize>,
    pub min_count: usize,
    pub max_count: usize,
}

impl LongTailProfile {
    pub fn new(targets: Vec<usize>, min_count: usize, max_count: usize) -> Result<Self> {
        let p = Self {
            targets,
            min_count,
            max_count,
        };
        p.validate()?;
        Ok(p)
    }

    /// Ten classes: three at 100, three between 20 and 60, four at 5.
    pub fn desk() -> Self {
        Self {
            targets: vec![100, 100, 100, 60, 40, 20, 5, 5, 5, 5],
            min_count: 5,
            max_count: 100,
        }
    }

    /// Geometric decay from `max` for class 0 to `min` for the last class.
    pub fn exponential(classes: usize, max: usize, min: usize) -> Result<Self> {
        if classes == 0 || min == 0 || min > max {
            return Err(Error::Config(format!("bad exponential profile: {classes} classes, {min}..{max}")));
        }
        let ratio = min as f64 / max as f64;
        let targets = (0..classes)
            .map(|k| {
                let e = if classes == 1 { 0.0 } else { k as f64 / (classes - 1) as f64 };
                ((max as f64 * ratio.powf(e)).round() as usize).clamp(min, max)
            })
            .collect();
        Self::new(targets, min, max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("long-tail profile has no classes".into()));
        }
        if self.min_count > self.max_count {
            return Err(Error::Config("profile min_count exceeds max_count".into()));
        }
        if let Some((k, t)) = self
            .targets
            .iter()
            .enumerate()
            .find(|(_, &t)| t < self.min_count || t > self.max_count || t == 0)
        {
            return Err(Error::Config(format!(
                "profile target {t} for class {k} outside [{}, {}]",
                self.min_count, self.max_count
            )));
        }
        Ok(())
    }
}

/// Keep exactly `profile.targets[k]` real training images of every class,
/// chosen uniformly without replacement. Other splits pass through unchanged.
pub fn build_longtail_subset<S: Scalar>(
    ds: &LabeledDataset<S>,
    profile: &LongTailProfile,
    rng: &mut impl Rng,
) -> Result<LabeledDataset<S>> {
    profile.validate()?;
    if profile.targets.len() != ds.num_classes() {
        return Err(Error::Config(format!(
            "profile has {} classes, dataset has {}",
            profile.targets.len(),
            ds.num_classes()
        )));
    }
    let mut keep = HashSet::new();
    for (k, &target) in profile.targets.iter().enumerate() {
        let pool = ds.real_train_of_class(k);
        if target > pool.len() {
            return Err(Error::Data(format!(
                "class {k} ({}) has {} training images, profile asks for {target}",
                ds.class_names()[k],
                pool.len()
            )));
        }
        for i in sample(rng, pool.len(), target) {
            keep.insert(pool[i].id.clone());
        }
    }
    Ok(ds.filter(|s| s.split != Split::Train || keep.contains(&s.id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Many,
    Medium,
    Few,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Many, Category::Medium, Category::Few];

    pub fn name(self) -> &'static str {
        match self {
            Category::Many => "many",
            Category::Medium => "medium",
            Category::Few => "few",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryThresholds {
    /// Smallest count that is many-shot.
    pub many_min: usize,
    /// Counts strictly below this are few-shot.
    pub few_max: usize,
}

impl Default for CategoryThresholds {
    fn default() -> Self {
        Self {
            many_min: 100,
            few_max: 20,
        }
    }
}

impl CategoryThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.few_max >= self.many_min {
            return Err(Error::Config(format!(
                "few_max {} must be below many_min {}",
                self.few_max, self.many_min
            )));
        }
        Ok(())
    }
}

pub fn categorize_class(count: usize, thresholds: &CategoryThresholds) -> Category {
    if count >= thresholds.many_min {
        Category::Many
    } else if count < thresholds.few_max {
        Category::Few
    } else {
        Category::Medium
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub quota: Vec<usize>,
    pub target: usize,
}

impl BalancePlan {
    pub fn total(&self) -> usize {
        self.quota.iter().sum()
    }

    pub fn zero(classes: usize, target: usize) -> Self {
        Self {
            quota: vec![0; classes],
            target,
        }
    }
}

/// Quotas lifting each class of `real_counts` to `target`.
pub fn plan_balance_counts(real_counts: &[usize], target: usize) -> Result<BalancePlan> {
    if target == 0 {
        return Err(Error::Config("balance target must be positive".into()));
    }
    let quota = real_counts
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            target.checked_sub(n).ok_or_else(|| {
                Error::Config(format!("class {k} already has {n} real images, above target {target}"))
            })
        })
        .collect::<Result<_>>()?;
    Ok(BalancePlan { quota, target })
}

/// Balance plan over the real training images of `ds`.
pub fn plan_balance<S: Scalar>(ds: &LabeledDataset<S>, target: usize) -> Result<BalancePlan> {
    plan_balance_counts(&real_train_counts(ds), target)
}

/// Per-class count of real training images.
pub fn real_train_counts<S: Scalar>(ds: &LabeledDataset<S>) -> Vec<usize> {
    let mut counts = vec![0; ds.num_classes()];
    for s in ds.samples() {
        if s.split == Split::Train && s.provenance.is_real() {
            counts[s.label] += 1;
        }
    }
    counts
}

pub const STANDARD_SHOTS: [usize; 5] = [1, 2, 4, 8, 16];

fn default_trials() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub shots: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Permit shot counts outside the standard set.
    #[serde(default)]
    pub allow_nonstandard: bool,
}

impl FewShotSpec {
    pub fn new(shots: usize) -> Self {
        Self {
            shots,
            trials: default_trials(),
            allow_nonstandard: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.shots == 0 {
            return Err(Error::Config("few-shot shots and trials must be positive".into()));
        }
        if !self.allow_nonstandard && !STANDARD_SHOTS.contains(&self.shots) {
            return Err(Error::Config(format!(
                "shots {} not in {:?}; set allow_nonstandard to override",
                self.shots, STANDARD_SHOTS
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FewShotTrial<S> {
    pub trial: usize,
    pub seed: u64,
    /// `shots` training images per class plus every non-training sample.
    pub dataset: LabeledDataset<S>,
}

/// Independent few-shot draws, one per trial, each with its own recorded seed.
pub fn make_fewshot_subsets<S: Scalar>(
    ds: &LabeledDataset<S>,
    spec: &FewShotSpec,
    rng: &mut impl Rng,
) -> Result<Vec<FewShotTrial<S>>> {
    spec.validate()?;
    for k in 0..ds.num_classes() {
        let n = ds.real_train_of_class(k).len();
        if n < spec.shots {
            return Err(Error::Data(format!(
                "class {k} has {n} training images, {}-shot needs {}",
                spec.shots, spec.shots
            )));
        }
    }
    let base: u64 = rng.random();
    (0..spec.trials)
        .map(|trial| {
            let seed = derive_seed(base, &[trial as u64]);
            let profile = LongTailProfile::new(vec![spec.shots; ds.num_classes()], spec.shots, spec.shots)?;
            let dataset = build_longtail_subset(ds, &profile, &mut crate::rng::seeded(seed))?;
            Ok(FewShotTrial { trial, seed, dataset })
        })
        .collect()
}
