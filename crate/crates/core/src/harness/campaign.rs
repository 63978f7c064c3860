use serde::{Deserialize, Serialize};

use crate::augcond::{build_conditioning, AugmentationSpec, ImageEncoder};
use crate::curriculum::BalancePlan;
use crate::datamodel::{LabeledDataset, SyntheticCache};
use crate::error::{Error, Result};
use crate::generator::{CachedGenerator, GenerationConfig, GeneratorInterface};
use crate::rng::{child, derive_seed};
use crate::scalar::Scalar;

/// Everything a campaign needs besides the plan and the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub augmentation: AugmentationSpec,
    pub cfg_scale: f64,
    pub steps: usize,
    /// Images requested per generator call.
    pub batch: usize,
    pub seed: u64,
    pub retries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CampaignStats {
    pub requested: usize,
    /// Images produced by the generator in this run, as opposed to read from the cache.
    pub generated: usize,
    pub retries: usize,
}

/// Fulfil `plan` with synthetic images conditioned on the real training
/// images of `real`.
///
/// Job `(k, j)` draws its conditioning from `child(seed, [k, j, 0])` and
/// samples with seed `derive_seed(seed, [k, j, 1])`, so every job is
/// independent of the others and of the cache state. Generated images are
/// stored in `cache` as they are produced; a rerun after a failure resumes
/// from there.
pub fn run_generation_campaign<S: Scalar, E, G>(
    plan: &BalancePlan,
    spec: &CampaignSpec,
    real: &LabeledDataset<S>,
    encoder: &E,
    generator: &G,
    cache: &SyntheticCache,
) -> Result<(LabeledDataset<S>, CampaignStats)>
where
    E: ImageEncoder<S> + ?Sized,
    G: GeneratorInterface<S> + ?Sized,
{
    spec.augmentation.validate()?;
    if plan.quota.len() != real.num_classes() {
        return Err(Error::Config(format!(
            "plan covers {} classes, dataset has {}",
            plan.quota.len(),
            real.num_classes()
        )));
    }
    if spec.batch == 0 {
        return Err(Error::Config("generation batch must be positive".into()));
    }
    let cached = CachedGenerator {
        inner: generator,
        cache,
        class_names: real.class_names().to_vec(),
    };
    let writes_before = cache.stats().writes;
    let mut stats = CampaignStats {
        requested: plan.total(),
        ..Default::default()
    };
    let mut samples = Vec::with_capacity(plan.total());
    for (k, &quota) in plan.quota.iter().enumerate() {
        let jobs = quota.div_ceil(spec.batch);
        for j in 0..jobs {
            let n = spec.batch.min(quota - j * spec.batch);
            let path = [k as u64, j as u64];
            let bundle = build_conditioning(
                &spec.augmentation,
                real,
                k,
                encoder,
                &mut child(spec.seed, &[path[0], path[1], 0]),
            )?;
            let cfg = GenerationConfig {
                cfg_scale: spec.cfg_scale,
                steps: spec.steps,
                seed: derive_seed(spec.seed, &[path[0], path[1], 1]),
                batch: spec.batch,
            };
            let mut attempt = 0;
            let out = loop {
                match cached.generate(&bundle, &cfg) {
                    Err(Error::Retriable { key, reason }) if attempt < spec.retries => {
                        attempt += 1;
                        stats.retries += 1;
                        log::warn!("retrying generation {key} after: {reason}");
                    }
                    other => break other?,
                }
            };
            samples.extend(out.into_iter().take(n));
        }
    }
    stats.generated = cache.stats().writes - writes_before;
    let ds = LabeledDataset::new(real.class_names().to_vec(), samples)?;
    if ds.class_histogram() != plan.quota {
        return Err(Error::Generation("campaign output does not match the plan".into()));
    }
    Ok((ds, stats))
}
