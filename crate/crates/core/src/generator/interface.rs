use sha2::{Digest, Sha256};

use super::denoiser::{Denoiser, DenoiserCheckpoint};
use super::sampler::{sample_cfg, GenerationConfig};
use super::schedule::NoiseSchedule;
use super::training::TrainedDenoiser;
use crate::augcond::ConditioningBundle;
use crate::datamodel::{CacheKey, ImageSample, ImageTensor, Provenance, Split, SyntheticCache};
use crate::error::{Error, Result};
use crate::nn::HasParams;
use crate::scalar::Scalar;

/// Anything that turns a conditioning bundle into labelled synthetic images.
pub trait GeneratorInterface<S: Scalar> {
    /// Fingerprint of the weights or endpoint; part of every cache key.
    fn generator_id(&self) -> String;

    /// Produce exactly `cfg.batch` images of the bundle's class.
    fn generate(&self, bundle: &ConditioningBundle<S>, cfg: &GenerationConfig) -> Result<Vec<ImageSample<S>>>;
}

impl<S: Scalar, G: GeneratorInterface<S> + ?Sized> GeneratorInterface<S> for &G {
    fn generator_id(&self) -> String {
        (**self).generator_id()
    }

    fn generate(&self, bundle: &ConditioningBundle<S>, cfg: &GenerationConfig) -> Result<Vec<ImageSample<S>>> {
        (**self).generate(bundle, cfg)
    }
}

fn embedding_digest<S: Scalar>(bundle: &ConditioningBundle<S>) -> String {
    let mut h = Sha256::new();
    h.update(bundle.image_embedding.encoder_id().as_bytes());
    for v in bundle.image_embedding.values() {
        h.update(v.to_f64_lossy().to_bits().to_le_bytes());
    }
    h.update(bundle.class_label.to_le_bytes());
    hex::encode(&h.finalize()[..12])
}

/// Cache key of image `index` in the batch generated for `bundle` under `cfg`.
pub fn image_key<S: Scalar>(
    generator_id: &str,
    bundle: &ConditioningBundle<S>,
    cfg: &GenerationConfig,
    index: usize,
) -> CacheKey {
    CacheKey {
        method: bundle.method.clone(),
        source_ids: bundle.source_ids.clone(),
        seed: cfg.seed,
        cfg_scale: cfg.cfg_scale,
        steps: cfg.steps,
        generator_id: generator_id.to_string(),
        extra: format!("x={};i={index}", embedding_digest(bundle)),
    }
}

/// Wrap generated pixels as training samples with synthetic provenance.
pub fn synthetic_samples<S: Scalar>(
    generator_id: &str,
    bundle: &ConditioningBundle<S>,
    cfg: &GenerationConfig,
    images: Vec<ImageTensor<S>>,
) -> Result<Vec<ImageSample<S>>> {
    if images.len() != cfg.batch {
        return Err(Error::Generation(format!(
            "generator returned {} images, expected {}",
            images.len(),
            cfg.batch
        )));
    }
    images
        .into_iter()
        .enumerate()
        .map(|(i, px)| {
            if !px.in_unit_range() {
                return Err(Error::Generation("generated image outside [0,1]".into()));
            }
            let key = image_key(generator_id, bundle, cfg, i).digest();
            let provenance = Provenance::synthetic(
                bundle.method.clone(),
                cfg.cfg_scale,
                cfg.seed,
                bundle.source_ids.clone(),
            );
            provenance.validate().map_err(Error::Generation)?;
            Ok(ImageSample {
                id: format!("syn-{}-{}", bundle.class_label, &key[..20]),
                pixels: px,
                label: bundle.class_label,
                split: Split::Train,
                provenance,
            })
        })
        .collect()
}

/// The desk-scale diffusion model behind [`GeneratorInterface`].
#[derive(Debug, Clone)]
pub struct DiffusionGenerator<S> {
    denoiser: Denoiser<S>,
    schedule: NoiseSchedule,
    id: String,
}

impl<S: Scalar> DiffusionGenerator<S> {
    pub fn new(denoiser: Denoiser<S>, schedule: NoiseSchedule) -> Self {
        let id = format!("desk-ddpm-{}", &denoiser.checksum()[..12]);
        Self { denoiser, schedule, id }
    }

    pub fn from_trained(t: TrainedDenoiser<S>) -> Self {
        Self::new(t.denoiser, t.schedule)
    }

    pub fn denoiser(&self) -> &Denoiser<S> {
        &self.denoiser
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn checkpoint(&self) -> GeneratorCheckpoint {
        GeneratorCheckpoint {
            denoiser: self.denoiser.checkpoint(),
            schedule: self.schedule.clone(),
        }
    }

    pub fn from_checkpoint(ck: &GeneratorCheckpoint) -> Result<Self> {
        Ok(Self::new(Denoiser::from_checkpoint(&ck.denoiser)?, ck.schedule.clone()))
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GeneratorCheckpoint {
    pub denoiser: DenoiserCheckpoint,
    pub schedule: NoiseSchedule,
}

impl<S: Scalar> GeneratorInterface<S> for DiffusionGenerator<S> {
    fn generator_id(&self) -> String {
        self.id.clone()
    }

    fn generate(&self, bundle: &ConditioningBundle<S>, cfg: &GenerationConfig) -> Result<Vec<ImageSample<S>>> {
        let images = sample_cfg(&self.denoiser, &self.schedule, bundle, cfg, None)?;
        synthetic_samples(&self.id, bundle, cfg, images)
    }
}

/// A generator whose outputs are read from and written to a [`SyntheticCache`].
/// A batch whose every image is cached never reaches the inner generator.
pub struct CachedGenerator<'a, G> {
    pub inner: G,
    pub cache: &'a SyntheticCache,
    pub class_names: Vec<String>,
}

impl<S: Scalar, G: GeneratorInterface<S>> GeneratorInterface<S> for CachedGenerator<'_, G> {
    fn generator_id(&self) -> String {
        self.inner.generator_id()
    }

    fn generate(&self, bundle: &ConditioningBundle<S>, cfg: &GenerationConfig) -> Result<Vec<ImageSample<S>>> {
        let gid = self.inner.generator_id();
        let keys: Vec<String> = (0..cfg.batch).map(|i| image_key(&gid, bundle, cfg, i).digest()).collect();
        let mut cached = Vec::with_capacity(cfg.batch);
        for k in &keys {
            match self.cache.get::<S>(k)? {
                Some((img, _)) => cached.push(img),
                None => break,
            }
        }
        if cached.len() == cfg.batch {
            return synthetic_samples(&gid, bundle, cfg, cached);
        }
        let out = self.inner.generate(bundle, cfg)?;
        if out.len() != cfg.batch {
            return Err(Error::Generation(format!(
                "generator returned {} images, expected {}",
                out.len(),
                cfg.batch
            )));
        }
        let class_name = self
            .class_names
            .get(bundle.class_label)
            .map(String::as_str)
            .unwrap_or("class");
        for (k, s) in keys.iter().zip(&out) {
            self.cache.put(k, s.label, class_name, &s.pixels, &s.provenance)?;
        }
        Ok(out)
    }
}
