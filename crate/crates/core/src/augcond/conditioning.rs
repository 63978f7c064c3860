use rand::Rng;
use serde::{Deserialize, Serialize};

use super::method::{AugMethod, MixOp, MixSpace};
use super::ops::{
    cutmix_embedding, cutmix_pixel, dropout_embedding, mixup_embedding, mixup_pixel,
    sample_mix_coefficient, EmbedCutMode, MixCoefficient,
};
use crate::datamodel::{EmbeddingVector, ImageSample, ImageTensor, LabeledDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maps an image to its conditioning embedding.
pub trait ImageEncoder<S: Scalar> {
    fn encoder_id(&self) -> &str;
    fn encode(&self, x: &ImageTensor<S>) -> Result<EmbeddingVector<S>>;
}

fn default_alpha() -> f64 {
    1.0
}

fn default_p() -> f64 {
    0.4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub method: AugMethod,
    #[serde(default = "default_alpha")]
    pub beta_alpha: f64,
    #[serde(default = "default_p")]
    pub dropout_p: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub embed_cut_mode: EmbedCutMode,
}

impl AugmentationSpec {
    pub fn new(method: AugMethod) -> Self {
        Self {
            method,
            beta_alpha: default_alpha(),
            dropout_p: default_p(),
            rng_seed: 0,
            embed_cut_mode: EmbedCutMode::Contiguous,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return Err(Error::Parameter(format!("beta_alpha must be > 0, got {}", self.beta_alpha)));
        }
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return Err(Error::Parameter(format!("dropout_p must lie in [0,1], got {}", self.dropout_p)));
        }
        Ok(())
    }

    /// Stable label used in provenance and cache keys. Non-default
    /// parameters are appended so distinct settings never collide.
    pub fn tag(&self) -> String {
        let mut tag = self.method.name().to_string();
        if self.method.uses_dropout() && self.dropout_p != default_p() {
            tag.push_str(&format!("@p={}", self.dropout_p));
        }
        if self.method.mixing().is_some() && self.beta_alpha != default_alpha() {
            tag.push_str(&format!("@alpha={}", self.beta_alpha));
        }
        if matches!(self.method.mixing(), Some((MixOp::CutMix, MixSpace::Embedding)))
            && self.embed_cut_mode == EmbedCutMode::Scattered
        {
            tag.push_str("@scattered");
        }
        tag
    }
}

/// The conditioning x̃ handed to a generator, with its class text and the
/// bookkeeping needed for provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle<S> {
    pub image_embedding: EmbeddingVector<S>,
    pub class_label: usize,
    pub class_text: String,
    pub method: String,
    pub source_ids: Vec<String>,
    pub lambda: Option<f64>,
}

impl<S: Scalar> ConditioningBundle<S> {
    pub fn validate(&self) -> Result<()> {
        if self.class_text.trim().is_empty() {
            return Err(Error::Parameter("conditioning class text is empty".into()));
        }
        if self.image_embedding.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("conditioning embedding is not finite".into()));
        }
        Ok(())
    }
}

/// Two uniform draws from the real training images of class `k`; distinct
/// when the class has at least two images, the single image twice otherwise.
pub fn select_source_pair<'a, S: Scalar>(
    ds: &'a LabeledDataset<S>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(&'a ImageSample<S>, &'a ImageSample<S>)> {
    let pool = ds.real_train_of_class(k);
    match pool.len() {
        0 => Err(Error::Data(format!("class {k} has no real training images"))),
        1 => Ok((pool[0], pool[0])),
        n => {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            Ok((pool[i], pool[j]))
        }
    }
}

fn select_one<'a, S: Scalar>(
    ds: &'a LabeledDataset<S>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<&'a ImageSample<S>> {
    let pool = ds.real_train_of_class(k);
    if pool.is_empty() {
        return Err(Error::Data(format!("class {k} has no real training images")));
    }
    Ok(pool[rng.random_range(0..pool.len())])
}

/// The method's dispatch table applied to already chosen sources and λ.
/// Single-image methods ignore `x2` and `lambda`.
pub fn conditioning_embedding<S: Scalar, E: ImageEncoder<S> + ?Sized>(
    spec: &AugmentationSpec,
    x1: &ImageTensor<S>,
    x2: Option<&ImageTensor<S>>,
    lambda: Option<MixCoefficient>,
    encoder: &E,
    rng: &mut impl Rng,
) -> Result<EmbeddingVector<S>> {
    let embedding = match spec.method.mixing() {
        None => encoder.encode(x1)?,
        Some((op, space)) => {
            let x2 = x2.ok_or_else(|| Error::Parameter(format!("{} needs two sources", spec.method)))?;
            let lambda = lambda.ok_or_else(|| Error::Parameter(format!("{} needs λ", spec.method)))?;
            match (op, space) {
                (MixOp::CutMix, MixSpace::Pixel) => encoder.encode(&cutmix_pixel(x1, x2, lambda, rng)?)?,
                (MixOp::Mixup, MixSpace::Pixel) => encoder.encode(&mixup_pixel(x1, x2, lambda)?)?,
                (MixOp::CutMix, MixSpace::Embedding) => cutmix_embedding(
                    &encoder.encode(x1)?,
                    &encoder.encode(x2)?,
                    lambda,
                    spec.embed_cut_mode,
                    rng,
                )?,
                (MixOp::Mixup, MixSpace::Embedding) => {
                    mixup_embedding(&encoder.encode(x1)?, &encoder.encode(x2)?, lambda)?
                }
            }
        }
    };
    if spec.method.uses_dropout() {
        dropout_embedding(&embedding, spec.dropout_p, rng)
    } else {
        Ok(embedding)
    }
}

/// Produce x̃ for one generated image of class `k` according to `spec`.
pub fn build_conditioning<S: Scalar, E: ImageEncoder<S> + ?Sized>(
    spec: &AugmentationSpec,
    ds: &LabeledDataset<S>,
    k: usize,
    encoder: &E,
    rng: &mut impl Rng,
) -> Result<ConditioningBundle<S>> {
    spec.validate()?;
    let class_text = ds
        .class_names()
        .get(k)
        .cloned()
        .ok_or_else(|| Error::Parameter(format!("class {k} out of range")))?;

    let (x1, x2, lambda) = match spec.method.mixing() {
        None => (select_one(ds, k, rng)?, None, None),
        Some(_) => {
            let (x1, x2) = select_source_pair(ds, k, rng)?;
            let lambda = sample_mix_coefficient(spec.beta_alpha, rng)?;
            (x1, Some(x2), Some(lambda))
        }
    };
    let embedding = conditioning_embedding(
        spec,
        &x1.pixels,
        x2.map(|s| &s.pixels),
        lambda,
        encoder,
        rng,
    )?;
    let mut source_ids = vec![x1.id.clone()];
    source_ids.extend(x2.map(|s| s.id.clone()));
    let bundle = ConditioningBundle {
        image_embedding: embedding,
        class_label: k,
        class_text,
        method: spec.tag(),
        source_ids,
        lambda: lambda.map(MixCoefficient::value),
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ImageShape, Split};
    use crate::rng::seeded;

    struct FlattenEncoder;

    impl ImageEncoder<f64> for FlattenEncoder {
        fn encoder_id(&self) -> &str {
            "flatten"
        }
        fn encode(&self, x: &ImageTensor<f64>) -> Result<EmbeddingVector<f64>> {
            EmbeddingVector::new(x.data().to_vec(), "flatten")
        }
    }

    fn dataset(per_class: &[usize]) -> LabeledDataset<f64> {
        let mut samples = Vec::new();
        for (k, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let v = (k * 100 + i) as f64 / 1000.0;
                samples.push(ImageSample::real(
                    format!("c{k}-{i}"),
                    ImageTensor::filled(ImageShape::new(4, 4, 1), v),
                    k,
                    Split::Train,
                ));
            }
        }
        let names = (0..per_class.len()).map(|k| format!("class{k}")).collect();
        LabeledDataset::new(names, samples).unwrap()
    }

    #[test]
    fn pair_from_single_image_class() {
        let ds = dataset(&[1, 3]);
        let (a, b) = select_source_pair(&ds, 0, &mut seeded(0)).unwrap();
        assert_eq!(a.id, "c0-0");
        assert_eq!(b.id, "c0-0");
    }

    #[test]
    fn pair_from_two_image_class_is_both() {
        let ds = dataset(&[2]);
        let mut rng = seeded(1);
        for _ in 0..20 {
            let (a, b) = select_source_pair(&ds, 0, &mut rng).unwrap();
            assert_ne!(a.id, b.id);
        }
    }

    #[test]
    fn pair_from_empty_class_errors() {
        let ds = dataset(&[2, 0]);
        assert!(matches!(select_source_pair(&ds, 1, &mut seeded(0)), Err(Error::Data(_))));
    }

    #[test]
    fn pair_ignores_non_training_and_synthetic() {
        let mut ds = dataset(&[2]).into_samples();
        ds[0].split = Split::Val;
        let ds = LabeledDataset::new(vec!["a".into()], ds).unwrap();
        let (a, b) = select_source_pair(&ds, 0, &mut seeded(0)).unwrap();
        assert_eq!((a.id.as_str(), b.id.as_str()), ("c0-1", "c0-1"));
    }

    #[test]
    fn random_image_is_plain_encoding() {
        let ds = dataset(&[5]);
        let spec = AugmentationSpec::new(AugMethod::RandomImage);
        let b = build_conditioning(&spec, &ds, 0, &FlattenEncoder, &mut seeded(2)).unwrap();
        let src = ds.samples().iter().find(|s| s.id == b.source_ids[0]).unwrap();
        assert_eq!(b.image_embedding, FlattenEncoder.encode(&src.pixels).unwrap());
        assert_eq!(b.class_text, "class0");
        assert_eq!(b.source_ids.len(), 1);
    }

    #[test]
    fn identity_composition_for_embed_cutmix_dropout() {
        let ds = dataset(&[5]);
        let spec = AugmentationSpec::new(AugMethod::EmbedCutMixDropout).with_dropout(0.0);
        let x1 = &ds.samples()[0].pixels;
        let x2 = &ds.samples()[3].pixels;
        let one = MixCoefficient::new(1.0).unwrap();
        let e = conditioning_embedding(&spec, x1, Some(x2), Some(one), &FlattenEncoder, &mut seeded(3)).unwrap();
        assert_eq!(e, FlattenEncoder.encode(x1).unwrap());
    }

    #[test]
    fn every_method_is_deterministic_and_identity_on_identical_sources() {
        // a single-image class forces x1 == x2
        let ds = dataset(&[1]);
        for m in AugMethod::ALL {
            let spec = AugmentationSpec::new(m).with_dropout(0.0);
            let a = build_conditioning(&spec, &ds, 0, &FlattenEncoder, &mut seeded(9)).unwrap();
            let b = build_conditioning(&spec, &ds, 0, &FlattenEncoder, &mut seeded(9)).unwrap();
            assert_eq!(a, b, "{m}");
            let expect = FlattenEncoder.encode(&ds.samples()[0].pixels).unwrap();
            assert_eq!(a.image_embedding, expect, "{m}");
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let ds = dataset(&[3]);
        let spec = AugmentationSpec::new(AugMethod::Dropout).with_dropout(1.5);
        assert!(build_conditioning(&spec, &ds, 0, &FlattenEncoder, &mut seeded(0)).is_err());
        let mut spec = AugmentationSpec::new(AugMethod::Mixup);
        spec.beta_alpha = 0.0;
        assert!(build_conditioning(&spec, &ds, 0, &FlattenEncoder, &mut seeded(0)).is_err());
    }

    #[test]
    fn tags_distinguish_parameters() {
        let a = AugmentationSpec::new(AugMethod::Dropout);
        assert_eq!(a.tag(), "Dropout");
        assert_eq!(a.clone().with_dropout(0.7).tag(), "Dropout@p=0.7");
        assert_eq!(AugmentationSpec::new(AugMethod::RandomImage).with_dropout(0.7).tag(), "RandomImage");
    }
}
