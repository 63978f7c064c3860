use serde::{Deserialize, Serialize};

use super::tensor::{ImageShape, ImageTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// Where an image came from. Synthetic images record how they were generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: Origin,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfg_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub source_ids: Vec<String>,
}

impl Provenance {
    pub fn real() -> Self {
        Self {
            origin: Origin::Real,
            method: "none".to_string(),
            cfg_scale: None,
            seed: None,
            source_ids: Vec::new(),
        }
    }

    pub fn synthetic(method: impl Into<String>, cfg_scale: f64, seed: u64, source_ids: Vec<String>) -> Self {
        Self {
            origin: Origin::Synthetic,
            method: method.into(),
            cfg_scale: Some(cfg_scale),
            seed: Some(seed),
            source_ids,
        }
    }

    pub fn is_real(&self) -> bool {
        self.origin == Origin::Real
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.origin {
            Origin::Real => {
                if !self.source_ids.is_empty() {
                    return Err("real sample must not list source ids".into());
                }
            }
            Origin::Synthetic => {
                if self.method.is_empty() || self.method == "none" {
                    return Err("synthetic sample is missing its generation method".into());
                }
                match self.cfg_scale {
                    None => return Err("synthetic sample is missing cfg_scale".into()),
                    Some(s) if !(s >= 0.0 && s.is_finite()) => {
                        return Err(format!("cfg_scale {s} must be finite and non-negative"))
                    }
                    _ => {}
                }
                if self.seed.is_none() {
                    return Err("synthetic sample is missing seed".into());
                }
                if !(1..=2).contains(&self.source_ids.len()) {
                    return Err(format!(
                        "synthetic sample must list 1 or 2 source ids, found {}",
                        self.source_ids.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample<S> {
    pub id: String,
    pub pixels: ImageTensor<S>,
    pub label: usize,
    pub split: Split,
    pub provenance: Provenance,
}

impl<S: Scalar> ImageSample<S> {
    pub fn real(id: impl Into<String>, pixels: ImageTensor<S>, label: usize, split: Split) -> Self {
        Self {
            id: id.into(),
            pixels,
            label,
            split,
            provenance: Provenance::real(),
        }
    }
}

/// An immutable collection of labelled images sharing one class vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<S> {
    samples: Vec<ImageSample<S>>,
    class_names: Vec<String>,
}

impl<S: Scalar> LabeledDataset<S> {
    pub fn new(class_names: Vec<String>, samples: Vec<ImageSample<S>>) -> Result<Self> {
        let ds = Self {
            samples,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(class_names: Vec<String>) -> Self {
        Self {
            samples: Vec::new(),
            class_names,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Data("dataset needs at least one class".into()));
        }
        let shape = self.samples.first().map(|s| s.pixels.shape());
        for s in &self.samples {
            if s.label >= self.num_classes() {
                return Err(Error::Data(format!(
                    "sample {} has label {} but the dataset has {} classes",
                    s.id,
                    s.label,
                    self.num_classes()
                )));
            }
            if Some(s.pixels.shape()) != shape {
                return Err(Error::Shape(format!("sample {} differs in shape", s.id)));
            }
            if !s.pixels.in_unit_range() {
                return Err(Error::Data(format!("sample {} has pixels outside [0,1]", s.id)));
            }
            s.provenance
                .validate()
                .map_err(|r| Error::Data(format!("sample {}: {r}", s.id)))?;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[ImageSample<S>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.samples.first().map(|s| s.pixels.shape())
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// New dataset with the same classes holding the samples that pass `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&ImageSample<S>) -> bool) -> Self {
        Self {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn split(&self, split: Split) -> Self {
        self.filter(|s| s.split == split)
    }

    /// Real training images of class `k`.
    pub fn real_train_of_class(&self, k: usize) -> Vec<&ImageSample<S>> {
        self.samples
            .iter()
            .filter(|s| s.label == k && s.split == Split::Train && s.provenance.is_real())
            .collect()
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.class_names != other.class_names {
            return Err(Error::Data("cannot concatenate datasets with different classes".into()));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Self::new(self.class_names.clone(), samples)
    }

    pub fn into_samples(self) -> Vec<ImageSample<S>> {
        self.samples
    }
}

/// A d-dimensional embedding tagged with the encoder that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<S> {
    values: Vec<S>,
    encoder_id: String,
}

impl<S: Scalar> EmbeddingVector<S> {
    pub fn new(values: Vec<S>, encoder_id: impl Into<String>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("embedding coordinate {i} is not finite")));
        }
        Ok(Self {
            values,
            encoder_id: encoder_id.into(),
        })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn ensure_compatible(&self, other: &Self) -> Result<()> {
        if self.encoder_id != other.encoder_id {
            return Err(Error::Shape(format!(
                "embeddings from different encoders: {} vs {}",
                self.encoder_id, other.encoder_id
            )));
        }
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "embedding dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    /// Same encoder tag, new coordinates.
    pub(crate) fn with_values(&self, values: Vec<S>) -> Result<Self> {
        Self::new(values, self.encoder_id.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(label: usize) -> ImageSample<f32> {
        ImageSample::real(
            format!("s{label}"),
            ImageTensor::zeros(ImageShape::new(2, 2, 1)),
            label,
            Split::Train,
        )
    }

    #[test]
    fn histogram_counts_labels() {
        let ds = LabeledDataset::new(
            vec!["a".into(), "b".into()],
            vec![tiny(0), tiny(0), tiny(1)],
        )
        .unwrap();
        assert_eq!(ds.class_histogram(), vec![2, 1]);
    }

    #[test]
    fn histogram_of_empty_dataset() {
        let ds = LabeledDataset::<f32>::empty(vec!["a".into(), "b".into()]);
        assert_eq!(ds.class_histogram(), vec![0, 0]);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = LabeledDataset::new(vec!["a".into()], vec![tiny(1)]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn provenance_rules() {
        assert!(Provenance::real().validate().is_ok());
        let mut p = Provenance::synthetic("Dropout", 2.0, 7, vec!["a".into()]);
        assert!(p.validate().is_ok());
        p.seed = None;
        assert!(p.validate().is_err());
        let mut r = Provenance::real();
        r.source_ids.push("x".into());
        assert!(r.validate().is_err());
        let p3 = Provenance::synthetic("Mixup", 2.0, 1, vec!["a".into(), "b".into(), "c".into()]);
        assert!(p3.validate().is_err());
    }

    #[test]
    fn embedding_rejects_nan() {
        assert!(EmbeddingVector::new(vec![0.0f32, f32::NAN], "e").is_err());
        assert!(EmbeddingVector::new(vec![0.0f64, f64::INFINITY], "e").is_err());
    }
}
