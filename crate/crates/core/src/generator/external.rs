//! Adapter for an out-of-process image generator.
//!
//! One request carries the class text, the flattened conditioning vector and
//! the sampling fields; the response carries the images as flat `[0,1]`
//! pixel arrays in height-width-channel order.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::interface::{image_key, synthetic_samples, GeneratorInterface};
use super::sampler::GenerationConfig;
use crate::augcond::ConditioningBundle;
use crate::datamodel::{ImageShape, ImageSample, ImageTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRequest {
    /// Cache key of the first image in the batch.
    pub key: String,
    pub class_text: String,
    pub class_label: usize,
    pub embedding: Vec<f64>,
    pub cfg_scale: f64,
    pub steps: usize,
    pub seed: u64,
    pub batch: usize,
    pub image: ImageShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalImage {
    pub pixels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub images: Vec<ExternalImage>,
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Moves one request to the endpoint and back.
pub trait Transport {
    fn call(&self, req: &ExternalRequest) -> std::result::Result<ExternalResponse, TransportError>;
}

/// Runs a program per request: JSON request on stdin, JSON response on stdout.
#[derive(Debug, Clone)]
pub struct CommandTransport {
    pub program: String,
    pub args: Vec<String>,
}

impl Transport for CommandTransport {
    fn call(&self, req: &ExternalRequest) -> std::result::Result<ExternalResponse, TransportError> {
        let unavailable = |e: std::io::Error| TransportError::Unavailable(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(unavailable)?;
        let body = serde_json::to_vec(req).expect("request serialises");
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(&body)
            .map_err(unavailable)?;
        let out = child.wait_with_output().map_err(unavailable)?;
        if !out.status.success() {
            return Err(TransportError::Unavailable(format!("{} exited with {}", self.program, out.status)));
        }
        serde_json::from_slice(&out.stdout).map_err(|e| TransportError::Malformed(e.to_string()))
    }
}

pub struct ExternalGenerator<T> {
    pub transport: T,
    pub endpoint_id: String,
    pub image: ImageShape,
}

impl<T: Transport> ExternalGenerator<T> {
    pub fn new(transport: T, endpoint_id: impl Into<String>, image: ImageShape) -> Self {
        Self {
            transport,
            endpoint_id: endpoint_id.into(),
            image,
        }
    }

    pub fn request<S: Scalar>(&self, bundle: &ConditioningBundle<S>, cfg: &GenerationConfig) -> ExternalRequest {
        ExternalRequest {
            key: image_key(&self.generator_id_str(), bundle, cfg, 0).digest(),
            class_text: bundle.class_text.clone(),
            class_label: bundle.class_label,
            embedding: bundle.image_embedding.values().iter().map(|v| v.to_f64_lossy()).collect(),
            cfg_scale: cfg.cfg_scale,
            steps: cfg.steps,
            seed: cfg.seed,
            batch: cfg.batch,
            image: self.image,
        }
    }

    fn generator_id_str(&self) -> String {
        format!("external:{}", self.endpoint_id)
    }
}

impl<S: Scalar, T: Transport> GeneratorInterface<S> for ExternalGenerator<T> {
    fn generator_id(&self) -> String {
        self.generator_id_str()
    }

    fn generate(&self, bundle: &ConditioningBundle<S>, cfg: &GenerationConfig) -> Result<Vec<ImageSample<S>>> {
        cfg.validate(None)?;
        bundle.validate()?;
        let req = self.request(bundle, cfg);
        let resp = self.transport.call(&req).map_err(|e| match e {
            TransportError::Unavailable(reason) => Error::Retriable {
                key: req.key.clone(),
                reason,
            },
            TransportError::Malformed(reason) => Error::Generation(format!("request {}: {reason}", req.key)),
        })?;
        if resp.images.len() != cfg.batch {
            return Err(Error::Generation(format!(
                "request {}: endpoint returned {} images, expected {}",
                req.key,
                resp.images.len(),
                cfg.batch
            )));
        }
        let images = resp
            .images
            .into_iter()
            .map(|im| {
                if im.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Generation(format!("request {}: pixel outside [0,1]", req.key)));
                }
                ImageTensor::new(self.image, im.pixels.into_iter().map(S::of).collect())
                    .map(ImageTensor::quantized)
                    .map_err(|e| Error::Generation(format!("request {}: {e}", req.key)))
            })
            .collect::<Result<Vec<_>>>()?;
        synthetic_samples(&self.generator_id_str(), bundle, cfg, images)
    }
}
