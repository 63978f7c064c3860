pub mod augcond;
pub mod curriculum;
pub mod datamodel;
pub mod error;
pub mod generator;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub type ImageTensorF32 = datamodel::ImageTensor<f32>;
pub type ImageTensorF64 = datamodel::ImageTensor<f64>;
pub type ImageSampleF32 = datamodel::ImageSample<f32>;
pub type ImageSampleF64 = datamodel::ImageSample<f64>;
pub type LabeledDatasetF32 = datamodel::LabeledDataset<f32>;
pub type LabeledDatasetF64 = datamodel::LabeledDataset<f64>;
pub type EmbeddingVectorF32 = datamodel::EmbeddingVector<f32>;
pub type EmbeddingVectorF64 = datamodel::EmbeddingVector<f64>;
pub type DiffusionGeneratorF32 = generator::DiffusionGenerator<f32>;
pub type DiffusionGeneratorF64 = generator::DiffusionGenerator<f64>;
pub type ConvNetF32 = nn::ConvNet<f32>;
pub type ConvNetF64 = nn::ConvNet<f64>;
pub type WorkspaceF32 = harness::Workspace<f32>;
pub type WorkspaceF64 = harness::Workspace<f64>;
