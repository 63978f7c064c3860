//! Desk-scale conditional diffusion generator, its image encoder, and the
//! adapter for external generators.

mod denoiser;
mod encoder;
mod external;
mod interface;
mod sampler;
mod schedule;
mod training;

pub use denoiser::{timestep_features, CondBatch, Denoiser, DenoiserCheckpoint, DenoiserConfig, Tape};
pub use encoder::{train_encoder, EncoderCheckpoint, EncoderTrainConfig, ImageEncoderNet};
pub use external::{
    CommandTransport, ExternalGenerator, ExternalImage, ExternalRequest, ExternalResponse, Transport,
    TransportError,
};
pub use interface::{
    image_key, synthetic_samples, CachedGenerator, DiffusionGenerator, GeneratorCheckpoint, GeneratorInterface,
};
pub use sampler::{guided_noise, noise_from_clean, sample_cfg, GenerationConfig, GuidanceProbe};
pub use schedule::{NoiseSchedule, ReverseStep};
pub use training::{train_generator, GeneratorEpoch, GeneratorTrainConfig, LossWeighting, TrainedDenoiser};
