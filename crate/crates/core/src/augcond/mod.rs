//! Augmentation-conditioning: turning one or two real images of a class into
//! the conditioning embedding x̃ handed to the generator.

mod conditioning;
mod method;
mod ops;

pub use conditioning::{
    build_conditioning, conditioning_embedding, select_source_pair, AugmentationSpec,
    ConditioningBundle, ImageEncoder,
};
pub use method::{AugMethod, MixOp, MixSpace};
pub use ops::{
    cutmix_embedding, cutmix_pixel, cutmix_pixel_with_mask, dropout_embedding, mixup_embedding,
    mixup_pixel, sample_mix_coefficient, sample_patch_mask, EmbedCutMode, MixCoefficient,
    PatchMask,
};
