//! Images, labelled datasets, embeddings, provenance and their persistence.

mod cache;
mod desk;
mod manifest;
mod sample;
mod tensor;

pub use cache::{CacheEntry, CacheKey, CacheStats, SyntheticCache, CACHE_INDEX};
pub use desk::{desk_dataset, render_desk_image, DeskSpec, DESK_CLASSES, DESK_SIDE};
pub use manifest::{
    class_dir_name, load_manifest, read_png, save_manifest, write_atomic, write_json_atomic, write_png,
    ManifestHeader, ManifestRecord, MANIFEST_FILE, MANIFEST_FORMAT, MANIFEST_VERSION,
};
pub use sample::{EmbeddingVector, ImageSample, LabeledDataset, Origin, Provenance, Split};
pub use tensor::{ImageShape, ImageTensor, PIXEL_LEVELS};

/// Per-class sample counts of `ds`.
pub fn class_histogram<S: crate::Scalar>(ds: &LabeledDataset<S>) -> Vec<usize> {
    ds.class_histogram()
}
