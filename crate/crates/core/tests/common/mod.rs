#![allow(dead_code)]

use std::path::Path;

use augsynth::harness::{ExperimentConfig, Workspace};

/// Desk preset shrunk so the whole pipeline runs in seconds.
pub const TINY: &str = r#"
preset = "desk-10class"
name = "tiny"
seeds = [0]

[dataset]
train_per_class = 100
val_per_class = 10
test_per_class = 10

[generation]
steps = 4

[models.encoder]
epochs = 2

[models.denoiser]
hidden = 64

[models.generator]
epochs = 2

[train]
epochs = 3

[fewshot]
shots = [1, 16]
trials = 2
synthetic_per_class = 4

[fewshot.pretrain]
epochs = 2

[fewshot.finetune]
epochs = 3

[sweeps]
cfg_scales = [2.0, 10.0]
dropout_images_per_class = 6
"#;

pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(TINY).unwrap()
}

pub fn workspace(cfg: ExperimentConfig, root: &Path) -> Workspace<f32> {
    Workspace::new(cfg, root).unwrap()
}
