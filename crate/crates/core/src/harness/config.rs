//! Experiment configuration files.
//!
//! A config is TOML. It may name a built-in preset with `preset = "<name>"`;
//! every other key then overrides the preset, tables merging key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augcond::{AugMethod, AugmentationSpec, EmbedCutMode};
use crate::curriculum::{CategoryThresholds, LongTailProfile};
use crate::datamodel::{DeskSpec, ImageShape};
use crate::error::{Error, Result};
use crate::generator::{DenoiserConfig, EncoderTrainConfig, GenerationConfig, GeneratorTrainConfig, NoiseSchedule};
use crate::nn::ConvNetArch;
use crate::trainer::{FineTuneConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

const PRESETS: [(&str, &str); 2] = [
    ("desk-10class", include_str!("../../presets/desk-10class.toml")),
    ("imagenet-lt-paper", include_str!("../../presets/imagenet-lt-paper.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Procedurally rendered shapes.
    Desk {
        seed: u64,
        train_per_class: usize,
        val_per_class: usize,
        test_per_class: usize,
    },
    /// A manifest directory or file on disk.
    Manifest { path: PathBuf },
}

impl DatasetConfig {
    pub fn id(&self) -> String {
        match self {
            DatasetConfig::Desk { seed, .. } => format!("desk-10class-s{seed}"),
            DatasetConfig::Manifest { path } => format!("manifest:{}", path.display()),
        }
    }

    pub fn desk_spec(&self) -> Option<DeskSpec> {
        match *self {
            DatasetConfig::Desk {
                seed,
                train_per_class,
                val_per_class,
                test_per_class,
            } => Some(DeskSpec {
                seed,
                train_per_class,
                val_per_class,
                test_per_class,
            }),
            DatasetConfig::Manifest { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileConfig {
    Explicit {
        targets: Vec<usize>,
        min_count: usize,
        max_count: usize,
    },
    Exponential { max: usize, min: usize },
    /// Keep the dataset's own counts; they must already lie in range.
    FromDataset { min_count: usize, max_count: usize },
}

impl ProfileConfig {
    /// The concrete per-class targets, given the real training counts.
    pub fn resolve(&self, real_counts: &[usize]) -> Result<LongTailProfile> {
        match self {
            ProfileConfig::Explicit {
                targets,
                min_count,
                max_count,
            } => LongTailProfile::new(targets.clone(), *min_count, *max_count),
            ProfileConfig::Exponential { max, min } => LongTailProfile::exponential(real_counts.len(), *max, *min),
            ProfileConfig::FromDataset { min_count, max_count } => {
                LongTailProfile::new(real_counts.to_vec(), *min_count, *max_count)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationDefaults {
    pub beta_alpha: f64,
    pub dropout_p: f64,
    #[serde(default)]
    pub embed_cut_mode: EmbedCutMode,
}

impl AugmentationDefaults {
    pub fn spec(&self, method: AugMethod) -> AugmentationSpec {
        AugmentationSpec {
            method,
            beta_alpha: self.beta_alpha,
            dropout_p: self.dropout_p,
            rng_seed: 0,
            embed_cut_mode: self.embed_cut_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationDefaults {
    pub steps: usize,
    pub batch: usize,
    /// Extra attempts after a retriable generator failure.
    pub retries: usize,
}

impl GenerationDefaults {
    pub fn config(&self, cfg_scale: f64, seed: u64) -> GenerationConfig {
        GenerationConfig {
            cfg_scale,
            steps: self.steps,
            seed,
            batch: self.batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSettings {
    pub time_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub null_prob: f64,
}

impl DenoiserSettings {
    pub fn build(&self, image: ImageShape, embed_dim: usize, num_classes: usize) -> DenoiserConfig {
        DenoiserConfig {
            image,
            embed_dim,
            num_classes,
            time_dim: self.time_dim,
            cond_dim: self.cond_dim,
            hidden: self.hidden,
            null_prob: self.null_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSettings {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl ClassifierSettings {
    pub fn arch(&self, image: ImageShape, num_classes: usize) -> ConvNetArch {
        ConvNetArch {
            image,
            conv1: self.conv1,
            conv2: self.conv2,
            hidden: self.hidden,
            num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub encoder: EncoderTrainConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserSettings,
    pub generator: GeneratorTrainConfig,
    pub classifier: ClassifierSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTailConfig {
    pub profile: ProfileConfig,
    pub thresholds: CategoryThresholds,
    pub balance_target: usize,
    pub methods: Vec<AugMethod>,
    /// Also train a classifier without synthetic images.
    pub include_real_only: bool,
    pub cfg_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotConfig {
    pub shots: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<AugMethod>,
    pub include_real_only: bool,
    pub cfg_scale: f64,
    pub synthetic_per_class: usize,
    /// Classes the backbone is pretrained on. Empty means all classes.
    pub pretrain_classes: Vec<usize>,
    /// Seed of a separately rendered desk set used for pretraining.
    pub pretrain_dataset_seed: u64,
    pub pretrain: TrainConfig,
    pub finetune: FineTuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub cfg_method: AugMethod,
    pub dropout_method: AugMethod,
    pub cfg_scales: Vec<f64>,
    pub dropout_ps: Vec<f64>,
    pub dropout_images_per_class: usize,
}

/// Settings for delegating generation to an external program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub endpoint_id: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Seed for the encoder, generator and pretrained backbone.
    pub model_seed: u64,
    #[serde(default)]
    pub scalar: ScalarKind,
    pub dataset: DatasetConfig,
    pub augmentation: AugmentationDefaults,
    pub generation: GenerationDefaults,
    pub models: ModelsConfig,
    pub train: TrainConfig,
    pub longtail: LongTailConfig,
    pub fewshot: FewShotConfig,
    pub sweeps: SweepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            Error::Config(format!("unknown preset {name:?}; available: {}", preset_names().join(", ")))
        })?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_table(preset_table(name)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let table = match table.remove("preset") {
            None => table,
            Some(toml::Value::String(name)) => {
                let mut base = preset_table(&name)?;
                merge(&mut base, table);
                base
            }
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        Self::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if let DatasetConfig::Desk { train_per_class, .. } = self.dataset {
            if train_per_class == 0 {
                return bad("desk train_per_class must be positive".into());
            }
        }
        self.augmentation.spec(AugMethod::RandomImage).validate()?;
        if self.generation.steps == 0 || self.generation.steps > self.models.schedule.steps {
            return bad(format!(
                "generation steps {} must lie in 1..={}",
                self.generation.steps, self.models.schedule.steps
            ));
        }
        if self.generation.batch == 0 {
            return bad("generation batch must be positive".into());
        }
        self.models.schedule.build().map_err(|e| Error::Config(e.to_string()))?;
        if self.models.generator.epochs == 0 || self.models.generator.batch == 0 || self.models.encoder.batch == 0 {
            return bad("model epochs and batch sizes must be positive".into());
        }
        self.train.validate()?;
        let lt = &self.longtail;
        lt.thresholds.validate()?;
        if lt.methods.is_empty() && !lt.include_real_only {
            return bad("long-tail experiment has nothing to run".into());
        }
        if let ProfileConfig::Explicit {
            targets,
            min_count,
            max_count,
        } = &lt.profile
        {
            LongTailProfile::new(targets.clone(), *min_count, *max_count)?;
        }
        for s in [lt.cfg_scale, self.fewshot.cfg_scale]
            .iter()
            .chain(&self.sweeps.cfg_scales)
        {
            if !(s.is_finite() && *s >= 0.0) {
                return bad(format!("cfg scale {s} must be finite and ≥ 0"));
            }
        }
        let fs = &self.fewshot;
        if fs.shots.is_empty() || fs.trials == 0 {
            return bad("few-shot needs shots and at least one trial".into());
        }
        for &k in &fs.shots {
            crate::curriculum::FewShotSpec::new(k).validate()?;
        }
        fs.pretrain.validate()?;
        fs.finetune.validate()?;
        if !fs.methods.is_empty() && fs.synthetic_per_class == 0 {
            return bad("few-shot synthetic_per_class must be positive".into());
        }
        if let Some(p) = self.sweeps.dropout_ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("dropout p {p} outside [0,1]"));
        }
        if self.sweeps.dropout_images_per_class < 2 {
            return bad("dropout sweep needs at least two images per class".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert_eq!(cfg.name, name);
        }
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"desk-10class\"\nseeds = [4]\n[train]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch, 64);
        assert_eq!(cfg.longtail.cfg_scale, 2.0);
        assert_eq!(cfg.fewshot.cfg_scale, 10.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::preset("desk-10class").unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn rejects_unknown_keys_and_presets() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("preset = \"desk-10class\"\nbogus = 1\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("preset = \"nope\"\n"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml_str("preset = \"desk-10class\"\nseeds = []\n").is_err());
    }
}
