//! Stage-by-stage experiment driver.
//!
//! Every artifact lives under the workspace root together with a fingerprint
//! of the settings that produced it. Asking for an artifact loads it when the
//! fingerprint matches and rebuilds it (and nothing downstream) otherwise.

use std::cell::OnceCell;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::campaign::{run_generation_campaign, CampaignSpec, CampaignStats};
use super::config::{DatasetConfig, ExperimentConfig};
use super::report::{ReportInput, FEATURE_EXTRACTOR_NOTE};
use super::metrics::{fid_score, mean_pairwise_distance, per_class_mean, top1_by_category, total_variance, CategoryAccuracy};
use crate::augcond::{build_conditioning, AugMethod, AugmentationSpec, ConditioningBundle};
use crate::curriculum::{
    build_longtail_subset, make_fewshot_subsets, plan_balance, real_train_counts, BalancePlan, FewShotSpec,
};
use crate::datamodel::{
    desk_dataset, load_manifest, save_manifest, write_atomic, write_json_atomic, ImageSample, LabeledDataset, Split,
    SyntheticCache, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::generator::{
    train_encoder, train_generator, CommandTransport, DiffusionGenerator, EncoderCheckpoint, ExternalGenerator,
    GenerationConfig, GeneratorCheckpoint, GeneratorEpoch, GeneratorInterface, ImageEncoderNet,
};
use crate::nn::ConvNet;
use crate::rng::{child, derive_seed};
use crate::scalar::Scalar;
use crate::trainer::{
    finetune_last_layer, mean_and_variance, predict, train_from_scratch, ClassifierCheckpoint, FineTuneReport,
};

const STAGE_LT: u64 = 1;
const STAGE_ENCODER: u64 = 2;
const STAGE_GENERATOR: u64 = 3;
const STAGE_CAMPAIGN: u64 = 4;
const STAGE_CLF_INIT: u64 = 5;
const STAGE_CLF_TRAIN: u64 = 6;
const STAGE_FEWSHOT: u64 = 7;
const STAGE_FINETUNE: u64 = 8;
const STAGE_PRETRAIN: u64 = 9;
const STAGE_DROPOUT: u64 = 10;

pub const REAL_ONLY: &str = "Real only";

pub const RESULT_LONGTAIL: &str = "longtail";
pub const RESULT_CFG_SWEEP: &str = "sweep_cfg";
pub const RESULT_DROPOUT_SWEEP: &str = "sweep_dropout";
pub const RESULT_FEWSHOT: &str = "fewshot";
pub const RESULT_FID: &str = "fid";

fn fingerprint(parts: serde_json::Value) -> String {
    let text = serde_json::to_string(&parts).expect("fingerprint input serialises");
    hex::encode(&Sha256::digest(text.as_bytes())[..12])
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    fingerprint: String,
    value: T,
}

fn load_stamped<T: DeserializeOwned>(path: &Path, fp: &str) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stamped: Stamped<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::manifest(path, "artifact", e))?;
    if stamped.fingerprint != fp {
        log::info!("{} is stale; rebuilding", path.display());
        return Ok(None);
    }
    serde_json::from_value(stamped.value)
        .map(Some)
        .map_err(|e| Error::manifest(path, "artifact", e))
}

fn store_stamped<T: Serialize>(path: &Path, fp: &str, value: &T) -> Result<()> {
    write_json_atomic(
        path,
        &Stamped {
            fingerprint: fp.to_string(),
            value,
        },
    )
}

const STAMP_FILE: &str = "stamp.json";

fn load_manifest_stamped<S: Scalar>(dir: &Path, fp: &str) -> Result<Option<LabeledDataset<S>>> {
    match load_stamped::<String>(&dir.join(STAMP_FILE), fp)? {
        Some(_) if dir.join(MANIFEST_FILE).exists() => load_manifest(dir).map(Some),
        _ => Ok(None),
    }
}

fn store_manifest_stamped<S: Scalar>(dir: &Path, fp: &str, ds: &LabeledDataset<S>) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_manifest(ds, dir)?;
    store_stamped(&dir.join(STAMP_FILE), fp, &fp.to_string())
}

/// File-system friendly form of a method tag or other label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn scale_slug(s: f64) -> String {
    format!("cfg{s}")
}

/// Either the built-in diffusion model or an external endpoint.
pub enum AnyGenerator<S> {
    Diffusion(Box<DiffusionGenerator<S>>),
    External(ExternalGenerator<CommandTransport>),
}

impl<S: Scalar> GeneratorInterface<S> for AnyGenerator<S> {
    fn generator_id(&self) -> String {
        match self {
            AnyGenerator::Diffusion(g) => g.generator_id(),
            AnyGenerator::External(g) => GeneratorInterface::<S>::generator_id(g),
        }
    }

    fn generate(&self, bundle: &ConditioningBundle<S>, cfg: &GenerationConfig) -> Result<Vec<ImageSample<S>>> {
        match self {
            AnyGenerator::Diffusion(g) => g.generate(bundle, cfg),
            AnyGenerator::External(g) => g.generate(bundle, cfg),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneratorArtifact {
    checkpoint: GeneratorCheckpoint,
    history: Vec<GeneratorEpoch>,
}

/// One trained-and-evaluated classifier of the long-tail experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailRow {
    pub method: String,
    pub seed: u64,
    pub cfg_scale: Option<f64>,
    pub accuracy: CategoryAccuracy,
    /// FID between the synthetic set and the real training images.
    pub fid: Option<f64>,
    pub synthetic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidRow {
    pub method: String,
    pub seed: u64,
    pub fid: f64,
}

/// Accuracies averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAccuracy {
    pub runs: usize,
    pub overall: f64,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
    /// Sample standard deviation of few-category accuracy over seeds.
    pub few_std: Option<f64>,
}

impl MeanAccuracy {
    pub fn of(accs: &[&CategoryAccuracy]) -> Option<Self> {
        if accs.is_empty() {
            return None;
        }
        let mean_of = |f: &dyn Fn(&CategoryAccuracy) -> Option<f64>| {
            let v: Vec<f64> = accs.iter().filter_map(|a| f(a)).collect();
            (!v.is_empty()).then(|| mean_and_variance(&v).0)
        };
        let few: Vec<f64> = accs.iter().filter_map(|a| a.few).collect();
        Some(Self {
            runs: accs.len(),
            overall: mean_of(&|a| Some(a.overall)).expect("non-empty"),
            many: mean_of(&|a| a.many),
            medium: mean_of(&|a| a.medium),
            few: mean_of(&|a| a.few),
            few_std: (few.len() > 1).then(|| mean_and_variance(&few).1.sqrt()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub accuracy: MeanAccuracy,
    pub fid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailResults {
    pub rows: Vec<LongTailRow>,
    pub summary: Vec<MethodSummary>,
}

impl LongTailResults {
    pub fn from_rows(rows: Vec<LongTailRow>) -> Self {
        let mut methods: Vec<String> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        let summary = methods
            .into_iter()
            .filter_map(|m| {
                let mine: Vec<&LongTailRow> = rows.iter().filter(|r| r.method == m).collect();
                let accs: Vec<&CategoryAccuracy> = mine.iter().map(|r| &r.accuracy).collect();
                let fids: Vec<f64> = mine.iter().filter_map(|r| r.fid).collect();
                Some(MethodSummary {
                    method: m,
                    accuracy: MeanAccuracy::of(&accs)?,
                    fid: (!fids.is_empty()).then(|| mean_and_variance(&fids).0),
                })
            })
            .collect();
        Self { rows, summary }
    }

    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfgSweepRow {
    pub cfg_scale: f64,
    pub accuracy: Option<MeanAccuracy>,
    /// Within-class mean pairwise feature distance of the generated images.
    pub diversity: Option<f64>,
    /// Within-class total feature variance of the generated images.
    pub feature_variance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfgSweepResults {
    pub method: String,
    pub rows: Vec<CfgSweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSweepRow {
    pub p: f64,
    /// Mean per-coordinate within-class variance of the conditioning embeddings.
    pub embedding_variance: Option<f64>,
    pub diversity: Option<f64>,
    pub fid_to_real: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSweepResults {
    pub method: String,
    pub cfg_scale: f64,
    pub images_per_class: usize,
    pub rows: Vec<DropoutSweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub method: String,
    pub shots: usize,
    pub report: FineTuneReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResults {
    pub cfg_scale: f64,
    pub synthetic_per_class: usize,
    pub rows: Vec<FewShotRow>,
}

/// Output directory plus lazily built artifacts for one experiment config.
pub struct Workspace<S> {
    cfg: ExperimentConfig,
    root: PathBuf,
    dataset: OnceCell<LabeledDataset<S>>,
    encoder: OnceCell<ImageEncoderNet<S>>,
    generator: OnceCell<AnyGenerator<S>>,
    real_features: OnceCell<Array2<S>>,
    cache: OnceCell<SyntheticCache>,
}

impl<S: Scalar> Workspace<S> {
    pub fn new(cfg: ExperimentConfig, root: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            root: root.into(),
            dataset: OnceCell::new(),
            encoder: OnceCell::new(),
            generator: OnceCell::new(),
            real_features: OnceCell::new(),
            cache: OnceCell::new(),
        })
    }

    /// A workspace rooted at the config's own output directory.
    pub fn from_config(cfg: ExperimentConfig) -> Result<Self> {
        let root = cfg.output_dir.clone();
        Self::new(cfg, root)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    /// Write the resolved config for `command` to `resolved/<command>.toml`.
    pub fn write_resolved(&self, command: &str) -> Result<PathBuf> {
        let path = self.path(format!("resolved/{command}.toml"));
        let text = format!("# config hash {}\n{}", self.cfg.hash(), self.cfg.to_toml());
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn save_result<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(format!("results/{name}.json"));
        write_json_atomic(&path, value)?;
        Ok(path)
    }

    pub fn load_result<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        let path = self.path(format!("results/{name}.json"));
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::manifest(&path, "results", e))
    }

    /// Gather every stored result into report input.
    pub fn report_input(&self) -> Result<ReportInput> {
        Ok(ReportInput {
            config_name: self.cfg.name.clone(),
            config_hash: self.cfg.hash(),
            seeds: self.cfg.seeds.clone(),
            model_seed: self.cfg.model_seed,
            feature_extractor: FEATURE_EXTRACTOR_NOTE.to_string(),
            longtail: self.load_result(RESULT_LONGTAIL)?,
            cfg_sweep: self.load_result(RESULT_CFG_SWEEP)?,
            dropout_sweep: self.load_result(RESULT_DROPOUT_SWEEP)?,
            fewshot: self.load_result(RESULT_FEWSHOT)?,
        })
    }

    pub fn cache(&self) -> Result<&SyntheticCache> {
        if let Some(c) = self.cache.get() {
            return Ok(c);
        }
        let c = SyntheticCache::open(self.path("cache"))?;
        Ok(self.cache.get_or_init(|| c))
    }

    fn dataset_fp(&self) -> String {
        fingerprint(json!({ "dataset": self.cfg.dataset }))
    }

    /// The full dataset before long-tail subsampling.
    pub fn dataset(&self) -> Result<&LabeledDataset<S>> {
        if let Some(ds) = self.dataset.get() {
            return Ok(ds);
        }
        let ds = match &self.cfg.dataset {
            DatasetConfig::Manifest { path } => load_manifest(path)?,
            desk @ DatasetConfig::Desk { .. } => {
                let dir = self.path("data/full");
                let fp = self.dataset_fp();
                match load_manifest_stamped(&dir, &fp)? {
                    Some(ds) => ds,
                    None => {
                        let ds = desk_dataset(&desk.desk_spec().expect("desk dataset"));
                        store_manifest_stamped(&dir, &fp, &ds)?;
                        ds
                    }
                }
            }
        };
        if ds.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        Ok(self.dataset.get_or_init(|| ds))
    }

    fn longtail_fp(&self, seed: u64) -> String {
        fingerprint(json!({ "data": self.dataset_fp(), "profile": self.cfg.longtail.profile, "seed": seed }))
    }

    /// Long-tail training subset for `seed`, with the full validation and test splits.
    pub fn longtail(&self, seed: u64) -> Result<LabeledDataset<S>> {
        let dir = self.path(format!("data/lt-s{seed}"));
        let fp = self.longtail_fp(seed);
        if let Some(ds) = load_manifest_stamped(&dir, &fp)? {
            return Ok(ds);
        }
        let full = self.dataset()?;
        let profile = self.cfg.longtail.profile.resolve(&real_train_counts(full))?;
        let lt = build_longtail_subset(full, &profile, &mut child(seed, &[STAGE_LT]))?;
        store_manifest_stamped(&dir, &fp, &lt)?;
        Ok(lt)
    }

    fn encoder_fp(&self) -> String {
        fingerprint(json!({
            "data": self.dataset_fp(),
            "encoder": self.cfg.models.encoder,
            "seed": self.cfg.model_seed,
        }))
    }

    pub fn encoder(&self) -> Result<&ImageEncoderNet<S>> {
        if let Some(e) = self.encoder.get() {
            return Ok(e);
        }
        let path = self.path("models/encoder.json");
        let fp = self.encoder_fp();
        let enc = match load_stamped::<EncoderCheckpoint>(&path, &fp)? {
            Some(ck) => ImageEncoderNet::from_checkpoint(&ck)?,
            None => {
                let enc = train_encoder(
                    self.dataset()?,
                    &self.cfg.models.encoder,
                    &mut child(self.cfg.model_seed, &[STAGE_ENCODER]),
                )?;
                store_stamped(&path, &fp, &enc.checkpoint())?;
                enc
            }
        };
        Ok(self.encoder.get_or_init(|| enc))
    }

    fn generator_fp(&self) -> String {
        match &self.cfg.external {
            Some(ext) => fingerprint(json!({ "external": ext })),
            None => {
                let m = &self.cfg.models;
                fingerprint(json!({
                    "encoder": self.encoder_fp(),
                    "schedule": m.schedule,
                    "denoiser": m.denoiser,
                    "train": m.generator,
                    "seed": self.cfg.model_seed,
                }))
            }
        }
    }

    pub fn generator(&self) -> Result<&AnyGenerator<S>> {
        if let Some(g) = self.generator.get() {
            return Ok(g);
        }
        let g = match &self.cfg.external {
            Some(ext) => {
                let image = self
                    .dataset()?
                    .image_shape()
                    .ok_or_else(|| Error::Data("dataset has no images".into()))?;
                AnyGenerator::External(ExternalGenerator::new(
                    CommandTransport {
                        program: ext.program.clone(),
                        args: ext.args.clone(),
                    },
                    ext.endpoint_id.clone(),
                    image,
                ))
            }
            None => AnyGenerator::Diffusion(Box::new(self.diffusion_generator()?)),
        };
        Ok(self.generator.get_or_init(|| g))
    }

    /// The trained desk diffusion model and its training history.
    fn diffusion_generator(&self) -> Result<DiffusionGenerator<S>> {
        let path = self.path("models/generator.json");
        let fp = self.generator_fp();
        if let Some(art) = load_stamped::<GeneratorArtifact>(&path, &fp)? {
            return DiffusionGenerator::from_checkpoint(&art.checkpoint);
        }
        let ds = self.dataset()?;
        let encoder = self.encoder()?;
        let shape = ds.image_shape().ok_or_else(|| Error::Data("dataset has no images".into()))?;
        let m = &self.cfg.models;
        let trained = train_generator(
            ds,
            encoder,
            m.denoiser.build(shape, encoder.dim(), ds.num_classes()),
            &m.schedule.build()?,
            &m.generator,
            &mut child(self.cfg.model_seed, &[STAGE_GENERATOR]),
        )?;
        let history = trained.history.clone();
        let g = DiffusionGenerator::from_trained(trained);
        store_stamped(
            &path,
            &fp,
            &GeneratorArtifact {
                checkpoint: g.checkpoint(),
                history,
            },
        )?;
        Ok(g)
    }

    /// Per-epoch loss of the trained diffusion model, if one is stored.
    pub fn generator_history(&self) -> Result<Option<Vec<GeneratorEpoch>>> {
        Ok(load_stamped::<GeneratorArtifact>(&self.path("models/generator.json"), &self.generator_fp())?
            .map(|a| a.history))
    }

    pub fn augmentation(&self, method: AugMethod) -> AugmentationSpec {
        self.cfg.augmentation.spec(method)
    }

    fn campaign_spec(&self, augmentation: AugmentationSpec, cfg_scale: f64, seed: u64) -> CampaignSpec {
        let g = &self.cfg.generation;
        CampaignSpec {
            augmentation,
            cfg_scale,
            steps: g.steps,
            batch: g.batch,
            seed,
            retries: g.retries,
        }
    }

    fn synthetic_fp(&self, real_fp: &str, spec: &CampaignSpec, plan: &BalancePlan) -> String {
        fingerprint(json!({ "generator": self.generator_fp(), "real": real_fp, "spec": spec, "plan": plan }))
    }

    /// Run (or reload) a generation campaign and keep its output as a manifest
    /// under `synth/<name>`.
    fn synthetic_set(
        &self,
        name: &str,
        real: &LabeledDataset<S>,
        real_fp: &str,
        spec: &CampaignSpec,
        plan: &BalancePlan,
    ) -> Result<(LabeledDataset<S>, String, CampaignStats)> {
        let dir = self.path(format!("synth/{name}"));
        let fp = self.synthetic_fp(real_fp, spec, plan);
        if let Some(ds) = load_manifest_stamped(&dir, &fp)? {
            let stats = CampaignStats {
                requested: plan.total(),
                ..Default::default()
            };
            return Ok((ds, fp, stats));
        }
        let (ds, stats) =
            run_generation_campaign(plan, spec, real, self.encoder()?, self.generator()?, self.cache()?)?;
        store_manifest_stamped(&dir, &fp, &ds)?;
        log::info!("{name}: {} images, {} newly generated", ds.len(), stats.generated);
        Ok((ds, fp, stats))
    }

    /// The balance-plan synthetic set for one long-tail cell.
    pub fn longtail_synthetic(
        &self,
        method: AugMethod,
        cfg_scale: f64,
        seed: u64,
    ) -> Result<(LabeledDataset<S>, String, CampaignStats)> {
        self.longtail_synthetic_with(self.augmentation(method), cfg_scale, seed)
    }

    fn longtail_synthetic_with(
        &self,
        augmentation: AugmentationSpec,
        cfg_scale: f64,
        seed: u64,
    ) -> Result<(LabeledDataset<S>, String, CampaignStats)> {
        let lt = self.longtail(seed)?;
        let plan = plan_balance(&lt, self.cfg.longtail.balance_target)?;
        let name = format!("{}-{}-s{seed}", slug(&augmentation.tag()), scale_slug(cfg_scale));
        let spec = self.campaign_spec(augmentation, cfg_scale, derive_seed(seed, &[STAGE_CAMPAIGN]));
        self.synthetic_set(&name, &lt, &self.longtail_fp(seed), &spec, &plan)
    }

    fn classifier(
        &self,
        name: &str,
        seed: u64,
        real: &LabeledDataset<S>,
        synth: &LabeledDataset<S>,
        synth_fp: &str,
    ) -> Result<ConvNet<S>> {
        let path = self.path(format!("models/clf/{name}.json"));
        let fp = fingerprint(json!({
            "real": self.longtail_fp(seed),
            "synth": synth_fp,
            "train": self.cfg.train,
            "arch": self.cfg.models.classifier,
            "seed": seed,
        }));
        if let Some(ck) = load_stamped::<ClassifierCheckpoint>(&path, &fp)? {
            return ck.restore();
        }
        let shape = real.image_shape().ok_or_else(|| Error::Data("dataset has no images".into()))?;
        let arch = self.cfg.models.classifier.arch(shape, real.num_classes());
        let mut net = ConvNet::new(arch, &mut child(seed, &[STAGE_CLF_INIT]));
        let log_path = self.path(format!("metrics/{name}.jsonl"));
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
        }
        if let Some(parent) = log_path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let history = train_from_scratch(
            &mut net,
            real,
            synth,
            &self.cfg.train,
            &mut child(seed, &[STAGE_CLF_TRAIN]),
            Some(&log_path),
        )?;
        store_stamped(&path, &fp, &ClassifierCheckpoint::new(&net, &self.cfg.train, seed, history))?;
        Ok(net)
    }

    /// Encoder features of every real training image of the full dataset.
    pub fn real_features(&self) -> Result<&Array2<S>> {
        if let Some(f) = self.real_features.get() {
            return Ok(f);
        }
        let ds = self.dataset()?;
        let imgs: Vec<_> = ds
            .samples()
            .iter()
            .filter(|s| s.split == Split::Train && s.provenance.is_real())
            .map(|s| &s.pixels)
            .collect();
        let f = self.encoder()?.encode_rows(&imgs)?;
        Ok(self.real_features.get_or_init(|| f))
    }

    pub fn features(&self, ds: &LabeledDataset<S>) -> Result<Array2<S>> {
        let imgs: Vec<_> = ds.samples().iter().map(|s| &s.pixels).collect();
        self.encoder()?.encode_rows(&imgs)
    }

    /// FID between `ds` and the real training images, in encoder feature space.
    pub fn fid_to_real(&self, ds: &LabeledDataset<S>) -> Result<f64> {
        fid_score(&self.features(ds)?, self.real_features()?)
    }

    fn evaluate(&self, clf: &ConvNet<S>, lt: &LabeledDataset<S>) -> Result<CategoryAccuracy> {
        let test: Vec<_> = lt.samples().iter().filter(|s| s.split == Split::Test).collect();
        if test.is_empty() {
            return Err(Error::Data("dataset has no test split".into()));
        }
        let preds = predict(clf, &test.iter().map(|s| &s.pixels).collect::<Vec<_>>());
        let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
        top1_by_category(&preds, &labels, &real_train_counts(lt), &self.cfg.longtail.thresholds)
    }

    /// Train and evaluate one classifier: real long-tail data for `seed` plus,
    /// unless `augmentation` is `None`, its balance-plan synthetic set.
    pub fn longtail_cell(
        &self,
        augmentation: Option<AugmentationSpec>,
        cfg_scale: f64,
        seed: u64,
    ) -> Result<LongTailRow> {
        let lt = self.longtail(seed)?;
        let (label, synth, synth_fp) = match augmentation {
            None => (REAL_ONLY.to_string(), LabeledDataset::empty(lt.class_names().to_vec()), String::new()),
            Some(a) => {
                let tag = a.tag();
                let (ds, fp, _) = self.longtail_synthetic_with(a, cfg_scale, seed)?;
                (tag, ds, fp)
            }
        };
        let name = match synth.is_empty() {
            true => format!("{}-s{seed}", slug(&label)),
            false => format!("{}-{}-s{seed}", slug(&label), scale_slug(cfg_scale)),
        };
        let clf = self.classifier(&name, seed, &lt, &synth, &synth_fp)?;
        let accuracy = self.evaluate(&clf, &lt)?;
        let fid = if synth.len() >= 2 { Some(self.fid_to_real(&synth)?) } else { None };
        log::info!("{name}: overall {:.3} few {:?}", accuracy.overall, accuracy.few);
        Ok(LongTailRow {
            method: label,
            seed,
            cfg_scale: (!synth.is_empty()).then_some(cfg_scale),
            accuracy,
            fid,
            synthetic: synth.len(),
        })
    }

    /// Every configured method (and optionally the real-only baseline) for every seed.
    pub fn run_longtail(&self) -> Result<LongTailResults> {
        let lt = &self.cfg.longtail;
        let mut rows = Vec::new();
        for &seed in &self.cfg.seeds {
            if lt.include_real_only {
                rows.push(self.longtail_cell(None, lt.cfg_scale, seed)?);
            }
            for &m in &lt.methods {
                rows.push(self.longtail_cell(Some(self.augmentation(m)), lt.cfg_scale, seed)?);
            }
        }
        Ok(LongTailResults::from_rows(rows))
    }

    /// FID of every configured method's synthetic set for every seed.
    pub fn run_fid(&self) -> Result<Vec<FidRow>> {
        let lt = &self.cfg.longtail;
        let mut out = Vec::new();
        for &seed in &self.cfg.seeds {
            for &m in &lt.methods {
                let (ds, _, _) = self.longtail_synthetic(m, lt.cfg_scale, seed)?;
                out.push(FidRow {
                    method: self.augmentation(m).tag(),
                    seed,
                    fid: self.fid_to_real(&ds)?,
                });
            }
        }
        Ok(out)
    }

    /// The long-tail pipeline repeated per guidance scale with everything else shared.
    pub fn run_cfg_sweep(&self, scales: &[f64]) -> Result<CfgSweepResults> {
        if scales.is_empty() {
            return Err(Error::Config("no CFG scales to sweep".into()));
        }
        let method = self.cfg.sweeps.cfg_method;
        let rows = scales
            .iter()
            .map(|&s| match self.cfg_sweep_cell(method, s) {
                Ok(row) => row,
                Err(e) => {
                    log::error!("CFG scale {s}: {e}");
                    CfgSweepRow {
                        cfg_scale: s,
                        accuracy: None,
                        diversity: None,
                        feature_variance: None,
                        error: Some(e.to_string()),
                    }
                }
            })
            .collect();
        Ok(CfgSweepResults {
            method: self.augmentation(method).tag(),
            rows,
        })
    }

    fn cfg_sweep_cell(&self, method: AugMethod, scale: f64) -> Result<CfgSweepRow> {
        let mut accs = Vec::new();
        for &seed in &self.cfg.seeds {
            accs.push(self.longtail_cell(Some(self.augmentation(method)), scale, seed)?.accuracy);
        }
        let (synth, _, _) = self.longtail_synthetic(method, scale, self.cfg.seeds[0])?;
        let f = self.features(&synth)?.mapv(|v| v.to_f64_lossy());
        let labels: Vec<usize> = synth.samples().iter().map(|s| s.label).collect();
        Ok(CfgSweepRow {
            cfg_scale: scale,
            accuracy: MeanAccuracy::of(&accs.iter().collect::<Vec<_>>()),
            diversity: per_class_mean(&f, &labels, mean_pairwise_distance),
            feature_variance: per_class_mean(&f, &labels, total_variance),
            error: None,
        })
    }

    /// Generation under a range of dropout probabilities with diversity and
    /// realism measured on the output.
    pub fn run_dropout_sweep(&self, ps: &[f64]) -> Result<DropoutSweepResults> {
        if ps.is_empty() {
            return Err(Error::Config("no dropout probabilities to sweep".into()));
        }
        let method = self.cfg.sweeps.dropout_method;
        if !method.uses_dropout() {
            return Err(Error::Config(format!("dropout sweep method {method} does not use dropout")));
        }
        let rows = ps
            .iter()
            .map(|&p| match self.dropout_sweep_cell(method, p) {
                Ok(row) => row,
                Err(e) => {
                    log::error!("dropout p={p}: {e}");
                    DropoutSweepRow {
                        p,
                        embedding_variance: None,
                        diversity: None,
                        fid_to_real: None,
                        error: Some(e.to_string()),
                    }
                }
            })
            .collect();
        Ok(DropoutSweepResults {
            method: method.name().to_string(),
            cfg_scale: self.cfg.longtail.cfg_scale,
            images_per_class: self.cfg.sweeps.dropout_images_per_class,
            rows,
        })
    }

    fn dropout_sweep_cell(&self, method: AugMethod, p: f64) -> Result<DropoutSweepRow> {
        let seed = self.cfg.seeds[0];
        let lt = self.longtail(seed)?;
        let n = self.cfg.sweeps.dropout_images_per_class;
        let plan = BalancePlan {
            quota: vec![n; lt.num_classes()],
            target: n,
        };
        let spec = self.campaign_spec(
            self.augmentation(method).with_dropout(p),
            self.cfg.longtail.cfg_scale,
            derive_seed(seed, &[STAGE_DROPOUT]),
        );
        let embedding_variance = conditioning_variance(&spec, &plan, &lt, self.encoder()?)?;
        let name = format!("dropout-{}-s{seed}", slug(&spec.augmentation.tag()));
        let (synth, _, _) = self.synthetic_set(&name, &lt, &self.longtail_fp(seed), &spec, &plan)?;
        let f = self.features(&synth)?.mapv(|v| v.to_f64_lossy());
        let labels: Vec<usize> = synth.samples().iter().map(|s| s.label).collect();
        Ok(DropoutSweepRow {
            p,
            embedding_variance: Some(embedding_variance),
            diversity: per_class_mean(&f, &labels, mean_pairwise_distance),
            fid_to_real: Some(self.fid_to_real(&synth)?),
            error: None,
        })
    }

    fn pretrained_dataset(&self) -> Result<LabeledDataset<S>> {
        let fs_cfg = &self.cfg.fewshot;
        let base = match self.cfg.dataset.desk_spec() {
            Some(mut spec) => {
                spec.seed = fs_cfg.pretrain_dataset_seed;
                desk_dataset(&spec)
            }
            None => self.dataset()?.clone(),
        };
        if fs_cfg.pretrain_classes.is_empty() {
            return Ok(base);
        }
        let classes = &fs_cfg.pretrain_classes;
        if let Some(&k) = classes.iter().find(|&&k| k >= base.num_classes()) {
            return Err(Error::Config(format!("pretrain class {k} out of range")));
        }
        let names = classes.iter().map(|&k| base.class_names()[k].clone()).collect();
        let samples = base
            .into_samples()
            .into_iter()
            .filter_map(|mut s| {
                let new = classes.iter().position(|&k| k == s.label)?;
                s.label = new;
                Some(s)
            })
            .collect();
        LabeledDataset::new(names, samples)
    }

    /// Backbone used by few-shot fine-tuning, trained on a disjoint image set.
    pub fn pretrained(&self) -> Result<ConvNet<S>> {
        let fs_cfg = &self.cfg.fewshot;
        let path = self.path("models/pretrained.json");
        let fp = fingerprint(json!({
            "data": self.dataset_fp(),
            "classes": fs_cfg.pretrain_classes,
            "data_seed": fs_cfg.pretrain_dataset_seed,
            "train": fs_cfg.pretrain,
            "arch": self.cfg.models.classifier,
            "seed": self.cfg.model_seed,
        }));
        if let Some(ck) = load_stamped::<ClassifierCheckpoint>(&path, &fp)? {
            return ck.restore();
        }
        let ds = self.pretrained_dataset()?;
        let shape = ds.image_shape().ok_or_else(|| Error::Data("pretraining set is empty".into()))?;
        let arch = self.cfg.models.classifier.arch(shape, ds.num_classes());
        let mut net = ConvNet::new(arch, &mut child(self.cfg.model_seed, &[STAGE_PRETRAIN, 0]));
        let empty = LabeledDataset::empty(ds.class_names().to_vec());
        let history = train_from_scratch(
            &mut net,
            &ds,
            &empty,
            &fs_cfg.pretrain,
            &mut child(self.cfg.model_seed, &[STAGE_PRETRAIN, 1]),
            None,
        )?;
        store_stamped(
            &path,
            &fp,
            &ClassifierCheckpoint::new(&net, &fs_cfg.pretrain, self.cfg.model_seed, history),
        )?;
        Ok(net)
    }

    /// Last-layer fine-tuning for every shot count and method, `trials` draws each.
    pub fn run_fewshot(&self) -> Result<FewShotResults> {
        let fs_cfg = &self.cfg.fewshot;
        let seed = self.cfg.seeds[0];
        let backbone = self.pretrained()?;
        let full = self.dataset()?;
        let mut rows = Vec::new();
        for &shots in &fs_cfg.shots {
            let spec = FewShotSpec {
                shots,
                trials: fs_cfg.trials,
                allow_nonstandard: false,
            };
            let trials = make_fewshot_subsets(full, &spec, &mut child(seed, &[STAGE_FEWSHOT, shots as u64]))?;
            let mut methods: Vec<Option<AugMethod>> = Vec::new();
            if fs_cfg.include_real_only {
                methods.push(None);
            }
            methods.extend(fs_cfg.methods.iter().copied().map(Some));
            for method in methods {
                let synth = match method {
                    None => Vec::new(),
                    Some(m) => trials
                        .iter()
                        .map(|t| {
                            let plan = BalancePlan {
                                quota: vec![fs_cfg.synthetic_per_class; t.dataset.num_classes()],
                                target: fs_cfg.synthetic_per_class,
                            };
                            let spec = self.campaign_spec(
                                self.augmentation(m),
                                fs_cfg.cfg_scale,
                                derive_seed(t.seed, &[STAGE_CAMPAIGN]),
                            );
                            let (ds, _) = run_generation_campaign(
                                &plan,
                                &spec,
                                &t.dataset,
                                self.encoder()?,
                                self.generator()?,
                                self.cache()?,
                            )?;
                            Ok(ds)
                        })
                        .collect::<Result<Vec<_>>>()?,
                };
                let report = finetune_last_layer(
                    Some(&backbone),
                    &trials,
                    &synth,
                    &fs_cfg.finetune,
                    &mut child(seed, &[STAGE_FINETUNE, shots as u64]),
                )?;
                let label = method.map_or(REAL_ONLY.to_string(), |m| self.augmentation(m).tag());
                log::info!("{shots}-shot {label}: mean {:.3} var {:.5}", report.mean, report.variance);
                rows.push(FewShotRow {
                    method: label,
                    shots,
                    report,
                });
            }
        }
        Ok(FewShotResults {
            cfg_scale: fs_cfg.cfg_scale,
            synthetic_per_class: fs_cfg.synthetic_per_class,
            rows,
        })
    }
}

/// Mean per-coordinate within-class variance of the conditioning vectors a
/// campaign would draw.
pub fn conditioning_variance<S: Scalar, E: crate::augcond::ImageEncoder<S> + ?Sized>(
    spec: &CampaignSpec,
    plan: &BalancePlan,
    real: &LabeledDataset<S>,
    encoder: &E,
) -> Result<f64> {
    let mut per_class = Vec::new();
    for (k, &quota) in plan.quota.iter().enumerate() {
        let jobs = quota.div_ceil(spec.batch.max(1));
        let rows: Vec<Vec<f64>> = (0..jobs)
            .map(|j| {
                let b = build_conditioning(
                    &spec.augmentation,
                    real,
                    k,
                    encoder,
                    &mut child(spec.seed, &[k as u64, j as u64, 0]),
                )?;
                Ok(b.image_embedding.values().iter().map(|v| v.to_f64_lossy()).collect())
            })
            .collect::<Result<_>>()?;
        if rows.len() < 2 {
            continue;
        }
        let d = rows[0].len();
        let m = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
        per_class.push(total_variance(&m).expect("at least two rows") / d as f64);
    }
    if per_class.is_empty() {
        return Err(Error::Data("too few conditioning draws to estimate a variance".into()));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}
