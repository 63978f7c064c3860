//! Experiment orchestration: configs, generation campaigns, evaluation,
//! sweeps and static reports.

mod campaign;
mod config;
mod metrics;
mod pipeline;
mod report;

pub use campaign::{run_generation_campaign, CampaignSpec, CampaignStats};
pub use config::{
    preset_names, AugmentationDefaults, ClassifierSettings, DatasetConfig, DenoiserSettings, ExperimentConfig,
    ExternalConfig, FewShotConfig, GenerationDefaults, LongTailConfig, ModelsConfig, ProfileConfig, ScalarKind,
    ScheduleConfig, SweepConfig, CONFIG_VERSION,
};
pub use metrics::{fid_score, mean_pairwise_distance, per_class_mean, top1_by_category, total_variance, CategoryAccuracy};
pub use pipeline::{
    conditioning_variance, slug, AnyGenerator, CfgSweepResults, CfgSweepRow, DropoutSweepResults, DropoutSweepRow,
    FewShotResults, FewShotRow, FidRow, LongTailResults, LongTailRow, MeanAccuracy, MethodSummary, Workspace, REAL_ONLY,
    RESULT_CFG_SWEEP, RESULT_DROPOUT_SWEEP, RESULT_FEWSHOT, RESULT_FID, RESULT_LONGTAIL,
};
pub use report::{
    cfg_sweep_table, dropout_table, emit_report, fewshot_table, longtail_table, Chart, ReportInput, Series,
    FEATURE_EXTRACTOR_NOTE,
};
