mod common;

use std::cell::Cell;

use augsynth::augcond::{AugMethod, AugmentationSpec, ConditioningBundle, ImageEncoder};
use augsynth::curriculum::{BalancePlan, Category, CategoryThresholds};
use augsynth::datamodel::{
    EmbeddingVector, ImageSample, ImageShape, ImageTensor, LabeledDataset, Split, SyntheticCache,
};
use augsynth::generator::{synthetic_samples, GenerationConfig, GeneratorInterface};
use augsynth::harness::{
    cfg_sweep_table, conditioning_variance, dropout_table, emit_report, fid_score, longtail_table,
    run_generation_campaign, top1_by_category, CampaignSpec, LongTailResults, MeanAccuracy, ReportInput,
    FEATURE_EXTRACTOR_NOTE,
};
use augsynth::rng::seeded;
use augsynth::{Error, Result};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(n: usize, means: &[f64], sds: &[f64], seed: u64) -> Array2<f64> {
    let mut rng = seeded(seed);
    Array2::from_shape_fn((n, means.len()), |(_, j)| means[j] + sds[j] * rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn fid_of_identical_sets_is_zero() {
    let a = gaussian(500, &[0.3; 6], &[1.0, 2.0, 0.5, 1.0, 1.0, 3.0], 1);
    assert!(fid_score(&a, &a).unwrap().abs() < 1e-6);
}

#[test]
fn fid_of_shifted_gaussians_is_the_squared_shift() {
    let v = [1.0, -0.5, 2.0, 0.0, 0.5, 1.5, -1.0, 0.25];
    let expect: f64 = v.iter().map(|x| x * x).sum();
    let a = gaussian(10_000, &[0.0; 8], &[1.0; 8], 2);
    let b = gaussian(10_000, &v, &[1.0; 8], 3);
    let fid = fid_score(&a, &b).unwrap();
    assert!((fid - expect).abs() / expect < 0.05, "{fid} vs {expect}");
    assert!((fid - fid_score(&b, &a).unwrap()).abs() < 1e-8);
}

#[test]
fn fid_of_diagonal_gaussians_matches_closed_form() {
    let va = [1.0, 4.0, 0.25, 9.0, 1.0, 2.0, 0.5, 3.0];
    let vb = [4.0, 1.0, 1.0, 1.0, 0.25, 2.0, 2.0, 0.1];
    let expect: f64 = va.iter().zip(&vb).map(|(a, b): (&f64, &f64)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    let sa: Vec<f64> = va.iter().map(|v: &f64| v.sqrt()).collect();
    let sb: Vec<f64> = vb.iter().map(|v: &f64| v.sqrt()).collect();
    let a = gaussian(10_000, &[0.0; 8], &sa, 4);
    let b = gaussian(10_000, &[0.0; 8], &sb, 5);
    let fid = fid_score(&a, &b).unwrap();
    assert!((fid - expect).abs() / expect < 0.05, "{fid} vs {expect}");
    assert!((fid - fid_score(&b, &a).unwrap()).abs() < 1e-8);
}

#[test]
fn fid_rejects_mismatched_widths() {
    let a = gaussian(20, &[0.0; 3], &[1.0; 3], 6);
    let b = gaussian(20, &[0.0; 4], &[1.0; 4], 7);
    assert!(fid_score(&a, &b).is_err());
}

#[test]
fn top1_perfect_and_micro_cases() {
    let t = CategoryThresholds::default();
    let counts = [150, 50, 5];
    let labels = [0, 0, 1, 1, 2, 2];
    let acc = top1_by_category(&labels, &labels, &counts, &t).unwrap();
    assert_eq!((acc.overall, acc.many, acc.medium, acc.few), (1.0, Some(1.0), Some(1.0), Some(1.0)));

    let acc = top1_by_category(&[0, 0, 0, 0], &[0, 0, 1, 1], &[150, 5], &t).unwrap();
    assert_eq!((acc.overall, acc.many, acc.medium, acc.few), (0.5, Some(1.0), None, Some(0.0)));
    assert!(top1_by_category(&[0], &[0, 1], &[150, 5], &t).is_err());
}

#[test]
fn top1_of_random_guesses_is_chance() {
    let k = 10;
    let n = 20_000;
    let mut rng = seeded(8);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let acc = top1_by_category(&preds, &labels, &[100; 10], &CategoryThresholds::default()).unwrap();
    let p = 1.0 / k as f64;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((acc.overall - p).abs() < 3.0 * sd, "{}", acc.overall);
}

proptest! {
    #[test]
    fn overall_is_the_support_weighted_mean(
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200),
        counts in prop::collection::vec(1usize..250, 6),
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let acc = top1_by_category(&preds, &labels, &counts, &CategoryThresholds::default()).unwrap();
        let total: usize = acc.support.iter().sum();
        prop_assert_eq!(total, labels.len());
        let weighted: f64 = Category::ALL
            .iter()
            .filter_map(|&c| acc.get(c).map(|a| a * acc.support[c as usize] as f64))
            .sum::<f64>()
            / total as f64;
        prop_assert!((weighted - acc.overall).abs() < 1e-12);
    }
}

struct Flatten;

impl ImageEncoder<f32> for Flatten {
    fn encoder_id(&self) -> &str {
        "flatten"
    }
    fn encode(&self, x: &ImageTensor<f32>) -> Result<EmbeddingVector<f32>> {
        EmbeddingVector::new(x.data().to_vec(), "flatten")
    }
}

/// Fills each image with a value derived from the request; fails the first
/// `flaky` calls with a retriable error.
struct Stub {
    calls: Cell<usize>,
    flaky: usize,
    fatal: bool,
}

impl Stub {
    fn new() -> Self {
        Self {
            calls: Cell::new(0),
            flaky: 0,
            fatal: false,
        }
    }
}

impl GeneratorInterface<f32> for Stub {
    fn generator_id(&self) -> String {
        "stub".into()
    }

    fn generate(&self, bundle: &ConditioningBundle<f32>, cfg: &GenerationConfig) -> Result<Vec<ImageSample<f32>>> {
        self.calls.set(self.calls.get() + 1);
        if self.fatal {
            return Err(Error::Generation("stub refuses".into()));
        }
        if self.calls.get() <= self.flaky {
            return Err(Error::Retriable {
                key: "k".into(),
                reason: "busy".into(),
            });
        }
        let shape = ImageShape::new(2, 2, 1);
        let images = (0..cfg.batch)
            .map(|i| {
                let v = ((cfg.seed % 1000) as f32 + i as f32) / 2000.0;
                ImageTensor::filled(shape, v).quantized()
            })
            .collect();
        synthetic_samples("stub", bundle, cfg, images)
    }
}

fn real(per_class: &[usize]) -> LabeledDataset<f32> {
    let mut samples = Vec::new();
    for (k, &n) in per_class.iter().enumerate() {
        for i in 0..n {
            let px = ImageTensor::filled(ImageShape::new(2, 2, 1), (k * 10 + i) as f32 / 100.0);
            samples.push(ImageSample::real(format!("r{k}-{i}"), px, k, Split::Train));
        }
    }
    let names = (0..per_class.len()).map(|k| format!("c{k}")).collect();
    LabeledDataset::new(names, samples).unwrap()
}

fn spec(batch: usize) -> CampaignSpec {
    CampaignSpec {
        augmentation: AugmentationSpec::new(AugMethod::EmbedCutMixDropout),
        cfg_scale: 2.0,
        steps: 30,
        batch,
        seed: 77,
        retries: 2,
    }
}

#[test]
fn zero_quota_campaign_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cache = SyntheticCache::open(dir.path()).unwrap();
    let stub = Stub::new();
    let (ds, stats) =
        run_generation_campaign(&BalancePlan::zero(3, 5), &spec(1), &real(&[5, 5, 5]), &Flatten, &stub, &cache)
            .unwrap();
    assert!(ds.is_empty());
    assert_eq!(stats.generated, 0);
    assert_eq!(stub.calls.get(), 0);
}

#[test]
fn campaign_of_a_thousand_is_cached_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let quota = vec![100, 250, 0, 300, 5, 45, 100, 100, 50, 50];
    assert_eq!(quota.iter().sum::<usize>(), 1000);
    let plan = BalancePlan {
        quota: quota.clone(),
        target: 300,
    };
    let data = real(&[5; 10]);
    for batch in [1, 4] {
        let cache = SyntheticCache::open(dir.path().join(format!("b{batch}"))).unwrap();
        let stub = Stub::new();
        let (ds, stats) = run_generation_campaign(&plan, &spec(batch), &data, &Flatten, &stub, &cache).unwrap();
        assert_eq!(ds.class_histogram(), quota);
        assert_eq!(stats.generated, cache.len());
        assert!(ds.samples().iter().all(|s| !s.provenance.is_real()));
        let calls = stub.calls.get();

        let cache = SyntheticCache::open(dir.path().join(format!("b{batch}"))).unwrap();
        let (again, stats) = run_generation_campaign(&plan, &spec(batch), &data, &Flatten, &stub, &cache).unwrap();
        assert_eq!(stats.generated, 0);
        assert_eq!(stub.calls.get(), calls);
        assert_eq!(again, ds);
    }
}

#[test]
fn campaign_retries_only_retriable_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cache = SyntheticCache::open(dir.path()).unwrap();
    let plan = BalancePlan {
        quota: vec![1, 1],
        target: 2,
    };
    let data = real(&[1, 1]);
    let stub = Stub {
        flaky: 2,
        ..Stub::new()
    };
    let (_, stats) = run_generation_campaign(&plan, &spec(1), &data, &Flatten, &stub, &cache).unwrap();
    assert_eq!(stats.retries, 2);

    let stub = Stub {
        flaky: 10,
        ..Stub::new()
    };
    let err = run_generation_campaign(&plan, &spec(1), &data, &Flatten, &stub, &tmp_cache(&dir, "a")).unwrap_err();
    assert!(err.is_retriable());
    assert_eq!(stub.calls.get(), 3);

    let stub = Stub {
        fatal: true,
        ..Stub::new()
    };
    let err = run_generation_campaign(&plan, &spec(1), &data, &Flatten, &stub, &tmp_cache(&dir, "b")).unwrap_err();
    assert!(matches!(err, Error::Generation(_)));
    assert_eq!(stub.calls.get(), 1);
}

fn tmp_cache(dir: &tempfile::TempDir, name: &str) -> SyntheticCache {
    SyntheticCache::open(dir.path().join(name)).unwrap()
}

#[test]
fn conditioning_variance_grows_with_dropout() {
    let data = real(&[30, 30]);
    let plan = BalancePlan {
        quota: vec![400, 400],
        target: 400,
    };
    let mut last = 0.0;
    for p in [0.1, 0.4, 0.7] {
        let mut s = spec(1);
        s.augmentation = AugmentationSpec::new(AugMethod::Dropout).with_dropout(p);
        let v = conditioning_variance(&s, &plan, &data, &Flatten).unwrap();
        assert!(v > last, "p={p}: {v} <= {last}");
        last = v;
    }
}

fn empty_input() -> ReportInput {
    ReportInput {
        config_name: "tiny".into(),
        config_hash: "abc".into(),
        seeds: vec![0],
        model_seed: 7,
        feature_extractor: FEATURE_EXTRACTOR_NOTE.into(),
        longtail: None,
        cfg_sweep: None,
        dropout_sweep: None,
        fewshot: None,
    }
}

#[test]
fn empty_report_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    assert!(emit_report(&empty_input(), &out).is_err());
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());

    let mut bad = empty_input();
    bad.longtail = Some(LongTailResults::from_rows(Vec::new()));
    assert!(emit_report(&bad, &out).is_err());
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn tiny_workspace_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ws = common::workspace(common::tiny_config(), dir.path());

    let lt = ws.run_longtail().unwrap();
    assert_eq!(lt.rows.len(), 3);
    let table = longtail_table(&lt);
    assert!(table.starts_with("| Method | Overall | Many | Median | Few | Few std | FID |"));
    for m in ["Real only", "RandomImage", "Embed-CutMix-Dropout"] {
        assert!(table.contains(m), "{table}");
    }
    let ecd = lt.rows.iter().find(|r| r.method == "Embed-CutMix-Dropout").unwrap();
    assert_eq!(ecd.synthetic, 560);
    assert!(ecd.fid.is_some());

    let sweep = ws.run_cfg_sweep(&[2.0, 4.0, 7.0, 10.0]).unwrap();
    assert_eq!(sweep.rows.len(), 4);
    assert!(sweep.rows.iter().all(|r| r.error.is_none() && r.accuracy.is_some() && r.feature_variance.is_some()));
    let rows = |t: &str| t.lines().filter(|l| l.starts_with("| ") && l.as_bytes()[2].is_ascii_digit()).count();
    assert_eq!(rows(&cfg_sweep_table(&sweep)), 4);

    let single = ws.run_cfg_sweep(&[2.0]).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.rows[0], sweep.rows[0]);
    let direct = MeanAccuracy::of(&[&ecd.accuracy]).unwrap();
    assert_eq!(single.rows[0].accuracy.as_ref(), Some(&direct));

    let dropout = ws.run_dropout_sweep(&[0.0, 0.4, 1.0]).unwrap();
    assert_eq!(dropout.rows.len(), 3);
    assert!(dropout.rows.iter().all(|r| r.error.is_none() && r.fid_to_real.is_some()));
    assert_eq!(rows(&dropout_table(&dropout)), 3);

    let fewshot = ws.run_fewshot().unwrap();
    assert_eq!(fewshot.rows.len(), 2 * 2);
    for row in &fewshot.rows {
        assert_eq!(row.report.trials.len(), 2);
    }

    let mut input = ws.report_input().unwrap();
    input.longtail = Some(lt);
    input.cfg_sweep = Some(sweep);
    input.dropout_sweep = Some(dropout);
    input.fewshot = Some(fewshot);
    let out = dir.path().join("report");
    let files = emit_report(&input, &out).unwrap();
    for name in ["table1.md", "table2.md", "fewshot.md", "fewshot.svg", "report.json"] {
        assert!(files.iter().any(|p| p.ends_with(name)), "{name} missing");
    }
    let first: Vec<Vec<u8>> = files.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let again = emit_report(&input, &out).unwrap();
    let second: Vec<Vec<u8>> = again.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(first, second);
}
