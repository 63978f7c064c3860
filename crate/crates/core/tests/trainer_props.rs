use augsynth::curriculum::{make_fewshot_subsets, FewShotSpec};
use augsynth::datamodel::{desk_dataset, DeskSpec, LabeledDataset};
use augsynth::nn::{ConvNet, ConvNetArch, HasParams};
use augsynth::rng::{child, seeded};
use augsynth::trainer::{
    balanced_softmax_grad, balanced_softmax_loss, cross_entropy_loss, finetune_last_layer, train_from_scratch,
    ClassifierInterface, FineTuneConfig, TrainConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn fixture(seed: u64, train: usize) -> LabeledDataset<f32> {
    desk_dataset(&DeskSpec {
        seed,
        train_per_class: train,
        val_per_class: 20,
        test_per_class: 0,
    })
}

fn fresh(ds: &LabeledDataset<f32>, seed: u64) -> ConvNet<f32> {
    ConvNet::new(ConvNetArch::desk(ds.image_shape().unwrap(), ds.num_classes()), &mut seeded(seed))
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 15,
        ..TrainConfig::desk()
    }
}

#[test]
fn two_class_closed_form() {
    let l = balanced_softmax_loss::<f64>(&[0.0, 0.0], 0, &[1, 3]).unwrap();
    assert!((l - 1.3862944).abs() < 1e-6, "{l}");
    assert!(balanced_softmax_loss::<f64>(&[0.0, 0.0], 0, &[0, 3]).is_err());
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = seeded(21);
    let h = 1e-6;
    for _ in 0..100 {
        let k = rng.random_range(2..12);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let counts: Vec<u64> = (0..k).map(|_| rng.random_range(1..2000)).collect();
        let y = rng.random_range(0..k);
        let g = balanced_softmax_grad(&z, y, &counts).unwrap();
        for i in 0..k {
            let mut up = z.clone();
            let mut down = z.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (balanced_softmax_loss(&up, y, &counts).unwrap() - balanced_softmax_loss(&down, y, &counts).unwrap())
                / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-5, "coordinate {i}: analytic {} numeric {fd}", g[i]);
        }
    }
}

proptest! {
    #[test]
    fn equal_counts_is_cross_entropy(
        z in prop::collection::vec(-20.0f64..20.0, 2..16),
        c in 1u64..10_000,
        y in any::<prop::sample::Index>(),
    ) {
        let y = y.index(z.len());
        let counts = vec![c; z.len()];
        let a = balanced_softmax_loss(&z, y, &counts).unwrap();
        let b = cross_entropy_loss(&z, y).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn shift_invariant_and_monotone_in_target_logit(
        z in prop::collection::vec(-10.0f64..10.0, 2..10),
        counts in prop::collection::vec(1u64..1000, 10),
        shift in -50.0f64..50.0,
        y in any::<prop::sample::Index>(),
    ) {
        let y = y.index(z.len());
        let counts = &counts[..z.len()];
        let base = balanced_softmax_loss(&z, y, counts).unwrap();
        prop_assert!(base >= 0.0);
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        prop_assert!((balanced_softmax_loss(&shifted, y, counts).unwrap() - base).abs() < 1e-9);
        let mut up = z.clone();
        up[y] += 0.5;
        prop_assert!(balanced_softmax_loss(&up, y, counts).unwrap() < base);
    }
}

#[test]
fn desk_classifier_learns_and_is_deterministic() {
    let ds = fixture(31, 30);
    let empty = LabeledDataset::empty(ds.class_names().to_vec());
    let cfg = small_config();
    let mut a = fresh(&ds, 1);
    let hist = train_from_scratch(&mut a, &ds, &empty, &cfg, &mut seeded(2), None).unwrap();
    assert_eq!(hist.len(), cfg.epochs);
    let best = hist.iter().filter_map(|e| e.val_top1).fold(0.0, f64::max);
    assert!(best > 0.1, "best val top-1 {best}");

    let losses: Vec<f64> = hist.iter().map(|e| e.train_loss).collect();
    let avg: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for w in avg.windows(2) {
        assert!(w[1] <= w[0], "moving average rose: {avg:?}");
    }

    let mut b = fresh(&ds, 1);
    train_from_scratch(&mut b, &ds, &empty, &cfg, &mut seeded(2), None).unwrap();
    assert_eq!(a.snapshot(), b.snapshot());
}

#[test]
fn finetuning_only_moves_the_head() {
    let pre = fixture(41, 20);
    let empty = LabeledDataset::empty(pre.class_names().to_vec());
    let mut backbone = fresh(&pre, 3);
    let cfg = TrainConfig {
        epochs: 6,
        loss: augsynth::trainer::LossKind::CrossEntropy,
        ..TrainConfig::desk()
    };
    train_from_scratch(&mut backbone, &pre, &empty, &cfg, &mut seeded(4), None).unwrap();
    let before = backbone.backbone_checksum();

    let target = fixture(42, 16);
    let ft = FineTuneConfig {
        epochs: 20,
        ..FineTuneConfig::desk()
    };
    let mut means = Vec::new();
    for shots in [1, 16] {
        let trials = make_fewshot_subsets(&target, &FewShotSpec::new(shots), &mut child(5, &[shots as u64])).unwrap();
        let report = finetune_last_layer(Some(&backbone), &trials, &[], &ft, &mut seeded(6)).unwrap();
        assert_eq!(report.trials.len(), 4);
        assert_eq!(report.backbone_checksum, before);
        let vals: Vec<f64> = report.trials.iter().map(|t| t.best_val_top1).collect();
        let mean = vals.iter().sum::<f64>() / 4.0;
        assert!((report.mean - mean).abs() < 1e-12);
        assert!(report.variance >= 0.0);
        means.push(report.mean);
    }
    assert_eq!(backbone.backbone_checksum(), before);
    assert!(means[1] >= means[0], "16-shot {} below 1-shot {}", means[1], means[0]);
    assert!(finetune_last_layer::<f32, ConvNet<f32>>(None, &[], &[], &ft, &mut seeded(0)).is_err());
}
