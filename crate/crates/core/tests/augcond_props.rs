use augsynth::augcond::{
    build_conditioning, cutmix_embedding, cutmix_pixel, cutmix_pixel_with_mask, dropout_embedding,
    mixup_embedding, mixup_pixel, sample_mix_coefficient, sample_patch_mask, select_source_pair, AugMethod,
    AugmentationSpec, EmbedCutMode, ImageEncoder, MixCoefficient,
};
use augsynth::datamodel::{EmbeddingVector, ImageSample, ImageShape, ImageTensor, LabeledDataset, Split};
use augsynth::rng::seeded;
use augsynth::Result;
use proptest::prelude::*;

struct Flatten;

impl ImageEncoder<f64> for Flatten {
    fn encoder_id(&self) -> &str {
        "flatten"
    }
    fn encode(&self, x: &ImageTensor<f64>) -> Result<EmbeddingVector<f64>> {
        EmbeddingVector::new(x.data().to_vec(), "flatten")
    }
}

fn lam(v: f64) -> MixCoefficient {
    MixCoefficient::new(v).unwrap()
}

fn emb(v: Vec<f64>) -> EmbeddingVector<f64> {
    EmbeddingVector::new(v, "e").unwrap()
}

fn img(side: usize, data: Vec<f64>) -> ImageTensor<f64> {
    ImageTensor::new(ImageShape::new(side, side, 1), data).unwrap()
}

fn one_class(n: usize) -> LabeledDataset<f64> {
    let samples = (0..n)
        .map(|i| {
            let data = (0..16).map(|j| ((i * 16 + j) % 97) as f64 / 97.0).collect();
            ImageSample::real(format!("img{i}"), img(4, data), 0, Split::Train)
        })
        .collect();
    LabeledDataset::new(vec!["thing".into()], samples).unwrap()
}

#[test]
fn beta_one_one_is_uniform() {
    let mut rng = seeded(11);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| sample_mix_coefficient(1.0, &mut rng).unwrap().value()).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    xs.sort_by(f64::total_cmp);
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS statistic {ks}");
}

#[test]
fn cutmix_quarter_patch_on_eight_by_eight() {
    let x1 = ImageTensor::filled(ImageShape::new(8, 8, 3), 0.0);
    let x2 = ImageTensor::filled(ImageShape::new(8, 8, 3), 1.0);
    let mut rng = seeded(5);
    for _ in 0..50 {
        let out = cutmix_pixel(&x1, &x2, lam(0.75), &mut rng).unwrap();
        let replaced = (0..8)
            .flat_map(|y| (0..8).map(move |x| (y, x)))
            .filter(|&(y, x)| out.get(y, x, 0) == 1.0)
            .count();
        assert_eq!(replaced, 16);
    }
}

#[test]
fn embedding_cutmix_replaces_four_of_sixteen() {
    let e1 = emb(vec![0.0; 16]);
    let e2 = emb(vec![1.0; 16]);
    let mut rng = seeded(6);
    for mode in [EmbedCutMode::Contiguous, EmbedCutMode::Scattered] {
        let out = cutmix_embedding(&e1, &e2, lam(0.75), mode, &mut rng).unwrap();
        assert_eq!(out.values().iter().filter(|&&v| v == 1.0).count(), 4);
    }
}

#[test]
fn mixup_lies_on_segment() {
    let a = emb(vec![0.0, 2.0, -1.0]);
    let b = emb(vec![4.0, 2.0, 3.0]);
    let m = mixup_embedding(&a, &b, lam(0.25)).unwrap();
    assert_eq!(m.values(), &[3.0, 2.0, 2.0]);
}

#[test]
fn dropout_statistics_at_point_four() {
    let e = emb(vec![1.0; 100_000]);
    let out = dropout_embedding(&e, 0.4, &mut seeded(7)).unwrap();
    let n = out.dim() as f64;
    let mean = out.values().iter().sum::<f64>() / n;
    let zeros = out.values().iter().filter(|&&v| v == 0.0).count() as f64 / n;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!((zeros - 0.4).abs() < 0.01, "zero fraction {zeros}");
}

#[test]
fn dropout_variance_matches_closed_form_and_increases() {
    let x = 1.5;
    let n = 200_000;
    let mut last = -1.0;
    for p in [0.1, 0.4, 0.7] {
        let out = dropout_embedding(&emb(vec![x; n]), p, &mut seeded(8)).unwrap();
        let vals = out.values();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = x * x * p / (1.0 - p);
        // fourth central moment of the scaled Bernoulli gives the variance of the estimator
        let q = 1.0 - p;
        let s = x / q;
        let mu4 = q * (s - x).powi(4) + p * x.powi(4);
        let sd = ((mu4 - expect * expect) / n as f64).sqrt();
        assert!((var - expect).abs() < 3.0 * sd, "p={p}: {var} vs {expect} (sd {sd})");
        assert!((mean - x).abs() < 3.0 * (expect / n as f64).sqrt(), "p={p}: mean {mean}");
        assert!(var > last);
        last = var;
    }
}

#[test]
fn source_pairs_are_uniform() {
    let ds = one_class(100);
    let mut rng = seeded(9);
    let draws = 10_000;
    let mut counts = std::collections::HashMap::new();
    for _ in 0..draws {
        let (a, b) = select_source_pair(&ds, 0, &mut rng).unwrap();
        assert_ne!(a.id, b.id);
        *counts.entry(a.id.clone()).or_insert(0usize) += 1;
        *counts.entry(b.id.clone()).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 100);
    for (id, c) in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.02).abs() < 0.005, "{id}: {f}");
    }
}

#[test]
fn every_method_is_seed_deterministic() {
    let ds = one_class(10);
    for m in AugMethod::ALL {
        let spec = AugmentationSpec::new(m);
        let a = build_conditioning(&spec, &ds, 0, &Flatten, &mut seeded(1)).unwrap();
        let b = build_conditioning(&spec, &ds, 0, &Flatten, &mut seeded(1)).unwrap();
        assert_eq!(a, b, "{m}");
        let bits = |e: &EmbeddingVector<f64>| e.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.image_embedding), bits(&b.image_embedding));
    }
}

#[test]
fn mixed_methods_record_both_sources() {
    let ds = one_class(10);
    let b = build_conditioning(
        &AugmentationSpec::new(AugMethod::EmbedMixup),
        &ds,
        0,
        &Flatten,
        &mut seeded(2),
    )
    .unwrap();
    assert_eq!(b.source_ids.len(), 2);
    assert!(b.lambda.is_some());
    assert_eq!(b.class_text, "thing");
}

fn unit_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len)
}

proptest! {
    #[test]
    fn mixing_endpoints_are_exact(a in unit_vec(16), b in unit_vec(16), seed in any::<u64>()) {
        let (x1, x2) = (img(4, a.clone()), img(4, b.clone()));
        let (e1, e2) = (emb(a), emb(b));
        let mut rng = seeded(seed);
        prop_assert_eq!(cutmix_pixel(&x1, &x2, lam(1.0), &mut rng).unwrap(), x1.clone());
        prop_assert_eq!(cutmix_pixel(&x1, &x2, lam(0.0), &mut rng).unwrap(), x2.clone());
        prop_assert_eq!(mixup_pixel(&x1, &x2, lam(1.0)).unwrap(), x1.clone());
        prop_assert_eq!(mixup_pixel(&x1, &x2, lam(0.0)).unwrap(), x2.clone());
        for mode in [EmbedCutMode::Contiguous, EmbedCutMode::Scattered] {
            prop_assert_eq!(cutmix_embedding(&e1, &e2, lam(1.0), mode, &mut rng).unwrap(), e1.clone());
            prop_assert_eq!(cutmix_embedding(&e1, &e2, lam(0.0), mode, &mut rng).unwrap(), e2.clone());
        }
        prop_assert_eq!(mixup_embedding(&e1, &e2, lam(1.0)).unwrap(), e1.clone());
        prop_assert_eq!(mixup_embedding(&e1, &e2, lam(0.0)).unwrap(), e2);
    }

    #[test]
    fn cutmix_pixels_come_from_the_right_source(
        a in unit_vec(64),
        b in unit_vec(64),
        l in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let (x1, x2) = (img(8, a), img(8, b));
        let mask = sample_patch_mask(lam(l), 8, 8, &mut seeded(seed));
        prop_assert!(mask.fits(8, 8));
        let out = cutmix_pixel_with_mask(&x1, &x2, &mask).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let src = if mask.contains(y, x) { &x2 } else { &x1 };
                prop_assert_eq!(out.get(y, x, 0), src.get(y, x, 0));
            }
        }
        let side = (8.0 * (1.0 - l).sqrt()).round() as usize;
        prop_assert_eq!(mask.area(), side * side);
    }

    #[test]
    fn identical_inputs_are_fixed_points(a in unit_vec(16), l in 0.0f64..=1.0, seed in any::<u64>()) {
        let x = img(4, a.clone());
        let e = emb(a);
        let mut rng = seeded(seed);
        prop_assert_eq!(cutmix_pixel(&x, &x, lam(l), &mut rng).unwrap(), x.clone());
        prop_assert_eq!(mixup_pixel(&x, &x, lam(l)).unwrap(), x);
        prop_assert_eq!(cutmix_embedding(&e, &e, lam(l), EmbedCutMode::Contiguous, &mut rng).unwrap(), e.clone());
        prop_assert_eq!(mixup_embedding(&e, &e, lam(l)).unwrap(), e.clone());
        prop_assert_eq!(dropout_embedding(&e, 0.0, &mut rng).unwrap(), e);
    }

    #[test]
    fn dropout_keeps_or_scales(v in prop::collection::vec(-3.0f64..3.0, 1..64), p in 0.0f64..0.95, seed in any::<u64>()) {
        let e = emb(v);
        let out = dropout_embedding(&e, p, &mut seeded(seed)).unwrap();
        let scale = 1.0 / (1.0 - p);
        for (o, x) in out.values().iter().zip(e.values()) {
            prop_assert!(*o == 0.0 || *o == x * scale);
        }
        prop_assert_eq!(out, dropout_embedding(&e, p, &mut seeded(seed)).unwrap());
    }
}
