use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::{CondBatch, Denoiser};
use super::schedule::NoiseSchedule;
use crate::augcond::ConditioningBundle;
use crate::datamodel::ImageTensor;
use crate::error::{Error, Result};
use crate::nn::row_to_image;
use crate::rng::child;
use crate::scalar::Scalar;

fn default_steps() -> usize {
    30
}

fn default_batch() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub cfg_scale: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

impl GenerationConfig {
    pub fn new(cfg_scale: f64, seed: u64) -> Self {
        Self {
            cfg_scale,
            steps: default_steps(),
            seed,
            batch: default_batch(),
        }
    }

    pub fn validate(&self, schedule_len: Option<usize>) -> Result<()> {
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(Error::Config(format!("cfg_scale must be ≥ 0, got {}", self.cfg_scale)));
        }
        if self.batch == 0 {
            return Err(Error::Config("generation batch must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("sampling steps must be positive".into()));
        }
        if let Some(t) = schedule_len {
            if self.steps > t {
                return Err(Error::Parameter(format!(
                    "sampling steps {} exceed the schedule length {t}",
                    self.steps
                )));
            }
        }
        Ok(())
    }
}

/// Guided noise prediction `ε_u + s·(ε_c − ε_u)`; the endpoints return the
/// corresponding prediction unchanged.
pub fn guided_noise<S: Scalar>(eps_cond: &Array2<S>, eps_uncond: &Array2<S>, s: f64) -> Array2<S> {
    if s == 1.0 {
        return eps_cond.clone();
    }
    if s == 0.0 {
        return eps_uncond.clone();
    }
    let s = S::of(s);
    let mut out = eps_uncond.clone();
    out.zip_mut_with(eps_cond, |u, &c| *u = *u + s * (c - *u));
    out
}

/// ε̂ = (x_t − √ᾱ·x̂₀)/√(1−ᾱ).
pub fn noise_from_clean<S: Scalar>(x_t: &Array2<S>, x0: &Array2<S>, alpha_bar: f64) -> Array2<S> {
    let (a, inv) = (S::of(alpha_bar.sqrt()), S::of(1.0 / (1.0 - alpha_bar).sqrt()));
    let mut out = x_t.clone();
    out.zip_mut_with(x0, |x, &c| *x = (*x - a * c) * inv);
    out
}

/// Observer of every guided step of a sampling run.
pub trait GuidanceProbe<S> {
    fn observe(&mut self, t: usize, eps_cond: &Array2<S>, eps_uncond: &Array2<S>, eps_guided: &Array2<S>);
}

/// Draw `cfg.batch` images for one conditioning bundle by ancestral sampling
/// over `cfg.steps` respaced timesteps. Image `i` uses its own noise stream
/// derived from `(cfg.seed, i)`.
pub fn sample_cfg<S: Scalar>(
    den: &Denoiser<S>,
    schedule: &NoiseSchedule,
    bundle: &ConditioningBundle<S>,
    cfg: &GenerationConfig,
    mut probe: Option<&mut dyn GuidanceProbe<S>>,
) -> Result<Vec<ImageTensor<S>>> {
    cfg.validate(Some(schedule.len()))?;
    bundle.validate()?;
    if bundle.image_embedding.dim() != den.cfg.embed_dim {
        return Err(Error::Shape(format!(
            "conditioning has dimension {}, denoiser expects {}",
            bundle.image_embedding.dim(),
            den.cfg.embed_dim
        )));
    }
    let steps = schedule.reverse_steps(cfg.steps)?;
    let (b, p) = (cfg.batch, den.cfg.image.len());
    let mut rngs: Vec<_> = (0..b).map(|i| child(cfg.seed, &[i as u64])).collect();
    let normal = |rngs: &mut Vec<crate::rng::SeededRng>| {
        let mut z = Array2::<S>::zeros((b, p));
        for (mut row, rng) in z.rows_mut().into_iter().zip(rngs.iter_mut()) {
            row.mapv_inplace(|_| S::of(StandardNormal.sample(rng)));
        }
        z
    };

    let emb = Array2::from_shape_fn((b, den.cfg.embed_dim), |(_, j)| bundle.image_embedding.values()[j]);
    let labels = vec![bundle.class_label; b];
    let cond_mask = vec![false; b];
    let null_mask = vec![true; b];
    let cond = CondBatch { embeddings: &emb, labels: &labels, null: &cond_mask };
    let uncond = CondBatch { embeddings: &emb, labels: &labels, null: &null_mask };

    let mut x = normal(&mut rngs);
    let (lo, hi) = (-S::one(), S::one());
    for (i, st) in steps.iter().enumerate() {
        let ts = vec![st.t; b];
        let eps_c = noise_from_clean(&x, &den.predict(&x, &ts, &cond)?, st.alpha_bar);
        let eps_u = noise_from_clean(&x, &den.predict(&x, &ts, &uncond)?, st.alpha_bar);
        let eps = guided_noise(&eps_c, &eps_u, cfg.cfg_scale);
        if let Some(pr) = probe.as_deref_mut() {
            pr.observe(st.t, &eps_c, &eps_u, &eps);
        }
        let inv_sqrt_ab = S::of(1.0 / st.alpha_bar.sqrt());
        let sqrt_1mab = S::of((1.0 - st.alpha_bar).sqrt());
        let (c0, ct) = st.posterior_mean_coefs();
        let (c0, ct) = (S::of(c0), S::of(ct));
        let mut next = x.clone();
        next.zip_mut_with(&eps, |xv, &e| {
            let x0 = ((*xv - sqrt_1mab * e) * inv_sqrt_ab).max(lo).min(hi);
            *xv = c0 * x0 + ct * *xv;
        });
        if i + 1 < steps.len() {
            let sigma = S::of(st.posterior_variance().max(0.0).sqrt());
            let z = normal(&mut rngs);
            next.zip_mut_with(&z, |xv, &zv| *xv += sigma * zv);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Generation(format!("non-finite sample at timestep {}", st.t)));
        }
        x = next;
    }
    Ok(x.rows()
        .into_iter()
        .map(|r| row_to_image(r, den.cfg.image).quantized())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guidance_endpoints_are_exact() {
        let c = Array2::from_shape_vec((1, 3), vec![0.3f32, -0.0, 1e-30]).unwrap();
        let u = Array2::from_shape_vec((1, 3), vec![-2.0f32, 0.0, 7.5]).unwrap();
        assert_eq!(guided_noise(&c, &u, 1.0), c);
        assert_eq!(guided_noise(&c, &u, 0.0), u);
        let g = guided_noise(&c, &u, 2.0);
        assert!((g[(0, 0)] - 2.6).abs() < 1e-6);
    }

    #[test]
    fn validation() {
        let mut g = GenerationConfig::new(2.0, 0);
        assert!(g.validate(Some(1000)).is_ok());
        g.steps = 1001;
        assert!(matches!(g.validate(Some(1000)), Err(Error::Parameter(_))));
        g.steps = 30;
        g.cfg_scale = -1.0;
        assert!(g.validate(None).is_err());
    }
}
