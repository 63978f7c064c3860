//! Conditional noise-prediction network.
//!
//! The conditioning pathway projects x̃, adds a learned per-class vector, and
//! concatenates the result onto the timestep embedding. That joint vector `z`
//! is fed to every hidden layer of a residual MLP over the noisy image. A
//! learned null vector replaces the conditioning pathway for unconditional
//! predictions.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::ImageShape;
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, HasParams, Param, ParamSnapshot};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image: ImageShape,
    pub embed_dim: usize,
    pub num_classes: usize,
    /// Width of the sinusoidal timestep features.
    pub time_dim: usize,
    /// Width of the timestep and conditioning embeddings.
    pub cond_dim: usize,
    pub hidden: usize,
    /// Probability of training on the null conditioning.
    pub null_prob: f64,
}

impl DenoiserConfig {
    pub fn desk(image: ImageShape, embed_dim: usize, num_classes: usize) -> Self {
        Self {
            image,
            embed_dim,
            num_classes,
            time_dim: 32,
            cond_dim: 64,
            hidden: 384,
            null_prob: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image.len(),
            self.embed_dim,
            self.num_classes,
            self.time_dim,
            self.cond_dim,
            self.hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("denoiser dimensions must be positive".into()));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config("time_dim must be even".into()));
        }
        if !(0.0..=1.0).contains(&self.null_prob) {
            return Err(Error::Config(format!("null_prob {} outside [0,1]", self.null_prob)));
        }
        Ok(())
    }
}

/// Conditioning inputs for a batch: one row of x̃ per example.
#[derive(Debug, Clone, Copy)]
pub struct CondBatch<'a, S> {
    pub embeddings: &'a Array2<S>,
    pub labels: &'a [usize],
    /// Rows using the null conditioning.
    pub null: &'a [bool],
}

struct Cache<S> {
    time_feat: Array2<S>,
    time_pre: Array2<S>,
    embeddings: Array2<S>,
    labels: Vec<usize>,
    null: Vec<bool>,
    u1: Array2<S>,
    p1: Array2<S>,
    u2: Array2<S>,
    p2: Array2<S>,
    u3: Array2<S>,
    p3: Array2<S>,
    h3: Array2<S>,
}

#[derive(Debug, Clone)]
pub struct Denoiser<S> {
    pub cfg: DenoiserConfig,
    time_dense: Dense<S>,
    cond_proj: Dense<S>,
    class_emb: Param<S>,
    null_emb: Param<S>,
    l1: Dense<S>,
    l2: Dense<S>,
    l3: Dense<S>,
    out: Dense<S>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserCheckpoint {
    pub cfg: DenoiserConfig,
    pub params: ParamSnapshot,
}

/// Sinusoidal features of integer timesteps.
pub fn timestep_features<S: Scalar>(t: &[usize], dim: usize) -> Array2<S> {
    let half = dim / 2;
    Array2::from_shape_fn((t.len(), dim), |(i, j)| {
        let k = j % half;
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t[i] as f64 * freq;
        S::of(if j < half { arg.sin() } else { arg.cos() })
    })
}

const SILU: Activation = Activation::Silu;

fn silu_grad<S: Scalar>(grad: &Array2<S>, pre: &Array2<S>) -> Array2<S> {
    let mut g = grad.clone();
    g.zip_mut_with(pre, |g, &v| *g *= SILU.derivative(v));
    g
}

impl<S: Scalar> Denoiser<S> {
    pub fn new(cfg: DenoiserConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, h, p) = (cfg.cond_dim, cfg.hidden, cfg.image.len());
        let class_emb = Param::new(Array2::from_shape_fn((cfg.num_classes, c), |_| {
            S::of(rng.random_range(-0.5..0.5))
        }));
        let null_emb = Param::new(Array2::from_shape_fn((1, c), |_| S::of(rng.random_range(-0.5..0.5))));
        Ok(Self {
            cfg,
            time_dense: Dense::new(cfg.time_dim, c, rng),
            cond_proj: Dense::new(cfg.embed_dim, c, rng),
            class_emb,
            null_emb,
            l1: Dense::new(p + 2 * c, h, rng),
            l2: Dense::new(h + 2 * c, h, rng),
            l3: Dense::new(h + 2 * c, h, rng),
            out: Dense::zeroed(h, p),
        })
    }

    fn check(&self, x: &Array2<S>, t: &[usize], cond: &CondBatch<S>) -> Result<()> {
        let b = x.nrows();
        if x.ncols() != self.cfg.image.len()
            || t.len() != b
            || cond.labels.len() != b
            || cond.null.len() != b
            || cond.embeddings.nrows() != b
            || cond.embeddings.ncols() != self.cfg.embed_dim
        {
            return Err(Error::Shape(format!(
                "denoiser batch: x {:?}, {} timesteps, embeddings {:?}, {} labels",
                x.dim(),
                t.len(),
                cond.embeddings.dim(),
                cond.labels.len()
            )));
        }
        if let Some(&k) = cond.labels.iter().find(|&&k| k >= self.cfg.num_classes) {
            return Err(Error::Parameter(format!("class {k} out of range")));
        }
        Ok(())
    }

    fn run(&self, x: &Array2<S>, t: &[usize], cond: &CondBatch<S>, keep: bool) -> (Array2<S>, Option<Cache<S>>) {
        let h = self.cfg.hidden;
        let time_feat = timestep_features::<S>(t, self.cfg.time_dim);
        let time_pre = self.time_dense.apply(&time_feat);
        let temb = SILU.apply(&time_pre);
        let mut c = self.cond_proj.apply(cond.embeddings);
        for (i, mut row) in c.rows_mut().into_iter().enumerate() {
            if cond.null[i] {
                row.assign(&self.null_emb.value.row(0));
            } else {
                row += &self.class_emb.value.row(cond.labels[i]);
            }
        }
        let z = concatenate![Axis(1), temb, c];
        let u1 = concatenate![Axis(1), *x, z];
        let p1 = self.l1.apply(&u1);
        let h1 = SILU.apply(&p1);
        let u2 = concatenate![Axis(1), h1, z];
        let p2 = self.l2.apply(&u2);
        let h2 = &h1 + &SILU.apply(&p2);
        let u3 = concatenate![Axis(1), h2, z];
        let p3 = self.l3.apply(&u3);
        let h3 = &h2 + &SILU.apply(&p3);
        let y = self.out.apply(&h3);
        debug_assert_eq!(h3.ncols(), h);
        let cache = keep.then(|| Cache {
            time_feat,
            time_pre,
            embeddings: cond.embeddings.clone(),
            labels: cond.labels.to_vec(),
            null: cond.null.to_vec(),
            u1,
            p1,
            u2,
            p2,
            u3,
            p3,
            h3,
        });
        (y, cache)
    }

    /// Predicted noise for a batch, without caching activations.
    pub fn predict(&self, x: &Array2<S>, t: &[usize], cond: &CondBatch<S>) -> Result<Array2<S>> {
        self.check(x, t, cond)?;
        Ok(self.run(x, t, cond, false).0)
    }

    /// Training forward pass; returns the prediction and a tape for [`Self::backward`].
    pub fn forward(&self, x: &Array2<S>, t: &[usize], cond: &CondBatch<S>) -> Result<(Array2<S>, Tape<S>)> {
        self.check(x, t, cond)?;
        let (y, cache) = self.run(x, t, cond, true);
        Ok((y, Tape(cache.expect("cache requested"))))
    }

    /// Accumulate parameter gradients given dLoss/dPrediction.
    pub fn backward(&mut self, tape: Tape<S>, grad: &Array2<S>) {
        let Tape(c) = tape;
        let (h, cd, p) = (self.cfg.hidden, self.cfg.cond_dim, self.cfg.image.len());

        let g_h3 = self.out.backward_with(&c.h3, grad);
        let g_u3 = self.l3.backward_with(&c.u3, &silu_grad(&g_h3, &c.p3));
        let g_h2 = &g_u3.slice(s![.., ..h]) + &g_h3;
        let mut g_z = g_u3.slice(s![.., h..]).to_owned();

        let g_u2 = self.l2.backward_with(&c.u2, &silu_grad(&g_h2, &c.p2));
        let g_h1 = &g_u2.slice(s![.., ..h]) + &g_h2;
        g_z += &g_u2.slice(s![.., h..]);

        let g_u1 = self.l1.backward_with(&c.u1, &silu_grad(&g_h1, &c.p1));
        g_z += &g_u1.slice(s![.., p..]);

        let g_temb = g_z.slice(s![.., ..cd]).to_owned();
        self.time_dense
            .backward_with(&c.time_feat, &silu_grad(&g_temb, &c.time_pre));

        let mut g_c = g_z.slice(s![.., cd..]).to_owned();
        for (i, mut row) in g_c.rows_mut().into_iter().enumerate() {
            if c.null[i] {
                let mut dst = self.null_emb.grad.row_mut(0);
                dst += &row;
                row.fill(S::zero());
            } else {
                let mut dst = self.class_emb.grad.row_mut(c.labels[i]);
                dst += &row;
            }
        }
        self.cond_proj.backward_with(&c.embeddings, &g_c);
    }

    pub fn checkpoint(&self) -> DenoiserCheckpoint {
        DenoiserCheckpoint {
            cfg: self.cfg,
            params: self.snapshot(),
        }
    }

    pub fn from_checkpoint(ck: &DenoiserCheckpoint) -> Result<Self> {
        let mut d = Self::new(ck.cfg, &mut crate::rng::seeded(0))?;
        d.restore(&ck.params)?;
        Ok(d)
    }
}

/// Saved activations of one training forward pass.
pub struct Tape<S>(Cache<S>);

impl<S: Scalar> HasParams<S> for Denoiser<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.time_dense.params();
        v.extend(self.cond_proj.params());
        v.push(&self.class_emb);
        v.push(&self.null_emb);
        v.extend(self.l1.params());
        v.extend(self.l2.params());
        v.extend(self.l3.params());
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.time_dense.params_mut();
        v.extend(self.cond_proj.params_mut());
        v.push(&mut self.class_emb);
        v.push(&mut self.null_emb);
        v.extend(self.l1.params_mut());
        v.extend(self.l2.params_mut());
        v.extend(self.l3.params_mut());
        v.extend(self.out.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    type Tiny = (Denoiser<f64>, Array2<f64>, Vec<usize>, Array2<f64>, Vec<usize>, Vec<bool>, Array2<f64>);

    fn tiny() -> Tiny {
        let cfg = DenoiserConfig {
            image: ImageShape::new(2, 2, 1),
            embed_dim: 3,
            num_classes: 2,
            time_dim: 4,
            cond_dim: 3,
            hidden: 5,
            null_prob: 0.1,
        };
        let mut rng = seeded(11);
        let mut d = Denoiser::<f64>::new(cfg, &mut rng).unwrap();
        // non-zero output layer so every gradient path is exercised
        for v in d.out.weight.value.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let e = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        (d, x, vec![3, 17, 40], e, vec![0, 1, 1], vec![false, true, false], w)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut d, x, t, e, labels, null, w) = tiny();
        let cond = CondBatch { embeddings: &e, labels: &labels, null: &null };
        let objective = |d: &Denoiser<f64>| (d.predict(&x, &t, &cond).unwrap() * &w).sum();
        d.zero_grad();
        let (_, tape) = d.forward(&x, &t, &cond).unwrap();
        d.backward(tape, &w);
        let analytic: Vec<Array2<f64>> = d.params().iter().map(|p| p.grad.clone()).collect();
        let h = 1e-6;
        for (pi, g) in analytic.iter().enumerate() {
            for idx in 0..g.len().min(6) {
                let (r, col) = (idx % g.nrows(), idx / g.nrows() % g.ncols());
                let mut dp = d.clone();
                dp.params_mut()[pi].value[(r, col)] += h;
                let mut dm = d.clone();
                dm.params_mut()[pi].value[(r, col)] -= h;
                let num = (objective(&dp) - objective(&dm)) / (2.0 * h);
                assert!(
                    (num - g[(r, col)]).abs() < 1e-6 * (1.0 + num.abs()),
                    "param {pi} [{r},{col}]: numeric {num} analytic {}",
                    g[(r, col)]
                );
            }
        }
        // null rows never touch the class table: row 1 is null, labels 0 and 1 used otherwise
        assert!(analytic[5].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn null_rows_ignore_embedding_and_label() {
        let (d, x, t, e, _, _, _) = tiny();
        let e2 = e.mapv(|v| v * 3.0 + 1.0);
        let all_null = vec![true; 3];
        let a = d.predict(&x, &t, &CondBatch { embeddings: &e, labels: &[0, 0, 0], null: &all_null }).unwrap();
        let b = d.predict(&x, &t, &CondBatch { embeddings: &e2, labels: &[1, 1, 1], null: &all_null }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors_are_reported() {
        let (d, x, t, e, labels, null, _) = tiny();
        let bad = CondBatch { embeddings: &e, labels: &labels[..2], null: &null };
        assert!(matches!(d.predict(&x, &t, &bad), Err(Error::Shape(_))));
        let out_of_range = CondBatch { embeddings: &e, labels: &[0, 5, 0], null: &null };
        assert!(d.predict(&x, &t, &out_of_range).is_err());
    }
}
