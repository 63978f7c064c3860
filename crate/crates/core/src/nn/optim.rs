use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::param::Param;
use crate::scalar::Scalar;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Sgd<S> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Array2<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param<S>>, lr: f64) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        }
        let (mu, wd, lr) = (S::of(self.momentum), S::of(self.weight_decay), S::of(lr));
        for (p, v) in params.into_iter().zip(&mut self.velocity) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(v)
                .for_each(|w, &g, v| {
                    let g = g + wd * *w;
                    *v = mu * *v + g;
                    *w -= lr * *v;
                });
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<S>>,
    v: Vec<Array2<S>>,
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<S: Scalar> Adam<S> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param<S>>, lr: f64) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (S::of(self.beta1), S::of(self.beta2), S::of(self.eps));
        let (one, lr_t) = (S::one(), S::of(lr * c2.sqrt() / c1));
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *w -= lr_t * *m / (v.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    CosineAnneal,
    Constant,
}

impl LrSchedule {
    /// Learning rate for `epoch` (0-based) of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::CosineAnneal => {
                let frac = epoch as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_grad(p: &mut Param<f64>) {
        // f(w) = ½‖w − 3‖²
        p.grad = p.value.mapv(|w| w - 3.0);
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        let mut p = Param::new(Array2::zeros((2, 2)));
        let mut opt = Sgd::new(0.9, 0.0);
        for _ in 0..300 {
            quad_grad(&mut p);
            opt.step(vec![&mut p], 0.05);
        }
        assert!(p.value.iter().all(|&w| (w - 3.0).abs() < 1e-4));
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = Param::new(Array2::zeros((1, 3)));
        let mut opt = Adam::default();
        for _ in 0..2000 {
            quad_grad(&mut p);
            opt.step(vec![&mut p], 0.01);
        }
        assert!(p.value.iter().all(|&w| (w - 3.0).abs() < 1e-3));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new(Array2::from_elem((1, 1), 1.0f64));
        p.grad.fill(5.0);
        Adam::default().step(vec![&mut p], 0.1);
        assert!((p.value[(0, 0)] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::CosineAnneal;
        assert_eq!(s.rate(0.2, 0, 10), 0.2);
        assert!((s.rate(0.2, 5, 10) - 0.1).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.rate(0.2, 7, 10), 0.2);
    }
}
