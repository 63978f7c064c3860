use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward-process variances β₁…β_T with their derived products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    betas: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for NoiseSchedule {
    type Error = Error;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        NoiseSchedule::from_betas(r.betas)
    }
}

impl From<NoiseSchedule> for ScheduleRepr {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleRepr { betas: s.betas }
    }
}

/// One reverse step of a (possibly respaced) sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseStep {
    pub t: usize,
    pub alpha_bar: f64,
    pub alpha_bar_prev: f64,
}

impl ReverseStep {
    /// Effective β for the jump from `t` to the previous sampled timestep.
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha_bar / self.alpha_bar_prev
    }

    /// Posterior variance of x_{prev} given x_t and x₀.
    pub fn posterior_variance(&self) -> f64 {
        self.beta() * (1.0 - self.alpha_bar_prev) / (1.0 - self.alpha_bar)
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0·x₀ + ct·x_t`.
    pub fn posterior_mean_coefs(&self) -> (f64, f64) {
        let beta = self.beta();
        let denom = 1.0 - self.alpha_bar;
        (
            self.alpha_bar_prev.sqrt() * beta / denom,
            (1.0 - beta).sqrt() * (1.0 - self.alpha_bar_prev) / denom,
        )
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Parameter("noise schedule needs at least one step".into()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Parameter(format!("beta[{i}] = {b} outside (0,1)")));
            }
            if i > 0 && b < betas[i - 1] {
                return Err(Error::Parameter(format!("betas must be non-decreasing (index {i})")));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Linearly spaced betas from `start` to `end`.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("noise schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε, elementwise.
    pub fn q_sample<S: Scalar>(&self, x0: &[S], t: usize, eps: &[S]) -> Vec<S> {
        let ab = self.alpha_bars[t];
        let (a, b) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
        x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect()
    }

    /// `steps` evenly spaced timesteps from T−1 down to 0 with their jump
    /// parameters. `steps == T` reproduces the full ancestral chain.
    pub fn reverse_steps(&self, steps: usize) -> Result<Vec<ReverseStep>> {
        let t_max = self.len();
        if steps == 0 || steps > t_max {
            return Err(Error::Parameter(format!(
                "sampling steps {steps} must lie in 1..={t_max}"
            )));
        }
        let ts: Vec<usize> = if steps == 1 {
            vec![t_max - 1]
        } else {
            (0..steps)
                .map(|i| ((t_max - 1) as f64 * (steps - 1 - i) as f64 / (steps - 1) as f64).round() as usize)
                .collect()
        };
        Ok(ts
            .iter()
            .enumerate()
            .map(|(i, &t)| ReverseStep {
                t,
                alpha_bar: self.alpha_bars[t],
                alpha_bar_prev: ts.get(i + 1).map_or(1.0, |&p| self.alpha_bars[p]),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_hold_for_linear() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(NoiseSchedule::from_betas(vec![]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 0.1]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.2, 0.1]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn full_chain_reverse_steps_match_betas() {
        let s = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        let steps = s.reverse_steps(50).unwrap();
        assert_eq!(steps.first().unwrap().t, 49);
        assert_eq!(steps.last().unwrap().t, 0);
        for st in &steps {
            assert!((st.beta() - s.betas()[st.t]).abs() < 1e-12);
        }
        assert_eq!(steps.last().unwrap().posterior_variance(), 0.0);
    }

    #[test]
    fn respaced_steps_are_strictly_decreasing() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let steps = s.reverse_steps(30).unwrap();
        assert_eq!(steps.len(), 30);
        assert!(steps.windows(2).all(|w| w[0].t > w[1].t));
        assert!(s.reverse_steps(1001).is_err());
        assert!(s.reverse_steps(0).is_err());
    }

    #[test]
    fn serde_round_trip_validates() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.02).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: NoiseSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<NoiseSchedule>(r#"{"betas":[0.5,0.1]}"#).is_err());
    }
}
