use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    /// A fixed number of real slots per batch.
    #[default]
    Deterministic,
    /// Each slot is real independently with the configured probability.
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug)]
struct Pool {
    order: Vec<usize>,
    pos: usize,
}

impl Pool {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    /// Next index of a reshuffled-per-pass permutation.
    fn next(&mut self, rng: &mut SeededRng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Endless stream of batches of `(source, index)` pairs into a real pool and
/// a synthetic pool.
#[derive(Debug)]
pub struct MixedBatchStream {
    real: Pool,
    synth: Pool,
    batch: usize,
    mode: MixMode,
    real_ratio: f64,
    real_per_batch: usize,
    rng: SeededRng,
}

/// Build a stream over pools of `real_len` and `synth_len` items.
/// `real_ratio` is 0.5 for the standard half-and-half mix.
pub fn mixed_batch_stream(
    real_len: usize,
    synth_len: usize,
    batch: usize,
    mode: MixMode,
    real_ratio: f64,
    rng: SeededRng,
) -> Result<MixedBatchStream> {
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&real_ratio) {
        return Err(Error::Config(format!("real ratio {real_ratio} outside [0,1]")));
    }
    if real_ratio > 0.0 && real_len == 0 {
        return Err(Error::Data("real pool is empty".into()));
    }
    if real_ratio < 1.0 && synth_len == 0 {
        return Err(Error::Data("synthetic pool is empty".into()));
    }
    let exact = batch as f64 * real_ratio;
    if mode == MixMode::Deterministic && (exact - exact.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "batch {batch} cannot be split at real ratio {real_ratio} deterministically"
        )));
    }
    Ok(MixedBatchStream {
        real: Pool::new(real_len),
        synth: Pool::new(synth_len),
        batch,
        mode,
        real_ratio,
        real_per_batch: exact.round() as usize,
        rng,
    })
}

impl MixedBatchStream {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

impl Iterator for MixedBatchStream {
    type Item = Vec<(Source, usize)>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut out = Vec::with_capacity(self.batch);
        match self.mode {
            MixMode::Deterministic => {
                for _ in 0..self.real_per_batch {
                    out.push((Source::Real, self.real.next(&mut self.rng)));
                }
                for _ in self.real_per_batch..self.batch {
                    out.push((Source::Synthetic, self.synth.next(&mut self.rng)));
                }
            }
            MixMode::Stochastic => {
                for _ in 0..self.batch {
                    if self.rng.random::<f64>() < self.real_ratio {
                        out.push((Source::Real, self.real.next(&mut self.rng)));
                    } else {
                        out.push((Source::Synthetic, self.synth.next(&mut self.rng)));
                    }
                }
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn deterministic_half_split() {
        let s = mixed_batch_stream(1000, 3000, 512, MixMode::Deterministic, 0.5, seeded(0)).unwrap();
        for b in s.take(10) {
            assert_eq!(b.len(), 512);
            assert_eq!(b.iter().filter(|(src, _)| *src == Source::Real).count(), 256);
        }
        assert!(mixed_batch_stream(10, 10, 5, MixMode::Deterministic, 0.5, seeded(0)).is_err());
    }

    #[test]
    fn ratio_override_and_empty_pools() {
        let s = mixed_batch_stream(50, 0, 32, MixMode::Deterministic, 1.0, seeded(0)).unwrap();
        for b in s.take(5) {
            assert!(b.iter().all(|(src, i)| *src == Source::Real && *i < 50));
        }
        assert!(mixed_batch_stream(50, 0, 32, MixMode::Deterministic, 0.5, seeded(0)).is_err());
        assert!(mixed_batch_stream(0, 5, 32, MixMode::Stochastic, 0.5, seeded(0)).is_err());
    }

    #[test]
    fn real_pool_is_covered_once_per_pass() {
        let mut s = mixed_batch_stream(8, 3, 4, MixMode::Deterministic, 0.5, seeded(4)).unwrap();
        let mut seen: Vec<usize> = (0..4)
            .flat_map(|_| s.next().unwrap())
            .filter(|(src, _)| *src == Source::Real)
            .map(|(_, i)| i)
            .collect();
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
    }
}
