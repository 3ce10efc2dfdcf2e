//! K-ary symmetric discrete memoryless channel.
//!
//! A symbol survives with probability 1−ε; otherwise it is replaced by one
//! of the K−1 other symbols uniformly. Errors are i.i.d. across symbols.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmcChannel {
    alphabet: u32,
    epsilon: f64,
}

impl DmcChannel {
    pub fn new(alphabet: u32, epsilon: f64) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::InvalidArgument(format!(
                "channel alphabet must have at least 2 symbols, got {alphabet}"
            )));
        }
        if !(0.0..=1.0).contains(&epsilon) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "symbol error probability must lie in [0,1], got {epsilon}"
            )));
        }
        Ok(DmcChannel { alphabet, epsilon })
    }

    pub fn alphabet(&self) -> u32 {
        self.alphabet
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn transition_prob(&self, from: u32, to: u32) -> Result<f64> {
        self.check(from)?;
        self.check(to)?;
        Ok(if from == to {
            1.0 - self.epsilon
        } else {
            self.epsilon / (self.alphabet - 1) as f64
        })
    }

    fn check(&self, idx: u32) -> Result<()> {
        if idx >= self.alphabet {
            return Err(Error::SymbolOutOfRange {
                index: idx,
                alphabet: self.alphabet,
            });
        }
        Ok(())
    }

    /// Send one symbol: one uniform draw decides survival, a second picks
    /// the replacement among the other K−1 symbols on corruption.
    pub fn transmit(&self, idx: u32, rng: &mut ChaCha8Rng) -> Result<u32> {
        self.check(idx)?;
        let u: f64 = rng.random();
        if u < self.epsilon {
            let offset = rng.random_range(0..self.alphabet - 1);
            Ok((idx + 1 + offset) % self.alphabet)
        } else {
            Ok(idx)
        }
    }

    pub fn transmit_all(&self, indices: &[u32], rng: &mut ChaCha8Rng) -> Result<Vec<u32>> {
        indices.iter().map(|&i| self.transmit(i, rng)).collect()
    }
}
