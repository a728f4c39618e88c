//! Thompson sampling over Beta posteriors.
//!
//! Each arm keeps Beta(alpha, beta) pseudo-counts. Selection draws one sample
//! per arm and plays the argmax, which balances exploration and exploitation
//! without an explicit epsilon. The TD3 explorer uses the same machinery with
//! arms = critic heads.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Beta posterior per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl BetaPosterior {
    /// Uniform Beta(1, 1) priors over `arms` arms.
    pub fn uniform(arms: usize) -> Self {
        Self {
            alpha: vec![1.0; arms],
            beta: vec![1.0; arms],
        }
    }

    pub fn with_counts(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(SimError::Shape {
                expected: format!("{} beta counts", alpha.len()),
                got: format!("{}", beta.len()),
            });
        }
        if alpha.iter().chain(beta.iter()).any(|&v| !(v > 0.0)) {
            return Err(SimError::domain("Beta counts must be positive"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn arms(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self, arm: usize) -> f64 {
        self.alpha[arm]
    }

    pub fn beta(&self, arm: usize) -> f64 {
        self.beta[arm]
    }

    /// Posterior mean alpha / (alpha + beta).
    pub fn mean(&self, arm: usize) -> f64 {
        self.alpha[arm] / (self.alpha[arm] + self.beta[arm])
    }

    /// Draw one sample per arm and return the argmax (lowest index on ties).
    pub fn ts_select(&self, rng: &mut ChaCha8Rng) -> Result<usize> {
        if self.alpha.is_empty() {
            return Err(SimError::domain("ts_select on an empty arm set"));
        }
        let mut best = 0;
        let mut best_sample = f64::NEG_INFINITY;
        for arm in 0..self.alpha.len() {
            let dist = Beta::new(self.alpha[arm], self.beta[arm])
                .map_err(|e| SimError::domain(format!("invalid Beta({}, {}): {e}", self.alpha[arm], self.beta[arm])))?;
            let sample = dist.sample(rng);
            if sample > best_sample {
                best_sample = sample;
                best = arm;
            }
        }
        Ok(best)
    }

    /// Conjugate update: success bumps alpha, failure bumps beta. Other arms
    /// are untouched.
    pub fn ts_update(&mut self, arm: usize, success: bool) {
        if success {
            self.alpha[arm] += 1.0;
        } else {
            self.beta[arm] += 1.0;
        }
    }

    pub fn counts(&self) -> (&[f64], &[f64]) {
        (&self.alpha, &self.beta)
    }
}
