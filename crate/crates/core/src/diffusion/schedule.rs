use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precomputed DDPM variance schedule. Index `k` runs over `0..K`; `k = 0` is
/// the least noisy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_min` to `beta_max`.
    pub fn linear(k: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 diffusion steps, got {k}"
            )));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let betas: Vec<f64> = (0..k)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (k - 1) as f64)
            .collect();
        Ok(Self::from_betas(betas))
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `ᾱ` at `k`, with `None` meaning the clean end of the chain (`ᾱ = 1`).
    pub fn alpha_bar_or_one(&self, k: Option<usize>) -> f64 {
        k.map_or(1.0, |k| self.alpha_bars[k])
    }

    /// Evenly strided descending subsequence of `K-1 ..= 0` with `steps`
    /// entries, always starting at `K-1` (when `steps > 1`) and ending at 0.
    pub fn inference_steps(&self, steps: usize) -> Result<Vec<usize>> {
        let k = self.len();
        if steps == 0 || steps > k {
            return Err(Error::InvalidArgument(format!(
                "sampling steps must lie in 1..={k}, got {steps}"
            )));
        }
        if steps == 1 {
            return Ok(vec![0]);
        }
        let span = (k - 1) as f64 / (steps - 1) as f64;
        let seq: Vec<usize> = (0..steps)
            .rev()
            .map(|j| (j as f64 * span).round() as usize)
            .collect();
        debug_assert!(seq.windows(2).all(|w| w[0] > w[1]));
        Ok(seq)
    }
}
