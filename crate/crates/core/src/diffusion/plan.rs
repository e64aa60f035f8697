use crate::datasets::{NormStats, Segment};
use crate::error::{check_dim, Error, Result};

use super::NoiseSchedule;

type Rows = Vec<Vec<f64>>;

/// Shape of a plan tensor: `rows = horizon + 1`, each row `(state, action)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanLayout {
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl PlanLayout {
    pub fn rows(&self) -> usize {
        self.horizon + 1
    }

    pub fn row_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn len(&self) -> usize {
        self.rows() * self.row_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_index(&self, row: usize, i: usize) -> usize {
        row * self.row_dim() + i
    }

    pub fn action_index(&self, row: usize, i: usize) -> usize {
        row * self.row_dim() + self.state_dim + i
    }

    /// Overwrites the state portion of row 0 with the leading `state_dim`
    /// entries of `condition`.
    pub fn impose_condition(&self, x: &mut [f64], condition: &[f64]) {
        x[..self.state_dim].copy_from_slice(&condition[..self.state_dim]);
    }

    /// Normalized plan tensor of a segment.
    pub fn from_segment(&self, seg: &Segment, stats: &NormStats) -> Result<Vec<f64>> {
        check_dim("segment length", self.rows(), seg.len())?;
        let mut x = Vec::with_capacity(self.len());
        for (s, a) in seg.states.iter().zip(&seg.actions) {
            x.extend(stats.normalize_state(s)?);
            x.extend(stats.normalize_action(a)?);
        }
        Ok(x)
    }

    /// Splits a normalized plan into denormalized `(states, actions)` rows.
    pub fn split(&self, x: &[f64], stats: &NormStats) -> Result<(Rows, Rows)> {
        check_dim("plan tensor", self.len(), x.len())?;
        let mut states = Vec::with_capacity(self.rows());
        let mut actions = Vec::with_capacity(self.rows());
        for row in x.chunks(self.row_dim()) {
            states.push(stats.denormalize_state(&row[..self.state_dim])?);
            actions.push(stats.denormalize_action(&row[self.state_dim..])?);
        }
        Ok((states, actions))
    }
}

/// Per-entry loss weights over a plan tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMask {
    pub weights: Vec<f64>,
}

impl LossMask {
    /// 0 on the condition slot, `action_weight` on actions, 1 elsewhere.
    pub fn standard(layout: &PlanLayout, action_weight: f64) -> Self {
        let mut weights = vec![1.0; layout.len()];
        for row in 0..layout.rows() {
            for i in 0..layout.action_dim {
                weights[layout.action_index(row, i)] = action_weight;
            }
        }
        for i in 0..layout.state_dim {
            weights[layout.state_index(0, i)] = 0.0;
        }
        Self { weights }
    }

    pub fn zeros(layout: &PlanLayout) -> Self {
        Self {
            weights: vec![0.0; layout.len()],
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Closed-form forward corruption `sqrt(ᾱ_k) x0 + sqrt(1 - ᾱ_k) noise`.
pub fn q_sample(schedule: &NoiseSchedule, x0: &[f64], k: usize, noise: &[f64]) -> Result<Vec<f64>> {
    check_dim("q_sample noise", x0.len(), noise.len())?;
    let ab = *schedule.alpha_bars.get(k).ok_or_else(|| {
        Error::InvalidArgument(format!("step {k} outside schedule of {}", schedule.len()))
    })?;
    Ok(q_sample_with(ab, x0, noise))
}

pub(crate) fn q_sample_with(alpha_bar: f64, x0: &[f64], noise: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect()
}
