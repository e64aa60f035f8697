use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::{NormStats, Segment};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::gaitsim::{ACTION_DIM, NUM_LEGS, PHASE_OFFSET, STATE_DIM};
use crate::ndcore::{timestep_embed, DenseNet, Gradients, Trace};

use super::plan::{q_sample_with, LossMask, PlanLayout};
use super::NoiseSchedule;

/// Planner and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub action_weight: f64,
    pub cond_drop: f64,
    pub w_cg: f64,
    pub sampling_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    /// Append sin/cos leg-phase features to the denoiser's condition input.
    pub phase_features: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            hidden: vec![256, 256, 256],
            embed_dim: 16,
            diffusion_steps: 20,
            beta_min: 1e-4,
            beta_max: 0.2,
            action_weight: 10.0,
            cond_drop: 0.1,
            w_cg: 1e-4,
            sampling_steps: 10,
            lr: 1e-3,
            batch_size: 64,
            train_steps: 3000,
            phase_features: true,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.horizon == 0 {
            errs.push("diffusion.horizon must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            errs.push("diffusion.hidden entries must be positive".into());
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            errs.push(format!(
                "diffusion.embed_dim must be even and positive, got {}",
                self.embed_dim
            ));
        }
        if self.diffusion_steps < 2 {
            errs.push("diffusion.diffusion_steps must be at least 2".into());
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            errs.push("diffusion.beta_min/beta_max must satisfy 0 < min <= max < 1".into());
        }
        if !(self.action_weight.is_finite() && self.action_weight >= 0.0) {
            errs.push("diffusion.action_weight must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.cond_drop) {
            errs.push("diffusion.cond_drop must lie in [0, 1)".into());
        }
        if !self.w_cg.is_finite() {
            errs.push("diffusion.w_cg must be finite".into());
        }
        if self.sampling_steps == 0 || self.sampling_steps > self.diffusion_steps {
            errs.push("diffusion.sampling_steps must lie in 1..=diffusion_steps".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            errs.push("diffusion.lr must be positive".into());
        }
        if self.batch_size == 0 {
            errs.push("diffusion.batch_size must be at least 1".into());
        }
        errs
    }

    pub fn layout(&self) -> PlanLayout {
        PlanLayout {
            horizon: self.horizon,
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
        }
    }
}

/// Everything about the denoiser except its weights: plan layout, noise
/// schedule, step embedding width and loss mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub layout: PlanLayout,
    pub schedule: NoiseSchedule,
    pub embed_dim: usize,
    pub mask: LossMask,
    /// Extra condition features beyond the normalized state.
    pub cond_extra: usize,
}

/// One training example with its diffusion step and noise fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedItem {
    pub x0: Vec<f64>,
    pub condition: Vec<f64>,
    pub k: usize,
    pub noise: Vec<f64>,
    /// `false` replaces the condition with the null token.
    pub conditioned: bool,
}

/// Forward activations plus per-item masked errors, kept for a later
/// backward pass with caller-chosen per-item loss coefficients.
pub struct ErrorPass {
    trace: Trace,
    residual: Array2<f64>,
    pub errors: Vec<f64>,
}

impl DiffusionModel {
    pub fn new(
        layout: PlanLayout,
        schedule: NoiseSchedule,
        embed_dim: usize,
        mask: LossMask,
    ) -> Result<Self> {
        check_dim("loss mask", layout.len(), mask.weights.len())?;
        timestep_embed(0, embed_dim)?;
        Ok(Self {
            layout,
            schedule,
            embed_dim,
            mask,
            cond_extra: 0,
        })
    }

    pub fn from_config(cfg: &DiffusionConfig) -> Result<Self> {
        let layout = cfg.layout();
        let schedule = NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max)?;
        let mut model = Self::new(
            layout,
            schedule,
            cfg.embed_dim,
            LossMask::standard(&layout, cfg.action_weight),
        )?;
        if cfg.phase_features {
            model.cond_extra = PHASE_FEATURES;
        }
        Ok(model)
    }

    /// Length of a condition vector: normalized state plus extra features.
    pub fn cond_dim(&self) -> usize {
        self.layout.state_dim + self.cond_extra
    }

    pub fn input_dim(&self) -> usize {
        self.layout.len() + self.cond_dim() + self.embed_dim + 1
    }

    /// Condition vector for a raw simulator observation.
    pub fn condition(&self, stats: &NormStats, raw_state: &[f64]) -> Result<Vec<f64>> {
        let mut c = stats.normalize_state(raw_state)?;
        if self.cond_extra > 0 {
            check_dim("phase feature count", PHASE_FEATURES, self.cond_extra)?;
            c.extend(phase_features(raw_state)?);
        }
        Ok(c)
    }

    pub fn net_sizes(&self, hidden: &[usize]) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(self.layout.len());
        sizes
    }

    pub fn check_net(&self, net: &DenseNet) -> Result<()> {
        check_dim("denoiser input", self.input_dim(), net.input_dim())?;
        check_dim("denoiser output", self.layout.len(), net.output_dim())
    }

    /// Writes `[x_k ; condition ; embed(k) ; flag]` into `row`. The null token
    /// zeroes both the condition vector and the condition slot of `x_k`.
    pub fn write_input(
        &self,
        row: &mut [f64],
        x_k: &[f64],
        condition: Option<&[f64]>,
        k: usize,
    ) -> Result<()> {
        let n = self.layout.len();
        let ds = self.layout.state_dim;
        let dc = self.cond_dim();
        check_dim("denoiser input row", self.input_dim(), row.len())?;
        check_dim("plan tensor", n, x_k.len())?;
        row[..n].copy_from_slice(x_k);
        match condition {
            Some(c) => {
                check_dim("condition", dc, c.len())?;
                row[..ds].copy_from_slice(&c[..ds]);
                row[n..n + dc].copy_from_slice(c);
                row[n + dc + self.embed_dim] = 1.0;
            }
            None => {
                row[..ds].iter_mut().for_each(|v| *v = 0.0);
                row[n..n + dc].iter_mut().for_each(|v| *v = 0.0);
                row[n + dc + self.embed_dim] = 0.0;
            }
        }
        row[n + dc..n + dc + self.embed_dim].copy_from_slice(&timestep_embed(k, self.embed_dim)?);
        Ok(())
    }

    fn item_inputs(&self, items: &[NoisedItem]) -> Result<Array2<f64>> {
        let mut inputs = Array2::zeros((items.len(), self.input_dim()));
        for (item, mut row) in items.iter().zip(inputs.rows_mut()) {
            check_dim("x0", self.layout.len(), item.x0.len())?;
            check_dim("noise", self.layout.len(), item.noise.len())?;
            let ab = *self.schedule.alpha_bars.get(item.k).ok_or_else(|| {
                Error::InvalidArgument(format!("step {} outside schedule", item.k))
            })?;
            let x_k = q_sample_with(ab, &item.x0, &item.noise);
            let cond = item.conditioned.then_some(item.condition.as_slice());
            self.write_input(
                row.as_slice_mut().expect("standard layout"),
                &x_k,
                cond,
                item.k,
            )?;
        }
        Ok(inputs)
    }

    /// Masked weighted squared noise-prediction error of every item:
    /// `Σ mask (ε - ε̂)² / Σ mask` (0 when the mask is all zero).
    pub fn error_pass(&self, net: &DenseNet, items: &[NoisedItem]) -> Result<ErrorPass> {
        self.check_net(net)?;
        let inputs = self.item_inputs(items)?;
        let trace = net.forward_trace(inputs.view())?;
        let mut residual = trace.output().clone();
        let total = self.mask.total();
        let mut errors = Vec::with_capacity(items.len());
        for (item, mut r) in items.iter().zip(residual.rows_mut()) {
            let mut err = 0.0;
            for ((res, &eps), &w) in r.iter_mut().zip(&item.noise).zip(&self.mask.weights) {
                *res = eps - *res;
                err += w * *res * *res;
            }
            errors.push(if total > 0.0 { err / total } else { 0.0 });
        }
        check_finite("denoiser error", &errors)?;
        Ok(ErrorPass {
            trace,
            residual,
            errors,
        })
    }

    /// Gradient of `Σ_i coeffs[i] * errors[i]` w.r.t. the network parameters.
    pub fn error_backward(
        &self,
        net: &DenseNet,
        pass: &ErrorPass,
        coeffs: &[f64],
    ) -> Result<Gradients> {
        check_dim("error coefficients", pass.errors.len(), coeffs.len())?;
        let total = self.mask.total();
        if total == 0.0 {
            return Ok(Gradients::zeros_like(net));
        }
        let mut out_grad = pass.residual.clone();
        for (mut row, &c) in out_grad.rows_mut().into_iter().zip(coeffs) {
            for (g, &w) in row.iter_mut().zip(&self.mask.weights) {
                *g *= -2.0 * c * w / total;
            }
        }
        net.backward_trace(&pass.trace, out_grad.view())
    }

    /// Mean masked error over `items` and its parameter gradient.
    pub fn bc_loss_items(&self, net: &DenseNet, items: &[NoisedItem]) -> Result<(f64, Gradients)> {
        if items.is_empty() {
            return Err(Error::Empty("bc loss needs at least one item"));
        }
        let pass = self.error_pass(net, items)?;
        let n = items.len() as f64;
        let loss = pass.errors.iter().sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite behavior-cloning loss {loss}"
            )));
        }
        let grads = self.error_backward(net, &pass, &vec![1.0 / n; items.len()])?;
        Ok((loss, grads))
    }

    /// Draws `k`, noise and condition dropout for one normalized segment.
    pub fn draw_item<R: Rng + ?Sized>(
        &self,
        seg: &Segment,
        stats: &NormStats,
        cond_drop: f64,
        rng: &mut R,
    ) -> Result<NoisedItem> {
        let x0 = self.layout.from_segment(seg, stats)?;
        let condition = self.condition(stats, &seg.states[0])?;
        let k = rng.random_range(0..self.schedule.len());
        let noise = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
        let conditioned = !(cond_drop > 0.0 && rng.random::<f64>() < cond_drop);
        Ok(NoisedItem {
            x0,
            condition,
            k,
            noise,
            conditioned,
        })
    }

    /// Behavior-cloning loss of a batch of segments with freshly drawn
    /// diffusion steps, noise and condition dropout.
    pub fn bc_loss<R: Rng + ?Sized>(
        &self,
        net: &DenseNet,
        segments: &[Segment],
        stats: &NormStats,
        cond_drop: f64,
        rng: &mut R,
    ) -> Result<(f64, Gradients)> {
        let items = segments
            .iter()
            .map(|s| self.draw_item(s, stats, cond_drop, rng))
            .collect::<Result<Vec<_>>>()?;
        self.bc_loss_items(net, &items)
    }

    /// Noise predictions for a batch of plans. Row `i` of the result is
    /// `ε_θ(xs[i], k, conds[i])`, or the unconditioned prediction when
    /// `conds[i]` is `None`.
    pub fn predict(
        &self,
        net: &DenseNet,
        xs: &[&[f64]],
        conds: &[Option<&[f64]>],
        k: usize,
    ) -> Result<Array2<f64>> {
        check_dim("condition batch", xs.len(), conds.len())?;
        let mut inputs = Array2::zeros((xs.len(), self.input_dim()));
        for ((x, c), mut row) in xs.iter().zip(conds).zip(inputs.rows_mut()) {
            self.write_input(row.as_slice_mut().expect("standard layout"), x, *c, k)?;
        }
        net.forward_batch(ArrayView2::from(&inputs))
    }
}

pub const PHASE_FEATURES: usize = 8;

/// `[sin φ_FL, cos φ_FL, sin(φ_i - φ_FL), cos(φ_i - φ_FL) for FR, RL, RR]`
/// from a raw observation.
pub fn phase_features(raw_state: &[f64]) -> Result<[f64; PHASE_FEATURES]> {
    check_dim("state", STATE_DIM, raw_state.len())?;
    let phases = &raw_state[PHASE_OFFSET..PHASE_OFFSET + NUM_LEGS];
    let mut f = [0.0; PHASE_FEATURES];
    f[0] = phases[0].sin();
    f[1] = phases[0].cos();
    for i in 1..NUM_LEGS {
        let d = phases[i] - phases[0];
        f[2 * i] = d.sin();
        f[2 * i + 1] = d.cos();
    }
    Ok(f)
}

/// Classifier-free guidance blend `(1 + w) ε_c - w ε_u`, evaluated as
/// `ε_c + w (ε_c - ε_u)`. When `w = 0` or `ε_c = ε_u` the result is `ε_c`
/// bit-for-bit, signed zeros included.
pub fn guided_eps(eps_cond: &[f64], eps_uncond: &[f64], w: f64) -> Vec<f64> {
    eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(&c, &u)| {
            let d = c - u;
            if w == 0.0 || d == 0.0 {
                c
            } else {
                c + w * d
            }
        })
        .collect()
}
