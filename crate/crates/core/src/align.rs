//! Preference alignment of a trained denoiser with a diffusion-DPO objective
//! against a frozen reference copy, plus a behavior-cloning regularizer.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::{NormStats, Segment};
use crate::diffusion::{DiffusionModel, NoisedItem, Planner};
use crate::error::{Error, Result};
use crate::ndcore::{Adam, DenseNet, Gradients};
use crate::preference::PreferencePair;

pub const LOGIT_CLAMP: f64 = 30.0;
pub const DIVERGENCE_LOGIT: f64 = 25.0;
pub const DIVERGENCE_PATIENCE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub temperature: f64,
    pub bias: f64,
    pub reg_weight: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            temperature: 500.0,
            bias: 0.0,
            reg_weight: 1.0,
            lr: 1e-4,
            epochs: 4,
            batch_size: 32,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            errs.push(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !self.bias.is_finite() {
            errs.push(format!("bias must be finite, got {}", self.bias));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            errs.push(format!(
                "reg_weight must be non-negative, got {}",
                self.reg_weight
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be at least 1".into());
        }
        errs
    }
}

/// Per-step alignment diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignLogEntry {
    pub step: usize,
    pub epoch: usize,
    pub pref_loss: f64,
    pub reg_loss: f64,
    pub mean_logit: f64,
    pub clamped: usize,
}

/// Loss terms of one batch of pairs, averaged over the batch.
#[derive(Debug, Clone)]
pub struct DpoOutput {
    pub pref_loss: f64,
    pub reg_loss: f64,
    pub logits: Vec<f64>,
    pub clamped: usize,
    pub grads: Gradients,
}

impl DpoOutput {
    pub fn loss(&self) -> f64 {
        self.pref_loss + self.reg_loss
    }

    pub fn mean_logit(&self) -> f64 {
        self.logits.iter().sum::<f64>() / self.logits.len() as f64
    }
}

/// `-log sigmoid(x)`, stable for large `|x|`.
pub fn softplus_neg(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// DPO loss on fixed noised winner/loser items. Item `i` of `winners` is
/// paired with item `i` of `losers`.
pub fn dpo_loss_items(
    model: &DiffusionModel,
    net: &DenseNet,
    reference: &DenseNet,
    winners: &[NoisedItem],
    losers: &[NoisedItem],
    cfg: &AlignConfig,
) -> Result<DpoOutput> {
    let b = winners.len();
    if b == 0 {
        return Err(Error::Empty("dpo loss needs at least one pair"));
    }
    crate::error::check_dim("loser batch", b, losers.len())?;
    let items: Vec<NoisedItem> = winners.iter().chain(losers).cloned().collect();
    let pass = model.error_pass(net, &items)?;
    let ref_errors = model.error_pass(reference, &items)?.errors;
    let err = &pass.errors;

    let n = b as f64;
    let t = cfg.temperature;
    let mut coeffs = vec![0.0; 2 * b];
    let mut logits = Vec::with_capacity(b);
    let (mut pref, mut reg, mut clamped) = (0.0, 0.0, 0usize);
    for i in 0..b {
        let dw = err[i] - ref_errors[i];
        let dl = err[b + i] - ref_errors[b + i];
        let raw = -t * (dw - dl) + cfg.bias;
        if !raw.is_finite() {
            return Err(Error::NonFinite(format!("dpo logit of pair {i}")));
        }
        let logit = raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let live = logit == raw;
        clamped += (!live) as usize;
        pref += softplus_neg(logit);
        reg += cfg.reg_weight * 0.5 * (err[i] + err[b + i]);
        logits.push(logit);
        // d(-log sigmoid(l))/dl = -sigmoid(-l); dl/d err_w = -T, dl/d err_l = T
        let g = if live { -sigmoid(-logit) } else { 0.0 };
        coeffs[i] = (g * -t + 0.5 * cfg.reg_weight) / n;
        coeffs[b + i] = (g * t + 0.5 * cfg.reg_weight) / n;
    }
    let grads = model.error_backward(net, &pass, &coeffs)?;
    Ok(DpoOutput {
        pref_loss: pref / n,
        reg_loss: reg / n,
        logits,
        clamped,
        grads,
    })
}

fn conditioned_item(
    model: &DiffusionModel,
    seg: &Segment,
    stats: &NormStats,
    k: usize,
    noise: &[f64],
) -> Result<NoisedItem> {
    Ok(NoisedItem {
        condition: model.condition(stats, &seg.states[0])?,
        x0: model.layout.from_segment(seg, stats)?,
        k,
        noise: noise.to_vec(),
        conditioned: true,
    })
}

/// Noised winner/loser items for a batch of pairs; each pair shares one
/// diffusion step and one noise draw.
pub fn draw_pair_items<R: Rng + ?Sized>(
    model: &DiffusionModel,
    pairs: &[&PreferencePair],
    stats: &NormStats,
    rng: &mut R,
) -> Result<(Vec<NoisedItem>, Vec<NoisedItem>)> {
    let mut winners = Vec::with_capacity(pairs.len());
    let mut losers = Vec::with_capacity(pairs.len());
    for p in pairs {
        let k = rng.random_range(0..model.schedule.len());
        let noise: Vec<f64> = (0..model.layout.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        winners.push(conditioned_item(model, &p.winner, stats, k, &noise)?);
        losers.push(conditioned_item(model, &p.loser, stats, k, &noise)?);
    }
    Ok((winners, losers))
}

pub fn dpo_loss<R: Rng + ?Sized>(
    model: &DiffusionModel,
    net: &DenseNet,
    reference: &DenseNet,
    stats: &NormStats,
    pairs: &[&PreferencePair],
    cfg: &AlignConfig,
    rng: &mut R,
) -> Result<DpoOutput> {
    let (w, l) = draw_pair_items(model, pairs, stats, rng)?;
    dpo_loss_items(model, net, reference, &w, &l, cfg)
}

/// Aligns a copy of `planner` on `pairs`. The input planner serves as the
/// frozen reference and is not modified.
pub fn align<R: Rng + ?Sized>(
    planner: &Planner,
    pairs: &[PreferencePair],
    cfg: &AlignConfig,
    rng: &mut R,
) -> Result<(Planner, Vec<AlignLogEntry>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("alignment needs at least one preference pair"));
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidArgument(errs.join("; ")));
    }
    let reference = &planner.net;
    let mut aligned = planner.clone();
    let mut opt = Adam::new(&aligned.net, cfg.lr);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut hot = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreferencePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let step = log.len();
            let out = dpo_loss(
                &aligned.model,
                &aligned.net,
                reference,
                &aligned.stats,
                &batch,
                cfg,
                rng,
            )?;
            let mean_abs =
                out.logits.iter().map(|l| l.abs()).sum::<f64>() / out.logits.len() as f64;
            hot = if mean_abs > DIVERGENCE_LOGIT {
                hot + 1
            } else {
                0
            };
            if hot >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence(format!(
                    "mean |logit| above {DIVERGENCE_LOGIT} for {DIVERGENCE_PATIENCE} consecutive steps (step {step}, last {mean_abs:.3})"
                )));
            }
            opt.step(&mut aligned.net, &out.grads)
                .map_err(|e| Error::Divergence(format!("alignment step {step}: {e}")))?;
            log.push(AlignLogEntry {
                step,
                epoch,
                pref_loss: out.pref_loss,
                reg_loss: out.reg_loss,
                mean_logit: out.mean_logit(),
                clamped: out.clamped,
            });
        }
    }
    Ok((aligned, log))
}

/// Mean logit of `net` against `reference` over `pairs`, with `draws`
/// independent `(k, ε)` draws per pair.
#[allow(clippy::too_many_arguments)]
pub fn mean_logit<R: Rng + ?Sized>(
    model: &DiffusionModel,
    net: &DenseNet,
    reference: &DenseNet,
    stats: &NormStats,
    pairs: &[PreferencePair],
    cfg: &AlignConfig,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let refs: Vec<&PreferencePair> = pairs.iter().collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..draws {
        let out = dpo_loss(model, net, reference, stats, &refs, cfg, rng)?;
        total += out.logits.iter().sum::<f64>();
        count += out.logits.len();
    }
    if count == 0 {
        return Err(Error::Empty("no pairs to score"));
    }
    Ok(total / count as f64)
}
