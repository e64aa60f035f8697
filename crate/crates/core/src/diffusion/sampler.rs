use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::ndcore::DenseNet;

use super::model::{guided_eps, DiffusionModel};

/// One reverse step from diffusion step `from` to `to` (`None` = clean end)
/// for a batch of plans. Conditioned and unconditioned predictions are
/// blended with guidance weight `w_cg`; each plan draws its ancestral noise
/// from its own generator and has its condition slot re-imposed afterwards.
/// Rows are independent: a plan that turns non-finite leaves the others
/// untouched and the caller decides what to do with it.
#[allow(clippy::too_many_arguments)]
pub fn denoise_step_batch<R: Rng>(
    model: &DiffusionModel,
    net: &DenseNet,
    xs: &mut [Vec<f64>],
    conditions: &[Vec<f64>],
    from: usize,
    to: Option<usize>,
    w_cg: f64,
    rngs: &mut [&mut R],
) -> Result<()> {
    let b = xs.len();
    check_dim("condition batch", b, conditions.len())?;
    check_dim("rng batch", b, rngs.len())?;
    if from >= model.schedule.len() || to.is_some_and(|t| t >= from) {
        return Err(Error::InvalidArgument(format!(
            "bad denoising transition {from} -> {to:?}"
        )));
    }
    let ab_cur = model.schedule.alpha_bars[from];
    let ab_prev = model.schedule.alpha_bar_or_one(to);
    let alpha = ab_cur / ab_prev;
    let beta = 1.0 - alpha;
    let eps_coef = beta / (1.0 - ab_cur).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = ((1.0 - ab_prev) / (1.0 - ab_cur) * beta).sqrt();

    let mut inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    inputs.extend(xs.iter().map(|x| x.as_slice()));
    let mut conds: Vec<Option<&[f64]>> = conditions.iter().map(|c| Some(c.as_slice())).collect();
    conds.extend(std::iter::repeat_n(None, b));
    let eps = model.predict(net, &inputs, &conds, from)?;

    for (i, (x, rng)) in xs.iter_mut().zip(rngs.iter_mut()).enumerate() {
        let cond_row = eps.row(i);
        let uncond_row = eps.row(b + i);
        let eps_bar = guided_eps(
            cond_row.as_slice().expect("contiguous"),
            uncond_row.as_slice().expect("contiguous"),
            w_cg,
        );
        for (xv, e) in x.iter_mut().zip(&eps_bar) {
            let mean = inv_sqrt_alpha * (*xv - eps_coef * e);
            *xv = if to.is_some() {
                let z: f64 = rng.sample(StandardNormal);
                mean + sigma * z
            } else {
                mean
            };
        }
        model.layout.impose_condition(x, &conditions[i]);
    }
    Ok(())
}

/// Single-plan reverse step `k -> k - 1` (no noise at `k = 0`).
#[allow(clippy::too_many_arguments)]
pub fn ddpm_denoise_step<R: Rng>(
    model: &DiffusionModel,
    net: &DenseNet,
    x_k: &[f64],
    k: usize,
    condition: &[f64],
    w_cg: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut xs = vec![x_k.to_vec()];
    denoise_step_batch(
        model,
        net,
        &mut xs,
        &[condition.to_vec()],
        k,
        k.checked_sub(1),
        w_cg,
        &mut [rng],
    )?;
    let x = xs.pop().unwrap();
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "plan entry {j} after diffusion step {k}"
        )));
    }
    Ok(x)
}

/// Full strided reverse chain from standard normal noise for a batch of
/// normalized conditions. Returns normalized plan tensors.
pub fn sample_batch<R: Rng>(
    model: &DiffusionModel,
    net: &DenseNet,
    conditions: &[Vec<f64>],
    steps: usize,
    w_cg: f64,
    rngs: &mut [&mut R],
) -> Result<Vec<Vec<f64>>> {
    let seq = model.schedule.inference_steps(steps)?;
    let n = model.layout.len();
    let mut xs: Vec<Vec<f64>> = conditions
        .iter()
        .zip(rngs.iter_mut())
        .map(|(c, rng)| {
            let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            model.layout.impose_condition(&mut x, c);
            x
        })
        .collect();
    for (i, &from) in seq.iter().enumerate() {
        let to = seq.get(i + 1).copied();
        denoise_step_batch(model, net, &mut xs, conditions, from, to, w_cg, rngs)?;
    }
    Ok(xs)
}
