//! Closed-loop rollouts, stability and velocity metrics, smoothed traces and
//! the preference-alignment ablation grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

use crate::align::{align, AlignConfig};
use crate::datasets::{ActionVec, Source, StateVec, Trajectory, TrajectoryMeta};
use crate::diffusion::Planner;
use crate::error::{Error, Result};
use crate::gaitsim::{self, EnvParams, EnvState, Gait, GaitTemplate, ACTION_DIM};
use crate::preference::{build_preference_dataset, ExpertIndex, Provenance};
use crate::rng;

/// Something that maps observations to queues of actions. Each call returns,
/// for every observation, a non-empty list of actions to execute in order
/// before the next call.
pub trait Policy {
    fn source(&self) -> Source;

    fn act(
        &self,
        observations: &[EnvState],
        rngs: &mut [&mut ChaCha8Rng],
    ) -> Result<Vec<Vec<Vec<f64>>>>;
}

/// The closed-form oscillator controller, one action per call, optionally
/// with Gaussian exploration noise drawn from the policy stream.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    template: GaitTemplate,
    params: EnvParams,
    action_noise: f64,
}

impl ExpertPolicy {
    pub fn new(gait: Gait, params: EnvParams) -> Self {
        Self {
            template: gait.template(),
            params,
            action_noise: 0.0,
        }
    }

    pub fn with_action_noise(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "action noise must be >= 0, got {sigma}"
            )));
        }
        self.action_noise = sigma;
        Ok(self)
    }
}

impl Policy for ExpertPolicy {
    fn source(&self) -> Source {
        Source::Expert
    }

    fn act(
        &self,
        observations: &[EnvState],
        rngs: &mut [&mut ChaCha8Rng],
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        observations
            .iter()
            .zip(rngs.iter_mut())
            .map(|(s, r)| {
                let mut a = gaitsim::expert_action(s, &self.template, &self.params)?.to_vec();
                if self.action_noise > 0.0 {
                    for x in &mut a {
                        *x += self.action_noise * r.sample::<f64, _>(StandardNormal);
                    }
                }
                Ok(vec![a])
            })
            .collect()
    }
}

/// Plans from the measured state and hands back the first `h` actions of
/// the plan, so the environment is replanned every `h` steps.
impl Policy for Planner {
    fn source(&self) -> Source {
        Source::Planner
    }

    fn act(
        &self,
        observations: &[EnvState],
        rngs: &mut [&mut ChaCha8Rng],
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        let obs: Vec<Vec<f64>> = observations.iter().map(EnvState::to_vec).collect();
        let h = self.horizon().max(1);
        Ok(self
            .plan_batch(&obs, rngs)?
            .into_iter()
            .map(|mut p| {
                p.actions.truncate(h);
                p.actions
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub gait: Gait,
    pub v_cmd: f64,
    /// Per-step velocity disturbance is uniform on `[-disturbance, disturbance]`.
    pub disturbance: f64,
    pub max_steps: usize,
    pub seed: u64,
}

struct Running {
    episode: usize,
    state: EnvState,
    queue: std::collections::VecDeque<Vec<f64>>,
    policy_rng: ChaCha8Rng,
    disturbance_rng: ChaCha8Rng,
    traj: Trajectory,
    done: bool,
}

fn state_array(s: &EnvState) -> StateVec {
    s.to_vec().try_into().expect("state dimension")
}

/// Runs the given episode indices of `spec` in lockstep so that policy calls
/// are batched across episodes. Episode `i` draws its reset jitter,
/// disturbances and policy noise from streams keyed by `(spec.seed, i)`, so
/// results do not depend on which other episodes share the batch.
pub fn rollout_batch(
    policy: &dyn Policy,
    spec: &EpisodeSpec,
    episodes: Range<usize>,
    params: &EnvParams,
) -> Result<Vec<Trajectory>> {
    if !(spec.disturbance >= 0.0 && spec.disturbance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "disturbance must be >= 0, got {}",
            spec.disturbance
        )));
    }
    let template = spec.gait.template();
    let mut running = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let e = ep as u64;
        let state = gaitsim::reset(
            &template,
            spec.v_cmd,
            rng::derive_seed(spec.seed, &[e, rng::tag("reset")]),
            params,
        )?;
        let meta = TrajectoryMeta {
            gait: spec.gait,
            v_cmd: spec.v_cmd,
            seed: spec.seed,
            episode: ep,
            source: policy.source(),
            fell: false,
            aborted: None,
            exploration_noise: 0.0,
        };
        running.push(Running {
            episode: ep,
            traj: Trajectory {
                meta,
                states: Vec::with_capacity(spec.max_steps),
                actions: Vec::with_capacity(spec.max_steps),
                rewards: Vec::with_capacity(spec.max_steps),
                dones: Vec::with_capacity(spec.max_steps),
                final_state: state_array(&state),
            },
            state,
            queue: Default::default(),
            policy_rng: rng::stream(spec.seed, &[e, rng::tag("policy")]),
            disturbance_rng: rng::stream(spec.seed, &[e, rng::tag("disturbance")]),
            done: spec.max_steps == 0,
        });
    }

    loop {
        let need: Vec<usize> = (0..running.len())
            .filter(|&i| !running[i].done && running[i].queue.is_empty())
            .collect();
        if !need.is_empty() {
            let obs: Vec<EnvState> = need.iter().map(|&i| running[i].state).collect();
            let mut rngs: Vec<ChaCha8Rng> = need
                .iter()
                .map(|&i| running[i].policy_rng.clone())
                .collect();
            let mut refs: Vec<&mut ChaCha8Rng> = rngs.iter_mut().collect();
            let plans = policy.act(&obs, &mut refs)?;
            if plans.len() != need.len() {
                return Err(Error::DimensionMismatch {
                    context: "policy output batch",
                    expected: need.len(),
                    got: plans.len(),
                });
            }
            for ((&i, actions), r) in need.iter().zip(plans).zip(rngs) {
                if actions.is_empty() {
                    return Err(Error::InvalidArgument("policy returned no actions".into()));
                }
                running[i].queue.extend(actions);
                running[i].policy_rng = r;
            }
        }
        let mut any = false;
        for run in running.iter_mut().filter(|r| !r.done) {
            any = true;
            let action = run.queue.pop_front().expect("queue refilled above");
            let noise = run.disturbance_rng.random::<f64>();
            if action.len() != ACTION_DIM || action.iter().any(|a| !a.is_finite()) {
                run.traj.meta.fell = true;
                run.traj.meta.aborted = Some(format!("policy emitted invalid action {action:?}"));
                if let Some(d) = run.traj.dones.last_mut() {
                    *d = true;
                }
                run.done = true;
                continue;
            }
            let a: ActionVec = std::array::from_fn(|i| gaitsim::clamp_action(action[i], params));
            let disturbance = spec.disturbance * (2.0 * noise - 1.0);
            let res = gaitsim::step(&run.state, &a, &template, disturbance, params)?;
            let t = run.traj.states.len() + 1;
            let end = res.done || t >= spec.max_steps;
            run.traj.states.push(state_array(&run.state));
            run.traj.actions.push(a);
            run.traj.rewards.push(res.reward);
            run.traj.dones.push(end);
            run.traj.final_state = state_array(&res.next_state);
            run.traj.meta.fell = res.done;
            run.state = res.next_state;
            run.done = end;
        }
        if !any {
            break;
        }
    }
    running.sort_by_key(|r| r.episode);
    Ok(running.into_iter().map(|r| r.traj).collect())
}

pub fn rollout_episode(
    policy: &dyn Policy,
    spec: &EpisodeSpec,
    episode: usize,
    params: &EnvParams,
) -> Result<Trajectory> {
    Ok(rollout_batch(policy, spec, episode..episode + 1, params)?
        .pop()
        .unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallHistogram {
    pub bin_width: usize,
    /// `counts[i]` counts falls whose step count lies in
    /// `(i * bin_width, (i + 1) * bin_width]`.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gait: Gait,
    pub v_cmd: f64,
    pub disturbance: f64,
    pub max_steps: usize,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub stability_pct: Vec<f64>,
    pub mean_stability_pct: f64,
    pub mean_velocity: Vec<f64>,
    pub mean_mean_velocity: f64,
    pub fall_histogram: FallHistogram,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub v_cmd: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub disturbance: f64,
    pub max_steps: usize,
}

pub const FALL_BINS: usize = 10;

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Metrics of already collected trajectories, one group per seed.
/// Episodes with no non-fallen velocity samples contribute nothing to the
/// velocity mean; a seed with none at all reports 0.
pub fn report_from_trajectories(
    gait: Gait,
    spec: &EvalSpec,
    per_seed: &[Vec<Trajectory>],
    fingerprint: &str,
) -> Result<EvalReport> {
    if per_seed.len() != spec.seeds.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory groups",
            expected: spec.seeds.len(),
            got: per_seed.len(),
        });
    }
    let bin_width = spec.max_steps.div_ceil(FALL_BINS).max(1);
    let mut counts = vec![0usize; FALL_BINS];
    let mut stability = Vec::new();
    let mut velocity = Vec::new();
    for trajs in per_seed {
        if trajs.len() != spec.episodes {
            return Err(Error::DimensionMismatch {
                context: "episodes per seed",
                expected: spec.episodes,
                got: trajs.len(),
            });
        }
        let stable = trajs.iter().filter(|t| !t.meta.fell).count();
        stability.push(100.0 * stable as f64 / trajs.len() as f64);
        let vs: Vec<f64> = trajs.iter().flat_map(|t| t.velocities()).collect();
        velocity.push(mean(&vs));
        for t in trajs.iter().filter(|t| t.meta.fell) {
            let bin = t.len().saturating_sub(1) / bin_width;
            counts[bin.min(FALL_BINS - 1)] += 1;
        }
    }
    Ok(EvalReport {
        gait,
        v_cmd: spec.v_cmd,
        disturbance: spec.disturbance,
        max_steps: spec.max_steps,
        episodes: spec.episodes,
        seeds: spec.seeds.clone(),
        mean_stability_pct: mean(&stability),
        stability_pct: stability,
        mean_mean_velocity: mean(&velocity),
        mean_velocity: velocity,
        fall_histogram: FallHistogram { bin_width, counts },
        fingerprint: fingerprint.into(),
    })
}

/// Rolls out `spec.episodes` episodes per seed and summarizes them.
pub fn evaluate(
    policy: &dyn Policy,
    gait: Gait,
    spec: &EvalSpec,
    params: &EnvParams,
    fingerprint: &str,
) -> Result<(EvalReport, Vec<Vec<Trajectory>>)> {
    if spec.episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Empty("evaluation needs at least one seed"));
    }
    let mut per_seed = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let ep = EpisodeSpec {
            gait,
            v_cmd: spec.v_cmd,
            disturbance: spec.disturbance,
            max_steps: spec.max_steps,
            seed,
        };
        per_seed.push(rollout_batch(policy, &ep, 0..spec.episodes, params)?);
    }
    let report = report_from_trajectories(gait, spec, &per_seed, fingerprint)?;
    Ok((report, per_seed))
}

/// Centered moving average. Position `i` averages indices
/// `i - (window - 1) / 2 ..= i + window / 2`, clipped to the series.
pub fn velocity_trace(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("cannot smooth an empty series"));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub((window - 1) / 2);
            let hi = (i + window / 2).min(n - 1);
            mean(&series[lo..=hi])
        })
        .collect())
}

#[derive(Serialize)]
struct EvalRow<'a> {
    gait: Gait,
    v_cmd: f64,
    disturbance: f64,
    seed: String,
    episodes: usize,
    stability_pct: f64,
    mean_velocity: f64,
    fingerprint: &'a str,
}

/// File name `eval_<gait>_<speed>.csv` for a report.
pub fn eval_csv_name(gait: Gait, v_cmd: f64) -> String {
    format!("eval_{gait}_{v_cmd:.2}.csv")
}

/// One row per seed followed by a `mean` row.
pub fn write_eval_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let rows = report
        .seeds
        .iter()
        .map(|s| s.to_string())
        .zip(report.stability_pct.iter().zip(&report.mean_velocity))
        .chain(std::iter::once((
            "mean".to_string(),
            (&report.mean_stability_pct, &report.mean_mean_velocity),
        )));
    for (seed, (&stability_pct, &mean_velocity)) in rows {
        w.serialize(EvalRow {
            gait: report.gait,
            v_cmd: report.v_cmd,
            disturbance: report.disturbance,
            seed,
            episodes: report.episodes,
            stability_pct,
            mean_velocity,
            fingerprint: &report.fingerprint,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow<'a> {
    step: usize,
    raw_v: f64,
    smoothed_v: f64,
    fingerprint: &'a str,
}

pub fn write_trace_csv(
    traj: &Trajectory,
    window: usize,
    path: &Path,
    fingerprint: &str,
) -> Result<()> {
    let raw = traj.velocities();
    let smooth = velocity_trace(&raw, window)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (step, (&raw_v, &smoothed_v)) in raw.iter().zip(&smooth).enumerate() {
        w.serialize(TraceRow {
            step: step + 1,
            raw_v,
            smoothed_v,
            fingerprint,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// How the ablation axes are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationDesign {
    /// Every combination of pair scale, label mode and regularization.
    Cross,
    /// The base cell plus cells varying one axis at a time.
    OneAtATime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub pair_scale: f64,
    pub labels: Provenance,
    pub reg_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub design: AblationDesign,
    pub pair_scales: Vec<f64>,
    pub reg_weights: Vec<f64>,
    pub base: AblationCell,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            design: AblationDesign::Cross,
            pair_scales: vec![0.5, 1.0, 1.5],
            reg_weights: vec![0.0, 1.0],
            base: AblationCell {
                pair_scale: 1.0,
                labels: Provenance::Weak,
                reg_weight: 1.0,
            },
        }
    }
}

impl AblationConfig {
    pub fn cells(&self) -> Vec<AblationCell> {
        let modes = [Provenance::Weak, Provenance::Strong];
        match self.design {
            AblationDesign::Cross => {
                let mut cells = Vec::new();
                for &pair_scale in &self.pair_scales {
                    for &labels in &modes {
                        for &reg_weight in &self.reg_weights {
                            cells.push(AblationCell {
                                pair_scale,
                                labels,
                                reg_weight,
                            });
                        }
                    }
                }
                cells
            }
            AblationDesign::OneAtATime => {
                let b = self.base;
                let mut cells = vec![b];
                cells.extend(
                    self.pair_scales
                        .iter()
                        .filter(|&&s| s != b.pair_scale)
                        .map(|&pair_scale| AblationCell { pair_scale, ..b }),
                );
                cells.extend(
                    modes
                        .iter()
                        .filter(|&&m| m != b.labels)
                        .map(|&labels| AblationCell { labels, ..b }),
                );
                cells.extend(
                    self.reg_weights
                        .iter()
                        .filter(|&&r| r != b.reg_weight)
                        .map(|&reg_weight| AblationCell { reg_weight, ..b }),
                );
                cells
            }
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.pair_scales.is_empty()
            || self
                .pair_scales
                .iter()
                .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            errs.push("ablation.pair_scales must be a non-empty list of positive numbers".into());
        }
        if self.reg_weights.is_empty()
            || self
                .reg_weights
                .iter()
                .any(|&r| !(r >= 0.0 && r.is_finite()))
        {
            errs.push(
                "ablation.reg_weights must be a non-empty list of non-negative numbers".into(),
            );
        }
        if self.base.pair_scale.is_nan()
            || self.base.pair_scale <= 0.0
            || self.base.reg_weight.is_nan()
            || self.base.reg_weight < 0.0
        {
            errs.push(
                "ablation.base must have a positive pair_scale and non-negative reg_weight".into(),
            );
        }
        errs
    }
}

/// Everything the ablation grid needs for one gait.
pub struct GaitAssets<'a> {
    pub gait: Gait,
    pub planner: &'a Planner,
    pub rollouts: &'a [Trajectory],
    pub index: &'a ExpertIndex,
}

/// Shared knobs of every ablation cell.
pub struct AblationSetup<'a> {
    pub config: &'a AblationConfig,
    pub align: &'a AlignConfig,
    pub base_pairs: usize,
    pub beta: f64,
    pub eval: &'a EvalSpec,
    pub params: &'a EnvParams,
    pub seed: u64,
    pub fingerprint: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub pairs: usize,
    pub report: EvalReport,
    /// Stability minus the base cell's on the same gait.
    pub delta_vs_base_pct: f64,
    /// Base-cell stability with weak labels minus the same cell with strong
    /// labels, on this row's gait; `None` unless both cells were run.
    pub weak_minus_strong_pct: Option<f64>,
}

pub fn scaled_pairs(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

/// Pair set for one gait and cell. Pair draws depend only on the pair count
/// and label mode, so cells that differ only in regularization see the same
/// pairs.
pub fn ablation_pairs(
    assets: &GaitAssets,
    pairs: usize,
    labels: Provenance,
    beta: f64,
    seed: u64,
) -> Result<Vec<crate::preference::PreferencePair>> {
    let mut r = rng::stream(
        seed,
        &[
            rng::tag("pairs"),
            rng::tag(assets.gait.name()),
            rng::tag(&labels.to_string()),
            pairs as u64,
        ],
    );
    build_preference_dataset(
        assets.rollouts,
        Some(assets.index),
        pairs,
        assets.planner.horizon(),
        labels,
        beta,
        &mut r,
    )
}

/// Aligns and evaluates every cell for every gait. The alignment stream is
/// keyed by gait only, so the cells form paired comparisons.
pub fn ablation_suite(assets: &[GaitAssets], setup: &AblationSetup) -> Result<Vec<AblationRow>> {
    let cells = setup.config.cells();
    let mut rows: Vec<AblationRow> = Vec::new();
    for a in assets {
        let first = rows.len();
        for cell in &cells {
            let n = scaled_pairs(setup.base_pairs, cell.pair_scale);
            let pairs = ablation_pairs(a, n, cell.labels, setup.beta, setup.seed)?;
            let cfg = AlignConfig {
                reg_weight: cell.reg_weight,
                ..setup.align.clone()
            };
            let mut r = rng::stream(setup.seed, &[rng::tag("align"), rng::tag(a.gait.name())]);
            let (aligned, _) = align(a.planner, &pairs, &cfg, &mut r)?;
            let (report, _) = evaluate(
                &aligned,
                a.gait,
                setup.eval,
                setup.params,
                setup.fingerprint,
            )?;
            rows.push(AblationRow {
                cell: *cell,
                pairs: n,
                report,
                delta_vs_base_pct: 0.0,
                weak_minus_strong_pct: None,
            });
        }
        let stability_of = |cell: AblationCell| {
            rows[first..]
                .iter()
                .find(|r| r.cell == cell)
                .map(|r| r.report.mean_stability_pct)
        };
        let base = setup.config.base;
        let gap = match (
            stability_of(AblationCell {
                labels: Provenance::Weak,
                ..base
            }),
            stability_of(AblationCell {
                labels: Provenance::Strong,
                ..base
            }),
        ) {
            (Some(w), Some(s)) => Some(w - s),
            _ => None,
        };
        let base = stability_of(base);
        for r in &mut rows[first..] {
            if let Some(b) = base {
                r.delta_vs_base_pct = r.report.mean_stability_pct - b;
            }
            r.weak_minus_strong_pct = gap;
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct AblationCsvRow<'a> {
    gait: Gait,
    v_cmd: f64,
    disturbance: f64,
    pair_scale: f64,
    pairs: usize,
    labels: Provenance,
    reg_weight: f64,
    stability_pct: f64,
    mean_velocity: f64,
    delta_vs_base_pct: f64,
    weak_minus_strong_pct: Option<f64>,
    fingerprint: &'a str,
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(AblationCsvRow {
            gait: r.report.gait,
            v_cmd: r.report.v_cmd,
            disturbance: r.report.disturbance,
            pair_scale: r.cell.pair_scale,
            pairs: r.pairs,
            labels: r.cell.labels,
            reg_weight: r.cell.reg_weight,
            stability_pct: r.report.mean_stability_pct,
            mean_velocity: r.report.mean_mean_velocity,
            delta_vs_base_pct: r.delta_vs_base_pct,
            weak_minus_strong_pct: r.weak_minus_strong_pct,
            fingerprint: &r.report.fingerprint,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean stability over gaits of the rows matching `cell`.
pub fn cell_mean_stability(rows: &[AblationRow], cell: &AblationCell) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.cell == *cell)
        .map(|r| r.report.mean_stability_pct)
        .collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

/// A policy whose every action is NaN; used to exercise abort handling.
#[doc(hidden)]
pub struct NanPolicy;

impl Policy for NanPolicy {
    fn source(&self) -> Source {
        Source::Planner
    }

    fn act(
        &self,
        observations: &[EnvState],
        _rngs: &mut [&mut ChaCha8Rng],
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        Ok(observations
            .iter()
            .map(|_| vec![vec![f64::NAN; ACTION_DIM]])
            .collect())
    }
}
