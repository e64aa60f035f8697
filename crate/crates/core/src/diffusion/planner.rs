use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datasets::{sample_segment, NormStats, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::ndcore::{Adam, DenseNet, NetCheckpoint};

use super::model::{DiffusionConfig, DiffusionModel};
use super::sampler::sample_batch;

/// Trained denoiser bundled with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Planner {
    pub cfg: DiffusionConfig,
    pub model: DiffusionModel,
    pub net: DenseNet,
    pub stats: NormStats,
    pub a_max: f64,
}

/// Denormalized output of one planning call; both sequences have
/// `horizon + 1` rows and `states[0]` is the conditioning observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub loss: f64,
}

pub const PLANNER_SCHEMA: &str = "gaitdiff-planner";
pub const PLANNER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlannerFile {
    schema: String,
    version: u32,
    fingerprint: String,
    config: DiffusionConfig,
    a_max: f64,
    stats: NormStats,
    net: NetCheckpoint,
}

impl Planner {
    /// Fresh planner with seeded uniform initialization.
    pub fn new<R: Rng + ?Sized>(
        cfg: &DiffusionConfig,
        stats: NormStats,
        a_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let model = DiffusionModel::from_config(cfg)?;
        let net = DenseNet::new(&model.net_sizes(&cfg.hidden), rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            model,
            net,
            stats,
            a_max,
        })
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    /// Plans for a batch of raw observations, one generator per plan.
    pub fn plan_batch<R: Rng>(
        &self,
        observations: &[Vec<f64>],
        rngs: &mut [&mut R],
    ) -> Result<Vec<Plan>> {
        let conds = observations
            .iter()
            .map(|o| self.model.condition(&self.stats, o))
            .collect::<Result<Vec<_>>>()?;
        let xs = sample_batch(
            &self.model,
            &self.net,
            &conds,
            self.cfg.sampling_steps,
            self.cfg.w_cg,
            rngs,
        )?;
        xs.iter()
            .zip(observations)
            .map(|(x, obs)| {
                let (mut states, mut actions) = self.model.layout.split(x, &self.stats)?;
                // exact condition slot, free of normalization round-off
                states[0] = obs.clone();
                for a in actions.iter_mut().flatten() {
                    *a = a.clamp(0.0, self.a_max);
                }
                Ok(Plan { states, actions })
            })
            .collect()
    }

    pub fn plan<R: Rng>(&self, observation: &[f64], rng: &mut R) -> Result<Plan> {
        check_dim(
            "observation",
            self.model.layout.state_dim,
            observation.len(),
        )?;
        let plan = self
            .plan_batch(&[observation.to_vec()], &mut [rng])?
            .pop()
            .unwrap();
        if plan
            .actions
            .iter()
            .chain(&plan.states)
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("planner output".into()));
        }
        Ok(plan)
    }

    pub fn save(&self, path: &Path, fingerprint: &str) -> Result<()> {
        let file = PlannerFile {
            schema: PLANNER_SCHEMA.into(),
            version: PLANNER_VERSION,
            fingerprint: fingerprint.into(),
            config: self.cfg.clone(),
            a_max: self.a_max,
            stats: self.stats.clone(),
            net: self.net.to_checkpoint(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let file: PlannerFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.schema != PLANNER_SCHEMA || file.version != PLANNER_VERSION {
            return Err(Error::Format(format!(
                "unsupported planner file {} v{}",
                file.schema, file.version
            )));
        }
        let model = DiffusionModel::from_config(&file.config)?;
        let net = DenseNet::from_checkpoint(&file.net)?;
        model.check_net(&net)?;
        file.stats.validate()?;
        Ok((
            Self {
                cfg: file.config,
                model,
                net,
                stats: file.stats,
                a_max: file.a_max,
            },
            file.fingerprint,
        ))
    }

    /// Behavior cloning on segments drawn uniformly from `trajs`.
    pub fn train_bc<R: Rng + ?Sized>(
        &mut self,
        trajs: &[Trajectory],
        steps: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainLogEntry>> {
        let mut opt = Adam::new(&self.net, self.cfg.lr);
        let mut log = Vec::with_capacity(steps);
        let h = self.cfg.horizon;
        for step in 0..steps {
            let batch = (0..self.cfg.batch_size)
                .map(|_| sample_segment(trajs, h, rng))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) =
                self.model
                    .bc_loss(&self.net, &batch, &self.stats, self.cfg.cond_drop, rng)?;
            opt.step(&mut self.net, &grads)
                .map_err(|e| Error::Divergence(format!("behavior cloning step {step}: {e}")))?;
            log.push(TrainLogEntry { step, loss });
        }
        Ok(log)
    }
}
