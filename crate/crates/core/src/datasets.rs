//! Trajectory storage, feature normalization and segment sampling.
//!
//! Dataset files are JSON lines. The first line is a [`DatasetHeader`]
//! carrying the schema version, the trajectory count, the run fingerprint
//! and a CRC-32 of every byte after the header line. Each following line is
//! one [`Trajectory`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::evalharness::{rollout_batch, EpisodeSpec, ExpertPolicy, Policy};
use crate::gaitsim::{EnvParams, EnvState, Gait, ACTION_DIM, STATE_DIM};

pub type StateVec = [f64; STATE_DIM];
pub type ActionVec = [f64; ACTION_DIM];

pub const EPS_STD: f64 = 1e-6;
pub const DATASET_SCHEMA: &str = "gaitdiff-trajectories";
pub const DATASET_VERSION: u32 = 1;
pub const NORM_SCHEMA: &str = "gaitdiff-norm-stats";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Expert,
    Planner,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Expert => "expert",
            Source::Planner => "planner",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub gait: Gait,
    pub v_cmd: f64,
    pub seed: u64,
    pub episode: usize,
    pub source: Source,
    /// True when the episode ended by falling (or by an aborted rollout).
    pub fell: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    /// Std of the Gaussian noise added to executed expert actions. When
    /// non-zero, `actions` hold the noise-free expert labels of the visited
    /// states rather than the executed actions.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub exploration_noise: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// One episode. `states[t]` is the observation the action `actions[t]` was
/// taken from; `rewards[t]` and `dones[t]` describe the resulting transition
/// and `final_state` is the observation after the last transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub states: Vec<StateVec>,
    pub actions: Vec<ActionVec>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub final_state: StateVec,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.states.len();
        check_dim("trajectory actions", t, self.actions.len())?;
        check_dim("trajectory rewards", t, self.rewards.len())?;
        check_dim("trajectory dones", t, self.dones.len())?;
        if t > 1 && self.dones[..t - 1].iter().any(|&d| d) {
            return Err(Error::Format("done flag before the final step".into()));
        }
        Ok(())
    }

    pub fn cumulative_reward(&self) -> f64 {
        crate::gaitsim::evaluate_reward(&self.rewards)
    }

    /// Velocities observed after each executed step; the state reached by a
    /// fall is excluded.
    pub fn velocities(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.states.iter().skip(1).map(|s| s[1]).collect();
        if !self.meta.fell && !self.is_empty() {
            v.push(self.final_state[1]);
        }
        v
    }
}

/// Rolls out `episodes` episodes of `policy`. Episode `i` uses seed streams
/// derived from `(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn collect(
    policy: &dyn Policy,
    gait: Gait,
    v_cmd: f64,
    episodes: usize,
    max_steps: usize,
    seed: u64,
    disturbance: f64,
    params: &EnvParams,
) -> Result<Vec<Trajectory>> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    let spec = EpisodeSpec {
        gait,
        v_cmd,
        disturbance,
        max_steps,
        seed,
    };
    rollout_batch(policy, &spec, 0..episodes, params)
}

/// Expert demonstrations. With `action_noise > 0` the expert executes
/// perturbed actions, which spreads the visited states around the nominal
/// gait, and each record is labeled with the noise-free expert action.
#[allow(clippy::too_many_arguments)]
pub fn collect_expert(
    gait: Gait,
    v_cmd: f64,
    episodes: usize,
    max_steps: usize,
    seed: u64,
    disturbance: f64,
    action_noise: f64,
    params: &EnvParams,
) -> Result<Vec<Trajectory>> {
    let expert = ExpertPolicy::new(gait, params.clone()).with_action_noise(action_noise)?;
    let mut trajs = collect(
        &expert,
        gait,
        v_cmd,
        episodes,
        max_steps,
        seed,
        disturbance,
        params,
    )?;
    if action_noise > 0.0 {
        let template = gait.template();
        for t in &mut trajs {
            for (s, a) in t.states.iter().zip(t.actions.iter_mut()) {
                *a = crate::gaitsim::expert_action(&EnvState::from_slice(s)?, &template, params)?;
            }
            t.meta.exploration_noise = action_noise;
        }
    }
    Ok(trajs)
}

/// Per-feature Gaussian statistics (population std, floored at [`EPS_STD`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
}

fn mean_std<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        n += 1;
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(EPS_STD))
        .collect();
    (mean, std)
}

pub fn fit_norm(trajs: &[Trajectory]) -> Result<NormStats> {
    let total: usize = trajs.iter().map(Trajectory::len).sum();
    if total == 0 {
        return Err(Error::Empty("fit_norm needs at least one state"));
    }
    let states = trajs
        .iter()
        .flat_map(|t| t.states.iter().map(|s| s.as_slice()));
    let actions = trajs
        .iter()
        .flat_map(|t| t.actions.iter().map(|a| a.as_slice()));
    let (state_mean, state_std) = mean_std(states, STATE_DIM);
    let (action_mean, action_std) = mean_std(actions, ACTION_DIM);
    Ok(NormStats {
        state_mean,
        state_std,
        action_mean,
        action_std,
    })
}

fn apply(x: &[f64], mean: &[f64], std: &[f64], forward: bool) -> Result<Vec<f64>> {
    check_dim("normalization input", mean.len(), x.len())?;
    Ok(x.iter()
        .zip(mean.iter().zip(std))
        .map(|(&v, (&m, &s))| if forward { (v - m) / s } else { v * s + m })
        .collect())
}

impl NormStats {
    /// Statistics that leave every feature unchanged.
    pub fn identity() -> Self {
        Self {
            state_mean: vec![0.0; STATE_DIM],
            state_std: vec![1.0; STATE_DIM],
            action_mean: vec![0.0; ACTION_DIM],
            action_std: vec![1.0; ACTION_DIM],
        }
    }

    pub fn normalize_state(&self, s: &[f64]) -> Result<Vec<f64>> {
        apply(s, &self.state_mean, &self.state_std, true)
    }

    pub fn denormalize_state(&self, z: &[f64]) -> Result<Vec<f64>> {
        apply(z, &self.state_mean, &self.state_std, false)
    }

    pub fn normalize_action(&self, a: &[f64]) -> Result<Vec<f64>> {
        apply(a, &self.action_mean, &self.action_std, true)
    }

    pub fn denormalize_action(&self, z: &[f64]) -> Result<Vec<f64>> {
        apply(z, &self.action_mean, &self.action_std, false)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("state_mean", STATE_DIM, self.state_mean.len())?;
        check_dim("state_std", STATE_DIM, self.state_std.len())?;
        check_dim("action_mean", ACTION_DIM, self.action_mean.len())?;
        check_dim("action_std", ACTION_DIM, self.action_std.len())?;
        if self
            .state_std
            .iter()
            .chain(&self.action_std)
            .any(|&s| s.is_nan() || s < EPS_STD)
        {
            return Err(Error::Format("std entry below floor".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, fingerprint: &str) -> Result<()> {
        let file = NormStatsFile {
            schema: NORM_SCHEMA.into(),
            version: DATASET_VERSION,
            fingerprint: fingerprint.into(),
            stats: self.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&file)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let file: NormStatsFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.schema != NORM_SCHEMA || file.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported norm stats file {} v{}",
                file.schema, file.version
            )));
        }
        file.stats.validate()?;
        Ok((file.stats, file.fingerprint))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormStatsFile {
    schema: String,
    version: u32,
    fingerprint: String,
    stats: NormStats,
}

/// `h + 1` consecutive records of a trajectory starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub traj: usize,
    pub start: usize,
    pub states: Vec<StateVec>,
    pub actions: Vec<ActionVec>,
    pub rewards: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn slice(trajs: &[Trajectory], traj: usize, start: usize, h: usize) -> Result<Self> {
        let t = trajs
            .get(traj)
            .ok_or_else(|| Error::InvalidArgument(format!("trajectory {traj} out of range")))?;
        let end = start + h + 1;
        if end > t.len() {
            return Err(Error::InvalidArgument(format!(
                "segment {start}..{end} exceeds trajectory length {}",
                t.len()
            )));
        }
        if t.dones[start..end - 1].iter().any(|&d| d) {
            return Err(Error::InvalidArgument(
                "segment crosses a terminal transition".into(),
            ));
        }
        Ok(Self {
            traj,
            start,
            states: t.states[start..end].to_vec(),
            actions: t.actions[start..end].to_vec(),
            rewards: t.rewards[start..end].to_vec(),
        })
    }
}

/// Number of valid segment start indices in a trajectory.
pub fn segment_starts(t: &Trajectory, h: usize) -> usize {
    // dones may only be set on the final record, which a segment may end on
    t.len().saturating_sub(h)
}

/// Draws a `(trajectory, start)` pair uniformly among all valid pairs.
pub fn sample_segment<R: Rng + ?Sized>(
    trajs: &[Trajectory],
    h: usize,
    rng: &mut R,
) -> Result<Segment> {
    let counts: Vec<usize> = trajs.iter().map(|t| segment_starts(t, h)).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument(format!(
            "no trajectory has at least {} steps",
            h + 1
        )));
    }
    let mut idx = rng.random_range(0..total);
    for (traj, &c) in counts.iter().enumerate() {
        if idx < c {
            return Segment::slice(trajs, traj, idx, h);
        }
        idx -= c;
    }
    unreachable!("index within total segment count")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema: String,
    pub version: u32,
    pub count: usize,
    pub fingerprint: String,
    /// CRC-32 of the payload (everything after the header line), hex.
    pub crc32: String,
}

pub fn save(trajs: &[Trajectory], path: &Path, fingerprint: &str) -> Result<()> {
    let mut payload = Vec::new();
    for t in trajs {
        serde_json::to_writer(&mut payload, t)?;
        payload.push(b'\n');
    }
    let header = DatasetHeader {
        schema: DATASET_SCHEMA.into(),
        version: DATASET_VERSION,
        count: trajs.len(),
        fingerprint: fingerprint.into(),
        crc32: format!("{:08x}", crc32fast::hash(&payload)),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    f.write_all(&payload)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Trajectory>> {
    Ok(load_with_header(path)?.1)
}

pub fn load_with_header(path: &Path) -> Result<(Option<DatasetHeader>, Vec<Trajectory>)> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Ok((None, Vec::new()));
    }
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header: DatasetHeader = serde_json::from_slice(&bytes[..split])?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::Format(format!(
            "unexpected schema '{}'",
            header.schema
        )));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "dataset version {} (expected {DATASET_VERSION})",
            header.version
        )));
    }
    let payload = &bytes[split + 1..];
    let expected = u32::from_str_radix(&header.crc32, 16)
        .map_err(|_| Error::Format(format!("bad crc field '{}'", header.crc32)))?;
    let found = crc32fast::hash(payload);
    if expected != found {
        return Err(Error::Checksum { expected, found });
    }
    let mut trajs = Vec::with_capacity(header.count);
    for line in payload.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
        let t: Trajectory = serde_json::from_slice(line)?;
        t.validate()?;
        trajs.push(t);
    }
    if trajs.len() != header.count {
        return Err(Error::Format(format!(
            "truncated dataset: header promises {} trajectories, found {}",
            header.count,
            trajs.len()
        )));
    }
    Ok((Some(header), trajs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_traj(len: usize, fill: f64) -> Trajectory {
        let mut dones = vec![false; len];
        if let Some(d) = dones.last_mut() {
            *d = true;
        }
        Trajectory {
            meta: TrajectoryMeta {
                gait: Gait::Trotting,
                v_cmd: 0.5,
                seed: 0,
                episode: 0,
                source: Source::Expert,
                fell: false,
                aborted: None,
                exploration_noise: 0.0,
            },
            states: (0..len).map(|t| [fill + t as f64; STATE_DIM]).collect(),
            actions: (0..len).map(|t| [fill - t as f64; ACTION_DIM]).collect(),
            rewards: (0..len).map(|t| 0.1 * t as f64).collect(),
            dones,
            final_state: [fill; STATE_DIM],
        }
    }

    #[test]
    fn constant_feature_gets_floor_std() {
        let t = Trajectory {
            states: vec![[2.5; STATE_DIM]; 4],
            actions: vec![[0.1; ACTION_DIM]; 4],
            ..toy_traj(4, 0.0)
        };
        let s = fit_norm(&[t]).unwrap();
        assert!(s.state_mean.iter().all(|&m| m == 2.5));
        assert!(s.state_std.iter().all(|&v| v == EPS_STD));
    }

    #[test]
    fn two_values_population_std() {
        let mut t = toy_traj(2, 0.0);
        t.states = vec![[0.0; STATE_DIM], [2.0; STATE_DIM]];
        let s = fit_norm(&[t]).unwrap();
        assert_eq!(s.state_mean[0], 1.0);
        assert_eq!(s.state_std[0], 1.0);
    }

    #[test]
    fn fit_norm_rejects_empty() {
        assert!(matches!(fit_norm(&[]), Err(Error::Empty(_))));
        assert!(fit_norm(&[toy_traj(0, 0.0)]).is_err());
    }

    #[test]
    fn normalize_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trajs: Vec<Trajectory> = (0..3)
            .map(|_| {
                let mut t = toy_traj(20, 0.0);
                for s in &mut t.states {
                    s.iter_mut().for_each(|x| *x = rng.random_range(-3.0..3.0));
                }
                t
            })
            .collect();
        let stats = fit_norm(&trajs).unwrap();
        let z = stats.normalize_state(&stats.state_mean).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let id = NormStats::identity();
        let x = [0.3; STATE_DIM];
        assert_eq!(id.normalize_state(&x).unwrap(), x.to_vec());
        assert!(stats.normalize_state(&[1.0; 3]).is_err());
    }

    #[test]
    fn single_trajectory_of_exact_length_starts_at_zero() {
        let trajs = vec![toy_traj(6, 0.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = sample_segment(&trajs, 5, &mut rng).unwrap();
            assert_eq!((s.traj, s.start, s.len()), (0, 0, 6));
        }
        assert!(sample_segment(&trajs, 6, &mut rng).is_err());
    }

    #[test]
    fn segment_matches_direct_indexing() {
        let trajs = vec![toy_traj(30, 1.0), toy_traj(40, 100.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = sample_segment(&trajs, 7, &mut rng).unwrap();
            let src = &trajs[s.traj];
            for i in 0..8 {
                assert_eq!(s.states[i], src.states[s.start + i]);
                assert_eq!(s.actions[i], src.actions[s.start + i]);
                assert_eq!(s.rewards[i], src.rewards[s.start + i]);
            }
        }
    }

    #[test]
    fn slice_refuses_to_cross_done() {
        let mut t = toy_traj(10, 0.0);
        t.dones[4] = true;
        assert!(Segment::slice(&[t.clone()], 0, 2, 4).is_err());
        assert!(Segment::slice(&[t], 0, 0, 4).is_ok());
    }

    #[test]
    fn save_load_round_trip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let trajs = vec![toy_traj(5, 0.125), toy_traj(3, -7.3e-9)];
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        save(&trajs, &a, "fp").unwrap();
        let back = load(&a).unwrap();
        assert_eq!(back, trajs);
        save(&back, &b, "fp").unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save(&[toy_traj(5, 0.5)], &p, "fp").unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        let i = header_end + 20;
        bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load(&p), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncation_and_version_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save(&[toy_traj(5, 0.5)], &p, "fp").unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let header = text.lines().next().unwrap();
        std::fs::write(&p, format!("{header}\n")).unwrap();
        assert!(load(&p).is_err());
        std::fs::write(&p, text.replacen("\"version\":1", "\"version\":9", 1)).unwrap();
        assert!(matches!(load(&p), Err(Error::Format(_))));
    }

    #[test]
    fn empty_dataset_loads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        save(&[], &p, "fp").unwrap();
        assert!(load(&p).unwrap().is_empty());
        std::fs::write(&p, b"").unwrap();
        assert!(load(&p).unwrap().is_empty());
    }

    #[test]
    fn norm_stats_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("norm_stats.json");
        let s = fit_norm(&[toy_traj(9, 0.3)]).unwrap();
        s.save(&p, "abc").unwrap();
        let (back, fp) = NormStats::load(&p).unwrap();
        assert_eq!((back, fp.as_str()), (s, "abc"));
    }
}
