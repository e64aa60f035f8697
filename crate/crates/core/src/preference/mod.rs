//! Reward-free preference labels from nearest-neighbor distance to an optimal
//! expert trajectory, reward-based labels, and pair dataset construction.

mod kdtree;

pub use kdtree::{dist2, KdTree};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::datasets::{segment_starts, NormStats, Segment, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::gaitsim::ACTION_DIM;

pub const PAIRS_SCHEMA: &str = "gaitdiff-pairs";
pub const PAIRS_VERSION: u32 = 1;
pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Weak,
    Strong,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Weak => "weak",
            Provenance::Strong => "strong",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Provenance::Weak),
            "strong" => Ok(Provenance::Strong),
            _ => Err(Error::InvalidArgument(format!(
                "unknown label mode `{s}` (expected weak or strong)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub winner: Segment,
    pub loser: Segment,
    /// Absolute score difference; zero for a tie.
    pub margin: f64,
    pub provenance: Provenance,
}

/// Highest cumulative reward, lowest index on ties.
pub fn select_optimal_expert(trajs: &[Trajectory]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trajs.iter().enumerate() {
        let r = t.cumulative_reward();
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
        .ok_or(Error::Empty("no expert trajectories to select from"))
}

/// Exact nearest-neighbor index over the normalized `(s, a)` pairs of one
/// trajectory.
#[derive(Debug, Clone)]
pub struct ExpertIndex {
    tree: KdTree,
    stats: NormStats,
}

impl ExpertIndex {
    pub fn build(optimal: &Trajectory, stats: &NormStats) -> Result<Self> {
        if optimal.is_empty() {
            return Err(Error::Empty("cannot index an empty trajectory"));
        }
        let points = optimal
            .states
            .iter()
            .zip(&optimal.actions)
            .map(|(s, a)| feature(stats, s, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tree: KdTree::build(points),
            stats: stats.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        self.tree.points()
    }

    /// Euclidean distance from raw `(s, a)` to the nearest indexed pair.
    pub fn distance(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let q = feature(&self.stats, s, a)?;
        Ok(self.distance_normalized(&q))
    }

    /// Same as [`ExpertIndex::distance`] for an already normalized feature.
    pub fn distance_normalized(&self, q: &[f64]) -> f64 {
        self.tree.nearest(q).expect("index is never empty").1.sqrt()
    }

    pub fn value(&self, s: &[f64], a: &[f64], beta: f64) -> Result<f64> {
        Ok(value_from_distance(self.distance(s, a)?, beta, ACTION_DIM))
    }

    /// Sum of per-step values over a segment.
    pub fn segment_value(&self, seg: &Segment, beta: f64) -> Result<f64> {
        let mut total = 0.0;
        for (s, a) in seg.states.iter().zip(&seg.actions) {
            total += self.value(s, a, beta)?;
        }
        Ok(total)
    }
}

fn feature(stats: &NormStats, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let mut f = stats.normalize_state(s)?;
    f.extend(stats.normalize_action(a)?);
    Ok(f)
}

/// `exp(-β d / |A|)`.
pub fn value_from_distance(d: f64, beta: f64, action_dim: usize) -> f64 {
    (-beta * d / action_dim as f64).exp()
}

/// Bradley-Terry win probability `sigmoid(plus - minus)`, evaluated so that
/// `p(a, b) + p(b, a) == 1` exactly.
pub fn bt_probability(score_plus: f64, score_minus: f64) -> f64 {
    let d = score_plus - score_minus;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        1.0 - 1.0 / (1.0 + d.exp())
    }
}

fn order_pair<R: Rng + ?Sized>(
    s1: Segment,
    s2: Segment,
    score1: f64,
    score2: f64,
    provenance: Provenance,
    rng: &mut R,
) -> Result<PreferencePair> {
    if !score1.is_finite() || !score2.is_finite() {
        return Err(Error::NonFinite("preference score".into()));
    }
    let first_wins = if score1 == score2 {
        rng.random::<bool>()
    } else {
        score1 > score2
    };
    let (winner, loser) = if first_wins { (s1, s2) } else { (s2, s1) };
    Ok(PreferencePair {
        winner,
        loser,
        margin: (score1 - score2).abs(),
        provenance,
    })
}

/// Orders by cumulative expert-proximity value; the more expert-like segment
/// wins. Exact ties are broken by a coin flip from `rng`.
pub fn label_pair_weak<R: Rng + ?Sized>(
    s1: Segment,
    s2: Segment,
    index: &ExpertIndex,
    beta: f64,
    rng: &mut R,
) -> Result<PreferencePair> {
    check_dim("segment pair", s1.len(), s2.len())?;
    let v1 = index.segment_value(&s1, beta)?;
    let v2 = index.segment_value(&s2, beta)?;
    order_pair(s1, s2, v1, v2, Provenance::Weak, rng)
}

/// Orders by cumulative environment reward.
pub fn label_pair_strong<R: Rng + ?Sized>(
    s1: Segment,
    s2: Segment,
    rng: &mut R,
) -> Result<PreferencePair> {
    check_dim("segment pair", s1.len(), s2.len())?;
    check_dim("segment rewards", s1.len(), s1.rewards.len())?;
    check_dim("segment rewards", s2.len(), s2.rewards.len())?;
    let r1: f64 = s1.rewards.iter().sum();
    let r2: f64 = s2.rewards.iter().sum();
    order_pair(s1, s2, r1, r2, Provenance::Strong, rng)
}

/// Labels `count` pairs of length-`h + 1` segments. Segment slots
/// `(trajectory, start)` are drawn from a shuffled pool without replacement;
/// when fewer than two remain the pool is reshuffled.
pub fn build_preference_dataset<R: Rng + ?Sized>(
    trajs: &[Trajectory],
    index: Option<&ExpertIndex>,
    count: usize,
    h: usize,
    mode: Provenance,
    beta: f64,
    rng: &mut R,
) -> Result<Vec<PreferencePair>> {
    let slots: Vec<(usize, usize)> = trajs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..segment_starts(t, h)).map(move |s| (i, s)))
        .collect();
    if slots.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "only {} segment slot(s) of length {}; need at least two",
            slots.len(),
            h + 1
        )));
    }
    if mode == Provenance::Weak && index.is_none() {
        return Err(Error::InvalidArgument(
            "weak labels need an expert index".into(),
        ));
    }
    let mut pool: Vec<(usize, usize)> = Vec::new();
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        if pool.len() < 2 {
            pool = slots.clone();
            pool.shuffle(rng);
        }
        let (t1, st1) = pool.pop().unwrap();
        let (t2, st2) = pool.pop().unwrap();
        let s1 = Segment::slice(trajs, t1, st1, h)?;
        let s2 = Segment::slice(trajs, t2, st2, h)?;
        let pair = match mode {
            Provenance::Weak => label_pair_weak(s1, s2, index.unwrap(), beta, rng)?,
            Provenance::Strong => label_pair_strong(s1, s2, rng)?,
        };
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Fraction of pairs whose label is unchanged under the other labeling rule.
/// Ties under the other rule count as disagreement.
pub fn label_agreement(pairs: &[PreferencePair], index: &ExpertIndex, beta: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to compare"));
    }
    let mut agree = 0usize;
    for p in pairs {
        let same = match p.provenance {
            Provenance::Weak => {
                p.winner.rewards.iter().sum::<f64>() > p.loser.rewards.iter().sum::<f64>()
            }
            Provenance::Strong => {
                index.segment_value(&p.winner, beta)? > index.segment_value(&p.loser, beta)?
            }
        };
        agree += same as usize;
    }
    Ok(agree as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    pub traj: usize,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    winner: Origin,
    loser: Origin,
    margin: f64,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsHeader {
    pub schema: String,
    pub version: u32,
    pub count: usize,
    pub horizon: usize,
    pub fingerprint: String,
}

/// Writes pairs as JSON lines of origins into the rollout dataset they were
/// cut from, after a header line.
pub fn save_pairs(
    pairs: &[PreferencePair],
    h: usize,
    path: &Path,
    fingerprint: &str,
) -> Result<()> {
    let mut out = Vec::new();
    let header = PairsHeader {
        schema: PAIRS_SCHEMA.into(),
        version: PAIRS_VERSION,
        count: pairs.len(),
        horizon: h,
        fingerprint: fingerprint.into(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for p in pairs {
        let rec = PairRecord {
            winner: Origin {
                traj: p.winner.traj,
                start: p.winner.start,
            },
            loser: Origin {
                traj: p.loser.traj,
                start: p.loser.start,
            },
            margin: p.margin,
            provenance: p.provenance,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads a pairs file and re-cuts its segments from `trajs`.
pub fn load_pairs(path: &Path, trajs: &[Trajectory]) -> Result<(PairsHeader, Vec<PreferencePair>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: PairsHeader =
        serde_json::from_str(lines.next().ok_or(Error::Empty("pairs file is empty"))?)?;
    if header.schema != PAIRS_SCHEMA || header.version != PAIRS_VERSION {
        return Err(Error::Format(format!(
            "unsupported pairs file {} v{}",
            header.schema, header.version
        )));
    }
    let mut pairs = Vec::with_capacity(header.count);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let rec: PairRecord = serde_json::from_str(line)?;
        pairs.push(PreferencePair {
            winner: Segment::slice(trajs, rec.winner.traj, rec.winner.start, header.horizon)?,
            loser: Segment::slice(trajs, rec.loser.traj, rec.loser.start, header.horizon)?,
            margin: rec.margin,
            provenance: rec.provenance,
        });
    }
    if pairs.len() != header.count {
        return Err(Error::Format(format!(
            "pairs header promises {} pairs, found {}",
            header.count,
            pairs.len()
        )));
    }
    Ok((header, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Source, TrajectoryMeta};
    use crate::gaitsim::{Gait, STATE_DIM};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(n: usize, offset: f64, reward: f64) -> Trajectory {
        let states = (0..n)
            .map(|t| std::array::from_fn(|i| offset + (t * STATE_DIM + i) as f64 * 0.01))
            .collect();
        let actions = (0..n)
            .map(|t| std::array::from_fn(|i| offset + (t + i) as f64 * 0.02))
            .collect();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
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
            states,
            actions,
            rewards: vec![reward; n],
            dones,
            final_state: [0.0; STATE_DIM],
        }
    }

    #[test]
    fn optimal_selection() {
        let ts = vec![
            traj(3, 0.0, 1.0 / 3.0),
            traj(3, 0.0, 1.0),
            traj(3, 0.0, 2.0 / 3.0),
        ];
        assert_eq!(select_optimal_expert(&ts).unwrap(), 1);
        assert_eq!(select_optimal_expert(&ts[..1]).unwrap(), 0);
        assert!(select_optimal_expert(&[]).is_err());
        let tied = vec![traj(2, 0.0, 1.0), traj(2, 1.0, 1.0)];
        assert_eq!(select_optimal_expert(&tied).unwrap(), 0);
    }

    #[test]
    fn value_formula() {
        assert_eq!(value_from_distance(0.0, 0.5, 4), 1.0);
        assert!((value_from_distance(4.0, 0.5, 4) - (-0.5f64).exp()).abs() < 1e-12);
        assert!(value_from_distance(1.0, 0.5, 4) > value_from_distance(1.1, 0.5, 4));
    }

    #[test]
    fn bt_probability_is_complementary() {
        assert_eq!(bt_probability(1.0, 1.0), 0.5);
        assert!((bt_probability(2.0, 1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        for (a, b) in [(0.3, -7.1), (1e3, 2.0), (-40.0, 40.0), (0.1, 0.2)] {
            assert_eq!(bt_probability(a, b) + bt_probability(b, a), 1.0);
        }
        let mut last = 0.0;
        for d in 0..50 {
            let p = bt_probability(d as f64, 0.0);
            assert!(p >= last && p <= 1.0);
            last = p;
        }
    }

    #[test]
    fn expert_slice_beats_far_segment() {
        let expert = traj(10, 0.0, 1.0);
        let far = traj(10, 50.0, 1.0);
        let ts = vec![expert.clone(), far];
        let stats = NormStats::identity();
        let index = ExpertIndex::build(&expert, &stats).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s1 = Segment::slice(&ts, 0, 2, 3).unwrap();
        let s2 = Segment::slice(&ts, 1, 2, 3).unwrap();
        assert_eq!(index.segment_value(&s1, 0.5).unwrap(), 4.0);
        for (a, b) in [(s1.clone(), s2.clone()), (s2.clone(), s1.clone())] {
            let p = label_pair_weak(a, b, &index, 0.5, &mut rng).unwrap();
            assert_eq!(p.winner, s1);
            assert!(p.margin > 0.0);
        }
    }

    #[test]
    fn ties_are_broken_both_ways() {
        let ts = vec![traj(5, 0.0, 1.0), traj(5, 0.0, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut first = 0;
        for _ in 0..200 {
            let a = Segment::slice(&ts, 0, 0, 2).unwrap();
            let b = Segment::slice(&ts, 1, 0, 2).unwrap();
            let p = label_pair_strong(a, b, &mut rng).unwrap();
            assert_eq!(p.margin, 0.0);
            first += (p.winner.traj == 0) as usize;
        }
        assert!((60..140).contains(&first), "{first}");
    }

    #[test]
    fn strong_label_margin() {
        let ts = vec![traj(3, 0.0, 1.0), traj(3, 0.0, 0.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Segment::slice(&ts, 1, 0, 2).unwrap();
        let b = Segment::slice(&ts, 0, 0, 2).unwrap();
        let p = label_pair_strong(a, b, &mut rng).unwrap();
        assert_eq!((p.winner.traj, p.margin), (0, 3.0));
    }

    #[test]
    fn dataset_from_two_slot_pool() {
        let ts = vec![traj(4, 0.0, 1.0), traj(4, 1.0, 0.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs =
            build_preference_dataset(&ts, None, 1, 3, Provenance::Strong, 0.5, &mut rng).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].winner.traj, pairs[0].loser.traj), (0, 1));
        assert!(
            build_preference_dataset(&ts[..1], None, 1, 3, Provenance::Strong, 0.5, &mut rng)
                .is_err()
        );
        assert!(
            build_preference_dataset(&ts, None, 1, 3, Provenance::Weak, 0.5, &mut rng).is_err()
        );
    }

    #[test]
    fn slots_not_reused_within_a_pass() {
        let ts: Vec<_> = (0..3).map(|i| traj(12, i as f64, i as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // 3 trajectories x 10 starts = 30 slots = 15 pairs per pass
        let pairs =
            build_preference_dataset(&ts, None, 15, 2, Provenance::Strong, 0.5, &mut rng).unwrap();
        let mut seen: Vec<_> = pairs
            .iter()
            .flat_map(|p| {
                [
                    (p.winner.traj, p.winner.start),
                    (p.loser.traj, p.loser.start),
                ]
            })
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 30);
    }

    #[test]
    fn pairs_file_roundtrip() {
        let ts: Vec<_> = (0..3).map(|i| traj(8, i as f64, i as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs =
            build_preference_dataset(&ts, None, 7, 3, Provenance::Strong, 0.5, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_pairs(&pairs, 3, &path, "fp").unwrap();
        let (header, back) = load_pairs(&path, &ts).unwrap();
        assert_eq!(header.fingerprint, "fp");
        assert_eq!(back, pairs);
    }
}
