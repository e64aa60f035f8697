//! Planar phase-leg quadruped.
//!
//! Four legs are phase oscillators driven by per-step phase increments (the
//! action). Legs with `sin(phase) < 0` are in stance and push the body
//! forward; left/right phase asymmetry and loss of inter-leg coordination
//! tilt the body, and the episode ends when the tilt exceeds `tilt_fall`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{check_finite, Error, Result};

pub const NUM_LEGS: usize = 4;
pub const STATE_DIM: usize = 12;
pub const ACTION_DIM: usize = NUM_LEGS;
/// Index of the first leg phase in [`EnvState::to_vec`].
pub const PHASE_OFFSET: usize = 3;

/// Legs are ordered front-left, front-right, rear-left, rear-right.
pub const FL: usize = 0;
pub const FR: usize = 1;
pub const RL: usize = 2;
pub const RR: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gait {
    Pacing,
    Trotting,
    Bounding,
}

impl Gait {
    pub const ALL: [Gait; 3] = [Gait::Pacing, Gait::Trotting, Gait::Bounding];

    pub fn name(self) -> &'static str {
        match self {
            Gait::Pacing => "pacing",
            Gait::Trotting => "trotting",
            Gait::Bounding => "bounding",
        }
    }

    pub fn template(self) -> GaitTemplate {
        GaitTemplate::new(self)
    }
}

impl fmt::Display for Gait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gait {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pacing" => Ok(Gait::Pacing),
            "trotting" => Ok(Gait::Trotting),
            "bounding" => Ok(Gait::Bounding),
            other => Err(Error::InvalidArgument(format!("unknown gait '{other}'"))),
        }
    }
}

/// Target phase of each leg relative to the front-left leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitTemplate {
    pub gait: Gait,
    pub offsets: [f64; NUM_LEGS],
}

impl GaitTemplate {
    pub fn new(gait: Gait) -> Self {
        let offsets = match gait {
            // same-side legs move together
            Gait::Pacing => [0.0, PI, 0.0, PI],
            // diagonal pairs
            Gait::Trotting => [0.0, PI, PI, 0.0],
            // front pair vs rear pair
            Gait::Bounding => [0.0, 0.0, PI, PI],
        };
        Self { gait, offsets }
    }
}

/// Simulator and expert-controller constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub a_max: f64,
    pub k_d: f64,
    pub c_prop: f64,
    pub k_r: f64,
    pub k_t: f64,
    pub coord_penalty: f64,
    pub tilt_fall: f64,
    pub clock_period: f64,
    pub reset_perturbation: f64,
    pub omega_base: f64,
    pub k_v: f64,
    pub k_sync: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            a_max: 0.5,
            k_d: 0.05,
            c_prop: 0.10,
            k_r: 0.02,
            k_t: 0.008,
            coord_penalty: 0.01,
            tilt_fall: 0.5,
            clock_period: 50.0,
            reset_perturbation: 0.1,
            omega_base: 0.15,
            k_v: 1.0,
            k_sync: 0.3,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let positive = [
            ("a_max", self.a_max),
            ("tilt_fall", self.tilt_fall),
            ("clock_period", self.clock_period),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("env.{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("k_d", self.k_d), ("k_r", self.k_r)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                errs.push(format!("env.{name} must lie in [0, 1), got {v}"));
            }
        }
        let finite = [
            ("c_prop", self.c_prop),
            ("k_t", self.k_t),
            ("coord_penalty", self.coord_penalty),
            ("reset_perturbation", self.reset_perturbation),
            ("omega_base", self.omega_base),
            ("k_v", self.k_v),
            ("k_sync", self.k_sync),
        ];
        for (name, v) in finite {
            if !v.is_finite() || v < 0.0 {
                errs.push(format!(
                    "env.{name} must be finite and non-negative, got {v}"
                ));
            }
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub v_cmd: f64,
    pub v: f64,
    pub tilt: f64,
    pub phases: [f64; NUM_LEGS],
    pub phase_rates: [f64; NUM_LEGS],
    pub clock: f64,
}

impl EnvState {
    /// Observation layout: `[v_cmd, v, tilt, phases.., phase_rates.., clock]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(STATE_DIM);
        out.extend([self.v_cmd, self.v, self.tilt]);
        out.extend(self.phases);
        out.extend(self.phase_rates);
        out.push(self.clock);
        out
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        crate::error::check_dim("state vector", STATE_DIM, s.len())?;
        Ok(Self {
            v_cmd: s[0],
            v: s[1],
            tilt: s[2],
            phases: [s[3], s[4], s[5], s[6]],
            phase_rates: [s[7], s[8], s[9], s[10]],
            clock: s[11],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    /// Largest wrapped deviation of any leg from its template phase relative
    /// to the front-left leg.
    pub fn max_coordination_error(&self, template: &GaitTemplate) -> f64 {
        (0..NUM_LEGS)
            .map(|i| wrap_pm_pi(self.phases[i] - self.phases[FL] - template.offsets[i]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    /// Set when the body tilt exceeds the fall threshold. Step budgets are
    /// enforced by the caller.
    pub done: bool,
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_2pi(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_pm_pi(x: f64) -> f64 {
    wrap_2pi(x + PI) - PI
}

pub fn reset(
    template: &GaitTemplate,
    v_cmd: f64,
    seed: u64,
    params: &EnvParams,
) -> Result<EnvState> {
    if !(0.1..=1.5).contains(&v_cmd) {
        return Err(Error::InvalidArgument(format!(
            "v_cmd must lie in [0.1, 1.5], got {v_cmd}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = params.reset_perturbation;
    let mut phases = [0.0; NUM_LEGS];
    for (ph, off) in phases.iter_mut().zip(template.offsets) {
        let jitter = if p > 0.0 {
            rng.random_range(-p..=p)
        } else {
            0.0
        };
        *ph = wrap_2pi(off + jitter);
    }
    Ok(EnvState {
        v_cmd,
        v: 0.0,
        tilt: 0.0,
        phases,
        phase_rates: [0.0; NUM_LEGS],
        clock: 0.0,
    })
}

pub fn clamp_action(a: f64, params: &EnvParams) -> f64 {
    a.clamp(0.0, params.a_max)
}

pub fn step(
    state: &EnvState,
    action: &[f64; NUM_LEGS],
    template: &GaitTemplate,
    disturbance: f64,
    params: &EnvParams,
) -> Result<StepResult> {
    if !state.is_finite() {
        return Err(Error::NonFinite(format!("state {:?}", state.to_vec())));
    }
    check_finite("action", action)?;
    if !disturbance.is_finite() {
        return Err(Error::NonFinite(format!("disturbance {disturbance}")));
    }
    let a = action.map(|x| clamp_action(x, params));

    let mut phases = [0.0; NUM_LEGS];
    let mut propulsion = 0.0;
    for i in 0..NUM_LEGS {
        phases[i] = wrap_2pi(state.phases[i] + a[i]);
        if phases[i].sin() < 0.0 {
            propulsion += a[i];
        }
    }
    let v = (1.0 - params.k_d) * state.v + params.c_prop * propulsion + disturbance;

    let s = phases.map(f64::sin);
    let asym = (s[FL] + s[RL]) - (s[FR] + s[RR]);
    let maxdev = (0..NUM_LEGS)
        .map(|i| wrap_pm_pi(phases[i] - phases[FL] - template.offsets[i]).abs())
        .fold(0.0, f64::max);
    let tilt = (1.0 - params.k_r) * state.tilt + params.k_t * asym + params.coord_penalty * maxdev;

    let clock = (state.clock + 1.0 / params.clock_period).fract();
    let reward = (-(v - state.v_cmd).abs()).exp() - 0.1 * tilt.abs();
    let next_state = EnvState {
        v_cmd: state.v_cmd,
        v,
        tilt,
        phases,
        phase_rates: a,
        clock,
    };
    Ok(StepResult {
        next_state,
        reward,
        done: tilt.abs() > params.tilt_fall,
    })
}

/// Closed-form oscillator controller: feed-forward phase rate, velocity
/// feedback, and a pull of every leg towards its template offset.
pub fn expert_action(
    state: &EnvState,
    template: &GaitTemplate,
    params: &EnvParams,
) -> Result<[f64; NUM_LEGS]> {
    if !state.is_finite() {
        return Err(Error::NonFinite(format!("state {:?}", state.to_vec())));
    }
    let common = params.omega_base + params.k_v * (state.v_cmd - state.v);
    let mut a = [0.0; NUM_LEGS];
    for (i, ai) in a.iter_mut().enumerate() {
        let sync = wrap_pm_pi(state.phases[FL] + template.offsets[i] - state.phases[i]);
        *ai = clamp_action(common + params.k_sync * sync, params);
    }
    Ok(a)
}

pub fn evaluate_reward(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EnvParams {
        EnvParams::default()
    }

    #[test]
    fn reset_is_deterministic_and_bounded() {
        let p = params();
        for gait in Gait::ALL {
            let t = gait.template();
            assert_eq!(
                reset(&t, 0.5, 42, &p).unwrap(),
                reset(&t, 0.5, 42, &p).unwrap()
            );
            for seed in 0..1000 {
                let s = reset(&t, 0.5, seed, &p).unwrap();
                for i in 0..NUM_LEGS {
                    assert!(wrap_pm_pi(s.phases[i] - t.offsets[i]).abs() <= 0.1 + 1e-12);
                    assert!((0.0..TAU).contains(&s.phases[i]));
                }
                assert_eq!((s.v, s.tilt, s.clock), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn reset_rejects_out_of_range_command() {
        let t = Gait::Trotting.template();
        assert!(reset(&t, 0.05, 0, &params()).is_err());
        assert!(reset(&t, 1.6, 0, &params()).is_err());
        assert!(reset(&t, 1.5, 0, &params()).is_ok());
    }

    #[test]
    fn trotting_diagonals_start_in_phase() {
        let t = Gait::Trotting.template();
        let s = reset(&t, 1.0, 9, &params()).unwrap();
        assert!(wrap_pm_pi(s.phases[FL] - s.phases[RR]).abs() <= 0.2 + 1e-12);
        assert!(wrap_pm_pi(s.phases[FR] - s.phases[RL]).abs() <= 0.2 + 1e-12);
    }

    #[test]
    fn zero_action_keeps_velocity_at_zero() {
        let p = params();
        let t = Gait::Bounding.template();
        let s = reset(&t, 0.7, 3, &p).unwrap();
        let r = step(&s, &[0.0; 4], &t, 0.0, &p).unwrap();
        assert_eq!(r.next_state.v, 0.0);
        let expect = (-0.7f64).exp() - 0.1 * r.next_state.tilt.abs();
        assert!((r.reward - expect).abs() < 1e-15);
    }

    #[test]
    fn phase_locked_tilt_decays_geometrically() {
        let p = params();
        let t = Gait::Trotting.template();
        let mut s = EnvState {
            v_cmd: 0.5,
            v: 0.5,
            tilt: 0.3,
            phases: t.offsets,
            phase_rates: [0.0; 4],
            clock: 0.0,
        };
        // zero action keeps phases on template; trotting asymmetry is zero
        for _ in 0..20 {
            let r = step(&s, &[0.0; 4], &t, 0.0, &p).unwrap();
            let expect = (1.0 - p.k_r) * s.tilt;
            assert!((r.next_state.tilt - expect).abs() < 1e-15);
            s = r.next_state;
        }
    }

    #[test]
    fn actions_are_clamped() {
        let p = params();
        let t = Gait::Pacing.template();
        let s = reset(&t, 0.5, 0, &p).unwrap();
        let r = step(&s, &[-1.0, 2.0, 0.1, 0.3], &t, 0.0, &p).unwrap();
        assert_eq!(r.next_state.phase_rates, [0.0, 0.5, 0.1, 0.3]);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = params();
        let t = Gait::Pacing.template();
        let s = reset(&t, 0.5, 0, &p).unwrap();
        assert!(step(&s, &[f64::NAN, 0.0, 0.0, 0.0], &t, 0.0, &p).is_err());
        assert!(step(&s, &[0.1; 4], &t, f64::INFINITY, &p).is_err());
        let mut bad = s;
        bad.v = f64::NAN;
        assert!(expert_action(&bad, &t, &p).is_err());
    }

    #[test]
    fn expert_on_template_at_command_speed_uses_base_rate() {
        let p = params();
        for gait in Gait::ALL {
            let t = gait.template();
            let s = EnvState {
                v_cmd: 0.5,
                v: 0.5,
                tilt: 0.0,
                phases: t.offsets.map(|o| wrap_2pi(o + 1.0)),
                phase_rates: [0.0; 4],
                clock: 0.0,
            };
            let a = expert_action(&s, &t, &p).unwrap();
            for ai in a {
                assert!((ai - p.omega_base).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expert_clamps_at_zero_when_far_too_fast() {
        let p = params();
        let t = Gait::Trotting.template();
        let mut s = reset(&t, 0.5, 1, &p).unwrap();
        s.v = 5.0;
        assert_eq!(expert_action(&s, &t, &p).unwrap(), [0.0; 4]);
    }

    #[test]
    fn reward_sum_is_additive() {
        let a = [0.7, 0.2, -0.1];
        let b = [0.4, 0.9];
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        assert!(
            (evaluate_reward(&joined) - (evaluate_reward(&a) + evaluate_reward(&b))).abs() < 1e-15
        );
        assert_eq!(evaluate_reward(&[0.7]), 0.7);
    }

    #[test]
    fn wrap_helpers() {
        assert_eq!(wrap_2pi(-1e-18), 0.0);
        assert!((wrap_2pi(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!((wrap_pm_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
