//! Declarative run configuration: one JSON document covering every stage.
//!
//! Loading checks the document's key tree against the defaults so that every
//! unknown key is reported at once, then collects every value error.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::align::AlignConfig;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::evalharness::{AblationConfig, EvalSpec};
use crate::gaitsim::{EnvParams, Gait};
use crate::preference::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Expert episodes per gait and commanded speed.
    pub expert_episodes: usize,
    /// Planner rollout episodes per gait and commanded speed, used as the
    /// pool for preference pairs.
    pub rollout_episodes: usize,
    pub max_steps: usize,
    pub expert_disturbance: f64,
    /// Std of the Gaussian noise the expert executes on top of its own
    /// action; the recorded action stays the clean one.
    pub expert_action_noise: f64,
    pub rollout_disturbance: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            expert_episodes: 256,
            rollout_episodes: 32,
            max_steps: 250,
            expert_disturbance: 0.02,
            expert_action_noise: 0.05,
            rollout_disturbance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreferenceConfig {
    pub pairs: usize,
    pub beta: f64,
    pub labels: Provenance,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            pairs: 1024,
            beta: crate::preference::DEFAULT_BETA,
            labels: Provenance::Weak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub v_cmd: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub disturbance: f64,
    pub max_steps: usize,
    pub trace_window: usize,
    /// How many episodes of the first seed get a `trace_<episode>.csv`.
    pub trace_episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            v_cmd: 0.5,
            episodes: 64,
            seeds: vec![0, 1, 2],
            disturbance: 0.05,
            max_steps: 250,
            trace_window: 10,
            trace_episodes: 1,
        }
    }
}

impl EvalConfig {
    pub fn spec(&self) -> EvalSpec {
        EvalSpec {
            v_cmd: self.v_cmd,
            episodes: self.episodes,
            seeds: self.seeds.clone(),
            disturbance: self.disturbance,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub gaits: Vec<Gait>,
    /// Commanded speeds covered by expert data and planner rollouts.
    pub v_cmds: Vec<f64>,
    pub data: DataConfig,
    pub diffusion: DiffusionConfig,
    pub preference: PreferenceConfig,
    pub align: AlignConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub env: EnvParams,
    /// Run directory. Not part of the fingerprint, so the same experiment
    /// in two directories yields identical artifacts.
    pub output_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gaits: Gait::ALL.to_vec(),
            v_cmds: vec![0.5],
            data: DataConfig::default(),
            diffusion: DiffusionConfig::default(),
            preference: PreferenceConfig::default(),
            align: AlignConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            env: EnvParams::default(),
            output_dir: None,
        }
    }
}

fn unknown_keys(value: &Value, template: &Value, path: &str, out: &mut Vec<String>) {
    match (value, template) {
        (Value::Object(v), Value::Object(t)) => {
            for (k, child) in v {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match t.get(k) {
                    Some(tc) => unknown_keys(child, tc, &p, out),
                    None => out.push(p),
                }
            }
        }
        (Value::Array(v), Value::Array(t)) => {
            if let Some(tc) = t.first() {
                for (i, child) in v.iter().enumerate() {
                    unknown_keys(child, tc, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

fn template() -> Value {
    let mut t = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    // optional keys that the default leaves null
    t["output_dir"] = Value::String(String::new());
    t
}

/// Parses `value` as JSON, falling back to a plain string.
fn parse_override_value(value: &str) -> Value {
    serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
}

impl RunConfig {
    /// Builds a config from an optional JSON document plus `key=value`
    /// overrides with dotted keys (`align.temperature=250`).
    pub fn from_json_with_overrides(doc: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = match doc {
            Some(text) => serde_json::from_str(text)?,
            None => Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(Error::InvalidArgument(
                "config must be a JSON object".into(),
            ));
        }
        let tmpl = template();
        let mut errs = Vec::new();
        unknown_keys(&value, &tmpl, "", &mut errs);
        let mut errs: Vec<String> = errs
            .into_iter()
            .map(|k| format!("unknown key `{k}`"))
            .collect();
        for ov in overrides {
            let Some((key, raw)) = ov.split_once('=') else {
                errs.push(format!("override `{ov}` is not of the form key=value"));
                continue;
            };
            let parts: Vec<&str> = key.split('.').collect();
            let mut t = &tmpl;
            let mut known = true;
            for p in &parts {
                match t.get(p) {
                    Some(c) => t = c,
                    None => {
                        known = false;
                        break;
                    }
                }
            }
            if !known {
                errs.push(format!("unknown key `{key}`"));
                continue;
            }
            let mut slot = &mut value;
            for p in &parts {
                if !slot.is_object() {
                    *slot = Value::Object(Default::default());
                }
                slot = slot
                    .as_object_mut()
                    .unwrap()
                    .entry(p.to_string())
                    .or_insert(Value::Null);
            }
            *slot = parse_override_value(raw);
        }
        if !errs.is_empty() {
            return Err(Error::InvalidArgument(errs.join("\n")));
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::InvalidArgument(format!("invalid config: {e}")))?;
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::InvalidArgument(errs.join("\n")));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = path.map(std::fs::read_to_string).transpose()?;
        Self::from_json_with_overrides(text.as_deref(), overrides)
    }

    /// Every offending key with a reason; empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut prefixed = |prefix: &str, es: Vec<String>| {
            errs.extend(es.into_iter().map(|e| format!("{prefix}: {e}")))
        };
        prefixed("diffusion", self.diffusion.validate());
        prefixed("align", self.align.validate());
        prefixed("env", self.env.validate());
        prefixed("ablation", self.ablation.validate());
        if self.gaits.is_empty() {
            errs.push("gaits: at least one gait is required".into());
        }
        let mut seen = self.gaits.clone();
        seen.sort_by_key(|g| g.name());
        seen.dedup();
        if seen.len() != self.gaits.len() {
            errs.push("gaits: duplicate entries".into());
        }
        if self.v_cmds.is_empty() || self.v_cmds.iter().any(|v| !(0.1..=1.5).contains(v)) {
            errs.push("v_cmds: need at least one speed, each in [0.1, 1.5]".into());
        }
        let d = &self.data;
        if d.expert_episodes == 0 {
            errs.push("data.expert_episodes: must be at least 1".into());
        }
        if d.rollout_episodes == 0 {
            errs.push("data.rollout_episodes: must be at least 1".into());
        }
        if d.max_steps <= self.diffusion.horizon {
            errs.push(format!(
                "data.max_steps: must exceed diffusion.horizon ({})",
                self.diffusion.horizon
            ));
        }
        for (k, v) in [
            ("data.expert_disturbance", d.expert_disturbance),
            ("data.expert_action_noise", d.expert_action_noise),
            ("data.rollout_disturbance", d.rollout_disturbance),
            ("eval.disturbance", self.eval.disturbance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{k}: must be a non-negative number"));
            }
        }
        if self.preference.pairs == 0 {
            errs.push("preference.pairs: must be at least 1".into());
        }
        if !(self.preference.beta > 0.0 && self.preference.beta.is_finite()) {
            errs.push("preference.beta: must be positive".into());
        }
        let e = &self.eval;
        if !(0.1..=1.5).contains(&e.v_cmd) {
            errs.push("eval.v_cmd: must lie in [0.1, 1.5]".into());
        }
        if e.episodes == 0 {
            errs.push("eval.episodes: must be at least 1".into());
        }
        if e.seeds.is_empty() {
            errs.push("eval.seeds: at least one seed is required".into());
        }
        if e.max_steps == 0 {
            errs.push("eval.max_steps: must be at least 1".into());
        }
        if e.trace_window == 0 {
            errs.push("eval.trace_window: must be at least 1".into());
        }
        if e.trace_episodes > e.episodes {
            errs.push("eval.trace_episodes: cannot exceed eval.episodes".into());
        }
        errs
    }

    /// Canonical JSON of everything that influences results.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().unwrap().remove("output_dir");
        // serde_json maps are sorted, so this is canonical
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json_with_overrides(Some("{}"), &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.validate().is_empty());
    }

    #[test]
    fn every_unknown_key_is_reported() {
        let doc = r#"{"sed": 1, "align": {"temprature": 3, "bias": 0}, "eval": {"episodes": 2, "colour": 1}}"#;
        let msg = RunConfig::from_json_with_overrides(Some(doc), &[])
            .unwrap_err()
            .to_string();
        for k in ["sed", "align.temprature", "eval.colour"] {
            assert!(msg.contains(&format!("`{k}`")), "{msg}");
        }
    }

    #[test]
    fn every_invalid_value_is_reported() {
        let over = vec![
            "align.temperature=0".to_string(),
            "eval.episodes=0".to_string(),
            "v_cmds=[3.0]".to_string(),
        ];
        let msg = RunConfig::from_json_with_overrides(None, &over)
            .unwrap_err()
            .to_string();
        for k in ["align", "eval.episodes", "v_cmds"] {
            assert!(msg.contains(k), "{msg}");
        }
    }

    #[test]
    fn overrides_apply_and_change_fingerprint() {
        let base = RunConfig::default();
        let cfg = RunConfig::from_json_with_overrides(
            None,
            &[
                "align.temperature=250".into(),
                "gaits=[\"trotting\"]".into(),
                "preference.labels=strong".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.align.temperature, 250.0);
        assert_eq!(cfg.gaits, vec![Gait::Trotting]);
        assert_eq!(cfg.preference.labels, Provenance::Strong);
        assert_ne!(cfg.fingerprint(), base.fingerprint());
        assert!(RunConfig::from_json_with_overrides(None, &["align.nope=1".into()]).is_err());
        assert!(RunConfig::from_json_with_overrides(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn output_dir_does_not_affect_fingerprint() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: Some("/tmp/x".into()),
            ..RunConfig::default()
        };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
