//! The pipeline stages. Each stage reads its inputs from the run directory,
//! checks that they were produced under the current config, and records
//! inputs, outputs and seeds in the manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use gaitdiff_core::align::{align, AlignLogEntry};
use gaitdiff_core::config::RunConfig;
use gaitdiff_core::datasets::{self, collect, collect_expert, fit_norm, NormStats, Trajectory};
use gaitdiff_core::diffusion::{Planner, TrainLogEntry};
use gaitdiff_core::evalharness::{
    ablation_suite, eval_csv_name, evaluate, write_ablation_csv, write_eval_csv, write_trace_csv,
    AblationRow, AblationSetup, EvalReport, ExpertPolicy, GaitAssets, Policy,
};
use gaitdiff_core::gaitsim::Gait;
use gaitdiff_core::preference::{
    build_preference_dataset, label_agreement, load_pairs, save_pairs, select_optimal_expert,
    ExpertIndex, PreferencePair, Provenance,
};
use gaitdiff_core::rng::{derive_seed, stream, tag, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::rundir::{FileRecord, RunDir, StageRecord};

pub const EXPERT: &str = "expert.jsonl";
pub const NORM: &str = "norm.json";
pub const PLANNER_BC: &str = "planner_bc.json";
pub const BC_LOG: &str = "bc_log.json";
pub const ROLLOUTS: &str = "rollouts.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const LABEL_SUMMARY: &str = "label_summary.json";
pub const PLANNER_ALIGNED: &str = "planner_aligned.json";
pub const ALIGN_LOG: &str = "align_log.json";
pub const ABLATION_CSV: &str = "ablation/ablation.csv";
pub const ABLATION_JSON: &str = "ablation/ablation.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

/// Which policy the `eval` stage rolls out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Expert,
    Untrained,
    Bc,
    Aligned,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Expert,
        PolicyKind::Untrained,
        PolicyKind::Bc,
        PolicyKind::Aligned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Expert => "expert",
            PolicyKind::Untrained => "untrained",
            PolicyKind::Bc => "bc",
            PolicyKind::Aligned => "aligned",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown policy `{s}` (expected expert, untrained, bc or aligned)")
            })
    }
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub fingerprint: String,
    pub dir: RunDir,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// Runs `exec` unless the manifest shows the stage already produced its
/// outputs from identical inputs under the same config.
pub(crate) fn run_stage(
    ctx: &Ctx,
    name: &str,
    inputs: &[(String, &str)],
    exec: impl FnOnce(&mut BTreeMap<String, u64>) -> CliResult<Vec<String>>,
) -> CliResult<Outcome> {
    let mut records = Vec::with_capacity(inputs.len());
    for (rel, producer) in inputs {
        if !ctx.dir.path(rel).exists() {
            return Err(CliError::Prerequisite(format!(
                "`{name}` needs {rel}, which does not exist; run `gaitdiff {producer}` first"
            )));
        }
        records.push(ctx.dir.record(rel)?);
    }
    let mut manifest = ctx.dir.manifest()?;
    if !ctx.force {
        if let Some(rec) = manifest.stages.get(name) {
            if ctx.dir.is_current(rec, &ctx.fingerprint, &records) {
                return Ok(Outcome::UpToDate);
            }
        }
    }
    ctx.dir
        .write("config.json", ctx.cfg.canonical_json().as_bytes())?;
    let mut seeds = BTreeMap::new();
    let outputs = exec(&mut seeds)?;
    let outputs = outputs
        .iter()
        .map(|o| ctx.dir.record(o))
        .collect::<CliResult<Vec<FileRecord>>>()?;
    manifest.stages.insert(
        name.to_string(),
        StageRecord {
            config_fingerprint: ctx.fingerprint.clone(),
            seeds,
            inputs: records,
            outputs,
        },
    );
    ctx.dir.write_manifest(&manifest)?;
    Ok(Outcome::Ran)
}

fn seed_for(ctx: &Ctx, seeds: &mut BTreeMap<String, u64>, label: String, path: &[u64]) -> u64 {
    let s = derive_seed(ctx.cfg.seed, path);
    seeds.insert(label, s);
    s
}

fn rng_for(
    ctx: &Ctx,
    seeds: &mut BTreeMap<String, u64>,
    label: String,
    path: &[u64],
) -> ChaCha8Rng {
    seed_for(ctx, seeds, label, path);
    stream(ctx.cfg.seed, path)
}

fn gait_path(gait: Gait, file: &str) -> String {
    RunDir::gait_file(gait, file)
}

fn per_gait(ctx: &Ctx, files: &[(&str, &'static str)]) -> Vec<(String, &'static str)> {
    ctx.cfg
        .gaits
        .iter()
        .flat_map(|&g| files.iter().map(move |(f, p)| (gait_path(g, f), *p)))
        .collect()
}

fn check_fingerprint(ctx: &Ctx, rel: &str, found: &str, producer: &str) -> CliResult<()> {
    if found != ctx.fingerprint {
        return Err(CliError::Prerequisite(format!(
            "{rel} was produced under config fingerprint {found}, but the current config has {}; rerun `gaitdiff {producer}`",
            ctx.fingerprint
        )));
    }
    Ok(())
}

fn load_trajs(ctx: &Ctx, rel: &str, producer: &str) -> CliResult<Vec<Trajectory>> {
    let (header, trajs) = datasets::load_with_header(&ctx.dir.path(rel))?;
    let fp = header.map(|h| h.fingerprint).unwrap_or_default();
    check_fingerprint(ctx, rel, &fp, producer)?;
    Ok(trajs)
}

fn load_norm(ctx: &Ctx, gait: Gait) -> CliResult<NormStats> {
    let rel = gait_path(gait, NORM);
    let (stats, fp) = NormStats::load(&ctx.dir.path(&rel))?;
    check_fingerprint(ctx, &rel, &fp, "gen-expert")?;
    Ok(stats)
}

fn load_planner(ctx: &Ctx, gait: Gait, file: &str, producer: &str) -> CliResult<Planner> {
    let rel = gait_path(gait, file);
    let (planner, fp) = Planner::load(&ctx.dir.path(&rel))?;
    check_fingerprint(ctx, &rel, &fp, producer)?;
    Ok(planner)
}

fn expert_index(ctx: &Ctx, gait: Gait) -> CliResult<ExpertIndex> {
    let experts = load_trajs(ctx, &gait_path(gait, EXPERT), "gen-expert")?;
    let stats = load_norm(ctx, gait)?;
    Ok(ExpertIndex::build(
        &experts[select_optimal_expert(&experts)?],
        &stats,
    )?)
}

/// JSON artifact body with the config fingerprint alongside the payload.
#[derive(Serialize, Deserialize)]
pub struct Stamped<T> {
    pub fingerprint: String,
    #[serde(flatten)]
    pub body: T,
}

fn write_stamped<T: Serialize>(ctx: &Ctx, rel: &str, body: T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(&Stamped {
        fingerprint: ctx.fingerprint.clone(),
        body,
    })?;
    bytes.push(b'\n');
    ctx.dir.write(rel, &bytes)
}

pub fn gen_expert(ctx: &Ctx) -> CliResult<Outcome> {
    run_stage(ctx, "gen-expert", &[], |seeds| {
        let c = &ctx.cfg;
        let mut outputs = Vec::new();
        for &gait in &c.gaits {
            let mut trajs = Vec::new();
            for (vi, &v) in c.v_cmds.iter().enumerate() {
                let seed = seed_for(
                    ctx,
                    seeds,
                    format!("{gait}/expert/v{vi}"),
                    &[tag("expert"), tag(gait.name()), vi as u64],
                );
                let d = &c.data;
                trajs.extend(collect_expert(
                    gait,
                    v,
                    d.expert_episodes,
                    d.max_steps,
                    seed,
                    d.expert_disturbance,
                    d.expert_action_noise,
                    &c.env,
                )?);
            }
            let stats = fit_norm(&trajs)?;
            let (data, norm) = (gait_path(gait, EXPERT), gait_path(gait, NORM));
            datasets::save(&trajs, &ctx.dir.ensure_parent(&data)?, &ctx.fingerprint)?;
            stats.save(&ctx.dir.path(&norm), &ctx.fingerprint)?;
            let stable = trajs.iter().filter(|t| !t.meta.fell).count();
            eprintln!(
                "gen-expert {gait}: {} episodes, {stable} without a fall",
                trajs.len()
            );
            outputs.extend([data, norm]);
        }
        Ok(outputs)
    })
}

fn init_rng(ctx: &Ctx, seeds: &mut BTreeMap<String, u64>, gait: Gait) -> ChaCha8Rng {
    rng_for(
        ctx,
        seeds,
        format!("{gait}/init"),
        &[tag("init"), tag(gait.name())],
    )
}

pub fn train_bc(ctx: &Ctx) -> CliResult<Outcome> {
    let inputs = per_gait(ctx, &[(EXPERT, "gen-expert"), (NORM, "gen-expert")]);
    run_stage(ctx, "train-bc", &inputs, |seeds| {
        let c = &ctx.cfg;
        let mut outputs = Vec::new();
        for &gait in &c.gaits {
            let trajs = load_trajs(ctx, &gait_path(gait, EXPERT), "gen-expert")?;
            let stats = load_norm(ctx, gait)?;
            let mut planner = Planner::new(
                &c.diffusion,
                stats,
                c.env.a_max,
                &mut init_rng(ctx, seeds, gait),
            )?;
            let mut r = rng_for(
                ctx,
                seeds,
                format!("{gait}/bc"),
                &[tag("bc"), tag(gait.name())],
            );
            let log = planner.train_bc(&trajs, c.diffusion.train_steps, &mut r)?;
            let (ckpt, log_file) = (gait_path(gait, PLANNER_BC), gait_path(gait, BC_LOG));
            planner.save(&ctx.dir.path(&ckpt), &ctx.fingerprint)?;
            let tail = &log[log.len().saturating_sub(100)..];
            let recent = tail.iter().map(|e| e.loss).sum::<f64>() / tail.len().max(1) as f64;
            eprintln!(
                "train-bc {gait}: {} steps, mean loss of the last {} steps {recent:.4}",
                log.len(),
                tail.len()
            );
            write_stamped(ctx, &log_file, TrainLog { entries: log })?;
            outputs.extend([ckpt, log_file]);
        }
        Ok(outputs)
    })
}

#[derive(Serialize, Deserialize)]
struct TrainLog {
    entries: Vec<TrainLogEntry>,
}

pub fn rollout(ctx: &Ctx) -> CliResult<Outcome> {
    let inputs = per_gait(ctx, &[(PLANNER_BC, "train-bc")]);
    run_stage(ctx, "rollout", &inputs, |seeds| {
        let c = &ctx.cfg;
        let mut outputs = Vec::new();
        for &gait in &c.gaits {
            let planner = load_planner(ctx, gait, PLANNER_BC, "train-bc")?;
            let mut trajs = Vec::new();
            for (vi, &v) in c.v_cmds.iter().enumerate() {
                let seed = seed_for(
                    ctx,
                    seeds,
                    format!("{gait}/rollout/v{vi}"),
                    &[tag("rollout"), tag(gait.name()), vi as u64],
                );
                let d = &c.data;
                trajs.extend(collect(
                    &planner,
                    gait,
                    v,
                    d.rollout_episodes,
                    d.max_steps,
                    seed,
                    d.rollout_disturbance,
                    &c.env,
                )?);
            }
            let rel = gait_path(gait, ROLLOUTS);
            datasets::save(&trajs, &ctx.dir.path(&rel), &ctx.fingerprint)?;
            let fell = trajs.iter().filter(|t| t.meta.fell).count();
            eprintln!("rollout {gait}: {} episodes, {fell} fell", trajs.len());
            outputs.push(rel);
        }
        Ok(outputs)
    })
}

#[derive(Serialize, Deserialize)]
pub struct LabelSummary {
    pub pairs: usize,
    pub labels: Provenance,
    pub beta: f64,
    /// Fraction of pairs the other labeling rule orders the same way.
    pub weak_strong_agreement: f64,
}

pub fn label(ctx: &Ctx) -> CliResult<Outcome> {
    let inputs = per_gait(
        ctx,
        &[
            (EXPERT, "gen-expert"),
            (NORM, "gen-expert"),
            (ROLLOUTS, "rollout"),
        ],
    );
    run_stage(ctx, "label", &inputs, |seeds| {
        let c = &ctx.cfg;
        let p = &c.preference;
        let mut outputs = Vec::new();
        for &gait in &c.gaits {
            let index = expert_index(ctx, gait)?;
            let rollouts = load_trajs(ctx, &gait_path(gait, ROLLOUTS), "rollout")?;
            let mut r = rng_for(
                ctx,
                seeds,
                format!("{gait}/label"),
                &[tag("label"), tag(gait.name())],
            );
            let pairs = build_preference_dataset(
                &rollouts,
                Some(&index),
                p.pairs,
                c.diffusion.horizon,
                p.labels,
                p.beta,
                &mut r,
            )?;
            let agreement = label_agreement(&pairs, &index, p.beta)?;
            let (file, summary) = (gait_path(gait, PAIRS), gait_path(gait, LABEL_SUMMARY));
            save_pairs(
                &pairs,
                c.diffusion.horizon,
                &ctx.dir.path(&file),
                &ctx.fingerprint,
            )?;
            write_stamped(
                ctx,
                &summary,
                LabelSummary {
                    pairs: pairs.len(),
                    labels: p.labels,
                    beta: p.beta,
                    weak_strong_agreement: agreement,
                },
            )?;
            eprintln!(
                "label {gait}: {} {} pairs, weak/strong agreement {agreement:.3}",
                pairs.len(),
                p.labels
            );
            outputs.extend([file, summary]);
        }
        Ok(outputs)
    })
}

fn load_pair_file(
    ctx: &Ctx,
    gait: Gait,
    rollouts: &[Trajectory],
) -> CliResult<Vec<PreferencePair>> {
    let rel = gait_path(gait, PAIRS);
    let (header, pairs) = load_pairs(&ctx.dir.path(&rel), rollouts)?;
    check_fingerprint(ctx, &rel, &header.fingerprint, "label")?;
    Ok(pairs)
}

#[derive(Serialize, Deserialize)]
struct AlignLog {
    entries: Vec<AlignLogEntry>,
}

pub fn align_stage(ctx: &Ctx) -> CliResult<Outcome> {
    let inputs = per_gait(
        ctx,
        &[
            (PLANNER_BC, "train-bc"),
            (ROLLOUTS, "rollout"),
            (PAIRS, "label"),
        ],
    );
    run_stage(ctx, "align", &inputs, |seeds| {
        let c = &ctx.cfg;
        let mut outputs = Vec::new();
        for &gait in &c.gaits {
            let planner = load_planner(ctx, gait, PLANNER_BC, "train-bc")?;
            let rollouts = load_trajs(ctx, &gait_path(gait, ROLLOUTS), "rollout")?;
            let pairs = load_pair_file(ctx, gait, &rollouts)?;
            let mut r = rng_for(
                ctx,
                seeds,
                format!("{gait}/align"),
                &[tag("align"), tag(gait.name())],
            );
            let (aligned, log) =
                align(&planner, &pairs, &c.align, &mut r).map_err(|e| match CliError::from(e) {
                    CliError::Divergence(msg) => CliError::Divergence(format!("{gait}: {msg}")),
                    other => other,
                })?;
            let (ckpt, log_file) = (gait_path(gait, PLANNER_ALIGNED), gait_path(gait, ALIGN_LOG));
            aligned.save(&ctx.dir.path(&ckpt), &ctx.fingerprint)?;
            if let Some(last) = log.last() {
                eprintln!(
                    "align {gait}: {} steps, last preference loss {:.4}, mean logit {:.3}",
                    log.len(),
                    last.pref_loss,
                    last.mean_logit
                );
            }
            write_stamped(ctx, &log_file, AlignLog { entries: log })?;
            outputs.extend([ckpt, log_file]);
        }
        Ok(outputs)
    })
}

pub fn eval_report_file(policy: PolicyKind, gait: Gait, v_cmd: f64) -> String {
    format!("eval/{policy}/report_{gait}_{v_cmd:.2}.json")
}

fn policy_inputs(ctx: &Ctx, policy: PolicyKind) -> Vec<(String, &'static str)> {
    match policy {
        PolicyKind::Expert => Vec::new(),
        PolicyKind::Untrained => per_gait(ctx, &[(NORM, "gen-expert")]),
        PolicyKind::Bc => per_gait(ctx, &[(PLANNER_BC, "train-bc")]),
        PolicyKind::Aligned => per_gait(ctx, &[(PLANNER_ALIGNED, "align")]),
    }
}

pub fn eval(ctx: &Ctx, policy: PolicyKind) -> CliResult<Outcome> {
    let inputs = policy_inputs(ctx, policy);
    run_stage(ctx, &format!("eval-{policy}"), &inputs, |seeds| {
        let c = &ctx.cfg;
        let spec = c.eval.spec();
        let mut outputs = Vec::new();
        for &gait in &c.gaits {
            let agent: Box<dyn Policy> = match policy {
                PolicyKind::Expert => Box::new(ExpertPolicy::new(gait, c.env.clone())),
                PolicyKind::Untrained => {
                    let stats = load_norm(ctx, gait)?;
                    Box::new(Planner::new(
                        &c.diffusion,
                        stats,
                        c.env.a_max,
                        &mut init_rng(ctx, seeds, gait),
                    )?)
                }
                PolicyKind::Bc => Box::new(load_planner(ctx, gait, PLANNER_BC, "train-bc")?),
                PolicyKind::Aligned => Box::new(load_planner(ctx, gait, PLANNER_ALIGNED, "align")?),
            };
            let (report, per_seed) =
                evaluate(agent.as_ref(), gait, &spec, &c.env, &ctx.fingerprint)?;
            for (i, &s) in spec.seeds.iter().enumerate() {
                seeds.insert(format!("{gait}/eval/{i}"), s);
            }
            let csv = format!("eval/{policy}/{}", eval_csv_name(gait, spec.v_cmd));
            write_eval_csv(&report, &ctx.dir.ensure_parent(&csv)?)?;
            // the report already carries the fingerprint
            let json = eval_report_file(policy, gait, spec.v_cmd);
            let mut bytes = serde_json::to_vec_pretty(&report)?;
            bytes.push(b'\n');
            ctx.dir.write(&json, &bytes)?;
            outputs.extend([csv, json]);
            let traced = per_seed
                .first()
                .map(|t| &t[..c.eval.trace_episodes.min(t.len())])
                .unwrap_or(&[]);
            for (ep, traj) in traced.iter().enumerate() {
                let rel = format!(
                    "eval/{policy}/traces_{gait}_{:.2}/trace_{ep}.csv",
                    spec.v_cmd
                );
                write_trace_csv(
                    traj,
                    c.eval.trace_window,
                    &ctx.dir.ensure_parent(&rel)?,
                    &ctx.fingerprint,
                )?;
                outputs.push(rel);
            }
            eprintln!(
                "eval {policy} {gait}: stability {:.1}% (per seed {:?}), mean velocity {:.3}",
                report.mean_stability_pct, report.stability_pct, report.mean_mean_velocity
            );
        }
        Ok(outputs)
    })
}

#[derive(Serialize, Deserialize)]
pub struct AblationArtifact {
    pub rows: Vec<AblationRow>,
}

pub fn ablate(ctx: &Ctx) -> CliResult<Outcome> {
    let inputs = per_gait(
        ctx,
        &[
            (EXPERT, "gen-expert"),
            (NORM, "gen-expert"),
            (PLANNER_BC, "train-bc"),
            (ROLLOUTS, "rollout"),
        ],
    );
    run_stage(ctx, "ablate", &inputs, |seeds| {
        let c = &ctx.cfg;
        let mut planners = Vec::new();
        let mut rollouts = Vec::new();
        let mut indexes = Vec::new();
        for &gait in &c.gaits {
            planners.push(load_planner(ctx, gait, PLANNER_BC, "train-bc")?);
            rollouts.push(load_trajs(ctx, &gait_path(gait, ROLLOUTS), "rollout")?);
            indexes.push(expert_index(ctx, gait)?);
        }
        let assets: Vec<GaitAssets> = c
            .gaits
            .iter()
            .enumerate()
            .map(|(i, &gait)| GaitAssets {
                gait,
                planner: &planners[i],
                rollouts: &rollouts[i],
                index: &indexes[i],
            })
            .collect();
        let spec = c.eval.spec();
        seeds.insert("ablation".into(), c.seed);
        let setup = AblationSetup {
            config: &c.ablation,
            align: &c.align,
            base_pairs: c.preference.pairs,
            beta: c.preference.beta,
            eval: &spec,
            params: &c.env,
            seed: c.seed,
            fingerprint: &ctx.fingerprint,
        };
        let rows = ablation_suite(&assets, &setup)?;
        for r in &rows {
            eprintln!(
                "ablate {} pairs x{} {} mu={}: stability {:.1}%",
                r.report.gait,
                r.cell.pair_scale,
                r.cell.labels,
                r.cell.reg_weight,
                r.report.mean_stability_pct
            );
        }
        write_ablation_csv(&rows, &ctx.dir.ensure_parent(ABLATION_CSV)?)?;
        write_stamped(ctx, ABLATION_JSON, AblationArtifact { rows })?;
        Ok(vec![ABLATION_CSV.to_string(), ABLATION_JSON.to_string()])
    })
}

pub fn read_eval_report(ctx: &Ctx, rel: &str) -> CliResult<EvalReport> {
    Ok(serde_json::from_slice(&std::fs::read(ctx.dir.path(rel))?)?)
}

pub fn read_ablation(ctx: &Ctx) -> CliResult<Stamped<AblationArtifact>> {
    Ok(serde_json::from_slice(&std::fs::read(
        ctx.dir.path(ABLATION_JSON),
    )?)?)
}
