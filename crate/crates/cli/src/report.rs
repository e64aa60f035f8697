//! Aggregation of evaluation and ablation artifacts into one summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use gaitdiff_core::evalharness::{cell_mean_stability, AblationCell, AblationRow};
use gaitdiff_core::gaitsim::Gait;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::stages::{
    eval_report_file, read_ablation, read_eval_report, run_stage, Ctx, Outcome, PolicyKind,
    ABLATION_JSON, REPORT_JSON, REPORT_MD,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub policy: PolicyKind,
    pub gait: Gait,
    pub v_cmd: f64,
    pub disturbance: f64,
    pub stability_pct: Vec<f64>,
    pub mean_stability_pct: f64,
    pub mean_velocity: f64,
}

/// Aligned minus offline stability for one gait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDelta {
    pub gait: Gait,
    pub bc_pct: f64,
    pub aligned_pct: f64,
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: AblationCell,
    /// Mean over gaits.
    pub mean_stability_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub cells: Vec<CellSummary>,
    pub weak_minus_strong_pct: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub fingerprint: String,
    pub evals: Vec<EvalSummary>,
    pub alignment_deltas: Vec<AlignmentDelta>,
    pub ablation: Option<AblationSummary>,
}

fn summarize_ablation(rows: &[AblationRow]) -> AblationSummary {
    let mut cells: Vec<AblationCell> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    let cells = cells
        .into_iter()
        .filter_map(|cell| {
            cell_mean_stability(rows, &cell).map(|mean_stability_pct| CellSummary {
                cell,
                mean_stability_pct,
            })
        })
        .collect();
    let weak_minus_strong_pct = rows
        .iter()
        .filter_map(|r| {
            r.weak_minus_strong_pct
                .map(|g| (r.report.gait.name().to_string(), g))
        })
        .collect();
    AblationSummary {
        cells,
        weak_minus_strong_pct,
    }
}

fn markdown(r: &Report) -> String {
    let mut md = String::new();
    let _ = writeln!(
        md,
        "# Run report\n\nConfig fingerprint `{}`\n",
        r.fingerprint
    );
    if !r.evals.is_empty() {
        md.push_str("## Evaluation\n\n| policy | gait | v_cmd | disturbance | stability % | per seed | mean velocity |\n|---|---|---|---|---|---|---|\n");
        for e in &r.evals {
            let per_seed: Vec<String> = e.stability_pct.iter().map(|s| format!("{s:.1}")).collect();
            let _ = writeln!(
                md,
                "| {} | {} | {:.2} | {:.3} | {:.1} | {} | {:.3} |",
                e.policy,
                e.gait,
                e.v_cmd,
                e.disturbance,
                e.mean_stability_pct,
                per_seed.join(" / "),
                e.mean_velocity
            );
        }
        md.push('\n');
    }
    if !r.alignment_deltas.is_empty() {
        md.push_str("## Alignment vs offline planner\n\n| gait | offline % | aligned % | delta (pts) |\n|---|---|---|---|\n");
        for d in &r.alignment_deltas {
            let _ = writeln!(
                md,
                "| {} | {:.1} | {:.1} | {:+.1} |",
                d.gait, d.bc_pct, d.aligned_pct, d.delta_pct
            );
        }
        md.push('\n');
    }
    if let Some(a) = &r.ablation {
        md.push_str("## Ablation (mean over gaits)\n\n| pair scale | labels | reg weight | stability % |\n|---|---|---|---|\n");
        for c in &a.cells {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.1} |",
                c.cell.pair_scale, c.cell.labels, c.cell.reg_weight, c.mean_stability_pct
            );
        }
        for (gait, gap) in &a.weak_minus_strong_pct {
            let _ = writeln!(md, "\nWeak minus strong labels on {gait}: {gap:+.1} pts");
        }
    }
    md
}

pub fn report(ctx: &Ctx) -> CliResult<Outcome> {
    let c = &ctx.cfg;
    let v = c.eval.v_cmd;
    let mut inputs: Vec<(String, &str)> = Vec::new();
    for policy in PolicyKind::ALL {
        for &gait in &c.gaits {
            let rel = eval_report_file(policy, gait, v);
            if ctx.dir.path(&rel).exists() {
                inputs.push((rel, "eval"));
            }
        }
    }
    let has_ablation = ctx.dir.path(ABLATION_JSON).exists();
    if has_ablation {
        inputs.push((ABLATION_JSON.to_string(), "ablate"));
    }
    if inputs.is_empty() {
        return Err(CliError::Prerequisite(
            "nothing to report: no evaluation or ablation artifacts; run `gaitdiff eval` or `gaitdiff ablate` first".into(),
        ));
    }
    run_stage(ctx, "report", &inputs, |_| {
        let mut mismatched = Vec::new();
        let mut evals = Vec::new();
        for (rel, _) in inputs.iter().filter(|(r, _)| r.as_str() != ABLATION_JSON) {
            let rep = read_eval_report(ctx, rel)?;
            if rep.fingerprint != ctx.fingerprint {
                mismatched.push(format!("{rel} ({})", rep.fingerprint));
                continue;
            }
            let policy = PolicyKind::ALL
                .into_iter()
                .find(|p| rel.starts_with(&format!("eval/{p}/")))
                .expect("report path names its policy");
            evals.push(EvalSummary {
                policy,
                gait: rep.gait,
                v_cmd: rep.v_cmd,
                disturbance: rep.disturbance,
                stability_pct: rep.stability_pct,
                mean_stability_pct: rep.mean_stability_pct,
                mean_velocity: rep.mean_mean_velocity,
            });
        }
        let ablation = if has_ablation {
            let a = read_ablation(ctx)?;
            let stale = a.fingerprint != ctx.fingerprint
                || a.body
                    .rows
                    .iter()
                    .any(|r| r.report.fingerprint != ctx.fingerprint);
            if stale {
                mismatched.push(format!("{ABLATION_JSON} ({})", a.fingerprint));
            }
            Some(summarize_ablation(&a.body.rows))
        } else {
            None
        };
        if !mismatched.is_empty() {
            return Err(CliError::Prerequisite(format!(
                "refusing to aggregate artifacts from a different config (current fingerprint {}): {}",
                ctx.fingerprint,
                mismatched.join(", ")
            )));
        }
        let find = |p: PolicyKind, g: Gait| {
            evals
                .iter()
                .find(|e| e.policy == p && e.gait == g)
                .map(|e| e.mean_stability_pct)
        };
        let alignment_deltas = c
            .gaits
            .iter()
            .filter_map(|&gait| {
                let (bc, aligned) = (
                    find(PolicyKind::Bc, gait)?,
                    find(PolicyKind::Aligned, gait)?,
                );
                Some(AlignmentDelta {
                    gait,
                    bc_pct: bc,
                    aligned_pct: aligned,
                    delta_pct: aligned - bc,
                })
            })
            .collect();
        let report = Report {
            fingerprint: ctx.fingerprint.clone(),
            evals,
            alignment_deltas,
            ablation,
        };
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        ctx.dir.write(REPORT_JSON, &bytes)?;
        ctx.dir.write(REPORT_MD, markdown(&report).as_bytes())?;
        eprint!("{}", markdown(&report));
        Ok(vec![REPORT_JSON.to_string(), REPORT_MD.to_string()])
    })
}

pub fn read_report(ctx: &Ctx) -> CliResult<Report> {
    Ok(serde_json::from_slice(&std::fs::read(
        ctx.dir.path(REPORT_JSON),
    )?)?)
}
