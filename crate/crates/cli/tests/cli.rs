use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const TINY: &str = r#"{
  "gaits": ["trotting"],
  "v_cmds": [0.5],
  "data": {"expert_episodes": 8, "rollout_episodes": 4, "max_steps": 60},
  "diffusion": {"train_steps": 40, "hidden": [16, 16]},
  "preference": {"pairs": 16},
  "align": {"epochs": 1},
  "eval": {"episodes": 2, "seeds": [0], "max_steps": 40},
  "ablation": {"design": "one_at_a_time"}
}"#;

struct Run {
    code: i32,
    stderr: String,
}

fn gaitdiff(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_gaitdiff"))
        .arg("--config")
        .arg(dir.join("cfg.json"))
        .arg("--run-dir")
        .arg(dir.join("run"))
        .args(args)
        .env_remove("GAITDIFF_RUN_ROOT")
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), config).unwrap();
    dir
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let r = gaitdiff(dir, args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
    r.stderr
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

const PIPELINE: &[&[&str]] = &[
    &["gen-expert"],
    &["train-bc"],
    &["rollout"],
    &["label"],
    &["align"],
    &["eval", "--policy", "bc"],
    &["eval", "--policy", "aligned"],
    &["report"],
];

#[test]
fn fresh_directory_runs_gen_expert_train_bc_eval() {
    let w = workspace(TINY);
    for args in [&["gen-expert"][..], &["train-bc"], &["eval"]] {
        ok(w.path(), args);
    }
    let run = w.path().join("run");
    let csv = fs::read_to_string(run.join("eval/bc/eval_trotting_0.50.csv")).unwrap();
    assert!(csv.lines().count() > 1, "{csv}");
    assert!(run
        .join("eval/bc/traces_trotting_0.50/trace_0.csv")
        .exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    for stage in ["gen-expert", "train-bc", "eval-bc"] {
        let rec = &manifest["stages"][stage];
        assert!(
            rec["config_fingerprint"].as_str().unwrap().len() == 64,
            "{stage}"
        );
        assert!(!rec["outputs"].as_array().unwrap().is_empty(), "{stage}");
    }
    assert!(manifest["stages"]["train-bc"]["seeds"]["trotting/bc"].is_u64());
}

#[test]
fn align_without_checkpoint_is_a_prerequisite_error() {
    let w = workspace(TINY);
    let r = gaitdiff(w.path(), &["align"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(
        r.stderr.contains("planner_bc.json") && r.stderr.contains("train-bc"),
        "{}",
        r.stderr
    );
    assert!(
        !w.path().join("run/.lock").exists(),
        "lock released on error"
    );
}

#[test]
fn config_errors_list_every_offending_key() {
    let w = workspace(r#"{"sed": 3, "align": {"temprature": 1}, "eval": {"episodes": 0}}"#);
    let r = gaitdiff(w.path(), &["gen-expert"]);
    assert_eq!(r.code, 1);
    assert!(
        r.stderr.contains("sed") && r.stderr.contains("align.temprature"),
        "{}",
        r.stderr
    );

    let w = workspace("{}");
    let r = gaitdiff(
        w.path(),
        &[
            "gen-expert",
            "--set",
            "eval.episodes=0",
            "--set",
            "preference.beta=-1",
        ],
    );
    assert_eq!(r.code, 1);
    assert!(
        r.stderr.contains("eval.episodes") && r.stderr.contains("preference.beta"),
        "{}",
        r.stderr
    );

    let r = gaitdiff(w.path(), &["no-such-stage"]);
    assert_eq!(r.code, 1);
    let r = gaitdiff(w.path(), &["eval", "--policy", "oracle"]);
    assert_eq!(r.code, 1);
}

#[test]
fn locked_directory_is_refused() {
    let w = workspace(TINY);
    fs::create_dir_all(w.path().join("run")).unwrap();
    fs::write(w.path().join("run/.lock"), "").unwrap();
    let r = gaitdiff(w.path(), &["gen-expert"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("locked"), "{}", r.stderr);
}

#[test]
fn reruns_are_byte_identical_and_cached() {
    let (a, b) = (workspace(TINY), workspace(TINY));
    for args in PIPELINE {
        ok(a.path(), args);
        ok(b.path(), args);
    }
    let first = snapshot(&a.path().join("run"));
    assert!(first.len() > 15);
    assert_eq!(first, snapshot(&b.path().join("run")));

    // unchanged inputs: every stage is a cache hit and nothing is touched
    for args in PIPELINE {
        assert!(ok(a.path(), args).contains("up to date"), "{args:?}");
    }
    assert_eq!(first, snapshot(&a.path().join("run")));

    // forced recomputation reproduces the same bytes
    for args in PIPELINE {
        let mut forced = args.to_vec();
        forced.push("--force");
        ok(a.path(), &forced);
    }
    assert_eq!(first, snapshot(&a.path().join("run")));
}

#[test]
fn artifacts_from_another_config_are_refused() {
    let w = workspace(TINY);
    ok(w.path(), &["gen-expert"]);
    ok(w.path(), &["eval", "--policy", "expert"]);

    let r = gaitdiff(w.path(), &["report", "--set", "seed=99"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("different config"), "{}", r.stderr);

    let r = gaitdiff(w.path(), &["train-bc", "--set", "seed=99"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("gen-expert"), "{}", r.stderr);

    ok(w.path(), &["report"]);
}

#[test]
fn saturated_alignment_exits_with_divergence() {
    let cfg = TINY.replace(
        r#""align": {"epochs": 1}"#,
        r#""align": {"temperature": 1e7, "lr": 1e-2, "epochs": 10, "batch_size": 1, "reg_weight": 0}"#,
    );
    assert_ne!(cfg, TINY);
    let w = workspace(&cfg);
    for args in [&["gen-expert"][..], &["train-bc"], &["rollout"], &["label"]] {
        ok(w.path(), args);
    }
    let r = gaitdiff(w.path(), &["align"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("trotting"), "{}", r.stderr);
    assert!(!w.path().join("run/trotting/planner_aligned.json").exists());
}

#[test]
fn run_root_env_names_the_default_directory() {
    let w = workspace(TINY);
    let root = w.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_gaitdiff"))
        .arg("--config")
        .arg(w.path().join("cfg.json"))
        .arg("gen-expert")
        .env("GAITDIFF_RUN_ROOT", &root)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dirs: Vec<_> = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(dirs.len(), 1);
    assert_eq!(dirs[0].len(), 12);
    assert!(root.join(&dirs[0]).join("trotting/expert.jsonl").exists());
}
