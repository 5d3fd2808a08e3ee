//! End-to-end pipeline through the rqplan binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rqplan"))
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn write_small_run_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        r#"{
  "qte": { "kind": "accurate", "sigma": 0.0, "unit_cost_ms": 40.0, "overhead_ms": 10.0, "cost_noise": false },
  "train_space": "hint",
  "training": { "gamma": 1.0, "epsilon_start": 1.0, "epsilon_end": 0.05, "epsilon_decay": 0.99,
                "learning_rate": 0.001, "batch_size": 32, "replay_capacity": 10000,
                "max_epochs": 8, "convergence_threshold": 0.01, "convergence_window": 3, "seed": 0 }
}"#,
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let workload = dir.join("workload.json");
    let env = dir.join("env.csv");
    let ckpt = dir.join("agent.ckpt");
    let run_cfg = write_small_run_config(dir);

    // gen-workload
    let out = ok(&bin()
        .args(["gen-workload", "--n", "60", "--seed", "7"])
        .arg("--schema")
        .arg(repo_config("schema-tweets.json"))
        .arg("--out")
        .arg(&workload)
        .output()
        .unwrap());
    assert!(out.contains("wrote 60 queries"));

    // synth-env
    ok(&bin()
        .args(["synth-env", "--seed", "8"])
        .arg("--workload")
        .arg(&workload)
        .arg("--profile")
        .arg(repo_config("profile-broken-optimizer.json"))
        .arg("--out")
        .arg(&env)
        .output()
        .unwrap());
    let env_text = std::fs::read_to_string(&env).unwrap();
    assert!(env_text.starts_with("query_id,ro_index,time_us,quality\n"));
    assert_eq!(env_text.lines().count(), 1 + 60 * 8);

    // train (writes checkpoint + log)
    let out = ok(&bin()
        .args(["train", "--seed", "9"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&run_cfg)
        .arg("--out")
        .arg(&ckpt)
        .output()
        .unwrap());
    assert!(out.contains("trained"));
    let log1 = std::fs::read_to_string(dir.join("agent.ckpt.log.csv")).unwrap();
    assert!(log1.starts_with("epoch,total_reward,mean_loss,epsilon,val_vqp\n"));
    let ckpt1 = std::fs::read(&ckpt).unwrap();

    // Identical seeds reproduce the checkpoint and the log bit for bit.
    let ckpt_rerun = dir.join("agent2.ckpt");
    ok(&bin()
        .args(["train", "--seed", "9"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&run_cfg)
        .arg("--out")
        .arg(&ckpt_rerun)
        .output()
        .unwrap());
    assert_eq!(ckpt1, std::fs::read(&ckpt_rerun).unwrap());
    assert_eq!(
        log1,
        std::fs::read_to_string(dir.join("agent2.ckpt.log.csv")).unwrap()
    );

    // rewrite with trace
    let trace = dir.join("trace.jsonl");
    let out = ok(&bin()
        .args(["rewrite", "--query-id", "3", "--mode", "hint"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&run_cfg)
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap());
    assert!(out.contains("query 3: decided option"));
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    let record: serde_json::Value = serde_json::from_str(trace_text.lines().next().unwrap()).unwrap();
    assert_eq!(record["query_id"], 3);
    assert!(!record["steps"].as_array().unwrap().is_empty());

    // classify-train
    let model = dir.join("router.json");
    let out = ok(&bin()
        .args(["classify-train", "--seed", "9"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&run_cfg)
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--out")
        .arg(&model)
        .output()
        .unwrap());
    assert!(out.contains("labeled 60 queries"));
    let model_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(model_json["k"], 5);
    assert_eq!(model_json["points"].as_array().unwrap().len(), 60);

    // evaluate all approaches that need only these artifacts
    for approach in ["baseline", "naive", "mdp-hint", "hybrid"] {
        let csv_path = dir.join(format!("metrics-{approach}.csv"));
        let mut cmd = bin();
        cmd.args(["evaluate", "--approach", approach, "--seed", "11"])
            .arg("--workload")
            .arg(&workload)
            .arg("--env")
            .arg(&env)
            .arg("--config")
            .arg(&run_cfg)
            .arg("--out")
            .arg(&csv_path);
        if approach != "baseline" && approach != "naive" {
            cmd.arg("--ckpt").arg(&ckpt);
        }
        if approach == "hybrid" {
            cmd.arg("--classifier").arg(&model);
        }
        ok(&cmd.output().unwrap());
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        assert!(csv.starts_with("approach,bucket,n_queries,vqp,aqrt_ms,avg_quality\n"));
        assert!(csv.lines().nth(1).unwrap().starts_with(&format!("{approach},all,")));
    }

    // Metric CSVs are reproducible under the same seed.
    let again = dir.join("metrics-again.csv");
    ok(&bin()
        .args(["evaluate", "--approach", "mdp-hint", "--seed", "11"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&run_cfg)
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap());
    assert_eq!(
        std::fs::read_to_string(dir.join("metrics-mdp-hint.csv")).unwrap(),
        std::fs::read_to_string(&again).unwrap()
    );

    // curve
    let curve = dir.join("curve.csv");
    let out = ok(&bin()
        .args(["curve", "--sizes", "5,15", "--repeats", "2", "--seed", "12"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&run_cfg)
        .arg("--out")
        .arg(&curve)
        .output()
        .unwrap());
    assert!(out.contains("size    5"));
    let curve_text = std::fs::read_to_string(&curve).unwrap();
    assert!(curve_text
        .starts_with("size,train_vqp_mean,train_vqp_sd,val_vqp_mean,val_vqp_sd,train_time_ms_mean"));
    assert_eq!(curve_text.lines().count(), 3);
}

#[test]
fn quality_modes_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let workload = dir.join("workload.json");
    let env = dir.join("env.csv");

    ok(&bin()
        .args(["gen-workload", "--n", "40", "--seed", "21"])
        .arg("--schema")
        .arg(repo_config("schema-tweets.json"))
        .arg("--out")
        .arg(&workload)
        .output()
        .unwrap());
    ok(&bin()
        .args(["synth-env", "--seed", "22"])
        .arg("--workload")
        .arg(&workload)
        .arg("--profile")
        .arg(repo_config("profile-quality.json"))
        .arg("--out")
        .arg(&env)
        .output()
        .unwrap());
    // 8 hint options + 24 combinations per query.
    let env_text = std::fs::read_to_string(&env).unwrap();
    assert_eq!(env_text.lines().count(), 1 + 40 * 32);

    // Abbreviated quality configs to keep the test quick.
    let one_cfg = dir.join("one.json");
    std::fs::write(
        &one_cfg,
        r#"{
  "qte": { "kind": "accurate", "sigma": 0.0, "unit_cost_ms": 40.0, "overhead_ms": 10.0, "cost_noise": false },
  "approx_rules": [ { "kind": "sample-table", "fraction": 0.1 },
                    { "kind": "sample-table", "fraction": 0.3 },
                    { "kind": "sample-table", "fraction": 0.6 } ],
  "train_space": "full",
  "beta": 0.9,
  "training": { "learning_rate": 0.0002, "max_epochs": 6, "epsilon_decay": 0.99,
                "gamma": 1.0, "epsilon_start": 1.0, "epsilon_end": 0.05, "batch_size": 32,
                "replay_capacity": 10000, "convergence_threshold": 0.01, "convergence_window": 3, "seed": 0 }
}"#,
    )
    .unwrap();
    let stage2_cfg = dir.join("stage2.json");
    std::fs::write(
        &stage2_cfg,
        r#"{
  "qte": { "kind": "accurate", "sigma": 0.0, "unit_cost_ms": 40.0, "overhead_ms": 10.0, "cost_noise": false },
  "approx_rules": [ { "kind": "sample-table", "fraction": 0.1 },
                    { "kind": "sample-table", "fraction": 0.3 },
                    { "kind": "sample-table", "fraction": 0.6 } ],
  "train_space": "approx-stage2",
  "beta": 0.1,
  "initial_elapsed_ms": 200,
  "training": { "learning_rate": 0.0002, "max_epochs": 6, "epsilon_decay": 0.99,
                "gamma": 1.0, "epsilon_start": 1.0, "epsilon_end": 0.05, "batch_size": 32,
                "replay_capacity": 10000, "convergence_threshold": 0.01, "convergence_window": 3, "seed": 0 }
}"#,
    )
    .unwrap();
    let hint_cfg = dir.join("hint.json");
    std::fs::write(
        &hint_cfg,
        r#"{
  "qte": { "kind": "accurate", "sigma": 0.0, "unit_cost_ms": 40.0, "overhead_ms": 10.0, "cost_noise": false },
  "approx_rules": [ { "kind": "sample-table", "fraction": 0.1 },
                    { "kind": "sample-table", "fraction": 0.3 },
                    { "kind": "sample-table", "fraction": 0.6 } ],
  "train_space": "hint",
  "training": { "learning_rate": 0.001, "max_epochs": 6, "epsilon_decay": 0.99,
                "gamma": 1.0, "epsilon_start": 1.0, "epsilon_end": 0.05, "batch_size": 32,
                "replay_capacity": 10000, "convergence_threshold": 0.01, "convergence_window": 3, "seed": 0 }
}"#,
    )
    .unwrap();

    let one_ckpt = dir.join("one.ckpt");
    let hint_ckpt = dir.join("hint.ckpt");
    let stage2_ckpt = dir.join("stage2.ckpt");
    for (cfg, out_path) in [
        (&one_cfg, &one_ckpt),
        (&hint_cfg, &hint_ckpt),
        (&stage2_cfg, &stage2_ckpt),
    ] {
        ok(&bin()
            .args(["train", "--seed", "23"])
            .arg("--workload")
            .arg(&workload)
            .arg("--env")
            .arg(&env)
            .arg("--config")
            .arg(cfg)
            .arg("--out")
            .arg(out_path)
            .output()
            .unwrap());
    }

    let out = ok(&bin()
        .args(["rewrite", "--query-id", "0", "--mode", "one-stage"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&one_cfg)
        .arg("--ckpt")
        .arg(&one_ckpt)
        .output()
        .unwrap());
    assert!(out.contains("decided option"));

    let out = ok(&bin()
        .args(["rewrite", "--query-id", "0", "--mode", "two-stage"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&hint_cfg)
        .arg("--ckpt")
        .arg(&hint_ckpt)
        .arg("--ckpt2")
        .arg(&stage2_ckpt)
        .output()
        .unwrap());
    assert!(out.contains("decided option"));

    // evaluate the quality-aware approaches
    let m1 = dir.join("one.csv");
    ok(&bin()
        .args(["evaluate", "--approach", "mdp-one-stage", "--seed", "24"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&one_cfg)
        .arg("--ckpt")
        .arg(&one_ckpt)
        .arg("--out")
        .arg(&m1)
        .output()
        .unwrap());
    let m2 = dir.join("two.csv");
    ok(&bin()
        .args(["evaluate", "--approach", "mdp-two-stage", "--seed", "24"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--config")
        .arg(&hint_cfg)
        .arg("--ckpt")
        .arg(&hint_ckpt)
        .arg("--ckpt2")
        .arg(&stage2_ckpt)
        .arg("--out")
        .arg(&m2)
        .output()
        .unwrap());
}

#[test]
fn errors_exit_nonzero_with_categorized_messages() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();

    // Missing schema file.
    let out = bin()
        .args(["gen-workload", "--n", "5"])
        .arg("--schema")
        .arg(dir.join("nope.json"))
        .arg("--out")
        .arg(dir.join("w.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // Evaluate without the checkpoint it needs.
    let workload = dir.join("workload.json");
    let env = dir.join("env.csv");
    ok(&bin()
        .args(["gen-workload", "--n", "10", "--seed", "1"])
        .arg("--schema")
        .arg(repo_config("schema-tweets.json"))
        .arg("--out")
        .arg(&workload)
        .output()
        .unwrap());
    ok(&bin()
        .args(["synth-env", "--seed", "2"])
        .arg("--workload")
        .arg(&workload)
        .arg("--profile")
        .arg(repo_config("profile-broken-optimizer.json"))
        .arg("--out")
        .arg(&env)
        .output()
        .unwrap());
    let out = bin()
        .args(["evaluate", "--approach", "mdp-hint"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--out")
        .arg(dir.join("m.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing artifact"), "stderr: {stderr}");

    // Corrupt checkpoint reports the offset.
    let bad = dir.join("bad.ckpt");
    std::fs::write(&bad, b"RQCK").unwrap();
    let out = bin()
        .args(["rewrite", "--query-id", "0", "--mode", "hint"])
        .arg("--workload")
        .arg(&workload)
        .arg("--env")
        .arg(&env)
        .arg("--ckpt")
        .arg(&bad)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt checkpoint"));
}

#[test]
fn join_schema_enumerates_the_wider_hint_space() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let workload = dir.join("workload.json");
    let env = dir.join("env.csv");
    ok(&bin()
        .args(["gen-workload", "--n", "5", "--seed", "3"])
        .arg("--schema")
        .arg(repo_config("schema-tweets-join.json"))
        .arg("--out")
        .arg(&workload)
        .output()
        .unwrap());
    let profile = dir.join("profile.json");
    std::fs::write(
        &profile,
        r#"{
  "tau_ms": 500, "hint_adherence_prob": 1.0, "seed": 0,
  "synthesis": { "table_rows": 5000000.0, "per_row_index_cost_us": 50.0,
                 "intersection_overhead_ms": 400.0, "full_scan_ms": 1500.0,
                 "join_method_factors": [1.0, 1.2, 1.5],
                 "optimizer_error_prob": 0.0, "optimizer_error_factor": 10.0,
                 "time_noise_sigma": 0.25, "quality_exponent": 0.3, "max_time_ms": 8000.0 },
  "approx_rules": []
}"#,
    )
    .unwrap();
    let out = ok(&bin()
        .args(["synth-env", "--seed", "4"])
        .arg("--workload")
        .arg(&workload)
        .arg("--profile")
        .arg(&profile)
        .arg("--out")
        .arg(&env)
        .output()
        .unwrap());
    // Identity plus 7 index combinations times 3 join methods.
    assert!(out.contains("5 x 22"), "stdout: {out}");
}
