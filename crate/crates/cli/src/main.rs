//! rqplan: train and evaluate budget-aware query-rewrite policies against a
//! simulated database.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{load_workload_with_schema, EnvProfile, RunConfig, SchemaSpec, TrainSpace};
use rqplan_core::hybrid::{label_training_queries, HybridSetup, KnnModel};
use rqplan_core::metrics::{
    curve_csv, evaluate, learning_curve, ApproachId, Artifacts, BucketEdges,
};
use rqplan_core::qnet::{checkpoint, train_agent, QNetwork, TrainSetup};
use rqplan_core::qte::SimQte;
use rqplan_core::rewriter::{one_stage_rewrite, rewrite_online, two_stage_rewrite, DecisionOutcome};
use rqplan_core::rng::{derive, stream};
use rqplan_core::sim_env::{synthesize_plan_times, PlanTimeTable};
use rqplan_core::workload::{generate_workload, save_workload, split_workload, Query, RoSpace};
use rqplan_core::Micros;

#[derive(Parser)]
#[command(
    name = "rqplan",
    about = "Budget-aware query-rewrite planning over a simulated database",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed for all derived random streams.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Time budget in milliseconds.
    #[arg(long, global = true, default_value_t = 500)]
    tau_ms: u64,
    /// Run config file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic query workload from a schema spec.
    GenWorkload {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize the ground-truth plan-time table for a workload.
    SynthEnv {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a rewriting agent and write its checkpoint.
    Train {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Validation workload; when omitted, a third of the training
        /// workload is held out.
        #[arg(long)]
        val_workload: Option<PathBuf>,
        /// Training-log CSV path (default: <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Rewrite one query online and report the outcome.
    Rewrite {
        #[arg(long)]
        query_id: u64,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Stage-two checkpoint for --mode two-stage.
        #[arg(long)]
        ckpt2: Option<PathBuf>,
        /// Classifier model for --mode hybrid.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long, default_value = "hint")]
        mode: String,
        /// Append the episode trace as a JSON line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Label a workload with the faster path and train the KNN router.
    ClassifyTrain {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate an approach over a workload and write metrics CSV.
    Evaluate {
        #[arg(long)]
        approach: String,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        ckpt2: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learning curve: train at several workload sizes with repeats.
    Curve {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        env: PathBuf,
        /// Comma-separated training-set sizes.
        #[arg(long, default_value = "10,50")]
        sizes: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        val_workload: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let tau = Micros::from_ms(cli.tau_ms);
    let run_cfg = RunConfig::load_or_default(cli.config.as_ref())?;
    match cli.command {
        Command::GenWorkload { schema, n, out } => {
            let spec = SchemaSpec::load(&schema)?;
            let gen = spec.gen_config(n, cli.seed, schema.to_string_lossy().into_owned());
            let queries = generate_workload(&spec.schema, &gen)?;
            save_workload(&out, &queries)?;
            println!("wrote {} queries to {}", queries.len(), out.display());
        }
        Command::SynthEnv {
            workload,
            profile,
            out,
        } => {
            let (queries, schema) = load_workload_with_schema(&workload)?;
            let mut profile = EnvProfile::load(&profile)?;
            profile.env.seed = cli.seed;
            let space = RoSpace::new(&schema, &profile.approx_rules)?;
            let table = synthesize_plan_times(&queries, &schema, &space, &profile.env)?;
            table.save_csv(&out)?;
            println!(
                "wrote {} x {} plan times to {}",
                table.n_queries(),
                table.n_options(),
                out.display()
            );
        }
        Command::Train {
            workload,
            env,
            out,
            val_workload,
            log,
        } => {
            let (queries, schema) = load_workload_with_schema(&workload)?;
            let space = RoSpace::new(&schema, &run_cfg.approx_rules)?;
            let table = load_env(&env, &space, run_cfg.hint_adherence_prob)?;
            let (train, validation) = match val_workload {
                Some(path) => {
                    let (val, _) = load_workload_with_schema(&path)?;
                    (queries, val)
                }
                None => {
                    let (t, v, _) =
                        split_workload(queries, (2.0 / 3.0, 1.0 / 3.0, 0.0), cli.seed)?;
                    (t, v)
                }
            };
            let mut setup = TrainSetup::new(
                &space,
                &table,
                run_cfg.qte.profile(),
                run_cfg.qte.cost_model(),
                tau,
            );
            apply_train_space(&mut setup, &space, &run_cfg);
            let training = run_cfg.training_with(Some(cli.seed))?;
            let result = train_agent::<f64>(&train, &validation, &setup, &training)?;
            checkpoint::save(&result.net, &out)?;
            let log_path = log.unwrap_or_else(|| suffixed(&out, ".log.csv"));
            std::fs::write(&log_path, result.log_csv())?;
            println!(
                "trained {} epochs on {} queries; best validation vqp {:.3} at epoch {}",
                result.log.len(),
                train.len(),
                result.best_val_vqp,
                result.best_epoch
            );
            println!("checkpoint: {}", out.display());
            println!("training log: {}", log_path.display());
        }
        Command::Rewrite {
            query_id,
            workload,
            env,
            ckpt,
            ckpt2,
            classifier,
            mode,
            trace,
        } => {
            let (queries, schema) = load_workload_with_schema(&workload)?;
            let space = RoSpace::new(&schema, &run_cfg.approx_rules)?;
            let table = load_env(&env, &space, run_cfg.hint_adherence_prob)?;
            let query = queries
                .iter()
                .find(|q| q.id == query_id)
                .with_context(|| format!("query {query_id} not in workload"))?;
            let outcome = run_rewrite(
                &mode,
                query,
                &space,
                &table,
                &ckpt,
                ckpt2.as_deref(),
                classifier.as_deref(),
                &run_cfg,
                tau,
                cli.seed,
            )?;
            print_outcome(&outcome, &space, tau);
            if let Some(path) = trace {
                use std::io::Write;
                let mut file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .with_context(|| format!("opening trace file {}", path.display()))?;
                writeln!(file, "{}", outcome.trace_json())?;
                println!("trace appended to {}", path.display());
            }
        }
        Command::ClassifyTrain {
            workload,
            env,
            ckpt,
            out,
        } => {
            let (queries, schema) = load_workload_with_schema(&workload)?;
            let space = RoSpace::new(&schema, &run_cfg.approx_rules)?;
            let table = load_env(&env, &space, run_cfg.hint_adherence_prob)?;
            let net: QNetwork<f64> = checkpoint::load(&ckpt)?;
            let setup = HybridSetup {
                net: &net,
                table: &table,
                space: &space,
                qte_profile: run_cfg.qte.profile(),
                cost_model: run_cfg.qte.cost_model(),
                tau,
                classifier_cost: Micros::from_ms_f64(run_cfg.classifier_cost_ms),
                seed: cli.seed,
            };
            let points = label_training_queries(&queries, &setup)?;
            let model = KnnModel::new(run_cfg.knn_k, points)?;
            model.save_json(&out)?;
            let mdp_share = model
                .points
                .iter()
                .filter(|p| p.label == rqplan_core::hybrid::RouteLabel::Mdp)
                .count();
            println!(
                "labeled {} queries ({} routed to the agent); k = {}; model: {}",
                model.points.len(),
                mdp_share,
                model.k,
                out.display()
            );
        }
        Command::Evaluate {
            approach,
            workload,
            env,
            ckpt,
            ckpt2,
            classifier,
            out,
        } => {
            let approach: ApproachId = approach.parse()?;
            let (queries, schema) = load_workload_with_schema(&workload)?;
            let space = RoSpace::new(&schema, &run_cfg.approx_rules)?;
            let table = load_env(&env, &space, run_cfg.hint_adherence_prob)?;
            let hint_net = load_net_opt(ckpt.as_deref())?;
            let quality_net = load_net_opt(ckpt2.as_deref())?;
            let knn = match classifier.as_deref() {
                Some(p) => Some(KnnModel::load_json(p)?),
                None => None,
            };
            // A one-stage agent arrives via --ckpt; route it to the quality
            // slot the evaluator expects.
            let (hint_ref, quality_ref) = match approach {
                ApproachId::MdpOneStage => (None, hint_net.as_ref().or(quality_net.as_ref())),
                _ => (hint_net.as_ref(), quality_net.as_ref()),
            };
            let artifacts = Artifacts {
                hint_net: hint_ref,
                quality_net: quality_ref,
                classifier: knn.as_ref(),
                qte_profile: run_cfg.qte.profile(),
                cost_model: run_cfg.qte.cost_model(),
                classifier_cost: Micros::from_ms_f64(run_cfg.classifier_cost_ms),
            };
            let edges = BucketEdges(run_cfg.bucket_edges.clone());
            let metrics = evaluate(
                approach, &queries, &table, &space, &artifacts, tau, cli.seed, &edges,
            )?;
            std::fs::write(&out, metrics.to_csv())?;
            print!("{}", metrics.to_table());
            println!("metrics csv: {}", out.display());
        }
        Command::Curve {
            workload,
            env,
            sizes,
            repeats,
            val_workload,
            out,
        } => {
            let (queries, schema) = load_workload_with_schema(&workload)?;
            let space = RoSpace::new(&schema, &run_cfg.approx_rules)?;
            let table = load_env(&env, &space, run_cfg.hint_adherence_prob)?;
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| s.trim().parse::<usize>().context("parsing --sizes"))
                .collect::<Result<_>>()?;
            let (pool, validation) = match val_workload {
                Some(path) => {
                    let (val, _) = load_workload_with_schema(&path)?;
                    (queries, val)
                }
                None => {
                    let (p, v, _) =
                        split_workload(queries, (2.0 / 3.0, 1.0 / 3.0, 0.0), cli.seed)?;
                    (p, v)
                }
            };
            let mut setup = TrainSetup::new(
                &space,
                &table,
                run_cfg.qte.profile(),
                run_cfg.qte.cost_model(),
                tau,
            );
            apply_train_space(&mut setup, &space, &run_cfg);
            let training = run_cfg.training_with(None)?;
            let edges = BucketEdges(run_cfg.bucket_edges.clone());
            let rows = learning_curve::<f64>(
                &pool, &validation, &sizes, repeats, &setup, &training, &edges, cli.seed,
            )?;
            std::fs::write(&out, curve_csv(&rows))?;
            for r in &rows {
                println!(
                    "size {:>4}: train vqp {:.3}+-{:.3}  val vqp {:.3}+-{:.3}  train time {:.0}+-{:.0} ms",
                    r.size,
                    r.train_vqp_mean,
                    r.train_vqp_sd,
                    r.val_vqp_mean,
                    r.val_vqp_sd,
                    r.train_time_ms_mean,
                    r.train_time_ms_sd
                );
            }
            println!("curve csv: {}", out.display());
        }
    }
    Ok(())
}

fn apply_train_space(setup: &mut TrainSetup<'_>, space: &RoSpace, cfg: &RunConfig) {
    match cfg.train_space {
        TrainSpace::Hint => setup.slots = (0..space.pure_hint_count()).collect(),
        TrainSpace::Full => setup.slots = (0..space.len()).collect(),
        TrainSpace::ApproxStage2 => {
            setup.slots = (space.pure_hint_count()..space.len()).collect();
            setup.prefill_statistics = true;
        }
    }
    setup.initial_elapsed = Micros::from_ms(cfg.initial_elapsed_ms);
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn load_env(path: &Path, space: &RoSpace, adherence: f64) -> Result<PlanTimeTable> {
    PlanTimeTable::load_csv(path, space, adherence)
        .with_context(|| format!("loading environment {}", path.display()))
}

fn load_net_opt(path: Option<&Path>) -> Result<Option<QNetwork<f64>>> {
    match path {
        Some(p) => Ok(Some(
            checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?,
        )),
        None => Ok(None),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_rewrite(
    mode: &str,
    query: &Query,
    space: &RoSpace,
    table: &PlanTimeTable,
    ckpt: &Path,
    ckpt2: Option<&Path>,
    classifier: Option<&Path>,
    run_cfg: &RunConfig,
    tau: Micros,
    seed: u64,
) -> Result<DecisionOutcome> {
    let net: QNetwork<f64> = checkpoint::load(ckpt)?;
    let mut qte = SimQte::for_query(
        space,
        table,
        run_cfg.qte.profile(),
        run_cfg.qte.cost_model(),
        seed,
        query.id,
    )?;
    let mut exec_rng = derive(seed, stream::EXEC, query.id);
    match mode {
        "hint" => Ok(rewrite_online(
            query,
            &net,
            table,
            space,
            (0..net.n_actions).collect(),
            &mut qte,
            &mut exec_rng,
            tau,
        )?),
        "one-stage" => Ok(one_stage_rewrite(
            query, &net, table, space, &mut qte, &mut exec_rng, tau,
        )?),
        "two-stage" => {
            let ckpt2 = ckpt2.context("--mode two-stage requires --ckpt2")?;
            let stage2: QNetwork<f64> = checkpoint::load(ckpt2)?;
            Ok(two_stage_rewrite(
                query, &net, &stage2, table, space, &mut qte, &mut exec_rng, tau,
            )?)
        }
        "hybrid" => {
            let classifier = classifier.context("--mode hybrid requires --classifier")?;
            let model = KnnModel::load_json(classifier)?;
            let setup = HybridSetup {
                net: &net,
                table,
                space,
                qte_profile: run_cfg.qte.profile(),
                cost_model: run_cfg.qte.cost_model(),
                tau,
                classifier_cost: Micros::from_ms_f64(run_cfg.classifier_cost_ms),
                seed,
            };
            Ok(rqplan_core::hybrid::hybrid_route(query, &model, &setup)?)
        }
        other => bail!("unknown mode `{other}` (hint|one-stage|two-stage|hybrid)"),
    }
}

fn print_outcome(outcome: &DecisionOutcome, space: &RoSpace, tau: Micros) {
    let ro = space.get(outcome.decided_ro);
    let hints: Vec<String> = ro
        .hint
        .hinted_attrs()
        .map(|i| space.attr_names()[i].clone())
        .collect();
    let approx = ro
        .approx
        .as_ref()
        .map(|r| format!("{:?} {:.2}", r.kind, r.fraction))
        .unwrap_or_else(|| "none".into());
    println!(
        "query {}: decided option {} (hints [{}], approx {})",
        outcome.query_id,
        outcome.decided_ro,
        hints.join(","),
        approx
    );
    println!(
        "planning {:.1} ms + execution {:.1} ms = {:.1} ms against budget {:.0} ms -> {}",
        outcome.planning.as_ms_f64(),
        outcome.execution.as_ms_f64(),
        outcome.total.as_ms_f64(),
        tau.as_ms_f64(),
        if outcome.viable { "viable" } else { "not viable" }
    );
    println!(
        "quality {:.3}, termination {:?}, path {:?}, reward {:.4}",
        outcome.quality,
        outcome.termination,
        outcome.path(),
        outcome.reward
    );
}
