//! Metrics and the approach-comparison harness.
//!
//! VQP is the fraction of queries answered viably (planning plus execution
//! within the budget); AQRT is the mean total response time. Both are
//! reported overall and per difficulty bucket, where difficulty is a
//! query's number of viable pure-hint plans.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{hybrid_route, HybridSetup, KnnModel};
use crate::mdp::{reward, TerminationKind};
use crate::qnet::{train_agent, QNetwork, TrainResult, TrainSetup, TrainingConfig};
use crate::qte::{QteProfile, SimQte, StatCostModel, StatCache, TimeEstimator};
use crate::rewriter::{
    one_stage_rewrite, rewrite_online, two_stage_rewrite, DecisionOutcome,
};
use crate::rng::{derive, stream};
use crate::scalar::Scalar;
use crate::sim_env::PlanTimeTable;
use crate::time::Micros;
use crate::workload::{Query, RoSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproachId {
    /// Send the original query; the database optimizer is on its own.
    Baseline,
    /// Estimate every option brute-force, then pick the fastest estimate.
    Naive,
    /// The learned agent over pure-hint options.
    MdpHint,
    /// One quality-aware agent over hints and approximations together.
    MdpOneStage,
    /// Hints exhaustively first, then a quality-aware agent over
    /// approximations.
    MdpTwoStage,
    /// KNN-routed choice between the baseline and the hint agent.
    Hybrid,
}

impl ApproachId {
    pub const ALL: [ApproachId; 6] = [
        ApproachId::Baseline,
        ApproachId::Naive,
        ApproachId::MdpHint,
        ApproachId::MdpOneStage,
        ApproachId::MdpTwoStage,
        ApproachId::Hybrid,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ApproachId::Baseline => "baseline",
            ApproachId::Naive => "naive",
            ApproachId::MdpHint => "mdp-hint",
            ApproachId::MdpOneStage => "mdp-one-stage",
            ApproachId::MdpTwoStage => "mdp-two-stage",
            ApproachId::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for ApproachId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApproachId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ApproachId::ALL
            .iter()
            .find(|a| a.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown approach `{s}`")))
    }
}

/// Difficulty buckets over viable-plan counts. `edges` are sorted lower
/// bounds; bucket i covers [edges[i], edges[i+1]) and the last is open.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketEdges(pub Vec<usize>);

impl Default for BucketEdges {
    fn default() -> Self {
        BucketEdges(vec![0, 1, 2, 3, 4, 5])
    }
}

impl BucketEdges {
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() || self.0[0] != 0 {
            return Err(Error::InvalidConfig(
                "bucket edges must start at 0".into(),
            ));
        }
        if !self.0.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "bucket edges must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn bucket_of(&self, count: usize) -> usize {
        self.0.iter().rposition(|&e| e <= count).unwrap_or(0)
    }

    pub fn label(&self, bucket: usize) -> String {
        let lo = self.0[bucket];
        match self.0.get(bucket + 1) {
            None => format!(">={lo}"),
            Some(&hi) if hi == lo + 1 => format!("{lo}"),
            Some(&hi) => format!("{lo}-{}", hi - 1),
        }
    }

    pub fn n_buckets(&self) -> usize {
        self.0.len()
    }
}

/// Assign each query to its difficulty bucket. Buckets partition the
/// workload.
pub fn bucket_by_viable_plans<'a>(
    workload: &'a [Query],
    table: &PlanTimeTable,
    tau: Micros,
    edges: &BucketEdges,
) -> Result<Vec<Vec<&'a Query>>> {
    edges.validate()?;
    let mut buckets: Vec<Vec<&Query>> = vec![Vec::new(); edges.n_buckets()];
    for q in workload {
        let count = table.viable_plan_count(q.id, tau)?;
        buckets[edges.bucket_of(count)].push(q);
    }
    Ok(buckets)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub label: String,
    pub n_queries: usize,
    pub vqp: f64,
    pub aqrt_ms: f64,
    pub avg_quality: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub approach: ApproachId,
    pub overall: BucketMetrics,
    pub buckets: Vec<BucketMetrics>,
}

impl Metrics {
    /// CSV rows `approach,bucket,n_queries,vqp,aqrt_ms,avg_quality`, overall
    /// first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("approach,bucket,n_queries,vqp,aqrt_ms,avg_quality\n");
        for b in std::iter::once(&self.overall).chain(&self.buckets) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.approach, b.label, b.n_queries, b.vqp, b.aqrt_ms, b.avg_quality
            ));
        }
        out
    }

    pub fn bucket(&self, label: &str) -> Option<&BucketMetrics> {
        self.buckets.iter().find(|b| b.label == label)
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>10} {:>8} {:>12} {:>12}\n",
            "bucket", "queries", "vqp", "aqrt_ms", "avg_quality"
        );
        for b in std::iter::once(&self.overall).chain(&self.buckets) {
            out.push_str(&format!(
                "{:<14} {:>10} {:>8.3} {:>12.2} {:>12.3}\n",
                b.label, b.n_queries, b.vqp, b.aqrt_ms, b.avg_quality
            ));
        }
        out
    }
}

/// Trained artifacts an approach may need.
pub struct Artifacts<'a, S> {
    pub hint_net: Option<&'a QNetwork<S>>,
    pub quality_net: Option<&'a QNetwork<S>>,
    pub classifier: Option<&'a KnnModel>,
    pub qte_profile: QteProfile,
    pub cost_model: StatCostModel,
    pub classifier_cost: Micros,
}

impl<'a, S> Artifacts<'a, S> {
    pub fn bare(qte_profile: QteProfile, cost_model: StatCostModel) -> Self {
        Artifacts {
            hint_net: None,
            quality_net: None,
            classifier: None,
            qte_profile,
            cost_model,
            classifier_cost: Micros::from_ms(2),
        }
    }

    fn require_hint_net(&self) -> Result<&'a QNetwork<S>> {
        self.hint_net
            .ok_or_else(|| Error::MissingArtifact("hint-space checkpoint".into()))
    }

    fn require_quality_net(&self) -> Result<&'a QNetwork<S>> {
        self.quality_net
            .ok_or_else(|| Error::MissingArtifact("quality-aware checkpoint".into()))
    }

    fn require_classifier(&self) -> Result<&'a KnnModel> {
        self.classifier
            .ok_or_else(|| Error::MissingArtifact("query classifier".into()))
    }
}

/// Run one approach over one query. Per-query RNG streams keep outcomes
/// independent of evaluation order.
pub fn run_approach<S: Scalar>(
    approach: ApproachId,
    query: &Query,
    table: &PlanTimeTable,
    space: &RoSpace,
    artifacts: &Artifacts<'_, S>,
    tau: Micros,
    seed: u64,
) -> Result<DecisionOutcome> {
    let mut exec_rng = derive(seed, stream::EXEC, query.id);
    let qte = || {
        SimQte::for_query(
            space,
            table,
            artifacts.qte_profile.clone(),
            artifacts.cost_model.clone(),
            seed,
            query.id,
        )
    };
    match approach {
        ApproachId::Baseline => {
            let identity = space.identity_index().ok_or_else(|| {
                Error::InvalidConfig("option space has no identity option".into())
            })?;
            let execution = table.true_execution_time(space, query.id, identity, &mut exec_rng)?;
            Ok(DecisionOutcome {
                query_id: query.id,
                decided_ro: identity,
                planning: Micros::ZERO,
                execution,
                total: execution,
                viable: execution <= tau,
                quality: table.quality_of(query.id, identity)?,
                termination: TerminationKind::PredictedViable,
                steps: Vec::new(),
                reward: reward(Micros::ZERO, Some(execution), tau),
            })
        }
        ApproachId::Naive => naive_outcome(query, table, space, &mut qte()?, &mut exec_rng, tau),
        ApproachId::MdpHint => {
            let net = artifacts.require_hint_net()?;
            rewrite_online(
                query,
                net,
                table,
                space,
                (0..net.n_actions).collect(),
                &mut qte()?,
                &mut exec_rng,
                tau,
            )
        }
        ApproachId::MdpOneStage => one_stage_rewrite(
            query,
            artifacts.require_quality_net()?,
            table,
            space,
            &mut qte()?,
            &mut exec_rng,
            tau,
        ),
        ApproachId::MdpTwoStage => two_stage_rewrite(
            query,
            artifacts.require_hint_net()?,
            artifacts.require_quality_net()?,
            table,
            space,
            &mut qte()?,
            &mut exec_rng,
            tau,
        ),
        ApproachId::Hybrid => {
            let setup = HybridSetup {
                net: artifacts.require_hint_net()?,
                table,
                space,
                qte_profile: artifacts.qte_profile.clone(),
                cost_model: artifacts.cost_model.clone(),
                tau,
                classifier_cost: artifacts.classifier_cost,
                seed,
            };
            hybrid_route(query, artifacts.require_classifier()?, &setup)
        }
    }
}

/// Brute-force comparator: pay to estimate every option, then run the one
/// with the fastest estimate.
fn naive_outcome<R: rand::Rng + ?Sized>(
    query: &Query,
    table: &PlanTimeTable,
    space: &RoSpace,
    qte: &mut impl TimeEstimator,
    exec_rng: &mut R,
    tau: Micros,
) -> Result<DecisionOutcome> {
    let mut cache = StatCache::new();
    let mut planning = Micros::ZERO;
    let mut best: Option<(usize, Micros)> = None;
    let mut steps = Vec::new();
    for i in 0..space.len() {
        let out = qte.estimate(query.id, i, &mut cache)?;
        planning += out.actual_cost;
        steps.push(crate::rewriter::TraceStep {
            action: i,
            t_est_ms: out.t_est.as_ms_f64(),
            cost_ms: out.actual_cost.as_ms_f64(),
            e_after_ms: planning.as_ms_f64(),
        });
        match best {
            Some((_, t)) if t <= out.t_est => {}
            _ => best = Some((i, out.t_est)),
        }
    }
    let decided = best.expect("non-empty space").0;
    let execution = table.true_execution_time(space, query.id, decided, exec_rng)?;
    let total = planning + execution;
    Ok(DecisionOutcome {
        query_id: query.id,
        decided_ro: decided,
        planning,
        execution,
        total,
        viable: total <= tau,
        quality: table.quality_of(query.id, decided)?,
        termination: TerminationKind::Exhausted,
        steps,
        reward: reward(planning, Some(execution), tau),
    })
}

fn summarize(label: String, outcomes: &[&DecisionOutcome]) -> BucketMetrics {
    let n = outcomes.len();
    if n == 0 {
        return BucketMetrics {
            label,
            n_queries: 0,
            vqp: 0.0,
            aqrt_ms: 0.0,
            avg_quality: 0.0,
        };
    }
    let viable = outcomes.iter().filter(|o| o.viable).count();
    let total_ms: f64 = outcomes.iter().map(|o| o.total.as_ms_f64()).sum();
    let quality: f64 = outcomes.iter().map(|o| o.quality).sum();
    BucketMetrics {
        label,
        n_queries: n,
        vqp: viable as f64 / n as f64,
        aqrt_ms: total_ms / n as f64,
        avg_quality: quality / n as f64,
    }
}

/// Evaluate an approach over a workload: run every query, then aggregate
/// VQP, AQRT, and average quality overall and per difficulty bucket.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<S: Scalar>(
    approach: ApproachId,
    workload: &[Query],
    table: &PlanTimeTable,
    space: &RoSpace,
    artifacts: &Artifacts<'_, S>,
    tau: Micros,
    seed: u64,
    edges: &BucketEdges,
) -> Result<Metrics> {
    edges.validate()?;
    table.check_coverage(workload, space.len())?;
    let outcomes: Vec<DecisionOutcome> = workload
        .iter()
        .map(|q| run_approach(approach, q, table, space, artifacts, tau, seed))
        .collect::<Result<_>>()?;

    let mut per_bucket: Vec<Vec<&DecisionOutcome>> = vec![Vec::new(); edges.n_buckets()];
    for (q, o) in workload.iter().zip(&outcomes) {
        let count = table.viable_plan_count(q.id, tau)?;
        per_bucket[edges.bucket_of(count)].push(o);
    }
    let all: Vec<&DecisionOutcome> = outcomes.iter().collect();
    Ok(Metrics {
        approach,
        overall: summarize("all".into(), &all),
        buckets: per_bucket
            .into_iter()
            .enumerate()
            .map(|(i, outs)| summarize(edges.label(i), &outs))
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub size: usize,
    pub train_vqp_mean: f64,
    pub train_vqp_sd: f64,
    pub val_vqp_mean: f64,
    pub val_vqp_sd: f64,
    pub train_time_ms_mean: f64,
    pub train_time_ms_sd: f64,
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(
        "size,train_vqp_mean,train_vqp_sd,val_vqp_mean,val_vqp_sd,train_time_ms_mean,train_time_ms_sd\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.size,
            r.train_vqp_mean,
            r.train_vqp_sd,
            r.val_vqp_mean,
            r.val_vqp_sd,
            r.train_time_ms_mean,
            r.train_time_ms_sd
        ));
    }
    out
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Learning curve: for each training-set size, repeatedly sample that many
/// queries without replacement, train an agent, and score VQP on the sample
/// and on the validation workload.
#[allow(clippy::too_many_arguments)]
pub fn learning_curve<S: Scalar>(
    train_pool: &[Query],
    validation: &[Query],
    sizes: &[usize],
    repeats: usize,
    setup: &TrainSetup<'_>,
    cfg: &TrainingConfig,
    edges: &BucketEdges,
    seed: u64,
) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size > train_pool.len() {
            return Err(Error::InvalidConfig(format!(
                "curve size {size} exceeds pool of {}",
                train_pool.len()
            )));
        }
        let mut train_vqps = Vec::with_capacity(repeats);
        let mut val_vqps = Vec::with_capacity(repeats);
        let mut times = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let mut rng = derive(seed, stream::CURVE, (size as u64) << 20 | rep as u64);
            let mut idx: Vec<usize> = (0..train_pool.len()).collect();
            for i in 0..size {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            let sample: Vec<Query> = idx[..size].iter().map(|&i| train_pool[i].clone()).collect();

            let mut run_cfg = cfg.clone();
            run_cfg.seed = crate::rng::mix(seed, stream::CURVE, (rep as u64) << 32 | size as u64);
            let started = std::time::Instant::now();
            let result: TrainResult<S> = train_agent(&sample, validation, setup, &run_cfg)?;
            times.push(started.elapsed().as_secs_f64() * 1_000.0);

            let artifacts = Artifacts {
                hint_net: Some(&result.net),
                quality_net: None,
                classifier: None,
                qte_profile: setup.qte_profile.clone(),
                cost_model: setup.cost_model.clone(),
                classifier_cost: Micros::from_ms(2),
            };
            let on_train = evaluate(
                ApproachId::MdpHint,
                &sample,
                setup.table,
                setup.space,
                &artifacts,
                setup.tau,
                run_cfg.seed,
                edges,
            )?;
            let on_val = evaluate(
                ApproachId::MdpHint,
                validation,
                setup.table,
                setup.space,
                &artifacts,
                setup.tau,
                run_cfg.seed,
                edges,
            )?;
            train_vqps.push(on_train.overall.vqp);
            val_vqps.push(on_val.overall.vqp);
        }
        let (tm, ts) = mean_sd(&train_vqps);
        let (vm, vs) = mean_sd(&val_vqps);
        let (wm, ws) = mean_sd(&times);
        rows.push(CurveRow {
            size,
            train_vqp_mean: tm,
            train_vqp_sd: ts,
            val_vqp_mean: vm,
            val_vqp_sd: vs,
            train_time_ms_mean: wm,
            train_time_ms_sd: ws,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_env::{synthesize_plan_times, EnvironmentConfig, SynthesisProfile};
    use crate::workload::{
        generate_workload, AttrGenPolicy, AttrKind, AttributeDef, QuerySchema, WorkloadGenConfig,
    };

    fn schema() -> QuerySchema {
        QuerySchema::single_table(
            "t",
            vec![
                AttributeDef {
                    name: "a".into(),
                    kind: AttrKind::Keyword,
                },
                AttributeDef {
                    name: "b".into(),
                    kind: AttrKind::TemporalRange,
                },
                AttributeDef {
                    name: "c".into(),
                    kind: AttrKind::SpatialRange,
                },
            ],
        )
    }

    fn workload(n: usize, seed: u64) -> Vec<Query> {
        generate_workload(
            &schema(),
            &WorkloadGenConfig {
                num_queries: n,
                max_extent_days: 64.0,
                noise_sigma: 0.25,
                seed,
                attr_policies: vec![
                    AttrGenPolicy {
                        base_selectivity: 0.02,
                        fixed_zoom: None,
                    },
                    AttrGenPolicy {
                        base_selectivity: 0.05,
                        fixed_zoom: None,
                    },
                    AttrGenPolicy {
                        base_selectivity: 0.1,
                        fixed_zoom: None,
                    },
                ],
                schema_ref: "t".into(),
            },
        )
        .unwrap()
    }

    fn env(seed: u64) -> EnvironmentConfig {
        EnvironmentConfig {
            tau_ms: 500,
            hint_adherence_prob: 1.0,
            synthesis: SynthesisProfile {
                time_noise_sigma: 0.0,
                ..SynthesisProfile::default()
            },
            seed,
        }
    }

    #[test]
    fn approach_ids_round_trip() {
        for a in ApproachId::ALL {
            assert_eq!(a.as_str().parse::<ApproachId>().unwrap(), a);
        }
        assert!("bogus".parse::<ApproachId>().is_err());
    }

    #[test]
    fn bucket_edges_label_and_assign() {
        let edges = BucketEdges::default();
        assert_eq!(edges.label(0), "0");
        assert_eq!(edges.label(4), "4");
        assert_eq!(edges.label(5), ">=5");
        assert_eq!(edges.bucket_of(0), 0);
        assert_eq!(edges.bucket_of(4), 4);
        assert_eq!(edges.bucket_of(17), 5);

        let ranged = BucketEdges(vec![0, 1, 3, 5, 7, 9]);
        assert_eq!(ranged.label(1), "1-2");
        assert_eq!(ranged.bucket_of(2), 1);
        assert_eq!(ranged.bucket_of(9), 5);

        assert!(BucketEdges(vec![1, 2]).validate().is_err());
        assert!(BucketEdges(vec![0, 0]).validate().is_err());
    }

    #[test]
    fn buckets_partition_the_workload() {
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let w = workload(40, 3);
        let table = synthesize_plan_times(&w, &schema, &space, &env(3)).unwrap();
        let edges = BucketEdges::default();
        let buckets = bucket_by_viable_plans(&w, &table, Micros::from_ms(500), &edges).unwrap();
        let total: usize = buckets.iter().map(Vec::len).sum();
        assert_eq!(total, w.len());
    }

    #[test]
    fn all_zero_counts_land_in_one_bucket() {
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let w = workload(10, 3);
        let table = synthesize_plan_times(&w, &schema, &space, &env(3)).unwrap();
        let edges = BucketEdges::default();
        let buckets = bucket_by_viable_plans(&w, &table, Micros(1), &edges).unwrap();
        assert_eq!(buckets[0].len(), w.len());
        assert!(buckets[1..].iter().all(Vec::is_empty));
    }

    #[test]
    fn baseline_vqp_matches_identity_scan() {
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let w = workload(30, 5);
        let table = synthesize_plan_times(&w, &schema, &space, &env(5)).unwrap();
        let tau = Micros::from_ms(500);
        let artifacts: Artifacts<'_, f64> =
            Artifacts::bare(QteProfile::accurate(), StatCostModel::default());
        let metrics = evaluate(
            ApproachId::Baseline,
            &w,
            &table,
            &space,
            &artifacts,
            tau,
            0,
            &BucketEdges::default(),
        )
        .unwrap();
        let expect = w
            .iter()
            .filter(|q| table.time_of(q.id, 0).unwrap() <= tau)
            .count() as f64
            / w.len() as f64;
        assert_eq!(metrics.overall.vqp, expect);
        // Baseline pays no planning time: AQRT is the mean identity time.
        let mean_identity: f64 = w
            .iter()
            .map(|q| table.time_of(q.id, 0).unwrap().as_ms_f64())
            .sum::<f64>()
            / w.len() as f64;
        assert!((metrics.overall.aqrt_ms - mean_identity).abs() < 1e-9);
    }

    #[test]
    fn naive_pays_every_estimation_cost() {
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let w = workload(5, 6);
        let table = synthesize_plan_times(&w, &schema, &space, &env(6)).unwrap();
        let artifacts: Artifacts<'_, f64> =
            Artifacts::bare(QteProfile::accurate(), StatCostModel::default());
        let outcome = run_approach(
            ApproachId::Naive,
            &w[0],
            &table,
            &space,
            &artifacts,
            Micros::from_ms(500),
            0,
        )
        .unwrap();
        // 8 overheads + 3 unit statistics = 8*10 + 3*40 = 200ms.
        assert_eq!(outcome.planning, Micros::from_ms(200));
        // And the decided option carries the minimum estimate.
        let best = (0..space.len())
            .min_by_key(|&i| (table.time_of(w[0].id, i).unwrap(), i))
            .unwrap();
        assert_eq!(outcome.decided_ro, best);
    }

    #[test]
    fn overall_vqp_is_the_bucket_weighted_average() {
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let w = workload(60, 8);
        let table = synthesize_plan_times(&w, &schema, &space, &env(8)).unwrap();
        let artifacts: Artifacts<'_, f64> =
            Artifacts::bare(QteProfile::accurate(), StatCostModel::default());
        let metrics = evaluate(
            ApproachId::Baseline,
            &w,
            &table,
            &space,
            &artifacts,
            Micros::from_ms(500),
            0,
            &BucketEdges::default(),
        )
        .unwrap();
        // Exact in counts: sum of viable per bucket over total queries.
        let viable_total: f64 = metrics
            .buckets
            .iter()
            .map(|b| b.vqp * b.n_queries as f64)
            .sum();
        let weighted = viable_total / metrics.overall.n_queries as f64;
        assert!((weighted - metrics.overall.vqp).abs() < 1e-12);
        let n_total: usize = metrics.buckets.iter().map(|b| b.n_queries).sum();
        assert_eq!(n_total, metrics.overall.n_queries);
    }

    #[test]
    fn missing_artifacts_name_themselves() {
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let w = workload(2, 9);
        let table = synthesize_plan_times(&w, &schema, &space, &env(9)).unwrap();
        let artifacts: Artifacts<'_, f64> =
            Artifacts::bare(QteProfile::accurate(), StatCostModel::default());
        let err = run_approach(
            ApproachId::MdpHint,
            &w[0],
            &table,
            &space,
            &artifacts,
            Micros::from_ms(500),
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("checkpoint"), "{err}");
        let err = run_approach(
            ApproachId::Hybrid,
            &w[0],
            &table,
            &space,
            &artifacts,
            Micros::from_ms(500),
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("checkpoint") || err.to_string().contains("classifier"));
    }

    #[test]
    fn curve_vqp_columns_are_reproducible() {
        use crate::qnet::{TrainSetup, TrainingConfig};
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let pool = workload(20, 14);
        let mut validation = workload(10, 15);
        for q in &mut validation {
            q.id += 1_000;
        }
        let all: Vec<Query> = pool.iter().chain(&validation).cloned().collect();
        let table = synthesize_plan_times(&all, &schema, &space, &env(14)).unwrap();
        let setup = TrainSetup::new(
            &space,
            &table,
            QteProfile::accurate(),
            StatCostModel::default(),
            Micros::from_ms(500),
        );
        let cfg = TrainingConfig {
            max_epochs: 3,
            ..TrainingConfig::default()
        };
        let run = || {
            learning_curve::<f64>(
                &pool,
                &validation,
                &[5],
                1,
                &setup,
                &cfg,
                &BucketEdges::default(),
                3,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].train_vqp_mean, b[0].train_vqp_mean);
        assert_eq!(a[0].val_vqp_mean, b[0].val_vqp_mean);
        assert!(a[0].train_vqp_sd >= 0.0 && a[0].val_vqp_sd >= 0.0);
        assert!(learning_curve::<f64>(
            &pool,
            &validation,
            &[500],
            1,
            &setup,
            &cfg,
            &BucketEdges::default(),
            3,
        )
        .is_err());
    }

    #[test]
    fn metrics_csv_shape() {
        let schema = schema();
        let space = RoSpace::hint_only(&schema).unwrap();
        let w = workload(4, 2);
        let table = synthesize_plan_times(&w, &schema, &space, &env(2)).unwrap();
        let artifacts: Artifacts<'_, f64> =
            Artifacts::bare(QteProfile::accurate(), StatCostModel::default());
        let metrics = evaluate(
            ApproachId::Baseline,
            &w,
            &table,
            &space,
            &artifacts,
            Micros::from_ms(500),
            0,
            &BucketEdges::default(),
        )
        .unwrap();
        let csv = metrics.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "approach,bucket,n_queries,vqp,aqrt_ms,avg_quality"
        );
        assert!(lines.next().unwrap().starts_with("baseline,all,"));
        assert_eq!(csv.lines().count(), 2 + 6);
    }
}
