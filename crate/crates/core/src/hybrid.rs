//! Hybrid routing: a KNN classifier over estimated selectivities decides,
//! per query, between sending the original query straight to the database
//! and running the learned rewriter.
//!
//! Easy queries lose nothing by skipping the planning overhead; the
//! classifier is trained offline by timing both paths on a workload and
//! labeling each query with the faster one.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{reward, TerminationKind};
use crate::qnet::QNetwork;
use crate::qte::{QteProfile, SimQte, StatCostModel};
use crate::rewriter::{rewrite_online, DecisionOutcome};
use crate::rng::{derive, stream};
use crate::scalar::Scalar;
use crate::sim_env::PlanTimeTable;
use crate::time::Micros;
use crate::workload::{Query, RoSpace};

/// One estimated selectivity per filtering attribute, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteLabel {
    Baseline,
    Mdp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: FeatureVector,
    pub label: RouteLabel,
}

/// KNN classifier over selectivity features, Euclidean distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub points: Vec<LabeledPoint>,
}

impl KnnModel {
    pub fn new(k: usize, points: Vec<LabeledPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("knn model has no points".into()));
        }
        if k == 0 || k > points.len() {
            return Err(Error::InvalidConfig(format!(
                "k = {k} must be in [1, {}]",
                points.len()
            )));
        }
        if k.is_multiple_of(2) {
            return Err(Error::InvalidConfig("k must be odd to avoid vote ties".into()));
        }
        Ok(KnnModel { k, points })
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: KnnModel = serde_json::from_str(&text)?;
        KnnModel::new(model.k, model.points)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Majority label among the k nearest points; distance ties break toward
/// the earlier training point.
pub fn classify(model: &KnnModel, features: &FeatureVector) -> Result<RouteLabel> {
    if model.points.is_empty() {
        return Err(Error::InvalidConfig("knn model has no points".into()));
    }
    let mut scored: Vec<(f64, usize)> = model
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (euclidean(&p.features.0, &features.0), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut mdp_votes = 0usize;
    for (_, i) in scored.iter().take(model.k) {
        if model.points[*i].label == RouteLabel::Mdp {
            mdp_votes += 1;
        }
    }
    Ok(if 2 * mdp_votes > model.k {
        RouteLabel::Mdp
    } else {
        RouteLabel::Baseline
    })
}

/// Estimated selectivities of a query's conditions: the true values, blurred
/// by the estimator profile's log-normal error and clipped into [0, 1].
pub fn extract_features<R: Rng + ?Sized>(
    query: &Query,
    profile: &QteProfile,
    rng: &mut R,
) -> FeatureVector {
    let features = if profile.sigma > 0.0 {
        let noise = Normal::new(0.0, profile.sigma).expect("validated sigma");
        query
            .conditions
            .iter()
            .map(|c| {
                let eps: f64 = noise.sample(rng);
                (c.selectivity * eps.exp()).clamp(0.0, 1.0)
            })
            .collect()
    } else {
        query.selectivities()
    };
    FeatureVector(features)
}

/// Everything the routing paths need at decision time.
pub struct HybridSetup<'a, S> {
    pub net: &'a QNetwork<S>,
    pub table: &'a PlanTimeTable,
    pub space: &'a RoSpace,
    pub qte_profile: QteProfile,
    pub cost_model: StatCostModel,
    pub tau: Micros,
    /// Charged for feature extraction plus classification on every routed
    /// query.
    pub classifier_cost: Micros,
    pub seed: u64,
}

impl<S: Scalar> HybridSetup<'_, S> {
    fn mdp_outcome(&self, query: &Query) -> Result<DecisionOutcome> {
        let mut qte = SimQte::for_query(
            self.space,
            self.table,
            self.qte_profile.clone(),
            self.cost_model.clone(),
            self.seed,
            query.id,
        )?;
        let mut exec_rng = derive(self.seed, stream::EXEC, query.id);
        rewrite_online(
            query,
            self.net,
            self.table,
            self.space,
            (0..self.net.n_actions).collect(),
            &mut qte,
            &mut exec_rng,
            self.tau,
        )
    }

    fn baseline_outcome(&self, query: &Query, planning: Micros) -> Result<DecisionOutcome> {
        let identity = self
            .space
            .identity_index()
            .ok_or_else(|| Error::InvalidConfig("option space has no identity option".into()))?;
        // The identity option carries no hints, so no adherence draw occurs.
        let mut exec_rng = derive(self.seed, stream::EXEC, query.id);
        let execution = self
            .table
            .true_execution_time(self.space, query.id, identity, &mut exec_rng)?;
        let total = planning + execution;
        Ok(DecisionOutcome {
            query_id: query.id,
            decided_ro: identity,
            planning,
            execution,
            total,
            viable: total <= self.tau,
            quality: self.table.quality_of(query.id, identity)?,
            termination: TerminationKind::PredictedViable,
            steps: Vec::new(),
            reward: reward(planning, Some(execution), self.tau),
        })
    }
}

/// Label each query with the faster of the two paths (ties go to the
/// baseline, the cheaper machinery).
pub fn label_training_queries<S: Scalar>(
    workload: &[Query],
    setup: &HybridSetup<'_, S>,
) -> Result<Vec<LabeledPoint>> {
    let mut labeled = Vec::with_capacity(workload.len());
    for query in workload {
        let baseline = setup.baseline_outcome(query, Micros::ZERO)?;
        let mdp = setup.mdp_outcome(query)?;
        let label = if mdp.total < baseline.total {
            RouteLabel::Mdp
        } else {
            RouteLabel::Baseline
        };
        let mut feature_rng = derive(setup.seed, stream::FEATURES, query.id);
        labeled.push(LabeledPoint {
            features: extract_features(query, &setup.qte_profile, &mut feature_rng),
            label,
        });
    }
    Ok(labeled)
}

/// Route one query: classify it, then either run the learned rewriter (the
/// classifier's cost joins the planning time) or send the original query
/// straight to the database.
pub fn hybrid_route<S: Scalar>(
    query: &Query,
    model: &KnnModel,
    setup: &HybridSetup<'_, S>,
) -> Result<DecisionOutcome> {
    let mut feature_rng = derive(setup.seed, stream::FEATURES, query.id);
    let features = extract_features(query, &setup.qte_profile, &mut feature_rng);
    match classify(model, &features)? {
        RouteLabel::Baseline => setup.baseline_outcome(query, setup.classifier_cost),
        RouteLabel::Mdp => {
            let mut outcome = setup.mdp_outcome(query)?;
            outcome.planning += setup.classifier_cost;
            outcome.total += setup.classifier_cost;
            outcome.viable = outcome.total <= setup.tau;
            outcome.reward = reward(outcome.planning, Some(outcome.execution), setup.tau);
            Ok(outcome)
        }
    }
}
