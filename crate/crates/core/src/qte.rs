//! Query time estimation with explicit cost accounting.
//!
//! Estimating a rewritten query costs real planning time: a fixed inference
//! overhead plus a unit cost for each per-attribute selectivity statistic
//! not yet collected this episode. Statistics are shared across options, so
//! estimating one option cheapens later estimates that hint the same
//! attributes.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, stream};
use crate::sim_env::PlanTimeTable;
use crate::time::Micros;
use crate::workload::{RewriteOption, RoSpace};

/// One selectivity statistic per filtering attribute, identified by the
/// attribute's position in the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StatisticId(pub usize);

/// Statistics already collected during the current episode. Grows
/// monotonically; starts empty.
#[derive(Debug, Clone, Default)]
pub struct StatCache {
    collected: BTreeSet<StatisticId>,
}

impl StatCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache pre-filled with every statistic of an `n_attrs` schema.
    pub fn full(n_attrs: usize) -> Self {
        StatCache {
            collected: (0..n_attrs).map(StatisticId).collect(),
        }
    }

    pub fn contains(&self, id: StatisticId) -> bool {
        self.collected.contains(&id)
    }

    pub fn insert(&mut self, id: StatisticId) {
        self.collected.insert(id);
    }

    pub fn len(&self) -> usize {
        self.collected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collected.is_empty()
    }
}

/// The statistics an option's estimate depends on: one per hinted attribute.
/// Approximation rules add none.
pub fn required_statistics(ro: &RewriteOption) -> BTreeSet<StatisticId> {
    ro.hint.hinted_attrs().map(StatisticId).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatCostModel {
    pub unit_cost_ms: f64,
    pub overhead_ms: f64,
}

impl Default for StatCostModel {
    fn default() -> Self {
        StatCostModel {
            unit_cost_ms: 40.0,
            overhead_ms: 10.0,
        }
    }
}

impl StatCostModel {
    pub fn unit_cost(&self) -> Micros {
        Micros::from_ms_f64(self.unit_cost_ms)
    }

    pub fn overhead(&self) -> Micros {
        Micros::from_ms_f64(self.overhead_ms)
    }
}

/// Predicted cost of estimating `ro` given the statistics already cached:
/// overhead plus unit cost per missing statistic.
pub fn predicted_estimation_cost(
    ro: &RewriteOption,
    cache: &StatCache,
    model: &StatCostModel,
) -> Micros {
    let missing = required_statistics(ro)
        .into_iter()
        .filter(|id| !cache.contains(*id))
        .count() as u64;
    model.overhead() + Micros(model.unit_cost().as_us() * missing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QteKind {
    /// Returns the true execution time (oracle estimator).
    Accurate,
    /// Perturbs the truth by multiplicative log-normal error.
    Approximate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QteProfile {
    pub kind: QteKind,
    /// Sigma of the log-normal estimation error (0 for the accurate kind).
    pub sigma: f64,
    /// Whether actual estimation costs deviate from predictions by a
    /// uniform(0.9, 1.3) factor.
    pub cost_noise: bool,
}

impl QteProfile {
    pub fn accurate() -> Self {
        QteProfile {
            kind: QteKind::Accurate,
            sigma: 0.0,
            cost_noise: false,
        }
    }

    pub fn approximate(sigma: f64) -> Self {
        QteProfile {
            kind: QteKind::Approximate,
            sigma,
            cost_noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(Error::InvalidConfig("qte sigma must be >= 0".into()));
        }
        if matches!(self.kind, QteKind::Accurate) && self.sigma != 0.0 {
            return Err(Error::InvalidConfig(
                "accurate qte requires sigma = 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateOutcome {
    pub t_est: Micros,
    pub actual_cost: Micros,
}

/// Anything that can price and produce execution-time estimates. The
/// simulator-backed implementation is [`SimQte`]; tests script exact
/// responses through [`ScriptedQte`].
pub trait TimeEstimator {
    /// Predicted cost of estimating option `ro_index` under `cache`.
    fn predicted_cost(&self, ro_index: usize, cache: &StatCache) -> Micros;

    /// Estimate the execution time of `(query_id, ro_index)`, paying the
    /// actual cost and folding newly collected statistics into `cache`.
    fn estimate(
        &mut self,
        query_id: u64,
        ro_index: usize,
        cache: &mut StatCache,
    ) -> Result<EstimateOutcome>;

    fn n_options(&self) -> usize;
}

/// Estimator realized against the simulated database: estimates are the true
/// table times, optionally blurred by log-normal error.
pub struct SimQte<'a> {
    space: &'a RoSpace,
    table: &'a PlanTimeTable,
    profile: QteProfile,
    model: StatCostModel,
    err_dist: Option<Normal<f64>>,
    rng: ChaCha12Rng,
}

impl<'a> SimQte<'a> {
    pub fn new(
        space: &'a RoSpace,
        table: &'a PlanTimeTable,
        profile: QteProfile,
        model: StatCostModel,
        seed: u64,
    ) -> Result<Self> {
        profile.validate()?;
        let err_dist = if profile.sigma > 0.0 {
            Some(
                Normal::new(0.0, profile.sigma)
                    .map_err(|e| Error::InvalidConfig(format!("qte sigma: {e}")))?,
            )
        } else {
            None
        };
        Ok(SimQte {
            space,
            table,
            profile,
            model,
            err_dist,
            rng: derive(seed, stream::QTE, 0),
        })
    }

    /// Stream for a specific query, keeping per-query estimates independent
    /// of evaluation order.
    pub fn for_query(
        space: &'a RoSpace,
        table: &'a PlanTimeTable,
        profile: QteProfile,
        model: StatCostModel,
        seed: u64,
        query_id: u64,
    ) -> Result<Self> {
        let mut qte = Self::new(space, table, profile, model, seed)?;
        qte.rng = derive(seed, stream::QTE, query_id);
        Ok(qte)
    }
}

impl TimeEstimator for SimQte<'_> {
    fn predicted_cost(&self, ro_index: usize, cache: &StatCache) -> Micros {
        predicted_estimation_cost(self.space.get(ro_index), cache, &self.model)
    }

    fn estimate(
        &mut self,
        query_id: u64,
        ro_index: usize,
        cache: &mut StatCache,
    ) -> Result<EstimateOutcome> {
        let true_time = self.table.time_of(query_id, ro_index)?;
        let base_cost = self.predicted_cost(ro_index, cache);
        for id in required_statistics(self.space.get(ro_index)) {
            cache.insert(id);
        }
        let actual_cost = if self.profile.cost_noise {
            base_cost.scale(self.rng.random_range(0.9..1.3))
        } else {
            base_cost
        };
        let t_est = match &self.err_dist {
            Some(dist) => {
                let eps: f64 = dist.sample(&mut self.rng);
                true_time.scale(eps.exp()).max(Micros(1))
            }
            None => true_time,
        };
        Ok(EstimateOutcome { t_est, actual_cost })
    }

    fn n_options(&self) -> usize {
        self.space.len()
    }
}

/// One scripted estimator response.
#[derive(Debug, Clone)]
pub struct ScriptedStep {
    pub t_est: Micros,
    pub actual_cost: Micros,
    /// Predicted-cost overrides that take effect after this step.
    pub post_costs: Vec<(usize, Micros)>,
    /// Statistics this step collects.
    pub collect: Vec<StatisticId>,
}

/// Estimator that replays a fixed script of responses; used to reproduce
/// worked examples exactly.
pub struct ScriptedQte {
    costs: Vec<Micros>,
    steps: std::collections::VecDeque<ScriptedStep>,
}

impl ScriptedQte {
    pub fn new(initial_costs: Vec<Micros>, steps: Vec<ScriptedStep>) -> Self {
        ScriptedQte {
            costs: initial_costs,
            steps: steps.into(),
        }
    }
}

impl TimeEstimator for ScriptedQte {
    fn predicted_cost(&self, ro_index: usize, _cache: &StatCache) -> Micros {
        self.costs[ro_index]
    }

    fn estimate(
        &mut self,
        _query_id: u64,
        ro_index: usize,
        cache: &mut StatCache,
    ) -> Result<EstimateOutcome> {
        let step = self.steps.pop_front().ok_or(Error::MissingEntry {
            query_id: 0,
            ro_index,
        })?;
        for (i, c) in &step.post_costs {
            self.costs[*i] = *c;
        }
        for id in &step.collect {
            cache.insert(*id);
        }
        Ok(EstimateOutcome {
            t_est: step.t_est,
            actual_cost: step.actual_cost,
        })
    }

    fn n_options(&self) -> usize {
        self.costs.len()
    }
}
