//! Online decision procedures: greedy rewriting with a trained policy, and
//! the one-stage / two-stage quality-aware rewriters.
//!
//! The greedy loop repeatedly estimates the unexplored option with the
//! highest Q-value. It stops the moment an estimate fits the remaining
//! budget (predicted viable), or when time runs out, or when every option
//! has been tried; in the latter two cases it falls back to the fastest
//! estimate collected in time, and to the identity option when none was.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{check_termination, greedy_action, reward, Episode, TerminationKind};
use crate::qnet::QNetwork;
use crate::qte::{StatCache, TimeEstimator};
use crate::scalar::Scalar;
use crate::sim_env::PlanTimeTable;
use crate::time::Micros;
use crate::workload::{Query, RoSpace};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    /// Global rewrite-option index explored.
    pub action: usize,
    pub t_est_ms: f64,
    pub cost_ms: f64,
    pub e_after_ms: f64,
}

/// The result of planning and executing one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub query_id: u64,
    /// Global index of the decided rewrite option.
    pub decided_ro: usize,
    /// Planning time spent exploring estimates.
    pub planning: Micros,
    /// Actual execution time of the decided option.
    pub execution: Micros,
    pub total: Micros,
    /// Whether planning plus execution fit the budget.
    pub viable: bool,
    pub quality: f64,
    pub termination: TerminationKind,
    pub steps: Vec<TraceStep>,
    /// Terminal time reward, kept for logging.
    pub reward: f64,
}

impl DecisionOutcome {
    /// The rewritten query this outcome decided on.
    pub fn decided_rq(&self) -> crate::workload::RewrittenQuery {
        crate::workload::RewrittenQuery::new(self.query_id, self.decided_ro)
    }

    /// Explored option indexes in order.
    pub fn path(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn trace_record(&self) -> TraceRecord<'_> {
        TraceRecord {
            query_id: self.query_id,
            steps: &self.steps,
            termination: self.termination,
            decided_ro: self.decided_ro,
            reward: self.reward,
        }
    }

    /// One JSON line for trace files.
    pub fn trace_json(&self) -> String {
        serde_json::to_string(&self.trace_record()).expect("trace serializes")
    }
}

#[derive(Debug, Serialize)]
pub struct TraceRecord<'a> {
    pub query_id: u64,
    pub steps: &'a [TraceStep],
    pub termination: TerminationKind,
    pub decided_ro: usize,
    pub reward: f64,
}

/// Estimates usable for the fallback decision. An out-of-time episode's
/// final estimate arrived past the deadline and is not usable.
fn eligible_estimates(episode: &Episode, kind: TerminationKind) -> Vec<(usize, Micros)> {
    let explored: &[usize] = match kind {
        TerminationKind::OutOfTime => {
            &episode.explored[..episode.explored.len().saturating_sub(1)]
        }
        _ => &episode.explored,
    };
    explored
        .iter()
        .map(|&local| (episode.global_index(local), episode.state.est_times[local]))
        .collect()
}

fn argmin_estimate(candidates: &[(usize, Micros)]) -> Option<usize> {
    candidates
        .iter()
        .min_by_key(|(global, t)| (*t, *global))
        .map(|(global, _)| *global)
}

/// Resolve the decided option for a terminated episode: the last action if
/// its estimate was predicted viable, otherwise the minimum estimate
/// collected in time, otherwise the identity option.
pub fn decide_ro(episode: &Episode, kind: TerminationKind, space: &RoSpace) -> usize {
    if kind == TerminationKind::PredictedViable {
        let last = *episode.explored.last().expect("terminated episode explored");
        return episode.global_index(last);
    }
    let eligible = eligible_estimates(episode, kind);
    if let Some(best) = argmin_estimate(&eligible) {
        return best;
    }
    if let Some(identity) = space.identity_index() {
        return identity;
    }
    // No identity in this subspace: take the best estimate even if late.
    let all: Vec<(usize, Micros)> = episode
        .explored
        .iter()
        .map(|&local| (episode.global_index(local), episode.state.est_times[local]))
        .collect();
    argmin_estimate(&all).expect("terminated episode explored at least one option")
}

struct EpisodeRun {
    episode: Episode,
    kind: TerminationKind,
    steps: Vec<TraceStep>,
}

/// Greedy rollout (the online policy never explores randomly).
fn run_greedy<S: Scalar>(
    query_id: u64,
    net: &QNetwork<S>,
    slots: Vec<usize>,
    qte: &mut impl TimeEstimator,
    tau: Micros,
    initial_elapsed: Micros,
    cache: StatCache,
) -> Result<EpisodeRun> {
    if net.n_actions != slots.len() {
        return Err(Error::ShapeMismatch {
            expected: slots.len(),
            got: net.n_actions,
        });
    }
    let mut episode = Episode::start(query_id, slots, qte, initial_elapsed, cache)?;
    let mut steps = Vec::new();
    loop {
        let qvalues = net.forward(&episode.state.normalized(tau))?;
        let action = greedy_action(&qvalues, &episode.remaining)?;
        let t_est = episode.transition(action, qte)?;
        steps.push(TraceStep {
            action: episode.global_index(action.0),
            t_est_ms: t_est.as_ms_f64(),
            cost_ms: episode.state.est_costs[action.0].as_ms_f64(),
            e_after_ms: episode.state.elapsed.as_ms_f64(),
        });
        if let Some(kind) = check_termination(&episode, Some(t_est), tau) {
            episode.termination = Some(kind);
            return Ok(EpisodeRun {
                episode,
                kind,
                steps,
            });
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish<R: Rng + ?Sized>(
    query_id: u64,
    decided: usize,
    planning: Micros,
    kind: TerminationKind,
    steps: Vec<TraceStep>,
    table: &PlanTimeTable,
    space: &RoSpace,
    exec_rng: &mut R,
    tau: Micros,
) -> Result<DecisionOutcome> {
    let execution = table.true_execution_time(space, query_id, decided, exec_rng)?;
    let quality = table.quality_of(query_id, decided)?;
    let total = planning + execution;
    Ok(DecisionOutcome {
        query_id,
        decided_ro: decided,
        planning,
        execution,
        total,
        viable: total <= tau,
        quality,
        termination: kind,
        steps,
        reward: reward(planning, Some(execution), tau),
    })
}

/// Rewrite one query online with a trained policy over `slots` (usually the
/// whole option space). Explores greedily by Q-value, terminates per the
/// planning MDP, then executes the decided option against the environment.
#[allow(clippy::too_many_arguments)]
pub fn rewrite_online<S: Scalar, R: Rng + ?Sized>(
    query: &Query,
    net: &QNetwork<S>,
    table: &PlanTimeTable,
    space: &RoSpace,
    slots: Vec<usize>,
    qte: &mut impl TimeEstimator,
    exec_rng: &mut R,
    tau: Micros,
) -> Result<DecisionOutcome> {
    let run = run_greedy(
        query.id,
        net,
        slots,
        qte,
        tau,
        Micros::ZERO,
        StatCache::new(),
    )?;
    let decided = decide_ro(&run.episode, run.kind, space);
    finish(
        query.id,
        decided,
        run.episode.state.elapsed,
        run.kind,
        run.steps,
        table,
        space,
        exec_rng,
        tau,
    )
}

/// One-stage quality-aware rewriting: a single agent trained with the
/// quality-weighted reward plans over the combined hint-and-approximation
/// space. Identical control flow to [`rewrite_online`].
#[allow(clippy::too_many_arguments)]
pub fn one_stage_rewrite<S: Scalar, R: Rng + ?Sized>(
    query: &Query,
    quality_net: &QNetwork<S>,
    table: &PlanTimeTable,
    space: &RoSpace,
    qte: &mut impl TimeEstimator,
    exec_rng: &mut R,
    tau: Micros,
) -> Result<DecisionOutcome> {
    rewrite_online(
        query,
        quality_net,
        table,
        space,
        (0..space.len()).collect(),
        qte,
        exec_rng,
        tau,
    )
}

/// Two-stage quality-aware rewriting: exhaust the pure-hint options first;
/// only if that finds nothing viable with budget left does a second agent
/// plan over the approximate options, inheriting the elapsed time and the
/// statistics collected so far.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_rewrite<S: Scalar, R: Rng + ?Sized>(
    query: &Query,
    hint_net: &QNetwork<S>,
    quality_net: &QNetwork<S>,
    table: &PlanTimeTable,
    space: &RoSpace,
    qte: &mut impl TimeEstimator,
    exec_rng: &mut R,
    tau: Micros,
) -> Result<DecisionOutcome> {
    let hint_slots: Vec<usize> = (0..space.pure_hint_count()).collect();
    let approx_slots: Vec<usize> = (space.pure_hint_count()..space.len()).collect();
    if approx_slots.is_empty() {
        return Err(Error::InvalidConfig(
            "two-stage rewriting needs approximation options in the space".into(),
        ));
    }

    let stage1 = run_greedy(
        query.id,
        hint_net,
        hint_slots,
        qte,
        tau,
        Micros::ZERO,
        StatCache::new(),
    )?;
    if stage1.kind != TerminationKind::Exhausted {
        let decided = decide_ro(&stage1.episode, stage1.kind, space);
        return finish(
            query.id,
            decided,
            stage1.episode.state.elapsed,
            stage1.kind,
            stage1.steps,
            table,
            space,
            exec_rng,
            tau,
        );
    }

    // Exhausted with budget left: hand elapsed time and statistics to the
    // quality-aware agent over the approximate options.
    let stage2 = run_greedy(
        query.id,
        quality_net,
        approx_slots,
        qte,
        tau,
        stage1.episode.state.elapsed,
        stage1.episode.cache.clone(),
    )?;
    let mut steps = stage1.steps;
    steps.extend(stage2.steps);

    let decided = if stage2.kind == TerminationKind::PredictedViable {
        let last = *stage2.episode.explored.last().expect("explored");
        stage2.episode.global_index(last)
    } else {
        // Fall back to the fastest usable estimate from either stage;
        // stage-one estimates were all collected within the budget.
        let mut candidates = eligible_estimates(&stage1.episode, stage1.kind);
        candidates.extend(eligible_estimates(&stage2.episode, stage2.kind));
        argmin_estimate(&candidates)
            .or(space.identity_index())
            .expect("stage one explored every hint option")
    };
    finish(
        query.id,
        decided,
        stage2.episode.state.elapsed,
        stage2.kind,
        steps,
        table,
        space,
        exec_rng,
        tau,
    )
}
