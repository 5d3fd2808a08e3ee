//! The planning MDP: states, transitions, rewards, and termination.
//!
//! A state tracks the elapsed planning time E, the predicted estimation
//! cost C_i of every rewrite option, and the estimated execution time T_i of
//! every option explored so far (0 means unexplored). Exploring an option
//! updates all three: the new estimate lands in T, the paid cost replaces
//! the prediction in C, remaining predictions drop as statistics accumulate,
//! and E grows by the actual cost paid.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qte::{StatCache, TimeEstimator};
use crate::scalar::Scalar;
use crate::time::Micros;

/// Normalized state features are clipped at this many budget multiples.
const NORM_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub elapsed: Micros,
    /// Predicted estimation cost per option (actual cost once explored).
    pub est_costs: Vec<Micros>,
    /// Estimated execution time per option; zero until explored.
    pub est_times: Vec<Micros>,
}

impl State {
    pub fn n(&self) -> usize {
        self.est_costs.len()
    }

    pub fn explored(&self, i: usize) -> bool {
        !self.est_times[i].is_zero()
    }

    /// Network input: (E, C_1..C_n, T_1..T_n) divided by the budget and
    /// clipped. Unexplored T entries stay exactly zero.
    pub fn normalized<S: Scalar>(&self, tau: Micros) -> Vec<S> {
        let tau_us = tau.as_us() as f64;
        let norm = |t: Micros| S::from_f64_lossy((t.as_us() as f64 / tau_us).min(NORM_CLIP));
        let mut v = Vec::with_capacity(2 * self.n() + 1);
        v.push(norm(self.elapsed));
        v.extend(self.est_costs.iter().map(|&c| norm(c)));
        v.extend(self.est_times.iter().map(|&t| norm(t)));
        v
    }
}

/// Initial state: nothing elapsed, offline cost predictions, no estimates.
pub fn initial_state(n: usize, offline_costs: Vec<Micros>) -> Result<State> {
    if n == 0 {
        return Err(Error::InvalidConfig("option space is empty".into()));
    }
    if offline_costs.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: offline_costs.len(),
        });
    }
    Ok(State {
        elapsed: Micros::ZERO,
        est_costs: offline_costs,
        est_times: vec![Micros::ZERO; n],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationKind {
    /// The last estimate fits the remaining budget.
    PredictedViable,
    /// Planning time alone reached the budget.
    OutOfTime,
    /// Every option was explored without a predicted-viable estimate.
    Exhausted,
}

/// One query's planning session. `slots` maps the episode's local action
/// indexes to global option indexes, so an episode can run over a subspace
/// (the two-stage rewriter's second stage does).
#[derive(Debug, Clone)]
pub struct Episode {
    pub query_id: u64,
    pub state: State,
    pub remaining: BTreeSet<usize>,
    pub cache: StatCache,
    pub slots: Vec<usize>,
    /// Local indexes in exploration order.
    pub explored: Vec<usize>,
    pub termination: Option<TerminationKind>,
}

impl Episode {
    /// Fresh episode over `slots`, with offline cost predictions taken from
    /// the estimator under the starting cache.
    pub fn start(
        query_id: u64,
        slots: Vec<usize>,
        qte: &impl TimeEstimator,
        initial_elapsed: Micros,
        cache: StatCache,
    ) -> Result<Episode> {
        let offline: Vec<Micros> = slots
            .iter()
            .map(|&g| qte.predicted_cost(g, &cache))
            .collect();
        let mut state = initial_state(slots.len(), offline)?;
        state.elapsed = initial_elapsed;
        Ok(Episode {
            query_id,
            state,
            remaining: (0..slots.len()).collect(),
            cache,
            slots,
            explored: Vec::new(),
            termination: None,
        })
    }

    pub fn global_index(&self, local: usize) -> usize {
        self.slots[local]
    }

    /// Apply one action: estimate the option, record the estimate and the
    /// cost actually paid, refresh the cost predictions of unexplored
    /// options under the grown statistic cache, and advance the clock.
    /// Returns the new estimate.
    pub fn transition(&mut self, action: Action, qte: &mut impl TimeEstimator) -> Result<Micros> {
        let i = action.0;
        if !self.remaining.contains(&i) {
            return Err(Error::AlreadyExplored(i));
        }
        let out = qte.estimate(self.query_id, self.slots[i], &mut self.cache)?;
        self.state.est_times[i] = out.t_est.max(Micros(1));
        self.state.est_costs[i] = out.actual_cost;
        self.remaining.remove(&i);
        for &j in &self.remaining {
            self.state.est_costs[j] = qte.predicted_cost(self.slots[j], &self.cache);
        }
        self.state.elapsed += out.actual_cost;
        self.explored.push(i);
        Ok(out.t_est)
    }
}

/// Termination check in priority order: a predicted-viable last estimate
/// wins over running out of time, which wins over exhaustion.
pub fn check_termination(
    episode: &Episode,
    last_t_est: Option<Micros>,
    tau: Micros,
) -> Option<TerminationKind> {
    if let Some(t) = last_t_est {
        if episode.state.elapsed + t <= tau {
            return Some(TerminationKind::PredictedViable);
        }
    }
    if episode.state.elapsed >= tau {
        return Some(TerminationKind::OutOfTime);
    }
    if episode.remaining.is_empty() {
        return Some(TerminationKind::Exhausted);
    }
    None
}

/// Terminal reward: (tau - E - T) / tau. Positive iff the total time fits
/// the budget; the faster the decided query, the larger the bonus. `None`
/// marks a non-terminal step and yields zero.
pub fn reward<S: Scalar>(elapsed: Micros, decided_exec: Option<Micros>, tau: Micros) -> S {
    debug_assert!(!tau.is_zero());
    match decided_exec {
        None => S::zero(),
        Some(t_hat) => {
            let tau_s = S::from_micros(tau);
            (tau_s - S::from_micros(elapsed) - S::from_micros(t_hat)) / tau_s
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QualityRewardConfig {
    /// Weight of running time against result quality.
    pub beta: f64,
}

impl QualityRewardConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidConfig(format!("beta {beta} not in [0, 1]")));
        }
        Ok(QualityRewardConfig { beta })
    }
}

/// Quality-aware terminal reward: beta * (tau - E - T)/tau + (1 - beta) * quality.
pub fn quality_reward<S: Scalar>(
    elapsed: Micros,
    decided_exec: Option<Micros>,
    tau: Micros,
    quality: f64,
    cfg: &QualityRewardConfig,
) -> S {
    debug_assert!((0.0..=1.0).contains(&quality));
    match decided_exec {
        None => S::zero(),
        Some(t_hat) => {
            let beta = S::from_f64_lossy(cfg.beta);
            let time_term: S = reward(elapsed, Some(t_hat), tau);
            beta * time_term + (S::one() - beta) * S::from_f64_lossy(quality)
        }
    }
}

/// Highest-Q unexplored action; ties break toward the lowest index.
pub fn greedy_action<S: Scalar>(qvalues: &[S], remaining: &BTreeSet<usize>) -> Result<Action> {
    let mut best = None::<(usize, S)>;
    for &i in remaining {
        let q = qvalues[i];
        match best {
            Some((_, bq)) if q <= bq => {}
            _ => best = Some((i, q)),
        }
    }
    best.map(|(i, _)| Action(i)).ok_or(Error::EmptyActionSet)
}

/// Epsilon-greedy choice restricted to the unexplored set.
pub fn select_action<S: Scalar, R: Rng + ?Sized>(
    qvalues: &[S],
    remaining: &BTreeSet<usize>,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action> {
    if remaining.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let pick = rng.random_range(0..remaining.len());
        return Ok(Action(*remaining.iter().nth(pick).expect("non-empty")));
    }
    greedy_action(qvalues, remaining)
}
