//! The Q-network policy and its training loop.
//!
//! Architecture: input (E, C_1..C_n, T_1..T_n) of width 2n+1, two fully
//! connected hidden layers of the same width with ReLU, and a linear output
//! of one Q-value per rewrite option. Training is plain deep Q-learning:
//! epsilon-greedy rollouts stored in a FIFO replay memory, one SGD step on a
//! random sample after each query, Bellman targets against the current
//! network, and hold-out validation to pick the checkpoint to keep.

pub mod checkpoint;

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    check_termination, quality_reward, reward, select_action, Episode, QualityRewardConfig,
};
use crate::qte::{QteProfile, SimQte, StatCache, StatCostModel};
use crate::rewriter::{decide_ro, rewrite_online};
use crate::rng::{derive, mix, stream};
use crate::scalar::Scalar;
use crate::sim_env::PlanTimeTable;
use crate::time::Micros;
use crate::workload::{Query, RoSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<S>,
    pub biases: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| S::from_f64_lossy(rng.random_range(-limit..limit)))
            .collect();
        Layer {
            in_dim,
            out_dim,
            weights,
            biases: vec![S::zero(); out_dim],
        }
    }

    fn affine(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc = acc + *w * *xi;
            }
            out.push(acc);
        }
    }
}

/// MLP mapping the normalized state to one Q-value per rewrite option.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<S> {
    pub layers: Vec<Layer<S>>,
    pub n_actions: usize,
    /// Budget the input normalization was trained against.
    pub tau: Micros,
}

impl<S: Scalar> QNetwork<S> {
    pub fn new(n_actions: usize, tau: Micros, seed: u64) -> Self {
        let width = 2 * n_actions + 1;
        let mut rng = derive(seed, stream::NET_INIT, 0);
        QNetwork {
            layers: vec![
                Layer::new(width, width, &mut rng),
                Layer::new(width, width, &mut rng),
                Layer::new(width, n_actions, &mut rng),
            ],
            n_actions,
            tau,
        }
    }

    pub fn input_width(&self) -> usize {
        2 * self.n_actions + 1
    }

    /// Affine-ReLU-affine-ReLU-affine.
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        if input.len() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: self.input_width(),
                got: input.len(),
            });
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if li + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    if *v < S::zero() {
                        *v = S::zero();
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping pre-activation values per layer for backprop.
    fn forward_trace(&self, input: &[S]) -> (Vec<Vec<S>>, Vec<Vec<S>>) {
        let mut activations = vec![input.to_vec()];
        let mut pre_acts = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(activations.last().expect("input"), &mut z);
            pre_acts.push(z.clone());
            if li + 1 < self.layers.len() {
                for v in z.iter_mut() {
                    if *v < S::zero() {
                        *v = S::zero();
                    }
                }
            }
            activations.push(z);
        }
        (activations, pre_acts)
    }
}

/// One replayable step: normalized state, the option explored, the
/// normalized next state, the reward observed, and whether the episode
/// ended there. Non-terminal rewards are always zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experience<S> {
    pub state: Vec<S>,
    pub action: usize,
    pub next_state: Vec<S>,
    pub reward: S,
    pub terminal: bool,
}

/// Bounded FIFO buffer of experiences.
#[derive(Debug, Clone)]
pub struct ReplayMemory<S> {
    buf: VecDeque<Experience<S>>,
    capacity: usize,
}

impl<S: Scalar> ReplayMemory<S> {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            buf: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        }
    }

    pub fn push(&mut self, exp: Experience<S>) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(exp);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience<S>> {
        self.buf.iter()
    }

    /// Up to `k` distinct experiences, uniformly without replacement.
    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<&Experience<S>> {
        let n = self.buf.len();
        if k >= n {
            return self.buf.iter().collect();
        }
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        idx[..k].iter().map(|&i| &self.buf[i]).collect()
    }
}

/// Bellman regression target: the reward alone for terminal steps,
/// otherwise reward plus the discounted best next Q-value over options
/// still unexplored in the next state (an option cannot be taken twice).
pub fn bellman_target<S: Scalar>(exp: &Experience<S>, net: &QNetwork<S>, gamma: f64) -> Result<S> {
    if exp.terminal {
        return Ok(exp.reward);
    }
    let n = net.n_actions;
    let qs = net.forward(&exp.next_state)?;
    let mut best: Option<S> = None;
    for (j, &q) in qs.iter().enumerate() {
        let unexplored = exp.next_state[n + 1 + j] == S::zero();
        if unexplored {
            best = Some(match best {
                Some(b) if b >= q => b,
                _ => q,
            });
        }
    }
    Ok(match best {
        Some(b) => exp.reward + S::from_f64_lossy(gamma) * b,
        None => exp.reward,
    })
}

/// Parameter gradients with the same shapes as the network layers.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub layers: Vec<(Vec<S>, Vec<S>)>,
}

/// Mean squared TD error of a batch against frozen targets.
pub fn td_loss<S: Scalar>(
    net: &QNetwork<S>,
    batch: &[&Experience<S>],
    targets: &[S],
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut acc = S::zero();
    for (exp, &y) in batch.iter().zip(targets) {
        let q = net.forward(&exp.state)?[exp.action];
        let d = q - y;
        acc = acc + d * d;
    }
    Ok(acc / S::from_f64_lossy(batch.len() as f64))
}

/// Analytic gradients of [`td_loss`] with respect to every weight and bias.
pub fn gradients<S: Scalar>(
    net: &QNetwork<S>,
    batch: &[&Experience<S>],
    targets: &[S],
) -> Result<(Gradients<S>, S)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut grads: Vec<(Vec<S>, Vec<S>)> = net
        .layers
        .iter()
        .map(|l| (vec![S::zero(); l.weights.len()], vec![S::zero(); l.out_dim]))
        .collect();
    let batch_n = S::from_f64_lossy(batch.len() as f64);
    let mut loss = S::zero();

    for (exp, &y) in batch.iter().zip(targets) {
        if exp.state.len() != net.input_width() {
            return Err(Error::ShapeMismatch {
                expected: net.input_width(),
                got: exp.state.len(),
            });
        }
        let (acts, pre) = net.forward_trace(&exp.state);
        let out = acts.last().expect("output");
        let diff = out[exp.action] - y;
        loss = loss + diff * diff;

        // d(mean loss)/d(out[action]) = 2 * diff / batch
        let two = S::from_f64_lossy(2.0);
        let mut delta = vec![S::zero(); out.len()];
        delta[exp.action] = two * diff / batch_n;

        for li in (0..net.layers.len()).rev() {
            let layer = &net.layers[li];
            let input = &acts[li];
            let (gw, gb) = &mut grads[li];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d == S::zero() {
                    continue;
                }
                gb[o] = gb[o] + d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g = *g + d * *xi;
                }
            }
            if li == 0 {
                break;
            }
            // Propagate through the layer, then through the previous ReLU.
            let mut prev = vec![S::zero(); layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p = *p + d * *w;
                }
            }
            for (p, z) in prev.iter_mut().zip(&pre[li - 1]) {
                if *z <= S::zero() {
                    *p = S::zero();
                }
            }
            delta = prev;
        }
    }
    Ok((Gradients { layers: grads }, loss / batch_n))
}

/// One SGD step on the batch: targets are computed with the current network
/// and frozen, then every parameter moves against the analytic gradient.
/// Returns the pre-step mean loss.
pub fn sgd_update<S: Scalar>(
    net: &mut QNetwork<S>,
    batch: &[&Experience<S>],
    gamma: f64,
    learning_rate: f64,
) -> Result<S> {
    let targets: Vec<S> = batch
        .iter()
        .map(|e| bellman_target(e, net, gamma))
        .collect::<Result<_>>()?;
    let (grads, loss) = gradients(net, batch, &targets)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let lr = S::from_f64_lossy(learning_rate);
    for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
        for (w, g) in layer.weights.iter_mut().zip(gw) {
            *w = *w - lr * *g;
        }
        for (b, g) in layer.biases.iter_mut().zip(gb) {
            *b = *b - lr * *g;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative epsilon decay applied per episode.
    pub epsilon_decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub max_epochs: usize,
    /// Stop once the epoch reward improves by less than this fraction for
    /// `convergence_window` consecutive epochs.
    pub convergence_threshold: f64,
    pub convergence_window: usize,
    pub seed: u64,
    /// Quality-aware reward weighting; absent means the pure time reward.
    #[serde(default)]
    pub quality: Option<QualityRewardConfig>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            gamma: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.995,
            learning_rate: 1e-3,
            batch_size: 32,
            replay_capacity: 10_000,
            max_epochs: 200,
            convergence_threshold: 0.01,
            convergence_window: 3,
            seed: 0,
            quality: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.gamma) {
            return Err(Error::InvalidConfig("gamma must be in [0, 1]".into()));
        }
        if !in_unit(self.epsilon_start) || !in_unit(self.epsilon_end) {
            return Err(Error::InvalidConfig("epsilon must be in [0, 1]".into()));
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::InvalidConfig(
                "epsilon_end must not exceed epsilon_start".into(),
            ));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::InvalidConfig("epsilon_decay must be in (0, 1]".into()));
        }
        if self.convergence_threshold <= 0.0 {
            return Err(Error::InvalidConfig(
                "convergence_threshold must be > 0".into(),
            ));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, replay_capacity, and max_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Everything an agent trains against.
pub struct TrainSetup<'a> {
    pub space: &'a RoSpace,
    pub table: &'a PlanTimeTable,
    /// Net action index -> global option index.
    pub slots: Vec<usize>,
    pub qte_profile: QteProfile,
    pub cost_model: StatCostModel,
    pub tau: Micros,
    /// Episodes start with this much planning time already spent (the
    /// two-stage rewriter's second stage inherits stage-one time).
    pub initial_elapsed: Micros,
    /// Episodes start with every statistic already cached.
    pub prefill_statistics: bool,
}

impl<'a> TrainSetup<'a> {
    pub fn new(
        space: &'a RoSpace,
        table: &'a PlanTimeTable,
        qte_profile: QteProfile,
        cost_model: StatCostModel,
        tau: Micros,
    ) -> Self {
        TrainSetup {
            slots: (0..space.len()).collect(),
            space,
            table,
            qte_profile,
            cost_model,
            tau,
            initial_elapsed: Micros::ZERO,
            prefill_statistics: false,
        }
    }

    fn start_cache(&self) -> StatCache {
        if self.prefill_statistics {
            StatCache::full(self.space.attr_names().len())
        } else {
            StatCache::new()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total_reward: f64,
    pub mean_loss: f64,
    pub epsilon: f64,
    pub val_vqp: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult<S> {
    /// The checkpoint with the best validation VQP (the final network when
    /// no validation queries were given).
    pub net: QNetwork<S>,
    pub log: Vec<EpochStats>,
    pub best_val_vqp: f64,
    pub best_epoch: usize,
}

impl<S> TrainResult<S> {
    /// Training log as CSV: epoch,total_reward,mean_loss,epsilon,val_vqp.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,total_reward,mean_loss,epsilon,val_vqp\n");
        for row in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.epoch, row.total_reward, row.mean_loss, row.epsilon, row.val_vqp
            ));
        }
        out
    }
}

/// Train an agent over the workload: shuffle the queries each epoch, roll
/// out epsilon-greedy episodes, store the experiences, take one SGD step on
/// a replay sample after each query, and stop on reward convergence or the
/// epoch cap. Returns the checkpoint scoring the best validation VQP.
pub fn train_agent<S: Scalar>(
    train: &[Query],
    validation: &[Query],
    setup: &TrainSetup<'_>,
    cfg: &TrainingConfig,
) -> Result<TrainResult<S>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training workload is empty".into()));
    }
    if setup.tau.is_zero() {
        return Err(Error::InvalidConfig("time budget must be > 0".into()));
    }
    setup.table.check_coverage(train, setup.space.len())?;
    setup.table.check_coverage(validation, setup.space.len())?;
    for &g in &setup.slots {
        if g >= setup.space.len() {
            return Err(Error::ShapeMismatch {
                expected: setup.space.len(),
                got: g,
            });
        }
    }

    let n = setup.slots.len();
    let mut net: QNetwork<S> = QNetwork::new(n, setup.tau, mix(cfg.seed, stream::NET_INIT, 0));
    let mut replay: ReplayMemory<S> = ReplayMemory::new(cfg.replay_capacity);
    let mut qte = SimQte::new(
        setup.space,
        setup.table,
        setup.qte_profile.clone(),
        setup.cost_model.clone(),
        mix(cfg.seed, stream::QTE, 1),
    )?;
    let mut shuffle_rng = derive(cfg.seed, stream::SHUFFLE, 0);
    let mut policy_rng = derive(cfg.seed, stream::POLICY, 0);
    let mut replay_rng = derive(cfg.seed, stream::REPLAY, 0);
    let mut exec_rng = derive(cfg.seed, stream::EXEC, 0);

    let mut log = Vec::new();
    let mut best: Option<(QNetwork<S>, f64, usize)> = None;
    let mut episodes = 0u32;
    let mut flat_epochs = 0usize;
    let mut prev_reward: Option<f64> = None;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total_reward = 0.0;
        let mut losses = 0.0;
        let mut updates = 0usize;
        let mut epsilon = cfg.epsilon_start;

        for &qi in &order {
            let query = &train[qi];
            epsilon = (cfg.epsilon_start * cfg.epsilon_decay.powi(episodes as i32))
                .max(cfg.epsilon_end);
            episodes += 1;

            let mut episode = Episode::start(
                query.id,
                setup.slots.clone(),
                &qte,
                setup.initial_elapsed,
                setup.start_cache(),
            )?;
            loop {
                let state_before: Vec<S> = episode.state.normalized(setup.tau);
                let qvalues = net.forward(&state_before)?;
                let action = select_action(&qvalues, &episode.remaining, epsilon, &mut policy_rng)?;
                let t_est = episode.transition(action, &mut qte)?;
                let termination = check_termination(&episode, Some(t_est), setup.tau);
                let mut step_reward = S::zero();
                if let Some(kind) = termination {
                    episode.termination = Some(kind);
                    let decided = decide_ro(&episode, kind, setup.space);
                    let t_hat = setup.table.true_execution_time(
                        setup.space,
                        query.id,
                        decided,
                        &mut exec_rng,
                    )?;
                    step_reward = match &cfg.quality {
                        None => reward(episode.state.elapsed, Some(t_hat), setup.tau),
                        Some(qcfg) => quality_reward(
                            episode.state.elapsed,
                            Some(t_hat),
                            setup.tau,
                            setup.table.quality_of(query.id, decided)?,
                            qcfg,
                        ),
                    };
                    total_reward += step_reward.to_f64_lossy();
                }
                replay.push(Experience {
                    state: state_before,
                    action: action.0,
                    next_state: episode.state.normalized(setup.tau),
                    reward: step_reward,
                    terminal: termination.is_some(),
                });
                if termination.is_some() {
                    break;
                }
            }

            let batch = replay.sample(cfg.batch_size, &mut replay_rng);
            losses += sgd_update(&mut net, &batch, cfg.gamma, cfg.learning_rate)?
                .to_f64_lossy();
            updates += 1;
        }

        let val_vqp = validation_vqp(&net, validation, setup, cfg.seed)?;
        log.push(EpochStats {
            epoch,
            total_reward,
            mean_loss: losses / updates.max(1) as f64,
            epsilon,
            val_vqp,
        });
        match &best {
            Some((_, v, _)) if *v >= val_vqp => {}
            _ => best = Some((net.clone(), val_vqp, epoch)),
        }

        if let Some(prev) = prev_reward {
            let improvement = (total_reward - prev) / prev.abs().max(1e-9);
            if improvement < cfg.convergence_threshold {
                flat_epochs += 1;
            } else {
                flat_epochs = 0;
            }
            if flat_epochs >= cfg.convergence_window {
                break;
            }
        }
        prev_reward = Some(total_reward);
    }

    let (snapshot, best_val_vqp, best_epoch) = match best {
        Some(b) if !validation.is_empty() => b,
        _ => (net, 0.0, log.len().saturating_sub(1)),
    };
    Ok(TrainResult {
        net: snapshot,
        log,
        best_val_vqp,
        best_epoch,
    })
}

fn validation_vqp<S: Scalar>(
    net: &QNetwork<S>,
    validation: &[Query],
    setup: &TrainSetup<'_>,
    seed: u64,
) -> Result<f64> {
    if validation.is_empty() {
        return Ok(0.0);
    }
    let mut viable = 0usize;
    for query in validation {
        let mut qte = SimQte::for_query(
            setup.space,
            setup.table,
            setup.qte_profile.clone(),
            setup.cost_model.clone(),
            mix(seed, stream::QTE, 2),
            query.id,
        )?;
        let mut exec_rng = derive(seed, stream::EXEC, query.id | 1 << 63);
        let outcome = rewrite_online(
            query,
            net,
            setup.table,
            setup.space,
            setup.slots.clone(),
            &mut qte,
            &mut exec_rng,
            setup.tau,
        )?;
        if outcome.viable {
            viable += 1;
        }
    }
    Ok(viable as f64 / validation.len() as f64)
}
