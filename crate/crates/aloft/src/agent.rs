//! Q-learning machinery: replay buffer, epsilon-greedy action selection,
//! TD targets from a frozen copy of the network, and the per-step training
//! update.
//!
//! The learner holds two parameter sets. `params` is updated every training
//! step; `target` is a frozen copy used to compute TD targets, replaced by a
//! fresh copy exactly when the completed update count reaches a multiple of
//! `target_sync_every`.

use crate::env::Action;
use crate::net::{q_forward, NetConfig, QNetworkParams};
use crate::optim::{OptimError, Optimizer, OptimizerKind};
use crate::tensor::{Tape, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// One stored experience: the observation window that preceded the action
/// and the window that followed it. Frames are shared, not copied, since
/// consecutive windows overlap in all but one frame.
#[derive(Debug, Clone)]
pub struct Transition {
    pub window: Vec<Arc<Vec<f64>>>,
    pub action: Action,
    pub reward: f64,
    pub next_window: Vec<Arc<Vec<f64>>>,
    pub done: bool,
}

/// FIFO experience store sampled uniformly with replacement.
#[derive(Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `batch` transitions drawn uniformly, with replacement.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition> {
        assert!(!self.items.is_empty(), "sample from empty replay buffer");
        (0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// Training hyperparameters for the Q-learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Copy the online network into the target network every this many
    /// completed updates.
    pub target_sync_every: usize,
    /// Observation frames per network input window.
    pub window_len: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon anneals linearly.
    pub anneal_steps: usize,
    pub replay_capacity: usize,
    /// Minimum buffered transitions before updates begin.
    pub warmup_steps: usize,
    /// Run one update every this many environment steps.
    pub train_every: usize,
    pub optimizer: OptimizerKind,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            batch_size: 32,
            learning_rate: 1e-4,
            target_sync_every: 400,
            window_len: 10,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            anneal_steps: 20_000,
            replay_capacity: 50_000,
            warmup_steps: 1_000,
            train_every: 1,
            optimizer: OptimizerKind::adam(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AgentError::Config(format!(
                "gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
        {
            return Err(AgentError::Config("epsilon must be in [0, 1]".into()));
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(AgentError::Config(format!(
                "epsilon_end {} exceeds epsilon_start {}",
                self.epsilon_end, self.epsilon_start
            )));
        }
        if self.batch_size == 0 || self.window_len == 0 || self.anneal_steps == 0 {
            return Err(AgentError::Config(
                "batch_size, window_len, and anneal_steps must be positive".into(),
            ));
        }
        if self.target_sync_every == 0 || self.train_every == 0 {
            return Err(AgentError::Config(
                "target_sync_every and train_every must be positive".into(),
            ));
        }
        if self.replay_capacity < self.batch_size {
            return Err(AgentError::Config(format!(
                "replay_capacity {} is below batch_size {}",
                self.replay_capacity, self.batch_size
            )));
        }
        if self.warmup_steps < self.batch_size {
            return Err(AgentError::Config(format!(
                "warmup_steps {} is below batch_size {}",
                self.warmup_steps, self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(AgentError::Config("learning_rate must be finite".into()));
        }
        Ok(())
    }

    /// Exploration rate after `env_step` environment steps: linear from
    /// `epsilon_start` to `epsilon_end` over `anneal_steps`, then flat.
    /// Both endpoints are hit exactly.
    pub fn epsilon_at(&self, env_step: usize) -> f64 {
        let frac = (env_step as f64 / self.anneal_steps as f64).min(1.0);
        self.epsilon_start * (1.0 - frac) + self.epsilon_end * frac
    }
}

/// Turns stored frames into the `[C, H, W]` tensors the network consumes.
pub fn window_tensors(
    config: &NetConfig,
    frames: &[Arc<Vec<f64>>],
) -> Result<Vec<Tensor>, TensorError> {
    let shape = vec![config.in_channels, config.in_height, config.in_width];
    frames
        .iter()
        .map(|f| Tensor::from_shared(shape.clone(), f.clone()))
        .collect()
}

/// Greedy action under `params`, ties broken toward the lowest index.
pub fn greedy_action(
    params: &QNetworkParams,
    window: &[Tensor],
) -> Result<Action, AgentError> {
    let mut tape = Tape::new();
    let out = q_forward(&mut tape, params, window)?;
    let q = out.q.data();
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    Action::from_index(best).ok_or_else(|| {
        AgentError::Config(format!("network produced {} outputs", q.len()))
    })
}

/// Epsilon-greedy action selection. Always consumes one uniform draw for
/// the explore/exploit coin; an exploring step consumes one more for the
/// action choice.
pub fn act(
    params: &QNetworkParams,
    window: &[Tensor],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Action, AgentError> {
    let coin: f64 = rng.gen();
    if coin < epsilon {
        let i = rng.gen_range(0..Action::COUNT);
        Ok(Action::from_index(i).expect("index within Action::COUNT"))
    } else {
        greedy_action(params, window)
    }
}

/// TD targets for a batch: the plain reward for terminal transitions,
/// otherwise reward plus the discounted best next-state value under the
/// frozen target network. No gradients flow through this path.
pub fn compute_targets(
    target: &QNetworkParams,
    batch: &[&Transition],
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    let mut out = Vec::with_capacity(batch.len());
    for t in batch {
        if t.done {
            out.push(t.reward);
            continue;
        }
        let window = window_tensors(&target.config, &t.next_window)?;
        let mut tape = Tape::new();
        let q = q_forward(&mut tape, target, &window)?;
        let best = q
            .q
            .data()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(t.reward + gamma * best);
    }
    Ok(out)
}

/// Mean squared TD error over a batch. `params` should be tracked on `tape`
/// for the loss to be differentiable; `targets` enter as constants.
pub fn td_loss(
    tape: &mut Tape,
    params: &QNetworkParams,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<Tensor, AgentError> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(AgentError::Config(format!(
            "batch of {} transitions with {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let mut chosen = Vec::with_capacity(batch.len());
    for t in batch {
        let window = window_tensors(&params.config, &t.window)?;
        let out = q_forward(tape, params, &window)?;
        chosen.push(tape.index(&out.q, t.action.index())?);
    }
    let refs: Vec<&Tensor> = chosen.iter().collect();
    let q = tape.concat0(&refs)?;
    let target = Tensor::new(vec![targets.len()], targets.to_vec())?;
    let diff = tape.sub(&q, &target)?;
    let sq = tape.mul(&diff, &diff)?;
    let total = tape.sum(&sq);
    Ok(tape.scale(&total, 1.0 / batch.len() as f64))
}

/// Result of one [`Learner::train_step`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome {
    /// Buffer below the warm-up threshold; nothing changed.
    Skipped,
    Stepped {
        loss: f64,
        /// Whether this update ended with a target-network sync.
        synced: bool,
    },
}

pub struct Learner {
    pub params: QNetworkParams,
    pub target: QNetworkParams,
    pub config: AgentConfig,
    opt: Optimizer,
    updates: usize,
}

impl Learner {
    pub fn new(params: QNetworkParams, config: AgentConfig) -> Result<Learner, AgentError> {
        config.validate()?;
        if params.config.window != config.window_len {
            return Err(AgentError::Config(format!(
                "network window {} does not match agent window_len {}",
                params.config.window, config.window_len
            )));
        }
        let opt = Optimizer::new(config.optimizer, config.learning_rate);
        Ok(Learner {
            target: params.clone(),
            params,
            config,
            opt,
            updates: 0,
        })
    }

    /// Completed optimizer updates.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One training update: sample a batch, build TD targets from the frozen
    /// network, descend the TD loss, and sync the target network when the
    /// update count hits a multiple of `target_sync_every`. Returns
    /// [`TrainOutcome::Skipped`] while the buffer is below warm-up.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainOutcome, AgentError> {
        if buffer.len() < self.config.warmup_steps || buffer.len() < self.config.batch_size {
            return Ok(TrainOutcome::Skipped);
        }
        let batch = buffer.sample(self.config.batch_size, rng);
        let targets = compute_targets(&self.target, &batch, self.config.gamma)?;

        let mut tape = Tape::new();
        let tracked = self.params.track(&mut tape);
        let loss = td_loss(&mut tape, &tracked, &batch, &targets)?;
        let grads = tape.backward(&loss)?;

        let mut grad_list: Vec<Vec<f64>> = Vec::new();
        let mut grad_err = None;
        tracked.visit(&mut |_, t| match grads.wrt(t) {
            Ok(g) => grad_list.push(g.data().to_vec()),
            Err(e) => grad_err = Some(e),
        });
        if let Some(e) = grad_err {
            return Err(e.into());
        }

        self.opt.begin_step(grad_list.len())?;
        let mut slot = 0;
        let mut opt_err = None;
        let opt = &mut self.opt;
        self.params.visit_mut(&mut |name, t| {
            if opt_err.is_none() {
                if let Err(e) = opt.apply(slot, name, t, &grad_list[slot]) {
                    opt_err = Some(e);
                }
            }
            slot += 1;
        });
        if let Some(e) = opt_err {
            return Err(e.into());
        }

        self.updates += 1;
        let synced = self.updates % self.config.target_sync_every == 0;
        if synced {
            self.target = self.params.clone();
        }
        Ok(TrainOutcome::Stepped {
            loss: loss.item(),
            synced,
        })
    }
}

/// One-step tabular Q-learning update for small discrete MDPs:
/// `q[s][a] += alpha * (target - q[s][a])` with the usual bootstrapped
/// target.
pub fn tabular_q_update(
    q: &mut [Vec<f64>],
    s: usize,
    a: usize,
    reward: f64,
    s_next: usize,
    done: bool,
    alpha: f64,
    gamma: f64,
) {
    let target = if done {
        reward
    } else {
        let best = q[s_next]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        reward + gamma * best
    };
    q[s][a] += alpha * (target - q[s][a]);
}
