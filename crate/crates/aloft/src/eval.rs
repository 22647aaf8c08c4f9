//! Greedy-policy evaluation: runs episodes in a worker pool, each on its own
//! deterministic random stream, and aggregates steps-until-collision,
//! collision rate, a wobble index, and the action histogram.

use crate::env::{Action, Env, NoiseConfig, SimConfig, WorldMap};
use crate::net::{q_forward, QNetworkParams, Variant};
use crate::rng::{streams, SeedTree};
use crate::run::{observation_frame, FrameWindow, RunError};
use crate::agent::window_tensors;
use crate::tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

/// What drives the drone during evaluation. Learned policies act greedily.
#[derive(Debug, Clone)]
pub enum Policy {
    Greedy(QNetworkParams),
    /// Uniform over the three actions.
    Random,
    /// Always goes straight.
    Straight,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Greedy(p) => match p.config.variant {
                Variant::Dqn => "dqn",
                Variant::Drqn => "drqn",
                Variant::DrqnTa => "drqn_ta",
            },
            Policy::Random => "random",
            Policy::Straight => "straight",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub map: Arc<WorldMap>,
    pub sim: SimConfig,
    /// Sensor degradation matching what the policy saw in training.
    pub noise: Option<NoiseConfig>,
    pub episodes: usize,
}

/// Per-episode evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub steps: usize,
    pub collided: bool,
    pub episode_return: f64,
    /// Action counts indexed by `Action::index()`.
    pub action_counts: [usize; Action::COUNT],
    /// Adjacent action pairs that were opposite turns.
    pub opposite_turn_pairs: usize,
    /// Total adjacent action pairs.
    pub action_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeOutcome>,
    /// Attention weights from the final decision of episode 0, present when
    /// the policy carries temporal attention.
    pub attention: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn mean_steps(&self) -> f64 {
        let n = self.episodes.len() as f64;
        self.episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n
    }

    /// Sample standard deviation (n−1 denominator) of steps-until-collision.
    pub fn std_steps(&self) -> f64 {
        let n = self.episodes.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean_steps();
        let ss: f64 = self
            .episodes
            .iter()
            .map(|e| (e.steps as f64 - mean).powi(2))
            .sum();
        (ss / (n as f64 - 1.0)).sqrt()
    }

    pub fn collision_rate(&self) -> f64 {
        let hits = self.episodes.iter().filter(|e| e.collided).count();
        hits as f64 / self.episodes.len() as f64
    }

    /// Fraction of adjacent action pairs that are opposite turns, pooled
    /// over all episodes. Zero when no episode took two actions.
    pub fn wobble_index(&self) -> f64 {
        let opposite: usize = self.episodes.iter().map(|e| e.opposite_turn_pairs).sum();
        let pairs: usize = self.episodes.iter().map(|e| e.action_pairs).sum();
        if pairs == 0 {
            0.0
        } else {
            opposite as f64 / pairs as f64
        }
    }

    pub fn action_histogram(&self) -> [usize; Action::COUNT] {
        let mut out = [0; Action::COUNT];
        for e in &self.episodes {
            for (slot, count) in out.iter_mut().zip(e.action_counts) {
                *slot += count;
            }
        }
        out
    }
}

fn opposite_turns(a: Action, b: Action) -> bool {
    matches!(
        (a, b),
        (Action::TurnLeft, Action::TurnRight) | (Action::TurnRight, Action::TurnLeft)
    )
}

struct EpisodeRun {
    outcome: EpisodeOutcome,
    attention: Option<Vec<f64>>,
}

fn run_episode(
    spec: &EvalSpec,
    policy: &Policy,
    seed: SeedTree,
    episode: usize,
    capture_attention: bool,
) -> Result<EpisodeRun, RunError> {
    let mut stream = seed.stream(streams::EVAL_BASE + episode as u64);
    let env_rng = ChaCha8Rng::seed_from_u64(stream.gen());
    let mut policy_rng = ChaCha8Rng::seed_from_u64(stream.gen());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(stream.gen());

    let mut env = Env::new(spec.map.clone(), spec.sim.clone(), env_rng)?;
    let window_len = match policy {
        Policy::Greedy(p) => p.config.window,
        _ => 1,
    };
    let mut frames = FrameWindow::new(window_len);
    let obs = env.observe()?;
    frames.reset(observation_frame(
        &obs,
        &spec.sim,
        spec.noise.as_ref().map(|n| (n, &mut noise_rng)),
    ));

    let mut outcome = EpisodeOutcome {
        steps: 0,
        collided: false,
        episode_return: 0.0,
        action_counts: [0; Action::COUNT],
        opposite_turn_pairs: 0,
        action_pairs: 0,
    };
    let mut attention = None;
    let mut prev_action: Option<Action> = None;

    loop {
        let action = match policy {
            Policy::Greedy(params) => {
                let tensors = window_tensors(&params.config, &frames.window())?;
                let mut tape = Tape::new();
                let out = q_forward(&mut tape, params, &tensors)?;
                if capture_attention {
                    if let Some(att) = &out.attention {
                        attention = Some(att.weights.data().to_vec());
                    }
                }
                let q = out.q.data();
                let mut best = 0;
                for (i, &v) in q.iter().enumerate().skip(1) {
                    if v > q[best] {
                        best = i;
                    }
                }
                Action::from_index(best).expect("argmax within action count")
            }
            Policy::Random => {
                let i = policy_rng.gen_range(0..Action::COUNT);
                Action::from_index(i).expect("uniform draw within action count")
            }
            Policy::Straight => Action::GoStraight,
        };

        outcome.action_counts[action.index()] += 1;
        if let Some(prev) = prev_action {
            outcome.action_pairs += 1;
            if opposite_turns(prev, action) {
                outcome.opposite_turn_pairs += 1;
            }
        }
        prev_action = Some(action);

        let result = env.step(action)?;
        outcome.steps += 1;
        outcome.episode_return += result.reward;
        frames.push(observation_frame(
            &result.observation,
            &spec.sim,
            spec.noise.as_ref().map(|n| (n, &mut noise_rng)),
        ));
        if result.done {
            outcome.collided = result.collided;
            break;
        }
    }

    Ok(EpisodeRun { outcome, attention })
}

/// Evaluates `policy` over `spec.episodes` episodes. Episode `k` draws all
/// of its randomness from stream `EVAL_BASE + k` of `seed`, so results are
/// independent of worker scheduling.
pub fn evaluate(spec: &EvalSpec, policy: &Policy, seed: u64) -> Result<EvalReport, RunError> {
    if spec.episodes == 0 {
        return Err(RunError::Config("evaluation needs at least one episode".into()));
    }
    let tree = SeedTree::new(seed);
    let runs: Result<Vec<EpisodeRun>, RunError> = (0..spec.episodes)
        .into_par_iter()
        .map(|k| run_episode(spec, policy, tree, k, k == 0))
        .collect();
    let runs = runs?;
    let attention = runs.first().and_then(|r| r.attention.clone());
    Ok(EvalReport {
        episodes: runs.into_iter().map(|r| r.outcome).collect(),
        attention,
    })
}
