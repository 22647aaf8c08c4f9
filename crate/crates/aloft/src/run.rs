//! Step-budgeted training driver: runs the act/store/learn loop over an
//! ordered list of worlds, splitting the step budget evenly between them.
//!
//! All randomness flows from one seed through fixed named streams, so a run
//! is a pure function of `(spec, seed)`.

use crate::agent::{act, AgentConfig, AgentError, Learner, ReplayBuffer, Transition, TrainOutcome};
use crate::agent::window_tensors;
use crate::env::{apply_noise, Env, EnvError, NoiseConfig, Observation, SimConfig, WorldMap};
use crate::net::{init_params, NetConfig, QNetworkParams};
use crate::rng::{streams, SeedTree};
use crate::tensor::TensorError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("run configuration error: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {msg}")]
    Numeric { step: usize, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One world in the training curriculum.
#[derive(Debug, Clone)]
pub struct CurriculumStage {
    pub name: String,
    pub map: Arc<WorldMap>,
}

#[derive(Debug, Clone)]
pub struct TrainSpec {
    /// Worlds visited in order, each getting an equal share of the budget
    /// (the last also absorbs the remainder).
    pub stages: Vec<CurriculumStage>,
    pub sim: SimConfig,
    /// Sensor degradation applied to every observation before the network
    /// sees it; `None` trains on clean depth.
    pub noise: Option<NoiseConfig>,
    pub net: NetConfig,
    pub agent: AgentConfig,
    /// Environment-step budget for the whole run.
    pub total_steps: usize,
    /// Snapshot the online network every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.stages.is_empty() {
            return Err(RunError::Config("curriculum has no worlds".into()));
        }
        if self.total_steps < self.stages.len() {
            return Err(RunError::Config(format!(
                "{} steps cannot cover {} curriculum stages",
                self.total_steps,
                self.stages.len()
            )));
        }
        if self.net.window != self.agent.window_len {
            return Err(RunError::Config(format!(
                "network window {} does not match agent window_len {}",
                self.net.window, self.agent.window_len
            )));
        }
        let expected = self.sim.n_rays;
        let got = self.net.in_channels * self.net.in_height * self.net.in_width;
        if expected != got {
            return Err(RunError::Config(format!(
                "network input size {got} does not match {expected} sensor rays"
            )));
        }
        self.net.validate()?;
        self.agent.validate()?;
        Ok(())
    }

    /// Global step at which stage `i` ends (exclusive).
    fn stage_end(&self, i: usize) -> usize {
        if i + 1 == self.stages.len() {
            self.total_steps
        } else {
            (i + 1) * (self.total_steps / self.stages.len())
        }
    }
}

/// Summary of one finished episode, in completion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Global environment step count when the episode ended.
    pub end_step: usize,
    /// Exploration rate at the episode's final step.
    pub epsilon: f64,
    /// Most recent training loss, once updates have started.
    pub loss: Option<f64>,
    pub episode_return: f64,
    /// Steps survived before collision or the step cap.
    pub steps: usize,
    pub collided: bool,
    pub world: String,
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: QNetworkParams,
    pub episodes: Vec<EpisodeRecord>,
    /// `(step, snapshot)` pairs taken every `checkpoint_every` steps.
    pub checkpoints: Vec<(usize, QNetworkParams)>,
}

/// Sliding window of the most recent `len` observation frames, padded at
/// episode start by repeating the earliest frame.
pub(crate) struct FrameWindow {
    frames: VecDeque<Arc<Vec<f64>>>,
    len: usize,
}

impl FrameWindow {
    pub(crate) fn new(len: usize) -> FrameWindow {
        FrameWindow {
            frames: VecDeque::with_capacity(len),
            len,
        }
    }

    pub(crate) fn reset(&mut self, frame: Arc<Vec<f64>>) {
        self.frames.clear();
        self.frames.push_back(frame);
    }

    pub(crate) fn push(&mut self, frame: Arc<Vec<f64>>) {
        if self.frames.len() == self.len {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub(crate) fn window(&self) -> Vec<Arc<Vec<f64>>> {
        let earliest = self.frames.front().expect("window never empty");
        let mut out = Vec::with_capacity(self.len);
        for _ in self.frames.len()..self.len {
            out.push(earliest.clone());
        }
        out.extend(self.frames.iter().cloned());
        out
    }
}

/// Turns a raw observation into the unit-scaled frame the network consumes,
/// applying sensor noise first when configured.
pub(crate) fn observation_frame(
    obs: &Observation,
    sim: &SimConfig,
    noise: Option<(&NoiseConfig, &mut ChaCha8Rng)>,
) -> Arc<Vec<f64>> {
    let depths = match noise {
        Some((cfg, rng)) => apply_noise(&obs.depths, cfg, sim.d_max, rng),
        None => obs.depths.clone(),
    };
    Arc::new(depths.iter().map(|d| d / sim.d_max).collect())
}

/// Runs the full training loop. Deterministic given `(spec, seed)`.
pub fn train(spec: &TrainSpec, seed: u64) -> Result<TrainResult, RunError> {
    spec.validate()?;
    let seeds = SeedTree::new(seed);
    let mut init_rng = seeds.stream(streams::PARAM_INIT);
    let params = init_params(&spec.net, &mut init_rng)?;
    let mut learner = Learner::new(params, spec.agent.clone())?;

    let mut env_seeds = seeds.stream(streams::ENV);
    let mut explore_rng = seeds.stream(streams::EXPLORATION);
    let mut replay_rng = seeds.stream(streams::REPLAY);
    let mut noise_rng = seeds.stream(streams::OBS_NOISE);

    let mut buffer = ReplayBuffer::new(spec.agent.replay_capacity);
    let mut frames = FrameWindow::new(spec.agent.window_len);
    let mut episodes = Vec::new();
    let mut checkpoints = Vec::new();

    let mut stage_idx = 0;
    let mut env = Env::new(
        spec.stages[0].map.clone(),
        spec.sim.clone(),
        ChaCha8Rng::seed_from_u64(env_seeds.gen()),
    )?;
    let mut obs = env.observe()?;
    frames.reset(observation_frame(
        &obs,
        &spec.sim,
        spec.noise.as_ref().map(|n| (n, &mut noise_rng)),
    ));

    let mut episode_return = 0.0;
    let mut episode_steps = 0usize;
    let mut last_loss = None;
    let mut step = 0usize;

    while step < spec.total_steps {
        let epsilon = spec.agent.epsilon_at(step);
        let window = frames.window();
        let tensors = window_tensors(&spec.net, &window)?;
        let action = act(&learner.params, &tensors, epsilon, &mut explore_rng)?;

        let result = env.step(action)?;
        step += 1;
        episode_steps += 1;
        episode_return += result.reward;
        obs = result.observation;
        frames.push(observation_frame(
            &obs,
            &spec.sim,
            spec.noise.as_ref().map(|n| (n, &mut noise_rng)),
        ));

        buffer.push(Transition {
            window,
            action,
            reward: result.reward,
            next_window: frames.window(),
            done: result.done,
        });

        if step % spec.agent.train_every == 0 {
            match learner.train_step(&buffer, &mut replay_rng) {
                Ok(TrainOutcome::Stepped { loss, .. }) => {
                    if !loss.is_finite() {
                        return Err(RunError::Numeric {
                            step,
                            msg: format!("training loss became {loss}"),
                        });
                    }
                    last_loss = Some(loss);
                }
                Ok(TrainOutcome::Skipped) => {}
                Err(AgentError::Optim(e)) => {
                    return Err(RunError::Numeric {
                        step,
                        msg: e.to_string(),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }

        if spec.checkpoint_every > 0 && step % spec.checkpoint_every == 0 {
            checkpoints.push((step, learner.params.clone()));
        }

        let stage_over = step >= spec.stage_end(stage_idx);
        if result.done {
            episodes.push(EpisodeRecord {
                episode: episodes.len(),
                end_step: step,
                epsilon,
                loss: last_loss,
                episode_return,
                steps: episode_steps,
                collided: result.collided,
                world: spec.stages[stage_idx].name.clone(),
            });
        }

        if step == spec.total_steps {
            break;
        }

        if stage_over {
            stage_idx += 1;
            env = Env::new(
                spec.stages[stage_idx].map.clone(),
                spec.sim.clone(),
                ChaCha8Rng::seed_from_u64(env_seeds.gen()),
            )?;
            obs = env.observe()?;
            frames.reset(observation_frame(
                &obs,
                &spec.sim,
                spec.noise.as_ref().map(|n| (n, &mut noise_rng)),
            ));
            episode_return = 0.0;
            episode_steps = 0;
        } else if result.done {
            obs = env.reset(ChaCha8Rng::seed_from_u64(env_seeds.gen()))?;
            frames.reset(observation_frame(
                &obs,
                &spec.sim,
                spec.noise.as_ref().map(|n| (n, &mut noise_rng)),
            ));
            episode_return = 0.0;
            episode_steps = 0;
        }
    }

    Ok(TrainResult {
        params: learner.params,
        episodes,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::FrameWindow;
    use std::sync::Arc;

    fn frame(v: f64) -> Arc<Vec<f64>> {
        Arc::new(vec![v])
    }

    #[test]
    fn short_windows_pad_by_repeating_the_earliest_frame() {
        let mut w = FrameWindow::new(4);
        w.reset(frame(1.0));
        assert_eq!(
            w.window().iter().map(|f| f[0]).collect::<Vec<_>>(),
            [1.0, 1.0, 1.0, 1.0]
        );
        w.push(frame(2.0));
        assert_eq!(
            w.window().iter().map(|f| f[0]).collect::<Vec<_>>(),
            [1.0, 1.0, 1.0, 2.0]
        );
    }

    #[test]
    fn full_windows_slide_oldest_first() {
        let mut w = FrameWindow::new(3);
        w.reset(frame(0.0));
        for v in [1.0, 2.0, 3.0, 4.0] {
            w.push(frame(v));
        }
        assert_eq!(
            w.window().iter().map(|f| f[0]).collect::<Vec<_>>(),
            [2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn reset_discards_history() {
        let mut w = FrameWindow::new(3);
        w.reset(frame(1.0));
        w.push(frame(2.0));
        w.reset(frame(9.0));
        assert_eq!(
            w.window().iter().map(|f| f[0]).collect::<Vec<_>>(),
            [9.0, 9.0, 9.0]
        );
    }
}
