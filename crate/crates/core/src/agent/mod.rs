//! DDPG actor-critic learner with target networks and hindsight replay.

mod checkpoint;
mod normalizer;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{AgentCheckpoint, AGENT_FORMAT_VERSION};
pub use normalizer::ObsNormalizer;
pub use train::{
    error_trajectory, evaluate, evaluate_scenarios, finetune, rollout, train, EpisodeRun, EpochStats, EvalSummary, TrainingReport,
};

use crate::env::{Action, EnvError, Observation, ACTION_DIM, OBS_DIM};
use crate::nn::{Activation, AdamState, Mlp, NnError};
use crate::replay::{ReplayError, Transition};
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("state contains NaN")]
    InvalidState,
    #[error("non-finite critic target or loss; update refused")]
    PoisonedUpdate,
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;

/// Learner hyperparameters. Defaults are the coarse-stage values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    /// Weight of the mean squared action penalty in the actor loss.
    pub action_l2: f64,
    /// Std of the Gaussian noise added to greedy actions while exploring.
    pub noise_eps: f64,
    /// Probability of a uniformly random action while exploring.
    pub random_eps: f64,
    /// Relabeled copies stored per transition.
    pub her_k: usize,
    pub batch_size: usize,
    pub polyak_retain: f64,
    pub episodes_per_cycle: usize,
    pub updates_per_cycle: usize,
    pub hidden_layers: Vec<usize>,
    pub clip_obs: f64,
    pub buffer_capacity: usize,
    /// Greedy evaluation episodes after every epoch.
    pub eval_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            lr_actor: 0.001,
            lr_critic: 0.001,
            gamma: 0.98,
            action_l2: 1.0,
            noise_eps: 0.2,
            random_eps: 0.18,
            her_k: 4,
            batch_size: 256,
            polyak_retain: 0.95,
            episodes_per_cycle: 2,
            updates_per_cycle: 40,
            hidden_layers: vec![256, 256, 256],
            clip_obs: 5.0,
            buffer_capacity: crate::replay::ReplayBuffer::DEFAULT_CAPACITY,
            eval_episodes: 10,
        }
    }
}

impl AgentConfig {
    /// Fine-stage values: identical except for the learning rates.
    pub fn fine_stage() -> Self {
        Self {
            lr_actor: 0.0008,
            lr_critic: 0.0008,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(self.lr_actor > 0.0) || !(self.lr_critic > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.random_eps) {
            return fail("random_eps must lie in [0, 1]");
        }
        if !(self.noise_eps >= 0.0) || !(self.action_l2 >= 0.0) {
            return fail("noise_eps and action_l2 must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.polyak_retain) {
            return fail("polyak_retain must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.episodes_per_cycle == 0 || self.buffer_capacity == 0 {
            return fail("batch_size, episodes_per_cycle and buffer_capacity must be positive");
        }
        if self.hidden_layers.iter().any(|&h| h == 0) {
            return fail("hidden layer widths must be positive");
        }
        if !(self.clip_obs > 0.0) {
            return fail("clip_obs must be positive");
        }
        Ok(())
    }

    /// Lower clip bound for bootstrapped Q targets: the return of failing forever.
    pub fn min_return(&self) -> f64 {
        if self.gamma < 1.0 {
            -1.0 / (1.0 - self.gamma)
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Actor, critic, their target copies and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent<T: Scalar> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub target_actor: Mlp<T>,
    pub target_critic: Mlp<T>,
    pub actor_opt: AdamState<T>,
    pub critic_opt: AdamState<T>,
    pub normalizer: ObsNormalizer,
}

struct Batch<T> {
    states: Vec<T>,
    actions: Vec<T>,
    next_states: Vec<T>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// Row-wise concatenation of a `rows × a_w` and a `rows × b_w` matrix.
fn hstack<T: Scalar>(a: &[T], a_w: usize, b: &[T], b_w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(a_w).zip(b.chunks_exact(b_w)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

impl<T: Scalar> Agent<T> {
    pub fn new(config: &AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let actor_sizes: Vec<usize> = std::iter::once(OBS_DIM)
            .chain(config.hidden_layers.iter().copied())
            .chain(std::iter::once(ACTION_DIM))
            .collect();
        let critic_sizes: Vec<usize> = std::iter::once(OBS_DIM + ACTION_DIM)
            .chain(config.hidden_layers.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Tanh, crate::seeds::stream_seed(seed, "actor"))?;
        let critic = Mlp::new(&critic_sizes, Activation::Relu, Activation::Linear, crate::seeds::stream_seed(seed, "critic"))?;
        Ok(Self::from_networks(actor, critic, ObsNormalizer::new(config.clip_obs)))
    }

    /// Wraps trained networks; targets start as exact copies and optimizers fresh.
    pub fn from_networks(actor: Mlp<T>, critic: Mlp<T>, normalizer: ObsNormalizer) -> Self {
        Self {
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            normalizer,
        }
    }

    /// Normalized observation converted to the network scalar type.
    pub fn prepare(&self, state: &Observation) -> Vec<T> {
        self.normalizer.normalize(state).iter().map(|&v| T::of(v)).collect()
    }

    /// Deterministic policy output for a raw observation.
    pub fn greedy_action(&self, state: &Observation) -> Result<Action> {
        if state.iter().any(|v| v.is_nan()) {
            return Err(AgentError::InvalidState);
        }
        let out = self.actor.predict(&self.prepare(state))?;
        Ok(std::array::from_fn(|i| out[i].as_f64()))
    }

    /// Greedy action, or while exploring: a uniform random action with
    /// probability `random_eps`, else the greedy action plus Gaussian noise.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &Observation,
        explore: bool,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Action> {
        if state.iter().any(|v| v.is_nan()) {
            return Err(AgentError::InvalidState);
        }
        if explore && rng.random::<f64>() < config.random_eps {
            return Ok(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)));
        }
        let mut action = self.greedy_action(state)?;
        if explore && config.noise_eps > 0.0 {
            let noise = Normal::new(0.0, config.noise_eps)
                .map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
            for a in &mut action {
                *a = (*a + noise.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(action)
    }

    fn batch(&self, transitions: &[&Transition]) -> Result<Batch<T>> {
        if transitions.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = transitions.len();
        let mut b = Batch {
            states: Vec::with_capacity(n * OBS_DIM),
            actions: Vec::with_capacity(n * ACTION_DIM),
            next_states: Vec::with_capacity(n * OBS_DIM),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
        };
        for t in transitions {
            b.states.extend(self.prepare(&t.state));
            b.next_states.extend(self.prepare(&t.next_state));
            b.actions.extend(t.action.iter().map(|&a| T::of(a)));
            b.rewards.push(t.reward);
            b.dones.push(t.done);
        }
        Ok(b)
    }

    /// Bootstrapped targets `r + gamma (1 - done) clip(Q'(s', mu'(s')))`.
    pub fn critic_targets(&self, transitions: &[&Transition], config: &AgentConfig) -> Result<Vec<f64>> {
        let b = self.batch(transitions)?;
        self.targets_for(&b, config)
    }

    fn targets_for(&self, b: &Batch<T>, config: &AgentConfig) -> Result<Vec<f64>> {
        let n = b.rewards.len();
        let next_actions = self.target_actor.forward_batch(&b.next_states, n)?;
        let next_in = hstack(&b.next_states, OBS_DIM, next_actions.output(), ACTION_DIM);
        let next_q = self.target_critic.forward_batch(&next_in, n)?;
        let lo = config.min_return();
        let targets: Vec<f64> = next_q
            .output()
            .iter()
            .zip(&b.rewards)
            .zip(&b.dones)
            .map(|((q, r), done)| {
                let bootstrap = if *done { 0.0 } else { q.as_f64().clamp(lo, 0.0) };
                r + config.gamma * bootstrap
            })
            .collect();
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(AgentError::PoisonedUpdate);
        }
        Ok(targets)
    }

    /// One Adam step on the critic's mean squared TD error. Returns the
    /// loss measured before the step.
    pub fn critic_update(&mut self, transitions: &[&Transition], config: &AgentConfig) -> Result<f64> {
        let b = self.batch(transitions)?;
        let n = b.rewards.len();
        let targets = self.targets_for(&b, config)?;
        let input = hstack(&b.states, OBS_DIM, &b.actions, ACTION_DIM);
        let cache = self.critic.forward_batch(&input, n)?;
        let scale = 2.0 / n as f64;
        let mut loss = 0.0;
        let grad: Vec<T> = cache
            .output()
            .iter()
            .zip(&targets)
            .map(|(q, y)| {
                let err = q.as_f64() - y;
                loss += err * err;
                T::of(scale * err)
            })
            .collect();
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(AgentError::PoisonedUpdate);
        }
        let (grads, _) = self.critic.backward(&cache, &grad)?;
        self.critic.adam_step(&grads, &mut self.critic_opt, T::of(config.lr_critic))?;
        Ok(loss)
    }

    /// One Adam step on the actor for `-mean Q(s, mu(s)) + l2 * mean |mu(s)|^2 / 4`
    /// with the critic held fixed. Returns the loss before the step.
    pub fn actor_update(&mut self, transitions: &[&Transition], config: &AgentConfig) -> Result<f64> {
        let b = self.batch(transitions)?;
        let n = b.rewards.len();
        let actor_cache = self.actor.forward_batch(&b.states, n)?;
        let actions = actor_cache.output();
        let input = hstack(&b.states, OBS_DIM, actions, ACTION_DIM);
        let critic_cache = self.critic.forward_batch(&input, n)?;
        let mean_q = critic_cache.output().iter().map(|q| q.as_f64()).sum::<f64>() / n as f64;
        let mean_sq = actions.iter().map(|a| a.as_f64().powi(2)).sum::<f64>() / (n * ACTION_DIM) as f64;
        let loss = -mean_q + config.action_l2 * mean_sq;
        if !loss.is_finite() {
            return Err(AgentError::PoisonedUpdate);
        }
        let dq = vec![T::of(-1.0 / n as f64); n];
        let d_input = self.critic.input_gradient(&critic_cache, &dq)?;
        let penalty = T::of(2.0 * config.action_l2 / (n * ACTION_DIM) as f64);
        let mut d_actions = Vec::with_capacity(n * ACTION_DIM);
        for (row, a_row) in d_input.chunks_exact(OBS_DIM + ACTION_DIM).zip(actions.chunks_exact(ACTION_DIM)) {
            for (g, &a) in row[OBS_DIM..].iter().zip(a_row) {
                d_actions.push(*g + penalty * a);
            }
        }
        let (grads, _) = self.actor.backward(&actor_cache, &d_actions)?;
        self.actor.adam_step(&grads, &mut self.actor_opt, T::of(config.lr_actor))?;
        Ok(loss)
    }

    /// Polyak-averages both target networks towards their sources.
    pub fn update_targets(&mut self, retain: f64) -> Result<()> {
        let retain = T::of(retain);
        self.target_actor.polyak_update(&self.actor, retain)?;
        self.target_critic.polyak_update(&self.critic, retain)?;
        Ok(())
    }
}
