use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, Result};
use crate::env::{sparse_reward, Curriculum, EnvConfig, LeverEnv, Scenario, StepRecord};
use crate::nn::AdamState;
use crate::replay::{her_augment, ReplayBuffer, Transition};
use crate::seeds::{stream, stream_seed};
use crate::Scalar;

/// Episodes per reporting epoch during fine-tuning.
const FINETUNE_EPOCH_EPISODES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_success: f64,
    pub mean_final_error_rad: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainingReport {
    pub const CSV_HEADER: &'static str = "epoch,mean_success,mean_final_error_rad,actor_loss,critic_loss";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.mean_success, e.mean_final_error_rad, e.actor_loss, e.critic_loss
            )?;
        }
        out.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// One finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub transitions: Vec<Transition>,
    pub records: Vec<StepRecord>,
    /// Success at the final step.
    pub success: bool,
    /// |lever - goal| after the final step.
    pub final_error: f64,
    /// End effector to handle distance before the first step.
    pub initial_ee_distance: f64,
}

impl EpisodeRun {
    pub fn error_trajectory(&self) -> Vec<f64> {
        error_trajectory(&self.records)
    }
}

/// |lever - goal| before the first step and after every step of a logged
/// episode.
pub fn error_trajectory(records: &[StepRecord]) -> Vec<f64> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    std::iter::once((first.observation[crate::env::ACHIEVED_SLOT] - first.desired_goal).abs())
        .chain(records.iter().map(|r| (r.achieved_goal - r.desired_goal).abs()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub mean_final_error: f64,
    pub runs: Vec<EpisodeRun>,
}

impl EvalSummary {
    fn from_runs(runs: Vec<EpisodeRun>) -> Self {
        let n = runs.len().max(1) as f64;
        Self {
            success_rate: runs.iter().filter(|r| r.success).count() as f64 / n,
            mean_final_error: runs.iter().map(|r| r.final_error).sum::<f64>() / n,
            runs,
        }
    }
}

/// Plays one episode to its step limit. `start` pins the initial condition;
/// otherwise the env's curriculum decides.
pub fn rollout<T: Scalar, R: Rng + ?Sized>(
    agent: &Agent<T>,
    env: &mut LeverEnv,
    start: Option<&Scenario>,
    explore: bool,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<EpisodeRun> {
    let mut obs = match start {
        Some(s) => env.reset_to(s)?,
        None => env.reset()?,
    };
    let initial_ee_distance = {
        let world = env.world().expect("world after reset");
        let [ex, ez] = world.ee_plane(env.config());
        let [hx, hz] = world.handle_plane(env.config());
        (ex - hx).hypot(ez - hz)
    };
    let max_steps = env.config().max_steps;
    let mut transitions = Vec::with_capacity(max_steps);
    let mut records = Vec::with_capacity(max_steps);
    loop {
        let action = agent.select_action(&obs, explore, config, rng)?;
        let achieved = obs[crate::env::ACHIEVED_SLOT];
        let out = env.step(&action);
        records.push(StepRecord {
            t: records.len(),
            observation: obs,
            action,
            reward: out.reward,
            achieved_goal: out.info.achieved_goal,
            desired_goal: obs[crate::env::GOAL_SLOT],
            is_success: out.info.is_success,
        });
        transitions.push(Transition {
            state: obs,
            action,
            reward: out.reward,
            next_state: out.observation,
            achieved_goal: achieved,
            next_achieved_goal: out.info.achieved_goal,
            desired_goal: obs[crate::env::GOAL_SLOT],
            done: out.done,
        });
        obs = out.observation;
        if out.done {
            break;
        }
    }
    let last = records.last().expect("max_steps > 0");
    Ok(EpisodeRun {
        success: last.is_success,
        final_error: (last.achieved_goal - last.desired_goal).abs(),
        transitions,
        records,
        initial_ee_distance,
    })
}

/// Greedy episodes from free starts drawn from the `seed` stream. The same
/// seed always yields the same initial conditions.
pub fn evaluate<T: Scalar>(agent: &Agent<T>, env_config: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let mut env = LeverEnv::new(env_config.clone(), Curriculum::Free, seed)?;
    let config = AgentConfig::default();
    let mut rng = stream(seed, "eval-actions");
    let runs = (0..episodes)
        .map(|_| rollout(agent, &mut env, None, false, &config, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_runs(runs))
}

/// Greedy episodes from fixed initial conditions.
pub fn evaluate_scenarios<T: Scalar>(
    agent: &Agent<T>,
    env_config: &EnvConfig,
    scenarios: &[Scenario],
) -> Result<EvalSummary> {
    let mut env = LeverEnv::new(env_config.clone(), Curriculum::Free, 0)?;
    let config = AgentConfig::default();
    let mut rng = stream(0, "eval-actions");
    let runs = scenarios
        .iter()
        .map(|s| rollout(agent, &mut env, Some(s), false, &config, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_runs(runs))
}

struct Learner<'a, T: Scalar> {
    agent: &'a mut Agent<T>,
    config: &'a AgentConfig,
    buffer: ReplayBuffer,
    explore_rng: rand_chacha::ChaCha8Rng,
    her_rng: rand_chacha::ChaCha8Rng,
    sample_rng: rand_chacha::ChaCha8Rng,
    eval_seed: u64,
}

impl<'a, T: Scalar> Learner<'a, T> {
    fn new(agent: &'a mut Agent<T>, config: &'a AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            agent,
            config,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            explore_rng: stream(seed, "agent"),
            her_rng: stream(seed, "her"),
            sample_rng: stream(seed, "sample"),
            eval_seed: stream_seed(seed, "eval"),
        })
    }

    /// Collects `episodes` exploratory episodes, then runs the update phase.
    /// Returns the summed actor and critic losses and the update count.
    fn cycle(&mut self, env: &mut LeverEnv, episodes: usize) -> Result<(f64, f64, usize)> {
        let tol = env.config().success_tol;
        let mut fresh = Vec::new();
        for _ in 0..episodes {
            let run = rollout(self.agent, env, None, true, self.config, &mut self.explore_rng)?;
            fresh.push(run.transitions);
        }
        self.agent
            .normalizer
            .update(fresh.iter().flatten().flat_map(|t| [&t.state, &t.next_state]));
        for episode in &fresh {
            let augmented = her_augment(episode, self.config.her_k, |a, d| sparse_reward(a, d, tol), &mut self.her_rng);
            self.buffer.push(augmented);
        }

        let (mut actor_sum, mut critic_sum) = (0.0, 0.0);
        for _ in 0..self.config.updates_per_cycle {
            let batch = self.buffer.sample(self.config.batch_size, &mut self.sample_rng)?;
            critic_sum += self.agent.critic_update(&batch, self.config)?;
            actor_sum += self.agent.actor_update(&batch, self.config)?;
            self.agent.update_targets(self.config.polyak_retain)?;
        }
        Ok((actor_sum, critic_sum, self.config.updates_per_cycle))
    }

    fn epoch(&mut self, env: &mut LeverEnv, index: usize, episodes: usize) -> Result<EpochStats> {
        let (mut actor_sum, mut critic_sum, mut updates) = (0.0, 0.0, 0usize);
        let mut remaining = episodes;
        while remaining > 0 {
            let n = remaining.min(self.config.episodes_per_cycle);
            let (a, c, u) = self.cycle(env, n)?;
            actor_sum += a;
            critic_sum += c;
            updates += u;
            remaining -= n;
        }
        let eval = evaluate(self.agent, env.config(), self.config.eval_episodes, self.eval_seed)?;
        let per = |s: f64| if updates == 0 { 0.0 } else { s / updates as f64 };
        let stats = EpochStats {
            epoch: index,
            mean_success: eval.success_rate,
            mean_final_error_rad: eval.mean_final_error,
            actor_loss: per(actor_sum),
            critic_loss: per(critic_sum),
        };
        log::info!(
            "epoch {} ({:?}): success {:.2} error {:.3} actor {:.4} critic {:.4}",
            index,
            env.config().fidelity,
            stats.mean_success,
            stats.mean_final_error_rad,
            stats.actor_loss,
            stats.critic_loss
        );
        Ok(stats)
    }
}

/// Trains for `epochs` epochs of `episodes_per_epoch` exploratory episodes
/// each, evaluating greedily after every epoch. All randomness other than
/// the env's own comes from named streams of `seed`.
pub fn train<T: Scalar>(
    agent: &mut Agent<T>,
    env: &mut LeverEnv,
    epochs: usize,
    episodes_per_epoch: usize,
    config: &AgentConfig,
    seed: u64,
) -> Result<TrainingReport> {
    let mut report = TrainingReport::default();
    if epochs == 0 || episodes_per_epoch == 0 {
        return Ok(report);
    }
    let mut learner = Learner::new(agent, config, seed)?;
    for e in 0..epochs {
        report.epochs.push(learner.epoch(env, e, episodes_per_epoch)?);
    }
    Ok(report)
}

/// Continues training an already trained agent for `episodes` episodes on
/// `env` with a fresh replay buffer and fresh optimizer state (as after
/// loading a checkpoint), reporting every 30 episodes.
pub fn finetune<T: Scalar>(
    agent: &mut Agent<T>,
    env: &mut LeverEnv,
    episodes: usize,
    config: &AgentConfig,
    seed: u64,
) -> Result<TrainingReport> {
    let mut report = TrainingReport::default();
    if episodes == 0 {
        return Ok(report);
    }
    agent.actor_opt = AdamState::new(&agent.actor);
    agent.critic_opt = AdamState::new(&agent.critic);
    let mut learner = Learner::new(agent, config, seed)?;
    let mut remaining = episodes;
    let mut index = 0;
    while remaining > 0 {
        let n = remaining.min(FINETUNE_EPOCH_EPISODES);
        report.epochs.push(learner.epoch(env, index, n)?);
        remaining -= n;
        index += 1;
    }
    Ok(report)
}
