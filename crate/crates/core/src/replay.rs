//! Transition storage and hindsight goal relabeling ("future" strategy).

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation, GOAL_SLOT};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("transition log: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One environment step. The desired goal is mirrored in the last slot of
/// `state` and `next_state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub state: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_state: Observation,
    pub achieved_goal: f64,
    pub next_achieved_goal: f64,
    pub desired_goal: f64,
    pub done: bool,
}

impl Transition {
    /// Copy with a different desired goal and the reward recomputed for it.
    pub fn relabeled(&self, goal: f64, reward_fn: impl Fn(f64, f64) -> f64) -> Self {
        let mut t = self.clone();
        t.state[GOAL_SLOT] = goal;
        t.next_state[GOAL_SLOT] = goal;
        t.desired_goal = goal;
        t.reward = reward_fn(t.next_achieved_goal, goal);
        t
    }
}

/// Time-ordered transitions of one episode.
pub type EpisodeTrace = Vec<Transition>;

/// Returns the episode followed by `k` relabeled copies of every transition
/// that has a strictly later step. Each copy's goal is the achieved goal
/// (after the step) of a uniformly drawn later step of the same episode.
pub fn her_augment<R: Rng + ?Sized>(
    episode: &[Transition],
    k: usize,
    reward_fn: impl Fn(f64, f64) -> f64,
    rng: &mut R,
) -> Vec<Transition> {
    let n = episode.len();
    let mut out = Vec::with_capacity(n + k * n.saturating_sub(1));
    out.extend_from_slice(episode);
    for (t, transition) in episode.iter().enumerate().take(n.saturating_sub(1)) {
        for _ in 0..k {
            let future = rng.random_range(t + 1..n);
            out.push(transition.relabeled(episode[future].next_achieved_goal, &reward_fn));
        }
    }
    out
}

/// Bounded FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 1_000_000;

    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::InvalidArgument("capacity must be positive".into()));
        }
        Ok(Self { capacity, storage: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends transitions, evicting the oldest beyond capacity.
    pub fn push<I: IntoIterator<Item = Transition>>(&mut self, transitions: I) {
        for t in transitions {
            if self.storage.len() == self.capacity {
                self.storage.pop_front();
            }
            self.storage.push_back(t);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>, ReplayError> {
        if self.storage.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let n = self.storage.len();
        Ok((0..batch_size).map(|_| &self.storage[rng.random_range(0..n)]).collect())
    }
}

pub fn write_transitions<W: Write>(mut out: W, transitions: &[Transition]) -> Result<(), ReplayError> {
    for t in transitions {
        serde_json::to_writer(&mut out, t).map_err(|e| ReplayError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_transitions<R: BufRead>(input: R) -> Result<Vec<Transition>, ReplayError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReplayError::Format(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn synthetic_episode(len: usize, goal: f64, seed: u64) -> EpisodeTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut angle = 0.0;
        let mut state: Observation = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        state[GOAL_SLOT] = goal;
        state[18] = angle;
        (0..len)
            .map(|t| {
                let next_angle = angle + rng.random_range(-0.1..0.1);
                let mut next_state: Observation = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                next_state[18] = next_angle;
                next_state[GOAL_SLOT] = goal;
                let tr = Transition {
                    state,
                    action: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                    reward: reward(next_angle, goal),
                    next_state,
                    achieved_goal: angle,
                    next_achieved_goal: next_angle,
                    desired_goal: goal,
                    done: t + 1 == len,
                };
                state = next_state;
                angle = next_angle;
                tr
            })
            .collect()
    }

    #[test]
    fn her_output_size() {
        let ep = synthetic_episode(50, 0.7, 1);
        let out = her_augment(&ep, 4, reward, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.len(), 50 + 4 * 49);
        assert_eq!(&out[..50], &ep[..]);
    }

    #[test]
    fn k_zero_is_identity() {
        let ep = synthetic_episode(10, 0.7, 1);
        assert_eq!(her_augment(&ep, 0, reward, &mut ChaCha8Rng::seed_from_u64(0)), ep);
    }

    #[test]
    fn single_step_episode_gets_no_copies() {
        let ep = synthetic_episode(1, 0.7, 1);
        assert_eq!(her_augment(&ep, 4, reward, &mut ChaCha8Rng::seed_from_u64(0)).len(), 1);
    }

    #[test]
    fn relabel_to_reached_goal_gives_zero_reward() {
        let mut ep = synthetic_episode(5, -0.9, 2);
        ep[3].next_achieved_goal = 0.5;
        ep[4].next_achieved_goal = 0.5;
        let copy = ep[3].relabeled(ep[4].next_achieved_goal, reward);
        assert_eq!(copy.reward, 0.0);
        assert_eq!(copy.state[GOAL_SLOT], 0.5);
        assert_eq!(copy.next_state[GOAL_SLOT], 0.5);
    }

    #[test]
    fn copies_differ_only_in_goal_and_reward() {
        let ep = synthetic_episode(20, 0.3, 3);
        let out = her_augment(&ep, 2, reward, &mut ChaCha8Rng::seed_from_u64(5));
        for (i, copy) in out[20..].iter().enumerate() {
            let orig = &ep[i / 2];
            assert_eq!(copy.action, orig.action);
            assert_eq!(copy.state[..GOAL_SLOT], orig.state[..GOAL_SLOT]);
            assert_eq!(copy.next_state[..GOAL_SLOT], orig.next_state[..GOAL_SLOT]);
            assert_eq!(copy.achieved_goal, orig.achieved_goal);
            assert_eq!(copy.done, orig.done);
            assert_eq!(copy.reward, reward(copy.next_achieved_goal, copy.desired_goal));
        }
    }

    #[test]
    fn ring_keeps_latest() {
        let ep = synthetic_episode(5, 0.3, 3);
        let mut buf = ReplayBuffer::new(3).unwrap();
        buf.push(Vec::new());
        assert!(buf.is_empty());
        buf.push(ep.clone());
        assert_eq!(buf.len(), 3);
        assert!(buf.iter().eq(ep[2..].iter()));
        let mut small = ReplayBuffer::new(10).unwrap();
        small.push(ep.clone());
        assert_eq!(small.len(), 5);
    }

    #[test]
    fn sampling_contract() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(4, &mut rng), Err(ReplayError::EmptyBuffer)));
        let ep = synthetic_episode(1, 0.3, 3);
        buf.push(ep.clone());
        let batch = buf.sample(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|t| **t == ep[0]));

        let mut big = ReplayBuffer::new(20_000).unwrap();
        for s in 0..200 {
            big.push(synthetic_episode(50, 0.1, s));
        }
        let idx = |b: Vec<&Transition>| b.iter().map(|t| t.state[0].to_bits()).collect::<Vec<_>>();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let first = idx(big.sample(256, &mut rng).unwrap());
        let second = idx(big.sample(256, &mut rng).unwrap());
        assert_eq!(first.len(), 256);
        assert_ne!(first, second);
        let again = idx(big.sample(256, &mut ChaCha8Rng::seed_from_u64(42)).unwrap());
        assert_eq!(first, again);
    }

    #[test]
    fn jsonl_round_trip() {
        let ep = synthetic_episode(3, 0.3, 3);
        let mut buf = Vec::new();
        write_transitions(&mut buf, &ep).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"next_achieved_goal\""));
        assert_eq!(read_transitions(&buf[..]).unwrap(), ep);
    }
}
