use serde::{Deserialize, Serialize};

use crate::env::{Observation, ACHIEVED_SLOT, GOAL_SLOT, OBS_DIM};

/// Running per-dimension mean and variance of observations.
///
/// The goal slot is scaled with the statistics of the achieved lever angle
/// so that relabeled and original goals share one coordinate system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    count: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    clip_range: f64,
    /// Lower bound on the standard deviation.
    min_std: f64,
}

impl ObsNormalizer {
    pub fn new(clip_range: f64) -> Self {
        Self {
            count: 0.0,
            sum: vec![0.0; OBS_DIM],
            sum_sq: vec![0.0; OBS_DIM],
            clip_range,
            min_std: 1e-2,
        }
    }

    pub fn clip_range(&self) -> f64 {
        self.clip_range
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn update<'a>(&mut self, observations: impl IntoIterator<Item = &'a Observation>) {
        for obs in observations {
            self.count += 1.0;
            for ((s, q), &x) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(obs) {
                *s += x;
                *q += x * x;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count == 0.0 {
            0.0
        } else {
            self.sum[i] / self.count
        }
    }

    /// Population variance, never negative.
    pub fn variance(&self, i: usize) -> f64 {
        if self.count == 0.0 {
            return 1.0;
        }
        let m = self.mean(i);
        (self.sum_sq[i] / self.count - m * m).max(0.0)
    }

    fn stats_slot(i: usize) -> usize {
        if i == GOAL_SLOT {
            ACHIEVED_SLOT
        } else {
            i
        }
    }

    pub fn normalize(&self, obs: &Observation) -> Observation {
        std::array::from_fn(|i| {
            let s = Self::stats_slot(i);
            let std = self.variance(s).sqrt().max(self.min_std);
            ((obs[i] - self.mean(s)) / std).clamp(-self.clip_range, self.clip_range)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_normalizer_only_clips() {
        let n = ObsNormalizer::new(5.0);
        let mut obs = [0.5; OBS_DIM];
        obs[3] = 12.0;
        let out = n.normalize(&obs);
        assert_eq!(out[0], 0.5);
        assert_eq!(out[3], 5.0);
    }

    #[test]
    fn standardizes_and_shares_goal_statistics() {
        let mut n = ObsNormalizer::new(5.0);
        let a: Observation = std::array::from_fn(|i| i as f64);
        let mut b = a;
        b.iter_mut().for_each(|v| *v += 2.0);
        n.update([&a, &b]);
        assert_eq!(n.mean(0), 1.0);
        assert_eq!(n.variance(0), 1.0);
        let out = n.normalize(&b);
        assert!((out[0] - 1.0).abs() < 1e-12);
        // goal slot uses slot-18 mean (19) and std (1)
        let mut probe = a;
        probe[GOAL_SLOT] = 19.0;
        assert!(n.normalize(&probe)[GOAL_SLOT].abs() < 1e-12);
        assert!(n.variance(5) >= 0.0);
    }

    #[test]
    fn constant_feature_does_not_blow_up() {
        let mut n = ObsNormalizer::new(5.0);
        let a = [0.3; OBS_DIM];
        n.update([&a, &a, &a]);
        assert!(n.normalize(&a).iter().all(|v| v.abs() < 1e-9));
    }
}
