use super::{deep_shap_all, exact_shapley, sampled_shapley_all, Attribution, Background, Estimator, Result};
use crate::agent::ObsNormalizer;
use crate::env::{Observation, StepRecord};
use crate::nn::Mlp;
use crate::seeds::stream;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainOptions {
    pub estimator: Estimator,
    /// Orderings per step for [`Estimator::Permutation`].
    pub n_permutations: usize,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self { estimator: Estimator::DeepRescale, n_permutations: 100, seed: 0 }
    }
}

/// Attributions of every policy output at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepExplanation<T> {
    pub step: usize,
    /// Observation before normalization.
    pub raw: Observation,
    pub attributions: Vec<Attribution<T>>,
}

/// Builds a normalized background from raw observations.
pub fn normalized_background<T: Scalar>(
    normalizer: &ObsNormalizer,
    observations: &[Observation],
    sources: Vec<String>,
) -> Result<Background<T>> {
    let rows = observations
        .iter()
        .map(|o| normalizer.normalize(o).iter().map(|&v| T::of(v)).collect())
        .collect();
    Background::new(rows, sources)
}

/// Explains the policy at every step of a logged episode. Inputs are
/// normalized with the agent's frozen statistics, so the explained
/// function is exactly the deployed policy; `background` must hold
/// normalized rows as well (see [`normalized_background`]).
pub fn explain_episode<T: Scalar>(
    actor: &Mlp<T>,
    normalizer: &ObsNormalizer,
    episode: &[StepRecord],
    background: &Background<T>,
    options: &ExplainOptions,
) -> Result<Vec<StepExplanation<T>>> {
    let mut rng = stream(options.seed, "explain");
    episode
        .iter()
        .map(|record| {
            let x: Vec<T> = normalizer.normalize(&record.observation).iter().map(|&v| T::of(v)).collect();
            let attributions = match options.estimator {
                Estimator::DeepRescale => deep_shap_all(actor, &x, background)?,
                Estimator::Permutation => sampled_shapley_all(actor, &x, background, options.n_permutations, &mut rng)?,
                Estimator::Exact => (0..actor.output_width())
                    .map(|k| exact_shapley(actor, &x, background, k))
                    .collect::<Result<_>>()?,
            };
            Ok(StepExplanation { step: record.t, raw: record.observation, attributions })
        })
        .collect()
}

/// Features ordered by mean |phi| over the explained steps for one output,
/// most important first.
pub fn rank_features<T: Scalar>(steps: &[StepExplanation<T>], output: usize) -> Vec<(usize, f64)> {
    let Some(first) = steps.first() else {
        return Vec::new();
    };
    let m = first.attributions[output].phi.len();
    let mut mean = vec![0.0; m];
    for s in steps {
        for (acc, p) in mean.iter_mut().zip(&s.attributions[output].phi) {
            *acc += p.as_f64().abs() / steps.len() as f64;
        }
    }
    let mut ranked: Vec<(usize, f64)> = mean.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
