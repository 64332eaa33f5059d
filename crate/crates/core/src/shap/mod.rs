//! Shapley-value attributions for vector-valued models.
//!
//! Absent features are filled in from every background row in turn and the
//! model outputs averaged (interventional expectation), which treats the
//! features as independent.

mod deep;
mod episode;
mod export;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Mlp;
use crate::Scalar;

pub use deep::{deep_shap, deep_shap_all, RESCALE_EPSILON};
pub use episode::{explain_episode, normalized_background, rank_features, ExplainOptions, StepExplanation};
pub use export::{export_force_plot, force_plot_svg, read_force_plot, ForcePlotDocument, ForcePlotFeature, ForcePlotStep};

/// Largest feature count accepted by [`exact_shapley`].
pub const MAX_EXACT_FEATURES: usize = 15;

#[derive(Debug, thiserror::Error)]
pub enum ShapError {
    #[error("invalid background: {0}")]
    InvalidBackground(String),
    #[error("exact enumeration over {0} features exceeds the budget of {MAX_EXACT_FEATURES}; use permutation sampling")]
    BudgetExceeded(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ShapError> = std::result::Result<T, E>;

/// Anything that maps row-major `n × input_width` inputs to `n × output_width` outputs.
pub trait Model<T: Scalar> {
    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;
    fn eval_batch(&self, rows: &[T], n: usize) -> Result<Vec<T>>;
}

impl<T: Scalar> Model<T> for Mlp<T> {
    fn input_width(&self) -> usize {
        Mlp::input_width(self)
    }

    fn output_width(&self) -> usize {
        Mlp::output_width(self)
    }

    fn eval_batch(&self, rows: &[T], n: usize) -> Result<Vec<T>> {
        Ok(self.forward_batch(rows, n)?.output().to_vec())
    }
}

/// Adapts a per-row closure into a [`Model`].
pub struct FnModel<F> {
    pub input_width: usize,
    pub output_width: usize,
    pub f: F,
}

impl<T: Scalar, F: Fn(&[T]) -> Vec<T>> Model<T> for FnModel<F> {
    fn input_width(&self) -> usize {
        self.input_width
    }

    fn output_width(&self) -> usize {
        self.output_width
    }

    fn eval_batch(&self, rows: &[T], n: usize) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(n * self.output_width);
        for row in rows.chunks_exact(self.input_width).take(n) {
            let y = (self.f)(row);
            if y.len() != self.output_width {
                return Err(ShapError::Shape(format!("model returned {} outputs, expected {}", y.len(), self.output_width)));
            }
            out.extend(y);
        }
        Ok(out)
    }
}

/// Reference rows standing in for absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct Background<T> {
    rows: Vec<T>,
    width: usize,
    pub source_episodes: Vec<String>,
}

impl<T: Scalar> Background<T> {
    pub fn new(rows: Vec<Vec<T>>, source_episodes: Vec<String>) -> Result<Self> {
        let width = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| ShapError::InvalidBackground("no rows".into()))?;
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(ShapError::InvalidBackground("rows must share one non-zero width".into()));
        }
        Ok(Self { rows: rows.concat(), width, source_episodes })
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.rows.chunks_exact(self.width)
    }

    /// Keeps at most `max` rows, spaced uniformly through the original order.
    pub fn truncated(&self, max: usize) -> Self {
        let n = self.len();
        if max == 0 || n <= max {
            return self.clone();
        }
        let rows = (0..max).map(|i| self.row(i * n / max).to_vec()).collect();
        Self::new(rows, self.source_episodes.clone()).expect("non-empty subset")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    Permutation,
    DeepRescale,
}

/// Additive explanation of one model output at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution<T> {
    pub phi: Vec<T>,
    pub phi0: T,
    pub explained_input: Vec<T>,
    pub output_index: usize,
    pub estimator: Estimator,
}

impl<T: Scalar> Attribution<T> {
    /// `phi0 + sum(phi)`: the model output the attribution accounts for.
    pub fn reconstruction(&self) -> T {
        self.phi.iter().fold(self.phi0, |acc, &p| acc + p)
    }
}

fn check_inputs<T: Scalar, M: Model<T> + ?Sized>(model: &M, x: &[T], bg: &Background<T>, output: usize) -> Result<()> {
    if bg.is_empty() {
        return Err(ShapError::InvalidBackground("no rows".into()));
    }
    if x.len() != model.input_width() || bg.width() != model.input_width() {
        return Err(ShapError::Shape(format!(
            "model takes {} features, input has {}, background has {}",
            model.input_width(),
            x.len(),
            bg.width()
        )));
    }
    if output >= model.output_width() {
        return Err(ShapError::InvalidArgument(format!(
            "output index {output} out of range for {} outputs",
            model.output_width()
        )));
    }
    Ok(())
}

/// Mean model output for each coalition, each coalition given as a
/// presence mask over the features. Returns `masks.len() × output_width`.
/// The full coalition is evaluated once, so it reproduces `model(x)` exactly.
fn coalition_values<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    x: &[T],
    bg: &Background<T>,
    masks: &[&[bool]],
) -> Result<Vec<T>> {
    const MAX_ROWS: usize = 1 << 14;
    let width = x.len();
    let outputs = model.output_width();
    let n_bg = bg.len();
    let per_chunk = (MAX_ROWS / n_bg).max(1);
    let mut values = Vec::with_capacity(masks.len() * outputs);
    for chunk in masks.chunks(per_chunk) {
        let mut rows = Vec::with_capacity(chunk.len() * n_bg * width);
        let mut counts = Vec::with_capacity(chunk.len());
        for mask in chunk {
            if mask.iter().all(|&m| m) {
                rows.extend_from_slice(x);
                counts.push(1);
                continue;
            }
            for b in bg.rows() {
                rows.extend(mask.iter().zip(x).zip(b).map(|((&m, &xi), &bi)| if m { xi } else { bi }));
            }
            counts.push(n_bg);
        }
        let out = model.eval_batch(&rows, rows.len() / width.max(1))?;
        let mut offset = 0;
        for count in counts {
            let block = &out[offset * outputs..(offset + count) * outputs];
            let scale = T::of(1.0 / count as f64);
            for k in 0..outputs {
                let sum = block.iter().skip(k).step_by(outputs).fold(T::zero(), |a, &v| a + v);
                values.push(if count == 1 { sum } else { sum * scale });
            }
            offset += count;
        }
    }
    Ok(values)
}

/// Expected output when only the features flagged in `mask` are taken from `x`.
pub fn coalition_value<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    x: &[T],
    bg: &Background<T>,
    mask: &[bool],
    output: usize,
) -> Result<T> {
    check_inputs(model, x, bg, output)?;
    if mask.len() != x.len() {
        return Err(ShapError::Shape(format!("mask has {} entries for {} features", mask.len(), x.len())));
    }
    Ok(coalition_values(model, x, bg, &[mask])?[output])
}

/// `|S|! (M - |S| - 1)! / M!` for every coalition size `|S|` in `0..M`.
fn shapley_weights(m: usize) -> Vec<f64> {
    // ratio of consecutive weights avoids factorial overflow
    let mut w = vec![0.0; m];
    if m == 0 {
        return w;
    }
    w[0] = 1.0 / m as f64;
    for s in 1..m {
        w[s] = w[s - 1] * s as f64 / (m - s) as f64;
    }
    w
}

/// Shapley values by enumerating all `2^M` coalitions.
pub fn exact_shapley<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    x: &[T],
    bg: &Background<T>,
    output: usize,
) -> Result<Attribution<T>> {
    check_inputs(model, x, bg, output)?;
    let m = x.len();
    if m > MAX_EXACT_FEATURES {
        return Err(ShapError::BudgetExceeded(m));
    }
    let outputs = model.output_width();
    let n_coalitions = 1usize << m;
    let masks: Vec<Vec<bool>> = (0..n_coalitions)
        .map(|bits| (0..m).map(|i| bits >> i & 1 == 1).collect())
        .collect();
    let refs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
    let values = coalition_values(model, x, bg, &refs)?;
    let v = |bits: usize| values[bits * outputs + output].as_f64();
    let weights = shapley_weights(m);
    let mut phi = vec![0.0; m];
    for bits in 0..n_coalitions {
        let size = bits.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if bits >> i & 1 == 0 {
                *p += weights[size] * (v(bits | 1 << i) - v(bits));
            }
        }
    }
    Ok(Attribution {
        phi: phi.into_iter().map(T::of).collect(),
        phi0: values[output],
        explained_input: x.to_vec(),
        output_index: output,
        estimator: Estimator::Exact,
    })
}

/// Monte-Carlo Shapley values: average marginal contributions over
/// `n_permutations` uniformly drawn feature orderings.
pub fn sampled_shapley<T: Scalar, M: Model<T> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x: &[T],
    bg: &Background<T>,
    output: usize,
    n_permutations: usize,
    rng: &mut R,
) -> Result<Attribution<T>> {
    check_inputs(model, x, bg, output)?;
    Ok(sampled_shapley_all(model, x, bg, n_permutations, rng)?.swap_remove(output))
}

/// [`sampled_shapley`] for every output at once, sharing the model evaluations.
pub fn sampled_shapley_all<T: Scalar, M: Model<T> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x: &[T],
    bg: &Background<T>,
    n_permutations: usize,
    rng: &mut R,
) -> Result<Vec<Attribution<T>>> {
    check_inputs(model, x, bg, 0)?;
    if n_permutations == 0 {
        return Err(ShapError::InvalidArgument("n_permutations must be at least 1".into()));
    }
    let m = x.len();
    let outputs = model.output_width();
    let mut order: Vec<usize> = (0..m).collect();
    let mut phi = vec![0.0; m * outputs];
    let mut phi0 = vec![T::zero(); outputs];
    for p in 0..n_permutations {
        order.shuffle(rng);
        // coalitions along the permutation: empty, then one more feature each
        let mut masks = vec![vec![false; m]];
        for &i in &order {
            let mut next = masks.last().expect("starts non-empty").clone();
            next[i] = true;
            masks.push(next);
        }
        let refs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
        let values = coalition_values(model, x, bg, &refs)?;
        if p == 0 {
            phi0.copy_from_slice(&values[..outputs]);
        }
        for (step, &i) in order.iter().enumerate() {
            for k in 0..outputs {
                phi[i * outputs + k] += values[(step + 1) * outputs + k].as_f64() - values[step * outputs + k].as_f64();
            }
        }
    }
    let scale = 1.0 / n_permutations as f64;
    Ok((0..outputs)
        .map(|k| Attribution {
            phi: (0..m).map(|i| T::of(phi[i * outputs + k] * scale)).collect(),
            phi0: phi0[k],
            explained_input: x.to_vec(),
            output_index: k,
            estimator: Estimator::Permutation,
        })
        .collect())
}
