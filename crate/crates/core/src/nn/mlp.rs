use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Result};
use crate::Scalar;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Elementwise nonlinearity applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output `y = f(z)`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Linear => T::one(),
        }
    }
}

/// Fully connected feed-forward network.
///
/// `weights[l]` is stored row-major with shape `layer_sizes[l+1] × layer_sizes[l]`.
#[derive(Debug, Clone)]
pub struct Mlp<T: Scalar> {
    layer_sizes: Vec<usize>,
    pub(crate) weights: Vec<Vec<T>>,
    pub(crate) biases: Vec<Vec<T>>,
    hidden_activation: Activation,
    output_activation: Activation,
    // Changes whenever parameters change; lets `backward` reject stale caches.
    generation: u64,
}

/// Activations recorded by [`Mlp::forward_batch`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    generation: u64,
    batch: usize,
    // activations[0] is the input, activations[l + 1] the output of layer l.
    activations: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Network output, row-major `batch × output_width`.
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("cache holds the input at least")
    }

    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Post-activation values of every layer, index 0 being the input.
    pub fn activations(&self) -> &[Vec<T>] {
        &self.activations
    }
}

/// Parameter gradients, shape-congruent with the network they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T: Scalar> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Self {
            weights: mlp.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: mlp.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.biases.iter()).flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|g| *g == T::zero())
    }

    fn congruent_with(&self, mlp: &Mlp<T>) -> bool {
        self.weights.len() == mlp.weights.len()
            && self.biases.len() == mlp.biases.len()
            && self.weights.iter().zip(&mlp.weights).all(|(g, w)| g.len() == w.len())
            && self.biases.iter().zip(&mlp.biases).all(|(g, b)| g.len() == b.len())
    }
}

impl<T: Scalar> Mlp<T> {
    /// Builds a network with weights uniform in `±1/sqrt(fan_in)` and zero biases.
    pub fn new(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| T::of(rng.random_range(-bound..=bound)))
                    .collect(),
            );
            biases.push(vec![T::zero(); fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
            generation: fresh_generation(),
        })
    }

    /// Builds a network from explicit parameters (row-major weight matrices).
    pub fn from_parameters(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        weights: Vec<Vec<T>>,
        biases: Vec<Vec<T>>,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(NnError::Shape(format!(
                "expected {layers} weight and bias blocks, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] || biases[l].len() != pair[1] {
                return Err(NnError::Shape(format!(
                    "layer {l}: expected {}x{} weights and {} biases",
                    pair[1], pair[0], pair[1]
                )));
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
            generation: fresh_generation(),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    /// Activation applied after layer `l`.
    pub fn activation_of(&self, l: usize) -> Activation {
        if l + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Row-major `out × in` weight matrix of layer `l`.
    pub fn weights(&self, l: usize) -> &[T] {
        &self.weights[l]
    }

    pub fn biases(&self, l: usize) -> &[T] {
        &self.biases[l]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.biases.iter()).flatten()
    }

    /// Mutable access to every parameter, weights first then biases.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.generation = fresh_generation();
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    pub fn same_architecture(&self, other: &Mlp<T>) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
    }

    pub(crate) fn touch(&mut self) {
        self.generation = fresh_generation();
    }

    /// Single-sample forward pass without recording activations.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input.len(), 1)?;
        let mut current = input.to_vec();
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let act = self.activation_of(l);
            let w = &self.weights[l];
            let next = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = row
                        .iter()
                        .zip(&current)
                        .fold(self.biases[l][o], |acc, (&wi, &xi)| acc + wi * xi);
                    act.apply(z)
                })
                .collect();
            current = next;
        }
        Ok(current)
    }

    /// Single-sample forward pass returning the output and its cache.
    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass over a row-major `batch × input_width` matrix.
    pub fn forward_batch(&self, input: &[T], batch: usize) -> Result<ForwardCache<T>> {
        self.check_input(input.len(), batch)?;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(input.to_vec());
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(&self.biases[l]);
            }
            // Z = X·Wᵀ + b
            T::gemm(
                batch,
                fan_in,
                fan_out,
                T::one(),
                &activations[l],
                fan_in as isize,
                1,
                &self.weights[l],
                1,
                fan_in as isize,
                T::one(),
                &mut z,
                fan_out as isize,
                1,
            );
            let act = self.activation_of(l);
            if act != Activation::Linear {
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            activations.push(z);
        }
        Ok(ForwardCache {
            generation: self.generation,
            batch,
            activations,
        })
    }

    /// Reverse pass for a loss whose gradient w.r.t. the outputs is
    /// `output_gradient` (row-major `batch × output_width`).
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_gradient: &[T],
    ) -> Result<(ParamGrads<T>, Vec<T>)> {
        let mut grads = ParamGrads::zeros_like(self);
        let input_grad = self.backprop(cache, output_gradient, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Gradient w.r.t. the input only; skips parameter gradients.
    pub fn input_gradient(&self, cache: &ForwardCache<T>, output_gradient: &[T]) -> Result<Vec<T>> {
        self.backprop(cache, output_gradient, None)
    }

    fn backprop(
        &self,
        cache: &ForwardCache<T>,
        output_gradient: &[T],
        mut grads: Option<&mut ParamGrads<T>>,
    ) -> Result<Vec<T>> {
        if cache.generation != self.generation
            || cache.activations.len() != self.layer_sizes.len()
        {
            return Err(NnError::StaleCache);
        }
        let batch = cache.batch;
        if output_gradient.len() != batch * self.output_width() {
            return Err(NnError::Shape(format!(
                "output gradient has {} entries, expected {}",
                output_gradient.len(),
                batch * self.output_width()
            )));
        }
        // delta holds dLoss/dZ for the current layer.
        let mut delta = output_gradient.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let act = self.activation_of(l);
            if act != Activation::Linear {
                for (d, &y) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    *d *= act.derivative_from_output(y);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                // dW = δᵀ·X
                T::gemm(
                    fan_out,
                    batch,
                    fan_in,
                    T::one(),
                    &delta,
                    1,
                    fan_out as isize,
                    &cache.activations[l],
                    fan_in as isize,
                    1,
                    T::zero(),
                    &mut g.weights[l],
                    fan_in as isize,
                    1,
                );
                let db = &mut g.biases[l];
                for row in delta.chunks_exact(fan_out) {
                    for (b, &d) in db.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            // dX = δ·W
            let mut prev = vec![T::zero(); batch * fan_in];
            T::gemm(
                batch,
                fan_out,
                fan_in,
                T::one(),
                &delta,
                fan_out as isize,
                1,
                &self.weights[l],
                fan_in as isize,
                1,
                T::zero(),
                &mut prev,
                fan_in as isize,
                1,
            );
            delta = prev;
        }
        Ok(delta)
    }

    /// `self ← retain·self + (1 − retain)·source`, parameter by parameter.
    pub fn polyak_update(&mut self, source: &Mlp<T>, retain: T) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(NnError::Shape(format!(
                "polyak update between {:?} and {:?}",
                self.layer_sizes, source.layer_sizes
            )));
        }
        if !(retain >= T::zero() && retain <= T::one()) {
            return Err(NnError::InvalidArgument(format!(
                "polyak retain {retain} outside [0, 1]"
            )));
        }
        let mix = T::one() - retain;
        let targets = self.weights.iter_mut().chain(self.biases.iter_mut()).flatten();
        let sources = source.weights.iter().chain(source.biases.iter()).flatten();
        for (t, &s) in targets.zip(sources) {
            // keeps the endpoints exact: retain = 0 copies, retain = 1 freezes
            *t = if retain == T::zero() {
                s
            } else if retain == T::one() {
                *t
            } else {
                retain * *t + mix * s
            };
        }
        self.touch();
        Ok(())
    }

    pub(crate) fn check_grads(&self, grads: &ParamGrads<T>) -> Result<()> {
        if grads.congruent_with(self) {
            Ok(())
        } else {
            Err(NnError::Shape("gradient shapes do not match the network".into()))
        }
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        if batch == 0 || len != batch * self.input_width() {
            return Err(NnError::Shape(format!(
                "input of {len} values for batch {batch}, network expects width {}",
                self.input_width()
            )));
        }
        Ok(())
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
        return Err(NnError::InvalidArchitecture(format!(
            "layer sizes {layer_sizes:?}: need at least two positive widths"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_identity(n: usize) -> Mlp<f64> {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Mlp::from_parameters(&[n, n], Activation::Relu, Activation::Linear, vec![w], vec![vec![0.0; n]])
            .unwrap()
    }

    #[test]
    fn actor_and_critic_shapes() {
        let actor = Mlp::<f32>::new(&[20, 256, 256, 256, 4], Activation::Relu, Activation::Tanh, 1).unwrap();
        assert_eq!(actor.output_width(), 4);
        assert_eq!(actor.weights(0).len(), 256 * 20);
        assert_eq!(actor.biases(3).len(), 4);
        let critic = Mlp::<f32>::new(&[24, 256, 256, 256, 1], Activation::Relu, Activation::Linear, 1).unwrap();
        assert_eq!(critic.input_width(), 24);
        assert_eq!(critic.output_width(), 1);
        assert!(critic.biases.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Mlp::<f64>::new(&[2, 2], Activation::Relu, Activation::Linear, 9).unwrap();
        let b = Mlp::<f64>::new(&[2, 2], Activation::Relu, Activation::Linear, 9).unwrap();
        assert_eq!(a.weights, b.weights);
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.parameters().all(|w| w.abs() <= bound));
    }

    #[test]
    fn rejects_bad_architectures() {
        for sizes in [&[][..], &[3][..], &[3, 0, 2][..]] {
            assert!(matches!(
                Mlp::<f64>::new(sizes, Activation::Relu, Activation::Linear, 0),
                Err(NnError::InvalidArchitecture(_))
            ));
        }
    }

    #[test]
    fn zero_network_with_tanh_outputs_zero() {
        let net = Mlp::<f64>::from_parameters(
            &[3, 4, 2],
            Activation::Relu,
            Activation::Tanh,
            vec![vec![0.0; 12], vec![0.0; 8]],
            vec![vec![0.0; 4], vec![0.0; 2]],
        )
        .unwrap();
        assert_eq!(net.predict(&[5.0, -2.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = linear_identity(3);
        let x = [0.3, -1.5, 2.0];
        assert_eq!(net.predict(&x).unwrap(), x.to_vec());
        assert_eq!(net.forward(&x).unwrap().0, x.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let net = linear_identity(3);
        assert!(matches!(net.predict(&[1.0]), Err(NnError::Shape(_))));
        assert!(matches!(net.forward_batch(&[1.0; 5], 2), Err(NnError::Shape(_))));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let net = Mlp::<f64>::from_parameters(
            &[3, 2],
            Activation::Relu,
            Activation::Linear,
            vec![vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        let x = [1.0, 2.0, -1.0];
        let g = [0.7, -2.0];
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &g).unwrap();
        let expected: Vec<f64> = g.iter().flat_map(|gi| x.iter().map(move |xj| gi * xj)).collect();
        assert_eq!(grads.weights[0], expected);
        assert_eq!(grads.biases[0], g.to_vec());
        // dx = Wᵀ g
        for (a, b) in dx.iter().zip([0.35, -2.7, -4.6]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_grads() {
        let net = Mlp::<f64>::new(&[4, 6, 3], Activation::Relu, Activation::Tanh, 3).unwrap();
        let cache = net.forward_batch(&[0.1; 8], 2).unwrap();
        let (grads, dx) = net.backward(&cache, &[0.0; 6]).unwrap();
        assert!(grads.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Mlp::<f64>::new(&[2, 3, 1], Activation::Relu, Activation::Linear, 3).unwrap();
        let other = Mlp::<f64>::new(&[2, 3, 1], Activation::Relu, Activation::Linear, 4).unwrap();
        let (_, cache) = net.forward(&[1.0, 1.0]).unwrap();
        assert!(matches!(other.backward(&cache, &[1.0]), Err(NnError::StaleCache)));
        let source = other.clone();
        net.polyak_update(&source, 0.5).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(NnError::StaleCache)));
    }

    #[test]
    fn polyak_endpoints_and_mix() {
        let zeros = |v: f64| {
            Mlp::<f64>::from_parameters(&[1, 1], Activation::Relu, Activation::Linear, vec![vec![v]], vec![vec![v]])
                .unwrap()
        };
        let source = zeros(1.0);
        let mut t = zeros(0.0);
        t.polyak_update(&source, 0.95).unwrap();
        assert!((t.weights[0][0] - 0.05).abs() < 1e-15);
        let mut t = zeros(0.3);
        t.polyak_update(&source, 1.0).unwrap();
        assert_eq!(t.weights[0][0], 0.3);
        t.polyak_update(&source, 0.0).unwrap();
        assert_eq!(t.weights, source.weights);
        let wide = Mlp::<f64>::new(&[1, 2], Activation::Relu, Activation::Linear, 0).unwrap();
        assert!(matches!(t.polyak_update(&wide, 0.5), Err(NnError::Shape(_))));
    }

    #[test]
    fn batch_forward_matches_single_sample() {
        let net = Mlp::<f64>::new(&[5, 7, 7, 3], Activation::Relu, Activation::Tanh, 11).unwrap();
        let xs: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).cos()).collect();
        let cache = net.forward_batch(&xs, 3).unwrap();
        for (row, x) in xs.chunks(5).enumerate() {
            let single = net.predict(x).unwrap();
            for (a, b) in single.iter().zip(&cache.output()[row * 3..row * 3 + 3]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
