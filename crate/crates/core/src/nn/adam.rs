use super::{Mlp, NnError, ParamGrads, Result};
use crate::Scalar;

/// Moment estimates for Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub first_moment: ParamGrads<T>,
    pub second_moment: ParamGrads<T>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments with `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(mlp: &Mlp<T>) -> Self {
        Self::with_constants(mlp, T::of(0.9), T::of(0.999), T::of(1e-8))
    }

    pub fn with_constants(mlp: &Mlp<T>, beta1: T, beta2: T, epsilon: T) -> Self {
        Self {
            first_moment: ParamGrads::zeros_like(mlp),
            second_moment: ParamGrads::zeros_like(mlp),
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

impl<T: Scalar> Mlp<T> {
    /// One Adam step. Gradients containing NaN/inf are refused and leave
    /// both the network and the optimizer state untouched.
    pub fn adam_step(
        &mut self,
        grads: &ParamGrads<T>,
        state: &mut AdamState<T>,
        learning_rate: T,
    ) -> Result<()> {
        self.check_grads(grads)?;
        self.check_grads(&state.first_moment)?;
        if !grads.is_finite() {
            return Err(NnError::PoisonedUpdate);
        }
        state.step_count += 1;
        let t = state.step_count as i32;
        let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
        let correction1 = T::one() - b1.powi(t);
        let correction2 = T::one() - b2.powi(t);
        let step_size = learning_rate / correction1;

        let update = |params: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for (((p, &g), m), v) in params.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step_size * *m / ((*v / correction2).sqrt() + eps);
            }
        };
        for l in 0..self.num_layers() {
            update(
                &mut self.weights[l],
                &grads.weights[l],
                &mut state.first_moment.weights[l],
                &mut state.second_moment.weights[l],
            );
            update(
                &mut self.biases[l],
                &grads.biases[l],
                &mut state.first_moment.biases[l],
                &mut state.second_moment.biases[l],
            );
        }
        self.touch();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn scalar_net(w: f64) -> Mlp<f64> {
        Mlp::from_parameters(&[1, 1], Activation::Relu, Activation::Linear, vec![vec![w]], vec![vec![0.0]])
            .unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.5);
        let mut state = AdamState::new(&net);
        let grads = ParamGrads { weights: vec![vec![1.0]], biases: vec![vec![0.0]] };
        net.adam_step(&grads, &mut state, 0.001).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((net.weights(0)[0] - expected).abs() < 1e-15);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_moments() {
        let mut net = Mlp::<f64>::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, 5).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net);
        let zeros = ParamGrads::zeros_like(&net);
        net.adam_step(&zeros, &mut state, 0.01).unwrap();
        assert_eq!(net.weights, before.weights);
        assert_eq!(net.biases, before.biases);
        assert!(state.first_moment.is_zero() && state.second_moment.is_zero());
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut net = Mlp::<f64>::new(&[3, 2], Activation::Relu, Activation::Linear, 5).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net);
        let mut g = ParamGrads::zeros_like(&net);
        g.weights[0].iter_mut().for_each(|v| *v = 0.3);
        net.adam_step(&g, &mut state, 0.0).unwrap();
        assert_eq!(net.weights, before.weights);
    }

    #[test]
    fn nan_gradient_is_refused() {
        let mut net = scalar_net(0.5);
        let mut state = AdamState::new(&net);
        let grads = ParamGrads { weights: vec![vec![f64::NAN]], biases: vec![vec![0.0]] };
        assert!(matches!(net.adam_step(&grads, &mut state, 0.1), Err(NnError::PoisonedUpdate)));
        assert_eq!(net.weights(0)[0], 0.5);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut net = scalar_net(0.5);
        let mut state = AdamState::new(&net);
        let grads = ParamGrads { weights: vec![vec![1.0, 2.0]], biases: vec![vec![0.0]] };
        assert!(matches!(net.adam_step(&grads, &mut state, 0.1), Err(NnError::Shape(_))));
    }
}
