//! DeepLIFT rescale-rule attributions averaged over background references.

use super::{check_inputs, Attribution, Background, Estimator, Result};
use crate::nn::{Activation, Mlp};
use crate::Scalar;

/// Below this |Δ pre-activation| the unit's local gradient replaces Δout/Δin.
pub const RESCALE_EPSILON: f64 = 1e-6;

/// Pre- and post-activation values of every layer for a batch of rows.
struct Trace<T> {
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

fn trace<T: Scalar>(mlp: &Mlp<T>, input: &[T], n: usize) -> Trace<T> {
    let mut pre = Vec::with_capacity(mlp.num_layers());
    let mut post = vec![input.to_vec()];
    for l in 0..mlp.num_layers() {
        let (fan_in, fan_out) = (mlp.layer_sizes()[l], mlp.layer_sizes()[l + 1]);
        let mut z = Vec::with_capacity(n * fan_out);
        for _ in 0..n {
            z.extend_from_slice(mlp.biases(l));
        }
        T::gemm(
            n,
            fan_in,
            fan_out,
            T::one(),
            &post[l],
            fan_in as isize,
            1,
            mlp.weights(l),
            1,
            fan_in as isize,
            T::one(),
            &mut z,
            fan_out as isize,
            1,
        );
        let act = mlp.activation_of(l);
        post.push(z.iter().map(|&v| act.apply(v)).collect());
        pre.push(z);
    }
    Trace { pre, post }
}

/// Δout/Δin of one unit, or its derivative when the inputs nearly coincide.
fn rescale<T: Scalar>(act: Activation, z_x: T, z_r: T, y_x: T, y_r: T) -> T {
    match act {
        Activation::Linear => T::one(),
        _ => {
            let dz = z_x - z_r;
            if dz.abs() < T::of(RESCALE_EPSILON) {
                act.derivative_from_output(y_x)
            } else {
                (y_x - y_r) / dz
            }
        }
    }
}

/// Rescale-rule attributions for every output of `mlp` at `x`.
pub fn deep_shap_all<T: Scalar>(mlp: &Mlp<T>, x: &[T], bg: &Background<T>) -> Result<Vec<Attribution<T>>> {
    check_inputs(mlp, x, bg, 0)?;
    let n_ref = bg.len();
    let outputs = mlp.output_width();
    let width = mlp.input_width();
    let refs: Vec<T> = bg.rows().flatten().copied().collect();
    let rt = trace(mlp, &refs, n_ref);
    let xt = trace(mlp, x, 1);

    // Multipliers w.r.t. the current layer's outputs, one row per
    // (output, reference) pair: row k * n_ref + r.
    let rows = outputs * n_ref;
    let mut mult = vec![T::zero(); rows * outputs];
    for k in 0..outputs {
        for r in 0..n_ref {
            mult[(k * n_ref + r) * outputs + k] = T::one();
        }
    }
    for l in (0..mlp.num_layers()).rev() {
        let (fan_in, fan_out) = (mlp.layer_sizes()[l], mlp.layer_sizes()[l + 1]);
        let act = mlp.activation_of(l);
        // through the nonlinearity: per (reference, unit) factor
        let factors: Vec<T> = (0..n_ref)
            .flat_map(|r| {
                let (pre, post, xt) = (&rt.pre[l], &rt.post[l + 1], &xt);
                (0..fan_out).map(move |j| {
                    rescale(act, xt.pre[l][j], pre[r * fan_out + j], xt.post[l + 1][j], post[r * fan_out + j])
                })
            })
            .collect();
        for (i, m) in mult.iter_mut().enumerate() {
            let row = i / fan_out;
            let r = row % n_ref;
            *m *= factors[r * fan_out + i % fan_out];
        }
        // through the affine map: M_in = M_out · W
        let mut next = vec![T::zero(); rows * fan_in];
        T::gemm(
            rows,
            fan_out,
            fan_in,
            T::one(),
            &mult,
            fan_out as isize,
            1,
            mlp.weights(l),
            fan_in as isize,
            1,
            T::zero(),
            &mut next,
            fan_in as isize,
            1,
        );
        mult = next;
    }

    let scale = T::of(1.0 / n_ref as f64);
    let fx_base: Vec<T> = (0..outputs)
        .map(|k| {
            let sum = (0..n_ref).fold(T::zero(), |a, r| a + rt.post.last().expect("output layer")[r * outputs + k]);
            sum * scale
        })
        .collect();
    Ok((0..outputs)
        .map(|k| {
            let mut phi = vec![T::zero(); width];
            for r in 0..n_ref {
                let m = &mult[(k * n_ref + r) * width..(k * n_ref + r + 1) * width];
                for (i, p) in phi.iter_mut().enumerate() {
                    *p += m[i] * (x[i] - refs[r * width + i]);
                }
            }
            phi.iter_mut().for_each(|p| *p *= scale);
            Attribution {
                phi,
                phi0: fx_base[k],
                explained_input: x.to_vec(),
                output_index: k,
                estimator: Estimator::DeepRescale,
            }
        })
        .collect())
}

/// Rescale-rule attribution of output `output` of `mlp` at `x`.
pub fn deep_shap<T: Scalar>(mlp: &Mlp<T>, x: &[T], bg: &Background<T>, output: usize) -> Result<Attribution<T>> {
    check_inputs(mlp, x, bg, output)?;
    Ok(deep_shap_all(mlp, x, bg)?.swap_remove(output))
}
