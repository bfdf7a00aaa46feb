//! Adam with bias correction.

use super::{Gradients, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state shaped like `net`'s parameters.
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let shapes: Vec<usize> = net
            .layers()
            .iter()
            .flat_map(|l| [l.weights().as_slice().len(), l.bias().len()])
            .collect();
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Applies one Adam update to `net`. Gradients are validated before any
/// parameter or moment is touched.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() * 2 != state.first_moment.len() {
        return Err(Error::shape("adam_step", state.first_moment.len() / 2, grads.layers.len()));
    }
    let grad_slices: Vec<&[f64]> = grads
        .layers
        .iter()
        .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
        .collect();
    for (k, (g, m)) in grad_slices.iter().zip(&state.first_moment).enumerate() {
        if g.len() != m.len() {
            return Err(Error::shape("adam_step", m.len(), g.len()));
        }
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                layer: k / 2,
                index,
                value: g[index],
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (((params, g), m), v) in net
        .parameter_slices_mut()
        .into_iter()
        .zip(grad_slices)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{l2_loss_grad, Activation, DenseLayer, LayerGradient, Matrix};

    fn scalar_net(w: f64) -> Mlp {
        Mlp::new(vec![DenseLayer::new(Matrix::new(1, 1, vec![w]).unwrap(), vec![0.0], Activation::Linear, 0.0).unwrap()])
            .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![LayerGradient {
                weights: Matrix::from_fn(1, 1, |_, _| g),
                bias: vec![0.0],
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar_net(0.3);
        let mut state = AdamState::new(&net, 1e-3);
        adam_step(&mut net, &scalar_grad(0.0), &mut state).unwrap();
        assert_eq!(net.parameters(), vec![0.3, 0.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.3);
        let mut state = AdamState::new(&net, 1e-3);
        adam_step(&mut net, &scalar_grad(1.0), &mut state).unwrap();
        // m_hat = 1, v_hat = 1: delta = lr / (1 + eps).
        let expected = 0.3 - 1e-3 / (1.0 + 1e-8);
        assert!((net.parameters()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_gradient_untouched() {
        let mut net = scalar_net(0.3);
        let mut state = AdamState::new(&net, 1e-3);
        let err = adam_step(&mut net, &scalar_grad(f64::NAN), &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 0, index: 0, .. }));
        assert_eq!(state.step, 0);
        assert_eq!(net.parameters()[0], 0.3);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut net = Mlp::he_normal(3, &[5], 3, Activation::Relu, Activation::Linear, 0.2, &mut rng).unwrap();
            let mut state = AdamState::new(&net, 1e-2);
            let x = Matrix::from_fn(8, 3, |r, c| ((r * 3 + c) as f64).sin());
            for _ in 0..20 {
                let (out, tape) = net.forward(&x, true, &mut rng).unwrap();
                let g = l2_loss_grad(&out, &x).unwrap();
                let (grads, _) = net.backward(&tape, &g).unwrap();
                adam_step(&mut net, &grads, &mut state).unwrap();
            }
            net.parameters()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
