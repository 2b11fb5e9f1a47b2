use serde::{Deserialize, Serialize};

use super::network::{Gradients, NetworkWeights};
use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(weights: &NetworkWeights<T>) -> Self {
        let zeros = |w: &NetworkWeights<T>| w.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        AdamState {
            m: zeros(weights),
            v: zeros(weights),
            step: 0,
        }
    }
}

/// One Adam step with bias correction; `state.step` counts completed steps.
pub fn adam_update<T: Scalar>(
    weights: &mut NetworkWeights<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    hyper: &AdamConfig,
) -> Result<()> {
    if grads.tensors.len() != weights.tensors.len() || state.m.len() != weights.tensors.len() {
        return Err(Error::Shape(
            "gradient/optimizer state does not match weights".into(),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let one = T::one();
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    // Folded bias correction: lr_t = lr * sqrt(bc2) / bc1, eps_t = eps * sqrt(bc2).
    let lr_t = T::from_f64(hyper.lr * bc2.sqrt() / bc1);
    let eps_t = T::from_f64(hyper.eps * bc2.sqrt());
    for (k, (w, g)) in weights.tensors.iter_mut().zip(&grads.tensors).enumerate() {
        if w.data.len() != g.data.len() {
            return Err(Error::Shape(format!("gradient for {} has wrong size", w.name)));
        }
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..w.data.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            w.data[i] = w.data[i] - lr_t * m[i] / (v[i].sqrt() + eps_t);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::network::{init_network, NetworkConfig, Tensor};

    fn scalar_net(value: f64, grad: f64) -> (NetworkWeights<f64>, Gradients<f64>) {
        let w = NetworkWeights {
            config: NetworkConfig::default(),
            tensors: vec![Tensor {
                name: "x".into(),
                shape: vec![1],
                data: vec![value],
            }],
        };
        let g = Gradients {
            tensors: vec![Tensor {
                name: "x".into(),
                shape: vec![1],
                data: vec![grad],
            }],
        };
        (w, g)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut w, g) = scalar_net(0.5, 1.0);
        let mut st = AdamState::new(&w);
        adam_update(&mut w, &g, &mut st, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps) = -9.99999990e-4
        let delta = w.tensors[0].data[0] - 0.5;
        assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-14, "{delta}");
    }

    #[test]
    fn zero_gradient_leaves_weights_and_decays_moments() {
        let (mut w, g) = scalar_net(0.5, 1.0);
        let mut st = AdamState::new(&w);
        let hyper = AdamConfig::default();
        adam_update(&mut w, &g, &mut st, &hyper).unwrap();
        let (m1, v1) = (st.m[0][0], st.v[0][0]);
        let (_, zero) = scalar_net(0.0, 0.0);
        let mut w0 = w.clone();
        w0.tensors[0].data[0] = 0.25;
        let mut st0 = AdamState::new(&w0);
        adam_update(&mut w0, &zero, &mut st0, &hyper).unwrap();
        assert_eq!(w0.tensors[0].data[0], 0.25);
        adam_update(&mut w, &zero, &mut st, &hyper).unwrap();
        assert_eq!(st.m[0][0], 0.9 * m1);
        assert_eq!(st.v[0][0], 0.999 * v1);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let cfg = NetworkConfig {
            base_channels: 4,
            depth: 1,
            ..NetworkConfig::default()
        };
        let run = || {
            let mut w = init_network::<f32>(&cfg).unwrap();
            let mut st = AdamState::new(&w);
            let mut g = w.zero_gradients();
            for (k, t) in g.tensors.iter_mut().enumerate() {
                for (i, x) in t.data.iter_mut().enumerate() {
                    *x = ((k * 31 + i * 7) % 13) as f32 * 0.01 - 0.06;
                }
            }
            for _ in 0..5 {
                adam_update(&mut w, &g, &mut st, &AdamConfig::default()).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }
}
