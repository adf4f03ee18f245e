//! SGD and Adam parameter updates.

use super::{Gradients, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptMethod {
    Sgd,
    #[default]
    Adam,
}

/// Optimizer state: method, learning rate, step counter, and (for Adam)
/// per-parameter first/second moment accumulators.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub method: OptMethod,
    pub learning_rate: f64,
    pub step: u64,
    /// One (m, v) pair per parameter, allocated on first use.
    pub moments: Vec<(Tensor, Tensor)>,
}

impl OptimizerState {
    pub fn new(method: OptMethod, learning_rate: f64) -> Self {
        OptimizerState {
            method,
            learning_rate,
            step: 0,
            moments: Vec::new(),
        }
    }
}

/// Applies one optimizer update in place.
///
/// SGD: `p -= lr * g`. Adam: bias-corrected moment update with the
/// conventional constants (0.9, 0.999, 1e-8).
pub fn optimizer_step(net: &mut Network, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.entries.len() != net.params().len() {
        return Err(Error::Input(format!(
            "{} gradients for {} parameters",
            grads.entries.len(),
            net.params().len()
        )));
    }
    for (i, (_, g)) in grads.entries.iter().enumerate() {
        if g.shape() != net.params()[i].value.shape() {
            return Err(Error::Input(format!(
                "gradient shape {:?} does not match parameter {} shape {:?}",
                g.shape(),
                net.params()[i].name,
                net.params()[i].value.shape()
            )));
        }
    }
    if state.method == OptMethod::Adam && state.moments.is_empty() {
        state.moments = net
            .params()
            .iter()
            .map(|p| {
                (
                    Tensor::zeros(p.value.shape().to_vec()),
                    Tensor::zeros(p.value.shape().to_vec()),
                )
            })
            .collect();
    }
    state.step += 1;
    let lr = state.learning_rate;
    match state.method {
        OptMethod::Sgd => {
            for (i, (_, g)) in grads.entries.iter().enumerate() {
                for (p, &gv) in net.param_mut(i).data_mut().iter_mut().zip(g.data()) {
                    *p -= lr * gv;
                }
            }
        }
        OptMethod::Adam => {
            let t = state.step as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            for (i, (_, g)) in grads.entries.iter().enumerate() {
                let (m, v) = &mut state.moments[i];
                for ((p, &gv), (mv, vv)) in net
                    .param_mut(i)
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                {
                    *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                    *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, LayerSpec, NetworkSpec};

    fn scalar_net() -> Network {
        let spec = NetworkSpec {
            input: (1, 1, 1),
            layers: vec![LayerSpec::FullyConnected { width: 1 }],
            code_width: 1,
        };
        build_network(&spec, 0).unwrap()
    }

    fn grads_for(net: &Network, weight_grad: f64, bias_grad: f64) -> Gradients {
        Gradients {
            entries: vec![
                (
                    net.params()[0].name.clone(),
                    Tensor::from_vec(vec![1, 1], vec![weight_grad]).unwrap(),
                ),
                (
                    net.params()[1].name.clone(),
                    Tensor::from_vec(vec![1], vec![bias_grad]).unwrap(),
                ),
            ],
        }
    }

    #[test]
    fn sgd_zero_gradients_keep_parameters() {
        let mut net = scalar_net();
        let before: Vec<f64> = net.params().iter().flat_map(|p| p.value.data().to_vec()).collect();
        let grads = grads_for(&net, 0.0, 0.0);
        let mut st = OptimizerState::new(OptMethod::Sgd, 0.1);
        optimizer_step(&mut net, &grads, &mut st).unwrap();
        let after: Vec<f64> = net.params().iter().flat_map(|p| p.value.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn sgd_definition() {
        let mut net = scalar_net();
        net.param_mut(0).data_mut()[0] = 1.0;
        let grads = grads_for(&net, 0.5, 0.0);
        let mut st = OptimizerState::new(OptMethod::Sgd, 0.1);
        optimizer_step(&mut net, &grads, &mut st).unwrap();
        assert!((net.params()[0].value.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // at t = 1 the bias-corrected update is lr * g / (|g| + eps)
        let mut net = scalar_net();
        net.param_mut(0).data_mut()[0] = 0.0;
        let g = -0.37;
        let grads = grads_for(&net, g, 0.0);
        let mut st = OptimizerState::new(OptMethod::Adam, 0.001);
        optimizer_step(&mut net, &grads, &mut st).unwrap();
        let expected = -0.001 * g / (g.abs() + ADAM_EPS);
        let got = net.params()[0].value.data()[0];
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn gradient_shape_mismatch_rejected() {
        let mut net = scalar_net();
        let grads = Gradients {
            entries: vec![
                (
                    "layer0.weight".to_string(),
                    Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap(),
                ),
                ("layer0.bias".to_string(), Tensor::zeros(vec![1])),
            ],
        };
        let mut st = OptimizerState::new(OptMethod::Sgd, 0.1);
        assert!(optimizer_step(&mut net, &grads, &mut st).is_err());
    }
}
