//! First-order optimizers over a network's parameters.

use serde::{Deserialize, Serialize};

use crate::model::Network;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    AdaptiveMoments,
}

/// Optimizer state, one slot per parameter tensor in visiting order.
#[derive(Debug, Clone)]
pub enum Optimizer {
    SgdMomentum {
        lr: f64,
        momentum: f64,
        velocity: Vec<Vec<f64>>,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new<T: Real>(kind: OptimizerKind, lr: f64, net: &Network<T>) -> Self {
        let mut zeros = Vec::new();
        net.visit_params(&mut |p| zeros.push(vec![0.0; p.len()]));
        match kind {
            OptimizerKind::SgdMomentum => Optimizer::SgdMomentum {
                lr,
                momentum: 0.9,
                velocity: zeros,
            },
            OptimizerKind::AdaptiveMoments => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step<T: Real>(&mut self, net: &mut Network<T>) {
        match self {
            Optimizer::SgdMomentum { lr, momentum, velocity } => {
                let mut slot = 0;
                net.visit_params_mut(&mut |p| {
                    let vel = &mut velocity[slot];
                    for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(vel.iter_mut()) {
                        *v = *momentum * *v + g.as_f64();
                        *w = T::from_f64(w.as_f64() - *lr * *v);
                    }
                    slot += 1;
                });
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                let mut slot = 0;
                net.visit_params_mut(&mut |p| {
                    let (ms, vs) = (&mut m[slot], &mut v[slot]);
                    for (((w, g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(ms.iter_mut()).zip(vs.iter_mut()) {
                        let g = g.as_f64();
                        *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                        *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w = T::from_f64(w.as_f64() - *lr * mhat / (vhat.sqrt() + *eps));
                    }
                    slot += 1;
                });
            }
        }
    }
}
