//! Parameter updates: plain gradient descent and adaptive moments.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Update rule. `Adam::default()` carries the crate-wide training defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptMode {
    /// p <- p - lr * g
    Sgd { lr: f64 },
    /// Bias-corrected adaptive moment estimation.
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptMode {
    pub fn adam_default() -> Self {
        OptMode::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam_with_lr(lr: f64) -> Self {
        OptMode::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<E> {
    m: Tensor<E>,
    v: Tensor<E>,
}

/// Optimizer state: per-parameter moment accumulators (adaptive mode) and a
/// step counter that increases by exactly 1 per update.
#[derive(Debug, Clone)]
pub struct Optimizer<E> {
    mode: OptMode,
    moments: Option<Vec<Moments<E>>>,
    step: u64,
}

impl<E: Scalar> Optimizer<E> {
    pub fn new(mode: OptMode, param_shapes: &[Vec<usize>]) -> Self {
        let moments = match mode {
            OptMode::Sgd { .. } => None,
            OptMode::Adam { .. } => Some(
                param_shapes
                    .iter()
                    .map(|s| Moments {
                        m: Tensor::zeros(s.clone()),
                        v: Tensor::zeros(s.clone()),
                    })
                    .collect(),
            ),
        };
        Optimizer {
            mode,
            moments,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i]` must match `params[i]` in shape; a `None`
    /// gradient leaves that parameter untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<E>], grads: &[Option<Tensor<E>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "optimizer: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            let g = match &grads[i] {
                Some(g) => g,
                None => continue,
            };
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "optimizer: param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            match self.mode {
                OptMode::Sgd { lr } => {
                    let lr = E::from_f64(lr);
                    let pd = p.data_mut();
                    let gd = g.data();
                    for j in 0..pd.len() {
                        pd[j] = pd[j] - lr * gd[j];
                    }
                }
                OptMode::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let t = self.step as i32;
                    let corr1 = E::from_f64(1.0 - beta1.powi(t));
                    let corr2 = E::from_f64(1.0 - beta2.powi(t));
                    let (b1, b2) = (E::from_f64(beta1), E::from_f64(beta2));
                    let (lr, eps) = (E::from_f64(lr), E::from_f64(eps));
                    let one = E::one();
                    let mom = &mut self.moments.as_mut().unwrap()[i];
                    let pd = p.data_mut();
                    let gd = g.data();
                    let md = mom.m.data_mut();
                    let vd = mom.v.data_mut();
                    for j in 0..pd.len() {
                        md[j] = b1 * md[j] + (one - b1) * gd[j];
                        vd[j] = b2 * vd[j] + (one - b2) * gd[j] * gd[j];
                        let mhat = md[j] / corr1;
                        let vhat = vd[j] / corr2;
                        pd[j] = pd[j] - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
