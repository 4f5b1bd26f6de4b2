use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-parameter accumulators; empty until the first adaptive step.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr),
            OptimizerKind::Adam => Self::adam(lr),
        }
    }

    /// Applies one update to every trainable parameter holding a gradient.
    pub fn step(&self, store: &mut ParamStore) {
        for p in store.iter_mut().filter(|p| p.trainable) {
            let Some(grad) = p.tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in p.tensor.data_mut().iter_mut().zip(&grad) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let st = &mut p.state;
                    if st.first_moment.len() != grad.len() {
                        st.first_moment = vec![0.0; grad.len()];
                        st.second_moment = vec![0.0; grad.len()];
                    }
                    st.step += 1;
                    let bc1 = 1.0 - self.beta1.powi(st.step as i32);
                    let bc2 = 1.0 - self.beta2.powi(st.step as i32);
                    let data = p.tensor.data_mut();
                    for i in 0..grad.len() {
                        let g = grad[i];
                        st.first_moment[i] = self.beta1 * st.first_moment[i] + (1.0 - self.beta1) * g;
                        st.second_moment[i] =
                            self.beta2 * st.second_moment[i] + (1.0 - self.beta2) * g * g;
                        let m_hat = st.first_moment[i] / bc1;
                        let v_hat = st.second_moment[i] / bc2;
                        data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
