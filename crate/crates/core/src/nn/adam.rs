use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Slot {
    name: String,
    m: Matrix,
    v: Matrix,
}

/// Adam with bias correction.
///
/// Moment slots are bound to parameter names on the first step; later steps
/// must present the same parameters in the same order.
pub struct Adam {
    config: AdamConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, mut params: Vec<(String, &mut Matrix)>, grads: Vec<(String, &Matrix)>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((pname, p), (gname, g)) in params.iter().zip(&grads) {
            if pname != gname || p.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "adam: parameter `{pname}` {:?} paired with gradient `{gname}` {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { path: gname.clone() });
            }
        }
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|(name, p)| Slot {
                    name: name.clone(),
                    m: Matrix::zeros(p.rows(), p.cols()),
                    v: Matrix::zeros(p.rows(), p.cols()),
                })
                .collect();
        } else if self.slots.len() != params.len()
            || self.slots.iter().zip(&params).any(|(s, (n, _))| &s.name != n)
        {
            return Err(Error::invalid("adam: parameter set changed between steps"));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (slot, ((_, p), (_, g))) in self.slots.iter_mut().zip(params.iter_mut().zip(&grads)) {
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
