use serde::{Deserialize, Serialize};

use super::{Matrix, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
}

impl AdamState {
    pub fn for_params(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect()
        };
        Self {
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// Adam with bias correction. `step` never mutates its inputs; it returns the
/// updated parameters and optimizer state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config }
    }

    pub fn step(&self, params: &ParamSet, grads: &[Matrix], state: &AdamState) -> Result<(ParamSet, AdamState)> {
        if grads.len() != params.len()
            || state.first_moment.len() != params.len()
            || grads.iter().zip(params.values()).any(|(g, p)| g.shape() != p.shape())
        {
            return Err(Error::Contract("gradient shapes do not match parameters".into()));
        }
        for (g, name) in grads.iter().zip(params.names()) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { param: name.clone() });
            }
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = state.step + 1;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        let mut new_values = Vec::with_capacity(params.len());
        let mut m1 = Vec::with_capacity(params.len());
        let mut m2 = Vec::with_capacity(params.len());
        for (i, p) in params.values().iter().enumerate() {
            let g = grads[i].as_slice();
            let m = state.first_moment[i].zip_map(&grads[i], |m, g| beta1 * m + (1.0 - beta1) * g);
            let v = state.second_moment[i].zip_map(&grads[i], |v, g| beta2 * v + (1.0 - beta2) * g * g);
            let mut np = p.clone();
            for (j, x) in np.as_mut_slice().iter_mut().enumerate() {
                let mh = m.as_slice()[j] / bc1;
                let vh = v.as_slice()[j] / bc2;
                *x -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
            debug_assert_eq!(g.len(), np.len());
            new_values.push(np);
            m1.push(m);
            m2.push(v);
        }
        Ok((
            params.with_values(new_values)?,
            AdamState {
                step: t,
                first_moment: m1,
                second_moment: m2,
            },
        ))
    }
}
