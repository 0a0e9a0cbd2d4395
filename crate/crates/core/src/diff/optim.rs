use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diff::ParamStore;
use crate::error::{CodanoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam update of every unfrozen entry.
    ///
    /// Frozen entries are left untouched; an unfrozen entry without a gradient
    /// is an error and nothing is updated.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, e)| !e.frozen && e.grad.is_none()) {
            return Err(CodanoError::TrainingState(format!(
                "trainable parameter `{name}` has no gradient"
            )));
        }
        for (name, e) in params.iter() {
            if let Some(g) = &e.grad {
                if g.len() != e.tensor.len() {
                    return Err(CodanoError::TrainingState(format!(
                        "gradient of `{name}` has {} entries for {} values",
                        g.len(),
                        e.tensor.len()
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, e) in params.iter_mut() {
            if e.frozen {
                continue;
            }
            let g = e.grad.as_ref().expect("checked above");
            let n = g.len();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            if m.len() != n || v.len() != n {
                return Err(CodanoError::TrainingState(format!(
                    "optimizer moments of `{name}` do not match its shape"
                )));
            }
            for (((p, &gi), mi), vi) in e.tensor.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Drop moments of parameters that no longer exist.
    pub fn retain_params(&mut self, params: &ParamStore) {
        self.m.retain(|k, _| params.contains(k));
        self.v.retain(|k, _| params.contains(k));
    }
}
