use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Updates every parameter of `params` that has a gradient in `grads`.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);
        for (name, var) in params.iter() {
            let Some(grad) = grads.get(var.as_tensor()) else {
                continue;
            };
            let grad = grad.detach();
            let m = match self.first.get(name) {
                Some(m) => ((m * beta1)? + (&grad * (1.0 - beta1))?)?,
                None => (&grad * (1.0 - beta1))?,
            };
            let v = match self.second.get(name) {
                Some(v) => ((v * beta2)? + (grad.sqr()? * (1.0 - beta2))?)?,
                None => (grad.sqr()? * (1.0 - beta2))?,
            };
            let m_hat = (&m / correct1)?;
            let v_hat = (&v / correct2)?;
            let delta = ((m_hat / (v_hat.sqrt()? + eps)?)? * lr)?;
            let updated = (var.as_tensor().detach() - delta)?;
            var.set(&updated)?;
            self.first.insert(name.clone(), m.detach());
            self.second.insert(name.clone(), v.detach());
        }
        Ok(())
    }

    /// Moment tensors as `{prefix}m.{name}` / `{prefix}v.{name}`.
    pub(crate) fn export(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (k, t) in &self.first {
            out.push((format!("{prefix}m.{k}"), t.clone()));
        }
        for (k, t) in &self.second {
            out.push((format!("{prefix}v.{k}"), t.clone()));
        }
    }

    pub(crate) fn import(
        config: AdamConfig,
        step: u64,
        prefix: &str,
        tensors: &HashMap<String, Tensor>,
    ) -> Result<Self> {
        let mut opt = Self::new(config);
        opt.step = step;
        let m_prefix = format!("{prefix}m.");
        let v_prefix = format!("{prefix}v.");
        for (k, t) in tensors {
            if let Some(name) = k.strip_prefix(&m_prefix) {
                opt.first.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix(&v_prefix) {
                opt.second.insert(name.to_string(), t.clone());
            }
        }
        if opt.first.len() != opt.second.len() {
            return Err(Error::Load(format!(
                "optimizer state {prefix} has {} first moments but {} second moments",
                opt.first.len(),
                opt.second.len()
            )));
        }
        Ok(opt)
    }
}
