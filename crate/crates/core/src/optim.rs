//! Stochastic optimizers over named parameter groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::det::GradMap;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    /// Adam with decoupled weight decay.
    AdamW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Detector-phase defaults, sized for the synthetic task.
    pub fn detector_default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 8,
            lr: 3e-3,
            weight_decay: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::AdamW,
        }
    }

    /// Router-phase defaults: constant learning rate, batch 1, two epochs,
    /// decoupled weight decay.
    pub fn router_default() -> Self {
        TrainConfig {
            epochs: 2,
            batch_size: 1,
            lr: 1e-5,
            weight_decay: 5e-3,
            seed: 0,
            optimizer: OptimizerKind::AdamW,
        }
    }
}

#[derive(Debug, Clone)]
struct AdamSlot {
    m: Tensor,
    v: Tensor,
}

/// Optimizer state keyed by parameter name; safe to reuse across steps as
/// long as the parameter set stays fixed.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: BTreeMap<String, AdamSlot>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Applies one update to the given parameters. Missing gradient entries
    /// are treated as zero (decoupled weight decay still applies).
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &GradMap) {
        self.t += 1;
        for (name, tensor) in params.iter_mut() {
            let grad = grads.get(name);
            match self.kind {
                OptimizerKind::Sgd => {
                    let data = tensor.data_mut();
                    for (i, p) in data.iter_mut().enumerate() {
                        let g = grad.map_or(0.0, |g| g.data()[i]);
                        *p -= self.lr * g + self.lr * self.weight_decay * *p;
                    }
                }
                OptimizerKind::AdamW => {
                    let slot = self.slots.entry(name.clone()).or_insert_with(|| AdamSlot {
                        m: Tensor::zeros(tensor.shape()),
                        v: Tensor::zeros(tensor.shape()),
                    });
                    let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                    let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                    let data = tensor.data_mut();
                    let md = slot.m.data_mut();
                    let vd = slot.v.data_mut();
                    for i in 0..data.len() {
                        let g = grad.map_or(0.0, |g| g.data()[i]);
                        md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                        vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
                        let mhat = md[i] / bc1;
                        let vhat = vd[i] / bc2;
                        data[i] -=
                            self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * data[i]);
                    }
                }
            }
        }
    }
}
