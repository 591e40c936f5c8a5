use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::param::DiffTensor;
use crate::{math, Error, Result};

/// Step-decay schedule entry: from `epoch` on, multiply the rate by
/// `multiplier`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub epoch: usize,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
    pub decay_schedule: Vec<Decay>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, decay_schedule: Vec<Decay>) -> Result<Self> {
        Self::with_moments(learning_rate, 0.9, 0.999, 1e-8, decay_schedule)
    }

    pub fn with_moments(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        decay_schedule: Vec<Decay>,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::config(format!("learning rate must be > 0, got {learning_rate}")));
        }
        for b in [beta1, beta2] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("ADAM betas must lie in (0, 1), got {b}")));
            }
        }
        if !(eps > 0.0) {
            return Err(Error::config("ADAM epsilon must be positive"));
        }
        Ok(Self {
            step: 0,
            beta1,
            beta2,
            eps,
            learning_rate,
            decay_schedule,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// Base rate times the multipliers of every decay whose epoch has been
    /// reached. Epochs are numbered from 1.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.decay_schedule
            .iter()
            .filter(|d| epoch >= d.epoch)
            .fold(self.learning_rate, |lr, d| lr * d.multiplier)
    }

    /// One ADAM update of every parameter with the rate for `epoch`.
    ///
    /// Parameters must be passed in the same order on every call. Frozen
    /// entries are skipped entirely.
    pub fn step<'a, I>(&mut self, params: I, epoch: usize) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut DiffTensor)>,
    {
        let params: Vec<(&str, &mut DiffTensor)> = params.into_iter().collect();
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for ((name, p), m) in params.iter().zip(&self.first) {
            if p.grad.is_none() {
                return Err(Error::contract(format!("parameter `{name}` has no gradient")));
            }
            if m.len() != p.value.len() {
                return Err(Error::contract(format!(
                    "moment buffer for `{name}` has {} entries, parameter has {}",
                    m.len(),
                    p.value.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = self.learning_rate_at(epoch);
        let bias1 = 1.0 - math::powi(self.beta1, t);
        let bias2 = 1.0 - math::powi(self.beta2, t);
        for (((_, p), m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad.as_ref().expect("checked above").data().to_vec();
            let frozen = p.frozen.clone();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                if frozen.as_ref().is_some_and(|f| f[i]) {
                    continue;
                }
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                values[i] -= lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericFault { op: "adam_step" });
            }
        }
        Ok(())
    }
}
