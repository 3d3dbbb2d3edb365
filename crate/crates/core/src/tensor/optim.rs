//! Adam over parameter groups with per-group learning rate and per-epoch decay.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    param: usize,
    m: Tensor,
    v: Tensor,
}

/// A set of parameters sharing one learning-rate schedule and Adam state.
///
/// Members are indices into the caller's parameter list; the group never owns
/// the parameters, so several groups can partition one list.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    lr: f64,
    decay: f64,
    adam: AdamConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl ParamGroup {
    pub fn new(members: &[usize], shapes: &[&[usize]], lr: f64, decay: f64, adam: AdamConfig) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::invalid("learning rate", format!("{lr} is not positive")));
        }
        if !(decay > 0.0) {
            return Err(Error::invalid("decay factor", format!("{decay} is not positive")));
        }
        if members.len() != shapes.len() {
            return Err(Error::dim("param group", "one shape per member required"));
        }
        let slots = members
            .iter()
            .zip(shapes)
            .map(|(&param, shape)| Slot {
                param,
                m: Tensor::zeros(shape),
                v: Tensor::zeros(shape),
            })
            .collect();
        Ok(ParamGroup {
            lr,
            decay,
            adam,
            step: 0,
            slots,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().map(|s| s.param)
    }

    /// First and second moment of the member at position `i`.
    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.slots[i].m, &self.slots[i].v)
    }

    /// One bias-corrected Adam update of every member. `params` and `grads`
    /// are indexed by the global parameter index.
    pub fn adam_step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        for slot in &self.slots {
            let (p, g) = (&params[slot.param], &grads[slot.param]);
            if p.shape() != slot.m.shape() || g.shape() != slot.m.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("param {} {:?}, grad {:?}", slot.param, p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for slot in &mut self.slots {
            let p = params[slot.param].data_mut();
            let g = grads[slot.param].data();
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Apply the per-epoch multiplicative decay to the learning rate.
    pub fn decay_epoch(&mut self) {
        self.lr *= self.decay;
    }
}
