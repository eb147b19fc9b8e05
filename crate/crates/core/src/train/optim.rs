// SPDX-License-Identifier: MIT OR Apache-2.0

//! AdamW with decoupled weight decay over the model's trainable tensors.

use serde::{Deserialize, Serialize};

use super::grad::Grads;
use crate::sae::{FreezeMode, SaeModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tensor {
    WEnc,
    BEnc,
    WDec,
    BDec,
    Theta,
}

impl Tensor {
    pub const ALL: [Tensor; 5] = [
        Tensor::WEnc,
        Tensor::BEnc,
        Tensor::WDec,
        Tensor::BDec,
        Tensor::Theta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::WEnc => "w_enc",
            Tensor::BEnc => "b_enc",
            Tensor::WDec => "w_dec",
            Tensor::BDec => "b_dec",
            Tensor::Theta => "theta",
        }
    }

    /// Whether this tensor is held fixed under `mode`. Only the weight
    /// matrices are ever frozen; biases and thresholds always train.
    pub fn is_frozen(self, mode: FreezeMode) -> bool {
        matches!(
            (self, mode),
            (Tensor::WDec, FreezeMode::FrozenDecoder) | (Tensor::WEnc, FreezeMode::FrozenEncoder)
        )
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    step: u64,
    moments: [Moments; 5],
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: Default::default(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn param_slice(model: &mut SaeModel, t: Tensor) -> Option<&mut [f64]> {
    match t {
        Tensor::WEnc => Some(model.w_enc.as_mut_slice()),
        Tensor::BEnc => Some(&mut model.b_enc),
        Tensor::WDec => Some(model.w_dec.as_mut_slice()),
        Tensor::BDec => Some(&mut model.b_dec),
        Tensor::Theta => model.theta.as_deref_mut(),
    }
}

fn grad_slice(grads: &Grads, t: Tensor) -> Option<&[f64]> {
    match t {
        Tensor::WEnc => Some(grads.w_enc.as_slice()),
        Tensor::BEnc => Some(&grads.b_enc),
        Tensor::WDec => Some(grads.w_dec.as_slice()),
        Tensor::BDec => Some(&grads.b_dec),
        Tensor::Theta => grads.theta.as_deref(),
    }
}

/// One AdamW update of every trainable tensor. Frozen tensors are not
/// touched at all, so they stay bit-identical to their initial values.
pub fn adamw_step(
    model: &mut SaeModel,
    grads: &Grads,
    opt: &mut OptimizerState,
    freeze: FreezeMode,
) {
    opt.step += 1;
    let c = opt.config;
    let t = opt.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (slot, tensor) in Tensor::ALL.into_iter().enumerate() {
        if tensor.is_frozen(freeze) {
            continue;
        }
        let Some(g) = grad_slice(grads, tensor) else {
            continue;
        };
        let Some(p) = param_slice(model, tensor) else {
            continue;
        };
        assert_eq!(p.len(), g.len(), "gradient shape for {}", tensor.name());
        let mom = &mut opt.moments[slot];
        if mom.first.len() != p.len() {
            mom.first = vec![0.0; p.len()];
            mom.second = vec![0.0; p.len()];
        }
        let decay = 1.0 - c.lr * c.weight_decay;
        for (((pi, gi), mi), vi) in p
            .iter_mut()
            .zip(g)
            .zip(mom.first.iter_mut())
            .zip(mom.second.iter_mut())
        {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            if c.weight_decay != 0.0 {
                *pi *= decay;
            }
            *pi -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
        }
        if tensor == Tensor::Theta {
            p.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    model.touch();
}
