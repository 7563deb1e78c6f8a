use half::f16;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::{Module, Param};

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: Vec<ArrayD<f32>>,
    second_moment: Vec<ArrayD<f32>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `model` from its gradients.
    pub fn step<M: Module<f32>>(&mut self, model: &mut M, lr: f64) {
        self.step += 1;
        let mut index = 0;
        model.for_each_param(&mut |_, p: &mut Param<f32>| {
            self.update_param(index, &mut p.value, &p.grad, lr);
            index += 1;
        });
    }

    fn update_param(&mut self, index: usize, value: &mut ArrayD<f32>, grad: &ArrayD<f32>, lr: f64) {
        if index == self.first_moment.len() {
            self.first_moment.push(ArrayD::zeros(grad.raw_dim()));
            self.second_moment.push(ArrayD::zeros(grad.raw_dim()));
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2_sqrt = (1.0 - b2.powi(self.step as i32)).sqrt();
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step_size = lr / c1;
        let eps = self.eps;
        ndarray::Zip::from(value)
            .and(grad)
            .and(&mut self.first_moment[index])
            .and(&mut self.second_moment[index])
            .for_each(|p, &g, m, v| {
                let g = g as f64;
                let mn = b1 * *m as f64 + (1.0 - b1) * g;
                let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let denom = vn.sqrt() / c2_sqrt + eps;
                *p = (*p * decay) - (step_size * mn / denom) as f32;
            });
    }
}

/// Euclidean norm of all gradients taken together.
pub fn global_grad_norm<M: Module<f32>>(model: &mut M) -> f64 {
    let mut sum = 0.0f64;
    model.for_each_param(&mut |_, p: &mut Param<f32>| {
        sum += p.grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>();
    });
    sum.sqrt()
}

/// Scales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<M: Module<f32>>(model: &mut M, max_norm: f64) -> f64 {
    let norm = global_grad_norm(model);
    let coef = max_norm / (norm + 1e-6);
    if coef < 1.0 {
        let c = coef as f32;
        model.for_each_param(&mut |_, p: &mut Param<f32>| p.grad.mapv_inplace(|g| g * c));
    }
    norm
}

pub fn round_to_half(x: &mut ArrayD<f32>) {
    x.mapv_inplace(|v| f16::from_f32(v).to_f32());
}

/// Dynamic loss scale for half-precision gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossScaler {
    pub scale: f64,
    good_steps: u32,
}

impl Default for LossScaler {
    fn default() -> Self {
        Self {
            scale: 1024.0,
            good_steps: 0,
        }
    }
}

impl LossScaler {
    const GROWTH_INTERVAL: u32 = 200;

    /// Records whether the last scaled gradients overflowed.
    pub fn update(&mut self, overflowed: bool) {
        if overflowed {
            self.scale = (self.scale * 0.5).max(1.0);
            self.good_steps = 0;
        } else {
            self.good_steps += 1;
            if self.good_steps >= Self::GROWTH_INTERVAL {
                self.scale *= 2.0;
                self.good_steps = 0;
            }
        }
    }
}
