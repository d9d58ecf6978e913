//! Adam optimizer with bias correction and the two-phase learning-rate
//! schedule.

use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter '{0}'; step aborted")]
    NonFiniteGrad(String),
}

/// Modules expose their trainable leaves through this visitor so the
/// optimizer can read gradients and swap in updated tensors.
pub trait ParamSource {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

impl ParamSource for crate::net::DepthNet {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.for_each_param(f);
    }
}

impl ParamSource for crate::net::PoseNet {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.for_each_param(f);
    }
}

/// Both networks updated jointly in one step.
pub struct Joint<'a, A: ParamSource, B: ParamSource>(pub &'a mut A, pub &'a mut B);

impl<A: ParamSource, B: ParamSource> ParamSource for Joint<'_, A, B> {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.0.for_each(f);
        self.1.for_each(f);
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Adam {
        Adam {
            beta1,
            beta2,
            eps: ADAM_EPS,
            step: 0,
            state: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter of `params`. Gradients are read from
    /// the leaves' accumulators and scaled by `grad_scale` (1/batch for
    /// accumulated batches); missing gradients count as zero. A non-finite
    /// gradient aborts the whole step before any parameter changes.
    pub fn step(
        &mut self,
        params: &mut impl ParamSource,
        lr: f64,
        grad_scale: f64,
    ) -> Result<(), OptimError> {
        let mut pending: Vec<(String, Tensor, Vec<f64>)> = Vec::new();
        let mut bad: Option<String> = None;
        params.for_each(&mut |name, t| {
            if bad.is_some() {
                return;
            }
            let g: Vec<f64> = match t.grad() {
                Some(g) => g.iter().map(|v| v * grad_scale).collect(),
                None => vec![0.0; t.numel()],
            };
            if g.iter().any(|v| !v.is_finite()) {
                bad = Some(name.to_string());
                return;
            }
            pending.push((name.to_string(), t.clone(), g));
        });
        if let Some(name) = bad {
            return Err(OptimError::NonFiniteGrad(name));
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut updated: HashMap<String, Tensor> = HashMap::new();
        for (name, tensor, grad) in pending {
            let n = tensor.numel();
            let slot = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            assert_eq!(slot.m.len(), n, "adam: moment shape drifted for {name}");
            let mut data = tensor.to_vec();
            for i in 0..n {
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * grad[i];
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            updated.insert(name, Tensor::param(data, tensor.shape()));
        }
        params.for_each(&mut |name, t| {
            if let Some(new_t) = updated.remove(name) {
                *t = new_t;
            }
        });
        Ok(())
    }

    pub fn zero_grads(params: &mut impl ParamSource) {
        params.for_each(&mut |_, t| t.zero_grad());
    }
}

/// Two-phase schedule: `lr_initial` while `epoch < lr_drop_epoch`, then
/// `lr_after`.
pub fn lr_schedule(epoch: usize, lr_initial: f64, lr_after: f64, lr_drop_epoch: usize) -> f64 {
    if epoch < lr_drop_epoch {
        lr_initial
    } else {
        lr_after
    }
}
