//! First-order optimizers: plain SGD and an adaptive-moment variant.

use super::ParamSet;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    /// Adam-style per-parameter moment estimates with bias correction.
    AdaptiveMoment,
}

impl OptimizerKind {
    pub fn parse(name: &str) -> crate::error::Result<Self> {
        match name {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adaptive" | "adam" => Ok(OptimizerKind::AdaptiveMoment),
            other => Err(crate::error::Error::Config(format!(
                "unknown optimizer `{other}` (expected `sgd` or `adaptive`)"
            ))),
        }
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    pub learning_rate: f64,
    step_count: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adaptive(learning_rate: f64) -> Self {
        Optimizer::new(OptimizerKind::AdaptiveMoment, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        assert!(learning_rate >= 0.0, "learning rate must be non-negative");
        Optimizer {
            kind,
            learning_rate,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Update every parameter in place from its harvested gradient, then zero
    /// the gradients. Errors if any parameter has no gradient at all.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                params.apply(|value, grad| {
                    for (w, g) in value.data_mut().iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                })?;
            }
            OptimizerKind::AdaptiveMoment => {
                if self.m.len() != params.len() {
                    self.m = (0..params.len()).map(|_| Vec::new()).collect();
                    self.v = (0..params.len()).map(|_| Vec::new()).collect();
                }
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let (ms, vs) = (&mut self.m, &mut self.v);
                let mut idx = 0;
                params.apply(|value, grad| {
                    let m = &mut ms[idx];
                    let v = &mut vs[idx];
                    if m.len() != grad.len() {
                        *m = vec![0.0; grad.len()];
                        *v = vec![0.0; grad.len()];
                    }
                    for (i, (w, g)) in value.data_mut().iter_mut().zip(grad).enumerate() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        *w -= lr * mh / (vh.sqrt() + eps);
                    }
                    idx += 1;
                })?;
            }
        }
        params.zero_grads();
        Ok(())
    }
}
