use serde::{Deserialize, Serialize};

use super::{EncoderError, HyperConfig, OptimizerKind, Result, ToyPair};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// AdamW (decoupled weight decay) or plain SGD with decoupled decay, with
/// per-group learning rate and weight decay, constant schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: HyperConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(hyper: HyperConfig, params: &ToyPair) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Optimizer { kind: hyper.optimizer, hyper, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ToyPair, grads: &ToyPair) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let grad_tensors = grads.tensors();
        let mut param_tensors = params.tensors_mut();
        if grad_tensors.len() != param_tensors.len() || param_tensors.len() != self.first.len() {
            return Err(EncoderError::ShapeMismatch("optimizer state".into()));
        }
        for (k, ((name, group, p), (_, _, g))) in param_tensors.iter_mut().zip(&grad_tensors).enumerate() {
            if p.len() != g.len() || p.len() != self.first[k].len() {
                return Err(EncoderError::ShapeMismatch((*name).to_string()));
            }
            let (lr, wd) = self.hyper.group_rates(*group);
            match self.kind {
                OptimizerKind::AdamW => {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..p.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                        let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
                        p[i] -= lr * (update + wd * p[i]);
                    }
                }
                OptimizerKind::Sgd => {
                    for i in 0..p.len() {
                        p[i] -= lr * (g[i] + wd * p[i]);
                    }
                }
            }
        }
        Ok(())
    }
}
