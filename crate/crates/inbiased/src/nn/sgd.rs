//! Stochastic gradient descent with momentum, plus learning-rate schedules.

use super::Param;
use crate::num::{cast, Scalar};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

/// SGD with momentum and decoupled-from-nothing weight decay (the decay is
/// added to the gradient before the momentum update, the classic variant):
/// `g = grad + wd*w; buf = mu*buf + g; w -= lr*buf`.
#[derive(Debug, Clone)]
pub struct Sgd<F: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<ArrayD<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    /// One update step. The parameter list must be passed in the same order
    /// every call; momentum buffers are keyed by position.
    pub fn step(&mut self, lr: f64, params: &mut [&mut Param<F>]) {
        if self.buffers.is_empty() {
            self.buffers = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
        }
        assert_eq!(
            self.buffers.len(),
            params.len(),
            "parameter count changed between optimizer steps"
        );
        let mu = cast::<F>(self.momentum);
        let wd = cast::<F>(self.weight_decay);
        let lr = cast::<F>(lr);
        for (p, buf) in params.iter_mut().zip(self.buffers.iter_mut()) {
            ndarray::Zip::from(buf.view_mut())
                .and(&p.grad)
                .and(&p.value)
                .for_each(|b, &g, &v| {
                    *b = mu * *b + g + wd * v;
                });
            ndarray::Zip::from(&mut p.value)
                .and(buf.view())
                .for_each(|v, &b| {
                    *v = *v - lr * b;
                });
        }
    }

    /// Momentum buffers for checkpointing, in parameter order.
    pub fn buffers(&self) -> &[ArrayD<F>] {
        &self.buffers
    }

    pub fn set_buffers(&mut self, buffers: Vec<ArrayD<F>>) {
        self.buffers = buffers;
    }
}

/// Learning-rate schedule, applied per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheduler {
    Constant,
    /// Half-cosine from the base rate down to zero across the run.
    Cosine { total_epochs: usize },
    /// Multiply by `gamma` at each milestone epoch.
    MultiStep { milestones: Vec<usize>, gamma: f64 },
}

impl Scheduler {
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        match self {
            Scheduler::Constant => base,
            Scheduler::Cosine { total_epochs } => {
                let t = *total_epochs.max(&1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / t).cos())
            }
            Scheduler::MultiStep { milestones, gamma } => {
                let hits = milestones.iter().filter(|&&m| epoch >= m).count();
                base * gamma.powi(hits as i32)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;

    #[test]
    fn plain_sgd_step() {
        let mut p = Param::new("w", arr1(&[1.0f64, -2.0]).into_dyn());
        p.grad.assign(&arr1(&[0.5, 0.5]).into_dyn());
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step(0.1, &mut [&mut p]);
        assert_abs_diff_eq!(p.value[[0]], 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(p.value[[1]], -2.05, epsilon = 1e-12);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = Param::new("w", arr1(&[0.0f64]).into_dyn());
        let mut opt = Sgd::new(0.9, 0.0);
        p.grad.assign(&arr1(&[1.0]).into_dyn());
        opt.step(1.0, &mut [&mut p]);
        // buf = 1, w = -1
        assert_abs_diff_eq!(p.value[[0]], -1.0, epsilon = 1e-12);
        opt.step(1.0, &mut [&mut p]);
        // buf = 0.9 + 1 = 1.9, w = -2.9
        assert_abs_diff_eq!(p.value[[0]], -2.9, epsilon = 1e-12);
    }

    #[test]
    fn weight_decay_enters_gradient() {
        let mut p = Param::new("w", arr1(&[2.0f64]).into_dyn());
        let mut opt = Sgd::new(0.0, 0.1);
        // zero gradient: update is pure decay, w -= lr * wd * w
        opt.step(0.5, &mut [&mut p]);
        assert_abs_diff_eq!(p.value[[0]], 2.0 - 0.5 * 0.2, epsilon = 1e-12);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = Scheduler::Cosine { total_epochs: 100 };
        assert_abs_diff_eq!(s.lr(0.1, 0), 0.1, epsilon = 1e-12);
        assert!(s.lr(0.1, 99) < 0.1 * 0.001);
        assert!(s.lr(0.1, 50) < 0.051 && s.lr(0.1, 50) > 0.049);
    }

    #[test]
    fn multistep_schedule() {
        let s = Scheduler::MultiStep {
            milestones: vec![10, 20],
            gamma: 0.1,
        };
        assert_abs_diff_eq!(s.lr(1.0, 5), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lr(1.0, 10), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lr(1.0, 25), 0.01, epsilon = 1e-12);
    }
}
