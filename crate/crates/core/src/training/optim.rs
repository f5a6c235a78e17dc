use serde::{Deserialize, Serialize};

use crate::layers::ModelParams;
use crate::tensor::Tensor;

/// Bias-corrected Adam.
///
/// Moments are stored in parameter visiting order and created lazily on the
/// first step, so one `Adam` serves any parameter list of a fixed layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params[i]` with `grads[i]` for every `i`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.begin(grads);
        for (i, p) in params.iter_mut().enumerate() {
            self.update(i, p, &grads[i]);
        }
    }

    /// One update of a model's parameter tree; `grads` follows its visiting order.
    pub fn step_model(&mut self, params: &mut ModelParams<Tensor>, grads: &[Tensor]) {
        self.begin(grads);
        let mut i = 0;
        params.for_each_mut(&mut |_, p| {
            self.update(i, p, &grads[i]);
            i += 1;
        });
        assert_eq!(i, grads.len(), "one gradient per parameter");
    }

    fn begin(&mut self, grads: &[Tensor]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(
            self.m.len(),
            grads.len(),
            "parameter layout changed between steps"
        );
        self.step += 1;
    }

    fn update(&mut self, i: usize, param: &mut Tensor, grad: &Tensor) {
        assert_eq!(param.shape(), grad.shape(), "gradient shape");
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        for (j, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// What the scheduler decided after one validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleEvent {
    Improved,
    Waiting,
    Reduced,
    /// The last reduction took the learning rate below the floor.
    Stop,
}

/// Reduce-on-plateau: multiply the learning rate by `factor` once the
/// validation loss has failed to improve for `patience` epochs in a row, and
/// signal a stop as soon as a reduction takes it below `min_lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            since_improvement: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn step(&mut self, val_loss: f64) -> ScheduleEvent {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_improvement = 0;
            return ScheduleEvent::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement < self.patience {
            return ScheduleEvent::Waiting;
        }
        self.since_improvement = 0;
        self.lr *= self.factor;
        if self.lr < self.min_lr {
            ScheduleEvent::Stop
        } else {
            ScheduleEvent::Reduced
        }
    }
}
