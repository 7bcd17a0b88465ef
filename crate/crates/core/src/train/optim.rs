//! Adadelta with a global step scale, and gradient-norm clipping.

use crate::autodiff::{ParamGrads, ParamStore};

/// Rescale `grads` so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Per-coordinate Adadelta state.
///
/// `E[g^2] = rho E[g^2] + (1 - rho) g^2`,
/// `d = -scale * sqrt(E[d^2] + eps) / sqrt(E[g^2] + eps) * g`,
/// `E[d^2] = rho E[d^2] + (1 - rho) d^2`, `x += d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    sq_grad: Vec<Vec<f64>>,
    sq_update: Vec<Vec<f64>>,
}

impl Adadelta {
    pub fn new(params: &ParamStore, rho: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Adadelta {
            rho,
            eps,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, scale: f64) {
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.get(id);
            let x = params.tensor_mut(id).values_mut();
            let (eg, ed) = (&mut self.sq_grad[i], &mut self.sq_update[i]);
            for k in 0..x.len() {
                eg[k] = self.rho * eg[k] + (1.0 - self.rho) * g[k] * g[k];
                let d = -scale * ((ed[k] + self.eps).sqrt() / (eg[k] + self.eps).sqrt()) * g[k];
                ed[k] = self.rho * ed[k] + (1.0 - self.rho) * d * d;
                x[k] += d;
            }
        }
    }
}

/// Halves the step scale after `patience` consecutive epochs without a new
/// best dev score, then restarts the count.
#[derive(Clone, Debug, PartialEq)]
pub struct PatienceSchedule {
    pub patience: usize,
    pub scale: f64,
    best: Option<f64>,
    stale: usize,
}

impl PatienceSchedule {
    pub fn new(patience: usize) -> Self {
        PatienceSchedule {
            patience,
            scale: 1.0,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Record an epoch's dev score; returns true if it is a new best.
    pub fn observe(&mut self, score: f64) -> bool {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.scale *= 0.5;
            self.stale = 0;
        }
        false
    }
}
