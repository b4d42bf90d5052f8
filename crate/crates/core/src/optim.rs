//! Adam with bias correction and a piecewise-constant learning rate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update of `theta` with gradient `grad` and rate `lr`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if theta.len() != self.m.len() {
            return Err(Error::Dimension { expected: self.m.len(), got: theta.len() });
        }
        if grad.len() != self.m.len() {
            return Err(Error::Dimension { expected: self.m.len(), got: grad.len() });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - math::powi(self.beta1, t);
        let c2 = 1.0 - math::powi(self.beta2, t);
        for k in 0..theta.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] -= lr * m_hat / (math::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

/// Rates indexed by starting iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pieces: Vec<(u64, f64)>,
}

impl LrSchedule {
    pub fn new(pieces: Vec<(u64, f64)>) -> Result<Self> {
        match pieces.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Config("learning-rate schedule must start at iteration 0".into())),
        }
        if pieces.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("learning-rate schedule iterations must be strictly increasing".into()));
        }
        if pieces.iter().any(|(_, r)| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(Self { pieces })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![(0, rate)])
    }

    pub fn rate(&self, iteration: u64) -> f64 {
        self.pieces.iter().rev().find(|(start, _)| *start <= iteration).map(|(_, r)| *r).unwrap_or(self.pieces[0].1)
    }

    pub fn pieces(&self) -> &[(u64, f64)] {
        &self.pieces
    }
}

/// Rescales `grad` to Euclidean norm at most `max_norm`; returns the original norm.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = math::sqrt(grad.iter().map(|g| g * g).sum());
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= k;
        }
    }
    norm
}
