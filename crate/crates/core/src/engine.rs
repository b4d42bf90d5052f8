//! Input and parameter derivatives of the value model.
//!
//! Batched routines work on tape nodes holding one time-space point per row;
//! the point-level functions ([`eval_value`], [`eval_first_order`],
//! [`eval_hessian_trace`]) wrap them for single evaluations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BoundModel, ValueModel};
use crate::rng::Stream;
use crate::tape::{Tape, Var};

/// Time-space argument `(s, z)` of the value function.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPoint {
    pub s: f64,
    pub z: Vec<f64>,
}

impl InputPoint {
    pub fn new(s: f64, z: &[f64]) -> Self {
        Self { s, z: z.to_vec() }
    }

    /// The stacked input `y = (s, z)`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.z.len() + 1);
        y.push(self.s);
        y.extend_from_slice(&self.z);
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub value: f64,
    pub time_partial: f64,
    pub state_grad: Vec<f64>,
    /// `tr(sigma sigma^T hess_z Phi)` when requested.
    pub hess_trace: Option<f64>,
}

/// Diffusion coefficient: a constant scalar, or a constant `d x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Diffusion {
    Scalar(f64),
    Matrix(Matrix),
}

impl Diffusion {
    /// `sigma * dW` applied row-wise to an `n x d` block of increments.
    pub fn apply(&self, dw: &Matrix) -> Matrix {
        match self {
            Diffusion::Scalar(s) => dw.map(|x| s * x),
            Diffusion::Matrix(m) => Matrix::matmul(dw, m, false, true),
        }
    }

    /// Row-wise `grad^T sigma dW` for `n x d` gradients and increments.
    pub fn martingale_term(&self, tape: &mut Tape, grad_z: Var, dw: Var) -> Var {
        match self {
            Diffusion::Scalar(s) => {
                let dot = tape.row_dot(grad_z, dw);
                tape.scale(dot, *s)
            }
            Diffusion::Matrix(m) => {
                let sigma = tape.constant(m.clone());
                let st_grad = tape.matmul(grad_z, sigma);
                tape.row_dot(st_grad, dw)
            }
        }
    }

    /// Direction `sigma e_j` used by the exact trace.
    fn column(&self, j: usize, d: usize) -> Vec<f64> {
        match self {
            Diffusion::Scalar(s) => {
                let mut v = vec![0.0; d];
                v[j] = *s;
                v
            }
            Diffusion::Matrix(m) => (0..d).map(|i| m.get(i, j)).collect(),
        }
    }

    fn scale_probe(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Diffusion::Scalar(s) => v.iter().map(|x| s * x).collect(),
            Diffusion::Matrix(m) => (0..v.len()).map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect(),
        }
    }
}

/// How `tr(sigma sigma^T hess Phi)` is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceStrategy {
    /// One Hessian-vector product per state coordinate.
    Exact,
    /// Average of `probes` Rademacher quadratic forms. `salt` separates
    /// call sites sharing a stream.
    Hutchinson { probes: usize, stream: Stream, salt: u32 },
}

impl TraceStrategy {
    /// Exact up to `d = 20`, otherwise Hutchinson with 8 probes.
    pub fn auto(d: usize, stream: Stream, salt: u32) -> Self {
        if d <= 20 {
            TraceStrategy::Exact
        } else {
            TraceStrategy::Hutchinson { probes: 8, stream, salt }
        }
    }
}

/// Value and first derivatives of `Phi` for a batch of points, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct Derivs {
    /// `n x 1`.
    pub value: Var,
    /// `n x (d+1)`, time column first.
    pub grad: Var,
    /// `n x 1`.
    pub time_partial: Var,
    /// `n x d`.
    pub state_grad: Var,
}

/// Builds the `n x (d+1)` input node `[s, z]` from a state node.
pub fn stack_input(tape: &mut Tape, s: f64, z: Var) -> Var {
    let (n, d) = tape.shape(z);
    let col = tape.constant(Matrix::filled(n, 1, s));
    let col = tape.pad_cols(col, 0, d + 1);
    let zs = tape.pad_cols(z, 1, d + 1);
    let y = tape.add(col, zs);
    tape.fresh_input(y)
}

pub fn first_order(tape: &mut Tape, model: &BoundModel, y: Var) -> Result<Derivs> {
    let d = model.d();
    let value = model.value(tape, y);
    let total = tape.sum_all(value);
    let grad = tape.input_gradient(total, y)?;
    let time_partial = tape.slice_cols(grad, 0, 1);
    let state_grad = tape.slice_cols(grad, 1, d);
    Ok(Derivs { value, grad, time_partial, state_grad })
}

/// Row-wise `v^T (hess_z Phi) v` for directions `v` given as an `n x d` matrix.
pub fn hessian_quadratic_form(tape: &mut Tape, derivs: &Derivs, y: Var, directions: Matrix) -> Result<Var> {
    let d = directions.cols();
    let v = tape.constant(directions.pad_cols(1, d + 1));
    let gv = tape.mul(derivs.grad, v);
    let total = tape.sum_all(gv);
    let hv = tape.input_gradient(total, y)?;
    Ok(tape.row_dot(hv, v))
}

/// `tr(sigma sigma^T hess_z Phi)` per row, as `n x 1`.
pub fn hessian_trace(
    tape: &mut Tape,
    derivs: &Derivs,
    y: Var,
    diffusion: &Diffusion,
    strategy: TraceStrategy,
) -> Result<Var> {
    let (n, cols) = tape.shape(y);
    let d = cols - 1;
    match strategy {
        TraceStrategy::Exact => {
            let mut acc: Option<Var> = None;
            for j in 0..d {
                let col = diffusion.column(j, d);
                let dirs = Matrix::from_fn(n, d, |_, k| col[k]);
                let q = hessian_quadratic_form(tape, derivs, y, dirs)?;
                acc = Some(match acc {
                    None => q,
                    Some(a) => tape.add(a, q),
                });
            }
            Ok(acc.unwrap_or_else(|| tape.constant(Matrix::zeros(n, 1))))
        }
        TraceStrategy::Hutchinson { probes, stream, salt } => {
            if probes == 0 {
                return Err(Error::Config("Hutchinson estimator needs at least one probe".into()));
            }
            let mut acc: Option<Var> = None;
            let mut raw = vec![0.0; d];
            for k in 0..probes {
                let mut dirs = Matrix::zeros(n, d);
                for r in 0..n {
                    stream.fill_rademacher(r as u64, salt.wrapping_mul(1 << 10).wrapping_add(k as u32), &mut raw);
                    dirs.row_mut(r).copy_from_slice(&diffusion.scale_probe(&raw));
                }
                let q = hessian_quadratic_form(tape, derivs, y, dirs)?;
                acc = Some(match acc {
                    None => q,
                    Some(a) => tape.add(a, q),
                });
            }
            Ok(tape.scale(acc.unwrap(), 1.0 / probes as f64))
        }
    }
}

fn check_point(model: &ValueModel, point: &InputPoint) -> Result<()> {
    if point.z.len() != model.d {
        return Err(Error::Dimension { expected: model.d, got: point.z.len() });
    }
    Ok(())
}

fn single_point(tape: &mut Tape, model: &ValueModel, point: &InputPoint) -> (BoundModel, Var) {
    let bound = BoundModel::bind(tape, model, false);
    let z = tape.constant(Matrix::row_vector(&point.z));
    let y = stack_input(tape, point.s, z);
    (bound, y)
}

pub fn eval_value(model: &ValueModel, point: &InputPoint) -> Result<f64> {
    check_point(model, point)?;
    let mut tape = Tape::new();
    let (bound, y) = single_point(&mut tape, model, point);
    let v = bound.value(&mut tape, y);
    Ok(tape.value(v).item())
}

pub fn eval_first_order(model: &ValueModel, point: &InputPoint) -> Result<EvalRecord> {
    check_point(model, point)?;
    let mut tape = Tape::new();
    let (bound, y) = single_point(&mut tape, model, point);
    let dv = first_order(&mut tape, &bound, y)?;
    Ok(EvalRecord {
        value: tape.value(dv.value).item(),
        time_partial: tape.value(dv.time_partial).item(),
        state_grad: tape.value(dv.state_grad).as_slice().to_vec(),
        hess_trace: None,
    })
}

pub fn eval_hessian_trace(
    model: &ValueModel,
    point: &InputPoint,
    diffusion: &Diffusion,
    strategy: TraceStrategy,
) -> Result<f64> {
    check_point(model, point)?;
    let mut tape = Tape::new();
    let (bound, y) = single_point(&mut tape, model, point);
    let dv = first_order(&mut tape, &bound, y)?;
    let tr = hessian_trace(&mut tape, &dv, y, diffusion, strategy)?;
    Ok(tape.value(tr).item())
}

/// Gradient of the scalar node `loss` with respect to every model parameter,
/// in flat parameter order.
pub fn loss_gradient(tape: &mut Tape, model: &BoundModel, loss: Var) -> Result<Vec<f64>> {
    let grads = tape.gradient(loss, model.leaves())?;
    Ok(model.flatten(grads))
}
