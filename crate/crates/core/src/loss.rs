//! Training loss
//! `b1 P_BSDE + b2 P_HJB + b3 J + b4 |G - Phi_N| + b5 |grad G - grad Phi_N|`.
//!
//! Every term is a 1x1 tape node built from a [`PathGraph`], so the same code
//! gives loss values and their parameter gradients.

use alloc::vec::Vec;

use crate::engine::{first_order, hessian_trace, stack_input, TraceStrategy};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BoundModel, ValueModel};
use crate::problem::{hamiltonian_residual, ControlProblem};
use crate::sampler::{PathGraph, PathNode, TrajectoryBatch};
use crate::tape::{Tape, Var};

/// Penalty weights `beta` (BSDE, HJB, objective, terminal value, terminal
/// gradient) and residual exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: [f64; 5],
    pub exponent: u8,
}

impl LossWeights {
    pub fn new(beta: [f64; 5], exponent: u8) -> Result<Self> {
        let w = Self { beta, exponent };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !matches!(self.exponent, 1 | 2) {
            return Err(Error::Config("loss exponent must be 1 or 2".into()));
        }
        Ok(())
    }

    /// `beta = (1, 0, 20, 1, 1)`.
    pub fn comparison() -> Self {
        Self { beta: [1.0, 0.0, 20.0, 1.0, 1.0], exponent: 2 }
    }

    /// `beta = (1, 1, 1, 0.1, 0.1)`.
    pub fn trajectory2d() -> Self {
        Self { beta: [1.0, 1.0, 1.0, 0.1, 0.1], exponent: 2 }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta: [1.0; 5], exponent: 2 }
    }
}

/// Batch-mean term values; `None` marks a term skipped because its weight is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub bsde: Option<f64>,
    pub hjb: Option<f64>,
    pub objective: Option<f64>,
    pub terminal_value: Option<f64>,
    pub terminal_grad: Option<f64>,
}

impl LossBreakdown {
    pub fn terms(&self) -> [Option<f64>; 5] {
        [self.bsde, self.hjb, self.objective, self.terminal_value, self.terminal_grad]
    }
}

/// `mean_r sum_{i<N} |Phi_{i+1} - Phi_i + L_i ds - grad Phi_i^T sigma dW_i|^p`.
pub fn p_bsde(tape: &mut Tape, path: &PathGraph, problem: &dyn ControlProblem, p: u8) -> Var {
    let ds = path.grid.ds();
    let diffusion = problem.diffusion().clone();
    let mut acc: Option<Var> = None;
    for i in 0..path.grid.steps {
        let (a, b) = (&path.nodes[i], &path.nodes[i + 1]);
        let l = problem.running_cost(tape, a.s, a.z, a.u);
        let l = tape.scale(l, ds);
        let m = diffusion.martingale_term(tape, a.derivs.state_grad, path.dw[i]);
        let jump = tape.sub(b.derivs.value, a.derivs.value);
        let r = tape.add(jump, l);
        let r = tape.sub(r, m);
        let r = tape.abs_pow(r, p);
        acc = Some(match acc {
            None => r,
            Some(s) => tape.add(s, r),
        });
    }
    let acc = acc.expect("grid has at least one step");
    tape.mean_rows(acc)
}

/// Per-row `H(s, z, -grad Phi, .) - d_s Phi` at one path node.
pub fn hjb_residual(tape: &mut Tape, node: &PathNode, problem: &dyn ControlProblem, trace: TraceStrategy) -> Result<Var> {
    let tr = hessian_trace(tape, &node.derivs, node.y, problem.diffusion(), trace)?;
    let h = hamiltonian_residual(problem, tape, node.s, node.z, node.derivs.state_grad, tr);
    Ok(tape.sub(h, node.derivs.time_partial))
}

fn step_trace(trace: TraceStrategy, i: usize) -> TraceStrategy {
    match trace {
        TraceStrategy::Exact => TraceStrategy::Exact,
        TraceStrategy::Hutchinson { probes, stream, salt } => {
            TraceStrategy::Hutchinson { probes, stream, salt: salt.wrapping_add(i as u32) }
        }
    }
}

/// `mean_r ds sum_{i=1..N} |H_i - d_s Phi_i|^p`.
pub fn p_hjb(tape: &mut Tape, path: &PathGraph, problem: &dyn ControlProblem, p: u8, trace: TraceStrategy) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for i in 1..=path.grid.steps {
        let r = hjb_residual(tape, &path.nodes[i], problem, step_trace(trace, i))?;
        let r = tape.abs_pow(r, p);
        acc = Some(match acc {
            None => r,
            Some(s) => tape.add(s, r),
        });
    }
    let acc = tape.scale(acc.expect("grid has at least one step"), path.grid.ds());
    Ok(tape.mean_rows(acc))
}

/// `mean_r G(z_N) + ds sum_{i=1..N} L(s_i, z_i, u_i)`.
pub fn objective_j(tape: &mut Tape, path: &PathGraph, problem: &dyn ControlProblem) -> Var {
    let last = &path.nodes[path.grid.steps];
    let mut acc: Option<Var> = None;
    for node in &path.nodes[1..] {
        let l = problem.running_cost(tape, node.s, node.z, node.u);
        acc = Some(match acc {
            None => l,
            Some(s) => tape.add(s, l),
        });
    }
    let run = tape.scale(acc.expect("grid has at least one step"), path.grid.ds());
    let g = problem.terminal_cost(tape, last.z);
    let j = tape.add(g, run);
    tape.mean_rows(j)
}

/// Batch means of `|G(z_N) - Phi_N|` and `||grad G(z_N) - grad Phi_N||`.
pub fn terminal_penalties(tape: &mut Tape, path: &PathGraph, problem: &dyn ControlProblem) -> (Var, Var) {
    (terminal_value_term(tape, path, problem), terminal_grad_term(tape, path, problem))
}

fn terminal_value_term(tape: &mut Tape, path: &PathGraph, problem: &dyn ControlProblem) -> Var {
    let last = &path.nodes[path.grid.steps];
    let g = problem.terminal_cost(tape, last.z);
    let e = tape.sub(g, last.derivs.value);
    let e = tape.abs_pow(e, 1);
    tape.mean_rows(e)
}

fn terminal_grad_term(tape: &mut Tape, path: &PathGraph, problem: &dyn ControlProblem) -> Var {
    let last = &path.nodes[path.grid.steps];
    let g = problem.terminal_grad(tape, last.z);
    let e = tape.sub(g, last.derivs.state_grad);
    let sq = tape.row_dot(e, e);
    let norm = tape.unary(sq, crate::tape::Func::Sqrt);
    tape.mean_rows(norm)
}

/// Weighted total with its breakdown; zero-weight terms are not built.
pub fn total_loss(
    tape: &mut Tape,
    path: &PathGraph,
    problem: &dyn ControlProblem,
    weights: &LossWeights,
    trace: TraceStrategy,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let p = weights.exponent;
    let mut parts: Vec<(f64, Var)> = Vec::with_capacity(5);
    let mut out = LossBreakdown::default();
    let b = weights.beta;
    if b[0] > 0.0 {
        let v = p_bsde(tape, path, problem, p);
        out.bsde = Some(tape.value(v).item());
        parts.push((b[0], v));
    }
    if b[1] > 0.0 {
        let v = p_hjb(tape, path, problem, p, trace)?;
        out.hjb = Some(tape.value(v).item());
        parts.push((b[1], v));
    }
    if b[2] > 0.0 {
        let v = objective_j(tape, path, problem);
        out.objective = Some(tape.value(v).item());
        parts.push((b[2], v));
    }
    if b[3] > 0.0 {
        let v = terminal_value_term(tape, path, problem);
        out.terminal_value = Some(tape.value(v).item());
        parts.push((b[3], v));
    }
    if b[4] > 0.0 {
        let v = terminal_grad_term(tape, path, problem);
        out.terminal_grad = Some(tape.value(v).item());
        parts.push((b[4], v));
    }
    let mut total: Option<Var> = None;
    for (w, v) in parts {
        let t = tape.scale(v, w);
        total = Some(match total {
            None => t,
            Some(s) => tape.add(s, t),
        });
    }
    let total = total.unwrap_or_else(|| tape.constant(Matrix::scalar(0.0)));
    out.total = tape.value(total).item();
    Ok((total, out))
}

/// Rebuilds a tape path from stored states with the given model; states are
/// constants and controls are recomputed from the model.
pub fn path_from_batch(
    tape: &mut Tape,
    model: &BoundModel,
    problem: &dyn ControlProblem,
    batch: &TrajectoryBatch,
) -> Result<PathGraph> {
    if batch.state_dim() != model.d() {
        return Err(Error::Dimension { expected: model.d(), got: batch.state_dim() });
    }
    let mut nodes = Vec::with_capacity(batch.grid.steps + 1);
    for (i, zi) in batch.z.iter().enumerate() {
        let s = batch.grid.s(i);
        let z = tape.constant(zi.clone());
        let y = stack_input(tape, s, z);
        let derivs = first_order(tape, model, y)?;
        let p = tape.neg(derivs.state_grad);
        let u = problem.feedback(tape, s, z, p);
        nodes.push(PathNode { s, z, y, derivs, u });
    }
    let dw = batch.dw.iter().map(|m| tape.constant(m.clone())).collect();
    Ok(PathGraph { grid: batch.grid, nodes, dw })
}

/// Loss breakdown of a stored batch under `model`.
pub fn evaluate_batch(
    model: &ValueModel,
    problem: &dyn ControlProblem,
    batch: &TrajectoryBatch,
    weights: &LossWeights,
    trace: TraceStrategy,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, model, false);
    let path = path_from_batch(&mut tape, &bound, problem, batch)?;
    Ok(total_loss(&mut tape, &path, problem, weights, trace)?.1)
}

/// Per-trajectory `G(z_N) + ds sum_{i=1..N} L(s_i, z_i, u_i)` from stored controls.
pub fn objective_per_trajectory(batch: &TrajectoryBatch, problem: &dyn ControlProblem) -> Vec<f64> {
    let mut tape = Tape::new();
    let n = batch.len();
    let ds = batch.grid.ds();
    let mut run = alloc::vec![0.0; n];
    for i in 1..=batch.grid.steps {
        let z = tape.constant(batch.z[i].clone());
        let u = tape.constant(batch.control(i).clone());
        let l = problem.running_cost(&mut tape, batch.grid.s(i), z, u);
        for (acc, v) in run.iter_mut().zip(tape.value(l).as_slice()) {
            *acc += v;
        }
    }
    let zn = tape.constant(batch.terminal().clone());
    let g = problem.terminal_cost(&mut tape, zn);
    tape.value(g).as_slice().iter().zip(&run).map(|(g, r)| g + ds * r).collect()
}
