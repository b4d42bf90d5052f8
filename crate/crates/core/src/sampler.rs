//! Euler-Maruyama rollouts `z_{i+1} = z_i + f(s_i, z_i, u_i) ds + sigma dW_i`.
//!
//! [`rollout_graph`] records a minibatch on a tape so the losses can be
//! differentiated with respect to the model parameters; [`rollout`] produces a
//! plain [`TrajectoryBatch`] for evaluation and diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{first_order, stack_input, Derivs};
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::model::{BoundModel, ValueModel};
use crate::problem::ControlProblem;
use crate::rng::{brownian_increments, Stream};
use crate::tape::{Tape, Var};

/// `N + 1` equidistant times `s_i = t + i ds` on `[t, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !t.is_finite() || !t_end.is_finite() || t_end <= t {
            return Err(Error::Config("time grid needs finite t < T".into()));
        }
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(Self { t, t_end, steps })
    }

    pub fn ds(&self) -> f64 {
        (self.t_end - self.t) / self.steps as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        self.t + i as f64 * self.ds()
    }

    /// Index of the grid time closest to `s`.
    pub fn nearest_index(&self, s: f64) -> usize {
        let k = math::round((s - self.t) / self.ds());
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftPolicy {
    /// Drift `f(s, z, u*(s, z, -grad Phi))`.
    PmpFeedback,
    /// Pure random walk; feedback controls are still recorded.
    ZeroDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackpropMode {
    /// States depend on the parameters through the drift.
    ThroughDynamics,
    /// States are constants; controls are recomputed differentiably from them.
    FrozenStates,
}

/// Stored trajectories. `z` has `N + 1` blocks of `n x d`; `u` and `dw` have
/// `N` blocks; `terminal_control` is the feedback at `(s_N, z_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub grid: TimeGrid,
    pub policy: DriftPolicy,
    pub z: Vec<Matrix>,
    pub u: Vec<Matrix>,
    pub terminal_control: Matrix,
    pub dw: Vec<Matrix>,
    /// Fingerprint of the parameters that drove the rollout.
    pub snapshot: u64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.z[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.z[0].cols()
    }

    pub fn terminal(&self) -> &Matrix {
        &self.z[self.grid.steps]
    }

    /// State of trajectory `r` at step `i`.
    pub fn state(&self, r: usize, i: usize) -> &[f64] {
        self.z[i].row(r)
    }

    /// Control at step `i` for `i = 0..=N`.
    pub fn control(&self, i: usize) -> &Matrix {
        if i == self.grid.steps {
            &self.terminal_control
        } else {
            &self.u[i]
        }
    }
}

/// FNV-1a over the bit patterns of the parameter vector.
pub fn fingerprint(theta: &[f64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for x in theta {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// One grid point of a recorded rollout.
#[derive(Debug, Clone, Copy)]
pub struct PathNode {
    pub s: f64,
    pub z: Var,
    pub y: Var,
    pub derivs: Derivs,
    pub u: Var,
}

/// A rollout recorded on a tape, with `N + 1` nodes and `N` increments.
#[derive(Debug, Clone)]
pub struct PathGraph {
    pub grid: TimeGrid,
    pub nodes: Vec<PathNode>,
    /// Raw increments `dW_i` as constants.
    pub dw: Vec<Var>,
}

/// Brownian increments for `n` trajectories numbered from `first_row`.
pub fn increments(stream: &Stream, first_row: u64, n: usize, d: usize, step: usize, ds: f64) -> Matrix {
    let mut dw = Matrix::zeros(n, d);
    for r in 0..n {
        brownian_increments(stream, first_row + r as u64, step as u32, ds, dw.row_mut(r));
    }
    dw
}

fn first_nonfinite_row(m: &Matrix) -> Option<usize> {
    (0..m.rows()).find(|&r| m.row(r).iter().any(|v| !v.is_finite()))
}

fn check_states(z: &Matrix, first_row: u64, step: usize) -> Result<()> {
    match first_nonfinite_row(z) {
        Some(r) => Err(Error::NonFiniteState { trajectory: first_row + r as u64, step }),
        None => Ok(()),
    }
}

fn check_problem(problem: &dyn ControlProblem, d: usize, z0: &Matrix) -> Result<()> {
    if problem.state_dim() != d {
        return Err(Error::Dimension { expected: problem.state_dim(), got: d });
    }
    if z0.cols() != d {
        return Err(Error::Dimension { expected: d, got: z0.cols() });
    }
    if z0.rows() == 0 {
        return Err(Error::Config("rollout needs at least one trajectory".into()));
    }
    Ok(())
}

/// Records a rollout from the initial states `z0` on `tape`.
///
/// Trajectory `r` uses stream row `first_row + r` for its increments.
#[allow(clippy::too_many_arguments)]
pub fn rollout_graph(
    tape: &mut Tape,
    model: &BoundModel,
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    z0: &Matrix,
    noise: &Stream,
    first_row: u64,
    policy: DriftPolicy,
    mode: BackpropMode,
) -> Result<PathGraph> {
    let d = model.d();
    check_problem(problem, d, z0)?;
    check_states(z0, first_row, 0)?;
    let n = z0.rows();
    let ds = grid.ds();
    let diffusion = problem.diffusion().clone();
    let mut nodes = Vec::with_capacity(grid.steps + 1);
    let mut dws = Vec::with_capacity(grid.steps);
    let mut z = tape.constant(z0.clone());
    for i in 0..=grid.steps {
        let s = grid.s(i);
        let y = stack_input(tape, s, z);
        let derivs = first_order(tape, model, y)?;
        let p = tape.neg(derivs.state_grad);
        let u = problem.feedback(tape, s, z, p);
        nodes.push(PathNode { s, z, y, derivs, u });
        if i == grid.steps {
            break;
        }
        let dw = increments(noise, first_row, n, d, i, ds);
        let noise_term = tape.constant(diffusion.apply(&dw));
        dws.push(tape.constant(dw));
        let moved = match policy {
            DriftPolicy::PmpFeedback => {
                let f = problem.drift(tape, s, z, u);
                let step = tape.scale(f, ds);
                tape.add(z, step)
            }
            DriftPolicy::ZeroDrift => z,
        };
        let next = tape.add(moved, noise_term);
        check_states(tape.value(next), first_row, i + 1)?;
        z = match mode {
            BackpropMode::ThroughDynamics => next,
            BackpropMode::FrozenStates => {
                let v = tape.value(next).clone();
                tape.constant(v)
            }
        };
    }
    Ok(PathGraph { grid, nodes, dw: dws })
}

/// Feedback control `u*(s, z, -grad Phi)` for a block of states.
pub fn feedback_block(model: &ValueModel, problem: &dyn ControlProblem, s: f64, z: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, model, false);
    let zv = tape.constant(z.clone());
    let y = stack_input(&mut tape, s, zv);
    let derivs = first_order(&mut tape, &bound, y)?;
    let p = tape.neg(derivs.state_grad);
    let u = problem.feedback(&mut tape, s, zv, p);
    Ok(tape.value(u).clone())
}

/// Drift `f(s, z, u)` evaluated on values.
pub fn drift_block(problem: &dyn ControlProblem, s: f64, z: &Matrix, u: &Matrix) -> Matrix {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let uv = tape.constant(u.clone());
    let f = problem.drift(&mut tape, s, zv, uv);
    tape.value(f).clone()
}

fn euler_step(
    problem: &dyn ControlProblem,
    policy: DriftPolicy,
    s: f64,
    ds: f64,
    z: &Matrix,
    u: &Matrix,
    dw: &Matrix,
) -> Matrix {
    let noise = problem.diffusion().apply(dw);
    let moved = match policy {
        DriftPolicy::PmpFeedback => {
            let step = drift_block(problem, s, z, u).map(|x| ds * x);
            z.zip_map(&step, |a, b| a + b)
        }
        DriftPolicy::ZeroDrift => z.clone(),
    };
    moved.zip_map(&noise, |a, b| a + b)
}

/// Value-level rollout of `z0.rows()` trajectories under a frozen model.
pub fn rollout(
    model: &ValueModel,
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    z0: &Matrix,
    noise: &Stream,
    first_row: u64,
    policy: DriftPolicy,
) -> Result<TrajectoryBatch> {
    let d = model.d;
    check_problem(problem, d, z0)?;
    check_states(z0, first_row, 0)?;
    let n = z0.rows();
    let ds = grid.ds();
    let mut zs = Vec::with_capacity(grid.steps + 1);
    let mut us = Vec::with_capacity(grid.steps);
    let mut dws = Vec::with_capacity(grid.steps);
    zs.push(z0.clone());
    for i in 0..grid.steps {
        let s = grid.s(i);
        let z = &zs[i];
        let u = feedback_block(model, problem, s, z)?;
        let dw = increments(noise, first_row, n, d, i, ds);
        let next = euler_step(problem, policy, s, ds, z, &u, &dw);
        check_states(&next, first_row, i + 1)?;
        zs.push(next);
        us.push(u);
        dws.push(dw);
    }
    let terminal_control = feedback_block(model, problem, grid.s(grid.steps), &zs[grid.steps])?;
    Ok(TrajectoryBatch {
        grid,
        policy,
        z: zs,
        u: us,
        terminal_control,
        dw: dws,
        snapshot: fingerprint(&model.theta),
    })
}

/// Re-applies the update rule to the stored `(z_0, U, dW)`.
pub fn reconstruct(batch: &TrajectoryBatch, problem: &dyn ControlProblem) -> Vec<Matrix> {
    let ds = batch.grid.ds();
    let mut zs = vec![batch.z[0].clone()];
    for i in 0..batch.grid.steps {
        let next = euler_step(problem, batch.policy, batch.grid.s(i), ds, &zs[i], &batch.u[i], &batch.dw[i]);
        zs.push(next);
    }
    zs
}
