//! Stochastic optimal control problems
//! `dz = f(s, z, u) ds + sigma dW`, cost `E[ int L ds + G(z_T) ]`.
//!
//! Problem callbacks operate on tape nodes holding one state per row, so the
//! same definitions serve rollouts, losses and their parameter gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::engine::Diffusion;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::Stream;
use crate::tape::{Func, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    Dirac(Vec<f64>),
    /// Gaussian given by its mean and the lower Cholesky factor of its covariance.
    Gaussian { mean: Vec<f64>, chol: Matrix },
}

impl InitialDistribution {
    pub fn gaussian(mean: Vec<f64>, covariance: &Matrix) -> Result<Self> {
        let chol = cholesky(covariance)
            .ok_or_else(|| Error::Config("initial covariance must be symmetric positive definite".into()))?;
        if chol.rows() != mean.len() {
            return Err(Error::Dimension { expected: mean.len(), got: chol.rows() });
        }
        Ok(Self::Gaussian { mean, chol })
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialDistribution::Dirac(x) => x.len(),
            InitialDistribution::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// `n` i.i.d. draws, one per row; row `r` uses stream row `r`.
    pub fn sample(&self, stream: &Stream, n: usize) -> Matrix {
        let d = self.dim();
        let mut out = Matrix::zeros(n, d);
        match self {
            InitialDistribution::Dirac(x) => {
                for r in 0..n {
                    out.row_mut(r).copy_from_slice(x);
                }
            }
            InitialDistribution::Gaussian { mean, chol } => {
                let mut xi = vec![0.0; d];
                for r in 0..n {
                    stream.fill_normal(r as u64, 0, &mut xi);
                    let row = out.row_mut(r);
                    for i in 0..d {
                        row[i] = mean[i] + (0..=i).map(|k| chol.get(i, k) * xi[k]).sum::<f64>();
                    }
                }
            }
        }
        out
    }
}

fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return None;
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-12 * (1.0 + a.get(i, j).abs()) {
                return None;
            }
            let s: f64 = (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum();
            if i == j {
                let v = a.get(i, i) - s;
                if v <= 0.0 {
                    return None;
                }
                l.set(i, i, math::sqrt(v));
            } else {
                l.set(i, j, (a.get(i, j) - s) / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// A control problem with a closed-form feedback map and unconstrained controls.
pub trait ControlProblem {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// `(t, T)`.
    fn horizon(&self) -> (f64, f64);
    fn diffusion(&self) -> &Diffusion;
    fn initial_distribution(&self) -> &InitialDistribution;

    /// `f(s, z, u)`, `n x d`.
    fn drift(&self, tape: &mut Tape, s: f64, z: Var, u: Var) -> Var;
    /// `L(s, z, u)`, `n x 1`.
    fn running_cost(&self, tape: &mut Tape, s: f64, z: Var, u: Var) -> Var;
    /// `G(z)`, `n x 1`.
    fn terminal_cost(&self, tape: &mut Tape, z: Var) -> Var;
    /// `grad G(z)`, `n x d`.
    fn terminal_grad(&self, tape: &mut Tape, z: Var) -> Var;
    /// `u*(s, z, p) = argmax_u { p . f(s, z, u) - L(s, z, u) }`, `n x k`.
    fn feedback(&self, tape: &mut Tape, s: f64, z: Var, p: Var) -> Var;

    fn as_benchmark(&self) -> Option<&Benchmark> {
        None
    }
}

/// `H = -1/2 tr(sigma sigma^T hess Phi) + p . f(s, z, u*) - L(s, z, u*)` with `p = -grad Phi`.
///
/// `grad_z` is `n x d`, `hess_trace_w` is `n x 1`; the result is `n x 1`.
pub fn hamiltonian_residual(
    problem: &dyn ControlProblem,
    tape: &mut Tape,
    s: f64,
    z: Var,
    grad_z: Var,
    hess_trace_w: Var,
) -> Var {
    let p = tape.neg(grad_z);
    let u = problem.feedback(tape, s, z, p);
    let f = problem.drift(tape, s, z, u);
    let l = problem.running_cost(tape, s, z, u);
    let pf = tape.row_dot(p, f);
    let diff = tape.sub(pf, l);
    let half = tape.scale(hess_trace_w, -0.5);
    tape.add(half, diff)
}

/// Value-level feedback at one point.
pub fn feedback_control(problem: &dyn ControlProblem, s: f64, z: &[f64], p: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(Matrix::row_vector(z));
    let pv = tape.constant(Matrix::row_vector(p));
    let u = problem.feedback(&mut tape, s, zv, pv);
    tape.value(u).as_slice().to_vec()
}

/// Value-level `p . f(s, z, u) - L(s, z, u)`, the control-dependent part of the
/// generalized Hamiltonian.
pub fn control_hamiltonian(problem: &dyn ControlProblem, s: f64, z: &[f64], p: &[f64], u: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let zv = tape.constant(Matrix::row_vector(z));
    let pv = tape.constant(Matrix::row_vector(p));
    let uv = tape.constant(Matrix::row_vector(u));
    let f = problem.drift(&mut tape, s, zv, uv);
    let l = problem.running_cost(&mut tape, s, zv, uv);
    let pf = tape.row_dot(pv, f);
    let h = tape.sub(pf, l);
    tape.value(h).item()
}

pub fn sample_initial(problem: &dyn ControlProblem, stream: &Stream, n: usize) -> Matrix {
    problem.initial_distribution().sample(stream, n)
}

/// Subtracts a constant row (target) from every state row.
fn offset(tape: &mut Tape, z: Var, target: &[f64]) -> Var {
    let neg: Vec<f64> = target.iter().map(|t| -t).collect();
    let row = tape.constant(Matrix::row_vector(&neg));
    tape.add_row(z, row)
}

fn check_dims(d: usize, target: &[f64], sigma: f64, horizon: (f64, f64)) -> Result<()> {
    if target.len() != d {
        return Err(Error::Dimension { expected: d, got: target.len() });
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config("sigma must be finite and non-negative".into()));
    }
    if horizon.0.is_nan() || horizon.1.is_nan() || horizon.1 <= horizon.0 {
        return Err(Error::Config("horizon must satisfy T > t".into()));
    }
    Ok(())
}

/// Two-dimensional trajectory planning around a Gaussian hill at the origin.
#[derive(Debug, Clone)]
pub struct Trajectory2D {
    pub target: Vec<f64>,
    pub terminal_scale: f64,
    pub horizon: (f64, f64),
    diffusion: Diffusion,
    initial: InitialDistribution,
}

impl Trajectory2D {
    pub const HILL_HEIGHT: f64 = 50.0;
    pub const HILL_WIDTH: f64 = 0.8;

    pub fn new(sigma: f64, target: Vec<f64>, terminal_scale: f64, horizon: (f64, f64)) -> Result<Self> {
        check_dims(2, &target, sigma, horizon)?;
        let initial = InitialDistribution::gaussian(vec![-1.5, -1.5], &Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]))?;
        Ok(Self { target, terminal_scale, horizon, diffusion: Diffusion::Scalar(sigma), initial })
    }

    pub fn sigma(&self) -> f64 {
        match self.diffusion {
            Diffusion::Scalar(s) => s,
            Diffusion::Matrix(_) => unreachable!(),
        }
    }

    pub fn with_initial(mut self, initial: InitialDistribution) -> Result<Self> {
        if initial.dim() != 2 {
            return Err(Error::Dimension { expected: 2, got: initial.dim() });
        }
        self.initial = initial;
        Ok(self)
    }

    /// `Q(z) = 50 exp(-|z|^2 / 0.8)`.
    pub fn obstacle_cost(z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|v| v * v).sum();
        Self::HILL_HEIGHT * math::exp(-r2 / Self::HILL_WIDTH)
    }

    fn obstacle(&self, tape: &mut Tape, z: Var) -> Var {
        let r2 = tape.row_dot(z, z);
        let e = tape.scale(r2, -1.0 / Self::HILL_WIDTH);
        let e = tape.unary(e, Func::Exp);
        tape.scale(e, Self::HILL_HEIGHT)
    }
}

impl Default for Trajectory2D {
    fn default() -> Self {
        Self::new(0.5, vec![1.5, 1.5], 50.0, (0.0, 1.0)).expect("default 2D problem is valid")
    }
}

impl ControlProblem for Trajectory2D {
    fn name(&self) -> &str {
        "trajectory2d"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    fn initial_distribution(&self) -> &InitialDistribution {
        &self.initial
    }

    fn drift(&self, _tape: &mut Tape, _s: f64, _z: Var, u: Var) -> Var {
        u
    }

    fn running_cost(&self, tape: &mut Tape, _s: f64, z: Var, u: Var) -> Var {
        let uu = tape.row_dot(u, u);
        let kinetic = tape.scale(uu, 0.5);
        let q = self.obstacle(tape, z);
        tape.add(kinetic, q)
    }

    fn terminal_cost(&self, tape: &mut Tape, z: Var) -> Var {
        let e = offset(tape, z, &self.target);
        let r2 = tape.row_dot(e, e);
        tape.scale(r2, self.terminal_scale)
    }

    fn terminal_grad(&self, tape: &mut Tape, z: Var) -> Var {
        let e = offset(tape, z, &self.target);
        tape.scale(e, 2.0 * self.terminal_scale)
    }

    fn feedback(&self, _tape: &mut Tape, _s: f64, _z: Var, p: Var) -> Var {
        p
    }
}

/// The `d`-dimensional benchmark with `f = 2u`, `L = |u|^2` and
/// `G(z) = lambda ln((1 + |z - target|^2) / 2)`, started at the origin.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub d: usize,
    pub terminal_scale: f64,
    pub target: Vec<f64>,
    pub horizon: (f64, f64),
    sigma: f64,
    diffusion: Diffusion,
    initial: InitialDistribution,
    label: String,
}

impl Benchmark {
    pub fn new(d: usize, sigma: f64, terminal_scale: f64, target: Vec<f64>, horizon: (f64, f64)) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        check_dims(d, &target, sigma, horizon)?;
        Ok(Self {
            d,
            terminal_scale,
            target,
            horizon,
            sigma,
            diffusion: Diffusion::Scalar(sigma),
            initial: InitialDistribution::Dirac(vec![0.0; d]),
            label: "benchmark".into(),
        })
    }

    /// `sigma = sqrt(2)`, `lambda = 1`, target at the origin, horizon `[0, 1]`.
    pub fn original(d: usize) -> Self {
        Self::new(d, math::SQRT_2, 1.0, vec![0.0; d], (0.0, 1.0)).expect("valid benchmark")
    }

    /// `sigma = 2 sqrt(2) / 5`, `lambda = 1000`, target `(3, ..., 3)`.
    pub fn shifted(d: usize) -> Self {
        let mut b = Self::new(d, 2.0 * math::SQRT_2 / 5.0, 1000.0, vec![3.0; d], (0.0, 1.0)).expect("valid benchmark");
        b.label = "benchmark_shifted".into();
        b
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn terminal_cost_value(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().zip(&self.target).map(|(a, t)| (a - t) * (a - t)).sum();
        self.terminal_scale * (math::ln(1.0 + r2) - math::LN_2)
    }

    pub fn terminal_grad_value(&self, z: &[f64]) -> Vec<f64> {
        let r2: f64 = z.iter().zip(&self.target).map(|(a, t)| (a - t) * (a - t)).sum();
        let k = 2.0 * self.terminal_scale / (1.0 + r2);
        z.iter().zip(&self.target).map(|(a, t)| k * (a - t)).collect()
    }
}

impl ControlProblem for Benchmark {
    fn name(&self) -> &str {
        &self.label
    }

    fn state_dim(&self) -> usize {
        self.d
    }

    fn control_dim(&self) -> usize {
        self.d
    }

    fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    fn initial_distribution(&self) -> &InitialDistribution {
        &self.initial
    }

    fn drift(&self, tape: &mut Tape, _s: f64, _z: Var, u: Var) -> Var {
        tape.scale(u, 2.0)
    }

    fn running_cost(&self, tape: &mut Tape, _s: f64, _z: Var, u: Var) -> Var {
        tape.row_dot(u, u)
    }

    fn terminal_cost(&self, tape: &mut Tape, z: Var) -> Var {
        let e = offset(tape, z, &self.target);
        let r2 = tape.row_dot(e, e);
        let r2 = tape.add_scalar(r2, 1.0);
        let lg = tape.unary(r2, Func::Ln);
        let lg = tape.add_scalar(lg, -math::LN_2);
        tape.scale(lg, self.terminal_scale)
    }

    fn terminal_grad(&self, tape: &mut Tape, z: Var) -> Var {
        let e = offset(tape, z, &self.target);
        let r2 = tape.row_dot(e, e);
        let r2 = tape.add_scalar(r2, 1.0);
        let inv = tape.unary(r2, Func::Recip);
        let inv = tape.scale(inv, 2.0 * self.terminal_scale);
        let inv = tape.broadcast_cols(inv, self.d);
        tape.mul(e, inv)
    }

    fn feedback(&self, _tape: &mut Tape, _s: f64, _z: Var, p: Var) -> Var {
        p
    }

    fn as_benchmark(&self) -> Option<&Benchmark> {
        Some(self)
    }
}
