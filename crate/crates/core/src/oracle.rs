//! Reference values for the benchmark family and evaluation metrics.
//!
//! For `f = 2u`, `L = |u|^2` and constant scalar `sigma` the value function is
//! `Phi(s, z) = -(sigma^2 / 2) ln E[exp(-(2 / sigma^2) G(z + sigma sqrt(T - s) xi))]`
//! with `xi ~ N(0, I)`, estimated here by Monte Carlo in log-sum-exp form.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::model::{BoundModel, ValueModel};
use crate::problem::{sample_initial, Benchmark, ControlProblem};
use crate::rng::{Purpose, Stream};
use crate::sampler::{rollout, DriftPolicy, TimeGrid, TrajectoryBatch};
use crate::tape::Tape;
use crate::engine::stack_input;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    /// Delta-method standard error of `value`.
    pub stderr: f64,
    pub n_samples: usize,
}

/// Pooled and per-trajectory relative errors along evaluation trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    /// `||Phi_theta - Phi||_2 / ||Phi||_2` over all trajectory points.
    pub re: f64,
    /// Relative error at the initial time-state pairs.
    pub re0: f64,
    /// Mean over trajectories of the per-trajectory relative error.
    pub re_per_trajectory: f64,
    /// Oracle noise expressed on the scale of `re` and `re0`.
    pub re_noise: f64,
    pub re0_noise: f64,
    pub trajectories: usize,
    pub points: usize,
}

fn benchmark_of(problem: &dyn ControlProblem) -> Result<&Benchmark> {
    problem.as_benchmark().ok_or(Error::UnsupportedOracle)
}

/// Monte-Carlo value at `(s, z)`; sample `k` uses stream coordinates `(row, k)`.
pub fn cole_hopf_value(
    problem: &dyn ControlProblem,
    s: f64,
    z: &[f64],
    n_samples: usize,
    stream: &Stream,
    row: u64,
) -> Result<OracleEstimate> {
    let bench = benchmark_of(problem)?;
    if z.len() != bench.d {
        return Err(Error::Dimension { expected: bench.d, got: z.len() });
    }
    if n_samples == 0 {
        return Err(Error::Config("oracle needs at least one sample".into()));
    }
    let (_, t_end) = bench.horizon;
    let sigma = bench.sigma();
    if s >= t_end || sigma == 0.0 {
        return Ok(OracleEstimate { value: bench.terminal_cost_value(z), stderr: 0.0, n_samples });
    }
    let a = 2.0 / (sigma * sigma);
    let scale = sigma * math::sqrt(t_end - s);
    let mut xi = vec![0.0; z.len()];
    let mut x = vec![0.0; z.len()];
    let mut expo = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        stream.fill_normal(row, k as u32, &mut xi);
        for j in 0..z.len() {
            x[j] = z[j] + scale * xi[j];
        }
        expo.push(-a * bench.terminal_cost_value(&x));
    }
    let (value, stderr) = log_mean_exp_value(&expo, a);
    Ok(OracleEstimate { value, stderr, n_samples })
}

/// `-(1/a) ln mean exp(x_k)` with its delta-method standard error.
fn log_mean_exp_value(expo: &[f64], a: f64) -> (f64, f64) {
    let n = expo.len() as f64;
    let top = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = expo.iter().map(|x| math::exp(x - top)).collect();
    let mean = weights.iter().sum::<f64>() / n;
    let value = -(top + math::ln(mean)) / a;
    if expo.len() < 2 {
        return (value, 0.0);
    }
    let var = weights.iter().map(|w| (w / mean - 1.0) * (w / mean - 1.0)).sum::<f64>() / (n - 1.0);
    (value, math::sqrt(var / n) / a)
}

/// Model values at every row of `z` at time `s`.
pub fn model_values(model: &ValueModel, s: f64, z: &Matrix) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, model, false);
    let zv = tape.constant(z.clone());
    let y = stack_input(&mut tape, s, zv);
    let v = bound.value(&mut tape, y);
    tape.value(v).as_slice().to_vec()
}

/// PmpFeedback rollouts for evaluation: initial states from
/// `(seed, EvaluationInitial)`, increments from `(seed, Evaluation)`.
pub fn evaluation_rollout(
    model: &ValueModel,
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    n: usize,
    seed: u64,
    epoch: u64,
) -> Result<TrajectoryBatch> {
    let z0 = sample_initial(problem, &Stream::new(seed, Purpose::EvaluationInitial, epoch), n);
    rollout(model, problem, grid, &z0, &Stream::new(seed, Purpose::Evaluation, epoch), 0, DriftPolicy::PmpFeedback)
}

/// Relative errors of `model` against the oracle along `n_traj` evaluation trajectories.
pub fn relative_errors(
    model: &ValueModel,
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    n_traj: usize,
    seed: u64,
    epoch: u64,
    oracle_samples: usize,
) -> Result<ErrorReport> {
    benchmark_of(problem)?;
    let batch = evaluation_rollout(model, problem, grid, n_traj, seed, epoch)?;
    let oracle_stream = Stream::new(seed, Purpose::Oracle, epoch);
    let steps = grid.steps;
    let mut model_v = vec![vec![0.0; steps + 1]; n_traj];
    let mut exact = vec![vec![OracleEstimate { value: 0.0, stderr: 0.0, n_samples: 0 }; steps + 1]; n_traj];
    for i in 0..=steps {
        let s = grid.s(i);
        let vals = model_values(model, s, &batch.z[i]);
        for r in 0..n_traj {
            model_v[r][i] = vals[r];
            let row = (r * (steps + 1) + i) as u64;
            exact[r][i] = cole_hopf_value(problem, s, batch.state(r, i), oracle_samples, &oracle_stream, row)?;
        }
    }
    Ok(error_report(&model_v, &exact))
}

/// Error metrics from per-trajectory model values and oracle estimates.
pub fn error_report(model_v: &[Vec<f64>], exact: &[Vec<OracleEstimate>]) -> ErrorReport {
    let (mut num, mut den, mut noise) = (0.0, 0.0, 0.0);
    let (mut num0, mut den0, mut noise0) = (0.0, 0.0, 0.0);
    let mut per_traj = 0.0;
    let mut points = 0;
    for (mv, ex) in model_v.iter().zip(exact) {
        let (mut tn, mut td) = (0.0, 0.0);
        for (k, (m, e)) in mv.iter().zip(ex).enumerate() {
            let err = m - e.value;
            tn += err * err;
            td += e.value * e.value;
            noise += e.stderr * e.stderr;
            if k == 0 {
                num0 += err * err;
                den0 += e.value * e.value;
                noise0 += e.stderr * e.stderr;
            }
            points += 1;
        }
        num += tn;
        den += td;
        per_traj += ratio(math::sqrt(tn), math::sqrt(td));
    }
    let n = model_v.len().max(1) as f64;
    ErrorReport {
        re: ratio(math::sqrt(num), math::sqrt(den)),
        re0: ratio(math::sqrt(num0), math::sqrt(den0)),
        re_per_trajectory: per_traj / n,
        re_noise: ratio(math::sqrt(noise), math::sqrt(den)),
        re0_noise: ratio(math::sqrt(noise0), math::sqrt(den0)),
        trajectories: model_v.len(),
        points,
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mean and standard error of a sample.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var / n))
}

/// `(J_mean, J_stderr)` over `n_rollouts` evaluation rollouts of the frozen model.
pub fn evaluate_policy_objective(
    model: &ValueModel,
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    n_rollouts: usize,
    seed: u64,
    epoch: u64,
) -> Result<(f64, f64)> {
    let batch = evaluation_rollout(model, problem, grid, n_rollouts, seed, epoch)?;
    Ok(mean_stderr(&crate::loss::objective_per_trajectory(&batch, problem)))
}
