//! Stochastic optimization loop.
//!
//! Iteration `k` draws initial states from `(seed, InitialState, k)`, Brownian
//! increments from `(seed, Brownian, k)` and Hutchinson probes from
//! `(seed, Probe, k)`; no other randomness enters. Resuming at any iteration
//! reproduces an uninterrupted run bit for bit. Evaluation draws from its own
//! purposes.

use alloc::vec::Vec;

use crate::engine::{loss_gradient, TraceStrategy};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossBreakdown, LossWeights};
use crate::model::{init_params, Architecture, BoundModel, ValueModel};
use crate::optim::{clip_norm, AdamState, LrSchedule};
use crate::oracle::{evaluate_policy_objective, relative_errors, ErrorReport};
use crate::problem::{sample_initial, ControlProblem};
use crate::rng::{Purpose, Stream};
use crate::sampler::{rollout_graph, BackpropMode, DriftPolicy, TimeGrid};
use crate::tape::Tape;

/// How the Hessian trace inside the HJB penalty is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceChoice {
    /// Exact for `d <= 20`, Hutchinson with 8 probes above.
    Auto,
    Exact,
    Hutchinson { probes: usize },
}

impl TraceChoice {
    fn strategy(self, d: usize, stream: Stream) -> TraceStrategy {
        match self {
            TraceChoice::Auto => TraceStrategy::auto(d, stream, 0),
            TraceChoice::Exact => TraceStrategy::Exact,
            TraceChoice::Hutchinson { probes } => TraceStrategy::Hutchinson { probes, stream, salt: 0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Rollouts for the objective estimate.
    pub n_rollouts: usize,
    /// Trajectories for relative errors (0 disables them).
    pub n_traj: usize,
    pub oracle_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_rollouts: 256, n_traj: 10, oracle_samples: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub grid: TimeGrid,
    pub policy: DriftPolicy,
    pub backprop: BackpropMode,
    pub schedule: LrSchedule,
    /// Evaluate after every `eval_every` iterations (0 disables).
    pub eval_every: u64,
    /// Checkpoint after every `checkpoint_every` iterations (0 disables).
    pub checkpoint_every: u64,
    pub clip_norm: Option<f64>,
    pub trace: TraceChoice,
    pub eval: EvalConfig,
}

impl TrainConfig {
    pub fn new(iterations: u64, batch_size: usize, seed: u64, grid: TimeGrid, schedule: LrSchedule) -> Self {
        Self {
            iterations,
            batch_size,
            seed,
            weights: LossWeights::default(),
            grid,
            policy: DriftPolicy::PmpFeedback,
            backprop: BackpropMode::ThroughDynamics,
            schedule,
            eval_every: 0,
            checkpoint_every: 0,
            clip_norm: None,
            trace: TraceChoice::Auto,
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        if let TraceChoice::Hutchinson { probes: 0 } = self.trace {
            return Err(Error::Config("Hutchinson estimator needs at least one probe".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ValueModel,
    pub adam: AdamState,
    pub seed: u64,
    pub next_iteration: u64,
}

impl TrainState {
    pub fn fresh(arch: &Architecture, d: usize, seed: u64) -> Result<Self> {
        let model = init_params(arch, d, seed)?;
        let adam = AdamState::new(model.theta.len());
        Ok(Self { model, adam, seed, next_iteration: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub j_mean: f64,
    pub j_stderr: f64,
    pub errors: Option<ErrorReport>,
}

/// Receives training events. Returning an error stops training.
pub trait Observer {
    fn on_iteration(&mut self, _record: &IterationRecord) -> Result<()> {
        Ok(())
    }
    fn on_metrics(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
    /// Seconds since training started; the default clock reads zero.
    fn elapsed_seconds(&self) -> f64 {
        0.0
    }
}

/// In-memory run log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub iterations: Vec<IterationRecord>,
    pub metrics: Vec<MetricsRecord>,
}

impl Observer for RunLog {
    fn on_iteration(&mut self, record: &IterationRecord) -> Result<()> {
        self.iterations.push(*record);
        Ok(())
    }

    fn on_metrics(&mut self, record: &MetricsRecord) -> Result<()> {
        self.metrics.push(*record);
        Ok(())
    }
}

/// Loss breakdown and parameter gradient of one training minibatch.
pub fn minibatch_gradient(
    config: &TrainConfig,
    problem: &dyn ControlProblem,
    model: &ValueModel,
    iteration: u64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let seed = config.seed;
    let z0 = sample_initial(problem, &Stream::new(seed, Purpose::InitialState, iteration), config.batch_size);
    let noise = Stream::new(seed, Purpose::Brownian, iteration);
    let trace = config.trace.strategy(model.d, Stream::new(seed, Purpose::Probe, iteration));
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, model, true);
    let path = rollout_graph(&mut tape, &bound, problem, config.grid, &z0, &noise, 0, config.policy, config.backprop)?;
    let (total, breakdown) = total_loss(&mut tape, &path, problem, &config.weights, trace)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite { what: "loss", iteration });
    }
    let grad = loss_gradient(&mut tape, &bound, total)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", iteration });
    }
    Ok((breakdown, grad))
}

/// Metrics for the current model: objective statistics and, for the
/// benchmark family with `n_traj > 0`, relative errors.
pub fn evaluate_hook(
    model: &ValueModel,
    problem: &dyn ControlProblem,
    grid: TimeGrid,
    eval: &EvalConfig,
    seed: u64,
    iteration: u64,
) -> Result<MetricsRecord> {
    let (j_mean, j_stderr) = evaluate_policy_objective(model, problem, grid, eval.n_rollouts.max(1), seed, iteration)?;
    let errors = if problem.as_benchmark().is_some() && eval.n_traj > 0 {
        Some(relative_errors(model, problem, grid, eval.n_traj, seed, iteration, eval.oracle_samples)?)
    } else {
        None
    };
    Ok(MetricsRecord { iteration, j_mean, j_stderr, errors })
}

/// Trains from a fresh initialization.
pub fn train(
    config: &TrainConfig,
    problem: &dyn ControlProblem,
    arch: &Architecture,
    observer: &mut dyn Observer,
) -> Result<TrainState> {
    let mut state = TrainState::fresh(arch, problem.state_dim(), config.seed)?;
    resume(&mut state, config, problem, observer)?;
    Ok(state)
}

/// Continues `state` up to `config.iterations`.
pub fn resume(
    state: &mut TrainState,
    config: &TrainConfig,
    problem: &dyn ControlProblem,
    observer: &mut dyn Observer,
) -> Result<()> {
    config.validate()?;
    if state.model.d != problem.state_dim() {
        return Err(Error::Dimension { expected: problem.state_dim(), got: state.model.d });
    }
    if state.seed != config.seed {
        return Err(Error::Config("checkpoint seed differs from the configured seed".into()));
    }
    while state.next_iteration < config.iterations {
        let k = state.next_iteration;
        let (breakdown, mut grad) = minibatch_gradient(config, problem, &state.model, k)?;
        if let Some(c) = config.clip_norm {
            clip_norm(&mut grad, c);
        }
        let lr = config.schedule.rate(k);
        state.adam.step(&mut state.model.theta, &grad, lr)?;
        state.next_iteration = k + 1;
        observer.on_iteration(&IterationRecord { iteration: k, lr, loss: breakdown, wallclock_s: observer.elapsed_seconds() })?;
        let done = k + 1;
        if config.eval_every > 0 && done.is_multiple_of(config.eval_every) {
            let m = evaluate_hook(&state.model, problem, config.grid, &config.eval, config.seed, done)?;
            observer.on_metrics(&m)?;
        }
        if config.checkpoint_every > 0 && done.is_multiple_of(config.checkpoint_every) {
            observer.on_checkpoint(state)?;
        }
    }
    Ok(())
}
