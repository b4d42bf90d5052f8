//! Experiment configuration (JSON).
//!
//! Every section except `problem` may be omitted. Problem fields left out are
//! filled from the named problem's defaults by [`ExperimentConfig::resolve`],
//! and the resolved document is what commands echo to `resolved_config.json`.

use std::path::Path;

use hjb_core::problem::{Benchmark, ControlProblem, Trajectory2D};
use hjb_core::trainer::{EvalConfig, TraceChoice, TrainConfig};
use hjb_core::{Activation, Architecture, BackpropMode, DriftPolicy, LossWeights, LrSchedule, NetKind, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Trajectory2d,
    /// `sigma = sqrt(2)`, `lambda = 1`, target at the origin.
    Benchmark,
    /// `sigma = 2 sqrt(2) / 5`, `lambda = 1000`, target `(3, ..., 3)`.
    BenchmarkShifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: ProblemName,
    /// State dimension; fixed at 2 for `trajectory2d`, default 10 otherwise.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub terminal_scale: Option<f64>,
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    #[serde(default)]
    pub t: f64,
    #[serde(rename = "T", default = "one")]
    pub t_end: f64,
    #[serde(rename = "N", default = "fifty")]
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Mlp,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Tanh,
    LogCosh,
    Sin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_kind")]
    pub kind: KindName,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_activation")]
    pub activation: ActivationName,
    /// Rank of the quadratic factor; `min(10, d + 1)` when absent.
    #[serde(default)]
    pub quad_rank: Option<usize>,
    #[serde(default = "yes")]
    pub use_quadratic_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            width: default_width(),
            depth: default_depth(),
            activation: default_activation(),
            quad_rank: None,
            use_quadratic_head: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_beta")]
    pub beta: [f64; 5],
    #[serde(default = "default_exponent")]
    pub exponent: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: default_beta(), exponent: default_exponent() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    PmpFeedback,
    ZeroDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackpropName {
    ThroughDynamics,
    FrozenStates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceName {
    Auto,
    Exact,
    Hutchinson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// `[[start_iteration, rate], ...]`.
    #[serde(default = "default_schedule")]
    pub lr_schedule: Vec<(u64, f64)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub drift_policy: PolicyName,
    #[serde(default = "default_backprop")]
    pub backprop_mode: BackpropName,
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_trace")]
    pub trace: TraceName,
    #[serde(default = "default_probes")]
    pub hutchinson_probes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            batch_size: default_batch(),
            lr_schedule: default_schedule(),
            seed: 0,
            drift_policy: default_policy(),
            backprop_mode: default_backprop(),
            eval_every: 0,
            checkpoint_every: 0,
            clip_norm: None,
            trace: default_trace(),
            hutchinson_probes: default_probes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_rollouts")]
    pub n_rollouts: usize,
    #[serde(default = "default_traj")]
    pub n_traj: usize,
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_rollouts: default_rollouts(), n_traj: default_traj(), oracle_samples: default_oracle_samples() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
}

/// Width sweep used by the `scaling` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(default = "default_start_width")]
    pub start_width: usize,
    #[serde(default = "default_max_width")]
    pub max_width: usize,
    /// Allowed max-coordinate deviation of the mean final state from the target.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self { start_width: default_start_width(), max_width: default_max_width(), tolerance: default_tolerance() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub scaling: ScalingSection,
}

fn one() -> f64 {
    1.0
}
fn fifty() -> usize {
    50
}
fn yes() -> bool {
    true
}
fn default_kind() -> KindName {
    KindName::Resnet
}
fn default_width() -> usize {
    32
}
fn default_depth() -> usize {
    1
}
fn default_activation() -> ActivationName {
    ActivationName::LogCosh
}
fn default_beta() -> [f64; 5] {
    [1.0; 5]
}
fn default_exponent() -> u8 {
    2
}
fn default_iterations() -> u64 {
    1000
}
fn default_batch() -> usize {
    64
}
fn default_schedule() -> Vec<(u64, f64)> {
    vec![(0, 1e-3)]
}
fn default_policy() -> PolicyName {
    PolicyName::PmpFeedback
}
fn default_backprop() -> BackpropName {
    BackpropName::ThroughDynamics
}
fn default_trace() -> TraceName {
    TraceName::Auto
}
fn default_probes() -> usize {
    8
}
fn default_rollouts() -> usize {
    256
}
fn default_traj() -> usize {
    10
}
fn default_oracle_samples() -> usize {
    100_000
}
fn default_start_width() -> usize {
    16
}
fn default_max_width() -> usize {
    512
}
fn default_tolerance() -> f64 {
    0.02
}

fn invalid(field: &str, msg: &str) -> CliError {
    CliError::config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills problem defaults and validates every field.
    pub fn resolve(mut self) -> CliResult<Self> {
        let p = &mut self.problem;
        let d = match p.name {
            ProblemName::Trajectory2d => {
                if let Some(d) = p.d {
                    if d != 2 {
                        return Err(invalid("problem.d", "trajectory2d is two-dimensional"));
                    }
                }
                2
            }
            _ => p.d.unwrap_or(10),
        };
        if d == 0 {
            return Err(invalid("problem.d", "must be at least 1"));
        }
        p.d = Some(d);
        let (sigma, scale, target) = match p.name {
            ProblemName::Trajectory2d => (0.5, 50.0, vec![1.5, 1.5]),
            ProblemName::Benchmark => (std::f64::consts::SQRT_2, 1.0, vec![0.0; d]),
            ProblemName::BenchmarkShifted => (2.0 * std::f64::consts::SQRT_2 / 5.0, 1000.0, vec![3.0; d]),
        };
        p.sigma.get_or_insert(sigma);
        p.terminal_scale.get_or_insert(scale);
        let target = p.target.get_or_insert(target);
        if target.len() != d {
            return Err(invalid("problem.target", &format!("expected {d} entries, got {}", target.len())));
        }
        if self.model.quad_rank.is_none() {
            self.model.quad_rank = Some(d.saturating_add(1).min(10));
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> CliResult<()> {
        let p = &self.problem;
        if !p.sigma.is_some_and(|s| s.is_finite() && s >= 0.0) {
            return Err(invalid("problem.sigma", "must be finite and non-negative"));
        }
        if !p.terminal_scale.is_some_and(f64::is_finite) {
            return Err(invalid("problem.terminal_scale", "must be finite"));
        }
        if p.target.as_ref().is_some_and(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(invalid("problem.target", "must be finite"));
        }
        if !(p.t.is_finite() && p.t_end.is_finite() && p.t_end > p.t) {
            return Err(invalid("problem.T", "must exceed problem.t"));
        }
        if p.steps == 0 {
            return Err(invalid("problem.N", "must be at least 1"));
        }
        if self.model.width == 0 {
            return Err(invalid("model.width", "must be at least 1"));
        }
        if self.model.quad_rank == Some(0) && self.model.use_quadratic_head {
            return Err(invalid("model.quad_rank", "must be at least 1"));
        }
        LossWeights::new(self.loss.beta, self.loss.exponent).map_err(|e| invalid("loss", &e.to_string()))?;
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(invalid("train.batch_size", "must be at least 1"));
        }
        LrSchedule::new(t.lr_schedule.clone()).map_err(|e| invalid("train.lr_schedule", &e.to_string()))?;
        if t.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(invalid("train.clip_norm", "must be positive"));
        }
        if t.trace == TraceName::Hutchinson && t.hutchinson_probes == 0 {
            return Err(invalid("train.hutchinson_probes", "must be at least 1"));
        }
        if self.eval.n_rollouts == 0 {
            return Err(invalid("eval.n_rollouts", "must be at least 1"));
        }
        if self.eval.oracle_samples == 0 {
            return Err(invalid("eval.oracle_samples", "must be at least 1"));
        }
        let s = &self.scaling;
        if s.start_width == 0 || s.max_width < s.start_width {
            return Err(invalid("scaling", "need 1 <= start_width <= max_width"));
        }
        if s.tolerance.is_nan() || s.tolerance <= 0.0 {
            return Err(invalid("scaling.tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.problem.d.expect("resolved config")
    }

    pub fn target(&self) -> &[f64] {
        self.problem.target.as_deref().expect("resolved config")
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.problem.t, self.problem.t_end, self.problem.steps).expect("validated grid")
    }

    pub fn build_problem(&self) -> CliResult<Box<dyn ControlProblem + Send + Sync>> {
        let p = &self.problem;
        let sigma = p.sigma.expect("resolved config");
        let scale = p.terminal_scale.expect("resolved config");
        let target = self.target().to_vec();
        let horizon = (p.t, p.t_end);
        Ok(match p.name {
            ProblemName::Trajectory2d => Box::new(Trajectory2D::new(sigma, target, scale, horizon)?),
            ProblemName::Benchmark => Box::new(Benchmark::new(self.d(), sigma, scale, target, horizon)?),
            ProblemName::BenchmarkShifted => {
                Box::new(Benchmark::new(self.d(), sigma, scale, target, horizon)?.with_label("benchmark_shifted"))
            }
        })
    }

    pub fn architecture(&self) -> Architecture {
        architecture_of(&self.model)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let mut c = TrainConfig::new(
            t.iterations,
            t.batch_size,
            t.seed,
            self.grid(),
            LrSchedule::new(t.lr_schedule.clone()).expect("validated schedule"),
        );
        c.weights = LossWeights::new(self.loss.beta, self.loss.exponent).expect("validated weights");
        c.policy = match t.drift_policy {
            PolicyName::PmpFeedback => DriftPolicy::PmpFeedback,
            PolicyName::ZeroDrift => DriftPolicy::ZeroDrift,
        };
        c.backprop = match t.backprop_mode {
            BackpropName::ThroughDynamics => BackpropMode::ThroughDynamics,
            BackpropName::FrozenStates => BackpropMode::FrozenStates,
        };
        c.eval_every = t.eval_every;
        c.checkpoint_every = t.checkpoint_every;
        c.clip_norm = t.clip_norm;
        c.trace = match t.trace {
            TraceName::Auto => TraceChoice::Auto,
            TraceName::Exact => TraceChoice::Exact,
            TraceName::Hutchinson => TraceChoice::Hutchinson { probes: t.hutchinson_probes },
        };
        c.eval = EvalConfig { n_rollouts: self.eval.n_rollouts, n_traj: self.eval.n_traj, oracle_samples: self.eval.oracle_samples };
        c
    }
}

pub fn architecture_of(m: &ModelConfig) -> Architecture {
    let kind = match m.kind {
        KindName::Mlp => NetKind::Mlp,
        KindName::Resnet => NetKind::ResNet,
    };
    let act = match m.activation {
        ActivationName::Tanh => Activation::Tanh,
        ActivationName::LogCosh => Activation::LogCosh,
        ActivationName::Sin => Activation::Sin,
    };
    let mut a = Architecture::new(kind, m.width, m.depth, act);
    if let Some(r) = m.quad_rank {
        a = a.with_quad_rank(r);
    }
    if !m.use_quadratic_head {
        a = a.without_quadratic_head();
    }
    a
}
