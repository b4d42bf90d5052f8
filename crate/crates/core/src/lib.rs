//! Neural value-function solver for stochastic optimal control problems.
//!
//! A value model `Phi(s, z; theta)` is trained on Euler-Maruyama trajectories
//! whose drift comes from the closed-form feedback control `u*(s, z, -grad Phi)`.
//! The training loss combines backward-SDE and HJB residual penalties, the
//! control objective, and terminal-condition penalties.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command-line
//! front end live in the companion `hjb` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod engine;
pub mod error;
pub mod histogram;
pub mod loss;
pub mod math;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod sampler;
pub mod tape;
pub mod trainer;

pub use engine::{Diffusion, EvalRecord, InputPoint, TraceStrategy};
pub use error::{Error, Result};
pub use loss::{LossBreakdown, LossWeights};
pub use matrix::Matrix;
pub use model::{Activation, Architecture, NetKind, ValueModel};
pub use optim::{AdamState, LrSchedule};
pub use oracle::{ErrorReport, OracleEstimate};
pub use problem::{Benchmark, ControlProblem, InitialDistribution, Trajectory2D};
pub use rng::{Purpose, Stream};
pub use sampler::{BackpropMode, DriftPolicy, TimeGrid, TrajectoryBatch};
pub use tape::{Tape, Var};
pub use trainer::{TrainConfig, TrainState};
