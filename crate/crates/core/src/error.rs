use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("input derivatives of order {0} are not supported (maximum is 2)")]
    UnsupportedOrder(u8),
    #[error("gradient output must be a 1x1 node, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite state in trajectory {trajectory} at step {step}")]
    NonFiniteState { trajectory: u64, step: usize },
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: u64 },
    #[error("the Monte-Carlo oracle only supports the benchmark problem family")]
    UnsupportedOracle,
    #[error("{0}")]
    Observer(String),
}

pub type Result<T> = core::result::Result<T, Error>;
