use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context} at coordinate {coordinate}")]
    NonFinite {
        context: &'static str,
        coordinate: usize,
    },

    #[error("trajectory diverged; last finite state at t = {last_finite_time}")]
    Divergence { last_finite_time: f64 },

    #[error("step {step}: sampled {which} lies outside its quantization set (distance {distance:.3e} > radius {radius:.3e})")]
    Containment {
        step: usize,
        which: &'static str,
        distance: f64,
        radius: f64,
    },

    #[error("parameters are infeasible: {0}")]
    Infeasible(String),

    #[error("corrupt symbol stream: {0}")]
    CorruptStream(String),

    #[error("member cap exceeded: {required} members required, cap is {cap}")]
    CapExceeded { required: u128, cap: u128 },

    #[error("dwell time violated: gap {gap} < dwell {dwell}")]
    DwellViolation { gap: f64, dwell: f64 },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}
