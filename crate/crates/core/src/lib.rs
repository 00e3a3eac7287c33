//! Estimation entropy of nonlinear systems driven by slowly-varying inputs.
//!
//! The crate computes upper bounds on estimation entropy (the minimal bit rate
//! needed to track a system's state within a fixed accuracy `eps`), runs the
//! sampled/quantized approximating-function construction as a working
//! encoder/decoder pair, and builds the separated trajectory families that
//! show why other entropy notions diverge for open systems.
//!
//! Module map:
//!
//! - [`dynamics`]: systems `dx/dt = f(x, u)`, Jacobians, fixed-step RK4.
//! - [`signals`]: slowly-varying inputs `U(mu, eta)`, piecewise-constant
//!   families and the counterexample time sequences.
//! - [`quantization`]: axis-aligned boxes, uniform grids, nearest-center
//!   quantization and mixed-radix symbol indices.
//! - [`discrepancy`]: local and Lipschitz gains and the input-to-state
//!   discrepancy bounds.
//! - [`estimator`]: the encoder/decoder that builds approximating functions.
//! - [`bounds`]: `g_c`/`g_o` evaluation and parameter search.
//! - [`switched`]: mode divergence, the dwell-time bound, one-hot embedding.
//! - [`entropy_lab`]: separated families and the spanning/separated sandwich.

pub mod bounds;
pub mod discrepancy;
pub mod dynamics;
pub mod entropy_lab;
mod error;
pub mod estimator;
pub mod quantization;
pub mod signals;
pub mod switched;

pub use error::{Error, Result};

/// Infinity norm of a vector.
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Euclidean norm of a vector.
pub fn norm_2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Infinity-norm distance between two vectors of equal length.
pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Euclidean distance between two vectors of equal length.
pub fn dist_2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Ceiling that ignores round-off of relative size 1e-10.
///
/// Grid cell counts are ratios like `2r / 2delta` where `r` and `delta` are
/// products of the same parameters; the exact ratio is often an integer and a
/// plain `ceil` would flip to the next integer on the last ulp.
pub fn ceil_tol(x: f64) -> f64 {
    (x - 1e-10 * x.abs().max(1.0)).ceil()
}

/// Floor that ignores round-off of relative size 1e-10, the counterpart of
/// [`ceil_tol`] for step counts like `T / Tp`.
pub fn floor_tol(x: f64) -> f64 {
    (x + 1e-10 * x.abs().max(1.0)).floor()
}
