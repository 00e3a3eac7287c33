//! Input-to-state discrepancy: local and Lipschitz gains plus the two
//! discrepancy bounds they feed.
//!
//! The quadratic bound is
//! `|x(t) - x'(t)|^2 <= e^{2 Mx t} |x0 - x0'|^2 + Mu^2 e^{2 Mx tau} int_0^t |u - u'|^2`
//! and holds in the Euclidean norm. For systems of the form `x' = f(x) + u`
//! the linear bound `(|x0 - x0'| + int_0^t |u - u'|) e^{Lx t}` applies.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dynamics::System;
use crate::quantization::Hyperbox;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainKind {
    /// Sup of Jacobian quantities over sampled points.
    Local,
    /// `(n Lx + 1/2, m sqrt(m) Lu)` from global Lipschitz constants.
    GlobalLipschitz,
}

impl fmt::Display for GainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainKind::Local => "local",
            GainKind::GlobalLipschitz => "global-lipschitz",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub gx: f64,
    pub gu: f64,
    pub kind: GainKind,
    pub provenance: String,
}

impl Gains {
    /// `system,kind,gx,gu,provenance` with `{:.8e}` floats.
    pub fn csv_row(&self, system: &str) -> String {
        format!(
            "{system},{},{:.8e},{:.8e},{}",
            self.kind,
            self.gx,
            self.gu,
            self.provenance.replace(',', ";")
        )
    }

    pub const CSV_HEADER: &'static str = "system,kind,gx,gu,provenance";
}

fn check_samples(states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<()> {
    if states.is_empty() || inputs.is_empty() {
        return Err(Error::InvalidArgument("gain sampling needs nonempty sample sets".into()));
    }
    Ok(())
}

fn check_finite(j: &DMatrix<f64>) -> Result<()> {
    match j.iter().position(|v| !v.is_finite()) {
        Some(coordinate) => Err(Error::NonFinite {
            context: "Jacobian",
            coordinate,
        }),
        None => Ok(()),
    }
}

/// Largest eigenvalue of `(J + J^T) / 2`.
pub fn max_symmetric_eigenvalue(j: &DMatrix<f64>) -> f64 {
    let sym = (j + j.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(j: &DMatrix<f64>) -> f64 {
    if j.is_empty() {
        return 0.0;
    }
    j.singular_values().iter().copied().fold(0.0, f64::max)
}

/// `max lambda_max((J_x + J_x^T)/2) + 1/2` over the sample product.
pub fn local_gain_x(sys: &System, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<f64> {
    check_samples(states, inputs)?;
    let mut best = f64::NEG_INFINITY;
    for x in states {
        for u in inputs {
            let j = sys.jacobian_x(x, u)?;
            check_finite(&j)?;
            best = best.max(max_symmetric_eigenvalue(&j));
        }
    }
    Ok(best + 0.5)
}

/// `max |J_u|_2` over the sample product.
pub fn local_gain_u(sys: &System, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<f64> {
    check_samples(states, inputs)?;
    let mut best = 0.0f64;
    for x in states {
        for u in inputs {
            let j = sys.jacobian_u(x, u)?;
            check_finite(&j)?;
            best = best.max(spectral_norm(&j));
        }
    }
    Ok(best)
}

pub fn local_gains(sys: &System, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<Gains> {
    Ok(Gains {
        gx: local_gain_x(sys, states, inputs)?,
        gu: local_gain_u(sys, states, inputs)?,
        kind: GainKind::Local,
        provenance: format!("{} state x {} input samples", states.len(), inputs.len()),
    })
}

/// `(n Lx + 1/2, m sqrt(m) Lu)`.
pub fn lipschitz_gains(lip_x: f64, lip_u: f64, n: usize, m: usize) -> Result<Gains> {
    if !(lip_x >= 0.0) || !(lip_u >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz constants must be >= 0 (got {lip_x}, {lip_u})"
        )));
    }
    let mf = m as f64;
    Ok(Gains {
        gx: n as f64 * lip_x + 0.5,
        gu: mf * mf.sqrt() * lip_u,
        kind: GainKind::GlobalLipschitz,
        provenance: format!("Lx={lip_x} Lu={lip_u} n={n} m={m}"),
    })
}

/// Lattice with `per_dim` points per axis spanning the box (its center when
/// `per_dim == 1`).
pub fn lattice_samples(b: &Hyperbox, per_dim: usize) -> Vec<Vec<f64>> {
    let per_dim = per_dim.max(1);
    let dim = b.dim();
    let total = per_dim.pow(dim as u32);
    (0..total)
        .map(|mut code| {
            (0..dim)
                .map(|axis| {
                    let j = code % per_dim;
                    code /= per_dim;
                    if per_dim == 1 {
                        0.5 * (b.lo()[axis] + b.hi()[axis])
                    } else {
                        b.lo()[axis] + b.width(axis) * j as f64 / (per_dim - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// `e^{2 Mx t} dx0^2 + Mu^2 e^{2 Mx tau} int_u_sq`.
pub fn discrepancy_rhs(dx0: f64, int_u_sq: f64, mx: f64, mu: f64, t: f64, tau: f64) -> f64 {
    (2.0 * mx * t).exp() * dx0 * dx0 + mu * mu * (2.0 * mx * tau).exp() * int_u_sq
}

/// `(dx0 + int_u) e^{Lx t}`.
pub fn discrepancy_rhs_linear(dx0: f64, int_u: f64, lx: f64, t: f64) -> f64 {
    (dx0 + int_u) * (lx * t).exp()
}

/// Cumulative trapezoid integral of `samples` over `times`.
pub fn cumulative_trapezoid(times: &[f64], samples: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(times.len());
    out.push(0.0);
    for k in 1..times.len() {
        acc += 0.5 * (samples[k] + samples[k - 1]) * (times[k] - times[k - 1]);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{dubin, harrier, integrator, pendulum, HarrierParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn angle_samples(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| vec![0.0, 0.0, -3.0 + 6.0 * k as f64 / (n - 1) as f64])
            .collect()
    }

    #[test]
    fn dubin_gains() {
        let d = dubin(10.0).unwrap();
        let gx = local_gain_x(&d, &angle_samples(37), &[vec![0.0]]).unwrap();
        assert_relative_eq!(gx, 5.5, epsilon = 1e-10);
        let gu = local_gain_u(&d, &angle_samples(5), &[vec![0.3]]).unwrap();
        assert_relative_eq!(gu, 1.0, epsilon = 1e-12);
        let g = lipschitz_gains(10.0, 1.0, 3, 1).unwrap();
        assert_eq!((g.gx, g.gu), (30.5, 1.0));
    }

    #[test]
    fn integrator_and_pendulum_gains() {
        let i = integrator(1).unwrap();
        assert_eq!(local_gain_x(&i, &[vec![1.0]], &[vec![0.0]]).unwrap(), 0.5);
        assert_eq!(lipschitz_gains(0.0, 1.0, 4, 1).unwrap().gx, 0.5);

        let p = pendulum(0.98, 1.0).unwrap();
        let grid = lattice_samples(&Hyperbox::cube(-std::f64::consts::PI, std::f64::consts::PI, 2).unwrap(), 41);
        let gx = local_gain_x(&p, &grid, &[vec![0.0]]).unwrap();
        // eigenvalues +-(1 - 0.98 cos x1)/2, largest at x1 = pi
        assert_relative_eq!(gx, 1.49, epsilon = 1e-10);
        assert_relative_eq!(local_gain_u(&p, &grid, &[vec![0.0]]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn harrier_gains() {
        let h = harrier(HarrierParams::default()).unwrap();
        let x = vec![vec![0.0; 6]];
        let u = vec![vec![0.0, 0.0]];
        let gu = local_gain_u(&h, &x, &u).unwrap();
        assert_relative_eq!(gu, (0.01f64 + 0.0001).sqrt(), epsilon = 1e-12);
        // the full symmetrized Jacobian has positive eigenvalues too
        let gx = local_gain_x(&h, &x, &u).unwrap();
        assert!(gx > 0.5);
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(discrepancy_rhs(0.0, 0.0, 3.0, 2.0, 1.0, 1.0), 0.0);
        assert_eq!(discrepancy_rhs(1.0, 0.0, 0.0, 1.0, 0.7, 1.0), 1.0);
        assert_eq!(discrepancy_rhs_linear(0.0, 0.0, 5.0, 1.0), 0.0);
        assert_relative_eq!(discrepancy_rhs_linear(0.5, 0.25, 0.0, 3.0), 0.75);
    }

    #[test]
    fn lattice_shape() {
        let b = Hyperbox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let s = lattice_samples(&b, 5);
        assert_eq!(s.len(), 25);
        assert!(s.contains(&vec![0.0, -1.0]) && s.contains(&vec![1.0, 1.0]) && s.contains(&vec![0.5, 0.0]));
        assert_eq!(lattice_samples(&b, 1), vec![vec![0.5, 0.0]]);
    }

    #[test]
    fn csv_row_format() {
        let g = lipschitz_gains(10.0, 1.0, 3, 1).unwrap();
        let row = g.csv_row("dubin");
        assert!(row.starts_with("dubin,global-lipschitz,3.05000000e1,1.00000000e0,"));
        assert_eq!(row.split(',').count(), Gains::CSV_HEADER.split(',').count());
    }

    #[test]
    fn trapezoid_is_exact_on_lines() {
        let t: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|s| 2.0 * s).collect();
        assert_relative_eq!(*cumulative_trapezoid(&t, &y).last().unwrap(), 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn gains_monotone_in_samples(angles in prop::collection::vec(-4.0f64..4.0, 1..20), extra in -4.0f64..4.0) {
            let p = pendulum(0.98, 1.0).unwrap();
            let mut xs: Vec<Vec<f64>> = angles.iter().map(|&a| vec![a, 0.0]).collect();
            let before = local_gain_x(&p, &xs, &[vec![0.0]]).unwrap();
            xs.push(vec![extra, 0.0]);
            let after = local_gain_x(&p, &xs, &[vec![0.0]]).unwrap();
            prop_assert!(after >= before);
        }

        #[test]
        fn lipschitz_gain_dominates_local(angles in prop::collection::vec(-4.0f64..4.0, 1..20), v in 0.1f64..20.0) {
            let d = dubin(v).unwrap();
            let xs: Vec<Vec<f64>> = angles.iter().map(|&a| vec![0.0, 0.0, a]).collect();
            let local = local_gain_x(&d, &xs, &[vec![0.0]]).unwrap();
            let global = lipschitz_gains(d.lip_x(), d.lip_u(), 3, 1).unwrap();
            prop_assert!(local <= global.gx + 1e-12);
        }
    }
}
