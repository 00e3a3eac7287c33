#![allow(dead_code)]

use est_entropy::discrepancy::{discrepancy_rhs, discrepancy_rhs_linear};
use est_entropy::dynamics::{time_grid, System};
use est_entropy::quantization::Hyperbox;
use est_entropy::signals::{Piece, PieceKind, Signal, VariationBudget};
use est_entropy::{dist_2, norm_2};
use rand::Rng;

pub fn uniform_in<R: Rng>(rng: &mut R, b: &Hyperbox) -> Vec<f64> {
    (0..b.dim())
        .map(|i| {
            let (lo, hi) = (b.lo()[i], b.hi()[i]);
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect()
}

/// Piecewise-constant member of `U(mu, eta)`: every value sits within
/// `eta / 2` (per coordinate) of a common center drawn from the `U0` box,
/// shifted so the first value is that center.
pub fn random_pwc<R: Rng>(rng: &mut R, budget: &VariationBudget, horizon: f64, pieces: usize) -> Signal {
    let u0 = uniform_in(rng, &budget.u0_box);
    let mut starts: Vec<f64> = (1..pieces).map(|_| rng.gen_range(0.0..horizon)).collect();
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    let half = budget.eta / 2.0;
    let mut out = vec![Piece {
        start: 0.0,
        kind: PieceKind::Constant(u0.clone()),
    }];
    for s in starts {
        if s <= 0.0 {
            continue;
        }
        let v: Vec<f64> = u0
            .iter()
            .map(|c| if half > 0.0 { c + rng.gen_range(-half..=half) } else { *c })
            .collect();
        out.push(Piece {
            start: s,
            kind: PieceKind::Constant(v),
        });
    }
    Signal::new(out, horizon).expect("valid signal")
}

/// Piecewise-constant signal with values drawn from a box.
pub fn random_pwc_in_box<R: Rng>(rng: &mut R, b: &Hyperbox, horizon: f64, pieces: usize) -> Signal {
    let mut starts: Vec<f64> = (1..pieces).map(|_| rng.gen_range(0.0..horizon)).collect();
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    let mut out = vec![Piece {
        start: 0.0,
        kind: PieceKind::Constant(uniform_in(rng, b)),
    }];
    for s in starts.into_iter().filter(|&s| s > 0.0) {
        out.push(Piece {
            start: s,
            kind: PieceKind::Constant(uniform_in(rng, b)),
        });
    }
    Signal::new(out, horizon).expect("valid signal")
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PairCheck {
    pub quadratic_violations: usize,
    pub linear_violations: usize,
    /// Largest `lhs / rhs` seen for the quadratic inequality.
    pub worst_ratio: f64,
    pub points: usize,
}

/// Integrates both runs on a common grid and checks the squared discrepancy
/// inequality (2-norm) at every grid point, plus the linear one when
/// `lip_x` is given.
#[allow(clippy::too_many_arguments)]
pub fn check_pair(
    sys: &System,
    x1: &[f64],
    x2: &[f64],
    u1: &Signal,
    u2: &Signal,
    t_end: f64,
    dt: f64,
    mx: f64,
    mu: f64,
    lip_x: Option<f64>,
) -> PairCheck {
    let mut bps = u1.breakpoints();
    bps.extend(u2.breakpoints());
    bps.sort_by(f64::total_cmp);
    let times = time_grid(t_end, dt, &bps);
    let a = sys.integrate_on(x1, u1, times.clone(), dt).expect("integrates");
    let b = sys.integrate_on(x2, u2, times.clone(), dt).expect("integrates");

    // inputs are constant between grid points, so midpoints give exact integrals
    let mut du = vec![0.0];
    let mut du_sq = vec![0.0];
    for w in times.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        du.push(dist_2(&u1.eval(mid), &u2.eval(mid)));
        du_sq.push(du.last().unwrap().powi(2));
    }
    let step = |v: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for k in 1..times.len() {
            acc += v[k] * (times[k] - times[k - 1]);
            out.push(acc);
        }
        out
    };
    let int_u = step(&du);
    let int_u_sq = step(&du_sq);

    let dx0 = dist_2(x1, x2);
    let mut out = PairCheck::default();
    for (k, &t) in times.iter().enumerate() {
        let gap = norm_2(
            &a.states[k]
                .iter()
                .zip(&b.states[k])
                .map(|(p, q)| p - q)
                .collect::<Vec<_>>(),
        );
        // e^{2 Mx (t - s)} peaks at s = 0 for Mx >= 0 and at s = t otherwise
        let tau = if mx >= 0.0 { t } else { 0.0 };
        let rhs = discrepancy_rhs(dx0, int_u_sq[k], mx, mu, t, tau);
        let lhs = gap * gap;
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
            out.quadratic_violations += 1;
        }
        if rhs > 0.0 {
            out.worst_ratio = out.worst_ratio.max(lhs / rhs);
        }
        if let Some(l) = lip_x {
            if gap > discrepancy_rhs_linear(dx0, int_u[k], l, t) * (1.0 + 1e-9) + 1e-12 {
                out.linear_violations += 1;
            }
        }
        out.points += 1;
    }
    out
}
