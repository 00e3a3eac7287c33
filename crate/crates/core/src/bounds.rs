//! Entropy upper-bound formulas and a grid-plus-golden-section optimizer over
//! the construction parameters `(dx, du, Tp)`.
//!
//! All logarithms are base 2, so bounds are in bits per unit time.

use std::fmt;
use std::f64::consts::LN_2;

use crate::{ceil_tol, Error, Result};

/// Problem data shared by every bound formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub mu: f64,
    pub eta: f64,
    /// `G_x` or `M_x`.
    pub gain_x: f64,
    /// `G_u` or `M_u`.
    pub gain_u: f64,
    /// Global Lipschitz constant used by the affine-input form.
    pub lip_x: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("n and m must be >= 1".into()));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.mu >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::InvalidArgument("mu and eta must be >= 0".into()));
        }
        if ![self.gain_x, self.gain_u, self.lip_x, self.mu, self.eta]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidArgument("bound inputs must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundMode {
    Quadratic,
    Affine,
    RhoForm { rho: f64 },
}

impl fmt::Display for BoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundMode::Quadratic => f.write_str("quadratic"),
            BoundMode::Affine => f.write_str("affine"),
            BoundMode::RhoForm { .. } => f.write_str("rho-form"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    pub dx: f64,
    pub du: f64,
    pub tp: f64,
    pub gc: f64,
    /// Bound in bits per unit time; infinite when infeasible.
    pub go: f64,
    pub mode: BoundMode,
    pub feasible: bool,
}

impl BoundResult {
    pub const CSV_HEADER: &'static str = "mode,Tp,dx,du,gc,go,feasible";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{}",
            self.mode, self.tp, self.dx, self.du, self.gc, self.go, self.feasible
        )
    }
}

/// `dx^2 e^{2 Mx Tp}`.
pub fn g_c_x(dx: f64, tp: f64, b: &BoundInputs) -> f64 {
    dx * dx * (2.0 * b.gain_x * tp).exp()
}

/// `Mu^2 e^{2 Mx Tp} (mu^2 Tp^3 / 3 + (du + eta) mu Tp^2 + (du + eta)^2 Tp)`.
pub fn g_c_u(du: f64, tp: f64, b: &BoundInputs) -> f64 {
    let s = du + b.eta;
    b.gain_u * b.gain_u
        * (2.0 * b.gain_x * tp).exp()
        * (b.mu * b.mu * tp.powi(3) / 3.0 + s * b.mu * tp * tp + s * s * tp)
}

pub fn g_c(dx: f64, du: f64, tp: f64, b: &BoundInputs) -> f64 {
    g_c_x(dx, tp, b) + g_c_u(du, tp, b)
}

/// Cells per state axis, `ceil(eps / dx)`.
pub fn state_cells_per_axis(dx: f64, eps: f64) -> f64 {
    ceil_tol(eps / dx).max(1.0)
}

/// Cells per input axis, `ceil((eta + mu Tp) / du + 1)`.
pub fn input_cells_per_axis(du: f64, tp: f64, mu: f64, eta: f64) -> f64 {
    ceil_tol((eta + mu * tp) / du + 1.0).max(1.0)
}

/// `(n log2 ceil(eps/dx) + m log2 ceil((eta + mu Tp)/du + 1)) / Tp`.
pub fn g_o(dx: f64, du: f64, tp: f64, b: &BoundInputs) -> f64 {
    let state = b.n as f64 * state_cells_per_axis(dx, b.eps).log2();
    let input = b.m as f64 * input_cells_per_axis(du, tp, b.mu, b.eta).log2();
    (state + input) / tp
}

/// `dx e^{Lx Tp}`.
pub fn g_c_linear_x(dx: f64, tp: f64, b: &BoundInputs) -> f64 {
    dx * (b.lip_x * tp).exp()
}

/// `(Tp du + Tp (mu Tp / 2 + eta)) e^{Lx Tp}`.
pub fn g_c_linear_u(du: f64, tp: f64, b: &BoundInputs) -> f64 {
    (tp * du + tp * (b.mu * tp / 2.0 + b.eta)) * (b.lip_x * tp).exp()
}

/// Affine-input feasibility value; compared against `eps`, not `eps^2`.
pub fn g_c_linear(dx: f64, du: f64, tp: f64, b: &BoundInputs) -> f64 {
    g_c_linear_x(dx, tp, b) + g_c_linear_u(du, tp, b)
}

fn check_params(du: f64, tp: f64) -> Result<()> {
    if !(du > 0.0) || !(tp > 0.0) || !du.is_finite() || !tp.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "du and Tp must be positive and finite (got du={du}, Tp={tp})"
        )));
    }
    Ok(())
}

/// Evaluates the bound at explicit parameters.
pub fn evaluate(dx: f64, du: f64, tp: f64, b: &BoundInputs, mode: BoundMode) -> Result<BoundResult> {
    b.validate()?;
    check_params(du, tp)?;
    if let BoundMode::RhoForm { rho } = mode {
        return rho_form(rho, du, tp, b);
    }
    if !(dx > 0.0) {
        return Err(Error::InvalidArgument(format!("dx must be > 0, got {dx}")));
    }
    let (gc, threshold) = match mode {
        BoundMode::Quadratic => (g_c(dx, du, tp, b), b.eps * b.eps),
        _ => (g_c_linear(dx, du, tp, b), b.eps),
    };
    let feasible = gc <= threshold;
    Ok(BoundResult {
        dx,
        du,
        tp,
        gc,
        go: if feasible { g_o(dx, du, tp, b) } else { f64::INFINITY },
        mode,
        feasible,
    })
}

/// Bound with `dx = eps e^{-(Mx + rho) Tp}` under the input constraint
/// `g_c_u <= eps^2 (1 - e^{-rho Tp})`: `(Mx + rho) n / ln 2 + log2(P) / Tp`.
pub fn rho_form(rho: f64, du: f64, tp: f64, b: &BoundInputs) -> Result<BoundResult> {
    b.validate()?;
    check_params(du, tp)?;
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
    }
    let dx = b.eps * (-(b.gain_x + rho) * tp).exp();
    let gcu = g_c_u(du, tp, b);
    let feasible = gcu <= b.eps * b.eps * -(-rho * tp).exp_m1();
    let log_p = b.m as f64 * input_cells_per_axis(du, tp, b.mu, b.eta).log2();
    Ok(BoundResult {
        dx,
        du,
        tp,
        gc: g_c_x(dx, tp, b) + gcu,
        go: if feasible {
            (b.gain_x + rho) * b.n as f64 / LN_2 + log_p / tp
        } else {
            f64::INFINITY
        },
        mode: BoundMode::RhoForm { rho },
        feasible,
    })
}

/// Search grids for [`optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    pub tp: Vec<f64>,
    pub du: Vec<f64>,
    pub refinement_passes: usize,
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

impl SearchGrid {
    /// 64 log points of `Tp` in `[1e-6, 10]`, 32 of `du` in
    /// `[eps 1e-3, max(eta + mu, eps) 10]`, two refinement passes.
    pub fn default_for(b: &BoundInputs) -> Self {
        Self {
            tp: log_space(1e-6, 10.0, 64),
            du: log_space(b.eps * 1e-3, (b.eta + b.mu).max(b.eps) * 10.0, 32),
            refinement_passes: 2,
        }
    }
}

/// Largest admissible `dx` at `(du, Tp)`, shaved so the feasibility test
/// passes strictly; `None` when the input term alone exhausts the budget.
pub fn residual_dx(du: f64, tp: f64, b: &BoundInputs, mode: BoundMode) -> Option<f64> {
    let dx = match mode {
        BoundMode::Quadratic => {
            let resid = b.eps * b.eps - g_c_u(du, tp, b);
            if resid <= 0.0 {
                return None;
            }
            resid.sqrt() * (-b.gain_x * tp).exp()
        }
        BoundMode::Affine => {
            let resid = b.eps - g_c_linear_u(du, tp, b);
            if resid <= 0.0 {
                return None;
            }
            resid * (-b.lip_x * tp).exp()
        }
        BoundMode::RhoForm { rho } => b.eps * (-(b.gain_x + rho) * tp).exp(),
    };
    let dx = dx * (1.0 - 1e-12);
    (dx > 0.0 && dx.is_finite()).then_some(dx)
}

fn candidate(du: f64, tp: f64, b: &BoundInputs, mode: BoundMode) -> Option<BoundResult> {
    let dx = residual_dx(du, tp, b, mode)?;
    let r = evaluate(dx, du, tp, b, mode).ok()?;
    r.feasible.then_some(r)
}

fn better(a: Option<BoundResult>, b: Option<BoundResult>) -> Option<BoundResult> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.go < x.go { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn best_over_du(tp: f64, du: &[f64], b: &BoundInputs, mode: BoundMode) -> Option<BoundResult> {
    du.iter()
        .fold(None, |acc, &d| better(acc, candidate(d, tp, b, mode)))
}

/// Evaluates every grid point; infeasible points are kept with `feasible = false`.
pub fn sweep(b: &BoundInputs, mode: BoundMode, search: &SearchGrid) -> Result<Vec<BoundResult>> {
    b.validate()?;
    let mut out = Vec::with_capacity(search.tp.len() * search.du.len());
    for &tp in &search.tp {
        for &du in &search.du {
            out.push(match candidate(du, tp, b, mode) {
                Some(r) => r,
                None => BoundResult {
                    dx: residual_dx(du, tp, b, mode).unwrap_or(0.0),
                    du,
                    tp,
                    gc: match mode {
                        BoundMode::Affine => g_c_linear_u(du, tp, b),
                        _ => g_c_u(du, tp, b),
                    },
                    go: f64::INFINITY,
                    mode,
                    feasible: false,
                },
            });
        }
    }
    Ok(out)
}

/// Minimizes the bound over the search grid, then refines `Tp` by golden
/// section (in `ln Tp`) around the winner. Infeasible everywhere yields a
/// result with `feasible = false`.
pub fn optimize(b: &BoundInputs, mode: BoundMode, search: &SearchGrid) -> Result<BoundResult> {
    b.validate()?;
    if search.tp.is_empty() || search.du.is_empty() {
        return Err(Error::InvalidArgument("search grids must be nonempty".into()));
    }
    if let BoundMode::RhoForm { rho } = mode {
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
        }
    }
    let mut tps = search.tp.clone();
    tps.sort_by(f64::total_cmp);
    let mut best: Option<(usize, BoundResult)> = None;
    for (k, &tp) in tps.iter().enumerate() {
        if let Some(r) = best_over_du(tp, &search.du, b, mode) {
            if best.is_none_or(|(_, x)| r.go < x.go) {
                best = Some((k, r));
            }
        }
    }
    let Some((k, mut winner)) = best else {
        return Ok(BoundResult {
            dx: 0.0,
            du: search.du[0],
            tp: tps[0],
            gc: f64::INFINITY,
            go: f64::INFINITY,
            mode,
            feasible: false,
        });
    };
    let mut lo = tps[k.saturating_sub(1)].ln();
    let mut hi = tps[(k + 1).min(tps.len() - 1)].ln();
    for _ in 0..search.refinement_passes {
        if hi - lo <= 0.0 {
            break;
        }
        let found = golden_section(lo, hi, 48, |s| {
            let r = best_over_du(s.exp(), &search.du, b, mode);
            if let Some(r) = r {
                if r.go < winner.go {
                    winner = r;
                }
            }
            r.map_or(f64::INFINITY, |r| r.go)
        });
        let span = (hi - lo) / 4.0;
        lo = found - span;
        hi = found + span;
    }
    Ok(winner)
}

/// Golden-section search for a minimizer of `f` on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut a: f64, mut b: f64, iters: usize, mut f: F) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn dubin_inputs() -> BoundInputs {
        BoundInputs {
            n: 3,
            m: 1,
            eps: 0.1,
            mu: FRAC_PI_4,
            eta: FRAC_PI_4,
            gain_x: 5.5,
            gain_u: 1.0,
            lip_x: 10.0,
        }
    }

    fn pendulum_inputs() -> BoundInputs {
        BoundInputs {
            n: 2,
            m: 1,
            eps: 0.01,
            mu: 0.1,
            eta: 1.0,
            gain_x: 1.98,
            gain_u: 1.0,
            lip_x: 1.98,
        }
    }

    #[test]
    fn dubin_feasibility_value() {
        let b = dubin_inputs();
        let tp = 1.9e-3;
        let dx = 0.1 / SQRT_2 * (-b.gain_x * tp).exp();
        let gc = g_c(dx, FRAC_PI_4, tp, &b);
        assert!((gc - 0.0098).abs() < 5e-5, "gc = {gc}");
        assert!(gc <= b.eps * b.eps);
        // ceil(sqrt 2 e^{5.5 Tp}) = 2 per axis, ceil(1 + (1 + Tp)) = 3 input cells
        let go = g_o(dx, FRAC_PI_4, tp, &b);
        assert_relative_eq!(go, (3.0 + 3f64.log2()) / tp, max_relative = 1e-12);
        assert!((go - 2413.0).abs() < 1.0);
    }

    #[test]
    fn harrier_feasibility_value() {
        let b = BoundInputs {
            n: 6,
            m: 2,
            eps: 0.5,
            mu: 10.0,
            eta: 20.0,
            gain_x: -0.5,
            gain_u: (0.01f64 + 0.0001).sqrt(),
            lip_x: 0.0,
        };
        let tp = 7.5e-3;
        let dx = 0.5 / SQRT_2 * (-b.gain_x * tp).exp();
        let gc = g_c(dx, 20.0, tp, &b);
        assert!((gc - 0.245).abs() < 0.01, "gc = {gc}");
    }

    #[test]
    fn pendulum_affine_vs_quadratic() {
        let b = pendulum_inputs();
        let tp = 2.5e-3;
        let dx = 0.01 / SQRT_2 * (-b.gain_x * tp).exp();
        let gl = g_c_linear(dx, 0.1, tp, &b);
        assert!((gl - 0.0098).abs() < 5e-5, "gl = {gl}");
        assert!(gl <= b.eps);
        let gq = g_c(dx, 0.1, tp, &b);
        assert!((gq - 0.0031).abs() < 1e-4, "gq = {gq}");
        assert!(gq > b.eps * b.eps);

        let tp = 4e-5;
        let dx = 0.01 / SQRT_2 * (-b.gain_x * tp).exp();
        let gq = g_c(dx, 0.1, tp, &b);
        assert!((gq - 9.84e-5).abs() < 1e-6, "gq = {gq}");
    }

    #[test]
    fn small_period_limits() {
        let b = dubin_inputs();
        assert_relative_eq!(g_c(0.03, 0.2, 1e-14, &b), 0.03 * 0.03, max_relative = 1e-9);
        assert_relative_eq!(g_c_linear(0.03, 0.2, 1e-14, &b), 0.03, max_relative = 1e-9);
    }

    #[test]
    fn zero_bits_when_cells_collapse() {
        let b = BoundInputs {
            mu: 0.0,
            eta: 0.0,
            ..dubin_inputs()
        };
        assert_eq!(g_o(b.eps, 0.3, 0.1, &b), 0.0);
        assert_eq!(g_o(2.0 * b.eps, 0.3, 0.1, &b), 0.0);
        // two cells per state axis, one input cell
        assert_relative_eq!(g_o(b.eps / 2.0, 0.3, 0.25, &b), 3.0 / 0.25);
    }

    #[test]
    fn rho_form_limits() {
        let b = BoundInputs {
            mu: 0.0,
            eta: 0.0,
            ..dubin_inputs()
        };
        let r = rho_form(0.5, 1e-4, 1e-2, &b).unwrap();
        assert!(r.feasible);
        assert_relative_eq!(r.go, 6.0 * 3.0 / LN_2, max_relative = 1e-12);
        assert_relative_eq!(r.dx, 0.1 * (-6.0f64 * 1e-2).exp(), max_relative = 1e-12);

        // with input variation, small rho rules out every grid period
        let b = dubin_inputs();
        let grid = SearchGrid::default_for(&b);
        let tiny = optimize(&b, BoundMode::RhoForm { rho: 1e-9 }, &grid).unwrap();
        assert!(!tiny.feasible);
        assert!(rho_form(0.0, 1.0, 1.0, &b).is_err());
    }

    #[test]
    fn rho_form_dubin_scan_is_infeasible() {
        // 1 - e^{-rho Tp} <= rho Tp while g_c_u >= Gu^2 (du + eta)^2 Tp, so
        // feasibility needs Gu^2 (du + eta)^2 <= eps^2 rho: 2.47 against 0.055
        let b = dubin_inputs();
        let rho = b.gain_x;
        let s = FRAC_PI_4 + b.eta;
        assert!(b.gain_u * b.gain_u * s * s > b.eps * b.eps * rho);
        for tp in log_space(1e-7, 10.0, 400) {
            let r = rho_form(rho, FRAC_PI_4, tp, &b).unwrap();
            assert!(!r.feasible);
            assert!(r.go.is_infinite());
        }
        // a rate large enough to pass the necessary condition admits periods
        let rho = 300.0;
        let ok = log_space(1e-7, 1.0, 400)
            .into_iter()
            .map(|tp| rho_form(rho, FRAC_PI_4, tp, &b).unwrap())
            .filter(|r| r.feasible)
            .count();
        assert!(ok > 0);
    }

    #[test]
    fn optimize_closed_system() {
        for gain_x in [0.5, 1.0, 3.0] {
            let b = BoundInputs {
                n: 2,
                m: 1,
                eps: 0.1,
                mu: 0.0,
                eta: 0.0,
                gain_x,
                gain_u: 1.0,
                lip_x: 0.0,
            };
            let r = optimize(&b, BoundMode::Quadratic, &SearchGrid::default_for(&b)).unwrap();
            assert!(r.feasible);
            let limit = b.n as f64 * gain_x / LN_2;
            assert!(r.go >= limit * 0.999 && r.go <= 1.1 * limit, "go={} limit={limit}", r.go);
        }
    }

    #[test]
    fn optimize_result_is_feasible_and_doubling_eps_helps() {
        let b = dubin_inputs();
        let r = optimize(&b, BoundMode::Quadratic, &SearchGrid::default_for(&b)).unwrap();
        assert!(r.feasible && r.gc <= b.eps * b.eps);
        assert_eq!(r.go, g_o(r.dx, r.du, r.tp, &b));
        let b2 = BoundInputs { eps: 0.2, ..b };
        let r2 = optimize(&b2, BoundMode::Quadratic, &SearchGrid::default_for(&b)).unwrap();
        assert!(r2.go <= r.go);
    }

    #[test]
    fn integrator_lab_bound_is_finite() {
        let b = BoundInputs {
            n: 1,
            m: 1,
            eps: 0.1,
            mu: 0.0,
            eta: 1.0,
            gain_x: 0.5,
            gain_u: 1.0,
            lip_x: 0.0,
        };
        let r = optimize(&b, BoundMode::Quadratic, &SearchGrid::default_for(&b)).unwrap();
        assert!(r.feasible && r.go.is_finite());
    }

    #[test]
    fn affine_accepts_what_quadratic_rejects() {
        let b = pendulum_inputs();
        let grid = SearchGrid::default_for(&b);
        for p in sweep(&b, BoundMode::Quadratic, &grid).unwrap() {
            let dx = p.dx;
            if dx <= 0.0 {
                continue;
            }
            let q = g_c(dx, p.du, p.tp, &b) <= b.eps * b.eps;
            let a = g_c_linear(dx, p.du, p.tp, &b) <= b.eps;
            assert!(!q || a, "quadratic accepted a point the affine form rejects");
        }
        let tp = 2.5e-3;
        let dx = 0.01 / SQRT_2 * (-b.gain_x * tp).exp();
        assert!(g_c_linear(dx, 0.1, tp, &b) <= b.eps && g_c(dx, 0.1, tp, &b) > b.eps * b.eps);
    }

    #[test]
    fn infeasible_search_reports_infeasible() {
        let b = BoundInputs {
            eta: 1e6,
            ..dubin_inputs()
        };
        let grid = SearchGrid {
            tp: vec![1.0],
            du: vec![1.0],
            refinement_passes: 2,
        };
        let r = optimize(&b, BoundMode::Quadratic, &grid).unwrap();
        assert!(!r.feasible && r.go.is_infinite());
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(-3.0, 5.0, 80, |x| (x - 1.25) * (x - 1.25));
        assert!((x - 1.25).abs() < 1e-8);
    }

    #[test]
    fn csv_row_shape() {
        let b = dubin_inputs();
        let r = evaluate(0.05, 0.5, 1e-3, &b, BoundMode::Quadratic).unwrap();
        assert_eq!(r.csv_row().split(',').count(), 7);
        assert!(r.csv_row().starts_with("quadratic,1.00000000e-3,"));
    }

    proptest! {
        #[test]
        fn g_c_strictly_increasing(dx in 1e-4f64..1.0, du in 1e-4f64..1.0, tp in 1e-5f64..1.0, f in 1.01f64..2.0) {
            let b = dubin_inputs();
            let base = g_c(dx, du, tp, &b);
            prop_assert!(g_c(dx * f, du, tp, &b) > base);
            prop_assert!(g_c(dx, du * f, tp, &b) > base);
            prop_assert!(g_c(dx, du, tp * f, &b) > base);
        }

        #[test]
        fn residual_dx_exhausts_budget(du in 1e-4f64..1.0, tp in 1e-6f64..1e-2) {
            let b = dubin_inputs();
            if let Some(dx) = residual_dx(du, tp, &b, BoundMode::Quadratic) {
                let gc = g_c(dx, du, tp, &b);
                prop_assert!(gc <= b.eps * b.eps);
                prop_assert!(gc >= b.eps * b.eps * (1.0 - 1e-9));
            }
        }
    }
}
