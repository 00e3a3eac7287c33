//! Sampled, quantized construction of approximating functions, run as an
//! encoder/decoder pair.
//!
//! Every `Tp` the encoder quantizes the sampled state and input against grids
//! both sides can rebuild, transmits the two symbol indices, and both sides
//! simulate the segment `z_i` from the quantized pair under a constant input.
//! The next state grid covers the `eps`-ball around `z_{i-1}(Tp-)` and the next
//! input grid covers the ball of radius `eta + mu Tp + du` around the previous
//! input center.

use std::fmt::Write as _;

use crate::bounds::{self, BoundInputs, BoundMode};
use crate::dynamics::{check_horizon, rk4_on_grid, time_grid, System};
use crate::quantization::{Grid, Hyperbox};
use crate::signals::{Signal, VariationBudget};
use crate::{dist_inf, floor_tol, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    pub t_end: f64,
    pub tp: f64,
    pub dx: f64,
    pub du: f64,
    pub eps: f64,
    /// Decay rate of the exponential variant; 0 for the plain construction.
    pub rho: f64,
    /// Integration step; `min(Tp / 20, 1e-3)` when unset.
    pub dt: Option<f64>,
    /// Whether the parameters satisfy the feasibility constraint they were
    /// assessed against.
    pub feasible: bool,
}

impl EstimatorParams {
    pub fn new(t_end: f64, tp: f64, dx: f64, du: f64, eps: f64) -> Result<Self> {
        for (name, v) in [("T", t_end), ("Tp", tp), ("dx", dx), ("du", du), ("eps", eps)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self {
            t_end,
            tp,
            dx,
            du,
            eps,
            rho: 0.0,
            dt: None,
            feasible: false,
        })
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho}")));
        }
        self.rho = rho;
        Ok(self)
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        self.dt = Some(dt);
        Ok(self)
    }

    /// Records `g_c <= eps^2` (quadratic) or `g_c^l <= eps` (affine).
    pub fn assess(mut self, b: &BoundInputs, mode: BoundMode) -> Self {
        self.feasible = match mode {
            BoundMode::Affine => bounds::g_c_linear(self.dx, self.du, self.tp, b) <= b.eps,
            _ => bounds::g_c(self.dx, self.du, self.tp, b) <= b.eps * b.eps,
        };
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or((self.tp / 20.0).min(1e-3))
    }

    /// Number of iterations, `floor(T / Tp) + 1`.
    pub fn steps(&self) -> usize {
        floor_tol(self.t_end / self.tp) as usize + 1
    }
}

/// Simulated piece `z_i` on local time `[0, Tp]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSegment {
    pub index: usize,
    pub start: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl ZSegment {
    /// `z_i(Tp-)`.
    pub fn end_state(&self) -> &[f64] {
        self.states.last().expect("nonempty segment")
    }
}

/// What one iteration saw, chose and sent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub i: usize,
    pub x_sample: Vec<f64>,
    pub u_sample: Vec<f64>,
    pub qx: Vec<f64>,
    pub qu: Vec<f64>,
    pub state_symbol: u64,
    pub input_symbol: u64,
    pub state_alphabet: u64,
    pub input_alphabet: u64,
    pub sx: Hyperbox,
    pub su: Hyperbox,
}

/// Output of [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximatingFunction {
    pub steps: Vec<StepRecord>,
    pub segments: Vec<ZSegment>,
    /// `max |z(t) - xi(t)|_inf` over the grid points in `[0, T]`.
    pub realized_sup_error: f64,
    /// `max |z(t) - xi(t)|_inf e^{rho t}`; equals the plain error when `rho = 0`.
    pub realized_weighted_error: f64,
    pub tp: f64,
    pub dt: f64,
    pub feasible: bool,
}

impl ApproximatingFunction {
    /// `z(t)` with linear interpolation inside a segment.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        eval_segments(&self.segments, self.tp, t)
    }

    pub fn symbols(&self) -> Vec<(u64, u64)> {
        self.steps
            .iter()
            .map(|s| (s.state_symbol, s.input_symbol))
            .collect()
    }

    /// Mean of `log2(|C_x,i| |C_u,i|) / Tp` over iterations `i >= 1`.
    pub fn empirical_bit_rate(&self) -> f64 {
        let later = &self.steps[1.min(self.steps.len())..];
        if later.is_empty() {
            return 0.0;
        }
        let bits: f64 = later
            .iter()
            .map(|s| (s.state_alphabet as f64).log2() + (s.input_alphabet as f64).log2())
            .sum();
        bits / later.len() as f64 / self.tp
    }
}

/// `z(t)` from a list of segments of length `tp`.
pub fn eval_segments(segments: &[ZSegment], tp: f64, t: f64) -> Vec<f64> {
    let k = ((t / tp).floor().max(0.0) as usize).min(segments.len() - 1);
    let seg = &segments[k];
    let s = (t - seg.start).clamp(0.0, *seg.times.last().expect("nonempty"));
    let pos = seg.times.partition_point(|&x| x <= s);
    if pos == 0 {
        return seg.states[0].clone();
    }
    if pos >= seg.times.len() {
        return seg.end_state().to_vec();
    }
    let (t0, t1) = (seg.times[pos - 1], seg.times[pos]);
    let w = (s - t0) / (t1 - t0);
    seg.states[pos - 1]
        .iter()
        .zip(&seg.states[pos])
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

struct StepGrids {
    sx: Hyperbox,
    su: Hyperbox,
    cx: Grid,
    cu: Grid,
}

fn alphabet(g: &Grid) -> Result<u64> {
    g.len()
        .ok_or_else(|| Error::InvalidArgument("grid alphabet overflows u64".into()))
}

/// Sets and grids of iteration `i`, rebuilt identically by both sides.
fn step_grids(
    i: usize,
    prev: Option<(&ZSegment, &[f64])>,
    k_box: &Hyperbox,
    budget: &VariationBudget,
    p: &EstimatorParams,
) -> Result<StepGrids> {
    let decay = (-(i as f64) * p.rho * p.tp).exp();
    let (sx, su) = match prev {
        None => (k_box.clone(), budget.u0_box.clone()),
        Some((seg, qu_prev)) => (
            Hyperbox::ball(seg.end_state(), p.eps * decay)?,
            Hyperbox::ball(qu_prev, budget.eta + budget.mu * p.tp + p.du)?,
        ),
    };
    let cx = Grid::new(sx.clone(), p.dx * decay)?;
    let cu = Grid::new(su.clone(), p.du)?;
    Ok(StepGrids { sx, su, cx, cu })
}

fn simulate_segment(
    sys: &System,
    i: usize,
    qx: &[f64],
    qu: &[f64],
    p: &EstimatorParams,
    local: &[f64],
) -> Result<ZSegment> {
    let states = rk4_on_grid(qx, local, |_, _, x, out| sys.field_into(x, qu, out))?;
    Ok(ZSegment {
        index: i,
        start: i as f64 * p.tp,
        times: local.to_vec(),
        states,
    })
}

fn containment(step: usize, which: &'static str, set: &Hyperbox, v: &[f64]) -> Result<()> {
    let radius = 0.5 * set.diameter();
    let excess = set.excess(v);
    if excess > 1e-12 * (1.0 + radius) {
        let center = set.center();
        return Err(Error::Containment {
            step,
            which,
            distance: dist_inf(v, &center),
            radius,
        });
    }
    Ok(())
}

fn check_setup(sys: &System, k_box: &Hyperbox, u: Option<&Signal>, budget: &VariationBudget) -> Result<()> {
    if k_box.dim() != sys.n() {
        return Err(Error::DimensionMismatch {
            what: "initial-state box",
            expected: sys.n(),
            got: k_box.dim(),
        });
    }
    if budget.dim() != sys.m() {
        return Err(Error::DimensionMismatch {
            what: "initial-input box",
            expected: sys.m(),
            got: budget.dim(),
        });
    }
    if let Some(u) = u {
        if u.dim() != sys.m() {
            return Err(Error::DimensionMismatch {
                what: "signal",
                expected: sys.m(),
                got: u.dim(),
            });
        }
    }
    Ok(())
}

/// Runs the construction for the trajectory from `x0` under `u`, with
/// `K = k_box` and `U = budget.u0_box`.
pub fn encode(
    sys: &System,
    x0: &[f64],
    u: &Signal,
    budget: &VariationBudget,
    k_box: &Hyperbox,
    p: &EstimatorParams,
) -> Result<ApproximatingFunction> {
    check_setup(sys, k_box, Some(u), budget)?;
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: sys.n(),
            got: x0.len(),
        });
    }
    let dt = p.dt();
    check_horizon(p.t_end, dt)?;
    let local = time_grid(p.tp, dt, &[]);
    let steps = p.steps();

    let mut grid = Vec::with_capacity(steps * local.len());
    for i in 0..steps {
        let s0 = i as f64 * p.tp;
        grid.extend(local.iter().map(|s| s0 + s).filter(|&t| t <= p.t_end));
    }
    grid.push(p.t_end);
    grid.extend(u.breakpoints().into_iter().filter(|&b| b > 0.0 && b < p.t_end));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let xi = sys.integrate_on(x0, u, grid, dt)?;
    let xi_at = |t: f64| -> &[f64] {
        let k = xi.times.partition_point(|&s| s < t);
        &xi.states[k]
    };

    let mut records: Vec<StepRecord> = Vec::with_capacity(steps);
    let mut segments: Vec<ZSegment> = Vec::with_capacity(steps);
    let mut sup = 0.0f64;
    let mut weighted = 0.0f64;
    for i in 0..steps {
        let t_i = i as f64 * p.tp;
        let prev = segments.last().zip(records.last().map(|r| r.qu.as_slice()));
        let g = step_grids(i, prev, k_box, budget, p)?;
        let x_i = xi_at(t_i).to_vec();
        let u_i = u.eval(t_i);
        containment(i, "state", &g.sx, &x_i)?;
        containment(i, "input", &g.su, &u_i)?;
        let qx = g.cx.quantize(&x_i)?;
        let qu = g.cu.quantize(&u_i)?;
        let seg = simulate_segment(sys, i, &qx.center, &qu.center, p, &local)?;
        for (s, z) in seg.times.iter().zip(&seg.states) {
            let t = seg.start + s;
            if t > p.t_end {
                break;
            }
            let err = dist_inf(z, xi_at(t));
            sup = sup.max(err);
            weighted = weighted.max(err * (p.rho * t).exp());
        }
        records.push(StepRecord {
            i,
            state_symbol: g.cx.encode_index(&qx.index)?,
            input_symbol: g.cu.encode_index(&qu.index)?,
            state_alphabet: alphabet(&g.cx)?,
            input_alphabet: alphabet(&g.cu)?,
            x_sample: x_i,
            u_sample: u_i,
            qx: qx.center,
            qu: qu.center,
            sx: g.sx,
            su: g.su,
        });
        segments.push(seg);
    }
    Ok(ApproximatingFunction {
        steps: records,
        segments,
        realized_sup_error: sup,
        realized_weighted_error: weighted,
        tp: p.tp,
        dt,
        feasible: p.feasible,
    })
}

/// Exponential-decay variant: state balls and grid sizes shrink by
/// `e^{-rho Tp}` per iteration. Requires a constant input (`mu = eta = 0`).
pub fn encode_exp(
    sys: &System,
    x0: &[f64],
    u: &Signal,
    budget: &VariationBudget,
    k_box: &Hyperbox,
    p: &EstimatorParams,
) -> Result<ApproximatingFunction> {
    if budget.mu != 0.0 || budget.eta != 0.0 {
        return Err(Error::InvalidArgument(
            "the exponential variant needs a constant input (mu = eta = 0)".into(),
        ));
    }
    if u.pieces().len() != 1 || !matches!(u.pieces()[0].kind, crate::signals::PieceKind::Constant(_)) {
        return Err(Error::InvalidArgument(
            "the exponential variant needs a constant input signal".into(),
        ));
    }
    encode(sys, x0, u, budget, k_box, p)
}

/// `(1/Tp)(n log2 ceil(eps/dx) + m log2 ceil((eta + mu Tp)/du + 1))`, the
/// per-step alphabet size in bits per unit time.
pub fn bit_rate(p: &EstimatorParams, n: usize, m: usize, budget: &VariationBudget) -> f64 {
    let b = BoundInputs {
        n,
        m,
        eps: p.eps,
        mu: budget.mu,
        eta: budget.eta,
        gain_x: 0.0,
        gain_u: 0.0,
        lip_x: 0.0,
    };
    bounds::g_o(p.dx, p.du, p.tp, &b)
}

/// Transmitted symbols with the header needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub n: usize,
    pub m: usize,
    pub tp: f64,
    pub dx: f64,
    pub du: f64,
    pub eps: f64,
    pub mu: f64,
    pub eta: f64,
    pub symbols: Vec<(u64, u64)>,
}

impl SymbolStream {
    pub fn from_encoding(
        af: &ApproximatingFunction,
        sys: &System,
        budget: &VariationBudget,
        p: &EstimatorParams,
    ) -> Self {
        Self {
            n: sys.n(),
            m: sys.m(),
            tp: p.tp,
            dx: p.dx,
            du: p.du,
            eps: p.eps,
            mu: budget.mu,
            eta: budget.eta,
            symbols: af.symbols(),
        }
    }

    /// Header `n m Tp dx du eps mu eta`, then `i state_index input_index` per
    /// step.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {:?} {:?} {:?} {:?} {:?} {:?}\n",
            self.n, self.m, self.tp, self.dx, self.du, self.eps, self.mu, self.eta
        );
        for (i, (a, b)) in self.symbols.iter().enumerate() {
            let _ = writeln!(s, "{i} {a} {b}");
        }
        s
    }

    /// Parses [`SymbolStream::to_text`] output. An unterminated last line is
    /// treated as cut off in transit and dropped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines: Vec<&str> = text.split('\n').collect();
        // the piece after the final newline is either empty or incomplete
        lines.pop();
        let mut it = lines.into_iter();
        let header = it
            .next()
            .ok_or_else(|| Error::CorruptStream("missing header line".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 8 {
            return Err(Error::CorruptStream(format!(
                "header needs 8 fields `n m Tp dx du eps mu eta`, got {}",
                h.len()
            )));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::CorruptStream(format!("bad integer {s:?}")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::CorruptStream(format!("bad number {s:?}")))
        };
        let mut out = Self {
            n: int(h[0])?,
            m: int(h[1])?,
            tp: real(h[2])?,
            dx: real(h[3])?,
            du: real(h[4])?,
            eps: real(h[5])?,
            mu: real(h[6])?,
            eta: real(h[7])?,
            symbols: Vec::new(),
        };
        for line in it {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 3 {
                return Err(Error::CorruptStream(format!("malformed step line {line:?}")));
            }
            let sym = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::CorruptStream(format!("bad symbol {s:?}")))
            };
            let i = int(f[0])?;
            if i != out.symbols.len() {
                return Err(Error::CorruptStream(format!(
                    "expected step {}, found {i}",
                    out.symbols.len()
                )));
            }
            out.symbols.push((sym(f[1])?, sym(f[2])?));
        }
        Ok(out)
    }
}

/// Rebuilds `z` from symbols alone.
pub fn decode(
    stream: &SymbolStream,
    k_box: &Hyperbox,
    budget: &VariationBudget,
    p: &EstimatorParams,
    sys: &System,
) -> Result<Vec<ZSegment>> {
    check_setup(sys, k_box, None, budget)?;
    if stream.n != sys.n() || stream.m != sys.m() {
        return Err(Error::CorruptStream(format!(
            "stream is for n={}, m={} but the system has n={}, m={}",
            stream.n,
            stream.m,
            sys.n(),
            sys.m()
        )));
    }
    let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
    if !(same(stream.tp, p.tp)
        && same(stream.dx, p.dx)
        && same(stream.du, p.du)
        && same(stream.eps, p.eps)
        && same(stream.mu, budget.mu)
        && same(stream.eta, budget.eta))
    {
        return Err(Error::CorruptStream(
            "stream header does not match the decoder parameters".into(),
        ));
    }
    let local = time_grid(p.tp, p.dt(), &[]);
    let mut segments: Vec<ZSegment> = Vec::with_capacity(stream.symbols.len());
    let mut qu_prev: Vec<f64> = Vec::new();
    for (i, &(sx, su)) in stream.symbols.iter().enumerate() {
        let prev = segments.last().map(|s| (s, qu_prev.as_slice()));
        let g = step_grids(i, prev, k_box, budget, p)?;
        let qx = g.cx.center(&g.cx.decode_index(sx)?);
        let qu = g.cu.center(&g.cu.decode_index(su)?);
        segments.push(simulate_segment(sys, i, &qx, &qu, p, &local)?);
        qu_prev = qu;
    }
    Ok(segments)
}
