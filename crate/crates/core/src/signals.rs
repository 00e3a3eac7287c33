//! Slowly-varying input signals and the switching-time sequences used to build
//! separated families.

use std::fmt::Write as _;

use rand::Rng;

use crate::quantization::Hyperbox;
use crate::{norm_inf, Error, Result};

/// Variation budget of the signal class `U(mu, eta)`: every signal satisfies
/// `|u(t + tau) - u(t)|_inf <= mu * tau + eta` and starts in `u0_box`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationBudget {
    pub mu: f64,
    pub eta: f64,
    pub u0_box: Hyperbox,
}

impl VariationBudget {
    pub fn new(mu: f64, eta: f64, u0_box: Hyperbox) -> Result<Self> {
        if !(mu >= 0.0) || !(eta >= 0.0) || !mu.is_finite() || !eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "variation budget needs finite mu, eta >= 0 (got mu={mu}, eta={eta})"
            )));
        }
        Ok(Self { mu, eta, u0_box })
    }

    pub fn dim(&self) -> usize {
        self.u0_box.dim()
    }
}

/// Shape of one signal piece.
#[derive(Debug, Clone, PartialEq)]
pub enum PieceKind {
    Constant(Vec<f64>),
    /// `value + slope * (t - start)`.
    Ramp { value: Vec<f64>, slope: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub kind: PieceKind,
}

impl Piece {
    fn dim(&self) -> usize {
        match &self.kind {
            PieceKind::Constant(v) => v.len(),
            PieceKind::Ramp { value, .. } => value.len(),
        }
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) {
        match &self.kind {
            PieceKind::Constant(v) => out.copy_from_slice(v),
            PieceKind::Ramp { value, slope } => {
                let dt = t - self.start;
                for ((o, v), s) in out.iter_mut().zip(value).zip(slope) {
                    *o = v + s * dt;
                }
            }
        }
    }
}

/// Right-continuous piecewise input on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    m: usize,
    pieces: Vec<Piece>,
    horizon: f64,
}

impl Signal {
    pub fn new(pieces: Vec<Piece>, horizon: f64) -> Result<Self> {
        let first = pieces
            .first()
            .ok_or_else(|| Error::InvalidArgument("signal needs at least one piece".into()))?;
        if first.start != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "first piece must start at 0, got {}",
                first.start
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "signal horizon must be positive, got {horizon}"
            )));
        }
        let m = first.dim();
        if m == 0 {
            return Err(Error::InvalidArgument("signal dimension must be >= 1".into()));
        }
        for (k, p) in pieces.iter().enumerate() {
            if p.dim() != m {
                return Err(Error::DimensionMismatch {
                    what: "signal piece",
                    expected: m,
                    got: p.dim(),
                });
            }
            if let PieceKind::Ramp { value, slope } = &p.kind {
                if slope.len() != value.len() {
                    return Err(Error::DimensionMismatch {
                        what: "ramp slope",
                        expected: value.len(),
                        got: slope.len(),
                    });
                }
            }
            let finite = match &p.kind {
                PieceKind::Constant(v) => v.iter().all(|x| x.is_finite()),
                PieceKind::Ramp { value, slope } => {
                    value.iter().chain(slope).all(|x| x.is_finite())
                }
            };
            if !finite || !p.start.is_finite() {
                return Err(Error::NonFinite {
                    context: "signal piece",
                    coordinate: k,
                });
            }
            if k > 0 && !(p.start > pieces[k - 1].start) {
                return Err(Error::InvalidArgument(format!(
                    "piece start times must increase strictly (piece {k} at {})",
                    p.start
                )));
            }
        }
        Ok(Self {
            m,
            pieces,
            horizon,
        })
    }

    pub fn constant(value: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::new(
            vec![Piece {
                start: 0.0,
                kind: PieceKind::Constant(value),
            }],
            horizon,
        )
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Piece active at `t` under right-continuity.
    pub fn piece_index(&self, t: f64) -> usize {
        self.pieces.partition_point(|p| p.start <= t).saturating_sub(1)
    }

    /// Evaluates piece `k`'s formula at `t`, even outside its interval.
    pub fn value_in_piece(&self, k: usize, t: f64, out: &mut [f64]) {
        self.pieces[k].eval_into(t, out);
    }

    /// `u(t)`, right-continuous at breakpoints.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.value_in_piece(self.piece_index(t), t, &mut out);
        out
    }

    /// `u(t-)`; equals `u(0)` at `t = 0`.
    pub fn left_limit(&self, t: f64) -> Vec<f64> {
        let k = self.pieces.partition_point(|p| p.start < t).saturating_sub(1);
        let mut out = vec![0.0; self.m];
        self.value_in_piece(k, t, &mut out);
        out
    }

    /// Start times of every piece after the first.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.start).collect()
    }

    /// Serializes to the line format read by [`Signal::parse`].
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = format!("horizon {:?}\n", self.horizon);
        for p in &self.pieces {
            match &p.kind {
                PieceKind::Constant(v) => {
                    let _ = writeln!(s, "{:?} const {}", p.start, join(v));
                }
                PieceKind::Ramp { value, slope } => {
                    let _ = writeln!(s, "{:?} ramp {} {}", p.start, join(value), join(slope));
                }
            }
        }
        s
    }

    /// Parses `horizon T` plus one `t_start const v1,..` or
    /// `t_start ramp v1,.. s1,..` line per piece. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut horizon = None;
        let mut pieces = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| err(format!("not a number: {s:?}")))
            };
            let vec = |s: &str| s.split(',').map(num).collect::<Result<Vec<f64>>>();
            if fields[0] == "horizon" {
                if fields.len() != 2 {
                    return Err(err("expected `horizon T`".into()));
                }
                horizon = Some(num(fields[1])?);
                continue;
            }
            let start = num(fields[0])?;
            let kind = match (fields.get(1).copied(), fields.len()) {
                (Some("const"), 3) => PieceKind::Constant(vec(fields[2])?),
                (Some("ramp"), 4) => PieceKind::Ramp {
                    value: vec(fields[2])?,
                    slope: vec(fields[3])?,
                },
                _ => return Err(err(format!("unrecognized piece: {line:?}"))),
            };
            pieces.push(Piece { start, kind });
        }
        let horizon = horizon.ok_or(Error::Parse {
            line: 0,
            message: "missing `horizon` line".into(),
        })?;
        Self::new(pieces, horizon)
    }
}

/// Outcome of [`check_variation`].
#[derive(Debug, Clone, PartialEq)]
pub struct VariationReport {
    pub ok: bool,
    pub initial_in_box: bool,
    /// First pair `(t, t + tau)` found with excessive variation.
    pub violation: Option<(f64, f64)>,
}

/// Sampled membership check for `U(mu, eta)`.
///
/// Compares every pair drawn from a uniform grid of `n_samples` points plus
/// both one-sided values at every breakpoint.
pub fn check_variation(
    u: &Signal,
    b: &VariationBudget,
    n_samples: usize,
    tol: f64,
) -> Result<VariationReport> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument("check_variation needs n_samples >= 2".into()));
    }
    if u.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "signal vs budget",
            expected: b.dim(),
            got: u.dim(),
        });
    }
    let mut samples: Vec<(f64, Vec<f64>)> = (0..n_samples)
        .map(|k| {
            let t = u.horizon() * k as f64 / (n_samples - 1) as f64;
            (t, u.eval(t))
        })
        .collect();
    for t in u.breakpoints() {
        samples.push((t, u.left_limit(t)));
        samples.push((t, u.eval(t)));
    }
    // stable sort keeps a left limit ahead of the right value at the same time
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));

    let initial_in_box = b.u0_box.contains(&u.eval(0.0), tol);
    let mut diff = vec![0.0; u.dim()];
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (t1, u1) = &samples[i];
            let (t2, u2) = &samples[j];
            for (d, (x, y)) in diff.iter_mut().zip(u2.iter().zip(u1)) {
                *d = x - y;
            }
            if norm_inf(&diff) > b.mu * (t2 - t1) + b.eta + tol {
                return Ok(VariationReport {
                    ok: false,
                    initial_in_box,
                    violation: Some((*t1, *t2)),
                });
            }
        }
    }
    Ok(VariationReport {
        ok: initial_in_box,
        initial_in_box,
        violation: None,
    })
}

/// Strictly increasing instants `0 = t_0 < t_1 < ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSequence {
    instants: Vec<f64>,
}

impl TimeSequence {
    pub fn new(instants: Vec<f64>) -> Result<Self> {
        if instants.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("time sequence must start at 0".into()));
        }
        if instants.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time sequence must increase strictly".into()));
        }
        Ok(Self { instants })
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.instants.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn gap_count(&self) -> usize {
        self.instants.len() - 1
    }

    pub fn end(&self) -> f64 {
        *self.instants.last().expect("nonempty")
    }
}

/// Scalar signal taking `a` on gap `i` when `se[i] == 'a'` and `b` otherwise.
/// The signal's horizon is the last instant.
pub fn make_piecewise_constant(tseq: &TimeSequence, se: &str, a: f64, b: f64) -> Result<Signal> {
    if se.chars().count() != tseq.gap_count() {
        return Err(Error::DimensionMismatch {
            what: "switching string",
            expected: tseq.gap_count(),
            got: se.chars().count(),
        });
    }
    if !(a > b) {
        return Err(Error::InvalidArgument(format!("need a > b, got a={a}, b={b}")));
    }
    if tseq.gap_count() == 0 {
        return Err(Error::InvalidArgument("time sequence has no gaps".into()));
    }
    let mut pieces: Vec<Piece> = Vec::new();
    for (c, &t) in se.chars().zip(tseq.instants()) {
        let v = match c {
            'a' => a,
            'b' => b,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "switching string must be over {{a,b}}, found {c:?}"
                )))
            }
        };
        // merge equal neighbours so breakpoints are true discontinuities
        if let Some(PieceKind::Constant(prev)) = pieces.last().map(|p| &p.kind) {
            if prev[0] == v {
                continue;
            }
        }
        pieces.push(Piece {
            start: t,
            kind: PieceKind::Constant(vec![v]),
        });
    }
    Signal::new(pieces, tseq.end())
}

fn check_family_args(eps: f64, a: f64, b: f64, t: f64) -> Result<()> {
    if !(eps > 0.0) || !(a > b) || !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need eps > 0, a > b, T > 0 (got eps={eps}, a={a}, b={b}, T={t})"
        )));
    }
    Ok(())
}

/// Evenly spaced instants `k * tau`, `tau = 3 eps / (a - b)`. When `tau > T`
/// the result is the single interval `{0, T}`.
pub fn tseq_uniform(t_end: f64, eps: f64, a: f64, b: f64, max_switches: usize) -> Result<TimeSequence> {
    check_family_args(eps, a, b, t_end)?;
    let tau = 3.0 * eps / (a - b);
    if tau > t_end {
        return TimeSequence::new(vec![0.0, t_end]);
    }
    // 3 * 0.1 / 1 * 10 lands a hair above 3.0
    let k = ((t_end / tau) * (1.0 + 1e-12)).floor() as usize;
    let k = k.min(max_switches);
    TimeSequence::new((0..=k).map(|i| (i as f64 * tau).min(t_end)).collect())
}

fn geometric_decay(t_end: f64, v1: f64, rate: f64, max_switches: usize) -> Vec<f64> {
    let mut instants = vec![0.0];
    let mut t = 0.0;
    let mut v = v1;
    while instants.len() <= max_switches {
        let next = t + v;
        if next > t_end * (1.0 + 1e-12) || next <= t {
            break;
        }
        instants.push(next.min(t_end));
        t = next;
        v *= (-rate * v).exp();
    }
    instants
}

/// Gaps `v_1 = 2 eps / (a - b)`, `v_{i+1} = v_i exp(-alpha v_i)`, truncated at
/// `T` or `max_switches`.
pub fn tseq_alpha(
    t_end: f64,
    eps: f64,
    alpha: f64,
    a: f64,
    b: f64,
    max_switches: usize,
) -> Result<TimeSequence> {
    check_family_args(eps, a, b, t_end)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    TimeSequence::new(geometric_decay(t_end, 2.0 * eps / (a - b), alpha, max_switches))
}

/// Guaranteed gap count `floor((a - b - alpha eps) / (2 alpha eps) (e^{alpha T} - 1))`,
/// clamped at 0.
pub fn tseq_alpha_lower_bound(t_end: f64, eps: f64, alpha: f64, a: f64, b: f64) -> u64 {
    let q = (a - b - alpha * eps) / (2.0 * alpha * eps) * (alpha * t_end).exp_m1();
    if q > 0.0 {
        q.floor() as u64
    } else {
        0
    }
}

/// Upper bound on `t_i = v_1 + ... + v_i` for the `tseq_alpha` recurrence.
pub fn tseq_alpha_time_bound(i: usize, eps: f64, alpha: f64, a: f64, b: f64) -> f64 {
    (2.0 * alpha * eps * i as f64 / (a - b - alpha * eps)).ln_1p() / alpha
}

/// Gaps `v_1 = 2 eps / (|x0| (a - b))`, `v_{i+1} = v_i exp(-b v_i)`. With
/// `td`, only instants inside `[j td, (j+1) td]` for odd `j` are kept.
pub fn tseq_infd(
    t_end: f64,
    eps: f64,
    b_rate: f64,
    x0: f64,
    a: f64,
    td: Option<f64>,
    max_switches: usize,
) -> Result<TimeSequence> {
    if x0 == 0.0 || !x0.is_finite() {
        return Err(Error::InvalidArgument("initial state must be nonzero".into()));
    }
    check_family_args(eps, a, b_rate, t_end)?;
    if !(b_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("b must be > 0, got {b_rate}")));
    }
    let v1 = 2.0 * eps / (x0.abs() * (a - b_rate));
    let all = geometric_decay(t_end, v1, b_rate, max_switches);
    let Some(td) = td else {
        return TimeSequence::new(all);
    };
    if !(td > 0.0) {
        return Err(Error::InvalidArgument(format!("dwell time must be > 0, got {td}")));
    }
    let intervals = (t_end / td * (1.0 + 1e-12)).floor() as u64;
    let mut kept = vec![0.0];
    kept.extend(all.into_iter().skip(1).filter(|&t| {
        (1..intervals)
            .step_by(2)
            .any(|j| t >= j as f64 * td && t <= (j + 1) as f64 * td)
    }));
    TimeSequence::new(kept)
}

/// Random member of `U(mu, eta)` on `[0, horizon]` built from `pieces`
/// ramps. Values stay in a width-`eta` band around `u(0)` plus a common drift
/// of slope at most `mu`, so every pair obeys the variation budget.
pub fn random_slowly_varying<R: Rng + ?Sized>(
    rng: &mut R,
    budget: &VariationBudget,
    horizon: f64,
    pieces: usize,
) -> Result<Signal> {
    if pieces == 0 {
        return Err(Error::InvalidArgument("need at least one piece".into()));
    }
    let m = budget.dim();
    let u0: Vec<f64> = (0..m)
        .map(|i| {
            let (lo, hi) = (budget.u0_box.lo()[i], budget.u0_box.hi()[i]);
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect();
    let drift: Vec<f64> = (0..m)
        .map(|_| {
            if budget.mu > 0.0 {
                rng.gen_range(-budget.mu..=budget.mu)
            } else {
                0.0
            }
        })
        .collect();
    // band [u0 - s*eta, u0 + (1-s)*eta] contains u0 and has width eta
    let shift: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let dt = horizon / pieces as f64;
    let mut out = Vec::with_capacity(pieces);
    for k in 0..pieces {
        let start = k as f64 * dt;
        let value: Vec<f64> = (0..m)
            .map(|i| {
                let offset = if k == 0 || budget.eta == 0.0 {
                    0.0
                } else {
                    budget.eta * (rng.gen_range(0.0..=1.0) - shift[i])
                };
                u0[i] + offset + drift[i] * start
            })
            .collect();
        out.push(Piece {
            start,
            kind: PieceKind::Ramp {
                value,
                slope: drift.clone(),
            },
        });
    }
    Signal::new(out, horizon)
}
