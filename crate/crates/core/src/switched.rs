//! Switched systems with a minimum dwell time: simulation, the mode-divergence
//! estimate `d(t)`, the dwell-time entropy bound, and the one-hot embedding as
//! an open system.

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discrepancy::{cumulative_trapezoid, GainKind, Gains};
use crate::dynamics::{check_horizon, rk4_on_grid, time_grid, System, Trajectory};
use crate::quantization::Hyperbox;
use crate::signals::{Piece, PieceKind, Signal, TimeSequence, VariationBudget};
use crate::{dist_inf, norm_inf, Error, Result};

pub type ModeFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub struct Mode {
    pub field: Arc<ModeFn>,
    pub lipschitz: f64,
}

/// `x' = f_sigma(x)` with modes `f_0 .. f_{N-1}` and minimum dwell time `Td`.
#[derive(Clone)]
pub struct SwitchedSystem {
    n: usize,
    modes: Vec<Mode>,
    dwell: f64,
}

impl fmt::Debug for SwitchedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SwitchedSystem")
            .field("n", &self.n)
            .field("modes", &self.modes.len())
            .field("lipschitz", &self.modes.iter().map(|m| m.lipschitz).collect::<Vec<_>>())
            .field("dwell", &self.dwell)
            .finish()
    }
}

impl SwitchedSystem {
    pub fn new(n: usize, dwell: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be >= 1".into()));
        }
        if !(dwell > 0.0) || !dwell.is_finite() {
            return Err(Error::InvalidArgument(format!("dwell time must be > 0, got {dwell}")));
        }
        Ok(Self {
            n,
            modes: Vec::new(),
            dwell,
        })
    }

    pub fn with_mode<F>(mut self, lipschitz: f64, field: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if !(lipschitz >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mode Lipschitz constant must be >= 0, got {lipschitz}"
            )));
        }
        self.modes.push(Mode {
            field: Arc::new(field),
            lipschitz,
        });
        Ok(self)
    }

    /// Scalar modes `x' = a x` and `x' = b x`.
    pub fn scalar_linear_pair(a: f64, b: f64, dwell: f64) -> Result<Self> {
        Self::new(1, dwell)?
            .with_mode(a.abs(), move |x, out| out[0] = a * x[0])?
            .with_mode(b.abs(), move |x, out| out[0] = b * x[0])
    }

    /// Scalar constant modes `x' = a` and `x' = b`.
    pub fn constant_pair(a: f64, b: f64, dwell: f64) -> Result<Self> {
        Self::new(1, dwell)?
            .with_mode(0.0, move |_, out| out[0] = a)?
            .with_mode(0.0, move |_, out| out[0] = b)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    /// `L_x = max_p L_p`.
    pub fn lip_x(&self) -> f64 {
        self.modes.iter().map(|m| m.lipschitz).fold(0.0, f64::max)
    }

    pub fn mode_field(&self, p: usize, x: &[f64], out: &mut [f64]) {
        (self.modes[p].field)(x, out)
    }

    fn check(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidArgument("switched system has no modes".into()));
        }
        Ok(())
    }

    /// Simulates under `sigma` on `[0, t_end]`.
    pub fn simulate(&self, x0: &[f64], sigma: &SwitchingSignal, t_end: f64, dt: f64) -> Result<Trajectory> {
        self.check()?;
        check_horizon(t_end, dt)?;
        if x0.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: self.n,
                got: x0.len(),
            });
        }
        let times = time_grid(t_end, dt, &sigma.switch_times[1..]);
        self.simulate_on(x0, sigma, times, dt)
    }

    /// Simulates on a caller-supplied grid starting at 0.
    pub fn simulate_on(&self, x0: &[f64], sigma: &SwitchingSignal, times: Vec<f64>, dt: f64) -> Result<Trajectory> {
        self.check()?;
        if x0.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: self.n,
                got: x0.len(),
            });
        }
        if let Some(&p) = sigma.modes.iter().find(|&&p| p >= self.modes.len()) {
            return Err(Error::InvalidArgument(format!("mode {p} out of range")));
        }
        let modes: Vec<usize> = times.iter().map(|&t| sigma.mode_at(t)).collect();
        let states = rk4_on_grid(x0, &times, |k, _, x, out| self.mode_field(modes[k], x, out))?;
        Ok(Trajectory {
            times,
            states,
            step: dt,
        })
    }

    /// Simulates mode `p` alone from `x`.
    pub fn simulate_mode(&self, p: usize, x: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
        let sigma = SwitchingSignal {
            switch_times: vec![0.0],
            modes: vec![p],
            mode_count: self.modes.len(),
        };
        self.simulate(x, &sigma, t_end, dt)
    }
}

/// Piecewise-constant mode schedule: mode `modes[k]` from `switch_times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    switch_times: Vec<f64>,
    modes: Vec<usize>,
    mode_count: usize,
}

impl SwitchingSignal {
    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn mode_at(&self, t: f64) -> usize {
        let k = self.switch_times.partition_point(|&s| s <= t).saturating_sub(1);
        self.modes[k]
    }

    /// The same schedule as a one-hot input signal with `m = N`.
    pub fn one_hot(&self, horizon: f64) -> Result<Signal> {
        let pieces = self
            .switch_times
            .iter()
            .zip(&self.modes)
            .map(|(&start, &p)| {
                let mut v = vec![0.0; self.mode_count];
                v[p] = 1.0;
                Piece {
                    start,
                    kind: PieceKind::Constant(v),
                }
            })
            .collect();
        Signal::new(pieces, horizon)
    }
}

/// Builds the schedule that runs `modes[i]` on gap `i` of `tseq`. Equal
/// neighbours merge, so only true switches remain. With `dwell`, consecutive
/// switches closer than `dwell` are rejected.
pub fn switching_signal(
    tseq: &TimeSequence,
    modes: &[usize],
    mode_count: usize,
    dwell: Option<f64>,
) -> Result<SwitchingSignal> {
    if modes.len() != tseq.gap_count() {
        return Err(Error::DimensionMismatch {
            what: "mode string",
            expected: tseq.gap_count(),
            got: modes.len(),
        });
    }
    if mode_count == 0 || modes.iter().any(|&p| p >= mode_count) {
        return Err(Error::InvalidArgument("mode index out of range".into()));
    }
    let mut switch_times = Vec::new();
    let mut kept = Vec::new();
    for (&t, &p) in tseq.instants().iter().zip(modes) {
        if kept.last() == Some(&p) {
            continue;
        }
        switch_times.push(t);
        kept.push(p);
    }
    if let Some(td) = dwell {
        for w in switch_times[1..].windows(2) {
            if w[1] - w[0] < td * (1.0 - 1e-12) {
                return Err(Error::DwellViolation {
                    gap: w[1] - w[0],
                    dwell: td,
                });
            }
        }
    }
    Ok(SwitchingSignal {
        switch_times,
        modes: kept,
        mode_count,
    })
}

/// Random schedule on `[0, horizon]` with holding times drawn from
/// `[Td, 2 Td]`.
pub fn random_switching<R: Rng + ?Sized>(
    rng: &mut R,
    mode_count: usize,
    dwell: f64,
    horizon: f64,
) -> SwitchingSignal {
    let mut switch_times = vec![0.0];
    let mut modes = vec![rng.gen_range(0..mode_count)];
    let mut t = 0.0;
    loop {
        t += dwell * rng.gen_range(1.0..=2.0);
        if t >= horizon {
            break;
        }
        let mut p = rng.gen_range(0..mode_count);
        if mode_count > 1 {
            while p == *modes.last().expect("nonempty") {
                p = rng.gen_range(0..mode_count);
            }
        }
        if mode_count > 1 {
            switch_times.push(t);
            modes.push(p);
        }
    }
    SwitchingSignal {
        switch_times,
        modes,
        mode_count,
    }
}

/// Monte-Carlo reach-set sampling settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachConfig {
    /// Sampling horizon `H`.
    pub horizon: f64,
    pub signals: usize,
    /// Time between collected states along each trajectory.
    pub sample_every: f64,
    pub dt: f64,
    pub seed: u64,
}

impl ReachConfig {
    /// `H = 5 Td`, 100 signals, states every `H / 20`, `dt = 1e-3`.
    pub fn default_for(sw: &SwitchedSystem, seed: u64) -> Self {
        let horizon = 5.0 * sw.dwell();
        Self {
            horizon,
            signals: 100,
            sample_every: horizon / 20.0,
            dt: 1e-3,
            seed,
        }
    }
}

/// States visited by random dwell-respecting trajectories from `k_box`.
///
/// Signal `j` draws from its own ChaCha stream, so growing the horizon only
/// appends samples.
pub fn reach_samples(sw: &SwitchedSystem, k_box: &Hyperbox, cfg: &ReachConfig) -> Result<Vec<Vec<f64>>> {
    sw.check()?;
    if k_box.dim() != sw.n() {
        return Err(Error::DimensionMismatch {
            what: "initial-state box",
            expected: sw.n(),
            got: k_box.dim(),
        });
    }
    if !(cfg.sample_every > 0.0) {
        return Err(Error::InvalidArgument("sample_every must be > 0".into()));
    }
    let mut out = Vec::new();
    for j in 0..cfg.signals {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(j as u64);
        let x0: Vec<f64> = (0..sw.n())
            .map(|i| {
                let (lo, hi) = (k_box.lo()[i], k_box.hi()[i]);
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect();
        let sigma = random_switching(&mut rng, sw.mode_count(), sw.dwell(), cfg.horizon);
        let tr = sw.simulate(&x0, &sigma, cfg.horizon, cfg.dt)?;
        let mut next = 0.0;
        for (t, x) in tr.times.iter().zip(&tr.states) {
            if *t >= next - 1e-12 {
                out.push(x.clone());
                next += cfg.sample_every;
            }
        }
    }
    Ok(out)
}

/// Nondecreasing estimate of `d(t)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceProfile {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl DivergenceProfile {
    /// Linear interpolation; clamps to the grid's range.
    pub fn at(&self, t: f64) -> f64 {
        let pos = self.times.partition_point(|&s| s <= t);
        if pos == 0 {
            return self.values[0];
        }
        if pos >= self.times.len() {
            return *self.values.last().expect("nonempty");
        }
        let (t0, t1) = (self.times[pos - 1], self.times[pos]);
        let w = (t - t0) / (t1 - t0);
        self.values[pos - 1] + w * (self.values[pos] - self.values[pos - 1])
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub const CSV_HEADER: &'static str = "t,d";

    pub fn csv_rows(&self) -> Vec<String> {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(t, d)| format!("{t:.8e},{d:.8e}"))
            .collect()
    }
}

/// Max over mode pairs and samples of the trapezoid integral of
/// `|f_p1(xi_p1(s)) - f_p2(xi_p2(s))|_inf` on `[0, t_max]`, followed by a
/// running max.
pub fn mode_divergence_profile(
    sw: &SwitchedSystem,
    samples: &[Vec<f64>],
    t_max: f64,
    dt: f64,
) -> Result<DivergenceProfile> {
    sw.check()?;
    check_horizon(t_max, dt)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("mode divergence needs reach samples".into()));
    }
    let times = time_grid(t_max, dt, &[]);
    let mut best = vec![0.0f64; times.len()];
    let n = sw.n();
    let (mut f1, mut f2) = (vec![0.0; n], vec![0.0; n]);
    let mut integrand = vec![0.0; times.len()];
    let mut diff = vec![0.0; n];
    for x in samples {
        let trajs = (0..sw.mode_count())
            .map(|p| {
                rk4_on_grid(x, &times, |_, _, y, out| sw.mode_field(p, y, out)).map_err(|e| match e {
                    Error::Divergence { last_finite_time } => Error::InvalidArgument(format!(
                        "mode {p} diverged at t={last_finite_time} from sample {x:?}"
                    )),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        // the integrand is symmetric, so unordered pairs suffice
        for p1 in 0..sw.mode_count() {
            for p2 in p1 + 1..sw.mode_count() {
                for k in 0..times.len() {
                    sw.mode_field(p1, &trajs[p1][k], &mut f1);
                    sw.mode_field(p2, &trajs[p2][k], &mut f2);
                    for i in 0..n {
                        diff[i] = f1[i] - f2[i];
                    }
                    integrand[k] = norm_inf(&diff);
                }
                for (b, v) in best.iter_mut().zip(cumulative_trapezoid(&times, &integrand)) {
                    *b = b.max(v);
                }
            }
        }
    }
    let mut running = 0.0f64;
    for v in best.iter_mut() {
        running = running.max(*v);
        *v = running;
    }
    Ok(DivergenceProfile {
        times,
        values: best,
    })
}

/// `d(t)` from reach samples.
pub fn mode_divergence(sw: &SwitchedSystem, t: f64, samples: &[Vec<f64>], dt: f64) -> Result<f64> {
    Ok(*mode_divergence_profile(sw, samples, t, dt)?
        .values
        .last()
        .expect("nonempty"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedBound {
    /// Largest `T_e` found; 0 when none is positive.
    pub te: f64,
    pub d_te: f64,
    /// `eps (1 - e^{-alpha (Td - T_e)})`.
    pub threshold: f64,
    /// `(L_x + alpha) n / ln 2 + log2(N) / T_e`; infinite without a positive `T_e`.
    pub bound: f64,
    pub diagnosis: Option<String>,
}

/// Bisects (50 steps) for the largest `T_e` in `(0, min(tau, Td)]` with
/// `d(T_e) <= eps (1 - e^{-alpha (Td - T_e)})`.
pub fn switched_bound(
    sw: &SwitchedSystem,
    eps: f64,
    alpha: f64,
    tau: f64,
    d: &DivergenceProfile,
) -> Result<SwitchedBound> {
    sw.check()?;
    if !(eps > 0.0) || !(tau > 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need eps > 0, tau > 0, alpha >= 0 (got {eps}, {tau}, {alpha})"
        )));
    }
    let td = sw.dwell();
    let upper = tau.min(td);
    if d.t_max() < upper * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "divergence profile covers [0, {}] but T_e may reach {upper}",
            d.t_max()
        )));
    }
    let rhs = |t: f64| eps * -(-alpha * (td - t)).exp_m1();
    let ok = |t: f64| d.at(t) <= rhs(t);
    let n = sw.n() as f64;
    let log_n = (sw.mode_count() as f64).log2();
    let te = if ok(upper) {
        upper
    } else {
        let (mut lo, mut hi) = (0.0, upper);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let rate = (sw.lip_x() + alpha) * n / LN_2;
    if te > 0.0 {
        Ok(SwitchedBound {
            te,
            d_te: d.at(te),
            threshold: rhs(te),
            bound: rate + log_n / te,
            diagnosis: None,
        })
    } else if log_n == 0.0 {
        Ok(SwitchedBound {
            te: 0.0,
            d_te: 0.0,
            threshold: 0.0,
            bound: rate,
            diagnosis: Some("single mode: no switching term".into()),
        })
    } else {
        let why = if alpha == 0.0 {
            "alpha = 0 forces d(T_e) = 0, which distinct modes never meet"
        } else {
            "d(t) exceeds eps (1 - e^{-alpha (Td - t)}) for every t > 0"
        };
        Ok(SwitchedBound {
            te: 0.0,
            d_te: 0.0,
            threshold: rhs(0.0),
            bound: f64::INFINITY,
            diagnosis: Some(why.into()),
        })
    }
}

/// Open-system view of a switched system.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub system: System,
    pub budget: VariationBudget,
    pub gains: Gains,
}

/// `x' = sum_p u_p f_p(x)` with `m = N`, `mu = 0`, `eta = 1`, `U0 = [0,1]^N`.
/// Gains: `G_x = n sum_p L_p + N/2` and
/// `G_u = sqrt(m) max over samples of max_p |f_p(x)|_inf`.
pub fn embed_as_open(sw: &SwitchedSystem, samples: &[Vec<f64>]) -> Result<Embedding> {
    sw.check()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("embedding gains need state samples".into()));
    }
    let n = sw.n();
    let count = sw.mode_count();
    let modes = sw.modes.clone();
    let field = move |x: &[f64], u: &[f64], out: &mut [f64]| {
        let mut tmp = vec![0.0; x.len()];
        out.fill(0.0);
        for (p, mode) in modes.iter().enumerate() {
            if u[p] == 0.0 {
                continue;
            }
            (mode.field)(x, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += u[p] * v;
            }
        }
    };
    let mut fmax = 0.0f64;
    let mut tmp = vec![0.0; n];
    for x in samples {
        for p in 0..count {
            sw.mode_field(p, x, &mut tmp);
            fmax = fmax.max(norm_inf(&tmp));
        }
    }
    let sum_l: f64 = sw.modes.iter().map(|m| m.lipschitz).sum();
    let gains = Gains {
        gx: n as f64 * sum_l + count as f64 / 2.0,
        gu: (count as f64).sqrt() * fmax,
        kind: GainKind::Local,
        provenance: format!("one-hot embedding over {} state samples", samples.len()),
    };
    let system = System::new("switched-embedding", n, count, field)?.with_lipschitz(sum_l, fmax)?;
    let budget = VariationBudget::new(0.0, 1.0, Hyperbox::cube(0.0, 1.0, count)?)?;
    Ok(Embedding {
        system,
        budget,
        gains,
    })
}

/// Sup-norm distance between a switched run and its embedded counterpart.
pub fn embedding_gap(
    sw: &SwitchedSystem,
    emb: &Embedding,
    x0: &[f64],
    sigma: &SwitchingSignal,
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    let direct = sw.simulate(x0, sigma, t_end, dt)?;
    let open = emb.system.integrate(x0, &sigma.one_hot(t_end)?, t_end, dt)?;
    if direct.times != open.times {
        return Err(Error::InvalidArgument("simulation grids differ".into()));
    }
    Ok(direct
        .states
        .iter()
        .zip(&open.states)
        .map(|(a, b)| dist_inf(a, b))
        .fold(0.0, f64::max))
}
