//! Continuous-time systems `x' = f(x, u)` and fixed-step RK4 integration.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::signals::Signal;
use crate::{Error, Result};

pub type FieldFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
pub type JacobianFn = dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync;

/// A vector field with its dimensions and global Lipschitz constants.
#[derive(Clone)]
pub struct System {
    name: String,
    n: usize,
    m: usize,
    field: Arc<FieldFn>,
    jac_x: Option<Arc<JacobianFn>>,
    jac_u: Option<Arc<JacobianFn>>,
    lip_x: f64,
    lip_u: f64,
}

impl fmt::Debug for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("System")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_jacobians", &(self.jac_x.is_some(), self.jac_u.is_some()))
            .field("lip_x", &self.lip_x)
            .field("lip_u", &self.lip_u)
            .finish()
    }
}

impl System {
    pub fn new<F>(name: impl Into<String>, n: usize, m: usize, field: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "system dimensions must be >= 1 (n={n}, m={m})"
            )));
        }
        Ok(Self {
            name: name.into(),
            n,
            m,
            field: Arc::new(field),
            jac_x: None,
            jac_u: None,
            lip_x: 0.0,
            lip_u: 0.0,
        })
    }

    pub fn with_jacobians<A, B>(mut self, jac_x: A, jac_u: B) -> Self
    where
        A: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac_x = Some(Arc::new(jac_x));
        self.jac_u = Some(Arc::new(jac_u));
        self
    }

    pub fn with_lipschitz(mut self, lip_x: f64, lip_u: f64) -> Result<Self> {
        if !(lip_x >= 0.0) || !(lip_u >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Lipschitz constants must be >= 0 (got {lip_x}, {lip_u})"
            )));
        }
        self.lip_x = lip_x;
        self.lip_u = lip_u;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn lip_x(&self) -> f64 {
        self.lip_x
    }

    pub fn lip_u(&self) -> f64 {
        self.lip_u
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jac_x.is_some() && self.jac_u.is_some()
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.n,
                got: x.len(),
            });
        }
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.m,
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Writes `f(x, u)` into `out` without checks.
    pub fn field_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.field)(x, u, out)
    }

    pub fn evaluate_field(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        let mut out = vec![0.0; self.n];
        self.field_into(x, u, &mut out);
        Ok(out)
    }

    fn finite_field(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let out = self.evaluate_field(x, u)?;
        match out.iter().position(|v| !v.is_finite()) {
            Some(coordinate) => Err(Error::NonFinite {
                context: "field evaluation",
                coordinate,
            }),
            None => Ok(out),
        }
    }

    /// `df/dx`, analytic when supplied.
    pub fn jacobian_x(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(x, u)?;
        match &self.jac_x {
            Some(j) => Ok(j(x, u)),
            None => self.fd_jacobian_x(x, u),
        }
    }

    /// `df/du`, analytic when supplied.
    pub fn jacobian_u(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(x, u)?;
        match &self.jac_u {
            Some(j) => Ok(j(x, u)),
            None => self.fd_jacobian_u(x, u),
        }
    }

    /// Central differences in `x`, step `1e-6 * max(1, |x_i|)`.
    pub fn fd_jacobian_x(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.n, self.n);
        let mut xp = x.to_vec();
        for i in 0..self.n {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = self.finite_field(&xp, u)?;
            xp[i] = x[i] - h;
            let fm = self.finite_field(&xp, u)?;
            xp[i] = x[i];
            for r in 0..self.n {
                j[(r, i)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Central differences in `u`, step `1e-6 * max(1, |u_i|)`.
    pub fn fd_jacobian_u(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.n, self.m);
        let mut up = u.to_vec();
        for i in 0..self.m {
            let h = 1e-6 * u[i].abs().max(1.0);
            up[i] = u[i] + h;
            let fp = self.finite_field(x, &up)?;
            up[i] = u[i] - h;
            let fm = self.finite_field(x, &up)?;
            up[i] = u[i];
            for r in 0..self.n {
                j[(r, i)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Integrates from `x0` under `u` on `[0, t_end]` with RK4 step `dt`.
    pub fn integrate(&self, x0: &[f64], u: &Signal, t_end: f64, dt: f64) -> Result<Trajectory> {
        check_horizon(t_end, dt)?;
        let inside: Vec<f64> = u
            .breakpoints()
            .into_iter()
            .filter(|&b| b > 0.0 && b < t_end)
            .collect();
        let times = time_grid(t_end, dt, &inside);
        self.integrate_on(x0, u, times, dt)
    }

    /// Integrates on a caller-supplied strictly increasing grid starting at 0.
    /// Each step uses the signal piece active at its left end.
    pub fn integrate_on(
        &self,
        x0: &[f64],
        u: &Signal,
        times: Vec<f64>,
        dt: f64,
    ) -> Result<Trajectory> {
        if x0.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: self.n,
                got: x0.len(),
            });
        }
        if u.dim() != self.m {
            return Err(Error::DimensionMismatch {
                what: "signal",
                expected: self.m,
                got: u.dim(),
            });
        }
        let pieces: Vec<usize> = times.iter().map(|&t| u.piece_index(t)).collect();
        let mut ubuf = vec![0.0; self.m];
        let states = rk4_on_grid(x0, &times, |k, t, x, out| {
            u.value_in_piece(pieces[k], t, &mut ubuf);
            self.field_into(x, &ubuf, out);
        })?;
        Ok(Trajectory {
            times,
            states,
            step: dt,
        })
    }
}

pub(crate) fn check_horizon(t_end: f64, dt: f64) -> Result<()> {
    if !(t_end > 0.0) || !t_end.is_finite() || !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need T > 0 and dt > 0 (got T={t_end}, dt={dt})"
        )));
    }
    Ok(())
}

/// Uniform grid `k * dt` on `[0, t_end]` ending exactly at `t_end`, with
/// every breakpoint inserted. Uniform points within `1e-9 dt` of a breakpoint
/// are replaced by it.
pub fn time_grid(t_end: f64, dt: f64, breakpoints: &[f64]) -> Vec<f64> {
    let steps = crate::ceil_tol(t_end / dt).max(1.0) as usize;
    let mut grid: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    grid.push(t_end);
    let tol = 1e-9 * dt;
    for &b in breakpoints {
        if b <= 0.0 || b >= t_end {
            continue;
        }
        let pos = grid.partition_point(|&t| t < b);
        if pos < grid.len() && (grid[pos] - b).abs() <= tol {
            if pos + 1 < grid.len() || grid[pos] != t_end {
                grid[pos] = b;
            }
        } else if pos > 0 && (b - grid[pos - 1]).abs() <= tol {
            if pos - 1 > 0 {
                grid[pos - 1] = b;
            }
        } else {
            grid.insert(pos, b);
        }
    }
    grid.dedup();
    grid
}

/// Classic RK4 over `times`; `rhs(k, t, x, out)` evaluates the field during
/// step `k`, including at its right end.
pub(crate) fn rk4_on_grid<F>(x0: &[f64], times: &[f64], mut rhs: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(usize, f64, &[f64], &mut [f64]),
{
    let n = x0.len();
    let mut states = Vec::with_capacity(times.len());
    states.push(x0.to_vec());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut x = x0.to_vec();
    for k in 0..times.len().saturating_sub(1) {
        let t = times[k];
        let h = times[k + 1] - t;
        rhs(k, t, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(k, t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(k, t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        rhs(k, times[k + 1], &tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                last_finite_time: t,
            });
        }
        states.push(x.clone());
    }
    Ok(states)
}

/// Time-gridded solution with linear interpolation between grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step: f64,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("nonempty trajectory")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("nonempty trajectory")
    }

    /// State at `t`, clamped to the grid's range.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let pos = self.times.partition_point(|&s| s <= t);
        if pos == 0 {
            return self.states[0].clone();
        }
        if pos >= self.times.len() {
            return self.final_state().to_vec();
        }
        let (t0, t1) = (self.times[pos - 1], self.times[pos]);
        let w = (t - t0) / (t1 - t0);
        self.states[pos - 1]
            .iter()
            .zip(&self.states[pos])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// `x' = u` with `n = m = dim`.
pub fn integrator(dim: usize) -> Result<System> {
    System::new("integrator", dim, dim, |_, u, out| out.copy_from_slice(u))?
        .with_jacobians(
            move |_, _| DMatrix::zeros(dim, dim),
            move |_, _| DMatrix::identity(dim, dim),
        )
        .with_lipschitz(0.0, 1.0)
}

/// The scalar system `x' = u`.
pub fn simple() -> Result<System> {
    let mut s = integrator(1)?;
    s.name = "simple".into();
    Ok(s)
}

/// Dubin's vehicle: `x1' = v cos x3`, `x2' = v sin x3`, `x3' = u`.
pub fn dubin(v: f64) -> Result<System> {
    System::new("dubin", 3, 1, move |x, u, out| {
        out[0] = v * x[2].cos();
        out[1] = v * x[2].sin();
        out[2] = u[0];
    })?
    .with_jacobians(
        move |x, _| {
            let mut j = DMatrix::zeros(3, 3);
            j[(0, 2)] = -v * x[2].sin();
            j[(1, 2)] = v * x[2].cos();
            j
        },
        |_, _| DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
    )
    .with_lipschitz(v.abs(), 1.0)
}

/// Parameters of the Harrier jump-jet model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrierParams {
    pub mass: f64,
    pub g: f64,
    pub r: f64,
    pub c: f64,
    pub inertia: f64,
    pub u_max: f64,
}

impl Default for HarrierParams {
    fn default() -> Self {
        Self {
            mass: 100.0,
            g: 9.81,
            r: 5.0,
            c: 100.0,
            inertia: 50.0,
            u_max: 1.0,
        }
    }
}

/// Planar Harrier jet with state `(x, y, theta, x', y', theta')`.
pub fn harrier(p: HarrierParams) -> Result<System> {
    let HarrierParams {
        mass,
        g,
        r,
        c,
        inertia,
        u_max,
    } = p;
    if !(mass > 0.0) || !(inertia > 0.0) {
        return Err(Error::InvalidArgument("harrier mass and inertia must be > 0".into()));
    }
    let lip_x = 1.0f64.max(c / mass).max(g + 2.0 * u_max / mass);
    let lip_u = (1.0 / mass).max(r / inertia);
    System::new("harrier", 6, 2, move |x, u, out| {
        let (s, co) = x[2].sin_cos();
        out[0] = x[3];
        out[1] = x[4];
        out[2] = x[5];
        out[3] = -g * s - c * x[3] / mass + u[0] / mass * co - u[1] / mass * s;
        out[4] = g * (co - 1.0) - c * x[4] / mass + u[0] / mass * s + u[1] / mass * co;
        out[5] = r / inertia * u[0];
    })?
    .with_jacobians(
        move |x, u| {
            let (s, co) = x[2].sin_cos();
            let mut j = DMatrix::zeros(6, 6);
            j[(0, 3)] = 1.0;
            j[(1, 4)] = 1.0;
            j[(2, 5)] = 1.0;
            j[(3, 2)] = -g * co - u[0] / mass * s - u[1] / mass * co;
            j[(3, 3)] = -c / mass;
            j[(4, 2)] = -g * s + u[0] / mass * co - u[1] / mass * s;
            j[(4, 4)] = -c / mass;
            j
        },
        move |x, _| {
            let (s, co) = x[2].sin_cos();
            let mut j = DMatrix::zeros(6, 2);
            j[(3, 0)] = co / mass;
            j[(3, 1)] = -s / mass;
            j[(4, 0)] = s / mass;
            j[(4, 1)] = co / mass;
            j[(5, 0)] = r / inertia;
            j
        },
    )
    .with_lipschitz(lip_x, lip_u)
}

/// Pendulum `x1' = x2`, `x2' = -k sin x1 + u / inertia` with `k = Mgl/I`.
pub fn pendulum(k: f64, inertia: f64) -> Result<System> {
    if !(inertia > 0.0) {
        return Err(Error::InvalidArgument("pendulum inertia must be > 0".into()));
    }
    System::new("pendulum", 2, 1, move |x, u, out| {
        out[0] = x[1];
        out[1] = -k * x[0].sin() + u[0] / inertia;
    })?
    .with_jacobians(
        move |x, _| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -k * x[0].cos(), 0.0]),
        move |_, _| DMatrix::from_column_slice(2, 1, &[0.0, 1.0 / inertia]),
    )
    .with_lipschitz(1.0f64.max(k.abs()), 1.0 / inertia)
}

/// `x' = a x + u`.
pub fn scalar_linear(a: f64) -> Result<System> {
    System::new("scalar_linear", 1, 1, move |x, u, out| out[0] = a * x[0] + u[0])?
        .with_jacobians(
            move |_, _| DMatrix::from_element(1, 1, a),
            |_, _| DMatrix::from_element(1, 1, 1.0),
        )
        .with_lipschitz(a.abs(), 1.0)
}

pub type Params = BTreeMap<String, f64>;
type Builder = Box<dyn Fn(&Params) -> Result<System> + Send + Sync>;

/// Name-indexed constructors for systems.
pub struct Registry {
    builders: BTreeMap<String, Builder>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

fn param(p: &Params, key: &str, default: f64) -> f64 {
    p.get(key).copied().unwrap_or(default)
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// Registry holding `integrator`, `simple`, `dubin`, `harrier`,
    /// `pendulum` and `scalar_linear`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("integrator", |p| {
            let dim = param(p, "dim", 1.0);
            if dim < 1.0 || dim.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!("dim must be a positive integer, got {dim}")));
            }
            integrator(dim as usize)
        });
        r.register("simple", |_| simple());
        r.register("dubin", |p| dubin(param(p, "v", 10.0)));
        r.register("harrier", |p| {
            let d = HarrierParams::default();
            harrier(HarrierParams {
                mass: param(p, "mass", d.mass),
                g: param(p, "g", d.g),
                r: param(p, "r", d.r),
                c: param(p, "c", d.c),
                inertia: param(p, "inertia", d.inertia),
                u_max: param(p, "u_max", d.u_max),
            })
        });
        r.register("pendulum", |p| {
            pendulum(param(p, "k", 0.98), param(p, "inertia", 1.0))
        });
        r.register("scalar_linear", |p| scalar_linear(param(p, "a", 1.0)));
        r
    }

    pub fn register<F>(&mut self, name: &str, builder: F)
    where
        F: Fn(&Params) -> Result<System> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Box::new(builder));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, params: &Params) -> Result<System> {
        let b = self.builders.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown system {name:?}; known: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        b(params)
    }
}
