//! Controlled continuity equations for particle measures.
//!
//! A [`ControlModel`] carries the drift `f(t, x, m, u)`, running cost `L(t, m, u)`
//! and terminal cost `G(m)` over a finite control set. Relaxed controls are
//! piecewise-constant probability mixtures over that set. Because the drift is
//! evaluated on the current particle cloud, the continuity equation becomes a
//! closed ODE system for the particle positions, integrated with classical RK4.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{Cell, Table};
use crate::measure::{dot, norm_sq, ParticleMeasure, VelocityField};
use crate::transport::w2;

pub type DriftFn = dyn Fn(f64, &[f64], &ParticleMeasure, &[f64], &mut [f64]) + Send + Sync;
pub type RunningCostFn = dyn Fn(f64, &ParticleMeasure, &[f64]) -> f64 + Send + Sync;
pub type TerminalCostFn = dyn Fn(&ParticleMeasure) -> f64 + Send + Sync;

/// Modulus `r -> coefficient * r^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerModulus {
    pub coefficient: f64,
    pub exponent: f64,
}

impl PowerModulus {
    pub fn eval(&self, r: f64) -> f64 {
        self.coefficient * r.max(0.0).powf(self.exponent)
    }
}

/// Regularity constants declared for a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConstants {
    /// Lipschitz constant of `f` in `(x, m)`.
    pub c_f: f64,
    /// Lipschitz constant of `L` in `m`.
    pub c_l: f64,
    /// Linear growth constant: `|f(t, x, m, u)| <= c_1 (1 + |x| + sm(m))`.
    pub c_1: f64,
    /// Time modulus of `f` and `L`.
    pub omega_f: PowerModulus,
}

/// Upper bounds for the four flow growth constants, see [`growth_diagnostics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthBounds {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

#[derive(Clone)]
pub struct ControlModel {
    name: String,
    dim: usize,
    horizon: f64,
    controls: Vec<Vec<f64>>,
    drift: Arc<DriftFn>,
    running: Arc<RunningCostFn>,
    terminal: Arc<TerminalCostFn>,
    constants: ModelConstants,
    growth: Option<GrowthBounds>,
}

impl fmt::Debug for ControlModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("controls", &self.controls)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl ControlModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        horizon: f64,
        controls: Vec<Vec<f64>>,
        drift: Arc<DriftFn>,
        running: Arc<RunningCostFn>,
        terminal: Arc<TerminalCostFn>,
        constants: ModelConstants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
        }
        if controls.is_empty() {
            return Err(Error::InvalidArgument("control set is empty".into()));
        }
        let k = controls[0].len();
        if controls.iter().any(|u| u.len() != k || u.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("control values must be finite with equal length".into()));
        }
        Ok(Self {
            name: name.into(),
            dim,
            horizon,
            controls,
            drift,
            running,
            terminal,
            constants,
            growth: None,
        })
    }

    pub fn with_growth_bounds(mut self, bounds: GrowthBounds) -> Self {
        self.growth = Some(bounds);
        self
    }

    /// Same model with the final time moved.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Same model with `terminal` as the terminal cost.
    pub fn with_terminal_cost(mut self, terminal: Arc<TerminalCostFn>) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    pub fn growth_bounds(&self) -> Option<&GrowthBounds> {
        self.growth.as_ref()
    }

    /// `f(t, x, m, U[u])` written into `out`.
    pub fn drift(&self, t: f64, x: &[f64], m: &ParticleMeasure, u: usize, out: &mut [f64]) {
        (self.drift)(t, x, m, &self.controls[u], out)
    }

    pub fn running_cost(&self, t: f64, m: &ParticleMeasure, u: usize) -> f64 {
        (self.running)(t, m, &self.controls[u])
    }

    pub fn terminal_cost(&self, m: &ParticleMeasure) -> f64 {
        (self.terminal)(m)
    }

    /// Mixed drift `sum_u zeta(u) f(t, x, m, u)`.
    pub fn mixed_drift(&self, t: f64, x: &[f64], m: &ParticleMeasure, zeta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut buf = vec![0.0; self.dim];
        for (u, &p) in zeta.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.drift(t, x, m, u, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += p * b;
            }
        }
    }

    pub fn mixed_running_cost(&self, t: f64, m: &ParticleMeasure, zeta: &[f64]) -> f64 {
        zeta.iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(u, p)| p * self.running_cost(t, m, u))
            .sum()
    }

    fn velocity(&self, t: f64, m: &ParticleMeasure, zeta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut v = vec![0.0; m.points().len()];
        for i in 0..m.len() {
            self.mixed_drift(t, m.point(i), m, zeta, &mut v[i * d..(i + 1) * d]);
        }
        v
    }
}

/// Piecewise-constant relaxed control: a probability vector over the control set on
/// each interval `[breakpoints[k], breakpoints[k + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedControl {
    breakpoints: Vec<f64>,
    mixtures: Vec<Vec<f64>>,
}

impl RelaxedControl {
    pub fn new(breakpoints: Vec<f64>, mixtures: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != mixtures.len() + 1 {
            return Err(Error::InvalidControl(format!(
                "{} breakpoints for {} intervals",
                breakpoints.len(),
                mixtures.len()
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidControl("breakpoints must be finite and increasing".into()));
        }
        let k = mixtures.first().map_or(0, |m| m.len());
        for (i, zeta) in mixtures.iter().enumerate() {
            let total: f64 = zeta.iter().sum();
            if zeta.len() != k || zeta.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidControl(format!("interval {i} is not a probability vector")));
            }
        }
        Ok(Self { breakpoints, mixtures })
    }

    /// Control that plays `mixture` on all of `[s, r]`.
    pub fn constant(s: f64, r: f64, mixture: Vec<f64>) -> Result<Self> {
        Self::new(vec![s, r], vec![mixture])
    }

    /// Pure control: `indices[k]` on the `k`-th interval.
    pub fn pure(breakpoints: Vec<f64>, indices: &[usize], n_controls: usize) -> Result<Self> {
        if indices.iter().any(|&u| u >= n_controls) {
            return Err(Error::InvalidControl("control index out of range".into()));
        }
        let mixtures = indices
            .iter()
            .map(|&u| {
                let mut z = vec![0.0; n_controls];
                z[u] = 1.0;
                z
            })
            .collect();
        Self::new(breakpoints, mixtures)
    }

    /// Pure control on a uniform grid of `indices.len()` intervals over `[s, r]`.
    pub fn pure_uniform(s: f64, r: f64, indices: &[usize], n_controls: usize) -> Result<Self> {
        Self::pure(uniform_grid(s, r, indices.len()), indices, n_controls)
    }

    /// Degenerate control on the single instant `s`.
    pub fn empty(s: f64) -> Self {
        Self { breakpoints: vec![s], mixtures: vec![] }
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn mixtures(&self) -> &[Vec<f64>] {
        &self.mixtures
    }

    /// Index of the interval containing `t`, right-continuous, clamped to the ends.
    pub fn interval_at(&self, t: f64) -> Option<usize> {
        if self.mixtures.is_empty() {
            return None;
        }
        let k = self.breakpoints[1..].partition_point(|&b| b <= t);
        Some(k.min(self.mixtures.len() - 1))
    }

    pub fn mixture_at(&self, t: f64) -> Option<&[f64]> {
        self.interval_at(t).map(|k| self.mixtures[k].as_slice())
    }

    /// Concatenation on `[s, theta] ++ [theta, r]`.
    pub fn concat(&self, next: &Self) -> Result<Self> {
        if self.end() != next.start() {
            return Err(Error::InvalidControl(format!(
                "cannot join a control ending at {} with one starting at {}",
                self.end(),
                next.start()
            )));
        }
        if let (Some(a), Some(b)) = (self.mixtures.first(), next.mixtures.first()) {
            if a.len() != b.len() {
                return Err(Error::InvalidControl("controls range over different sets".into()));
            }
        }
        let mut breakpoints = self.breakpoints.clone();
        breakpoints.extend_from_slice(&next.breakpoints[1..]);
        let mut mixtures = self.mixtures.clone();
        mixtures.extend(next.mixtures.iter().cloned());
        Ok(Self { breakpoints, mixtures })
    }

    fn check_for(&self, model: &ControlModel, s: f64, r: f64) -> Result<()> {
        if let Some(z) = self.mixtures.first() {
            if z.len() != model.n_controls() {
                return Err(Error::InvalidControl(format!(
                    "mixtures over {} controls, model has {}",
                    z.len(),
                    model.n_controls()
                )));
            }
        }
        if r > s && (self.start() > s || self.end() < r) {
            return Err(Error::InvalidControl(format!(
                "control on [{}, {}] does not cover [{s}, {r}]",
                self.start(),
                self.end()
            )));
        }
        Ok(())
    }
}

pub fn uniform_grid(s: f64, r: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n).map(|k| s + (r - s) * k as f64 / n as f64).collect();
    g[n] = r;
    g
}

/// Particle positions of a solved continuity equation on its time grid.
///
/// All particles keep their initial weights, so `measure_at(k)` is the pushforward of
/// the initial measure along the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureTrajectory {
    dim: usize,
    weights: Vec<f64>,
    times: Vec<f64>,
    positions: Vec<Vec<f64>>,
    // Control interval used on each grid step.
    step_mixtures: Vec<Vec<f64>>,
}

impl MeasureTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self, k: usize) -> &[f64] {
        &self.positions[k]
    }

    pub fn measure_at(&self, k: usize) -> ParticleMeasure {
        ParticleMeasure::new(self.dim, self.positions[k].clone(), self.weights.clone())
            .expect("trajectory states are finite")
    }

    pub fn initial(&self) -> ParticleMeasure {
        self.measure_at(0)
    }

    pub fn terminal(&self) -> ParticleMeasure {
        self.measure_at(self.len() - 1)
    }

    /// Mixture in force on the grid step `[t_k, t_{k+1}]`.
    pub fn step_mixture(&self, k: usize) -> &[f64] {
        &self.step_mixtures[k]
    }

    /// Appends a trajectory that starts where this one ends.
    pub fn append(&mut self, next: MeasureTrajectory) -> Result<()> {
        if next.times[0] != *self.times.last().unwrap() || next.positions[0] != *self.positions.last().unwrap() {
            return Err(Error::InvalidArgument("trajectories do not connect".into()));
        }
        self.times.extend_from_slice(&next.times[1..]);
        self.positions.extend(next.positions.into_iter().skip(1));
        self.step_mixtures.extend(next.step_mixtures);
        Ok(())
    }

    /// `time, particle_id, x_1..x_d, weight` rows.
    pub fn to_table(&self) -> Table {
        let mut header = vec!["time".to_string(), "particle_id".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x_{k}")));
        header.push("weight".into());
        let mut table = Table::new(&header);
        for (k, t) in self.times.iter().enumerate() {
            for (i, w) in self.weights.iter().enumerate() {
                let mut row: Vec<Cell> = vec![(*t).into(), i.into()];
                row.extend(self.positions[k][i * self.dim..(i + 1) * self.dim].iter().map(|&x| x.into()));
                row.push((*w).into());
                table.push(row);
            }
        }
        table
    }
}

/// Solves the continuity equation from `(s, mu)` to time `r` under `xi`.
///
/// The grid refines every control interval into equal substeps no longer than `step`,
/// so each control breakpoint is a grid node.
pub fn solve_continuity(
    model: &ControlModel,
    s: f64,
    r: f64,
    mu: &ParticleMeasure,
    xi: &RelaxedControl,
    step: f64,
) -> Result<MeasureTrajectory> {
    if mu.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: mu.dim() });
    }
    if !(r >= s) {
        return Err(Error::InvalidArgument(format!("final time {r} precedes start {s}")));
    }
    if !(step > 0.0) || (r > s && step > r - s + 1e-12) {
        return Err(Error::InvalidArgument(format!("step {step} must lie in (0, {}]", r - s)));
    }
    xi.check_for(model, s, r)?;

    let mut traj = MeasureTrajectory {
        dim: mu.dim(),
        weights: mu.weights().to_vec(),
        times: vec![s],
        positions: vec![mu.points().to_vec()],
        step_mixtures: vec![],
    };
    if r == s {
        return Ok(traj);
    }

    let mut cuts: Vec<f64> = vec![s];
    cuts.extend(xi.breakpoints().iter().copied().filter(|&b| b > s && b < r));
    cuts.push(r);
    let mut state = mu.points().to_vec();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let zeta = xi.mixture_at(a).expect("control covers the interval").to_vec();
        let n = ((b - a) / step - 1e-9).ceil().max(1.0) as usize;
        let grid = uniform_grid(a, b, n);
        for g in grid.windows(2) {
            state = rk4_step(model, mu, &state, g[0], g[1] - g[0], &zeta);
            if state.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { time: g[1] });
            }
            traj.times.push(g[1]);
            traj.positions.push(state.clone());
            traj.step_mixtures.push(zeta.clone());
        }
    }
    Ok(traj)
}

fn rk4_step(model: &ControlModel, template: &ParticleMeasure, x: &[f64], t: f64, h: f64, zeta: &[f64]) -> Vec<f64> {
    let eval = |pos: &[f64], t: f64| {
        let m = template.with_points_unchecked(pos.to_vec());
        model.velocity(t, &m, zeta)
    };
    let shift = |k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k1 = eval(x, t);
    let k2 = eval(&shift(&k1, h / 2.0), t + h / 2.0);
    let k3 = eval(&shift(&k2, h / 2.0), t + h / 2.0);
    let k4 = eval(&shift(&k3, h), t + h);
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Smooth test function for the weak form.
pub trait TestFunction {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// Monomial `c * t^a * prod_k x_k^{b_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coefficient: f64,
    pub t_power: u32,
    pub x_powers: Vec<u32>,
}

/// Polynomial in `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|m| m.t_power + m.x_powers.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Every monomial of total degree at most `max_degree` in `(t, x_1, .., x_d)`.
    pub fn monomial_basis(dim: usize, max_degree: u32) -> Vec<Polynomial> {
        let mut out = Vec::new();
        let mut powers = vec![0u32; dim + 1];
        loop {
            if powers.iter().sum::<u32>() <= max_degree {
                out.push(Polynomial {
                    terms: vec![Monomial {
                        coefficient: 1.0,
                        t_power: powers[0],
                        x_powers: powers[1..].to_vec(),
                    }],
                });
            }
            let mut k = 0;
            loop {
                if k == powers.len() {
                    return out;
                }
                powers[k] += 1;
                if powers[k] <= max_degree {
                    break;
                }
                powers[k] = 0;
                k += 1;
            }
        }
    }
}

fn ipow(x: f64, p: u32) -> f64 {
    x.powi(p as i32)
}

impl TestFunction for Polynomial {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|m| {
                m.coefficient
                    * ipow(t, m.t_power)
                    * m.x_powers.iter().zip(x).map(|(&p, &xk)| ipow(xk, p)).product::<f64>()
            })
            .sum()
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|m| m.t_power > 0)
            .map(|m| {
                m.coefficient
                    * m.t_power as f64
                    * ipow(t, m.t_power - 1)
                    * m.x_powers.iter().zip(x).map(|(&p, &xk)| ipow(xk, p)).product::<f64>()
            })
            .sum()
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for m in &self.terms {
            for k in 0..x.len() {
                let pk = m.x_powers[k];
                if pk == 0 {
                    continue;
                }
                let mut v = m.coefficient * ipow(t, m.t_power) * pk as f64 * ipow(x[k], pk - 1);
                for (l, (&p, &xl)) in m.x_powers.iter().zip(x).enumerate() {
                    if l != k {
                        v *= ipow(xl, p);
                    }
                }
                out[k] += v;
            }
        }
    }
}

/// Residual of the weak continuity equation for one test function.
///
/// Boundary terms are kept, so test functions need not vanish at the ends of the
/// interval: the value returned is the absolute value of
/// `int phi(r) dm_r - int phi(s) dm_s - int_s^r int (d_t phi + grad phi . v_t) dm_t dt`,
/// with trapezoid quadrature in time on the trajectory grid.
pub fn weak_form_residual(model: &ControlModel, traj: &MeasureTrajectory, phi: &dyn TestFunction) -> f64 {
    let d = traj.dim;
    let integral = |k: usize| -> f64 {
        let t = traj.times[k];
        traj.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * phi.value(t, &traj.positions[k][i * d..(i + 1) * d]))
            .sum()
    };
    let mut grad = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut rate = |k: usize, zeta: &[f64]| -> f64 {
        let t = traj.times[k];
        let m = traj.measure_at(k);
        let mut acc = 0.0;
        for (x, w) in m.iter() {
            phi.gradient(t, x, &mut grad);
            model.mixed_drift(t, x, &m, zeta, &mut v);
            acc += w * (phi.time_derivative(t, x) + dot(&grad, &v));
        }
        acc
    };
    let mut quad = 0.0;
    for k in 0..traj.len() - 1 {
        let zeta = traj.step_mixtures[k].clone();
        let h = traj.times[k + 1] - traj.times[k];
        quad += 0.5 * h * (rate(k, &zeta) + rate(k + 1, &zeta));
    }
    (integral(traj.len() - 1) - integral(0) - quad).abs()
}

/// Running cost of a solved trajectory by the trapezoid rule on its grid.
pub fn running_cost_integral(model: &ControlModel, traj: &MeasureTrajectory) -> f64 {
    let mut total = 0.0;
    for k in 0..traj.len() - 1 {
        let zeta = &traj.step_mixtures[k];
        let h = traj.times[k + 1] - traj.times[k];
        let a = model.mixed_running_cost(traj.times[k], &traj.measure_at(k), zeta);
        let b = model.mixed_running_cost(traj.times[k + 1], &traj.measure_at(k + 1), zeta);
        total += 0.5 * h * (a + b);
    }
    total
}

/// `J(s, mu, xi) = int_s^T L dt + G(m_T)`.
pub fn payoff_j(model: &ControlModel, s: f64, mu: &ParticleMeasure, xi: &RelaxedControl, step: f64) -> Result<f64> {
    let t_end = model.horizon();
    if s > t_end {
        return Err(Error::InvalidArgument(format!("start {s} is after the horizon {t_end}")));
    }
    if s == t_end {
        return Ok(model.terminal_cost(mu));
    }
    let step = step.min(t_end - s);
    let traj = solve_continuity(model, s, t_end, mu, xi, step)?;
    Ok(running_cost_integral(model, &traj) + model.terminal_cost(&traj.terminal()))
}

/// Fitted growth constants of a flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    /// `sm(m_t) <= c1 (1 + sm(mu))`.
    pub c1: f64,
    /// `W2(m_t, mu) <= c2 (1 + sm(mu)) |t - s|`.
    pub c2: f64,
    /// `|X(y)| <= c3 (1 + |y| + sm(mu))`.
    pub c3: f64,
    /// `|X(y) - y| <= c4 (1 + |y| + sm(mu)) |t - s|`.
    pub c4: f64,
    pub violations: Vec<String>,
}

impl GrowthReport {
    pub fn within_bounds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Smallest constants for which the four growth inequalities hold along `traj`.
pub fn growth_diagnostics(traj: &MeasureTrajectory, declared: Option<&GrowthBounds>) -> Result<GrowthReport> {
    let d = traj.dim;
    let mu = traj.initial();
    let sm0 = mu.second_moment_root();
    let s = traj.times[0];
    let (mut c1, mut c2, mut c3, mut c4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..traj.len() {
        let m = traj.measure_at(k);
        let dt = traj.times[k] - s;
        c1 = c1.max(m.second_moment_root() / (1.0 + sm0));
        if dt > 0.0 {
            c2 = c2.max(w2(&m, &mu)? / ((1.0 + sm0) * dt));
        }
        for i in 0..mu.len() {
            let y = mu.point(i);
            let x = &traj.positions[k][i * d..(i + 1) * d];
            let scale = 1.0 + norm_sq(y).sqrt() + sm0;
            c3 = c3.max(norm_sq(x).sqrt() / scale);
            if dt > 0.0 {
                let disp: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                c4 = c4.max(disp / (scale * dt));
            }
        }
    }
    let mut violations = Vec::new();
    if let Some(b) = declared {
        for (name, fitted, bound) in [("c1", c1, b.c1), ("c2", c2, b.c2), ("c3", c3, b.c3), ("c4", c4, b.c4)] {
            if fitted > bound * (1.0 + 1e-9) {
                violations.push(format!("{name} = {fitted} exceeds declared {bound}"));
            }
        }
    }
    Ok(GrowthReport { c1, c2, c3, c4, violations })
}

/// Time-averaged velocity `v^h(y) = (1/h) int_s^{s+h} sum_u f(t, X_t(y), m_t, u) xi_t(du) dt`.
///
/// The flow is integrated with 64 RK4 substeps and the time average by the trapezoid
/// rule on the same grid.
pub fn averaged_velocity(
    model: &ControlModel,
    s: f64,
    h: f64,
    mu: &ParticleMeasure,
    xi: &RelaxedControl,
) -> Result<VelocityField> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("averaging window {h} must be positive")));
    }
    let traj = solve_continuity(model, s, s + h, mu, xi, h / 64.0)?;
    let d = mu.dim();
    let mut acc = vec![0.0; d * mu.len()];
    let mut v = vec![0.0; d];
    for k in 0..traj.len() - 1 {
        let zeta = &traj.step_mixtures[k];
        let dt = traj.times[k + 1] - traj.times[k];
        for kk in [k, k + 1] {
            let m = traj.measure_at(kk);
            for i in 0..m.len() {
                model.mixed_drift(traj.times[kk], m.point(i), &m, zeta, &mut v);
                for c in 0..d {
                    acc[i * d + c] += 0.5 * dt * v[c];
                }
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= h);
    VelocityField::new(d, acc)
}
