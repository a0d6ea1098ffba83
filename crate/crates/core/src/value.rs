//! Value function oracle by exhaustive search over piecewise-constant controls.
//!
//! Every candidate sequence on the time grid is covered: the recursion memoizes the
//! cost-to-go on the quantized particle cloud, which only merges states that agree to
//! within the cache quantum, so the minimum equals the brute-force minimum.

use std::collections::HashMap;

use serde::Serialize;

use crate::dynamics::{running_cost_integral, solve_continuity, uniform_grid, ControlModel, RelaxedControl};
use crate::error::{Error, Result};
use crate::measure::ParticleMeasure;
use crate::tol;

pub const DEFAULT_BUDGET: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct ValueQuery {
    pub s: f64,
    pub mu: ParticleMeasure,
    /// Control breakpoints from `s` to the horizon.
    pub grid: Vec<f64>,
    /// Upper bound on the ODE step inside each interval.
    pub step: f64,
    pub budget: f64,
    /// Mixtures tried on every interval; pure controls when `None`.
    pub candidates: Option<Vec<Vec<f64>>>,
}

impl ValueQuery {
    /// `n_steps` equal intervals on `[s, T]` with pure candidates.
    pub fn uniform(model: &ControlModel, s: f64, mu: ParticleMeasure, n_steps: usize, step: f64) -> Self {
        Self {
            s,
            mu,
            grid: uniform_grid(s, model.horizon(), n_steps.max(1)),
            step,
            budget: DEFAULT_BUDGET,
            candidates: None,
        }
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SearchStats {
    /// `|candidates|^intervals`.
    pub sequences: f64,
    pub nodes_expanded: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone)]
pub struct ValueResult {
    pub value: f64,
    pub control: RelaxedControl,
    pub stats: SearchStats,
}

struct Search<'a> {
    model: &'a ControlModel,
    grid: &'a [f64],
    step: f64,
    candidates: Vec<Vec<f64>>,
    memo: HashMap<(usize, Vec<i64>), (f64, usize)>,
    stats: SearchStats,
}

fn key(m: &ParticleMeasure) -> Vec<i64> {
    m.points().iter().map(|x| (x / tol::CACHE_QUANTUM).round() as i64).collect()
}

impl Search<'_> {
    fn advance(&self, k: usize, m: &ParticleMeasure, c: usize) -> Result<(f64, ParticleMeasure)> {
        let (a, b) = (self.grid[k], self.grid[k + 1]);
        let xi = RelaxedControl::constant(a, b, self.candidates[c].clone())?;
        let traj = solve_continuity(self.model, a, b, m, &xi, self.step.min(b - a))?;
        Ok((running_cost_integral(self.model, &traj), traj.terminal()))
    }

    fn cost_to_go(&mut self, k: usize, m: &ParticleMeasure) -> Result<f64> {
        if k + 1 == self.grid.len() {
            return Ok(self.model.terminal_cost(m));
        }
        let key = (k, key(m));
        if let Some(&(v, _)) = self.memo.get(&key) {
            self.stats.cache_hits += 1;
            return Ok(v);
        }
        self.stats.nodes_expanded += 1;
        let mut best = (f64::INFINITY, 0);
        for c in 0..self.candidates.len() {
            let (run, next) = self.advance(k, m, c)?;
            let v = run + self.cost_to_go(k + 1, &next)?;
            if v < best.0 {
                best = (v, c);
            }
        }
        self.memo.insert(key, best);
        Ok(best.0)
    }

    fn choice(&self, k: usize, m: &ParticleMeasure) -> usize {
        self.memo[&(k, key(m))].1
    }
}

/// `Val(s, mu)` over piecewise-constant controls on `query.grid`.
pub fn value_dp(model: &ControlModel, query: &ValueQuery) -> Result<ValueResult> {
    let horizon = model.horizon();
    if query.mu.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: query.mu.dim() });
    }
    if !(query.s >= 0.0 && query.s <= horizon) {
        return Err(Error::InvalidArgument(format!("start {} outside [0, {horizon}]", query.s)));
    }
    if query.s == horizon {
        return Ok(ValueResult {
            value: model.terminal_cost(&query.mu),
            control: RelaxedControl::empty(horizon),
            stats: SearchStats { sequences: 1.0, ..Default::default() },
        });
    }
    let grid = &query.grid;
    if grid.len() < 2 || grid[0] != query.s || *grid.last().unwrap() != horizon {
        return Err(Error::InvalidArgument(format!(
            "control grid must run from {} to {horizon}",
            query.s
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("control grid must be increasing".into()));
    }
    let candidates = match &query.candidates {
        Some(c) if c.is_empty() => return Err(Error::InvalidArgument("empty candidate set".into())),
        Some(c) => c.clone(),
        None => (0..model.n_controls())
            .map(|u| {
                let mut z = vec![0.0; model.n_controls()];
                z[u] = 1.0;
                z
            })
            .collect(),
    };
    let intervals = grid.len() - 1;
    let sequences = (candidates.len() as f64).powi(intervals as i32);
    if sequences > query.budget {
        return Err(Error::Budget { required: sequences, budget: query.budget });
    }
    let mut search = Search {
        model,
        grid,
        step: query.step,
        candidates,
        memo: HashMap::new(),
        stats: SearchStats { sequences, ..Default::default() },
    };
    let value = search.cost_to_go(0, &query.mu)?;

    let mut m = query.mu.clone();
    let mut mixtures = Vec::with_capacity(intervals);
    for k in 0..intervals {
        let c = search.choice(k, &m);
        mixtures.push(search.candidates[c].clone());
        m = search.advance(k, &m, c)?.1;
    }
    let control = RelaxedControl::new(grid.clone(), mixtures)?;
    Ok(ValueResult { value, control, stats: search.stats })
}

#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    pub theta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Dynamic programming residual `|Val(s, mu) - min_xi [int_s^theta L + Val(theta, m_theta)]|`.
///
/// The left side searches `n_first + n_second` intervals whose grid has `theta` as a
/// node; the right side enumerates the `n_first` first-stage intervals explicitly and
/// calls a fresh search for the continuation.
pub fn dpp_residual(
    model: &ControlModel,
    s: f64,
    mu: &ParticleMeasure,
    theta: f64,
    n_first: usize,
    n_second: usize,
    step: f64,
    budget: f64,
) -> Result<DppReport> {
    let horizon = model.horizon();
    if !(s <= theta && theta <= horizon) {
        return Err(Error::InvalidArgument(format!("need s <= theta <= T, got {s}, {theta}")));
    }
    if theta > s && n_first == 0 {
        return Err(Error::InvalidArgument("first stage needs at least one interval".into()));
    }
    let tail_grid = |from: f64| uniform_grid(from, horizon, n_second.max(1));
    let mut full = if theta > s { uniform_grid(s, theta, n_first) } else { vec![s] };
    if theta < horizon {
        full.extend_from_slice(&tail_grid(theta)[1..]);
    }
    let lhs = value_dp(
        model,
        &ValueQuery { s, mu: mu.clone(), grid: full, step, budget, candidates: None },
    )?
    .value;

    let continuation = |m: &ParticleMeasure| -> Result<f64> {
        let grid = if theta < horizon { tail_grid(theta) } else { vec![theta] };
        Ok(value_dp(model, &ValueQuery { s: theta, mu: m.clone(), grid, step, budget, candidates: None })?.value)
    };
    let rhs = if theta == s {
        continuation(mu)?
    } else {
        let nu = model.n_controls();
        let total = (nu as f64).powi(n_first as i32);
        if total > budget {
            return Err(Error::Budget { required: total, budget });
        }
        let grid = uniform_grid(s, theta, n_first);
        let mut best = f64::INFINITY;
        let mut seq = vec![0usize; n_first];
        loop {
            let xi = RelaxedControl::pure(grid.clone(), &seq, nu)?;
            let traj = solve_continuity(model, s, theta, mu, &xi, step.min((theta - s) / n_first as f64))?;
            let v = running_cost_integral(model, &traj) + continuation(&traj.terminal())?;
            best = best.min(v);
            let mut k = 0;
            while k < n_first {
                seq[k] += 1;
                if seq[k] < nu {
                    break;
                }
                seq[k] = 0;
                k += 1;
            }
            if k == n_first {
                break;
            }
        }
        best
    };
    Ok(DppReport { theta, lhs, rhs, residual: (lhs - rhs).abs() })
}

/// `max |Val(T, mu) - G(mu)|` over the given measures.
pub fn boundary_check(model: &ControlModel, measures: &[ParticleMeasure]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for mu in measures {
        let q = ValueQuery::uniform(model, model.horizon(), mu.clone(), 1, 1.0);
        let v = value_dp(model, &q)?.value;
        worst = worst.max((v - model.terminal_cost(mu)).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::payoff_j;
    use crate::models;

    #[test]
    fn budget_is_enforced() {
        let model = models::translation(1, 1.0);
        let q = ValueQuery::uniform(&model, 0.0, ParticleMeasure::dirac(&[1.0]).unwrap(), 13, 0.1);
        match value_dp(&model, &q) {
            Err(Error::Budget { required, .. }) => assert_eq!(required, 3f64.powi(13)),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn optimal_control_reproduces_value() {
        let model = models::translation(1, 1.0);
        let q = ValueQuery::uniform(&model, 0.0, ParticleMeasure::uniform(1, vec![1.5, 2.5]).unwrap(), 6, 0.05);
        let res = value_dp(&model, &q).unwrap();
        let j = payoff_j(&model, 0.0, &q.mu, &res.control, 0.05).unwrap();
        assert!((j - res.value).abs() < 1e-12);
    }

    #[test]
    fn reaches_origin_in_half_the_horizon() {
        let model = models::translation(1, 1.0);
        let q = ValueQuery::uniform(&model, 0.0, ParticleMeasure::dirac(&[0.5]).unwrap(), 4, 0.25);
        assert!(value_dp(&model, &q).unwrap().value.abs() < 1e-24);
    }

    #[test]
    fn dpp_is_exact_at_theta_equal_s() {
        let model = models::translation(1, 1.0);
        let mu = ParticleMeasure::dirac(&[2.0]).unwrap();
        let r = dpp_residual(&model, 0.0, &mu, 0.0, 0, 4, 0.25, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn boundary_value_equals_terminal_cost() {
        let model = models::consensus(1, 1.0, 0.5, 0.1);
        let mus = [ParticleMeasure::uniform(1, vec![-1.0, 3.0]).unwrap()];
        assert_eq!(boundary_check(&model, &mus).unwrap(), 0.0);
    }
}
