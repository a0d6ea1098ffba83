//! Proximal aiming feedback and the sample-and-hold certificates built from it.
//!
//! At each partition node the strategy anchors the current state in the
//! inf-envelope of the value dictionary, reads the covector field of the resulting
//! proximal pair on the current particles, and holds the control that minimizes the
//! anchored Hamiltonian integrand until the next node.

use std::sync::Arc;

use serde::Serialize;

use crate::bellman::{c_of_d, hamiltonian};
use crate::dynamics::{payoff_j, solve_continuity, uniform_grid, ControlModel, MeasureTrajectory, RelaxedControl};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::measure::{dot, ParticleMeasure};
use crate::nonsmooth::{proximal_pair_from_anchor, ProximalPair, ValueDictionary, ValueFunction};
use crate::value::{value_dp, ValueQuery, DEFAULT_BUDGET};

/// Time nodes `s_* = t_0 < t_1 < .. < t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("partition needs increasing nodes".into()));
        }
        Ok(Self { times })
    }

    pub fn uniform(s: f64, horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > s) {
            return Err(Error::InvalidArgument(format!("cannot split [{s}, {horizon}] into {n} steps")));
        }
        Self::new(uniform_grid(s, horizon, n))
    }

    /// Uniform partition with the fewest steps whose spacing is at most `alpha`.
    pub fn with_max_spacing(s: f64, horizon: f64, alpha: f64) -> Result<Self> {
        let n = ((horizon - s) / alpha - 1e-9).ceil().max(1.0) as usize;
        Self::uniform(s, horizon, n)
    }

    pub fn min_spacing(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Admissible parameters `(kappa, eps, alpha_lo, alpha_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParameterComplex {
    pub kappa: f64,
    pub epsilon: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
}

impl ParameterComplex {
    /// `eps <= alpha_lo^2`, `alpha_lo <= alpha_hi` and `rho_1(kappa) < 1`.
    pub fn validate(&self, dict: &ValueDictionary) -> Result<()> {
        let p = self;
        if !(p.kappa > 0.0 && p.epsilon > 0.0 && p.alpha_lo > 0.0 && p.alpha_lo <= p.alpha_hi) {
            return Err(Error::InvalidArgument(format!("inconsistent parameters {p:?}")));
        }
        if p.epsilon > p.alpha_lo * p.alpha_lo * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} exceeds alpha_lo^2 = {}",
                p.epsilon,
                p.alpha_lo * p.alpha_lo
            )));
        }
        let r = dict.rho1(p.kappa);
        if r >= 1.0 {
            return Err(Error::InvalidArgument(format!("rho_1(kappa) = {r} is not below 1")));
        }
        Ok(())
    }
}

/// Feedback built on a value dictionary at scale `kappa`.
#[derive(Debug, Clone)]
pub struct FeedbackStrategy {
    pub dict: Arc<ValueDictionary>,
    pub kappa: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct AimDecision {
    pub control: usize,
    pub pair: ProximalPair,
    pub anchor_distance: f64,
    /// Objective value for every control.
    pub objectives: Vec<f64>,
}

/// Control minimizing `int p(x) . f(t_bar, x, nu_bar, u) dmu(x) + L(t_bar, nu_bar, u)`,
/// where `p` is the pair's covector field averaged onto the atoms of `mu`. Ties go to
/// the lowest index.
pub fn aim_control(model: &ControlModel, strategy: &FeedbackStrategy, s: f64, mu: &ParticleMeasure) -> Result<AimDecision> {
    let my = strategy.dict.inf_envelope(s, mu, strategy.kappa)?;
    let pair = proximal_pair_from_anchor(&my)?;
    let p = pair.query_field();
    let mut f = vec![0.0; mu.dim()];
    let mut objectives = Vec::with_capacity(model.n_controls());
    let mut best = (f64::INFINITY, 0);
    for u in 0..model.n_controls() {
        let mut acc = model.running_cost(pair.anchor_t, &pair.anchor, u);
        for (i, (x, w)) in mu.iter().enumerate() {
            model.drift(pair.anchor_t, x, &pair.anchor, u, &mut f);
            acc += w * dot(p.at(i), &f);
        }
        objectives.push(acc);
        if acc < best.0 {
            best = (acc, u);
        }
    }
    Ok(AimDecision { control: best.1, pair, anchor_distance: my.anchor_distance, objectives })
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditStep {
    pub step: usize,
    pub s: f64,
    pub anchor_t: f64,
    pub anchor_distance: f64,
    pub a: f64,
    pub chosen_u: usize,
    /// `a + H` at the anchor with the barycentric covector field.
    pub a_plus_h: f64,
    /// `C(D) eps - (a + H)`.
    pub hamiltonian_margin: f64,
    pub gated: bool,
}

#[derive(Debug, Clone)]
pub struct ProcessRecord {
    pub trajectory: MeasureTrajectory,
    pub control: RelaxedControl,
    pub audit: Vec<AuditStep>,
    pub c_d: f64,
}

impl ProcessRecord {
    /// Smallest audit margin over gated steps, if any step was gated.
    pub fn worst_gated_margin(&self) -> Option<f64> {
        self.audit
            .iter()
            .filter(|a| a.gated)
            .map(|a| a.hamiltonian_margin)
            .reduce(f64::min)
    }

    pub fn audit_table(&self) -> Table {
        let mut table = Table::new(&[
            "step",
            "s_i",
            "anchor_t",
            "anchor_dist",
            "a_i",
            "chosen_u",
            "hamiltonian_margin",
            "gate",
        ]);
        for a in &self.audit {
            table.push(vec![
                a.step.into(),
                a.s.into(),
                a.anchor_t.into(),
                a.anchor_distance.into(),
                a.a.into(),
                a.chosen_u.into(),
                a.hamiltonian_margin.into(),
                if a.gated { "gated" } else { "skipped" }.into(),
            ]);
        }
        table
    }
}

/// Sample-and-hold process: aim at each node, hold the pure control to the next node.
pub fn run_process(
    model: &ControlModel,
    strategy: &FeedbackStrategy,
    s_star: f64,
    mu_star: &ParticleMeasure,
    partition: &Partition,
    step: f64,
) -> Result<ProcessRecord> {
    let times = &partition.times;
    if times[0] != s_star || *times.last().unwrap() != model.horizon() {
        return Err(Error::InvalidArgument(format!(
            "partition must run from {s_star} to {}",
            model.horizon()
        )));
    }
    let mut mu = mu_star.clone();
    let mut trajectory: Option<MeasureTrajectory> = None;
    let mut indices = Vec::with_capacity(partition.steps());
    let mut pending = Vec::with_capacity(partition.steps());
    let mut visited = vec![mu_star.clone()];
    for (i, w) in times.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let decision = aim_control(model, strategy, a, &mu)?;
        let (h, _) = hamiltonian(model, decision.pair.anchor_t, &decision.pair.anchor, &decision.pair.anchor_field())?;
        pending.push((i, a, decision.pair.anchor_t, decision.anchor_distance, decision.pair.a, decision.control, decision.pair.a + h));
        visited.push(decision.pair.anchor.clone());
        indices.push(decision.control);
        let xi = RelaxedControl::pure(vec![a, b], &[decision.control], model.n_controls())?;
        let piece = solve_continuity(model, a, b, &mu, &xi, step.min(b - a))?;
        mu = piece.terminal();
        visited.push(mu.clone());
        match trajectory.as_mut() {
            None => trajectory = Some(piece),
            Some(t) => t.append(piece)?,
        }
    }
    let c_d = c_of_d(model, strategy.dict.measures().iter().chain(visited.iter()));
    let horizon = model.horizon();
    let audit = pending
        .into_iter()
        .map(|(step, s, anchor_t, anchor_distance, a, chosen_u, a_plus_h)| AuditStep {
            step,
            s,
            anchor_t,
            anchor_distance,
            a,
            chosen_u,
            a_plus_h,
            hamiltonian_margin: c_d * strategy.epsilon - a_plus_h,
            gated: strategy.dict.gate(strategy.kappa, s, horizon),
        })
        .collect();
    Ok(ProcessRecord {
        trajectory: trajectory.expect("partition has a step"),
        control: RelaxedControl::pure(times.clone(), &indices, model.n_controls())?,
        audit,
        c_d,
    })
}

/// Payoff of the recorded sample-and-hold control.
pub fn payoff_feedback(model: &ControlModel, s_star: f64, mu_star: &ParticleMeasure, record: &ProcessRecord, step: f64) -> Result<f64> {
    payoff_j(model, s_star, mu_star, &record.control, step)
}

/// Initial point `(s_*, mu_*)` of a certificate run.
#[derive(Debug, Clone)]
pub struct ScenarioStart {
    pub label: String,
    pub s: f64,
    pub mu: ParticleMeasure,
}

/// Candidate values scanned by [`search_parameter_complex`].
#[derive(Debug, Clone, Serialize)]
pub struct SearchGrid {
    pub kappas: Vec<f64>,
    pub alpha_his: Vec<f64>,
    pub eps_factors: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            kappas: (0..8).map(|k| 0.5 * 0.5f64.powi(k)).collect(),
            alpha_his: vec![0.2, 0.1, 0.05, 0.025],
            eps_factors: vec![1.0, 0.25, 0.0625, 0.015625],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub complex: ParameterComplex,
    /// `phi(s_*, mu_*) + eta - J` per scenario.
    pub margins: Vec<f64>,
    pub c_d: f64,
    pub tried: usize,
}

fn terminal_hypothesis(model: &ControlModel, dict: &ValueDictionary, upper: bool) -> Result<()> {
    let horizon = model.horizon();
    for (k, e) in dict.entries().iter().enumerate() {
        if e.t != horizon {
            continue;
        }
        let g = model.terminal_cost(dict.entry_measure(k));
        let slack = 1e-12 * (1.0 + g.abs());
        if upper && e.value < g - slack {
            return Err(Error::Hypothesis(format!(
                "entry {k}: phi(T) = {} is below G = {g}",
                e.value
            )));
        }
        if !upper && e.value > g + slack {
            return Err(Error::Hypothesis(format!(
                "entry {k}: psi(T) = {} is above G = {g}",
                e.value
            )));
        }
    }
    Ok(())
}

fn stored_value(dict: &ValueDictionary, sc: &ScenarioStart) -> Result<f64> {
    dict.evaluate(sc.s, &sc.mu).map_err(|_| {
        Error::InvalidArgument(format!("scenario '{}' start is not stored in the dictionary", sc.label))
    })
}

/// Searches `kappa`, then `alpha_hi`, then `eps <= alpha_lo^2` for a complex under which
/// the feedback payoff stays within `eta` of `phi` on every scenario.
///
/// `eps` must also satisfy `T C(D) eps <= eta / 3`.
pub fn search_parameter_complex(
    model: &ControlModel,
    dict: Arc<ValueDictionary>,
    scenarios: &[ScenarioStart],
    eta: f64,
    grid: &SearchGrid,
    step: f64,
) -> Result<SearchOutcome> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta = {eta} must be positive")));
    }
    if scenarios.is_empty() {
        return Err(Error::InvalidArgument("no scenarios".into()));
    }
    terminal_hypothesis(model, &dict, true)?;
    let horizon = model.horizon();
    let phis: Vec<f64> = scenarios.iter().map(|sc| stored_value(&dict, sc)).collect::<Result<_>>()?;
    let c_d = c_of_d(model, dict.measures().iter().chain(scenarios.iter().map(|s| &s.mu)));
    let mut tried = 0;
    let mut best_seen: Option<(f64, ParameterComplex)> = None;
    for &kappa in &grid.kappas {
        if dict.rho1(kappa) >= 1.0 {
            continue;
        }
        for &alpha_hi in &grid.alpha_his {
            let partitions: Vec<Partition> = scenarios
                .iter()
                .map(|sc| Partition::with_max_spacing(sc.s, horizon, alpha_hi))
                .collect::<Result<_>>()?;
            let alpha_lo = partitions.iter().map(|p| p.min_spacing()).fold(f64::INFINITY, f64::min);
            let Some(epsilon) = grid
                .eps_factors
                .iter()
                .map(|f| f * alpha_lo * alpha_lo)
                .find(|eps| horizon * c_d * eps <= eta / 3.0)
            else {
                continue;
            };
            let complex = ParameterComplex { kappa, epsilon, alpha_lo, alpha_hi };
            complex.validate(&dict)?;
            tried += 1;
            let strategy = FeedbackStrategy { dict: dict.clone(), kappa, epsilon };
            let mut margins = Vec::with_capacity(scenarios.len());
            for ((sc, part), phi) in scenarios.iter().zip(&partitions).zip(&phis) {
                let rec = run_process(model, &strategy, sc.s, &sc.mu, part, step)?;
                let j = payoff_feedback(model, sc.s, &sc.mu, &rec, step)?;
                margins.push(phi + eta - j);
            }
            let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Ok(SearchOutcome { complex, margins, c_d, tried });
            }
            if best_seen.is_none_or(|(w, _)| worst > w) {
                best_seen = Some((worst, complex));
            }
        }
    }
    Err(Error::SearchExhausted(match best_seen {
        Some((w, c)) => format!("{tried} complexes tried; best worst-case margin {w} at {c:?}"),
        None => "no kappa in the grid has rho_1 below 1 with an admissible epsilon".into(),
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperRow {
    pub label: String,
    pub s: f64,
    pub phi: f64,
    pub payoff: f64,
    pub value: Option<f64>,
    pub margin: f64,
    pub value_margin: Option<f64>,
    pub worst_audit: Option<f64>,
    pub gated_steps: usize,
}

#[derive(Debug, Clone)]
pub struct UpperBoundReport {
    pub eta: f64,
    pub complex: ParameterComplex,
    pub c_d: f64,
    pub rows: Vec<UpperRow>,
    pub records: Vec<ProcessRecord>,
}

impl UpperBoundReport {
    /// Every feedback margin is nonnegative and every value cross-check is within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.margin >= 0.0 && r.value_margin.is_none_or(|m| m >= -tol))
    }

    /// Every gated audit step satisfies `a + H <= C(D) eps + tol`.
    pub fn audit_passes(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.worst_audit.is_none_or(|m| m >= -tol))
    }

    pub fn to_table(&self) -> Table {
        let mut table = Table::new(&["scenario", "s", "phi", "payoff", "value", "margin", "value_margin", "worst_audit", "gated_steps"]);
        for r in &self.rows {
            table.push(vec![
                r.label.clone().into(),
                r.s.into(),
                r.phi.into(),
                r.payoff.into(),
                r.value.unwrap_or(f64::NAN).into(),
                r.margin.into(),
                r.value_margin.unwrap_or(f64::NAN).into(),
                r.worst_audit.unwrap_or(f64::NAN).into(),
                r.gated_steps.into(),
            ]);
        }
        table
    }
}

/// Runs the feedback on every scenario under `complex` and reports
/// `phi(s_*, mu_*) + eta - J` together with a cross-check against `value_dp` on
/// `value_steps` intervals when given.
pub fn upper_bound_check(
    model: &ControlModel,
    dict: Arc<ValueDictionary>,
    scenarios: &[ScenarioStart],
    complex: &ParameterComplex,
    eta: f64,
    step: f64,
    value_steps: Option<usize>,
) -> Result<UpperBoundReport> {
    terminal_hypothesis(model, &dict, true)?;
    complex.validate(&dict)?;
    let strategy = FeedbackStrategy { dict: dict.clone(), kappa: complex.kappa, epsilon: complex.epsilon };
    let horizon = model.horizon();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut c_d: f64 = 1.0;
    for sc in scenarios {
        let phi = stored_value(&dict, sc)?;
        let part = Partition::with_max_spacing(sc.s, horizon, complex.alpha_hi)?;
        if part.min_spacing() < complex.alpha_lo * (1.0 - 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "scenario '{}' partition spacing {} is below alpha_lo",
                sc.label,
                part.min_spacing()
            )));
        }
        let rec = run_process(model, &strategy, sc.s, &sc.mu, &part, step)?;
        let payoff = payoff_feedback(model, sc.s, &sc.mu, &rec, step)?;
        let value = match value_steps {
            Some(n) => Some(value_dp(model, &ValueQuery::uniform(model, sc.s, sc.mu.clone(), n, step))?.value),
            None => None,
        };
        c_d = c_d.max(rec.c_d);
        rows.push(UpperRow {
            label: sc.label.clone(),
            s: sc.s,
            phi,
            payoff,
            value,
            margin: phi + eta - payoff,
            value_margin: value.map(|v| phi + eta - v),
            worst_audit: rec.worst_gated_margin(),
            gated_steps: rec.audit.iter().filter(|a| a.gated).count(),
        });
        records.push(rec);
    }
    Ok(UpperBoundReport { eta, complex: *complex, c_d, rows, records })
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerRow {
    pub label: String,
    pub s: f64,
    pub psi: f64,
    /// Minimal payoff over the searched control class.
    pub min_payoff: f64,
    pub margin: f64,
    pub worst_audit: Option<f64>,
    pub gated_steps: usize,
}

#[derive(Debug, Clone)]
pub struct LowerBoundReport {
    pub tol: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub c_d: f64,
    pub rows: Vec<LowerRow>,
    pub controls: Vec<RelaxedControl>,
}

impl LowerBoundReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.margin >= -self.tol)
    }

    pub fn to_table(&self) -> Table {
        let mut table = Table::new(&["scenario", "s", "psi", "min_payoff", "margin", "worst_audit", "gated_steps"]);
        for r in &self.rows {
            table.push(vec![
                r.label.clone().into(),
                r.s.into(),
                r.psi.into(),
                r.min_payoff.into(),
                r.margin.into(),
                r.worst_audit.unwrap_or(f64::NAN).into(),
                r.gated_steps.into(),
            ]);
        }
        table
    }
}

/// Checks `J(s_*, mu_*, xi) >= psi(s_*, mu_*) - tol` for every pure control on the
/// uniform `n_steps` grid (via the exact minimum from `value_dp`), and audits
/// `a + H + C(D) eps` from sup-envelope pairs along the minimizing trajectory.
#[allow(clippy::too_many_arguments)]
pub fn lower_bound_check(
    model: &ControlModel,
    psi: Arc<ValueDictionary>,
    scenarios: &[ScenarioStart],
    n_steps: usize,
    kappa: f64,
    epsilon: f64,
    tol: f64,
    step: f64,
) -> Result<LowerBoundReport> {
    terminal_hypothesis(model, &psi, false)?;
    let horizon = model.horizon();
    let mut rows = Vec::new();
    let mut controls = Vec::new();
    let mut audits = Vec::new();
    let mut visited: Vec<ParticleMeasure> = Vec::new();
    for sc in scenarios {
        let alpha = (horizon - sc.s) / n_steps as f64;
        if !(epsilon < alpha * alpha) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {epsilon} must be below the squared spacing {}",
                alpha * alpha
            )));
        }
        let psi_value = stored_value(&psi, sc)?;
        let q = ValueQuery::uniform(model, sc.s, sc.mu.clone(), n_steps, step).with_budget(DEFAULT_BUDGET);
        let res = value_dp(model, &q)?;
        let traj = solve_continuity(model, sc.s, horizon, &sc.mu, &res.control, step.min(alpha))?;
        let mut audit = Vec::new();
        for &t in &res.control.breakpoints()[..n_steps] {
            let k = traj.times().iter().position(|&x| x == t).expect("breakpoints are grid nodes");
            let m = traj.measure_at(k);
            let my = psi.sup_envelope(t, &m, kappa)?;
            let pair = proximal_pair_from_anchor(&my)?;
            let (h, _) = hamiltonian(model, pair.anchor_t, &pair.anchor, &pair.anchor_field())?;
            audit.push((t, pair.a + h, psi.gate(kappa, t, horizon)));
            visited.push(pair.anchor.clone());
            visited.push(m);
        }
        audits.push(audit);
        rows.push(LowerRow {
            label: sc.label.clone(),
            s: sc.s,
            psi: psi_value,
            min_payoff: res.value,
            margin: res.value - psi_value,
            worst_audit: None,
            gated_steps: 0,
        });
        controls.push(res.control);
    }
    let c_d = c_of_d(model, psi.measures().iter().chain(visited.iter()));
    for (row, audit) in rows.iter_mut().zip(audits) {
        row.gated_steps = audit.iter().filter(|a| a.2).count();
        row.worst_audit = audit.iter().filter(|a| a.2).map(|a| a.1 + c_d * epsilon).reduce(f64::min);
    }
    Ok(LowerBoundReport { tol, kappa, epsilon, c_d, rows, controls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    fn dirac(x: f64) -> ParticleMeasure {
        ParticleMeasure::dirac(&[x]).unwrap()
    }

    #[test]
    fn unit_covector_aims_left() {
        // Anchor at 0 with the query at 1 gives the covector +1/kappa^2.
        let model = models::translation(1, 1.0);
        let dict = ValueDictionary::new(vec![(0.5, dirac(0.0), 0.0)]).unwrap();
        let strategy = FeedbackStrategy { dict: Arc::new(dict), kappa: 1.0, epsilon: 0.01 };
        let d = aim_control(&model, &strategy, 0.5, &dirac(1.0)).unwrap();
        assert_eq!(d.control, 0);
        assert_eq!(d.objectives, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn partition_spacing() {
        let p = Partition::with_max_spacing(0.0, 1.0, 0.3).unwrap();
        assert_eq!(p.steps(), 4);
        assert!((p.max_spacing() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn complex_rejects_large_epsilon() {
        let dict = ValueDictionary::new(vec![(0.5, dirac(0.0), 0.0)]).unwrap();
        let c = ParameterComplex { kappa: 0.1, epsilon: 0.02, alpha_lo: 0.1, alpha_hi: 0.2 };
        assert!(c.validate(&dict).is_err());
    }

    #[test]
    fn terminal_hypothesis_rejects_low_phi() {
        let model = models::translation(1, 1.0);
        let dict = Arc::new(ValueDictionary::new(vec![(1.0, dirac(2.0), 3.0), (0.0, dirac(2.0), 1.0)]).unwrap());
        let sc = [ScenarioStart { label: "a".into(), s: 0.0, mu: dirac(2.0) }];
        let err = search_parameter_complex(&model, dict, &sc, 0.5, &SearchGrid::default(), 0.1);
        assert!(matches!(err, Err(Error::Hypothesis(_))));
    }
}
