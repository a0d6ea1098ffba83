//! Hamiltonian and viscosity-margin checks for value dictionaries.

use serde::Serialize;

use crate::dynamics::ControlModel;
use crate::error::{Error, Result};
use crate::io::Table;
use crate::measure::{dot, CovectorField, ParticleMeasure};
use crate::nonsmooth::{proximal_pair_from_anchor, ProximalPair, Side, ValueDictionary};

/// `H(s, mu, p) = min_u [ int p . f(s, x, mu, u) dmu + L(s, mu, u) ]` and the index of
/// the first minimizing control.
pub fn hamiltonian(model: &ControlModel, s: f64, mu: &ParticleMeasure, p: &CovectorField) -> Result<(f64, usize)> {
    if mu.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: mu.dim() });
    }
    p.check_matches(mu)?;
    let mut f = vec![0.0; mu.dim()];
    let mut best = (f64::INFINITY, 0);
    for u in 0..model.n_controls() {
        let mut acc = model.running_cost(s, mu, u);
        for (i, (x, w)) in mu.iter().enumerate() {
            model.drift(s, x, mu, u, &mut f);
            acc += w * dot(p.at(i), &f);
        }
        if acc < best.0 {
            best = (acc, u);
        }
    }
    Ok(best)
}

/// `C(D) = max_mu (1 + C_1^2 (1 + 2 sm(mu))^2)^(1/2)` over the given measures.
pub fn c_of_d<'a>(model: &ControlModel, measures: impl IntoIterator<Item = &'a ParticleMeasure>) -> f64 {
    let c1 = model.constants().c_1;
    measures
        .into_iter()
        .map(|m| (1.0 + (c1 * (1.0 + 2.0 * m.second_moment_root())).powi(2)).sqrt())
        .fold(1.0, f64::max)
}

/// `a + H` at the anchor of a proximal pair, with the barycentric covector field.
pub fn pair_hamiltonian_sum(model: &ControlModel, pair: &ProximalPair) -> Result<f64> {
    let (h, _) = hamiltonian(model, pair.anchor_t, &pair.anchor, &pair.anchor_field())?;
    Ok(pair.a + h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Solution {
    Sub,
    Super,
}

#[derive(Debug, Clone, Serialize)]
pub struct BellmanRow {
    pub id: usize,
    pub s: f64,
    pub anchor_t: f64,
    pub anchor_distance: f64,
    pub a: f64,
    pub hamiltonian: f64,
    pub margin: f64,
    pub gated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BellmanReport {
    pub kind: Solution,
    pub kappa: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub c_d: f64,
    pub rows: Vec<BellmanRow>,
}

impl BellmanReport {
    pub fn gated(&self) -> impl Iterator<Item = &BellmanRow> {
        self.rows.iter().filter(|r| r.gated)
    }

    pub fn skipped(&self) -> usize {
        self.rows.iter().filter(|r| !r.gated).count()
    }

    pub fn min_margin(&self) -> f64 {
        self.gated().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }

    /// Every gated point meets the tolerance and at least one point was gated.
    pub fn passes(&self) -> bool {
        self.gated().count() > 0 && self.min_margin() >= -self.tol
    }

    pub fn failing_points(&self) -> Vec<usize> {
        self.gated().filter(|r| r.margin < -self.tol).map(|r| r.id).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut table = Table::new(&["point_id", "s", "anchor_distance", "a", "H", "margin", "gate"]);
        for r in &self.rows {
            table.push(vec![
                r.id.into(),
                r.s.into(),
                r.anchor_distance.into(),
                r.a.into(),
                r.hamiltonian.into(),
                r.margin.into(),
                if r.gated { "gated" } else { "skipped" }.into(),
            ]);
        }
        table
    }
}

fn margins(
    kind: Solution,
    model: &ControlModel,
    dict: &ValueDictionary,
    points: &[(f64, ParticleMeasure)],
    kappa: f64,
    epsilon: f64,
    tol: f64,
) -> Result<BellmanReport> {
    let horizon = model.horizon();
    if let Some((s, _)) = points.iter().find(|(s, _)| !(*s > 0.0 && *s < horizon)) {
        return Err(Error::InvalidArgument(format!("test time {s} is outside (0, {horizon})")));
    }
    let c_d = c_of_d(model, dict.measures().iter().chain(points.iter().map(|p| &p.1)));
    let mut rows = Vec::with_capacity(points.len());
    for (id, (s, mu)) in points.iter().enumerate() {
        let my = match kind {
            Solution::Super => dict.inf_envelope(*s, mu, kappa)?,
            Solution::Sub => dict.sup_envelope(*s, mu, kappa)?,
        };
        let pair = proximal_pair_from_anchor(&my)?;
        debug_assert_eq!(pair.side, if kind == Solution::Super { Side::Inf } else { Side::Sup });
        let (h, _) = hamiltonian(model, pair.anchor_t, &pair.anchor, &pair.anchor_field())?;
        let margin = match kind {
            Solution::Super => c_d * epsilon - (pair.a + h),
            Solution::Sub => pair.a + h + c_d * epsilon,
        };
        rows.push(BellmanRow {
            id,
            s: *s,
            anchor_t: pair.anchor_t,
            anchor_distance: my.anchor_distance,
            a: pair.a,
            hamiltonian: h,
            margin,
            gated: dict.gate(kappa, *s, horizon),
        });
    }
    Ok(BellmanReport { kind, kappa, epsilon, tol, c_d, rows })
}

/// Subsolution margins `a + H + C(D) eps` from sup-envelope pairs; nonnegative up to
/// `tol` at every gated point means the check passes.
pub fn subsolution_margin(
    model: &ControlModel,
    dict: &ValueDictionary,
    points: &[(f64, ParticleMeasure)],
    kappa: f64,
    epsilon: f64,
    tol: f64,
) -> Result<BellmanReport> {
    margins(Solution::Sub, model, dict, points, kappa, epsilon, tol)
}

/// Supersolution margins `C(D) eps - (a + H)` from inf-envelope pairs.
pub fn supersolution_margin(
    model: &ControlModel,
    dict: &ValueDictionary,
    points: &[(f64, ParticleMeasure)],
    kappa: f64,
    epsilon: f64,
    tol: f64,
) -> Result<BellmanReport> {
    margins(Solution::Super, model, dict, points, kappa, epsilon, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::PointField;
    use crate::models;

    #[test]
    fn hamiltonian_picks_lowest_index_on_ties() {
        let model = models::translation(1, 1.0);
        let mu = ParticleMeasure::dirac(&[0.0]).unwrap();
        let (h, u) = hamiltonian(&model, 0.0, &mu, &PointField::zeros(1, 1)).unwrap();
        assert_eq!((h, u), (0.0, 0));
        let (h, u) = hamiltonian(&model, 0.0, &mu, &PointField::constant(&[1.0], 1)).unwrap();
        assert_eq!((h, u), (-1.0, 0));
        let (h, u) = hamiltonian(&model, 0.0, &mu, &PointField::constant(&[-2.0], 1)).unwrap();
        assert_eq!((h, u), (-2.0, 2));
    }

    #[test]
    fn c_of_d_grows_with_moment() {
        let model = models::translation(1, 1.0);
        let a = ParticleMeasure::dirac(&[0.0]).unwrap();
        let b = ParticleMeasure::dirac(&[2.0]).unwrap();
        assert_eq!(c_of_d(&model, [&a]), 2f64.sqrt());
        assert_eq!(c_of_d(&model, [&a, &b]), 26f64.sqrt());
    }

    #[test]
    fn rejects_terminal_test_points() {
        let model = models::translation(1, 1.0);
        let mu = ParticleMeasure::dirac(&[0.0]).unwrap();
        let dict = ValueDictionary::new(vec![(0.5, mu.clone(), 0.0)]).unwrap();
        assert!(supersolution_margin(&model, &dict, &[(1.0, mu)], 0.1, 0.0, 1e-3).is_err());
    }
}
