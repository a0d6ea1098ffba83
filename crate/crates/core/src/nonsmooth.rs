//! Moreau–Yosida envelopes over a finite value dictionary and the subgradient checks
//! built on them.
//!
//! The inf-envelope of a dictionary `{(t_k, nu_k, v_k)}` is
//! `phi_kappa(s, mu) = min_k v_k + (|t_k - s|^2 + W2(mu, nu_k)^2) / (2 kappa^2)`, and
//! the sup-envelope is `psi^kappa = -(-psi)_kappa`. The minimizing entry is the anchor.
//! Both are exact on the finite dictionary: no relaxation and no approximate minimizer.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{
    barycenter, dist_sq, dot, glue_plans, CotangentAtom, CotangentSample, CovectorField, ParticleMeasure,
    PlanEntry, PointField, TransportPlan, VelocityField,
};
use crate::transport::{w2, wasserstein2};
use crate::tol;

/// Anything that can be evaluated at a point `(t, mu)`.
pub trait ValueFunction: Sync {
    fn evaluate(&self, t: f64, mu: &ParticleMeasure) -> Result<f64>;
}

/// Closure wrapper.
pub struct FnValue<F>(pub F);

impl<F> ValueFunction for FnValue<F>
where
    F: Fn(f64, &ParticleMeasure) -> f64 + Sync,
{
    fn evaluate(&self, t: f64, mu: &ParticleMeasure) -> Result<f64> {
        Ok((self.0)(t, mu))
    }
}

/// Concave nondecreasing piecewise-linear function with `omega(0) = 0`, constant after
/// its last knot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Modulus {
    knots: Vec<(f64, f64)>,
}

impl Modulus {
    pub fn zero() -> Self {
        Self { knots: vec![(0.0, 0.0)] }
    }

    /// Least concave nondecreasing majorant of `points` (pairs `(distance, increment)`).
    pub fn majorant(points: &[(f64, f64)]) -> Self {
        let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1 > 0.0).collect();
        if pts.is_empty() {
            return Self::zero();
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        let top = pts.iter().map(|p| p.1).fold(0.0, f64::max);
        let cut = pts.iter().position(|p| p.1 == top).unwrap();
        let mut hull: Vec<(f64, f64)> = vec![(0.0, 0.0)];
        for &p in &pts[..=cut] {
            if p.0 == hull.last().unwrap().0 {
                let last = hull.last_mut().unwrap();
                last.1 = last.1.max(p.1);
                continue;
            }
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        Self { knots: hull }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn sup(&self) -> f64 {
        self.knots.last().unwrap().1
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let k = self.knots.partition_point(|p| p.0 <= r);
        if k == self.knots.len() {
            return self.sup();
        }
        let (a, b) = (self.knots[k - 1], self.knots[k]);
        a.1 + (b.1 - a.1) * (r - a.0) / (b.0 - a.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DictEntry {
    pub t: f64,
    pub measure: usize,
    pub value: f64,
}

// Pair counts up to this use every increment exactly; above it increments are binned.
const EXACT_PAIRS: usize = 250_000;
const BINS: usize = 8192;

/// Finite stand-in for a value function: entries `(t, nu, value)` with the measures
/// deduplicated, their pairwise W2 distances, the empirical modulus and `c0`.
#[derive(Debug, Clone)]
pub struct ValueDictionary {
    measures: Vec<ParticleMeasure>,
    entries: Vec<DictEntry>,
    dist: Vec<f64>,
    index: HashMap<(u64, usize), usize>,
    measure_index: HashMap<Vec<u64>, usize>,
    modulus: Modulus,
    c0: f64,
}

fn measure_key(mu: &ParticleMeasure) -> Vec<u64> {
    let mut key = Vec::with_capacity(1 + mu.points().len() + mu.len());
    key.push(mu.dim() as u64);
    key.extend(mu.points().iter().map(|x| x.to_bits()));
    key.extend(mu.weights().iter().map(|x| x.to_bits()));
    key
}

impl ValueDictionary {
    pub fn new(entries: Vec<(f64, ParticleMeasure, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidDictionary("no entries".into()));
        }
        let dim = entries[0].1.dim();
        let mut measures = Vec::new();
        let mut measure_index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut list = Vec::with_capacity(entries.len());
        for (t, mu, value) in entries {
            if mu.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: mu.dim() });
            }
            if !t.is_finite() || !value.is_finite() {
                return Err(Error::InvalidDictionary(format!("non-finite entry at t = {t}")));
            }
            let key = measure_key(&mu);
            let k = match measure_index.get(&key) {
                Some(&k) => k,
                None => {
                    measures.push(mu);
                    measure_index.insert(key, measures.len() - 1);
                    measures.len() - 1
                }
            };
            list.push(DictEntry { t, measure: k, value });
        }
        let n = measures.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| if j <= i { Ok(0.0) } else { w2(&measures[i], &measures[j]) })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                dist[i * n + j] = rows[i][j];
                dist[j * n + i] = rows[i][j];
            }
        }
        Self::assemble(measures, measure_index, list, dist)
    }

    fn assemble(
        measures: Vec<ParticleMeasure>,
        measure_index: HashMap<Vec<u64>, usize>,
        entries: Vec<DictEntry>,
        dist: Vec<f64>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (k, e) in entries.iter().enumerate() {
            index.entry((e.t.to_bits(), e.measure)).or_insert(k);
        }
        let c0 = entries.iter().map(|e| e.value.abs()).fold(0.0, f64::max);
        let mut dict = Self {
            measures,
            entries,
            dist,
            index,
            measure_index,
            modulus: Modulus::zero(),
            c0,
        };
        dict.modulus = dict.empirical_modulus()?;
        Ok(dict)
    }

    /// Samples `f` at every point.
    pub fn sample<F>(points: Vec<(f64, ParticleMeasure)>, f: F) -> Result<Self>
    where
        F: Fn(f64, &ParticleMeasure) -> f64,
    {
        let entries = points
            .into_iter()
            .map(|(t, mu)| {
                let v = f(t, &mu);
                (t, mu, v)
            })
            .collect();
        Self::new(entries)
    }

    /// Same points, new values `f(t, nu, old_value)`. Reuses the distance table.
    pub fn map_values<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(f64, &ParticleMeasure, f64) -> f64,
    {
        let entries = self
            .entries
            .iter()
            .map(|e| DictEntry { value: f(e.t, &self.measures[e.measure], e.value), ..*e })
            .collect();
        Self::assemble(self.measures.clone(), self.measure_index.clone(), entries, self.dist.clone())
    }

    /// Raises `c0` above the default `max |value|`.
    pub fn with_c0(mut self, c0: f64) -> Result<Self> {
        if c0 < self.c0 {
            return Err(Error::InvalidDictionary(format!("c0 = {c0} is below max |value| = {}", self.c0)));
        }
        self.c0 = c0;
        Ok(self)
    }

    fn empirical_modulus(&self) -> Result<Modulus> {
        let n = self.entries.len();
        let nm = self.measures.len();
        let pair = |i: usize, j: usize| -> (f64, f64) {
            let (a, b) = (&self.entries[i], &self.entries[j]);
            let w = self.dist[a.measure * nm + b.measure];
            let dt = a.t - b.t;
            ((dt * dt + w * w).sqrt(), (a.value - b.value).abs())
        };
        let zero_conflict = (0..n).into_par_iter().find_map_first(|i| {
            (i + 1..n).find_map(|j| {
                let (d, dv) = pair(i, j);
                (d <= tol::METRIC && dv > 1e-12).then_some((i, j, dv))
            })
        });
        if let Some((i, j, dv)) = zero_conflict {
            return Err(Error::InvalidDictionary(format!(
                "entries {i} and {j} coincide but their values differ by {dv}"
            )));
        }
        let total_pairs = n * n.saturating_sub(1) / 2;
        if total_pairs <= EXACT_PAIRS {
            let mut pts = Vec::with_capacity(total_pairs);
            for i in 0..n {
                for j in i + 1..n {
                    let (d, dv) = pair(i, j);
                    if d > tol::METRIC {
                        pts.push((d, dv));
                    }
                }
            }
            return Ok(Modulus::majorant(&pts));
        }
        // Binned increments: in each distance bin keep the smallest distance and the
        // largest increment. Their majorant dominates every raw pair because it is
        // nondecreasing.
        let t_lo = self.entries.iter().map(|e| e.t).fold(f64::INFINITY, f64::min);
        let t_hi = self.entries.iter().map(|e| e.t).fold(f64::NEG_INFINITY, f64::max);
        let w_max = self.dist.iter().copied().fold(0.0, f64::max);
        let d_max = ((t_hi - t_lo).powi(2) + w_max * w_max).sqrt() * (1.0 + 1e-12) + 1e-300;
        let fold_bins = |mut acc: Vec<(f64, f64)>, i: usize| {
            for j in i + 1..n {
                let (d, dv) = pair(i, j);
                if d <= tol::METRIC {
                    continue;
                }
                let b = ((d / d_max) * BINS as f64) as usize;
                let slot = &mut acc[b.min(BINS - 1)];
                slot.0 = slot.0.min(d);
                slot.1 = slot.1.max(dv);
            }
            acc
        };
        let bins = (0..n)
            .into_par_iter()
            .fold(|| vec![(f64::INFINITY, 0.0); BINS], fold_bins)
            .reduce(
                || vec![(f64::INFINITY, 0.0); BINS],
                |a, b| a.iter().zip(&b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect(),
            );
        let pts: Vec<(f64, f64)> = bins.into_iter().filter(|b| b.0.is_finite()).collect();
        Ok(Modulus::majorant(&pts))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn measures(&self) -> &[ParticleMeasure] {
        &self.measures
    }

    pub fn entry_measure(&self, k: usize) -> &ParticleMeasure {
        &self.measures[self.entries[k].measure]
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// Index of the entry stored at exactly `(t, mu)`.
    pub fn find(&self, t: f64, mu: &ParticleMeasure) -> Option<usize> {
        let m = *self.measure_index.get(&measure_key(mu))?;
        self.index.get(&(t.to_bits(), m)).copied()
    }

    /// Every stored point `(t, nu)`.
    pub fn points(&self) -> Vec<(f64, ParticleMeasure)> {
        self.entries.iter().map(|e| (e.t, self.measures[e.measure].clone())).collect()
    }

    /// `rho_1(kappa) = kappa sqrt(2) omega(kappa sqrt(2 c0))^(1/2) ∧ kappa sqrt(2 c0)`.
    pub fn rho1(&self, kappa: f64) -> f64 {
        let r = kappa * (2.0 * self.c0).sqrt();
        (kappa * 2f64.sqrt() * self.modulus.eval(r).sqrt()).min(r)
    }

    /// `rho_3(kappa) = omega(kappa rho') + rho' / 2` with `rho' = sqrt(2) omega(2 kappa sqrt(c0))^(1/2)`.
    pub fn rho3(&self, kappa: f64) -> f64 {
        let rp = 2f64.sqrt() * self.modulus.eval(2.0 * kappa * self.c0.sqrt()).sqrt();
        self.modulus.eval(kappa * rp) + 0.5 * rp
    }

    /// Whether `s` lies far enough inside `(0, horizon)` for the envelope at scale `kappa`.
    pub fn gate(&self, kappa: f64, s: f64, horizon: f64) -> bool {
        self.rho1(kappa) < 1f64.min(s).min(horizon - s)
    }

    fn distances_from(&self, mu: &ParticleMeasure) -> Result<Vec<f64>> {
        if let Some(&k) = self.measure_index.get(&measure_key(mu)) {
            let n = self.measures.len();
            return Ok(self.dist[k * n..(k + 1) * n].to_vec());
        }
        self.measures.par_iter().map(|nu| w2(mu, nu)).collect()
    }

    fn best_entry(&self, s: f64, dists: &[f64], kappa: f64, side: Side) -> (usize, f64) {
        let inv = 1.0 / (2.0 * kappa * kappa);
        let mut best = (usize::MAX, f64::INFINITY);
        for (k, e) in self.entries.iter().enumerate() {
            let w = dists[e.measure];
            let pen = ((e.t - s).powi(2) + w * w) * inv;
            let obj = match side {
                Side::Inf => e.value + pen,
                Side::Sup => -e.value + pen,
            };
            if obj < best.1 {
                best = (k, obj);
            }
        }
        best
    }

    fn envelope(&self, s: f64, mu: &ParticleMeasure, kappa: f64, side: Side) -> Result<MoreauYosida> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidArgument(format!("kappa = {kappa} must be positive")));
        }
        let dists = self.distances_from(mu)?;
        let (k, obj) = self.best_entry(s, &dists, kappa, side);
        let e = self.entries[k];
        let anchor_measure = self.measures[e.measure].clone();
        let ot = wasserstein2(mu, &anchor_measure)?;
        let w = dists[e.measure];
        Ok(MoreauYosida {
            side,
            kappa,
            value: match side {
                Side::Inf => obj,
                Side::Sup => -obj,
            },
            anchor: k,
            anchor_t: e.t,
            anchor_value: e.value,
            anchor_measure,
            plan: ot.plan,
            anchor_distance: ((e.t - s).powi(2) + w * w).sqrt(),
            query_t: s,
        })
    }

    /// `phi_kappa(s, mu)`, ties resolved to the lowest entry index.
    pub fn inf_envelope(&self, s: f64, mu: &ParticleMeasure, kappa: f64) -> Result<MoreauYosida> {
        self.envelope(s, mu, kappa, Side::Inf)
    }

    /// `psi^kappa(s, mu)`, ties resolved to the lowest entry index.
    pub fn sup_envelope(&self, s: f64, mu: &ParticleMeasure, kappa: f64) -> Result<MoreauYosida> {
        self.envelope(s, mu, kappa, Side::Sup)
    }

    /// Envelope at a stored entry, reusing the distance table.
    fn envelope_value_at_entry(&self, k: usize, kappa: f64, side: Side) -> f64 {
        let e = self.entries[k];
        let n = self.measures.len();
        let dists = &self.dist[e.measure * n..(e.measure + 1) * n];
        let (_, obj) = self.best_entry(e.t, dists, kappa, side);
        match side {
            Side::Inf => obj,
            Side::Sup => -obj,
        }
    }

    /// Slack in the two minimality inequalities at an anchor: `phi(s, mu) - phi_kappa(s, mu)`
    /// when `(s, mu)` is stored, and the gap from the anchor objective to the runner-up.
    pub fn ekeland_residuals(&self, s: f64, mu: &ParticleMeasure, my: &MoreauYosida) -> Result<(Option<f64>, f64)> {
        let own = self.find(s, mu).map(|k| match my.side {
            Side::Inf => self.entries[k].value - my.value,
            Side::Sup => my.value - self.entries[k].value,
        });
        let dists = self.distances_from(mu)?;
        let inv = 1.0 / (2.0 * my.kappa * my.kappa);
        let best = match my.side {
            Side::Inf => my.value,
            Side::Sup => -my.value,
        };
        let mut runner_up = f64::INFINITY;
        for (k, e) in self.entries.iter().enumerate() {
            if k == my.anchor {
                continue;
            }
            let w = dists[e.measure];
            let pen = ((e.t - s).powi(2) + w * w) * inv;
            let obj = match my.side {
                Side::Inf => e.value + pen,
                Side::Sup => -e.value + pen,
            };
            runner_up = runner_up.min(obj - best);
        }
        Ok((own, if runner_up.is_finite() { runner_up } else { 0.0 }))
    }
}

impl ValueFunction for ValueDictionary {
    fn evaluate(&self, t: f64, mu: &ParticleMeasure) -> Result<f64> {
        self.find(t, mu)
            .map(|k| self.entries[k].value)
            .ok_or(Error::NotInDictionary { t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    /// Inf-convolution; produces subgradients.
    Inf,
    /// Sup-convolution; produces supergradients.
    Sup,
}

/// Result of an envelope query.
#[derive(Debug, Clone)]
pub struct MoreauYosida {
    pub side: Side,
    pub kappa: f64,
    pub value: f64,
    pub anchor: usize,
    pub anchor_t: f64,
    pub anchor_value: f64,
    pub anchor_measure: ParticleMeasure,
    /// Optimal plan from the query measure to the anchor measure.
    pub plan: TransportPlan,
    pub anchor_distance: f64,
    pub query_t: f64,
}

/// Proximal sub- or supergradient at an anchor, built from the envelope's optimal plan.
#[derive(Debug, Clone)]
pub struct ProximalPair {
    pub side: Side,
    pub kappa: f64,
    /// Time component.
    pub a: f64,
    /// Covectors based at the anchor measure's atoms.
    pub gamma: CotangentSample,
    pub anchor_t: f64,
    pub anchor: ParticleMeasure,
    pub query_t: f64,
    pub query: ParticleMeasure,
    pub plan: TransportPlan,
}

/// Pair attached to the anchor of `my`.
///
/// For the inf-envelope, `a = (s - t_bar) / kappa^2` and
/// `gamma = (p2, (p1 - p2) / kappa^2) # plan`. For the sup-envelope both signs flip.
pub fn proximal_pair_from_anchor(my: &MoreauYosida) -> Result<ProximalPair> {
    let k2 = 1.0 / (my.kappa * my.kappa);
    let sign = match my.side {
        Side::Inf => 1.0,
        Side::Sup => -1.0,
    };
    let plan = &my.plan;
    let atoms = plan
        .entries
        .iter()
        .map(|e| {
            let x = plan.source.point(e.i);
            let z = plan.target.point(e.j);
            CotangentAtom {
                x: z.to_vec(),
                q: x.iter().zip(z).map(|(a, b)| sign * k2 * (a - b)).collect(),
                mass: e.mass,
            }
        })
        .collect();
    Ok(ProximalPair {
        side: my.side,
        kappa: my.kappa,
        a: sign * k2 * (my.query_t - my.anchor_t),
        gamma: CotangentSample::new(plan.source.dim(), atoms)?,
        anchor_t: my.anchor_t,
        anchor: my.anchor_measure.clone(),
        query_t: my.query_t,
        query: plan.source.clone(),
        plan: plan.clone(),
    })
}

impl ProximalPair {
    /// Barycentric covector field on the anchor measure, atom for atom.
    pub fn anchor_field(&self) -> CovectorField {
        let (base, field) = barycenter(&self.gamma);
        align_field(&base, &field, &self.anchor)
    }

    /// The same covectors averaged over the query side of the plan, one per query atom.
    pub fn query_field(&self) -> CovectorField {
        let k2 = 1.0 / (self.kappa * self.kappa);
        let sign = match self.side {
            Side::Inf => 1.0,
            Side::Sup => -1.0,
        };
        let mu = &self.plan.source;
        let nu = &self.plan.target;
        let d = mu.dim();
        let mut vals = vec![0.0; d * mu.len()];
        for e in &self.plan.entries {
            let (x, z) = (mu.point(e.i), nu.point(e.j));
            for c in 0..d {
                vals[e.i * d + c] += e.mass * sign * k2 * (x[c] - z[c]);
            }
        }
        for i in 0..mu.len() {
            let w = mu.weight(i);
            if w > 0.0 {
                vals[i * d..(i + 1) * d].iter_mut().for_each(|v| *v /= w);
            }
        }
        PointField::new(d, vals).expect("finite field")
    }
}

/// Re-indexes a field given on the merged atoms of `base` onto the atoms of `target`.
fn align_field(base: &ParticleMeasure, field: &CovectorField, target: &ParticleMeasure) -> CovectorField {
    PointField::from_fn(target, |x, out| {
        match (0..base.len()).find(|&k| base.point(k) == x) {
            Some(k) => out.copy_from_slice(field.at(k)),
            None => out.fill(0.0),
        }
    })
}

/// Test point for the proximal inequality: `(t, nu)` and a coupling `beta` between the
/// atoms of `gamma` and the atoms of `nu`, given as `(gamma atom, nu atom, mass)`.
#[derive(Debug, Clone)]
pub struct ProxProbe {
    pub t: f64,
    pub nu: ParticleMeasure,
    pub coupling: Vec<(usize, usize, f64)>,
}

/// Random couplings of `gamma` with randomly chosen candidate points.
pub fn random_probes<R: Rng>(
    gamma: &CotangentSample,
    candidates: &[(f64, ParticleMeasure)],
    count: usize,
    rng: &mut R,
) -> Vec<ProxProbe> {
    let left: Vec<f64> = gamma.atoms().iter().map(|a| a.mass).collect();
    (0..count)
        .map(|_| {
            let (t, nu) = candidates[rng.gen_range(0..candidates.len())].clone();
            let coupling = random_coupling(&left, nu.weights(), rng);
            ProxProbe { t, nu, coupling }
        })
        .collect()
}

/// North-west corner rule on randomly permuted atoms.
pub fn random_coupling<R: Rng>(a: &[f64], b: &[f64], rng: &mut R) -> Vec<(usize, usize, f64)> {
    let mut ia: Vec<usize> = (0..a.len()).collect();
    let mut ib: Vec<usize> = (0..b.len()).collect();
    ia.shuffle(rng);
    ib.shuffle(rng);
    let mut ra: Vec<f64> = a.to_vec();
    let mut rb: Vec<f64> = b.to_vec();
    let (mut p, mut q) = (0, 0);
    let mut out = Vec::new();
    while p < ia.len() && q < ib.len() {
        let (i, j) = (ia[p], ib[q]);
        let m = ra[i].min(rb[j]);
        if m > 0.0 {
            out.push((i, j, m));
        }
        ra[i] -= m;
        rb[j] -= m;
        if ra[i] <= tol::MASS_EPS {
            p += 1;
        }
        if rb[j] <= tol::MASS_EPS {
            q += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub margins: Vec<f64>,
    pub sigma: f64,
    pub min_margin: f64,
}

impl ProbeReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.min_margin >= -tol
    }
}

/// Proximal inequality at the pair's anchor for every probe.
///
/// For a subgradient the margin is
/// `phi(t, nu) - phi(t_bar, nu_bar) - [a (t - t_bar) + int q.(x' - x) dbeta
///  - sigma (|t - t_bar|^2 + int |x' - x|^2 dbeta) - eps (|t - t_bar|^2 + W2^2)^(1/2)]`,
/// mirrored for supergradients. With `sigma = None` the smallest nonnegative `sigma`
/// making every margin nonnegative is fitted and used.
pub fn check_prox_subgradient(
    phi: &dyn ValueFunction,
    pair: &ProximalPair,
    probes: &[ProxProbe],
    sigma: Option<f64>,
    epsilon: f64,
) -> Result<ProbeReport> {
    let base_value = phi.evaluate(pair.anchor_t, &pair.anchor)?;
    let atoms = pair.gamma.atoms();
    let mut parts = Vec::with_capacity(probes.len());
    for (n, probe) in probes.iter().enumerate() {
        let mut rows = vec![0.0; atoms.len()];
        let mut cols = vec![0.0; probe.nu.len()];
        let mut lin = 0.0;
        let mut quad = 0.0;
        for &(g, j, m) in &probe.coupling {
            if g >= atoms.len() || j >= probe.nu.len() || !(m >= 0.0) {
                return Err(Error::InvalidPlan(format!("probe {n} has a bad coupling entry")));
            }
            rows[g] += m;
            cols[j] += m;
            let x = &atoms[g].x;
            let xp = probe.nu.point(j);
            let disp: Vec<f64> = xp.iter().zip(x).map(|(a, b)| a - b).collect();
            lin += m * dot(&atoms[g].q, &disp);
            quad += m * dist_sq(xp, x);
        }
        let bad_row = rows.iter().zip(atoms).any(|(r, a)| (r - a.mass).abs() > tol::MARGINAL);
        let bad_col = cols.iter().zip(probe.nu.weights()).any(|(c, w)| (c - w).abs() > tol::MARGINAL);
        if bad_row || bad_col {
            return Err(Error::InvalidPlan(format!("probe {n} coupling has wrong marginals")));
        }
        let dt = probe.t - pair.anchor_t;
        let lin = pair.a * dt + lin;
        let quad = dt * dt + quad;
        let eps_term = if epsilon > 0.0 {
            let w = w2(&probe.nu, &pair.anchor)?;
            epsilon * (dt * dt + w * w).sqrt()
        } else {
            0.0
        };
        let dphi = phi.evaluate(probe.t, &probe.nu)? - base_value;
        // margin = core + sigma * quad
        let core = match pair.side {
            Side::Inf => dphi - lin + eps_term,
            Side::Sup => lin - dphi + eps_term,
        };
        parts.push((core, quad));
    }
    let sigma = match sigma {
        Some(s) => s,
        None => parts
            .iter()
            .filter(|(c, _)| *c < 0.0)
            .map(|(c, q)| if *q > 0.0 { -c / q } else { f64::INFINITY })
            .fold(0.0, f64::max),
    };
    let margins: Vec<f64> = parts
        .iter()
        .map(|(c, q)| if *q == 0.0 { *c } else { c + sigma * q })
        .collect();
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ProbeReport { margins, sigma, min_margin })
}

/// Step sizes used for directional difference quotients.
pub const DEFAULT_STEPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Serialize)]
pub struct DirectionalReport {
    /// `None` marks a zero direction, which is skipped.
    pub margins: Vec<Option<f64>>,
    pub min_margin: f64,
}

impl DirectionalReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.min_margin >= -tol
    }
}

/// Directional epsilon-subgradient test of `(a, p)` at `(s, mu)` along `(theta, v)`.
///
/// The lower limit over `h -> 0` is replaced by the minimum over the second half of
/// `steps`; this can refute membership but never prove it. Supergradients use the
/// mirrored quotient.
#[allow(clippy::too_many_arguments)]
pub fn check_directional_subgradient(
    phi: &dyn ValueFunction,
    s: f64,
    mu: &ParticleMeasure,
    a: f64,
    p: &CovectorField,
    side: Side,
    epsilon: f64,
    directions: &[(f64, VelocityField)],
    steps: &[f64],
) -> Result<DirectionalReport> {
    p.check_matches(mu)?;
    if steps.is_empty() {
        return Err(Error::InvalidArgument("no step sizes".into()));
    }
    let base = phi.evaluate(s, mu)?;
    let tail = &steps[steps.len() / 2..];
    let mut margins = Vec::with_capacity(directions.len());
    for (theta, v) in directions {
        v.check_matches(mu)?;
        let norm = (theta * theta + v.norm(mu).powi(2)).sqrt();
        if norm == 0.0 {
            margins.push(None);
            continue;
        }
        let lin = a * theta + p.pair(v, mu);
        let mut worst = f64::INFINITY;
        for &h in tail {
            let pts = mu.points().iter().zip(v.values()).map(|(x, vx)| x + h * vx).collect();
            let moved = mu.with_points(pts)?;
            let q = (phi.evaluate(s + h * theta, &moved)? - base) / h;
            let m = match side {
                Side::Inf => q - lin,
                Side::Sup => lin - q,
            };
            worst = worst.min(m);
        }
        margins.push(Some(worst + epsilon * norm));
    }
    let min_margin = margins.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(DirectionalReport { margins, min_margin })
}

/// Random directions `(theta, v)` with entries uniform in `[-1, 1]`.
pub fn random_directions<R: Rng>(mu: &ParticleMeasure, count: usize, rng: &mut R) -> Vec<(f64, VelocityField)> {
    (0..count)
        .map(|_| {
            let theta = rng.gen_range(-1.0..=1.0);
            let v = PointField::from_fn(mu, |_, out| out.iter_mut().for_each(|o| *o = rng.gen_range(-1.0..=1.0)));
            (theta, v)
        })
        .collect()
}

/// Shift probe: a new point `(s', mu')` and a plan from the query measure to `mu'`.
#[derive(Debug, Clone)]
pub struct ShiftProbe {
    pub t: f64,
    pub plan: TransportPlan,
}

/// Slack `rhs - lhs` of the envelope shift inequality at `(s, mu)` for each probe:
///
/// `phi_kappa(s', mu') <= phi_kappa(s, mu) + (s - t_bar)(s' - s) / kappa^2
///   + int (x - z).(x' - x) dvarpi / kappa^2 + (|s' - s|^2 + int |x' - x|^2 dpi) / (2 kappa^2)`
///
/// where `varpi` glues the anchor plan with the probe plan through `mu`.
pub fn shift_inequality_check(
    dict: &ValueDictionary,
    s: f64,
    mu: &ParticleMeasure,
    kappa: f64,
    probes: &[ShiftProbe],
) -> Result<Vec<f64>> {
    let my = dict.inf_envelope(s, mu, kappa)?;
    let k2 = 1.0 / (kappa * kappa);
    probes
        .iter()
        .map(|probe| {
            if probe.plan.source != *mu {
                return Err(Error::InvalidPlan("probe plan does not start at the query measure".into()));
            }
            let glued = glue_plans(&my.plan, &probe.plan)?;
            let mut cross = 0.0;
            for e in &glued.entries {
                let x = glued.base.point(e.i);
                let z = glued.first.point(e.j);
                let xp = glued.second.point(e.k);
                let xz: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                let step: Vec<f64> = xp.iter().zip(x).map(|(a, b)| a - b).collect();
                cross += e.mass * dot(&xz, &step);
            }
            let ds = probe.t - s;
            let rhs = my.value
                + k2 * (s - my.anchor_t) * ds
                + k2 * cross
                + 0.5 * k2 * (ds * ds + probe.plan.cost());
            let lhs = dict.inf_envelope(probe.t, &probe.plan.target, kappa)?.value;
            Ok(rhs - lhs)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub kappa: f64,
    /// `max (phi - phi_kappa)` over stored entries.
    pub gap: f64,
    pub rho3: f64,
}

/// Largest gap between the stored values and their inf-envelope.
pub fn envelope_gap(dict: &ValueDictionary, kappa: f64) -> GapReport {
    let gap = (0..dict.len())
        .into_par_iter()
        .map(|k| dict.entries[k].value - dict.envelope_value_at_entry(k, kappa, Side::Inf))
        .reduce(|| 0.0, f64::max);
    GapReport { kappa, gap, rho3: dict.rho3(kappa) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cone {
    /// `c (F - Id)` with `(Id, F)` optimal.
    Minus,
    /// `c (Id - F)` with `(Id, F)` optimal.
    Plus,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeCheck {
    pub member: bool,
    pub scale: f64,
    pub map_cost: f64,
    pub optimal_cost: f64,
}

/// Whether the barycentric field of `gamma` is `scale (F - Id)` (or `scale (Id - F)`)
/// for a map `F` whose induced plan is optimal. Optimality is checked by re-solving the
/// transport problem from the base measure to `F # base`.
///
/// For finitely many distinct atoms every field lies in the cone for a large enough
/// scale, so membership is decided at the given scale.
pub fn displacement_cone_check(gamma: &CotangentSample, scale: f64, cone: Cone) -> Result<ConeCheck> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("cone scale {scale} must be positive")));
    }
    let (base, field) = barycenter(gamma);
    if field.values().iter().all(|v| *v == 0.0) {
        return Ok(ConeCheck { member: true, scale, map_cost: 0.0, optimal_cost: 0.0 });
    }
    let sign = match cone {
        Cone::Minus => 1.0,
        Cone::Plus => -1.0,
    };
    let d = base.dim();
    let mut pts = Vec::with_capacity(base.points().len());
    for i in 0..base.len() {
        for c in 0..d {
            pts.push(base.point(i)[c] + sign * field.at(i)[c] / scale);
        }
    }
    let image = base.with_points(pts)?;
    let entries = (0..base.len()).map(|i| PlanEntry { i, j: i, mass: base.weight(i) }).collect();
    let map_plan = TransportPlan::new(base.clone(), image.clone(), entries)?;
    let map_cost = map_plan.cost();
    let optimal_cost = wasserstein2(&base, &image)?.cost;
    let member = map_cost <= optimal_cost + tol::METRIC * (1.0 + optimal_cost);
    Ok(ConeCheck { member, scale, map_cost, optimal_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dirac(x: f64) -> ParticleMeasure {
        ParticleMeasure::dirac(&[x]).unwrap()
    }

    #[test]
    fn majorant_is_concave_and_dominates() {
        let pts = [(1.0, 1.0), (2.0, 1.5), (3.0, 1.2), (0.5, 0.2), (4.0, 2.0)];
        let m = Modulus::majorant(&pts);
        for &(d, v) in &pts {
            assert!(m.eval(d) >= v - 1e-12);
        }
        assert_eq!(m.eval(0.0), 0.0);
        assert_eq!(m.eval(10.0), 2.0);
        let k = m.knots();
        for w in k.windows(3) {
            let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
            assert!(s2 <= s1 + 1e-12);
        }
    }

    #[test]
    fn constant_dictionary_has_zero_modulus() {
        let dict = ValueDictionary::new(vec![(0.0, dirac(0.0), 2.0), (0.5, dirac(1.0), 2.0)]).unwrap();
        assert_eq!(dict.modulus().sup(), 0.0);
        assert_eq!(dict.c0(), 2.0);
    }

    #[test]
    fn conflicting_duplicates_rejected() {
        let err = ValueDictionary::new(vec![(0.0, dirac(1.0), 1.0), (0.0, dirac(1.0), 2.0)]);
        assert!(matches!(err, Err(Error::InvalidDictionary(_))));
    }

    #[test]
    fn single_entry_envelope_is_value_plus_penalty() {
        let dict = ValueDictionary::new(vec![(0.5, dirac(0.0), 1.0)]).unwrap();
        let my = dict.inf_envelope(0.5, &dirac(2.0), 1.0).unwrap();
        assert_eq!(my.value, 1.0 + 4.0 / 2.0);
        assert_eq!(my.anchor_distance, 2.0);
    }

    #[test]
    fn pair_covector_points_from_anchor_to_query() {
        let dict = ValueDictionary::new(vec![(0.5, ParticleMeasure::dirac(&[1.0, 0.0]).unwrap(), 0.0)]).unwrap();
        let my = dict.inf_envelope(0.5, &ParticleMeasure::dirac(&[0.0, 0.0]).unwrap(), 1.0).unwrap();
        let pair = proximal_pair_from_anchor(&my).unwrap();
        let atom = &pair.gamma.atoms()[0];
        assert_eq!(atom.x, vec![1.0, 0.0]);
        assert_eq!(atom.q, vec![-1.0, 0.0]);
        assert_eq!(pair.a, 0.0);
    }

    #[test]
    fn diagonal_probe_has_zero_margin() {
        let pts: Vec<(f64, ParticleMeasure)> = (0..5).map(|k| (0.5, dirac(k as f64 * 0.5))).collect();
        let dict = ValueDictionary::sample(pts, |_, m| m.second_moment_root().powi(2)).unwrap();
        let my = dict.inf_envelope(0.5, &dirac(2.0), 0.7).unwrap();
        let pair = proximal_pair_from_anchor(&my).unwrap();
        let probe = ProxProbe { t: pair.anchor_t, nu: pair.anchor.clone(), coupling: vec![(0, 0, 1.0)] };
        let rep = check_prox_subgradient(&dict, &pair, &[probe], Some(0.0), 0.0).unwrap();
        assert_eq!(rep.min_margin, 0.0);
    }

    #[test]
    fn fitted_sigma_makes_all_margins_nonnegative() {
        let pts: Vec<(f64, ParticleMeasure)> = (0..9).map(|k| (0.5, dirac(k as f64 * 0.25 - 1.0))).collect();
        let dict = ValueDictionary::sample(pts.clone(), |_, m| -m.second_moment_root().powi(2)).unwrap();
        let my = dict.inf_envelope(0.5, &dirac(0.1), 0.5).unwrap();
        let pair = proximal_pair_from_anchor(&my).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes = random_probes(&pair.gamma, &pts, 20, &mut rng);
        let rep = check_prox_subgradient(&dict, &pair, &probes, None, 0.0).unwrap();
        assert!(rep.min_margin >= -1e-12);
    }

    #[test]
    fn shift_check_is_tight_on_the_diagonal() {
        let pts: Vec<(f64, ParticleMeasure)> = (0..6).map(|k| (0.1 * k as f64, dirac(k as f64 * 0.3))).collect();
        let dict = ValueDictionary::sample(pts, |t, m| t + m.point(0)[0].abs()).unwrap();
        let mu = dirac(0.7);
        let plan = TransportPlan::from_assignment(mu.clone(), mu.clone(), &[0]).unwrap();
        let slack = shift_inequality_check(&dict, 0.3, &mu, 0.4, &[ShiftProbe { t: 0.3, plan }]).unwrap();
        assert!(slack[0].abs() < 1e-12);
    }

    #[test]
    fn zero_field_is_in_the_cone() {
        let gamma = CotangentSample::from_field(&dirac(1.0), &PointField::zeros(1, 1)).unwrap();
        assert!(displacement_cone_check(&gamma, 1.0, Cone::Minus).unwrap().member);
    }

    #[test]
    fn crossed_matching_leaves_the_cone() {
        let base = ParticleMeasure::uniform(1, vec![0.0, 1.0]).unwrap();
        // 0 -> 2 and 1 -> 1.5 cross.
        let field = PointField::new(1, vec![2.0, 0.5]).unwrap();
        let gamma = CotangentSample::from_field(&base, &field).unwrap();
        assert!(!displacement_cone_check(&gamma, 1.0, Cone::Minus).unwrap().member);
        assert!(displacement_cone_check(&gamma, 4.0, Cone::Minus).unwrap().member);
    }

    #[test]
    fn random_coupling_has_requested_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.4];
        let c = random_coupling(&a, &b, &mut rng);
        for (i, ai) in a.iter().enumerate() {
            let s: f64 = c.iter().filter(|e| e.0 == i).map(|e| e.2).sum();
            assert!((s - ai).abs() < 1e-14);
        }
        for (j, bj) in b.iter().enumerate() {
            let s: f64 = c.iter().filter(|e| e.1 == j).map(|e| e.2).sum();
            assert!((s - bj).abs() < 1e-14);
        }
    }
}
