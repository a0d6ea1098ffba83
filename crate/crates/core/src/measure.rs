//! Discrete probability measures, transport plans and cotangent samples.

use crate::error::{Error, Result};
use crate::tol;

/// Finitely supported probability measure on R^d.
///
/// Points are stored row-major, one row of `dim` coordinates per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("measure needs at least one atom".into()));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not fill {} atoms of dimension {}",
                points.len(),
                weights.len(),
                dim
            )));
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "non-finite coordinate at atom {}",
                i / dim
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "weight {} at atom {i} is negative or non-finite",
                weights[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tol::WEIGHT_SUM {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total:.17}, not 1"
            )));
        }
        Ok(Self { dim, points, weights })
    }

    /// Builds a measure after rescaling the weights to sum to one.
    pub fn normalized(dim: usize, points: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMeasure("weights must have positive finite sum".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(dim, points, weights)
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec(), vec![1.0])
    }

    /// Empirical measure with equal weights.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidMeasure("point array does not match dimension".into()));
        }
        let n = points.len() / dim;
        Self::normalized(dim, points, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Root of the second moment, `sqrt(sum_i w_i |x_i|^2)`.
    pub fn second_moment_root(&self) -> f64 {
        self.iter()
            .map(|(x, w)| w * norm_sq(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (mk, xk) in m.iter_mut().zip(x) {
                *mk += w * xk;
            }
        }
        m
    }

    /// Same measure with coincident atoms merged, keeping first-occurrence order.
    pub fn merged(&self) -> Self {
        let mut points: Vec<f64> = Vec::with_capacity(self.points.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        for (x, w) in self.iter() {
            match points.chunks_exact(self.dim).position(|y| y == x) {
                Some(k) => weights[k] += w,
                None => {
                    points.extend_from_slice(x);
                    weights.push(w);
                }
            }
        }
        Self { dim: self.dim, points, weights }
    }

    /// Image measure under `map`. Atoms are kept one-to-one unless `merge` is set.
    pub fn pushforward<F>(&self, out_dim: usize, mut map: F, merge: bool) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut points = vec![0.0; out_dim * self.len()];
        for (i, x) in self.points.chunks_exact(self.dim).enumerate() {
            map(x, &mut points[i * out_dim..(i + 1) * out_dim]);
        }
        let m = Self::new(out_dim, points, self.weights.clone())?;
        Ok(if merge { m.merged() } else { m })
    }

    /// Same weights, new positions.
    pub fn with_points(&self, points: Vec<f64>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::InvalidMeasure("position array has wrong length".into()));
        }
        Self::new(self.dim, points, self.weights.clone())
    }

    pub(crate) fn with_points_unchecked(&self, points: Vec<f64>) -> Self {
        debug_assert_eq!(points.len(), self.points.len());
        Self { dim: self.dim, points, weights: self.weights.clone() }
    }

    /// Bitwise identity of the stored representation.
    pub fn same_as(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.weights.len() == other.weights.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Vector attached to every atom of an associated measure.
///
/// Used both for covector fields (elements of the cotangent space) and velocity fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PointField {
    dim: usize,
    values: Vec<f64>,
}

pub type CovectorField = PointField;
pub type VelocityField = PointField;

impl PointField {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field has non-finite entries".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        Self { dim, values: vec![0.0; dim * len] }
    }

    /// The same vector at every atom.
    pub fn constant(value: &[f64], len: usize) -> Self {
        let mut values = Vec::with_capacity(value.len() * len);
        for _ in 0..len {
            values.extend_from_slice(value);
        }
        Self { dim: value.len(), values }
    }

    pub fn from_fn<F: FnMut(&[f64], &mut [f64])>(mu: &ParticleMeasure, mut f: F) -> Self {
        let d = mu.dim();
        let mut values = vec![0.0; d * mu.len()];
        for (i, (x, _)) in mu.iter().enumerate() {
            f(x, &mut values[i * d..(i + 1) * d]);
        }
        Self { dim: d, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn check_matches(&self, mu: &ParticleMeasure) -> Result<()> {
        if self.dim != mu.dim() {
            return Err(Error::DimensionMismatch { expected: mu.dim(), got: self.dim });
        }
        if self.len() != mu.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} entries, measure has {} atoms",
                self.len(),
                mu.len()
            )));
        }
        Ok(())
    }

    /// `int p . v dmu`.
    pub fn pair(&self, other: &Self, mu: &ParticleMeasure) -> f64 {
        (0..mu.len())
            .map(|i| mu.weight(i) * dot(self.at(i), other.at(i)))
            .sum()
    }

    /// L2(mu) norm.
    pub fn norm(&self, mu: &ParticleMeasure) -> f64 {
        (0..mu.len())
            .map(|i| mu.weight(i) * norm_sq(self.at(i)))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// Coupling between two particle measures stored as a sparse list of masses.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub source: ParticleMeasure,
    pub target: ParticleMeasure,
    pub entries: Vec<PlanEntry>,
}

impl TransportPlan {
    pub fn new(source: ParticleMeasure, target: ParticleMeasure, entries: Vec<PlanEntry>) -> Result<Self> {
        let plan = Self { source, target, entries };
        plan.validate()?;
        Ok(plan)
    }

    /// Coupling `(Id, T)` induced by a map given atom by atom as target indices.
    pub fn from_assignment(source: ParticleMeasure, target: ParticleMeasure, assignment: &[usize]) -> Result<Self> {
        if assignment.len() != source.len() {
            return Err(Error::InvalidPlan("assignment length differs from source size".into()));
        }
        let entries = assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| PlanEntry { i, j, mass: source.weight(i) })
            .collect();
        Self::new(source, target, entries)
    }

    /// Product coupling.
    pub fn independent(source: ParticleMeasure, target: ParticleMeasure) -> Result<Self> {
        let mut entries = Vec::with_capacity(source.len() * target.len());
        for i in 0..source.len() {
            for j in 0..target.len() {
                entries.push(PlanEntry { i, j, mass: source.weight(i) * target.weight(j) });
            }
        }
        Self::new(source, target, entries)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.dim() != self.target.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.source.dim(),
                got: self.target.dim(),
            });
        }
        let mut row = vec![0.0; self.source.len()];
        let mut col = vec![0.0; self.target.len()];
        for e in &self.entries {
            if e.i >= row.len() || e.j >= col.len() {
                return Err(Error::InvalidPlan(format!("index ({}, {}) out of range", e.i, e.j)));
            }
            if !e.mass.is_finite() || e.mass < 0.0 {
                return Err(Error::InvalidPlan(format!("mass {} at ({}, {})", e.mass, e.i, e.j)));
            }
            row[e.i] += e.mass;
            col[e.j] += e.mass;
        }
        for (i, r) in row.iter().enumerate() {
            if (r - self.source.weight(i)).abs() > tol::MARGINAL {
                return Err(Error::InvalidPlan(format!(
                    "first marginal off at atom {i}: {r} vs {}",
                    self.source.weight(i)
                )));
            }
        }
        for (j, c) in col.iter().enumerate() {
            if (c - self.target.weight(j)).abs() > tol::MARGINAL {
                return Err(Error::InvalidPlan(format!(
                    "second marginal off at atom {j}: {c} vs {}",
                    self.target.weight(j)
                )));
            }
        }
        Ok(())
    }

    /// `int |x - y|^2 dpi`.
    pub fn cost(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.mass * dist_sq(self.source.point(e.i), self.target.point(e.j)))
            .sum()
    }

    /// Square root of the transport cost.
    pub fn plan_norm(&self) -> f64 {
        self.cost().sqrt()
    }

    /// The same coupling read from target to source.
    pub fn reversed(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| PlanEntry { i: e.j, j: e.i, mass: e.mass })
                .collect(),
        }
    }

    /// Masses leaving source atom `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = &PlanEntry> {
        self.entries.iter().filter(move |e| e.i == i)
    }
}

/// Plan norm, `(int |x - y|^2 dpi)^(1/2)`.
pub fn plan_norm(plan: &TransportPlan) -> f64 {
    plan.plan_norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotangentAtom {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub mass: f64,
}

/// Finite measure on R^d x (R^d)^*, stored as (base point, covector, mass) atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentSample {
    dim: usize,
    atoms: Vec<CotangentAtom>,
}

impl CotangentSample {
    pub fn new(dim: usize, atoms: Vec<CotangentAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("cotangent sample needs an atom".into()));
        }
        for a in &atoms {
            if a.x.len() != dim || a.q.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: a.x.len().max(a.q.len()) });
            }
            if !a.mass.is_finite() || a.mass < 0.0 {
                return Err(Error::InvalidMeasure(format!("atom mass {}", a.mass)));
            }
            if a.x.iter().chain(&a.q).any(|v| !v.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite cotangent atom".into()));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        if (total - 1.0).abs() > tol::MARGINAL {
            return Err(Error::InvalidMeasure(format!("cotangent masses sum to {total}")));
        }
        Ok(Self { dim, atoms })
    }

    /// Covector field `p` lifted along the graph of `mu`.
    pub fn from_field(mu: &ParticleMeasure, p: &CovectorField) -> Result<Self> {
        p.check_matches(mu)?;
        let atoms = mu
            .iter()
            .enumerate()
            .map(|(i, (x, w))| CotangentAtom { x: x.to_vec(), q: p.at(i).to_vec(), mass: w })
            .collect();
        Self::new(mu.dim(), atoms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[CotangentAtom] {
        &self.atoms
    }

    /// First marginal, merged.
    pub fn base(&self) -> ParticleMeasure {
        let points = self.atoms.iter().flat_map(|a| a.x.iter().copied()).collect();
        let weights = self.atoms.iter().map(|a| a.mass).collect();
        ParticleMeasure::normalized(self.dim, points, weights)
            .expect("validated atoms")
            .merged()
    }

    /// `int |q|^2 dgamma`.
    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * norm_sq(&a.q)).sum()
    }
}

/// Mass-weighted mean covector above each distinct base point.
///
/// Returns the merged first marginal together with the barycentric field on it.
pub fn barycenter(gamma: &CotangentSample) -> (ParticleMeasure, CovectorField) {
    let base = gamma.base();
    let d = gamma.dim();
    let mut sums = vec![0.0; d * base.len()];
    let mut mass = vec![0.0; base.len()];
    for a in gamma.atoms() {
        let k = (0..base.len())
            .find(|&k| base.point(k) == a.x.as_slice())
            .expect("base contains every atom");
        mass[k] += a.mass;
        for (s, q) in sums[k * d..(k + 1) * d].iter_mut().zip(&a.q) {
            *s += a.mass * q;
        }
    }
    for k in 0..base.len() {
        if mass[k] > 0.0 {
            sums[k * d..(k + 1) * d].iter_mut().for_each(|s| *s /= mass[k]);
        }
    }
    (base, PointField { dim: d, values: sums })
}

/// Atom of a three-marginal coupling: indices into (mu, nu_bar, nu).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GluedEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub mass: f64,
}

/// Coupling of `mu`, `first.target` and `second.target` whose pairwise projections are
/// the two input plans.
#[derive(Debug, Clone, PartialEq)]
pub struct GluedPlan {
    pub base: ParticleMeasure,
    pub first: ParticleMeasure,
    pub second: ParticleMeasure,
    pub entries: Vec<GluedEntry>,
}

/// Glues two plans sharing the source `mu` by conditional independence given `mu`.
pub fn glue_plans(first: &TransportPlan, second: &TransportPlan) -> Result<GluedPlan> {
    if first.source != second.source {
        return Err(Error::InvalidPlan("plans do not share their first marginal".into()));
    }
    let mu = &first.source;
    let mut entries = Vec::new();
    for i in 0..mu.len() {
        let w = mu.weight(i);
        if w <= 0.0 {
            continue;
        }
        for a in first.row(i) {
            for b in second.row(i) {
                let mass = a.mass * b.mass / w;
                if mass > 0.0 {
                    entries.push(GluedEntry { i, j: a.j, k: b.j, mass });
                }
            }
        }
    }
    Ok(GluedPlan {
        base: mu.clone(),
        first: first.target.clone(),
        second: second.target.clone(),
        entries,
    })
}

impl GluedPlan {
    /// Projection onto (mu, nu_bar).
    pub fn project_first(&self) -> Result<TransportPlan> {
        let entries = self
            .entries
            .iter()
            .map(|e| PlanEntry { i: e.i, j: e.j, mass: e.mass })
            .collect();
        TransportPlan::new(self.base.clone(), self.first.clone(), entries)
    }

    /// Projection onto (mu, nu).
    pub fn project_second(&self) -> Result<TransportPlan> {
        let entries = self
            .entries
            .iter()
            .map(|e| PlanEntry { i: e.i, j: e.k, mass: e.mass })
            .collect();
        TransportPlan::new(self.base.clone(), self.second.clone(), entries)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> ParticleMeasure {
        ParticleMeasure::new(1, vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(ParticleMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(ParticleMeasure::new(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(ParticleMeasure::new(1, vec![f64::NAN], vec![1.0]).is_err());
        assert!(ParticleMeasure::new(2, vec![0.0], vec![1.0]).is_err());
        assert!(ParticleMeasure::new(1, vec![], vec![]).is_err());
    }

    #[test]
    fn second_moment_root_of_symmetric_pair() {
        assert_eq!(two_point().second_moment_root(), 1.0);
        let d = ParticleMeasure::dirac(&[3.0, 4.0]).unwrap();
        assert_eq!(d.second_moment_root(), 5.0);
    }

    #[test]
    fn pushforward_merges_only_on_request() {
        let mu = two_point();
        let kept = mu.pushforward(1, |x, y| y[0] = x[0] * x[0], false).unwrap();
        assert_eq!(kept.len(), 2);
        let merged = mu.pushforward(1, |x, y| y[0] = x[0] * x[0], true).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.weight(0), 1.0);
    }

    #[test]
    fn barycenter_averages_per_base_point() {
        let gamma = CotangentSample::new(
            1,
            vec![
                CotangentAtom { x: vec![0.0], q: vec![1.0], mass: 0.25 },
                CotangentAtom { x: vec![0.0], q: vec![3.0], mass: 0.25 },
                CotangentAtom { x: vec![2.0], q: vec![-1.0], mass: 0.5 },
            ],
        )
        .unwrap();
        let (base, field) = barycenter(&gamma);
        assert_eq!(base.len(), 2);
        assert_eq!(field.at(0), &[2.0]);
        assert_eq!(field.at(1), &[-1.0]);
    }

    #[test]
    fn glued_plan_has_both_projections() {
        let mu = two_point();
        let a = ParticleMeasure::new(1, vec![0.0, 5.0], vec![0.5, 0.5]).unwrap();
        let b = ParticleMeasure::dirac(&[7.0]).unwrap();
        let p1 = TransportPlan::independent(mu.clone(), a).unwrap();
        let p2 = TransportPlan::independent(mu, b).unwrap();
        let g = glue_plans(&p1, &p2).unwrap();
        assert_eq!(g.project_first().unwrap().cost(), p1.cost());
        assert!((g.project_second().unwrap().cost() - p2.cost()).abs() < 1e-12);
    }

    #[test]
    fn plan_rejects_wrong_marginal() {
        let mu = two_point();
        let err = TransportPlan::new(mu.clone(), mu, vec![PlanEntry { i: 0, j: 0, mass: 1.0 }]);
        assert!(err.is_err());
    }
}
