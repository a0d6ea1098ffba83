//! Translation benchmark fixtures: Dirac lattice dictionaries sampled from the closed-form value.
//!
//! Nodes are `(i / n, j / n)` with `i + j` even, so every lattice diagonal is a
//! characteristic of `f = u` with `u = +-1`. Only nodes inside the band
//! `| |y| - (T - t) | <= half_width` are kept, which bounds `|Val|` and keeps `c0` small.

use crate::error::{Error, Result};
use crate::measure::ParticleMeasure;
use crate::models::translation_value;
use crate::nonsmooth::ValueDictionary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    /// Lattice nodes per unit length.
    pub per_unit: u32,
    pub half_width: f64,
    pub horizon: f64,
}

impl Default for Band {
    fn default() -> Self {
        Self { per_unit: 100, half_width: 0.5, horizon: 1.0 }
    }
}

impl Band {
    /// Lattice time of index `i`.
    pub fn t(&self, i: i64) -> f64 {
        i as f64 / self.per_unit as f64
    }

    /// Lattice position of index `j`.
    pub fn y(&self, j: i64) -> f64 {
        j as f64 / self.per_unit as f64
    }

    pub fn contains(&self, t: f64, y: f64) -> bool {
        (y.abs() - (self.horizon - t)).abs() <= self.half_width + 1e-12
    }

    /// Every lattice node `(t, delta_y)` in the band for `t` in `[0, T]`.
    pub fn points(&self) -> Result<Vec<(f64, ParticleMeasure)>> {
        let n = self.per_unit as f64;
        let steps = (self.horizon * n).round() as i64;
        if self.per_unit == 0 || (steps as f64 - self.horizon * n).abs() > 1e-9 || !(self.half_width > 0.0) {
            return Err(Error::InvalidArgument(format!("band {self:?} does not fit the lattice")));
        }
        let reach = ((self.horizon + self.half_width) * n).ceil() as i64;
        let mut out = Vec::new();
        for i in 0..=steps {
            let t = self.t(i);
            for j in -reach..=reach {
                if (i + j).rem_euclid(2) != 0 {
                    continue;
                }
                let y = self.y(j);
                if self.contains(t, y) {
                    out.push((t, ParticleMeasure::dirac(&[y])?));
                }
            }
        }
        Ok(out)
    }

    /// Dictionary of `Val(t, delta_y) + offset(t, y)` on the band.
    pub fn dictionary_with<F>(&self, offset: F) -> Result<ValueDictionary>
    where
        F: Fn(f64, f64) -> f64,
    {
        let horizon = self.horizon;
        ValueDictionary::sample(self.points()?, |t, mu| {
            translation_value(horizon - t, mu) + offset(t, mu.point(0)[0])
        })
    }

    /// Dictionary of the exact value on the band.
    pub fn dictionary(&self) -> Result<ValueDictionary> {
        self.dictionary_with(|_, _| 0.0)
    }
}

/// Cone bump of height `height` and radius `radius` centred at `(t0, y0)`.
pub fn cone_bump(t0: f64, y0: f64, radius: f64, height: f64) -> impl Fn(f64, f64) -> f64 {
    move |t, y| {
        let r = ((t - t0).powi(2) + (y - y0).powi(2)).sqrt();
        height * (1.0 - r / radius).max(0.0)
    }
}
