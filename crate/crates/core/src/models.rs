//! Library of control models, including the translation benchmark.

use std::sync::Arc;

use crate::dynamics::{ControlModel, GrowthBounds, ModelConstants, PowerModulus};
use crate::measure::{norm_sq, ParticleMeasure};

fn second_moment(m: &ParticleMeasure) -> f64 {
    m.iter().map(|(x, w)| w * norm_sq(x)).sum()
}

const NO_TIME_DEPENDENCE: PowerModulus = PowerModulus { coefficient: 0.0, exponent: 1.0 };

/// Signed unit steps along each axis plus the zero control. In one dimension this is
/// `{-1, 0, 1}`.
pub fn axis_controls(dim: usize) -> Vec<Vec<f64>> {
    let mut controls = Vec::with_capacity(2 * dim + 1);
    for k in 0..dim {
        let mut u = vec![0.0; dim];
        u[k] = -1.0;
        controls.push(u);
    }
    controls.push(vec![0.0; dim]);
    for k in 0..dim {
        let mut u = vec![0.0; dim];
        u[k] = 1.0;
        controls.push(u);
    }
    controls
}

/// `f = u`, `L = 0`, `G(m) = int |x|^2 dm` over [`axis_controls`].
pub fn translation(dim: usize, horizon: f64) -> ControlModel {
    ControlModel::new(
        "translation",
        dim,
        horizon,
        axis_controls(dim),
        Arc::new(|_t, _x, _m, u, out| out.copy_from_slice(u)),
        Arc::new(|_t, _m, _u| 0.0),
        Arc::new(second_moment),
        ModelConstants { c_f: 0.0, c_l: 0.0, c_1: 1.0, omega_f: NO_TIME_DEPENDENCE },
    )
    .expect("valid model")
    .with_growth_bounds(GrowthBounds {
        c1: horizon.max(1.0),
        c2: 1.0,
        c3: horizon.max(1.0),
        c4: 1.0,
    })
}

/// `f = 0`, `L = 0`, `G(m) = int |x|^2 dm`.
pub fn zero_drift(dim: usize, horizon: f64) -> ControlModel {
    ControlModel::new(
        "zero",
        dim,
        horizon,
        vec![vec![0.0]],
        Arc::new(|_t, _x, _m, _u, out| out.fill(0.0)),
        Arc::new(|_t, _m, _u| 0.0),
        Arc::new(second_moment),
        ModelConstants { c_f: 0.0, c_l: 0.0, c_1: 0.0, omega_f: NO_TIME_DEPENDENCE },
    )
    .expect("valid model")
    .with_growth_bounds(GrowthBounds { c1: 1.0, c2: 0.0, c3: 1.0, c4: 0.0 })
}

/// `f = a x + u` with controls given as vectors of length `dim`.
pub fn linear(dim: usize, horizon: f64, a: f64, controls: Vec<Vec<f64>>) -> ControlModel {
    let umax = controls.iter().map(|u| norm_sq(u).sqrt()).fold(0.0, f64::max);
    let c1 = a.abs().max(umax);
    let g = (a.abs() * horizon).exp();
    ControlModel::new(
        "linear",
        dim,
        horizon,
        controls,
        Arc::new(move |_t, x, _m, u, out| {
            for k in 0..out.len() {
                out[k] = a * x[k] + u[k];
            }
        }),
        Arc::new(|_t, _m, u| 0.1 * norm_sq(u)),
        Arc::new(second_moment),
        ModelConstants { c_f: a.abs(), c_l: 0.0, c_1: c1, omega_f: NO_TIME_DEPENDENCE },
    )
    .expect("valid model")
    .with_growth_bounds(GrowthBounds {
        c1: g * (1.0 + umax * horizon),
        c2: c1 * g * (1.0 + horizon),
        c3: g * (1.0 + umax * horizon),
        c4: c1 * g * (1.0 + horizon),
    })
}

/// `f = -x` with the single control `0`.
pub fn contraction(dim: usize, horizon: f64) -> ControlModel {
    let mut model = linear(dim, horizon, -1.0, vec![vec![0.0; dim]]);
    model = model.with_growth_bounds(GrowthBounds { c1: 1.0, c2: 1.0, c3: 1.0, c4: 1.0 });
    model
}

/// Nonlocal consensus drift `f = u + k (mean(m) - x)`, `L = lambda |u|^2`, `G = int |x|^2`.
pub fn consensus(dim: usize, horizon: f64, k: f64, lambda: f64) -> ControlModel {
    let controls = axis_controls(dim);
    let g = (2.0 * k * horizon).exp();
    ControlModel::new(
        "consensus",
        dim,
        horizon,
        controls,
        Arc::new(move |_t, x, m, u, out| {
            let mean = m.mean();
            for c in 0..out.len() {
                out[c] = u[c] + k * (mean[c] - x[c]);
            }
        }),
        Arc::new(move |_t, _m, u| lambda * norm_sq(u)),
        Arc::new(second_moment),
        ModelConstants {
            c_f: 2.0 * k,
            c_l: 0.0,
            c_1: 1.0f64.max(k),
            omega_f: NO_TIME_DEPENDENCE,
        },
    )
    .expect("valid model")
    .with_growth_bounds(GrowthBounds {
        c1: g * (1.0 + horizon),
        c2: (1.0 + 2.0 * k) * g * (1.0 + horizon),
        c3: g * (1.0 + horizon),
        c4: (1.0 + 2.0 * k) * g * (1.0 + horizon),
    })
}

/// Closed-form value of the one-dimensional translation benchmark with time-to-go `tau`.
///
/// All particles share the common control, so only a rigid shift by `c` with
/// `|c| <= tau` is reachable and `Val = Var(mu) + (|mean(mu)| - tau)_+^2`.
pub fn translation_value(tau: f64, mu: &ParticleMeasure) -> f64 {
    assert_eq!(mu.dim(), 1, "benchmark value is one-dimensional");
    let mean = mu.mean()[0];
    let var: f64 = mu.iter().map(|(x, w)| w * (x[0] - mean) * (x[0] - mean)).sum();
    let gap = (mean.abs() - tau).max(0.0);
    var + gap * gap
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_controls_in_one_dimension() {
        assert_eq!(axis_controls(1), vec![vec![-1.0], vec![0.0], vec![1.0]]);
    }

    #[test]
    fn benchmark_value_on_diracs() {
        let v = |x: f64| translation_value(1.0, &ParticleMeasure::dirac(&[x]).unwrap());
        assert_eq!(v(3.0), 4.0);
        assert_eq!(v(0.5), 0.0);
        assert_eq!(v(-1.5), 0.25);
    }

    #[test]
    fn benchmark_value_keeps_spread() {
        let mu = ParticleMeasure::uniform(1, vec![-2.0, 2.0]).unwrap();
        assert_eq!(translation_value(1.0, &mu), 4.0);
    }
}
