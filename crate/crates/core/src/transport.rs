//! Exact quadratic optimal transport between particle measures.
//!
//! Solved as a min-cost flow on the complete bipartite graph by successive
//! shortest paths with node potentials. Ties are broken by lowest index, so the
//! returned plan is a deterministic function of the inputs.

use crate::error::{Error, Result};
use crate::measure::{dist_sq, ParticleMeasure, PlanEntry, TransportPlan};
use crate::tol;

#[derive(Debug, Clone)]
pub struct OptimalTransport {
    pub distance: f64,
    pub cost: f64,
    pub plan: TransportPlan,
}

/// Exact W2 distance together with an optimal plan.
pub fn wasserstein2(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<OptimalTransport> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    let entries = if mu.len() == 1 {
        (0..nu.len()).map(|j| PlanEntry { i: 0, j, mass: nu.weight(j) }).collect()
    } else if nu.len() == 1 {
        (0..mu.len()).map(|i| PlanEntry { i, j: 0, mass: mu.weight(i) }).collect()
    } else {
        solve_flow(mu, nu)?
    };
    let plan = TransportPlan::new(mu.clone(), nu.clone(), entries)?;
    let cost = plan.cost().max(0.0);
    Ok(OptimalTransport { distance: cost.sqrt(), cost, plan })
}

/// Exact W2 distance.
pub fn w2(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<f64> {
    if mu.len() == 1 && nu.len() == 1 {
        if mu.dim() != nu.dim() {
            return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
        }
        return Ok(dist_sq(mu.point(0), nu.point(0)).sqrt());
    }
    Ok(wasserstein2(mu, nu)?.distance)
}

fn solve_flow(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<Vec<PlanEntry>> {
    let n = mu.len();
    let m = nu.len();
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| dist_sq(mu.point(i), nu.point(j)))
        .collect();
    let c = |i: usize, j: usize| cost[i * m + j];
    let mut flow = vec![0.0; n * m];
    let mut supply: Vec<f64> = mu.weights().to_vec();
    let mut demand: Vec<f64> = nu.weights().to_vec();

    // Node k < n is source k, node n + j is sink j.
    let nodes = n + m;
    let mut pot = vec![0.0; nodes];
    for j in 0..m {
        pot[n + j] = (0..n).map(|i| c(i, j)).fold(f64::INFINITY, f64::min);
    }
    let reduced = |pot: &[f64], i: usize, j: usize| c(i, j) + pot[i] - pot[n + j];

    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    let max_rounds = 50 * nodes * nodes + 100;
    let mut rounds = 0;

    loop {
        let open_supply = supply.iter().any(|&s| s > tol::MASS_EPS);
        let open_demand = demand.iter().any(|&d| d > tol::MASS_EPS);
        if !open_supply || !open_demand {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::Solver(format!(
                "no convergence after {max_rounds} augmentations ({n} x {m})"
            )));
        }

        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for i in 0..n {
            if supply[i] > tol::MASS_EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for k in 0..nodes {
                if !done[k] && dist[k] < best {
                    best = dist[k];
                    u = k;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n && demand[u - n] > tol::MASS_EPS {
                target = u;
                break;
            }
            if u < n {
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let nd = dist[u] + reduced(&pot, u, j).max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= tol::MASS_EPS {
                        continue;
                    }
                    let nd = dist[u] + (-reduced(&pot, i, j)).max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = u;
                    }
                }
            }
        }
        if target == usize::MAX {
            return Err(Error::Solver("residual graph lost connectivity".into()));
        }
        let dt = dist[target];
        for k in 0..nodes {
            pot[k] += dist[k].min(dt);
        }

        // Walk back to the originating source and find the bottleneck.
        let mut delta = demand[target - n];
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                delta = delta.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        let origin = v;
        delta = delta.min(supply[origin]);
        if !(delta > 0.0) {
            return Err(Error::Solver("zero augmentation".into()));
        }
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                flow[u * m + (v - n)] += delta;
            } else {
                let e = &mut flow[v * m + (u - n)];
                *e -= delta;
                if *e < tol::MASS_EPS {
                    *e = 0.0;
                }
            }
            v = u;
        }
        supply[origin] -= delta;
        demand[target - n] -= delta;
    }

    // Certify optimality through the dual potentials.
    let scale = 1.0 + cost.iter().cloned().fold(0.0, f64::max);
    let slack = tol::METRIC * scale;
    for i in 0..n {
        for j in 0..m {
            let rc = reduced(&pot, i, j);
            if rc < -slack || (flow[i * m + j] > tol::MASS_EPS && rc > slack) {
                return Err(Error::Solver(format!(
                    "optimality certificate failed at ({i}, {j}): reduced cost {rc:e}"
                )));
            }
        }
    }

    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let mass = flow[i * m + j];
            if mass > 0.0 {
                entries.push(PlanEntry { i, j, mass });
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_plan_for_identical_measures() {
        let mu = ParticleMeasure::new(1, vec![0.0, 1.0, 3.0], vec![0.2, 0.3, 0.5]).unwrap();
        let ot = wasserstein2(&mu, &mu).unwrap();
        assert_eq!(ot.distance, 0.0);
        assert!(ot.plan.entries.iter().all(|e| e.i == e.j));
    }

    #[test]
    fn two_point_distance() {
        let mu = ParticleMeasure::dirac(&[0.0]).unwrap();
        let nu = ParticleMeasure::new(1, vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(w2(&mu, &nu).unwrap(), 1.0);
    }

    #[test]
    fn shift_of_uniform_measure() {
        let mu = ParticleMeasure::uniform(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let nu = mu.pushforward(2, |x, y| { y[0] = x[0] + 0.5; y[1] = x[1] - 0.5 }, false).unwrap();
        let d = w2(&mu, &nu).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn monotone_coupling_in_one_dimension() {
        let mu = ParticleMeasure::new(1, vec![0.0, 1.0, 2.0], vec![0.5, 0.25, 0.25]).unwrap();
        let nu = ParticleMeasure::new(1, vec![10.0, 5.0], vec![0.4, 0.6]).unwrap();
        let ot = wasserstein2(&mu, &nu).unwrap();
        // Sorted quantile coupling: mass 0.5 at 0 -> 5, 0.1 at 1 -> 5, 0.15 at 1 -> 10, 0.25 at 2 -> 10.
        let expect = 0.5 * 25.0 + 0.1 * 16.0 + 0.15 * 81.0 + 0.25 * 64.0;
        assert!((ot.cost - expect).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = ParticleMeasure::dirac(&[0.0]).unwrap();
        let b = ParticleMeasure::dirac(&[0.0, 1.0]).unwrap();
        assert!(wasserstein2(&a, &b).is_err());
    }
}
