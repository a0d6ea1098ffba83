//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines show up in `cargo test`
//! output. The process fails on any unexpected result. A criterion listed in
//! `KNOWN_FAILURES` is printed as FAIL and tolerated only while it fails in exactly the
//! recorded way.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxaim::aiming::{lower_bound_check, search_parameter_complex, upper_bound_check, ScenarioStart, SearchGrid};
use proxaim::bellman::{subsolution_margin, supersolution_margin};
use proxaim::benchmark::{cone_bump, Band};
use proxaim::dynamics::{
    growth_diagnostics, solve_continuity, weak_form_residual, ControlModel, Polynomial, RelaxedControl,
};
use proxaim::measure::{dist_sq, norm_sq, ParticleMeasure};
use proxaim::models;
use proxaim::nonsmooth::{
    check_directional_subgradient, check_prox_subgradient, displacement_cone_check, envelope_gap,
    proximal_pair_from_anchor, random_directions, random_probes, Cone, FnValue, ProximalPair, Side,
    ValueDictionary, DEFAULT_STEPS,
};
use proxaim::scenario::{load_scenario, run, Command, Scenario};
use proxaim::transport::w2;
use proxaim::value::{boundary_check, dpp_residual, value_dp, ValueQuery, DEFAULT_BUDGET};
use proxaim::Error;

struct Verdict {
    pass: bool,
    detail: String,
    /// For a known failure: whether it failed in the recorded way.
    expected_failure: bool,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail, expected_failure: false }
    }
}

/// Criterion 5 asks for 1 on the pair {-2, 2}. With one control shared by all
/// particles the spread is frozen, so the value is 4.
const KNOWN_FAILURES: &[(u32, &str)] = &[(5, "pair {-2, 2}: stated oracle 1 ignores the common control; true value is 4")];

fn benchmark() -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/benchmark.toml");
    load_scenario(&path).expect("shipped benchmark scenario loads")
}

fn band_dictionary() -> &'static ValueDictionary {
    use std::sync::OnceLock;
    static DICT: OnceLock<ValueDictionary> = OnceLock::new();
    DICT.get_or_init(|| Band::default().dictionary().unwrap())
}

fn random_measure(rng: &mut ChaCha8Rng, dim: usize, n: usize, equal: bool, spread: f64) -> ParticleMeasure {
    let pts = (0..n * dim).map(|_| rng.gen_range(-spread..spread)).collect();
    if equal {
        ParticleMeasure::uniform(dim, pts).unwrap()
    } else {
        let w = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        ParticleMeasure::normalized(dim, pts, w).unwrap()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn permutation_w2(a: &ParticleMeasure, b: &ParticleMeasure) -> f64 {
    let n = a.len();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| dist_sq(a.point(i), b.point(p[i]))).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..200 {
        let dim = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=6);
        let a = random_measure(&mut rng, dim, n, true, 2.0);
        let b = random_measure(&mut rng, dim, n, true, 2.0);
        worst_oracle = worst_oracle.max((w2(&a, &b).unwrap() - permutation_w2(&a, &b)).abs());
    }
    let (mut sym, mut ident, mut tri): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    for _ in 0..200 {
        let dim = rng.gen_range(1..=2);
        let ms: Vec<ParticleMeasure> = (0..3)
            .map(|_| {
                let n = rng.gen_range(1..=5);
                random_measure(&mut rng, dim, n, false, 2.0)
            })
            .collect();
        let d = |i: usize, j: usize| w2(&ms[i], &ms[j]).unwrap();
        sym = sym.max((d(0, 1) - d(1, 0)).abs());
        ident = ident.max(d(0, 0)).max(d(2, 2));
        tri = tri.min(d(0, 1) + d(1, 2) - d(0, 2));
    }
    let pass = worst_oracle <= 1e-9 && sym <= 1e-9 && ident <= 1e-9 && tri >= -1e-9;
    Verdict::new(
        pass,
        format!("oracle gap {worst_oracle:.1e}, symmetry {sym:.1e}, identity {ident:.1e}, triangle slack {tri:.2e}"),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let library: Vec<ControlModel> = vec![
        models::translation(1, 1.0),
        models::translation(2, 1.0),
        models::zero_drift(1, 1.0),
        models::linear(1, 1.0, 0.5, models::axis_controls(1)),
        models::contraction(2, 1.0),
        models::consensus(2, 1.0, 0.5, 0.1),
    ];
    let step = 0.01;
    let mut worst_ratio: f64 = 0.0;
    let mut growth_ok = true;
    for model in &library {
        for _ in 0..3 {
            let mu = random_measure(&mut rng, model.dim(), 5, false, 2.0);
            let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..model.n_controls())).collect();
            let xi = RelaxedControl::pure_uniform(0.0, 1.0, &idx, model.n_controls()).unwrap();
            let traj = solve_continuity(model, 0.0, 1.0, &mu, &xi, step).unwrap();
            for phi in Polynomial::monomial_basis(model.dim(), 2) {
                worst_ratio = worst_ratio.max(weak_form_residual(model, &traj, &phi) / (10.0 * step * step));
            }
            growth_ok &= growth_diagnostics(&traj, model.growth_bounds()).unwrap().within_bounds();
        }
    }
    let mu = ParticleMeasure::uniform(1, vec![-1.0, 0.5, 2.0]).unwrap();
    let shift = models::translation(1, 1.0);
    let right = RelaxedControl::pure_uniform(0.0, 1.0, &[2], 3).unwrap();
    let traj = solve_continuity(&shift, 0.0, 1.0, &mu, &right, 1e-3).unwrap();
    let mut flow_err: f64 = 0.0;
    for (k, t) in traj.times().iter().enumerate() {
        for (x, x0) in traj.positions(k).iter().zip(mu.points()) {
            flow_err = flow_err.max((x - (x0 + t)).abs());
        }
    }
    let shrink = models::contraction(1, 1.0);
    let hold = RelaxedControl::pure_uniform(0.0, 1.0, &[0], 1).unwrap();
    let traj = solve_continuity(&shrink, 0.0, 1.0, &mu, &hold, 1e-3).unwrap();
    for (k, t) in traj.times().iter().enumerate() {
        for (x, x0) in traj.positions(k).iter().zip(mu.points()) {
            flow_err = flow_err.max((x - x0 * (-t).exp()).abs());
        }
    }
    let pass = worst_ratio <= 1.0 && flow_err <= 1e-6 && growth_ok;
    Verdict::new(
        pass,
        format!(
            "max residual / (10 step^2) = {worst_ratio:.2e}, analytic flow error {flow_err:.1e}, growth bounds {}",
            if growth_ok { "respected" } else { "violated" }
        ),
    )
}

/// Benchmark value sampled on two-particle measures `{c - w, c + w}`.
fn pair_dictionary() -> ValueDictionary {
    let mut pts = Vec::new();
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        for c in -6..=6 {
            for w in 0..3 {
                let (c, w) = (c as f64 / 4.0, w as f64 / 4.0);
                pts.push((t, ParticleMeasure::uniform(1, vec![c - w, c + w]).unwrap()));
            }
        }
    }
    ValueDictionary::sample(pts, |t, mu| models::translation_value(1.0 - t, mu)).unwrap()
}

fn criterion_3() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, dict) in [("band", band_dictionary().clone()), ("pairs", pair_dictionary())] {
        let mut below = true;
        let mut worst_slack = f64::INFINITY;
        let mut gaps = Vec::new();
        for kappa in [1.0, 0.5, 0.25] {
            let bound = (kappa * (2.0 * dict.c0()).sqrt()).min(dict.rho1(kappa));
            for (k, e) in dict.entries().iter().enumerate() {
                let my = dict.inf_envelope(e.t, dict.entry_measure(k), kappa).unwrap();
                below &= my.value <= e.value;
                worst_slack = worst_slack.min(bound - my.anchor_distance);
            }
            gaps.push(envelope_gap(&dict, kappa));
        }
        let monotone = gaps.windows(2).all(|w| w[1].gap <= w[0].gap) && gaps[2].gap < gaps[0].gap;
        let within = gaps.iter().all(|g| g.gap <= g.rho3);
        pass &= below && worst_slack >= -1e-12 && monotone && within;
        notes.push(format!(
            "{name}: envelope <= phi {below}, distance slack {worst_slack:.2e}, gaps {:?} vs rho3 {:?}",
            gaps.iter().map(|g| format!("{:.3e}", g.gap)).collect::<Vec<_>>(),
            gaps.iter().map(|g| format!("{:.3e}", g.rho3)).collect::<Vec<_>>(),
        ));
    }
    Verdict::new(pass, notes.join("; "))
}

/// Whether every base atom of the pair's cotangent sample carries a single covector.
fn map_induced(pair: &ProximalPair) -> bool {
    let atoms = pair.gamma.atoms();
    atoms.iter().all(|a| atoms.iter().filter(|b| b.x == a.x).all(|b| b.q == a.q))
}

fn m2(mu: &ParticleMeasure) -> f64 {
    mu.iter().map(|(x, w)| w * norm_sq(x)).sum()
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pairs_checked = 0;
    let mut worst_prox = f64::INFINITY;
    let mut cone_ok = true;
    let mut cones = 0;

    let band = band_dictionary();
    let kappa = 0.35;
    let candidates = band.points();
    let sc = benchmark();
    for p in sc.test_points().unwrap() {
        for side in [Side::Inf, Side::Sup] {
            if !band.gate(kappa, p.s, 1.0) {
                continue;
            }
            let my = match side {
                Side::Inf => band.inf_envelope(p.s, &p.mu, kappa),
                Side::Sup => band.sup_envelope(p.s, &p.mu, kappa),
            }
            .unwrap();
            let pair = proximal_pair_from_anchor(&my).unwrap();
            let probes = random_probes(&pair.gamma, &candidates, 50, &mut rng);
            let rep = check_prox_subgradient(band, &pair, &probes, Some(0.5 / (kappa * kappa)), 0.0).unwrap();
            worst_prox = worst_prox.min(rep.min_margin);
            pairs_checked += 1;
            if map_induced(&pair) {
                let cone = if side == Side::Inf { Cone::Minus } else { Cone::Plus };
                cone_ok &= displacement_cone_check(&pair.gamma, 1.0 / (kappa * kappa), cone).unwrap().member;
                cones += 1;
            }
        }
    }

    // Second-moment value with the exact proximal points stored: the anchor is the
    // true minimizer and the barycentric field is the gradient 2z.
    let kappa = 0.25;
    let s = 0.5;
    let queries: Vec<ParticleMeasure> = (0..8)
        .map(|k| {
            let n = 1 + k % 4;
            random_measure(&mut rng, 1 + k % 2, n, true, 1.0)
        })
        .collect();
    let mut entries = Vec::new();
    for q in &queries {
        let prox = q.pushforward(q.dim(), |x, out| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = v / (1.0 + 2.0 * kappa * kappa);
            }
        }, false)
        .unwrap();
        entries.push((s, prox.clone(), m2(&prox)));
        for _ in 0..6 {
            let t = rng.gen_range(0.3..0.7);
            let other = random_measure(&mut rng, q.dim(), q.len(), true, 1.0);
            entries.push((t, other.clone(), m2(&other)));
        }
    }
    let mut by_dim: BTreeMap<usize, Vec<(f64, ParticleMeasure, f64)>> = BTreeMap::new();
    for e in entries {
        by_dim.entry(e.1.dim()).or_default().push(e);
    }
    let phi = FnValue(|_t: f64, mu: &ParticleMeasure| m2(mu));
    let mut worst_dir = f64::INFINITY;
    let mut directional = 0;
    for (dim, list) in by_dim {
        let dict = ValueDictionary::new(list).unwrap();
        let candidates = dict.points();
        for q in queries.iter().filter(|q| q.dim() == dim) {
            if !dict.gate(kappa, s, 1.0) {
                continue;
            }
            let my = dict.inf_envelope(s, q, kappa).unwrap();
            let pair = proximal_pair_from_anchor(&my).unwrap();
            let probes = random_probes(&pair.gamma, &candidates, 50, &mut rng);
            let rep = check_prox_subgradient(&dict, &pair, &probes, Some(0.5 / (kappa * kappa)), 0.0).unwrap();
            worst_prox = worst_prox.min(rep.min_margin);
            pairs_checked += 1;
            let p = pair.anchor_field();
            let dirs = random_directions(&pair.anchor, 20, &mut rng);
            let d = check_directional_subgradient(&phi, pair.anchor_t, &pair.anchor, pair.a, &p, Side::Inf, 0.0, &dirs, &DEFAULT_STEPS)
                .unwrap();
            worst_dir = worst_dir.min(d.min_margin);
            directional += 1;
            if map_induced(&pair) {
                cone_ok &= displacement_cone_check(&pair.gamma, 1.0 / (kappa * kappa), Cone::Minus).unwrap().member;
                cones += 1;
            }
        }
    }
    let pass = pairs_checked > 0 && directional > 0 && cones > 0 && worst_prox >= -1e-8 && worst_dir >= -1e-8 && cone_ok;
    Verdict::new(
        pass,
        format!(
            "{pairs_checked} gated pairs, min prox margin {worst_prox:.2e}; {directional} directional pairs, min margin {worst_dir:.2e}; {cones} cone checks {}",
            if cone_ok { "all members" } else { "with a non-member" }
        ),
    )
}

fn criterion_5() -> Verdict {
    let model = models::translation(1, 1.0);
    let oracle = |mu: &ParticleMeasure| mu.iter().map(|(x, w)| w * (x[0].abs() - 1.0).max(0.0).powi(2)).sum::<f64>();
    let cases = [
        ("delta_3", ParticleMeasure::dirac(&[3.0]).unwrap(), 4.0),
        ("delta_0.5", ParticleMeasure::dirac(&[0.5]).unwrap(), 0.0),
        ("pair {-2, 2}", ParticleMeasure::uniform(1, vec![-2.0, 2.0]).unwrap(), 1.0),
    ];
    let mut notes = Vec::new();
    let mut ok = Vec::new();
    let mut pair_value = f64::NAN;
    for (name, mu, stated) in &cases {
        let v = value_dp(&model, &ValueQuery::uniform(&model, 0.0, mu.clone(), 10, 0.01)).unwrap().value;
        let o = oracle(mu);
        debug_assert_eq!(o, *stated);
        ok.push((v - o).abs() <= 1e-2);
        notes.push(format!("{name}: value {v:.6} vs oracle {o}"));
        pair_value = v;
    }
    let pass = ok.iter().all(|&b| b);
    let mut v = Verdict::new(pass, notes.join(", "));
    // The recorded failure: the first two cases match and the pair sits at its true value 4.
    v.expected_failure = ok[0] && ok[1] && !ok[2] && (pair_value - 4.0).abs() <= 1e-2
        && (models::translation_value(1.0, &cases[2].1) - 4.0).abs() < 1e-15;
    v
}

fn criterion_6() -> Verdict {
    let model = models::translation(1, 1.0);
    let mus = [
        ParticleMeasure::dirac(&[3.0]).unwrap(),
        ParticleMeasure::dirac(&[0.5]).unwrap(),
        ParticleMeasure::uniform(1, vec![-2.0, 2.0]).unwrap(),
        ParticleMeasure::uniform(1, vec![-0.3, 1.4, 1.9]).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for mu in &mus {
        let r = dpp_residual(&model, 0.0, mu, 0.5, 5, 5, 0.01, DEFAULT_BUDGET).unwrap();
        worst = worst.max(r.residual);
    }
    let boundary = boundary_check(&models::consensus(1, 1.0, 0.5, 0.1), &mus).unwrap()
        .max(boundary_check(&model, &mus).unwrap());
    Verdict::new(worst <= 2e-2 && boundary == 0.0, format!("max DPP residual {worst:.2e}, boundary defect {boundary}"))
}

fn criterion_7() -> Verdict {
    let model = models::translation(1, 1.0);
    let band = Band::default();
    let dict = band_dictionary();
    let (kappa, epsilon, tol) = (0.35, 1e-4, 1e-3);
    let pts: Vec<(f64, ParticleMeasure)> = benchmark().test_points().unwrap().into_iter().map(|p| (p.s, p.mu)).collect();
    let sub = subsolution_margin(&model, dict, &pts, kappa, epsilon, tol).unwrap();
    let sup = supersolution_margin(&model, dict, &pts, kappa, epsilon, tol).unwrap();
    let gated = sub.gated().count().min(sup.gated().count());

    // Cone bumps just behind a lattice node in time.
    let (s, y) = (0.5, 0.6);
    let mut probe = pts.clone();
    probe.push((s, ParticleMeasure::dirac(&[y]).unwrap()));
    let bump_id = probe.len() - 1;
    let up = band.dictionary_with(cone_bump(s - 0.05, y, 0.1, 0.05)).unwrap();
    let down = band.dictionary_with(cone_bump(s - 0.05, y, 0.1, -0.05)).unwrap();
    let up_sub = subsolution_margin(&model, &up, &probe, kappa, epsilon, tol).unwrap();
    let down_sup = supersolution_margin(&model, &down, &probe, kappa, epsilon, tol).unwrap();
    let bump_caught = !up_sub.passes()
        && up_sub.failing_points().contains(&bump_id)
        && !down_sup.passes()
        && down_sup.failing_points().contains(&bump_id);
    let pass = gated >= 20 && sub.passes() && sup.passes() && bump_caught;
    Verdict::new(
        pass,
        format!(
            "{gated} gated points, sub min {:.2e}, super min {:.2e}; raised bump sub margin {:.3}, lowered bump super margin {:.3}",
            sub.min_margin(),
            sup.min_margin(),
            up_sub.rows[bump_id].margin,
            down_sup.rows[bump_id].margin
        ),
    )
}

struct UpperResult {
    verdict: Verdict,
    payoffs: Vec<f64>,
}

fn criterion_8(starts: &[ScenarioStart]) -> UpperResult {
    let model = models::translation(1, 1.0);
    let dict = Arc::new(band_dictionary().clone());
    let eta = 0.2;
    let found = match search_parameter_complex(&model, dict.clone(), starts, eta, &SearchGrid::default(), 0.01) {
        Ok(f) => f,
        Err(e) => return UpperResult { verdict: Verdict::new(false, format!("search failed: {e}")), payoffs: vec![] },
    };
    let rep = upper_bound_check(&model, dict, starts, &found.complex, eta, 0.01, Some(10)).unwrap();
    let gated: usize = rep.rows.iter().map(|r| r.gated_steps).sum();
    let worst = rep.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let worst_audit = rep.rows.iter().filter_map(|r| r.worst_audit).fold(f64::INFINITY, f64::min);
    let every_step = rep.records.iter().flat_map(|r| &r.audit).map(|a| a.hamiltonian_margin).fold(f64::INFINITY, f64::min);
    let pass = worst >= 0.0 && rep.audit_passes(1e-6) && every_step >= -1e-6 && gated > 0;
    let c = found.complex;
    UpperResult {
        verdict: Verdict::new(
            pass,
            format!(
                "complex kappa {} eps {:.3e} alpha [{:.3}, {:.3}]; min phi + eta - J {worst:.4}; {gated} gated steps, min C eps - (a + H) {worst_audit:.2e} gated, {every_step:.2e} over all steps",
                c.kappa, c.epsilon, c.alpha_lo, c.alpha_hi
            ),
        ),
        payoffs: rep.rows.iter().map(|r| r.payoff).collect(),
    }
}

fn criterion_9(starts: &[ScenarioStart], payoffs: &[f64]) -> Verdict {
    let model = models::translation(1, 1.0);
    let band = Band::default();
    let psi = Arc::new(band_dictionary().clone());
    let (kappa, epsilon, tol, step) = (0.35, 1e-4, 1e-2, 0.01);
    let rep = lower_bound_check(&model, psi, starts, 10, kappa, epsilon, tol, step).unwrap();
    let worst = rep.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);

    let raised = Arc::new(band.dictionary_with(|_, _| 1.0).unwrap());
    let raised_rejected = matches!(
        lower_bound_check(&model, raised, starts, 10, kappa, epsilon, tol, step),
        Err(Error::Hypothesis(_))
    );
    let early = Arc::new(band.dictionary_with(|t, _| if t < 1.0 { 1.0 } else { 0.0 }).unwrap());
    let early_fails = !lower_bound_check(&model, early, starts, 10, kappa, epsilon, tol, step).unwrap().passes();

    let mut sandwich = payoffs.len() == starts.len();
    let (mut lowest, mut widest): (f64, f64) = (f64::INFINITY, f64::NEG_INFINITY);
    for (st, j) in starts.iter().zip(payoffs) {
        let analytic = models::translation_value(1.0 - st.s, &st.mu);
        let v = value_dp(&model, &ValueQuery::uniform(&model, st.s, st.mu.clone(), 10, step)).unwrap().value;
        sandwich &= v >= analytic - 0.01 && v <= analytic + 0.2 && *j <= analytic + 0.2;
        lowest = lowest.min(v - analytic);
        widest = widest.max(v - analytic);
    }
    let pass = rep.passes() && raised_rejected && early_fails && sandwich;
    Verdict::new(
        pass,
        format!(
            "min J - psi {worst:.2e}; psi = Val + 1 {}; raised before T {}; Val - analytic in [{lowest:.2e}, {widest:.2e}] {}",
            if raised_rejected { "rejected" } else { "accepted" },
            if early_fails { "fails" } else { "passes" },
            if sandwich { "inside [-0.01, 0.2]" } else { "outside [-0.01, 0.2]" }
        ),
    )
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn criterion_10() -> Verdict {
    let sc = benchmark();
    let root: PathBuf = tempfile::tempdir().unwrap().keep();
    let commands = [
        Command::Regularize,
        Command::CheckBellman,
        Command::CertifyUpper,
        Command::CertifyLower,
        Command::SearchComplex,
        Command::Aim,
    ];
    let mut files = 0;
    let mut identical = true;
    for cmd in commands {
        let a = run(cmd, &sc, &root.join("a")).unwrap();
        let b = run(cmd, &sc, &root.join("b")).unwrap();
        let (fa, fb) = (csv_bytes(&a.dir), csv_bytes(&b.dir));
        identical &= !fa.is_empty() && fa == fb && a.manifest.scenario_hash == b.manifest.scenario_hash;
        files += fa.len();
    }
    let _ = fs::remove_dir_all(&root);
    Verdict::new(identical, format!("{files} CSV artifacts over {} commands compared byte for byte", commands.len()))
}

fn main() -> ExitCode {
    let clock = Instant::now();
    let starts = benchmark().starts().unwrap();
    let upper = criterion_8(&starts);
    let results: Vec<(u32, Verdict)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7()),
        (8, upper.verdict),
        (9, criterion_9(&starts, &upper.payoffs)),
        (10, criterion_10()),
    ];
    let mut unexpected = Vec::new();
    for (id, v) in &results {
        println!("criterion {id:>2}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        match KNOWN_FAILURES.iter().find(|(k, _)| k == id) {
            Some((_, why)) if !v.pass && v.expected_failure => println!("              known failure: {why}"),
            Some(_) if v.pass => unexpected.push(format!("criterion {id} passes but is recorded as a known failure")),
            Some(_) => unexpected.push(format!("criterion {id} fails in an unrecorded way")),
            None if !v.pass => unexpected.push(format!("criterion {id} fails")),
            None => {}
        }
    }
    println!("acceptance finished in {:.1}s", clock.elapsed().as_secs_f64());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for u in unexpected {
            println!("unexpected: {u}");
        }
        ExitCode::FAILURE
    }
}
