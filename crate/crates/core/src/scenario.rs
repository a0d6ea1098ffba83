//! Scenario configs, run orchestration and artifact persistence.
//!
//! A scenario is a TOML file. Relative paths inside it resolve against the file's
//! directory. Every run writes into a fresh directory named after the command, the
//! start time and the config hash. Artifacts are computed in memory, written through
//! temporary files, and `manifest.json` goes last, so a directory without a manifest
//! is an interrupted run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::aiming::{
    lower_bound_check, payoff_feedback, run_process, search_parameter_complex, upper_bound_check,
    FeedbackStrategy, ParameterComplex, Partition, ScenarioStart, SearchGrid,
};
use crate::bellman::{subsolution_margin, supersolution_margin};
use crate::benchmark::Band;
use crate::dynamics::{
    growth_diagnostics, running_cost_integral, solve_continuity, weak_form_residual, ControlModel, Polynomial,
    RelaxedControl,
};
use crate::error::{Error, Result};
use crate::expr::{expression_model, ExprSpec};
use crate::io::{read_measure, write_atomic, Table};
use crate::measure::ParticleMeasure;
use crate::models;
use crate::nonsmooth::{
    check_prox_subgradient, envelope_gap, proximal_pair_from_anchor, random_probes, ValueDictionary, ValueFunction,
};
use crate::value::{value_dp, ValueQuery, DEFAULT_BUDGET};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

fn default_step() -> f64 {
    0.01
}

fn default_n_steps() -> usize {
    10
}

fn default_budget() -> f64 {
    DEFAULT_BUDGET
}

fn default_dimension() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-3
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub s: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub seed: u64,
    /// Control intervals for `value` and `certify-lower`.
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_budget")]
    pub budget: f64,
    pub initial_measure: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_file: Option<PathBuf>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionarySpec>,
    #[serde(default)]
    pub certify: CertifySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `translation`, `zero`, `linear`, `contraction`, `consensus` or `expr`.
    pub id: String,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryKind {
    /// Benchmark value on a Dirac lattice band.
    Band,
    /// Entries listed in a TOML file.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    pub kind: DictionaryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_unit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Added to every band value with `t < T`.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: f64,
    /// Added to every band value with `t = T`.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub terminal_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Upper bound on the feedback partition spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub starts: Vec<PointSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_points: Vec<PointSpec>,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            kappa: None,
            epsilon: None,
            eta: None,
            alpha: None,
            tol: default_tol(),
            starts: Vec::new(),
            test_points: Vec::new(),
        }
    }
}

/// `(s, mu)` with `mu` given inline; uniform weights when `weights` is omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub s: f64,
    pub points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// Piecewise-constant control file. Give either `mixtures` or pure `indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlFile {
    pub breakpoints: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixtures: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

impl ControlFile {
    pub fn into_control(self, n_controls: usize) -> Result<RelaxedControl> {
        match (self.mixtures, self.indices) {
            (Some(m), None) => RelaxedControl::new(self.breakpoints, m),
            (None, Some(i)) => RelaxedControl::pure(self.breakpoints, &i, n_controls),
            _ => Err(Error::Config("control file needs exactly one of `mixtures` or `indices`".into())),
        }
    }
}

impl From<&RelaxedControl> for ControlFile {
    fn from(xi: &RelaxedControl) -> Self {
        Self {
            breakpoints: xi.breakpoints().to_vec(),
            mixtures: Some(xi.mixtures().to_vec()),
            indices: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryFile {
    entry: Vec<DictionaryFileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryFileEntry {
    t: f64,
    measure: PathBuf,
    value: f64,
}

/// Command-line overrides applied before hashing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub step: Option<f64>,
    pub kappa: Option<f64>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub budget: Option<f64>,
    pub seed: Option<u64>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized config, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.step {
            self.step = v;
        }
        if let Some(v) = o.budget {
            self.budget = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.kappa {
            self.certify.kappa = Some(v);
        }
        if let Some(v) = o.epsilon {
            self.certify.epsilon = Some(v);
        }
        if let Some(v) = o.eta {
            self.certify.eta = Some(v);
        }
    }
}

impl ModelSpec {
    fn unused(&self, allowed: &[&str]) -> Result<()> {
        let given = [
            ("a", self.a.is_some()),
            ("k", self.k.is_some()),
            ("lambda", self.lambda.is_some()),
            ("drift", self.drift.is_some()),
            ("running", self.running.is_some()),
            ("terminal", self.terminal.is_some()),
            ("c_1", self.c_1.is_some()),
        ];
        match given.iter().find(|(name, set)| *set && !allowed.contains(name)) {
            Some((name, _)) => Err(Error::Config(format!(
                "model.{name} does not apply to model '{}'",
                self.id
            ))),
            None => Ok(()),
        }
    }

    fn build(&self, horizon: f64, controls: Option<&Vec<Vec<f64>>>) -> Result<ControlModel> {
        let dim = self.dimension;
        if dim == 0 {
            return Err(Error::Config("model.dimension must be positive".into()));
        }
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("model '{}' needs model.{name}", self.id)))
        };
        let no_controls = || match controls {
            Some(_) => Err(Error::Config(format!("`U` cannot be set for model '{}'", self.id))),
            None => Ok(()),
        };
        let model = match self.id.as_str() {
            "translation" => {
                self.unused(&[])?;
                no_controls()?;
                models::translation(dim, horizon)
            }
            "zero" => {
                self.unused(&[])?;
                no_controls()?;
                models::zero_drift(dim, horizon)
            }
            "contraction" => {
                self.unused(&[])?;
                no_controls()?;
                models::contraction(dim, horizon)
            }
            "consensus" => {
                self.unused(&["k", "lambda"])?;
                no_controls()?;
                models::consensus(dim, horizon, need(self.k, "k")?, need(self.lambda, "lambda")?)
            }
            "linear" => {
                self.unused(&["a"])?;
                let u = controls.cloned().unwrap_or_else(|| models::axis_controls(dim));
                models::linear(dim, horizon, need(self.a, "a")?, u)
            }
            "expr" => {
                self.unused(&["drift", "running", "terminal", "c_1"])?;
                let spec = ExprSpec {
                    dim,
                    horizon,
                    controls: controls
                        .cloned()
                        .ok_or_else(|| Error::Config("model 'expr' needs `U`".into()))?,
                    drift: self
                        .drift
                        .clone()
                        .ok_or_else(|| Error::Config("model 'expr' needs model.drift".into()))?,
                    running: self.running.clone().unwrap_or_else(|| "0".into()),
                    terminal: self.terminal.clone().unwrap_or_else(|| "0".into()),
                    c_1: self.c_1.unwrap_or(1.0),
                };
                expression_model("expr", &spec)?
            }
            other => return Err(Error::Config(format!("unknown model id '{other}'"))),
        };
        if model.horizon() != horizon {
            return model.with_horizon(horizon);
        }
        Ok(model)
    }
}

/// Validated scenario with its files loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    pub model: ControlModel,
    pub initial: ParticleMeasure,
    pub control: Option<RelaxedControl>,
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_scenario_with(path, &Overrides::default())
}

pub fn load_scenario_with(path: &Path, overrides: &Overrides) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = ScenarioConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    config.apply(overrides);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Scenario::from_config(config, base)
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig, base_dir: PathBuf) -> Result<Self> {
        let c = &config;
        if c.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                c.schema_version
            )));
        }
        if !(c.step > 0.0) {
            return Err(Error::Config(format!("step = {} must be positive", c.step)));
        }
        if !(c.horizon.is_finite() && c.s >= 0.0 && c.s < c.horizon) {
            return Err(Error::Config(format!("need 0 <= s < T, got s = {}, T = {}", c.s, c.horizon)));
        }
        if c.n_steps == 0 || !(c.budget > 0.0) {
            return Err(Error::Config("n_steps and budget must be positive".into()));
        }
        let model = c.model.build(c.horizon, c.controls.as_ref())?;
        let initial = read_measure(&base_dir.join(&c.initial_measure))?;
        if initial.dim() != model.dim() {
            return Err(Error::Config(format!(
                "initial measure has dimension {}, model has {}",
                initial.dim(),
                model.dim()
            )));
        }
        let control = match &c.control_file {
            Some(p) => {
                let path = base_dir.join(p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let file: ControlFile =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let xi = file.into_control(model.n_controls())?;
                if xi.start() != c.s || xi.end() != c.horizon {
                    return Err(Error::Config(format!(
                        "control file covers [{}, {}], scenario needs [{}, {}]",
                        xi.start(),
                        xi.end(),
                        c.s,
                        c.horizon
                    )));
                }
                Some(xi)
            }
            None => None,
        };
        Ok(Self { config, base_dir, model, initial, control })
    }

    /// The value dictionary described by `[dictionary]`.
    pub fn dictionary(&self) -> Result<ValueDictionary> {
        let spec = self
            .config
            .dictionary
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [dictionary] section".into()))?;
        match spec.kind {
            DictionaryKind::Band => {
                if spec.path.is_some() {
                    return Err(Error::Config("dictionary.path does not apply to kind 'band'".into()));
                }
                if self.config.model.id != "translation" || self.model.dim() != 1 {
                    return Err(Error::Config("band dictionaries need the one-dimensional translation model".into()));
                }
                let band = Band {
                    per_unit: spec.per_unit.unwrap_or(100),
                    half_width: spec.half_width.unwrap_or(0.5),
                    horizon: self.config.horizon,
                };
                let horizon = self.config.horizon;
                let (off, term) = (spec.offset, spec.terminal_offset);
                band.dictionary_with(move |t, _| if t == horizon { term } else { off })
            }
            DictionaryKind::File => {
                if spec.per_unit.is_some() || spec.half_width.is_some() || spec.offset != 0.0 || spec.terminal_offset != 0.0 {
                    return Err(Error::Config("band parameters do not apply to kind 'file'".into()));
                }
                let rel = spec.path.as_ref().ok_or_else(|| Error::Config("dictionary.path is required".into()))?;
                let path = self.base_dir.join(rel);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let file: DictionaryFile =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                let entries = file
                    .entry
                    .into_iter()
                    .map(|e| Ok((e.t, read_measure(&dir.join(&e.measure))?, e.value)))
                    .collect::<Result<Vec<_>>>()?;
                ValueDictionary::new(entries)
            }
        }
    }

    /// Certification starts from `[[certify.starts]]`.
    pub fn starts(&self) -> Result<Vec<ScenarioStart>> {
        self.points(&self.config.certify.starts, "starts")
    }

    /// Bellman test points from `[[certify.test_points]]`.
    pub fn test_points(&self) -> Result<Vec<ScenarioStart>> {
        self.points(&self.config.certify.test_points, "test_points")
    }

    fn points(&self, specs: &[PointSpec], what: &str) -> Result<Vec<ScenarioStart>> {
        if specs.is_empty() {
            return Err(Error::Config(format!("this command needs at least one certify.{what} entry")));
        }
        let dim = self.model.dim();
        specs
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let n = p.points.len() / dim.max(1);
                let weights = p.weights.clone().unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
                let mu = ParticleMeasure::new(dim, p.points.clone(), weights)
                    .map_err(|e| Error::Config(format!("certify.{what}[{k}]: {e}")))?;
                let label = if p.label.is_empty() { format!("{what}{k}") } else { p.label.clone() };
                Ok(ScenarioStart { label, s: p.s, mu })
            })
            .collect()
    }

    fn required(&self, v: Option<f64>, name: &str) -> Result<f64> {
        v.ok_or_else(|| Error::Config(format!("this command needs certify.{name} (or --{name})")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Value,
    Aim,
    Regularize,
    CheckBellman,
    CertifyUpper,
    CertifyLower,
    SearchComplex,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Value => "value",
            Command::Aim => "aim",
            Command::Regularize => "regularize",
            Command::CheckBellman => "check-bellman",
            Command::CertifyUpper => "certify-upper",
            Command::CertifyLower => "certify-lower",
            Command::SearchComplex => "search-complex",
        }
    }
}

/// In-memory result of a command.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub passed: bool,
}

impl Outcome {
    fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.artifacts.push((name.into(), contents.into()));
    }

    fn note(&mut self, key: &str, value: serde_json::Value) {
        self.summary.insert(key.into(), value);
    }
}

fn toml_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    toml::to_string(v).expect("serializes").into_bytes()
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Runs `cmd` on `sc` without touching the file system.
pub fn execute(cmd: Command, sc: &Scenario) -> Result<Outcome> {
    let c = &sc.config;
    let model = &sc.model;
    let (s, horizon, step) = (c.s, c.horizon, c.step);
    let mut out = Outcome { passed: true, ..Default::default() };
    match cmd {
        Command::Simulate => {
            let xi = match &sc.control {
                Some(xi) => xi.clone(),
                None => RelaxedControl::pure(vec![s, horizon], &[0], model.n_controls())?,
            };
            let traj = solve_continuity(model, s, horizon, &sc.initial, &xi, step)?;
            let mut weak = Table::new(&["test_function", "degree", "residual"]);
            let mut worst: f64 = 0.0;
            for (k, phi) in Polynomial::monomial_basis(model.dim(), 2).iter().enumerate() {
                let r = weak_form_residual(model, &traj, phi);
                worst = worst.max(r);
                weak.push(vec![k.into(), (phi.degree() as usize).into(), r.into()]);
            }
            let growth = growth_diagnostics(&traj, model.growth_bounds())?;
            let mut g = Table::new(&["constant", "fitted"]);
            for (name, v) in [("c1", growth.c1), ("c2", growth.c2), ("c3", growth.c3), ("c4", growth.c4)] {
                g.push(vec![name.into(), v.into()]);
            }
            let payoff = running_cost_integral(model, &traj) + model.terminal_cost(&traj.terminal());
            let bound = 10.0 * step * step;
            out.add("trajectory.csv", traj.to_table().to_csv());
            out.add("weak_form.csv", weak.to_csv());
            out.add("growth.csv", g.to_csv());
            out.note("payoff", json!(payoff));
            out.note("max_weak_residual", json!(worst));
            out.note("residual_bound", json!(bound));
            out.note("growth_violations", json!(growth.violations));
            out.passed = worst <= bound && growth.within_bounds();
        }
        Command::Value => {
            let q = ValueQuery::uniform(model, s, sc.initial.clone(), c.n_steps, step).with_budget(c.budget);
            let res = value_dp(model, &q)?;
            let mut t = Table::new(&["value", "sequences", "nodes_expanded", "cache_hits"]);
            t.push(vec![
                res.value.into(),
                res.stats.sequences.into(),
                (res.stats.nodes_expanded as usize).into(),
                (res.stats.cache_hits as usize).into(),
            ]);
            let traj = solve_continuity(model, s, horizon, &sc.initial, &res.control, step)?;
            out.add("value.csv", t.to_csv());
            out.add("best_control.toml", toml_bytes(&ControlFile::from(&res.control)));
            out.add("trajectory.csv", traj.to_table().to_csv());
            out.note("value", json!(res.value));
            out.note("sequences", json!(res.stats.sequences));
            out.note("nodes_expanded", json!(res.stats.nodes_expanded));
        }
        Command::Aim => {
            let dict = Arc::new(sc.dictionary()?);
            let kappa = sc.required(c.certify.kappa, "kappa")?;
            let epsilon = sc.required(c.certify.epsilon, "epsilon")?;
            let alpha = sc.required(c.certify.alpha, "alpha")?;
            let partition = Partition::with_max_spacing(s, horizon, alpha)?;
            let strategy = FeedbackStrategy { dict: dict.clone(), kappa, epsilon };
            let rec = run_process(model, &strategy, s, &sc.initial, &partition, step)?;
            let payoff = payoff_feedback(model, s, &sc.initial, &rec, step)?;
            out.add("audit.csv", rec.audit_table().to_csv());
            out.add("trajectory.csv", rec.trajectory.to_table().to_csv());
            out.add("control.toml", toml_bytes(&ControlFile::from(&rec.control)));
            out.note("payoff", json!(payoff));
            out.note("phi", dict.evaluate(s, &sc.initial).map_or(serde_json::Value::Null, |v| json!(v)));
            out.note("c_d", json!(rec.c_d));
            let worst = rec.worst_gated_margin();
            out.note("worst_audit_margin", json!(worst));
            out.passed = worst.is_none_or(|m| m >= -1e-6);
        }
        Command::Regularize => {
            let dict = sc.dictionary()?;
            let kappa = sc.required(c.certify.kappa, "kappa")?;
            let mut gaps = Table::new(&["kappa", "gap", "rho1", "rho3"]);
            let mut ok = true;
            let mut prev = f64::INFINITY;
            for k in [kappa, kappa / 2.0, kappa / 4.0] {
                let g = envelope_gap(&dict, k);
                ok &= g.gap <= g.rho3 + 1e-12 && g.gap <= prev + 1e-12;
                prev = g.gap;
                gaps.push(vec![k.into(), g.gap.into(), dict.rho1(k).into(), g.rho3.into()]);
            }
            let my = dict.inf_envelope(s, &sc.initial, kappa)?;
            // The distance bound compares against phi(s, mu), so it only applies to stored points.
            let bound = (kappa * (2.0 * dict.c0()).sqrt()).min(dict.rho1(kappa));
            let stored = dict.find(s, &sc.initial).is_some();
            ok &= !stored || my.anchor_distance <= bound + 1e-12;
            let mut env = Table::new(&["kappa", "value", "anchor_t", "anchor_distance", "distance_bound", "stored"]);
            env.push(vec![
                kappa.into(),
                my.value.into(),
                my.anchor_t.into(),
                my.anchor_distance.into(),
                bound.into(),
                stored.into(),
            ]);
            let pair = proximal_pair_from_anchor(&my)?;
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            let probes = random_probes(&pair.gamma, &dict.points(), 50, &mut rng);
            let report = check_prox_subgradient(&dict, &pair, &probes, Some(0.5 / (kappa * kappa)), 0.0)?;
            let mut prox = Table::new(&["probe_id", "margin", "pass"]);
            for (k, m) in report.margins.iter().enumerate() {
                prox.push(vec![k.into(), (*m).into(), (*m >= -1e-8).into()]);
            }
            ok &= report.passes(1e-8);
            out.add("gaps.csv", gaps.to_csv());
            out.add("envelope.csv", env.to_csv());
            out.add("prox.csv", prox.to_csv());
            out.note("envelope", json!(my.value));
            out.note("anchor_distance", json!(my.anchor_distance));
            out.note("min_prox_margin", json!(report.min_margin));
            out.passed = ok;
        }
        Command::CheckBellman => {
            let dict = sc.dictionary()?;
            let kappa = sc.required(c.certify.kappa, "kappa")?;
            let epsilon = sc.required(c.certify.epsilon, "epsilon")?;
            let pts: Vec<(f64, ParticleMeasure)> =
                sc.test_points()?.into_iter().map(|p| (p.s, p.mu)).collect();
            let sub = subsolution_margin(model, &dict, &pts, kappa, epsilon, c.certify.tol)?;
            let sup = supersolution_margin(model, &dict, &pts, kappa, epsilon, c.certify.tol)?;
            out.add("bellman_sub.csv", sub.to_table().to_csv());
            out.add("bellman_super.csv", sup.to_table().to_csv());
            out.note("sub_min_margin", finite_or_null(sub.min_margin()));
            out.note("super_min_margin", finite_or_null(sup.min_margin()));
            out.note("gated", json!(sub.gated().count()));
            out.note("c_d", json!(sub.c_d));
            out.passed = sub.passes() && sup.passes();
        }
        Command::CertifyUpper => {
            let dict = Arc::new(sc.dictionary()?);
            let starts = sc.starts()?;
            let kappa = sc.required(c.certify.kappa, "kappa")?;
            let epsilon = sc.required(c.certify.epsilon, "epsilon")?;
            let eta = sc.required(c.certify.eta, "eta")?;
            let alpha_hi = sc.required(c.certify.alpha, "alpha")?;
            let alpha_lo = starts
                .iter()
                .map(|p| Partition::with_max_spacing(p.s, horizon, alpha_hi).map(|q| q.min_spacing()))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            let complex = ParameterComplex { kappa, epsilon, alpha_lo, alpha_hi };
            let rep = upper_bound_check(model, dict, &starts, &complex, eta, step, Some(c.n_steps))?;
            out.add("upper.csv", rep.to_table().to_csv());
            for (k, rec) in rep.records.iter().enumerate() {
                out.add(format!("audit_{k}.csv"), rec.audit_table().to_csv());
            }
            let worst = rep.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
            out.note("min_margin", json!(worst));
            out.note("c_d", json!(rep.c_d));
            out.passed = rep.passes(c.certify.tol) && rep.audit_passes(1e-6);
        }
        Command::CertifyLower => {
            let dict = Arc::new(sc.dictionary()?);
            let starts = sc.starts()?;
            let kappa = sc.required(c.certify.kappa, "kappa")?;
            let epsilon = sc.required(c.certify.epsilon, "epsilon")?;
            let rep = lower_bound_check(model, dict, &starts, c.n_steps, kappa, epsilon, c.certify.tol, step)?;
            out.add("lower.csv", rep.to_table().to_csv());
            let worst = rep.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
            out.note("min_margin", json!(worst));
            out.note("c_d", json!(rep.c_d));
            out.passed = rep.passes();
        }
        Command::SearchComplex => {
            let dict = Arc::new(sc.dictionary()?);
            let starts = sc.starts()?;
            let eta = sc.required(c.certify.eta, "eta")?;
            let found = search_parameter_complex(model, dict, &starts, eta, &SearchGrid::default(), step)?;
            let p = found.complex;
            let mut t = Table::new(&["kappa", "epsilon", "alpha_lo", "alpha_hi", "c_d", "tried"]);
            t.push(vec![p.kappa.into(), p.epsilon.into(), p.alpha_lo.into(), p.alpha_hi.into(), found.c_d.into(), found.tried.into()]);
            let mut m = Table::new(&["scenario", "margin"]);
            for (st, v) in starts.iter().zip(&found.margins) {
                m.push(vec![st.label.clone().into(), (*v).into()]);
            }
            out.add("complex.csv", t.to_csv());
            out.add("margins.csv", m.to_csv());
            out.note("kappa", json!(p.kappa));
            out.note("epsilon", json!(p.epsilon));
            out.note("alpha_hi", json!(p.alpha_hi));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_hash: String,
    pub config: String,
    pub version: String,
    pub started: String,
    pub wall_clock_secs: f64,
    pub artifacts: Vec<String>,
    pub passed: bool,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every listed artifact exists and the hash matches the stored config.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        if let Some(missing) = self.artifacts.iter().find(|a| !dir.join(a).is_file()) {
            return Err(Error::Config(format!("artifact '{missing}' is missing from {}", dir.display())));
        }
        let config = ScenarioConfig::parse(&self.config)?;
        if config.hash() != self.scenario_hash {
            return Err(Error::Config("scenario hash does not match the stored config".into()));
        }
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Executes `cmd` and persists its artifacts under a fresh directory of `out_root`.
pub fn run(cmd: Command, sc: &Scenario, out_root: &Path) -> Result<RunRecord> {
    let clock = Instant::now();
    let started = chrono::Utc::now();
    let outcome = execute(cmd, sc)?;
    let hash = sc.config.hash();
    let stem = format!("{}-{}-{}", cmd.name(), started.format("%Y%m%dT%H%M%SZ"), &hash[..12]);
    let mut dir = out_root.join(&stem);
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = out_root.join(format!("{stem}-{n}"));
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config = sc.config.to_toml();
    write_atomic(&dir.join(CONFIG_SNAPSHOT), config.as_bytes())?;
    let mut artifacts = vec![CONFIG_SNAPSHOT.to_string()];
    for (name, bytes) in &outcome.artifacts {
        write_atomic(&dir.join(name), bytes)?;
        artifacts.push(name.clone());
    }
    let manifest = RunManifest {
        command: cmd.name().into(),
        scenario_hash: hash,
        config,
        version: env!("CARGO_PKG_VERSION").into(),
        started: started.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        artifacts,
        passed: outcome.passed,
        summary: outcome.summary,
    };
    manifest.write(&dir)?;
    Ok(RunRecord { dir, manifest })
}

struct PlotRule {
    /// Artifact name, or prefix when it ends in `_`.
    source: &'static str,
    target: &'static str,
    x: &'static str,
    ys: &'static [&'static str],
}

const PLOT_RULES: &[PlotRule] = &[
    PlotRule { source: "upper.csv", target: "plot_margins.csv", x: "", ys: &["margin", "value_margin"] },
    PlotRule { source: "lower.csv", target: "plot_margins.csv", x: "", ys: &["margin"] },
    PlotRule { source: "margins.csv", target: "plot_margins.csv", x: "", ys: &["margin"] },
    PlotRule { source: "bellman_sub.csv", target: "plot_bellman.csv", x: "point_id", ys: &["margin"] },
    PlotRule { source: "bellman_super.csv", target: "plot_bellman.csv", x: "point_id", ys: &["margin"] },
    PlotRule { source: "gaps.csv", target: "plot_gaps.csv", x: "kappa", ys: &["gap", "rho3"] },
    PlotRule { source: "audit_", target: "plot_audit.csv", x: "step", ys: &["hamiltonian_margin"] },
    PlotRule { source: "audit.csv", target: "plot_audit.csv", x: "step", ys: &["hamiltonian_margin"] },
];

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("{} has no column '{name}'", path.display())))
}

/// Writes long-format `series,x,y` CSVs for the trajectories, margins and envelope gaps
/// of a finished run and lists them in its manifest.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<String>> {
    let mut manifest = RunManifest::read(dir)?;
    manifest.verify(dir)?;
    let mut outputs: BTreeMap<&str, Table> = BTreeMap::new();
    for name in manifest.artifacts.clone() {
        let path = dir.join(&name);
        let stem = name.trim_end_matches(".csv");
        if name == "trajectory.csv" {
            let (header, rows) = read_csv(&path)?;
            let (ti, pi) = (column(&header, "time", &path)?, column(&header, "particle_id", &path)?);
            let coords: Vec<usize> = (0..header.len()).filter(|&k| header[k].starts_with("x_")).collect();
            let table = outputs.entry("plot_trajectory.csv").or_insert_with(|| Table::new(&["series", "x", "y"]));
            for r in &rows {
                for &k in &coords {
                    table.push(vec![
                        format!("particle_{}_{}", r[pi], header[k]).into(),
                        r[ti].clone().into(),
                        r[k].clone().into(),
                    ]);
                }
            }
            continue;
        }
        let rule = PLOT_RULES.iter().find(|rule| {
            if rule.source.ends_with('_') {
                name.starts_with(rule.source) && name.ends_with(".csv")
            } else {
                name == rule.source
            }
        });
        let Some(rule) = rule else { continue };
        let (header, rows) = read_csv(&path)?;
        let xi = if rule.x.is_empty() { None } else { Some(column(&header, rule.x, &path)?) };
        let table = outputs.entry(rule.target).or_insert_with(|| Table::new(&["series", "x", "y"]));
        for y in rule.ys {
            let yi = column(&header, y, &path)?;
            for (k, r) in rows.iter().enumerate() {
                let x = xi.map_or_else(|| k.to_string(), |i| r[i].clone());
                table.push(vec![format!("{stem}:{y}").into(), x.into(), r[yi].clone().into()]);
            }
        }
    }
    let mut written = Vec::new();
    for (name, table) in outputs {
        write_atomic(&dir.join(name), table.to_csv().as_bytes())?;
        if !manifest.artifacts.iter().any(|a| a == name) {
            manifest.artifacts.push(name.to_string());
        }
        written.push(name.to_string());
    }
    manifest.write(dir)?;
    Ok(written)
}

/// Process exit code for a failed command: 1 for failed checks, 2 for usage and
/// configuration problems, 3 for numeric failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Hypothesis(_) | Error::SearchExhausted(_) => 1,
        Error::NonFinite { .. } | Error::Solver(_) | Error::InvalidPlan(_) => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nT = 1.0\ninitial_measure = \"m.toml\"\n[model]\nid = \"translation\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!((c.s, c.step, c.n_steps, c.seed), (0.0, 0.01, 10, 0));
        assert_eq!(c.model.dimension, 1);
        assert_eq!(c.certify.tol, 1e-3);
    }

    #[test]
    fn missing_horizon_is_named() {
        let text = MINIMAL.replace("T = 1.0\n", "");
        match ScenarioConfig::parse(&text) {
            Err(Error::Config(m)) => assert!(m.contains("`T`"), "{m}"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("T = 1.0", "T = 1.0\nhorizon = 2.0");
        assert!(ScenarioConfig::parse(&text).is_err());
        let text = MINIMAL.to_string() + "dimesion = 2\n";
        assert!(ScenarioConfig::parse(&text).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = MINIMAL.replace("T = 1.0", "T = ");
        let Err(Error::Config(m)) = ScenarioConfig::parse(&text) else { panic!() };
        assert!(m.contains("line 2"), "{m}");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Hypothesis(String::new())), 1);
        assert_eq!(exit_code(&Error::Config(String::new())), 2);
        assert_eq!(exit_code(&Error::NonFinite { time: 0.0 }), 3);
    }
}
