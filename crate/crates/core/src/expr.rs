//! Control models given by arithmetic expressions.
//!
//! Variables: `t`, `x1..xd`, `u1..uk`, `mean1..meand` (mean of the current measure)
//! and `m2` (its second moment). When `d = 1` the aliases `x`, `u` and `mean` are also
//! bound. The drift has one expression per coordinate, the running cost is a
//! function of `t`, `u` and the measure statistics, and the terminal cost is
//! `G(m) = int g(x) dm(x)` for an integrand `g` of `x` and the measure statistics.

use std::sync::Arc;

use evalexpr::{build_operator_tree, Context, EvalexprError, EvalexprResult, Node, Value};

use crate::dynamics::{ControlModel, ModelConstants, PowerModulus};
use crate::error::{Error, Result};
use crate::measure::{norm_sq, ParticleMeasure};

#[derive(Debug, Clone)]
pub struct ExprSpec {
    pub dim: usize,
    pub horizon: f64,
    pub controls: Vec<Vec<f64>>,
    pub drift: Vec<String>,
    pub running: String,
    pub terminal: String,
    pub c_1: f64,
}

#[derive(Debug, Clone)]
struct Slots {
    names: Vec<String>,
    values: Vec<Value>,
}

impl Slots {
    fn new(dim: usize, cdim: usize) -> Self {
        let mut names = vec!["t".to_string(), "m2".to_string()];
        for k in 1..=dim {
            names.push(format!("x{k}"));
            names.push(format!("mean{k}"));
        }
        for k in 1..=cdim {
            names.push(format!("u{k}"));
        }
        if dim == 1 {
            names.extend(["x".to_string(), "mean".to_string()]);
        }
        if cdim == 1 {
            names.push("u".to_string());
        }
        let values = vec![Value::Float(0.0); names.len()];
        Self { names, values }
    }

    fn set(&mut self, name: &str, v: f64) {
        if let Some(k) = self.names.iter().position(|n| n == name) {
            self.values[k] = Value::Float(v);
        }
    }

    fn load(&mut self, t: f64, x: Option<&[f64]>, m: &ParticleMeasure, u: Option<&[f64]>) {
        self.set("t", t);
        self.set("m2", m.iter().map(|(y, w)| w * norm_sq(y)).sum());
        let mean = m.mean();
        for (k, v) in mean.iter().enumerate() {
            self.set(&format!("mean{}", k + 1), *v);
        }
        if mean.len() == 1 {
            self.set("mean", mean[0]);
        }
        if let Some(x) = x {
            for (k, v) in x.iter().enumerate() {
                self.set(&format!("x{}", k + 1), *v);
            }
            if x.len() == 1 {
                self.set("x", x[0]);
            }
        }
        if let Some(u) = u {
            for (k, v) in u.iter().enumerate() {
                self.set(&format!("u{}", k + 1), *v);
            }
            if u.len() == 1 {
                self.set("u", u[0]);
            }
        }
    }
}

impl Context for Slots {
    fn get_value(&self, identifier: &str) -> Option<&Value> {
        self.names.iter().position(|n| n == identifier).map(|k| &self.values[k])
    }

    fn call_function(&self, identifier: &str, _argument: &Value) -> EvalexprResult<Value> {
        Err(EvalexprError::FunctionIdentifierNotFound(identifier.to_string()))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(&mut self, _disabled: bool) -> EvalexprResult<()> {
        Err(EvalexprError::ContextNotMutable)
    }
}

fn compile(what: &str, src: &str, allowed: &Slots, forbidden: &[&str]) -> Result<Node> {
    let node = build_operator_tree(src).map_err(|e| Error::Config(format!("{what} '{src}': {e}")))?;
    for v in node.iter_read_variable_identifiers() {
        let known = allowed.names.iter().any(|n| n == v);
        let banned = forbidden.iter().any(|p| v == *p || (v.starts_with(p) && v[p.len()..].chars().all(|c| c.is_ascii_digit())));
        if !known || banned {
            return Err(Error::Config(format!("{what} '{src}': unknown variable '{v}'")));
        }
    }
    Ok(node)
}

fn eval(node: &Node, ctx: &Slots) -> f64 {
    node.eval_number_with_context(ctx).unwrap_or(f64::NAN)
}

/// Builds the model and checks that every expression evaluates to a finite number at
/// the origin for each control.
pub fn expression_model(name: &str, spec: &ExprSpec) -> Result<ControlModel> {
    if spec.drift.len() != spec.dim {
        return Err(Error::Config(format!(
            "drift has {} components for dimension {}",
            spec.drift.len(),
            spec.dim
        )));
    }
    let cdim = spec.controls.first().map_or(0, Vec::len);
    let slots = Slots::new(spec.dim, cdim);
    let drift: Vec<Node> = spec
        .drift
        .iter()
        .enumerate()
        .map(|(k, s)| compile(&format!("drift[{k}]"), s, &slots, &[]))
        .collect::<Result<_>>()?;
    let running = compile("running cost", &spec.running, &slots, &["x"])?;
    let terminal = compile("terminal cost", &spec.terminal, &slots, &["u", "t"])?;

    let drift = Arc::new(drift);
    let base = slots.clone();
    let drift_fn = {
        let drift = drift.clone();
        let base = base.clone();
        Arc::new(move |t: f64, x: &[f64], m: &ParticleMeasure, u: &[f64], out: &mut [f64]| {
            let mut ctx = base.clone();
            ctx.load(t, Some(x), m, Some(u));
            for (o, node) in out.iter_mut().zip(drift.iter()) {
                *o = eval(node, &ctx);
            }
        })
    };
    let running_fn = {
        let base = base.clone();
        Arc::new(move |t: f64, m: &ParticleMeasure, u: &[f64]| {
            let mut ctx = base.clone();
            ctx.load(t, None, m, Some(u));
            eval(&running, &ctx)
        })
    };
    let terminal_fn = Arc::new(move |m: &ParticleMeasure| {
        let mut ctx = base.clone();
        ctx.load(0.0, None, m, None);
        let mut acc = 0.0;
        for (x, w) in m.iter() {
            ctx.load(0.0, Some(x), m, None);
            acc += w * eval(&terminal, &ctx);
        }
        acc
    });
    let model = ControlModel::new(
        name,
        spec.dim,
        spec.horizon,
        spec.controls.clone(),
        drift_fn,
        running_fn,
        terminal_fn,
        ModelConstants {
            c_f: 0.0,
            c_l: 0.0,
            c_1: spec.c_1,
            omega_f: PowerModulus { coefficient: 0.0, exponent: 1.0 },
        },
    )?;

    let origin = ParticleMeasure::dirac(&vec![0.0; spec.dim])?;
    let mut f = vec![0.0; spec.dim];
    for u in 0..model.n_controls() {
        model.drift(0.0, origin.point(0), &origin, u, &mut f);
        let l = model.running_cost(0.0, &origin, u);
        if f.iter().chain([&l]).any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("model '{name}' does not evaluate at the origin for control {u}")));
        }
    }
    if !model.terminal_cost(&origin).is_finite() {
        return Err(Error::Config(format!("terminal cost of '{name}' does not evaluate at the origin")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    fn spec(drift: &str, running: &str, terminal: &str) -> ExprSpec {
        ExprSpec {
            dim: 1,
            horizon: 1.0,
            controls: models::axis_controls(1),
            drift: vec![drift.into()],
            running: running.into(),
            terminal: terminal.into(),
            c_1: 1.0,
        }
    }

    #[test]
    fn matches_library_translation() {
        let a = expression_model("e", &spec("u1", "0", "x^2")).unwrap();
        let b = models::translation(1, 1.0);
        let mu = ParticleMeasure::uniform(1, vec![-0.5, 2.0]).unwrap();
        let (mut fa, mut fb) = ([0.0], [0.0]);
        for u in 0..3 {
            a.drift(0.1, &[0.7], &mu, u, &mut fa);
            b.drift(0.1, &[0.7], &mu, u, &mut fb);
            assert_eq!(fa, fb);
        }
        assert_eq!(a.terminal_cost(&mu), b.terminal_cost(&mu));
    }

    #[test]
    fn nonlocal_variables() {
        let m = expression_model("e", &spec("u + (mean1 - x1)", "m2 * u^2", "(x - mean)^2")).unwrap();
        let mu = ParticleMeasure::uniform(1, vec![0.0, 2.0]).unwrap();
        let mut f = [0.0];
        m.drift(0.0, &[0.0], &mu, 2, &mut f);
        assert_eq!(f, [2.0]);
        assert_eq!(m.running_cost(0.0, &mu, 0), 2.0);
        assert_eq!(m.terminal_cost(&mu), 1.0);
    }

    #[test]
    fn rejects_unknown_and_misplaced_variables() {
        assert!(matches!(expression_model("e", &spec("y", "0", "0")), Err(Error::Config(_))));
        assert!(matches!(expression_model("e", &spec("0", "x1", "0")), Err(Error::Config(_))));
        assert!(matches!(expression_model("e", &spec("0", "0", "u")), Err(Error::Config(_))));
    }
}
