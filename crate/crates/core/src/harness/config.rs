//! Experiment configuration files.
//!
//! ```toml
//! seed = 7
//!
//! [problem]
//! name = "tp-path2"
//!
//! [algorithm]
//! name = "a1"
//! alpha = "certified"
//! max_iter = 50000
//! tol = 1e-10
//!
//! [init]
//! mode = "oracle-perturb"
//! radius = 0.1
//! ```

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::multipliers::{InnerConfig, InnerStep, MoMConfig};
use crate::network::Mode;
use crate::oracle::{OracleOptions, DEFAULT_RADIUS, DEFAULT_RESTARTS};
use crate::problem::fixtures::Fixture;
use crate::problem::{LiftedProblem, LocalProblem, Polynomial};
use crate::solvers::{Algorithm, Execution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// Rate-optimal step below the certified stability bound.
    Certified,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmConfig {
    FirstOrder {
        algorithm: Algorithm,
        alpha: StepSize,
        c: f64,
        max_iter: usize,
        tol: f64,
    },
    Multipliers(MoMConfig),
}

impl AlgorithmConfig {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            AlgorithmConfig::FirstOrder { algorithm, .. } => *algorithm,
            AlgorithmConfig::Multipliers(_) => Algorithm::A3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    OraclePerturb { radius: f64 },
    Explicit { x: Vec<f64>, mu: Vec<f64>, lambda: Vec<f64> },
    Zeros,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub problem: LiftedProblem,
    pub fixture: Option<Fixture>,
    pub algorithm: AlgorithmConfig,
    pub execution: Execution,
    pub init: InitMode,
    pub oracle_x_init: Vec<f64>,
    pub oracle: OracleOptions,
    pub certify: bool,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| {
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<parse>".into());
            Error::config(location, e.message().to_string())
        })?;
        let root = Section::root(&root);
        root.deny_unknown(&["seed", "problem", "graph", "algorithm", "init", "oracle", "output"])?;
        let seed = root.opt_u64("seed")?.unwrap_or(0);

        let problem_section = root.section("problem")?;
        problem_section.deny_unknown(&["name", "custom"])?;
        let name = problem_section.string("name")?;
        let graph = match root.opt_section("graph")? {
            Some(g) => Some(parse_graph(&g)?),
            None => None,
        };
        let (problem, fixture) = match problem_section.opt_section("custom")? {
            Some(custom) => {
                let graph = graph.ok_or_else(|| Error::config("graph", "a custom problem needs a [graph] section"))?;
                (parse_custom(&custom, &name, graph)?, None)
            }
            None => {
                let fixture: Fixture = name.parse()?;
                let graph = graph.unwrap_or_else(|| fixture.graph());
                let p = LiftedProblem::new(fixture.name(), fixture.agents(), graph)
                    .map_err(|e| Error::config("graph", e.to_string()))?;
                (p, Some(fixture))
            }
        };

        let alg = root.section("algorithm")?;
        let (algorithm, execution) = parse_algorithm(&alg)?;

        let init = match root.opt_section("init")? {
            None => InitMode::OraclePerturb { radius: 0.1 },
            Some(s) => parse_init(&s, &problem)?,
        };

        let mut oracle = OracleOptions {
            seed,
            ..Default::default()
        };
        let mut oracle_x_init = fixture.map(Fixture::oracle_start).unwrap_or_else(|| vec![0.0; problem.dim()]);
        if let Some(o) = root.opt_section("oracle")? {
            o.deny_unknown(&["x_init", "restarts", "radius"])?;
            if let Some(x) = o.opt_floats("x_init")? {
                if x.len() != problem.dim() {
                    return Err(o.error("x_init", format!("expected {} entries, got {}", problem.dim(), x.len())));
                }
                oracle_x_init = x;
            }
            oracle.restarts = o.opt_usize("restarts")?.unwrap_or(DEFAULT_RESTARTS);
            oracle.radius = o.opt_positive("radius")?.unwrap_or(DEFAULT_RADIUS);
        }

        let (certify, output_dir) = match root.opt_section("output")? {
            Some(o) => {
                o.deny_unknown(&["dir", "certify"])?;
                (o.opt_bool("certify")?.unwrap_or(true), o.opt_string("dir")?.map(PathBuf::from))
            }
            None => (true, None),
        };

        Ok(ExperimentConfig {
            seed,
            problem,
            fixture,
            algorithm,
            execution,
            init,
            oracle_x_init,
            oracle,
            certify,
            output_dir,
        })
    }
}

fn parse_algorithm(alg: &Section<'_>) -> Result<(AlgorithmConfig, Execution)> {
    let name = alg.string("name")?;
    let algorithm = match name.to_ascii_lowercase().as_str() {
        "a1" => Algorithm::A1,
        "a2" => Algorithm::A2,
        "a3" => Algorithm::A3,
        other => return Err(alg.error("name", format!("unknown algorithm `{other}` (expected a1, a2 or a3)"))),
    };
    let execution = match alg.opt_string("execution")?.as_deref() {
        None | Some("stacked") => Execution::Stacked,
        Some("network") => Execution::Network(Mode::Serial),
        Some("network-parallel") => Execution::Network(Mode::Parallel),
        Some(other) => {
            return Err(alg.error(
                "execution",
                format!("unknown mode `{other}` (expected stacked, network or network-parallel)"),
            ))
        }
    };
    let config = match algorithm {
        Algorithm::A1 | Algorithm::A2 => {
            alg.deny_unknown(&["name", "alpha", "c", "max_iter", "tol", "execution"])?;
            let alpha = match alg.get("alpha") {
                None => return Err(alg.error("alpha", "missing required key")),
                Some(Value::String(s)) if s == "certified" => StepSize::Certified,
                Some(_) => StepSize::Fixed(alg.positive("alpha")?),
            };
            let c = match algorithm {
                Algorithm::A2 => alg.non_negative("c")?,
                _ => {
                    if alg.get("c").is_some() {
                        log::warn!("algorithm.c is ignored by A1");
                    }
                    0.0
                }
            };
            AlgorithmConfig::FirstOrder {
                algorithm,
                alpha,
                c,
                max_iter: alg.opt_usize("max_iter")?.unwrap_or(50_000),
                tol: alg.opt_non_negative("tol")?.unwrap_or(1e-10),
            }
        }
        Algorithm::A3 => {
            alg.deny_unknown(&["name", "c0", "beta", "c_max", "inner", "outer", "tol", "execution"])?;
            let defaults = MoMConfig::default();
            let mut inner = InnerConfig::default();
            if let Some(s) = alg.opt_section("inner")? {
                s.deny_unknown(&["alpha", "schedule", "eps0", "gamma", "max_iter"])?;
                inner.step = match (s.get("alpha"), s.opt_section("schedule")?) {
                    (Some(_), Some(_)) => return Err(s.error("schedule", "give either alpha or schedule, not both")),
                    (Some(Value::String(v)), None) if v == "auto" => InnerStep::Auto,
                    (Some(_), None) => InnerStep::Constant { alpha: s.positive("alpha")? },
                    (None, Some(sch)) => {
                        sch.deny_unknown(&["a", "b"])?;
                        InnerStep::Diminishing {
                            a: sch.positive("a")?,
                            b: sch.positive("b")?,
                        }
                    }
                    (None, None) => InnerStep::Auto,
                };
                inner.eps0 = s.opt_positive("eps0")?.unwrap_or(inner.eps0);
                inner.gamma = s.opt_f64("gamma")?.unwrap_or(inner.gamma);
                inner.max_iter = s.opt_usize("max_iter")?.unwrap_or(inner.max_iter);
            }
            let outer_max_iter = match alg.opt_section("outer")? {
                Some(o) => {
                    o.deny_unknown(&["max_iter"])?;
                    o.opt_usize("max_iter")?.unwrap_or(defaults.outer_max_iter)
                }
                None => defaults.outer_max_iter,
            };
            let cfg = MoMConfig {
                c0: alg.positive("c0")?,
                beta: alg.f64("beta")?,
                c_max: alg.positive("c_max")?,
                inner,
                outer_max_iter,
                tol: alg.opt_non_negative("tol")?.unwrap_or(defaults.tol),
                execution,
            };
            cfg.validate().map_err(|e| match e {
                Error::InvalidParameter { name, reason } => Error::config(format!("algorithm.{name}"), reason),
                other => other,
            })?;
            AlgorithmConfig::Multipliers(cfg)
        }
    };
    Ok((config, execution))
}

fn parse_init(s: &Section<'_>, p: &LiftedProblem) -> Result<InitMode> {
    s.deny_unknown(&["mode", "radius", "x", "mu", "lambda"])?;
    let mode = s.opt_string("mode")?.unwrap_or_else(|| "oracle-perturb".into());
    match mode.as_str() {
        "oracle-perturb" => Ok(InitMode::OraclePerturb {
            radius: s.opt_non_negative("radius")?.unwrap_or(0.1),
        }),
        "zeros" => Ok(InitMode::Zeros),
        "explicit" => {
            let check = |key: &str, v: Vec<f64>, len: usize| {
                if v.len() == len {
                    Ok(v)
                } else {
                    Err(s.error(key, format!("expected {len} entries, got {}", v.len())))
                }
            };
            Ok(InitMode::Explicit {
                x: check("x", s.floats("x")?, p.x_len())?,
                mu: check("mu", s.opt_floats("mu")?.unwrap_or_default(), p.num_constraints())?,
                lambda: check("lambda", s.opt_floats("lambda")?.unwrap_or_else(|| vec![0.0; p.lambda_len()]), p.lambda_len())?,
            })
        }
        other => Err(s.error(
            "mode",
            format!("unknown init mode `{other}` (expected oracle-perturb, explicit or zeros)"),
        )),
    }
}

fn parse_graph(g: &Section<'_>) -> Result<GraphSpec> {
    g.deny_unknown(&["num_agents", "edges", "symmetric_weights"])?;
    let num_agents = g.usize("num_agents")?;
    let symmetric = g.opt_bool("symmetric_weights")?.unwrap_or(false);
    let edges = g.array("edges")?;
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len() * 2);
    for (idx, edge) in edges.iter().enumerate() {
        let key = format!("edges[{idx}]");
        let triple = edge
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| g.error(&key, "expected [i, j, weight]"))?;
        let index = |v: &Value| -> Result<usize> {
            match v.as_integer() {
                Some(i) if i >= 1 && (i as usize) <= num_agents => Ok(i as usize - 1),
                _ => Err(g.error(&key, format!("agent indices are 1-based and at most {num_agents}"))),
            }
        };
        let weight = number(&triple[2]).ok_or_else(|| g.error(&key, "weight must be a number"))?;
        entries.push((index(&triple[0])?, index(&triple[1])?, weight));
    }
    if symmetric {
        let present: Vec<(usize, usize)> = entries.iter().map(|e| (e.0, e.1)).collect();
        let reverse: Vec<(usize, usize, f64)> = entries
            .iter()
            .filter(|e| !present.contains(&(e.1, e.0)))
            .map(|e| (e.1, e.0, e.2))
            .collect();
        entries.extend(reverse);
    }
    let spec = GraphSpec::new(num_agents, entries);
    spec.validate().map_err(|e| g.error("edges", e.to_string()))?;
    Ok(spec)
}

fn parse_terms(s: &Section<'_>, key: &str, dim: usize) -> Result<Polynomial> {
    let raw = s.array(key)?;
    let mut terms = Vec::with_capacity(raw.len());
    for (idx, t) in raw.iter().enumerate() {
        let item_key = format!("{key}[{idx}]");
        let pair = t
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| s.error(&item_key, "expected [coefficient, [exponents...]]"))?;
        let coef = number(&pair[0]).ok_or_else(|| s.error(&item_key, "coefficient must be a number"))?;
        let exps = pair[1]
            .as_array()
            .ok_or_else(|| s.error(&item_key, "exponents must be a list"))?
            .iter()
            .map(|e| e.as_integer().filter(|&v| v >= 0).map(|v| v as u32))
            .collect::<Option<Vec<u32>>>()
            .ok_or_else(|| s.error(&item_key, "exponents must be non-negative integers"))?;
        if exps.len() != dim {
            return Err(s.error(&item_key, format!("expected {dim} exponents, got {}", exps.len())));
        }
        terms.push((coef, exps));
    }
    Ok(Polynomial::new(dim, terms).expect("exponent lengths checked"))
}

fn parse_custom(custom: &Section<'_>, name: &str, graph: GraphSpec) -> Result<LiftedProblem> {
    custom.deny_unknown(&["dim", "agents"])?;
    let dim = custom.usize("dim")?;
    if dim == 0 {
        return Err(custom.error("dim", "must be positive"));
    }
    let agents = custom.array("agents")?;
    let mut locals = Vec::with_capacity(agents.len());
    for (idx, a) in agents.iter().enumerate() {
        let table = a
            .as_table()
            .ok_or_else(|| custom.error(&format!("agents[{idx}]"), "expected a table with `f` and optional `h`"))?;
        let section = Section {
            path: format!("{}.agents[{idx}]", custom.path),
            table,
        };
        section.deny_unknown(&["f", "h"])?;
        let mut local = LocalProblem::new(parse_terms(&section, "f", dim)?);
        if section.get("h").is_some() {
            local = local.with_constraint(parse_terms(&section, "h", dim)?);
        }
        locals.push(local);
    }
    LiftedProblem::new(name, locals, graph).map_err(|e| Error::config(custom.path.clone(), e.to_string()))
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// A table plus its dotted key path, for diagnostics.
struct Section<'a> {
    path: String,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn root(table: &'a Table) -> Self {
        Section {
            path: String::new(),
            table,
        }
    }

    fn key(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::config(self.key(key), message)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    fn deny_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.table.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.error(k, "unknown key")),
            None => Ok(()),
        }
    }

    fn opt_section(&self, key: &str) -> Result<Option<Section<'a>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section {
                path: self.key(key),
                table: t,
            })),
            Some(_) => Err(self.error(key, "expected a table")),
        }
    }

    fn section(&self, key: &str) -> Result<Section<'a>> {
        self.opt_section(key)?.ok_or_else(|| self.error(key, "missing required section"))
    }

    fn opt_string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.error(key, "expected a string")),
        }
    }

    fn string(&self, key: &str) -> Result<String> {
        self.opt_string(key)?.ok_or_else(|| self.error(key, "missing required key"))
    }

    fn opt_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.error(key, "expected true or false")),
        }
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => number(v).map(Some).ok_or_else(|| self.error(key, "expected a number")),
        }
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.opt_f64(key)?.ok_or_else(|| self.error(key, "missing required key"))
    }

    fn opt_positive(&self, key: &str) -> Result<Option<f64>> {
        match self.opt_f64(key)? {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(self.error(key, format!("must be positive and finite, got {v}"))),
            other => Ok(other),
        }
    }

    fn positive(&self, key: &str) -> Result<f64> {
        self.opt_positive(key)?.ok_or_else(|| self.error(key, "missing required key"))
    }

    fn opt_non_negative(&self, key: &str) -> Result<Option<f64>> {
        match self.opt_f64(key)? {
            Some(v) if !(v >= 0.0 && v.is_finite()) => Err(self.error(key, format!("must be non-negative and finite, got {v}"))),
            other => Ok(other),
        }
    }

    fn non_negative(&self, key: &str) -> Result<f64> {
        self.opt_non_negative(key)?.ok_or_else(|| self.error(key, "missing required key"))
    }

    fn opt_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.error(key, "expected a non-negative integer")),
        }
    }

    fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.opt_u64(key)?.map(|v| v as usize))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.opt_usize(key)?.ok_or_else(|| self.error(key, "missing required key"))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>> {
        match self.get(key) {
            None => Err(self.error(key, "missing required key")),
            Some(Value::Array(a)) => Ok(a),
            Some(_) => Err(self.error(key, "expected a list")),
        }
    }

    fn opt_floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(number)
                .collect::<Option<Vec<f64>>>()
                .map(Some)
                .ok_or_else(|| self.error(key, "expected a list of numbers")),
            Some(_) => Err(self.error(key, "expected a list of numbers")),
        }
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>> {
        self.opt_floats(key)?.ok_or_else(|| self.error(key, "missing required key"))
    }
}
