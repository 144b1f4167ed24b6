//! Agent-local problems, the lifted consensus problem and its (augmented) Lagrangian.
//!
//! The lifted problem stacks one copy `x_i ∈ R^n` per agent and couples the
//! copies through `S x = 0`. Only agents holding a constraint own a `μ` slot,
//! so `μ` has length `m ≤ N`.

mod field;
pub mod fixtures;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use field::{FnField, Polynomial, ScalarField, Term};

use crate::error::{Error, Result};
use crate::graph::{self, GraphSpec, Topology};

/// One agent's objective and optional scalar equality constraint.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    pub objective: Arc<dyn ScalarField>,
    pub constraint: Option<Arc<dyn ScalarField>>,
}

impl LocalProblem {
    pub fn new(objective: impl ScalarField + 'static) -> Self {
        LocalProblem {
            objective: Arc::new(objective),
            constraint: None,
        }
    }

    pub fn with_constraint(mut self, constraint: impl ScalarField + 'static) -> Self {
        self.constraint = Some(Arc::new(constraint));
        self
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }
}

/// Full iterate `(x, μ, λ)`: `x ∈ R^{nN}`, `μ ∈ R^m`, `λ ∈ R^{nN̄}` in incidence-row order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub x: DVector<f64>,
    pub mu: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl MultiplierState {
    pub fn x_block(&self, agent: usize, n: usize) -> &[f64] {
        &self.x.as_slice()[agent * n..(agent + 1) * n]
    }

    pub fn lambda_block(&self, row: usize, n: usize) -> &[f64] {
        &self.lambda.as_slice()[row * n..(row + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.mu.iter()).chain(self.lambda.iter()).all(|v| v.is_finite())
    }

    /// Euclidean norm of the stacked iterate.
    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.mu.norm_squared() + self.lambda.norm_squared()).sqrt()
    }
}

/// The three first-order KKT residual norms of the lifted problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub constraint: f64,
    pub consensus: f64,
}

impl KktResidual {
    pub fn total(&self) -> f64 {
        (self.stationarity.powi(2) + self.constraint.powi(2) + self.consensus.powi(2)).sqrt()
    }
}

/// Worst agreement between supplied derivatives and central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub samples: usize,
    pub max_rel_error: f64,
    pub worst_agent: Option<usize>,
    pub worst_function: Option<&'static str>,
    /// Hessian-vs-differenced-gradient error; `None` when no Hessians are available.
    pub max_hessian_rel_error: Option<f64>,
}

/// Lifted problem: `min Σ f_i(x_i)` s.t. `h_i(x_i) = 0`, `S x = 0`.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    name: String,
    dim: usize,
    agents: Vec<LocalProblem>,
    topology: Topology,
    mu_slot: Vec<Option<usize>>,
    constrained: Vec<usize>,
}

impl LiftedProblem {
    pub fn new(name: impl Into<String>, agents: Vec<LocalProblem>, graph: GraphSpec) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::Topology("problem has no agents".into()));
        }
        if graph.num_agents() != agents.len() {
            return Err(Error::DimensionMismatch {
                what: "graph size vs agent count",
                expected: agents.len(),
                got: graph.num_agents(),
            });
        }
        let dim = agents[0].dim();
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "agent dimension must be positive".into(),
            });
        }
        for agent in &agents {
            if agent.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what: "agent objective dimension",
                    expected: dim,
                    got: agent.dim(),
                });
            }
            if let Some(h) = &agent.constraint {
                if h.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "agent constraint dimension",
                        expected: dim,
                        got: h.dim(),
                    });
                }
            }
        }
        let mut mu_slot = Vec::with_capacity(agents.len());
        let mut constrained = Vec::new();
        for (i, agent) in agents.iter().enumerate() {
            if agent.constraint.is_some() {
                mu_slot.push(Some(constrained.len()));
                constrained.push(i);
            } else {
                mu_slot.push(None);
            }
        }
        if constrained.len() > dim {
            return Err(Error::InvalidParameter {
                name: "constraints",
                reason: format!(
                    "{} constraints on R^{} cannot have linearly independent gradients",
                    constrained.len(),
                    dim
                ),
            });
        }
        let topology = Topology::new(graph, dim)?;
        Ok(LiftedProblem {
            name: name.into(),
            dim,
            agents,
            topology,
            mu_slot,
            constrained,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    /// Per-agent dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
    /// Number of agents holding a constraint, `m`.
    pub fn num_constraints(&self) -> usize {
        self.constrained.len()
    }
    pub fn num_pairs(&self) -> usize {
        self.topology.num_pairs()
    }
    pub fn agents(&self) -> &[LocalProblem] {
        &self.agents
    }
    pub fn topology(&self) -> &Topology {
        &self.topology
    }
    /// Index into `μ` for agent `i`, if it holds a constraint.
    pub fn mu_slot(&self, agent: usize) -> Option<usize> {
        self.mu_slot[agent]
    }
    /// Agents holding constraints, in `μ` order.
    pub fn constrained_agents(&self) -> &[usize] {
        &self.constrained
    }
    pub fn has_hessians(&self) -> bool {
        let probe = vec![0.0; self.dim];
        self.agents.iter().all(|a| {
            a.objective.hessian(&probe).is_some()
                && a.constraint.as_ref().is_none_or(|h| h.hessian(&probe).is_some())
        })
    }

    pub fn x_len(&self) -> usize {
        self.dim * self.num_agents()
    }
    pub fn lambda_len(&self) -> usize {
        self.dim * self.num_pairs()
    }

    pub fn zero_state(&self) -> MultiplierState {
        MultiplierState {
            x: DVector::zeros(self.x_len()),
            mu: DVector::zeros(self.num_constraints()),
            lambda: DVector::zeros(self.lambda_len()),
        }
    }

    /// Stacks `z` into `1 ⊗ z`.
    pub fn consensus(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.x_len(), |r, _| z[r % self.dim])
    }

    /// Hex SHA-256 of the problem name, every evaluator description and the graph.
    pub fn identity_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.name.as_bytes());
        hasher.update(format!("|n={}|", self.dim).as_bytes());
        for (i, agent) in self.agents.iter().enumerate() {
            hasher.update(format!("agent{}:f={}", i, agent.objective.describe()).as_bytes());
            if let Some(h) = &agent.constraint {
                hasher.update(format!(":h={}", h.describe()).as_bytes());
            }
            hasher.update(b";");
        }
        let spec = self.topology.spec();
        hasher.update(format!("|N={}|", spec.num_agents()).as_bytes());
        for w in spec.weights() {
            hasher.update(format!("{}>{}:{:016x};", w.from, w.to, w.weight.to_bits()).as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn check_state(&self, state: &MultiplierState) -> Result<()> {
        self.check_x(&state.x)?;
        if state.mu.len() != self.num_constraints() {
            return Err(Error::DimensionMismatch {
                what: "mu",
                expected: self.num_constraints(),
                got: state.mu.len(),
            });
        }
        if state.lambda.len() != self.lambda_len() {
            return Err(Error::DimensionMismatch {
                what: "lambda",
                expected: self.lambda_len(),
                got: state.lambda.len(),
            });
        }
        Ok(())
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.x_len() {
            return Err(Error::DimensionMismatch {
                what: "x",
                expected: self.x_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn block<'a>(&self, x: &'a DVector<f64>, agent: usize) -> &'a [f64] {
        &x.as_slice()[agent * self.dim..(agent + 1) * self.dim]
    }

    /// `F(x) = Σ f_i(x_i)`.
    pub fn eval_lifted_objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_x(x)?;
        Ok(self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.objective.value(self.block(x, i)))
            .sum())
    }

    /// `h(x) ∈ R^m`, one entry per constrained agent.
    pub fn constraint_values(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        Ok(DVector::from_iterator(
            self.num_constraints(),
            self.constrained.iter().map(|&i| {
                self.agents[i]
                    .constraint
                    .as_ref()
                    .expect("constrained agent")
                    .value(self.block(x, i))
            }),
        ))
    }

    /// Lifted constraint Jacobian `∇h(x)` of shape `nN × m`.
    pub fn constraint_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_x(x)?;
        let n = self.dim;
        let mut g = DMatrix::zeros(self.x_len(), self.num_constraints());
        for (q, &i) in self.constrained.iter().enumerate() {
            let grad = self.agents[i]
                .constraint
                .as_ref()
                .expect("constrained agent")
                .gradient(self.block(x, i));
            for k in 0..n {
                g[(i * n + k, q)] = grad[k];
            }
        }
        Ok(g)
    }

    /// `∇F(x)`.
    pub fn objective_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let mut g = DVector::zeros(self.x_len());
        for (i, agent) in self.agents.iter().enumerate() {
            let gi = agent.objective.gradient(self.block(x, i));
            g.as_mut_slice()[i * self.dim..(i + 1) * self.dim].copy_from_slice(&gi);
        }
        Ok(g)
    }

    /// `S x` (lifted).
    pub fn consensus_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.topology.incidence().apply(x.as_slice(), self.dim))
    }

    /// `𝓛(x, μ, λ) = F(x) + μ'h(x) + λ'Sx`.
    pub fn eval_lagrangian(&self, state: &MultiplierState) -> Result<f64> {
        self.check_state(state)?;
        let f = self.eval_lifted_objective(&state.x)?;
        let h = self.constraint_values(&state.x)?;
        let sx = self.consensus_residual(&state.x);
        Ok(f + state.mu.dot(&h) + state.lambda.dot(&sx))
    }

    /// `𝓛_c = 𝓛 + (c/2)‖h‖² + (c/2) x'Lx`.
    pub fn eval_aug_lagrangian(&self, state: &MultiplierState, c: f64) -> Result<f64> {
        check_penalty(c)?;
        let base = self.eval_lagrangian(state)?;
        if c == 0.0 {
            return Ok(base);
        }
        let h = self.constraint_values(&state.x)?;
        let lx = graph::apply_laplacian(self.topology.laplacian(), state.x.as_slice(), self.dim);
        let xlx: f64 = state.x.iter().zip(&lx).map(|(a, b)| a * b).sum();
        Ok(base + 0.5 * c * h.norm_squared() + 0.5 * c * xlx)
    }

    /// `∇_x 𝓛_c = ∇F + ∇h μ + S'λ + c ∇h h + c L x`.
    ///
    /// Per agent the terms are added in exactly this order; the message-passing
    /// agents in [`crate::network`] follow the same sequence.
    pub fn grad_aug_lagrangian(&self, state: &MultiplierState, c: f64) -> Result<DVector<f64>> {
        check_penalty(c)?;
        self.check_state(state)?;
        let n = self.dim;
        let st_lambda = self
            .topology
            .incidence()
            .apply_transpose(state.lambda.as_slice(), n);
        let lx = if c != 0.0 {
            graph::apply_laplacian(self.topology.laplacian(), state.x.as_slice(), n)
        } else {
            Vec::new()
        };
        let mut out = DVector::zeros(self.x_len());
        for (i, agent) in self.agents.iter().enumerate() {
            let xi = self.block(&state.x, i);
            let mut g = agent.objective.gradient(xi);
            let constraint = match (self.mu_slot[i], &agent.constraint) {
                (Some(q), Some(h)) => Some((q, h.gradient(xi), h.value(xi))),
                _ => None,
            };
            if let Some((q, gh, _)) = &constraint {
                let mu = state.mu[*q];
                for k in 0..n {
                    g[k] += mu * gh[k];
                }
            }
            for k in 0..n {
                g[k] += st_lambda[i * n + k];
            }
            if c != 0.0 {
                if let Some((_, gh, hv)) = &constraint {
                    let ch = c * hv;
                    for k in 0..n {
                        g[k] += ch * gh[k];
                    }
                }
                for k in 0..n {
                    g[k] += c * lx[i * n + k];
                }
            }
            out.as_mut_slice()[i * n..(i + 1) * n].copy_from_slice(&g);
        }
        Ok(out)
    }

    /// `∇²F + Σ μ_i ∇²h_i + c L + c Σ (h_i ∇²h_i + ∇h_i ∇h_i')`.
    pub fn hess_aug_lagrangian(&self, state: &MultiplierState, c: f64) -> Result<DMatrix<f64>> {
        check_penalty(c)?;
        self.check_state(state)?;
        let n = self.dim;
        let mut hess = DMatrix::zeros(self.x_len(), self.x_len());
        for (i, agent) in self.agents.iter().enumerate() {
            let xi = self.block(&state.x, i);
            let mut block = agent.objective.hessian(xi).ok_or_else(|| {
                Error::MissingCapability(format!("agent {i} objective has no Hessian evaluator"))
            })?;
            if let (Some(q), Some(h)) = (self.mu_slot[i], &agent.constraint) {
                let hh = h.hessian(xi).ok_or_else(|| {
                    Error::MissingCapability(format!(
                        "agent {i} constraint has no Hessian evaluator"
                    ))
                })?;
                block += &hh * state.mu[q];
                if c != 0.0 {
                    let gh = DVector::from_vec(h.gradient(xi));
                    block += hh * (c * h.value(xi)) + (&gh * gh.transpose()) * c;
                }
            }
            hess.view_mut((i * n, i * n), (n, n)).copy_from(&block);
        }
        if c != 0.0 {
            hess += self.topology.lifted_l() * c;
        }
        Ok(hess)
    }

    /// `(‖∇F + ∇h μ + S'λ‖, ‖h(x)‖, ‖S x‖)`.
    pub fn kkt_residual(&self, state: &MultiplierState) -> Result<KktResidual> {
        let stationarity = self.grad_aug_lagrangian(state, 0.0)?.norm();
        let constraint = self.constraint_values(&state.x)?.norm();
        let consensus = self.consensus_residual(&state.x).norm();
        Ok(KktResidual {
            stationarity,
            constraint,
            consensus,
        })
    }

    /// Compares analytic derivatives with central differences at random points in `[-2, 2]^n`.
    pub fn check_gradients(&self, samples: usize, seed: u64) -> Result<GradientReport> {
        if samples == 0 {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "at least one sample is required".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = GradientReport {
            samples,
            max_rel_error: 0.0,
            worst_agent: None,
            worst_function: None,
            max_hessian_rel_error: None,
        };
        for _ in 0..samples {
            for (i, agent) in self.agents.iter().enumerate() {
                let x: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let fields = std::iter::once(("f", &agent.objective))
                    .chain(agent.constraint.as_ref().map(|h| ("h", h)));
                for (label, field) in fields {
                    let err = gradient_rel_error(field.as_ref(), &x);
                    if err > report.max_rel_error || report.worst_agent.is_none() {
                        report.max_rel_error = err.max(report.max_rel_error);
                        report.worst_agent = Some(i);
                        report.worst_function = Some(label);
                    }
                    if let Some(err) = hessian_rel_error(field.as_ref(), &x) {
                        let cur = report.max_hessian_rel_error.get_or_insert(0.0);
                        *cur = cur.max(err);
                    }
                }
            }
        }
        Ok(report)
    }
}

fn check_penalty(c: f64) -> Result<()> {
    if c < 0.0 || c.is_nan() {
        return Err(Error::NegativePenalty(c));
    }
    Ok(())
}

/// Central-difference step for coordinate value `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Floor on the denominator of relative derivative errors.
const REL_ERROR_FLOOR: f64 = 1e-6;

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    if diff == 0.0 {
        return 0.0;
    }
    let scale = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / scale(analytic).max(scale(numeric)).max(REL_ERROR_FLOOR)
}

fn gradient_rel_error(field: &dyn ScalarField, x: &[f64]) -> f64 {
    let analytic = field.gradient(x);
    let mut numeric = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        let h = fd_step(x[k]);
        probe[k] = x[k] + h;
        let up = field.value(&probe);
        probe[k] = x[k] - h;
        let down = field.value(&probe);
        probe[k] = x[k];
        numeric[k] = (up - down) / (2.0 * h);
    }
    rel_error(&analytic, &numeric)
}

fn hessian_rel_error(field: &dyn ScalarField, x: &[f64]) -> Option<f64> {
    let analytic = field.hessian(x)?;
    let n = x.len();
    let mut numeric = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for k in 0..n {
        let h = fd_step(x[k]);
        probe[k] = x[k] + h;
        let up = field.gradient(&probe);
        probe[k] = x[k] - h;
        let down = field.gradient(&probe);
        probe[k] = x[k];
        for r in 0..n {
            numeric[(r, k)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    Some(rel_error(analytic.as_slice(), numeric.as_slice()))
}
