//! Method of multipliers (A3): inner gradient descent on the augmented
//! Lagrangian, then a multiplier step with the current penalty.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{Network, Rule};
use crate::problem::{LiftedProblem, MultiplierState};
use crate::solvers::{self, Execution, OuterInfo, Reference, Status, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InnerStep {
    /// `1 / ‖∇²𝓛_c‖` at the warm start, estimated by power iteration.
    Auto,
    Constant { alpha: f64 },
    /// `a / (τ + b)`.
    Diminishing { a: f64, b: f64 },
}

impl InnerStep {
    fn at(self, resolved: f64, tau: usize) -> f64 {
        match self {
            InnerStep::Diminishing { a, b } => a / (tau as f64 + b),
            _ => resolved,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerConfig {
    pub step: InnerStep,
    pub eps0: f64,
    pub gamma: f64,
    pub max_iter: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            step: InnerStep::Auto,
            eps0: 1e-2,
            gamma: 0.5,
            max_iter: 100_000,
        }
    }
}

/// Gradient norms below this are rounding noise in double precision.
pub const INNER_TOL_FLOOR: f64 = 1e-13;

impl InnerConfig {
    /// `ε_k = ε0 γ^k`, floored at [`INNER_TOL_FLOOR`].
    pub fn tolerance(&self, k: usize) -> f64 {
        (self.eps0 * self.gamma.powi(k as i32)).max(INNER_TOL_FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoMConfig {
    pub c0: f64,
    pub beta: f64,
    pub c_max: f64,
    pub inner: InnerConfig,
    pub outer_max_iter: usize,
    pub tol: f64,
    pub execution: Execution,
}

impl Default for MoMConfig {
    fn default() -> Self {
        MoMConfig {
            c0: 1.0,
            beta: 2.0,
            c_max: 16.0,
            inner: InnerConfig::default(),
            outer_max_iter: 30,
            tol: 1e-8,
            execution: Execution::Stacked,
        }
    }
}

impl MoMConfig {
    /// Constant penalty `c` (`c0 = c_max = c`).
    pub fn constant(c: f64) -> Self {
        MoMConfig {
            c0: c,
            beta: 1.0 + 1e-9,
            c_max: c,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(Error::InvalidParameter { name, reason: reason.into() });
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad("c0", "must be positive and finite");
        }
        if !(self.beta > 1.0) {
            return bad("beta", "must exceed 1");
        }
        if !(self.c_max >= self.c0) || !self.c_max.is_finite() {
            return bad("c_max", "must be finite and at least c0");
        }
        if !(self.inner.eps0 > 0.0) {
            return bad("inner.eps0", "must be positive");
        }
        if !(self.inner.gamma > 0.0 && self.inner.gamma < 1.0) {
            return bad("inner.gamma", "must lie in (0, 1)");
        }
        match self.inner.step {
            InnerStep::Constant { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return bad("inner.alpha", "must be positive and finite")
            }
            InnerStep::Diminishing { a, b } if !(a > 0.0 && b > 0.0) => {
                return bad("inner.schedule", "a and b must be positive")
            }
            _ => {}
        }
        if !(self.tol >= 0.0) {
            return bad("tol", "must be non-negative");
        }
        Ok(())
    }
}

/// `c_k`: starts at `c0`, multiplied by `β` each outer iteration, capped at `c_max`.
pub fn penalty_schedule(config: &MoMConfig, k: usize) -> f64 {
    let mut c = config.c0.min(config.c_max);
    for _ in 0..k {
        let next = (config.beta * c).min(config.c_max);
        if next == c {
            break;
        }
        c = next;
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// False when `max_iter` was reached before the tolerance.
    pub converged: bool,
    pub step: f64,
}

/// Resolves the constant inner step for the given multipliers and penalty.
pub fn resolve_inner_step(p: &LiftedProblem, state: &MultiplierState, c: f64, step: InnerStep) -> Result<f64> {
    match step {
        InnerStep::Constant { alpha } => Ok(alpha),
        InnerStep::Diminishing { a, b } => Ok(a / b),
        InnerStep::Auto => {
            let h = p.hess_aug_lagrangian(state, c).map_err(|e| match e {
                Error::MissingCapability(m) => {
                    Error::MissingCapability(format!("{m}; set inner.alpha explicitly"))
                }
                other => other,
            })?;
            let norm = linalg::power_iteration_norm(&h, 10_000, 1e-10);
            if norm > 0.0 && norm.is_finite() {
                Ok(1.0 / norm)
            } else {
                Ok(1.0)
            }
        }
    }
}

/// Gradient descent on `x ↦ 𝓛_c(x, μ, λ)` from `state.x` until `‖∇_x 𝓛_c‖ ≤ eps`.
///
/// `outer` is only used to label divergence errors.
pub fn inner_minimize(
    p: &LiftedProblem,
    state: &MultiplierState,
    c: f64,
    eps: f64,
    inner: &InnerConfig,
    execution: Execution,
    outer: usize,
) -> Result<InnerResult> {
    let resolved = resolve_inner_step(p, state, c, inner.step)?;
    let mut network = match execution {
        Execution::Network(mode) => Some(Network::new(p, state, mode)?),
        Execution::Stacked => None,
    };
    let mut current = state.clone();
    let mut tau = 0;
    loop {
        let g = match &network {
            Some(net) => net.gradient(c),
            None => p.grad_aug_lagrangian(&current, c)?,
        };
        let grad_norm = g.norm();
        if !grad_norm.is_finite() || current.x.norm() > solvers::DIVERGENCE_NORM {
            return Err(Error::InnerDivergence { outer, inner: tau });
        }
        if grad_norm <= eps || tau == inner.max_iter {
            let converged = grad_norm <= eps;
            if !converged {
                log::warn!("inner loop hit {} iterations at outer step {outer} (‖∇‖ = {grad_norm:e})", tau);
            }
            return Ok(InnerResult {
                x: current.x,
                iterations: tau,
                grad_norm,
                converged,
                step: resolved,
            });
        }
        let alpha = inner.step.at(resolved, tau);
        match network.as_mut() {
            Some(net) => {
                net.step(Rule::Inner { alpha, c });
                current.x = net.state().x;
            }
            None => current.x -= g * alpha,
        }
        tau += 1;
    }
}

/// `μ ← μ + c h(x)`, `λ ← λ + c S x`; `x` is left unchanged.
pub fn outer_step(p: &LiftedProblem, state: &MultiplierState, c: f64, execution: Execution) -> Result<MultiplierState> {
    if c < 0.0 || c.is_nan() {
        return Err(Error::NegativePenalty(c));
    }
    match execution {
        Execution::Network(mode) => {
            let mut net = Network::new(p, state, mode)?;
            net.step(Rule::Outer { c });
            Ok(net.state())
        }
        Execution::Stacked => {
            let h = p.constraint_values(&state.x)?;
            let sx = p.consensus_residual(&state.x);
            Ok(MultiplierState {
                x: state.x.clone(),
                mu: &state.mu + h * c,
                lambda: &state.lambda + sx * c,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct MoMRun {
    pub status: Status,
    pub outer_iterations: usize,
    pub total_inner_iterations: usize,
    pub final_state: MultiplierState,
    /// Record 0 is the initial state; record `k` follows outer step `k`.
    pub trace: Vec<TraceRecord>,
    pub lambda_projection_drift: f64,
    /// Outer steps whose inner loop hit its cap.
    pub inner_warnings: usize,
}

pub fn run_a3(
    p: &LiftedProblem,
    config: &MoMConfig,
    init: &MultiplierState,
    reference: Option<&Reference>,
) -> Result<MoMRun> {
    config.validate()?;
    p.check_state(init)?;
    let j_lambda0 = p.topology().lifted_j() * &init.lambda;
    let mut state = init.clone();
    let mut trace = vec![TraceRecord::observe(p, 0, &state, reference)?];
    let mut drift: f64 = 0.0;
    let mut total_inner = 0;
    let mut warnings = 0;
    let mut status = Status::IterationCap;
    let mut outer = 0;
    while outer < config.outer_max_iter {
        let c = penalty_schedule(config, outer);
        let eps = config.inner.tolerance(outer);
        let inner = inner_minimize(p, &state, c, eps, &config.inner, config.execution, outer)?;
        total_inner += inner.iterations;
        if !inner.converged {
            warnings += 1;
        }
        state.x = inner.x;
        state = outer_step(p, &state, c, config.execution)?;
        outer += 1;
        let mut record = TraceRecord::observe(p, outer, &state, reference)?;
        record.outer = Some(OuterInfo {
            c_k: c,
            eps_k: eps,
            inner_iters: inner.iterations,
        });
        let total = record.kkt.total();
        trace.push(record);
        drift = drift.max(solvers::projection_drift(p, &state.lambda, &j_lambda0));
        if solvers::diverged(&state) {
            status = Status::Diverged;
            break;
        }
        if total <= config.tol {
            status = Status::Converged;
            break;
        }
    }
    Ok(MoMRun {
        status,
        outer_iterations: outer,
        total_inner_iterations: total_inner,
        final_state: state,
        trace,
        lambda_projection_drift: drift,
        inner_warnings: warnings,
    })
}
