//! First-order Lagrangian methods A1 and A2.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Mode, Network, Rule};
use crate::problem::{KktResidual, LiftedProblem, MultiplierState};

/// Iterate norm beyond which a run is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    A1,
    A2,
    A3,
}

/// How per-round updates are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Whole-vector algebra on the stacked state.
    #[default]
    Stacked,
    /// Per-agent updates through neighbor messages.
    Network(Mode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    IterationCap,
    Diverged,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::IterationCap => "iteration-cap",
            Status::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    /// Penalty, ignored by A1.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub execution: Execution,
}

impl FirstOrderConfig {
    pub fn a1(alpha: f64) -> Self {
        FirstOrderConfig {
            algorithm: Algorithm::A1,
            alpha,
            c: 0.0,
            max_iter: 50_000,
            tol: 1e-10,
            execution: Execution::Stacked,
        }
    }

    pub fn a2(alpha: f64, c: f64) -> Self {
        FirstOrderConfig {
            algorithm: Algorithm::A2,
            c,
            ..Self::a1(alpha)
        }
    }

    /// Penalty actually applied in the x-update.
    pub fn effective_c(&self) -> f64 {
        match self.algorithm {
            Algorithm::A1 => 0.0,
            _ => self.c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be positive and finite, got {}", self.alpha),
            });
        }
        if self.algorithm == Algorithm::A3 {
            return Err(Error::InvalidParameter {
                name: "algorithm",
                reason: "A3 is run by the method-of-multipliers driver".into(),
            });
        }
        if self.c < 0.0 || self.c.is_nan() {
            return Err(Error::NegativePenalty(self.c));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "tol",
                reason: "must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// Known solution used to measure iterate errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x_star: Vec<f64>,
    pub mu_star: DVector<f64>,
    /// Representative in Range(S).
    pub lambda_star: DVector<f64>,
}

/// Diagnostics of one iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    /// `‖x_i − x*‖` per agent.
    pub err_x: Vec<f64>,
    pub err_mu: Option<f64>,
    pub dist_lambda: Option<f64>,
    pub kkt: KktResidual,
    pub objective: f64,
    /// Penalty, inner tolerance and inner iterations (A3 only).
    pub outer: Option<OuterInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterInfo {
    pub c_k: f64,
    pub eps_k: f64,
    pub inner_iters: usize,
}

impl TraceRecord {
    pub fn observe(p: &LiftedProblem, k: usize, state: &MultiplierState, reference: Option<&Reference>) -> Result<Self> {
        let kkt = p.kkt_residual(state)?;
        let objective = p.eval_lifted_objective(&state.x)?;
        let n = p.dim();
        let (err_x, err_mu, dist_lambda) = match reference {
            Some(r) => {
                let err_x = (0..p.num_agents())
                    .map(|i| {
                        state
                            .x_block(i, n)
                            .iter()
                            .zip(&r.x_star)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                let err_mu = (&state.mu - &r.mu_star).norm();
                let dist = dist_to_multiplier_set(p, &state.lambda, &r.lambda_star);
                (err_x, Some(err_mu), Some(dist))
            }
            None => (Vec::new(), None, None),
        };
        Ok(TraceRecord {
            k,
            err_x,
            err_mu,
            dist_lambda,
            kkt,
            objective,
            outer: None,
        })
    }

    /// `‖x − 𝟙⊗x*‖`.
    pub fn err_x_total(&self) -> Option<f64> {
        if self.err_x.is_empty() {
            return None;
        }
        Some(self.err_x.iter().map(|e| e * e).sum::<f64>().sqrt())
    }

    /// `‖(x − 𝟙⊗x*, μ − μ*, (I−J)(λ − λ*))‖`.
    pub fn joint_error(&self) -> Option<f64> {
        let ex = self.err_x_total()?;
        let em = self.err_mu?;
        let el = self.dist_lambda?;
        Some((ex * ex + em * em + el * el).sqrt())
    }

    /// `‖(μ − μ*, (I−J)(λ − λ*))‖`.
    pub fn multiplier_error(&self) -> Option<f64> {
        let em = self.err_mu?;
        let el = self.dist_lambda?;
        Some((em * em + el * el).sqrt())
    }
}

/// `‖(I − J)(λ − λ*)‖`, the distance from `λ` to `λ* + Null(S')`.
pub fn dist_to_multiplier_set(p: &LiftedProblem, lambda: &DVector<f64>, lambda_star: &DVector<f64>) -> f64 {
    let d = lambda - lambda_star;
    (&d - p.topology().lifted_j() * &d).norm()
}

/// Result of a first-order run.
#[derive(Debug, Clone)]
pub struct FirstOrderRun {
    pub status: Status,
    pub iterations: usize,
    pub final_state: MultiplierState,
    pub trace: Vec<TraceRecord>,
    /// `max_k ‖J λ_k − J λ_0‖_∞`.
    pub lambda_projection_drift: f64,
}

/// One A1 round through the message-passing network.
pub fn step_a1(p: &LiftedProblem, state: &MultiplierState, alpha: f64) -> Result<MultiplierState> {
    step_a2(p, state, alpha, 0.0)
}

/// One A2 round through the message-passing network.
pub fn step_a2(p: &LiftedProblem, state: &MultiplierState, alpha: f64, c: f64) -> Result<MultiplierState> {
    if c < 0.0 || c.is_nan() {
        return Err(Error::NegativePenalty(c));
    }
    let mut net = Network::new(p, state, Mode::Serial)?;
    net.step(Rule::FirstOrder { alpha, c });
    Ok(net.state())
}

/// The same round computed on stacked vectors.
pub fn stacked_step(p: &LiftedProblem, state: &MultiplierState, alpha: f64, c: f64) -> Result<MultiplierState> {
    let g = p.grad_aug_lagrangian(state, c)?;
    let h = p.constraint_values(&state.x)?;
    let sx = p.consensus_residual(&state.x);
    Ok(MultiplierState {
        x: &state.x - g * alpha,
        mu: &state.mu + h * alpha,
        lambda: &state.lambda + sx * alpha,
    })
}

pub(crate) fn diverged(state: &MultiplierState) -> bool {
    !state.is_finite() || state.norm() > DIVERGENCE_NORM
}

pub(crate) fn projection_drift(p: &LiftedProblem, lambda: &DVector<f64>, base: &DVector<f64>) -> f64 {
    (p.topology().lifted_j() * lambda - base).amax()
}

/// Iterates A1/A2 until the KKT residual drops to `tol`, the cap is hit, or the iterate blows up.
pub fn run_first_order(
    p: &LiftedProblem,
    config: &FirstOrderConfig,
    init: &MultiplierState,
    reference: Option<&Reference>,
) -> Result<FirstOrderRun> {
    config.validate()?;
    p.check_state(init)?;
    let c = config.effective_c();
    let rule = Rule::FirstOrder { alpha: config.alpha, c };
    let mut network = match config.execution {
        Execution::Network(mode) => Some(Network::new(p, init, mode)?),
        Execution::Stacked => None,
    };
    let j_lambda0 = p.topology().lifted_j() * &init.lambda;
    let mut state = init.clone();
    let mut trace = Vec::new();
    let mut drift: f64 = 0.0;
    let mut k = 0;
    let status = loop {
        if diverged(&state) {
            break Status::Diverged;
        }
        let record = TraceRecord::observe(p, k, &state, reference)?;
        let total = record.kkt.total();
        trace.push(record);
        drift = drift.max(projection_drift(p, &state.lambda, &j_lambda0));
        if total <= config.tol {
            break Status::Converged;
        }
        if k == config.max_iter {
            break Status::IterationCap;
        }
        state = match network.as_mut() {
            Some(net) => {
                net.step(rule);
                net.state()
            }
            None => stacked_step(p, &state, config.alpha, c)?,
        };
        k += 1;
    };
    log::debug!("{:?} finished with {} after {} iterations", config.algorithm, status.as_str(), k);
    Ok(FirstOrderRun {
        status,
        iterations: k,
        final_state: state,
        trace,
        lambda_projection_drift: drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::Fixture;
    use approx::assert_abs_diff_eq;

    fn kkt_state(p: &LiftedProblem) -> MultiplierState {
        let mut s = p.zero_state();
        s.x = p.consensus(&[0.5]);
        s.mu[0] = -1.0;
        s.lambda = DVector::from_vec(vec![0.75, -0.75]);
        s
    }

    #[test]
    fn a1_hand_step() {
        let p = Fixture::Path2.build();
        let s = step_a1(&p, &p.zero_state(), 0.1).unwrap();
        assert_abs_diff_eq!(s.x[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.x[1], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu[0], -0.05, epsilon = 1e-15);
        assert_eq!(s.lambda.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn a2_hand_step() {
        let p = Fixture::Path2.build();
        let s = step_a2(&p, &p.zero_state(), 0.1, 1.0).unwrap();
        assert_abs_diff_eq!(s.x[0], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(s.x[1], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu[0], -0.05, epsilon = 1e-15);
        assert_eq!(
            step_a2(&p, &p.zero_state(), 0.1, 0.0).unwrap(),
            step_a1(&p, &p.zero_state(), 0.1).unwrap()
        );
    }

    #[test]
    fn kkt_state_is_fixed() {
        let p = Fixture::Path2.build();
        let s = kkt_state(&p);
        let t = step_a1(&p, &s, 0.1).unwrap();
        assert!((&t.x - &s.x).amax() < 1e-15);
        for c in [0.5, 3.0] {
            let t = step_a2(&p, &s, 0.1, c).unwrap();
            assert!((&t.lambda - &s.lambda).amax() < 1e-15);
        }
    }

    #[test]
    fn init_at_solution_converges_immediately() {
        let p = Fixture::Path2.build();
        let run = run_first_order(&p, &FirstOrderConfig::a1(0.1), &kkt_state(&p), None).unwrap();
        assert_eq!(run.status, Status::Converged);
        assert_eq!(run.iterations, 0);
    }

    #[test]
    fn huge_step_diverges() {
        let p = Fixture::Path2.build();
        let mut cfg = FirstOrderConfig::a1(10.0);
        cfg.max_iter = 10_000;
        let run = run_first_order(&p, &cfg, &p.zero_state(), None).unwrap();
        assert_eq!(run.status, Status::Diverged);
    }

    #[test]
    fn dist_examples() {
        let p = Fixture::Path2.build();
        let star = DVector::from_vec(vec![0.75, -0.75]);
        let shifted = &star + DVector::from_vec(vec![5.0, 5.0]);
        assert!(dist_to_multiplier_set(&p, &shifted, &star) < 1e-14);
        assert_abs_diff_eq!(
            dist_to_multiplier_set(&p, &DVector::zeros(2), &star),
            0.75 * 2.0_f64.sqrt(),
            epsilon = 1e-14
        );
    }
}
