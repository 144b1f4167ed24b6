//! Simulated synchronous network of agents.
//!
//! Each agent owns `x_i`, its optional `μ_i` and the multipliers `λ_ij` of its
//! outgoing pairs. In a round every agent sends `(x_i, λ_ij, s_ij)` to each
//! neighbor `j`, then updates using only its own data and its inbox. All new
//! states are computed from the previous round's snapshot (double buffer).
//!
//! Sums are accumulated in the same order as the stacked evaluators in
//! [`crate::problem`], so both execution paths produce identical bits.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{LiftedProblem, LocalProblem, MultiplierState};

/// What to do in one synchronous round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    /// One step of A1 (`c = 0`) or A2: primal descent plus multiplier ascent.
    FirstOrder { alpha: f64, c: f64 },
    /// One inner gradient step on the augmented Lagrangian with fixed multipliers.
    Inner { alpha: f64, c: f64 },
    /// Multiplier update of the method of multipliers; `x` is unchanged.
    Outer { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Serial,
    /// Agents of a round are updated concurrently on the rayon pool.
    Parallel,
}

/// Sent by agent `from` to one neighbor.
#[derive(Debug, Clone)]
pub struct Message {
    pub from: usize,
    pub x: Vec<f64>,
    /// `λ_{from,to}`.
    pub lambda: Vec<f64>,
    /// `s_{from,to}`.
    pub weight: f64,
}

#[derive(Debug, Clone)]
struct Agent {
    id: usize,
    problem: LocalProblem,
    /// `(j, s_ij)` sorted by `j`.
    neighbors: Vec<(usize, f64)>,
    x: Vec<f64>,
    mu: Option<f64>,
    /// `λ_ij`, aligned with `neighbors`.
    lambda: Vec<Vec<f64>>,
}

/// One incidence row touching agent `i`, as seen by agent `i`.
struct Incident<'a> {
    row: (usize, usize),
    /// Entry of `S` at column `i`.
    coef: f64,
    lambda: &'a [f64],
}

type AgentUpdate = (Vec<f64>, Option<f64>, Vec<Vec<f64>>);

impl Agent {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn outbox(&self) -> Vec<(usize, Message)> {
        self.neighbors
            .iter()
            .zip(&self.lambda)
            .map(|(&(j, s), lam)| {
                (
                    j,
                    Message {
                        from: self.id,
                        x: self.x.clone(),
                        lambda: lam.clone(),
                        weight: s,
                    },
                )
            })
            .collect()
    }

    fn check_inbox(&self, inbox: &[Message]) {
        assert_eq!(inbox.len(), self.neighbors.len(), "agent {} inbox size", self.id);
        for (m, &(j, _)) in inbox.iter().zip(&self.neighbors) {
            assert_eq!(m.from, j, "agent {} received from a non-neighbor", self.id);
        }
    }

    /// Rows `(i, j)` and `(j, i)` in lexicographic order.
    fn incident<'a>(&'a self, inbox: &'a [Message]) -> Vec<Incident<'a>> {
        let i = self.id;
        let mut rows: Vec<Incident<'a>> = Vec::with_capacity(2 * inbox.len());
        for ((&(j, s), lam), m) in self.neighbors.iter().zip(&self.lambda).zip(inbox) {
            rows.push(Incident {
                row: (i, j),
                coef: s,
                lambda: lam,
            });
            rows.push(Incident {
                row: (j, i),
                coef: -m.weight,
                lambda: &m.lambda,
            });
        }
        rows.sort_by_key(|r| r.row);
        rows
    }

    /// `(S x)` for own row `(i, j)`, summed over columns in ascending order.
    fn pair_residual(&self, s: f64, j: usize, xj: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let mut acc = 0.0;
                if self.id < j {
                    acc += s * self.x[k];
                    acc += -s * xj[k];
                } else {
                    acc += -s * xj[k];
                    acc += s * self.x[k];
                }
                acc
            })
            .collect()
    }

    /// `(S'λ)_i`.
    fn transpose_term(&self, rows: &[Incident<'_>]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for r in rows {
            for (k, o) in out.iter_mut().enumerate() {
                *o += r.coef * r.lambda[k];
            }
        }
        out
    }

    /// `(L x)_i` from the local Laplacian row.
    fn laplacian_term(&self, rows: &[Incident<'_>], inbox: &[Message]) -> Vec<f64> {
        let i = self.id;
        let mut diag = 0.0;
        for r in rows {
            diag += r.coef * r.coef;
        }
        // columns {i} ∪ N_i in ascending order
        let mut cols: Vec<(usize, f64, &[f64])> = Vec::with_capacity(inbox.len() + 1);
        cols.push((i, diag, &self.x));
        for (&(j, s), m) in self.neighbors.iter().zip(inbox) {
            let mut off = 0.0;
            let own = s * -s;
            let theirs = -m.weight * m.weight;
            if i < j {
                off += own;
                off += theirs;
            } else {
                off += theirs;
                off += own;
            }
            cols.push((j, off, &m.x));
        }
        cols.sort_by_key(|c| c.0);
        (0..self.dim())
            .map(|k| {
                let mut acc = 0.0;
                for &(_, l, x) in &cols {
                    if l != 0.0 {
                        acc += l * x[k];
                    }
                }
                acc
            })
            .collect()
    }

    fn constraint(&self) -> Option<(f64, Vec<f64>, f64)> {
        match (&self.problem.constraint, self.mu) {
            (Some(h), Some(mu)) => Some((mu, h.gradient(&self.x), h.value(&self.x))),
            _ => None,
        }
    }

    /// Local block of `∇_x 𝓛_c`.
    fn gradient(&self, inbox: &[Message], c: f64) -> Vec<f64> {
        let rows = self.incident(inbox);
        let mut g = self.problem.objective.gradient(&self.x);
        let constraint = self.constraint();
        if let Some((mu, gh, _)) = &constraint {
            for k in 0..g.len() {
                g[k] += mu * gh[k];
            }
        }
        let stl = self.transpose_term(&rows);
        for k in 0..g.len() {
            g[k] += stl[k];
        }
        if c != 0.0 {
            if let Some((_, gh, hv)) = &constraint {
                let ch = c * hv;
                for k in 0..g.len() {
                    g[k] += ch * gh[k];
                }
            }
            let lx = self.laplacian_term(&rows, inbox);
            for k in 0..g.len() {
                g[k] += c * lx[k];
            }
        }
        g
    }

    fn ascend_multipliers(&self, inbox: &[Message], step: f64) -> (Option<f64>, Vec<Vec<f64>>) {
        let mu = self.mu.map(|mu| {
            let h = self.problem.constraint.as_ref().expect("μ implies constraint");
            mu + step * h.value(&self.x)
        });
        let lambda = self
            .neighbors
            .iter()
            .zip(&self.lambda)
            .zip(inbox)
            .map(|((&(j, s), lam), m)| {
                let sx = self.pair_residual(s, j, &m.x);
                lam.iter().zip(&sx).map(|(l, r)| l + step * r).collect()
            })
            .collect();
        (mu, lambda)
    }

    fn update(&self, inbox: &[Message], rule: Rule) -> AgentUpdate {
        self.check_inbox(inbox);
        match rule {
            Rule::FirstOrder { alpha, c } => {
                let g = self.gradient(inbox, c);
                let x = self.x.iter().zip(&g).map(|(x, g)| x - alpha * g).collect();
                let (mu, lambda) = self.ascend_multipliers(inbox, alpha);
                (x, mu, lambda)
            }
            Rule::Inner { alpha, c } => {
                let g = self.gradient(inbox, c);
                let x = self.x.iter().zip(&g).map(|(x, g)| x - alpha * g).collect();
                (x, self.mu, self.lambda.clone())
            }
            Rule::Outer { c } => {
                let (mu, lambda) = self.ascend_multipliers(inbox, c);
                (self.x.clone(), mu, lambda)
            }
        }
    }
}

/// The agents of a lifted problem, each holding only local data.
#[derive(Debug, Clone)]
pub struct Network {
    agents: Vec<Agent>,
    mode: Mode,
    rounds: usize,
    messages: usize,
}

impl Network {
    pub fn new(problem: &LiftedProblem, state: &MultiplierState, mode: Mode) -> Result<Self> {
        problem.check_state(state)?;
        let n = problem.dim();
        let incidence = problem.topology().incidence();
        let mut agents = Vec::with_capacity(problem.num_agents());
        for (i, local) in problem.agents().iter().enumerate() {
            let mut neighbors = Vec::new();
            let mut lambda = Vec::new();
            for (r, &(a, b)) in incidence.rows().iter().enumerate() {
                if a == i {
                    neighbors.push((b, incidence.row_weight(r)));
                    lambda.push(state.lambda_block(r, n).to_vec());
                }
            }
            agents.push(Agent {
                id: i,
                problem: local.clone(),
                neighbors,
                x: state.x_block(i, n).to_vec(),
                mu: problem.mu_slot(i).map(|q| state.mu[q]),
                lambda,
            });
        }
        Ok(Network {
            agents,
            mode,
            rounds: 0,
            messages: 0,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
    pub fn rounds(&self) -> usize {
        self.rounds
    }
    /// Total point-to-point messages delivered so far.
    pub fn messages_delivered(&self) -> usize {
        self.messages
    }

    fn inboxes(&self) -> Vec<Vec<Message>> {
        let mut inboxes: Vec<Vec<Message>> = vec![Vec::new(); self.agents.len()];
        for agent in &self.agents {
            for (to, msg) in agent.outbox() {
                inboxes[to].push(msg);
            }
        }
        for inbox in &mut inboxes {
            inbox.sort_by_key(|m| m.from);
        }
        inboxes
    }

    /// Executes one synchronous round.
    pub fn step(&mut self, rule: Rule) {
        let inboxes = self.inboxes();
        let updates: Vec<AgentUpdate> = match self.mode {
            Mode::Serial => self
                .agents
                .iter()
                .zip(&inboxes)
                .map(|(a, inbox)| a.update(inbox, rule))
                .collect(),
            Mode::Parallel => self
                .agents
                .par_iter()
                .zip(inboxes.par_iter())
                .map(|(a, inbox)| a.update(inbox, rule))
                .collect(),
        };
        for (agent, (x, mu, lambda)) in self.agents.iter_mut().zip(updates) {
            agent.x = x;
            agent.mu = mu;
            agent.lambda = lambda;
        }
        self.rounds += 1;
        self.messages += inboxes.iter().map(Vec::len).sum::<usize>();
    }

    /// `∇_x 𝓛_c` assembled from every agent's locally computed block.
    pub fn gradient(&self, c: f64) -> DVector<f64> {
        let inboxes = self.inboxes();
        let blocks: Vec<Vec<f64>> = match self.mode {
            Mode::Serial => self
                .agents
                .iter()
                .zip(&inboxes)
                .map(|(a, inbox)| {
                    a.check_inbox(inbox);
                    a.gradient(inbox, c)
                })
                .collect(),
            Mode::Parallel => self
                .agents
                .par_iter()
                .zip(inboxes.par_iter())
                .map(|(a, inbox)| {
                    a.check_inbox(inbox);
                    a.gradient(inbox, c)
                })
                .collect(),
        };
        DVector::from_vec(blocks.concat())
    }

    /// Gathers agent states into the stacked layout.
    pub fn state(&self) -> MultiplierState {
        let x: Vec<f64> = self.agents.iter().flat_map(|a| a.x.iter().copied()).collect();
        let mu: Vec<f64> = self.agents.iter().filter_map(|a| a.mu).collect();
        let lambda: Vec<f64> = self
            .agents
            .iter()
            .flat_map(|a| a.lambda.iter().flatten().copied())
            .collect();
        MultiplierState {
            x: DVector::from_vec(x),
            mu: DVector::from_vec(mu),
            lambda: DVector::from_vec(lambda),
        }
    }

    /// Replaces every agent's primal block, e.g. to reset after a rejected step.
    pub fn set_x(&mut self, x: &DVector<f64>) -> Result<()> {
        let n = self.agents.first().map_or(0, Agent::dim);
        if x.len() != n * self.agents.len() {
            return Err(Error::DimensionMismatch {
                what: "x",
                expected: n * self.agents.len(),
                got: x.len(),
            });
        }
        for (i, a) in self.agents.iter_mut().enumerate() {
            a.x.copy_from_slice(&x.as_slice()[i * n..(i + 1) * n]);
        }
        Ok(())
    }
}
