//! Built-in test problems with known solutions.

use std::fmt;
use std::str::FromStr;

use super::{LiftedProblem, LocalProblem, Polynomial};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fixture {
    /// N = 2, n = 1: f_1 = ½(x−1)², f_2 = ½(x+1)², h_1 = x − 0.5.
    Path2,
    /// N = 2, n = 2: f_i = ½‖x − a_i‖², h_1 = x₁ + x₂ − 1, h_2 = x₁ − x₂.
    Affine2,
    /// N = 3, n = 2 path; unit-circle constraint on agent 1, indefinite agent blocks.
    NonConv3,
}

impl Fixture {
    pub const ALL: [Fixture; 3] = [Fixture::Path2, Fixture::Affine2, Fixture::NonConv3];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::Path2 => "tp-path2",
            Fixture::Affine2 => "tp-affine2",
            Fixture::NonConv3 => "tp-nonconv3",
        }
    }

    pub fn graph(self) -> GraphSpec {
        match self {
            Fixture::Path2 | Fixture::Affine2 => GraphSpec::path(2),
            Fixture::NonConv3 => GraphSpec::path(3),
        }
    }

    /// Agent problems for this fixture.
    pub fn agents(self) -> Vec<LocalProblem> {
        let poly = |dim, terms: Vec<(f64, Vec<u32>)>| Polynomial::new(dim, terms).expect("fixture exponents");
        match self {
            Fixture::Path2 => vec![
                LocalProblem::new(poly(1, vec![(0.5, vec![2]), (-1.0, vec![1]), (0.5, vec![0])]))
                    .with_constraint(poly(1, vec![(1.0, vec![1]), (-0.5, vec![0])])),
                LocalProblem::new(poly(1, vec![(0.5, vec![2]), (1.0, vec![1]), (0.5, vec![0])])),
            ],
            Fixture::Affine2 => vec![
                // ½((x₁−1)² + x₂²)
                LocalProblem::new(poly(
                    2,
                    vec![(0.5, vec![2, 0]), (-1.0, vec![1, 0]), (0.5, vec![0, 0]), (0.5, vec![0, 2])],
                ))
                .with_constraint(poly(2, vec![(1.0, vec![1, 0]), (1.0, vec![0, 1]), (-1.0, vec![0, 0])])),
                // ½(x₁² + (x₂−1)²)
                LocalProblem::new(poly(
                    2,
                    vec![(0.5, vec![2, 0]), (0.5, vec![0, 2]), (-1.0, vec![0, 1]), (0.5, vec![0, 0])],
                ))
                .with_constraint(poly(2, vec![(1.0, vec![1, 0]), (-1.0, vec![0, 1])])),
            ],
            Fixture::NonConv3 => vec![
                LocalProblem::new(poly(
                    2,
                    vec![(0.5, vec![2, 0]), (-2.0, vec![1, 0]), (2.0, vec![0, 0]), (0.5, vec![0, 2])],
                ))
                .with_constraint(poly(2, vec![(1.0, vec![2, 0]), (1.0, vec![0, 2]), (-1.0, vec![0, 0])])),
                LocalProblem::new(poly(2, vec![(0.25, vec![4, 0]), (-1.0, vec![0, 2])])),
                LocalProblem::new(poly(2, vec![(0.5, vec![2, 0]), (2.0, vec![0, 2])])),
            ],
        }
    }

    pub fn build(self) -> LiftedProblem {
        LiftedProblem::new(self.name(), self.agents(), self.graph()).expect("fixture is well formed")
    }

    /// Starting point for the oracle; for the non-convex fixture it selects the minimizing root.
    pub fn oracle_start(self) -> Vec<f64> {
        match self {
            Fixture::Path2 => vec![0.0],
            Fixture::Affine2 => vec![0.0, 0.0],
            Fixture::NonConv3 => vec![0.8, 0.2],
        }
    }

    /// Known minimizer `(x*, ψ*)`.
    pub fn known_solution(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Fixture::Path2 => (vec![0.5], vec![-1.0]),
            // ∇f_1 + ∇f_2 = (2x₁ − 1, 2x₂ − 1) = (0, 0) at x*, so ψ* = 0
            Fixture::Affine2 => (vec![0.5, 0.5], vec![0.0, 0.0]),
            Fixture::NonConv3 => (vec![1.0, 0.0], vec![-0.5]),
        }
    }
}

impl fmt::Display for Fixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fixture::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(
                    "problem.name",
                    format!("unknown fixture `{s}` (expected tp-path2, tp-affine2 or tp-nonconv3)"),
                )
            })
    }
}
