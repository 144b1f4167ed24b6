#![allow(dead_code)]

use lagrange_net::oracle::{self, OracleOptions};
use lagrange_net::problem::fixtures::Fixture;
use lagrange_net::problem::{LiftedProblem, MultiplierState};
use lagrange_net::solvers::Reference;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixture plus its oracle reference.
pub fn solved(f: Fixture) -> (LiftedProblem, Reference) {
    let p = f.build();
    let (_, reference) = oracle::solve_reference(&p, &f.oracle_start(), &OracleOptions::default()).expect("fixture oracle");
    (p, reference)
}

pub fn kkt_state(p: &LiftedProblem, r: &Reference) -> MultiplierState {
    lagrange_net::analysis::stationary_state(p, r)
}

/// Uniform random state in `[-scale, scale]`.
pub fn random_state(p: &LiftedProblem, seed: u64, scale: f64) -> MultiplierState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |len: usize| DVector::from_fn(len, |_, _| rng.gen_range(-scale..=scale));
    MultiplierState {
        x: v(p.x_len()),
        mu: v(p.num_constraints()),
        lambda: v(p.lambda_len()),
    }
}

pub fn perturbed(p: &LiftedProblem, r: &Reference, seed: u64, radius: f64) -> MultiplierState {
    let base = kkt_state(p, r);
    let noise = random_state(p, seed, radius);
    MultiplierState {
        x: base.x + noise.x,
        mu: base.mu + noise.mu,
        lambda: base.lambda + noise.lambda,
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
