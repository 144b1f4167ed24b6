//! Centralized reference solver for `min Σ f_i(x)` s.t. `h_i(x) = 0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{self, centralized_constraint_jacobian};
use crate::error::{Error, Result};
use crate::linalg::{self, RANK_REL_TOL};
use crate::problem::LiftedProblem;
use crate::solvers::Reference;

pub const KKT_TOL: f64 = 1e-10;
pub const DEFAULT_RESTARTS: usize = 8;
pub const DEFAULT_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Perturbed starts in addition to `x_init`.
    pub restarts: usize,
    pub radius: f64,
    pub seed: u64,
    pub max_newton_iter: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            restarts: DEFAULT_RESTARTS,
            radius: DEFAULT_RADIUS,
            seed: 0,
            max_newton_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktPoint {
    pub x: Vec<f64>,
    pub psi: Vec<f64>,
    pub objective: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    pub psi_star: Vec<f64>,
    pub objective: f64,
    pub kkt_residual_norm: f64,
    /// Smallest eigenvalue of the Lagrangian Hessian on `Null(∇h(x*)')`;
    /// `+∞` for a trivial cone, NaN without Hessians.
    pub second_order_margin: f64,
    /// Every distinct KKT point found, best first.
    pub candidates: Vec<KktPoint>,
}

/// The centralized problem seen by the oracle.
struct Centralized<'a> {
    p: &'a LiftedProblem,
}

impl Centralized<'_> {
    fn objective(&self, x: &[f64]) -> f64 {
        self.p.agents().iter().map(|a| a.objective.value(x)).sum()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.p.dim());
        for a in self.p.agents() {
            g += DVector::from_vec(a.objective.gradient(x));
        }
        g
    }

    fn constraints(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.p.num_constraints(),
            self.p
                .constrained_agents()
                .iter()
                .map(|&i| self.p.agents()[i].constraint.as_ref().expect("constrained").value(x)),
        )
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        centralized_constraint_jacobian(self.p, x)
    }

    /// `∇²f + Σ ψ_q ∇²h_q`, `None` without Hessian evaluators.
    fn lagrangian_hessian(&self, x: &[f64], psi: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.p.dim();
        let mut h = DMatrix::zeros(n, n);
        for a in self.p.agents() {
            h += a.objective.hessian(x)?;
        }
        for (q, &i) in self.p.constrained_agents().iter().enumerate() {
            h += self.p.agents()[i].constraint.as_ref().expect("constrained").hessian(x)? * psi[q];
        }
        Some(h)
    }

    fn kkt(&self, x: &[f64], psi: &DVector<f64>) -> DVector<f64> {
        let stat = self.gradient(x) + self.jacobian(x) * psi;
        let h = self.constraints(x);
        let mut out = DVector::zeros(stat.len() + h.len());
        out.rows_mut(0, stat.len()).copy_from(&stat);
        out.rows_mut(stat.len(), h.len()).copy_from(&h);
        out
    }

    fn initial_psi(&self, x: &[f64]) -> DVector<f64> {
        let g = self.jacobian(x);
        linalg::least_norm_solve(&g, &(-self.gradient(x)), RANK_REL_TOL)
    }

    /// Damped Newton on `[∇f + ∇hψ; h] = 0` with backtracking on the residual norm.
    fn newton(&self, x0: &[f64], max_iter: usize) -> Option<KktPoint> {
        let n = self.p.dim();
        let m = self.p.num_constraints();
        let mut x = DVector::from_column_slice(x0);
        let mut psi = self.initial_psi(x0);
        let mut r = self.kkt(x.as_slice(), &psi);
        for _ in 0..max_iter {
            let norm = r.norm();
            if norm <= KKT_TOL * 1e-2 {
                break;
            }
            let hess = self.lagrangian_hessian(x.as_slice(), &psi)?;
            let g = self.jacobian(x.as_slice());
            let mut k = DMatrix::zeros(n + m, n + m);
            k.view_mut((0, 0), (n, n)).copy_from(&hess);
            k.view_mut((0, n), (n, m)).copy_from(&g);
            k.view_mut((n, 0), (m, n)).copy_from(&g.transpose());
            let step = match k.clone().lu().solve(&r) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => linalg::least_norm_solve(&k, &r, RANK_REL_TOL),
            };
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-10 {
                let xt = &x - step.rows(0, n) * t;
                let pt = &psi - step.rows(n, m) * t;
                let rt = self.kkt(xt.as_slice(), &pt);
                if rt.norm() < (1.0 - 1e-4 * t) * norm || rt.norm() <= KKT_TOL * 1e-2 {
                    x = xt;
                    psi = pt;
                    r = rt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let residual = r.norm();
        (residual <= KKT_TOL && x.iter().all(|v| v.is_finite())).then(|| KktPoint {
            objective: self.objective(x.as_slice()),
            x: x.as_slice().to_vec(),
            psi: psi.as_slice().to_vec(),
            residual,
        })
    }

    /// Centralized method of multipliers with Armijo gradient descent; gradient-only fallback.
    fn multipliers(&self, x0: &[f64]) -> Option<KktPoint> {
        let c = 100.0;
        let mut x = DVector::from_column_slice(x0);
        let mut psi = DVector::zeros(self.p.num_constraints());
        let aug = |x: &DVector<f64>, psi: &DVector<f64>| {
            let h = self.constraints(x.as_slice());
            self.objective(x.as_slice()) + psi.dot(&h) + 0.5 * c * h.norm_squared()
        };
        let aug_grad = |x: &DVector<f64>, psi: &DVector<f64>| {
            let h = self.constraints(x.as_slice());
            self.gradient(x.as_slice()) + self.jacobian(x.as_slice()) * (psi + h * c)
        };
        for _ in 0..200 {
            for _ in 0..20_000 {
                let g = aug_grad(&x, &psi);
                if g.norm() <= 1e-13 {
                    break;
                }
                let f0 = aug(&x, &psi);
                let mut t = 1.0;
                loop {
                    let xt = &x - &g * t;
                    if aug(&xt, &psi) <= f0 - 1e-4 * t * g.norm_squared() || t < 1e-16 {
                        x = xt;
                        break;
                    }
                    t *= 0.5;
                }
            }
            psi += self.constraints(x.as_slice()) * c;
            let residual = self.kkt(x.as_slice(), &psi).norm();
            if residual <= KKT_TOL {
                return Some(KktPoint {
                    objective: self.objective(x.as_slice()),
                    x: x.as_slice().to_vec(),
                    psi: psi.as_slice().to_vec(),
                    residual,
                });
            }
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        None
    }

    fn margin(&self, x: &[f64], psi: &[f64]) -> f64 {
        let Some(h) = self.lagrangian_hessian(x, &DVector::from_column_slice(psi)) else {
            return f64::NAN;
        };
        let g = self.jacobian(x);
        let z = if g.ncols() == 0 {
            DMatrix::identity(self.p.dim(), self.p.dim())
        } else {
            linalg::null_basis(&g.transpose(), RANK_REL_TOL)
        };
        if z.ncols() == 0 {
            return f64::INFINITY;
        }
        linalg::min_sym_eigenvalue(&(z.transpose() * h * &z))
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Multi-start KKT solve from `x_init` and `options.restarts` seeded perturbations.
pub fn solve_centralized(p: &LiftedProblem, x_init: &[f64], options: &OracleOptions) -> Result<OracleSolution> {
    let n = p.dim();
    if x_init.len() != n {
        return Err(Error::DimensionMismatch {
            what: "oracle x_init",
            expected: n,
            got: x_init.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts = vec![x_init.to_vec()];
    for _ in 0..options.restarts {
        starts.push(
            x_init
                .iter()
                .map(|v| v + options.radius * rng.gen_range(-1.0..1.0))
                .collect(),
        );
    }
    let problem = Centralized { p };
    let newton = p.has_hessians();
    let found: Vec<KktPoint> = starts
        .par_iter()
        .filter_map(|x0| {
            if newton {
                problem.newton(x0, options.max_newton_iter)
            } else {
                problem.multipliers(x0)
            }
        })
        .collect();
    let mut candidates: Vec<KktPoint> = Vec::new();
    let mut sorted = found;
    sorted.sort_by(|a, b| a.objective.total_cmp(&b.objective).then_with(|| lexicographic(&a.x, &b.x)));
    for point in sorted {
        let duplicate = candidates.iter().any(|c| {
            c.x.iter().zip(&point.x).all(|(a, b)| (a - b).abs() <= 1e-8)
        });
        if !duplicate {
            candidates.push(point);
        }
    }
    let best = candidates
        .first()
        .cloned()
        .ok_or_else(|| Error::Oracle(format!("no KKT point found from {} starts", starts.len())))?;
    log::debug!("oracle found {} KKT point(s); best objective {}", candidates.len(), best.objective);
    Ok(OracleSolution {
        second_order_margin: problem.margin(&best.x, &best.psi),
        x_star: best.x,
        psi_star: best.psi,
        objective: best.objective,
        kkt_residual_norm: best.residual,
        candidates,
    })
}

/// `μ* = ψ*` and the least-norm `λ*` solving `𝐒'λ = −∇𝐅(𝐱*) − ∇𝐡(𝐱*)μ*`.
pub fn lifted_multipliers(p: &LiftedProblem, solution: &OracleSolution) -> Result<Reference> {
    let x = p.consensus(&solution.x_star);
    let mu = DVector::from_column_slice(&solution.psi_star);
    if mu.len() != p.num_constraints() {
        return Err(Error::DimensionMismatch {
            what: "psi_star",
            expected: p.num_constraints(),
            got: mu.len(),
        });
    }
    let rhs = -(p.objective_gradient(&x)? + p.constraint_jacobian(&x)? * &mu);
    let st = p.topology().lifted_s().transpose();
    let lambda = linalg::least_norm_solve(&st, &rhs, RANK_REL_TOL);
    let residual = (&st * &lambda - &rhs).norm();
    if residual > KKT_TOL {
        return Err(Error::InconsistentMultipliers { residual });
    }
    Ok(Reference {
        x_star: solution.x_star.clone(),
        mu_star: mu,
        lambda_star: lambda,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimizerReport {
    pub constraint_sigma_min: f64,
    pub constraints_regular: bool,
    /// `∇²f_i + ψ_i ∇²h_i ≻ 0` for every agent.
    pub blockwise_pd: bool,
    pub block_min_eigenvalues: Vec<f64>,
    pub tangent_cone_pd: bool,
    pub tangent_cone_margin: f64,
    pub a1_certified: bool,
    pub a2_certified: bool,
    pub a3_certified: bool,
}

pub fn verify_minimizer(p: &LiftedProblem, reference: &Reference) -> MinimizerReport {
    let g = centralized_constraint_jacobian(p, &reference.x_star);
    let sigma = if g.ncols() == 0 { f64::INFINITY } else { linalg::sigma_min(&g) };
    let constraints_regular = sigma > analysis::RANK_FLOOR;
    let (tangent_cone_pd, tangent_cone_margin) = match analysis::second_order_check(p, reference) {
        Ok(r) => (r.holds, r.margin),
        Err(_) => (false, f64::NAN),
    };
    let mut block_min_eigenvalues = Vec::with_capacity(p.num_agents());
    for (i, agent) in p.agents().iter().enumerate() {
        let x = &reference.x_star;
        let mut block = match agent.objective.hessian(x) {
            Some(h) => h,
            None => {
                block_min_eigenvalues.push(f64::NAN);
                continue;
            }
        };
        if let (Some(q), Some(h)) = (p.mu_slot(i), &agent.constraint) {
            match h.hessian(x) {
                Some(hh) => block += hh * reference.mu_star[q],
                None => {
                    block_min_eigenvalues.push(f64::NAN);
                    continue;
                }
            }
        }
        block_min_eigenvalues.push(linalg::min_sym_eigenvalue(&block));
    }
    let blockwise_pd = block_min_eigenvalues
        .iter()
        .all(|&e| e > analysis::ZERO_REL_TOL);
    MinimizerReport {
        constraint_sigma_min: sigma,
        constraints_regular,
        blockwise_pd,
        block_min_eigenvalues,
        tangent_cone_pd,
        tangent_cone_margin,
        a1_certified: constraints_regular && blockwise_pd,
        a2_certified: constraints_regular && tangent_cone_pd,
        a3_certified: constraints_regular && tangent_cone_pd,
    }
}

/// JSON body of the `oracle` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub problem: String,
    pub problem_hash: String,
    pub x_star: Vec<f64>,
    pub psi_star: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub kkt_residual: f64,
    pub constraint_sigma_min: f64,
    pub blockwise_pd: bool,
    pub tangent_cone_pd: bool,
    pub objective: f64,
    pub candidates: Vec<KktPoint>,
}

impl OracleReport {
    pub fn new(p: &LiftedProblem, solution: &OracleSolution, reference: &Reference) -> Self {
        let report = verify_minimizer(p, reference);
        OracleReport {
            problem: p.name().to_string(),
            problem_hash: p.identity_hash(),
            x_star: solution.x_star.clone(),
            psi_star: solution.psi_star.clone(),
            mu_star: reference.mu_star.iter().copied().collect(),
            lambda_star: reference.lambda_star.iter().copied().collect(),
            kkt_residual: solution.kkt_residual_norm,
            constraint_sigma_min: report.constraint_sigma_min,
            blockwise_pd: report.blockwise_pd,
            tangent_cone_pd: report.tangent_cone_pd,
            objective: solution.objective,
            candidates: solution.candidates.clone(),
        }
    }
}

/// Oracle solution plus lifted multipliers for a problem, from `x_init`.
pub fn solve_reference(p: &LiftedProblem, x_init: &[f64], options: &OracleOptions) -> Result<(OracleSolution, Reference)> {
    let solution = solve_centralized(p, x_init, options)?;
    let reference = lifted_multipliers(p, &solution)?;
    Ok((solution, reference))
}
