//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! Criteria listed in `KNOWN_RED` are implemented as stated and are expected
//! to fail; they are reported but do not fail the test target.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use lagrange_net::analysis::{self, certify_step_size, find_cbar, iteration_matrix_b, rate_bound_mom};
use lagrange_net::harness::{self, ExperimentConfig};
use lagrange_net::multipliers::{inner_minimize, run_a3, InnerConfig, InnerStep, MoMConfig};
use lagrange_net::oracle::{self, OracleOptions};
use lagrange_net::problem::fixtures::Fixture;
use lagrange_net::problem::{LiftedProblem, MultiplierState};
use lagrange_net::solvers::{run_first_order, step_a1, step_a2, Execution, FirstOrderConfig, Status};
use nalgebra::{DMatrix, DVector};

// Tolerances, pinned.
const FIXED_POINT_TOL: f64 = 1e-10;
const PERTURBATION: f64 = 1e-3;
const CONVERGED_ERR: f64 = 1e-6;
const A1_MAX_ITER: usize = 50_000;
const RATE_MATCH_TOL: f64 = 0.05;
const MIN_R_SQUARED: f64 = 0.99;
const PROJECTION_TOL: f64 = 1e-12;
const MULTIPLIER_MATCH_TOL: f64 = 1e-8;
const EIGENVALUE_TOL: f64 = 1e-8;
const JACOBIAN_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;
const MOM_RATE_SLACK: f64 = 0.05;
const MOM_OUTER_MAX: usize = 30;
const DERIVATIVE_TOL: f64 = 1e-5;
const SPECTRAL_ALPHA: f64 = 0.1;

/// Criterion 6 asks for exactly `n` eigenvalues at `1/α`; the true multiplicity
/// is `n · dim Null(S')`, which exceeds `n` on any graph with a cycle or more
/// than two agents, so the three-agent fixture fails it.
const KNOWN_RED: &[usize] = &[6];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Check = fn() -> lagrange_net::Result<Outcome>;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&config_path(name)).expect("shipped config")
}

fn is_fixed(next: &MultiplierState, s: &MultiplierState) -> bool {
    let d = (&next.x - &s.x).amax().max((&next.mu - &s.mu).amax()).max((&next.lambda - &s.lambda).amax());
    d <= FIXED_POINT_TOL
}

/// Every single-coordinate perturbation of size `PERTURBATION`.
fn single_perturbations(s: &MultiplierState) -> Vec<MultiplierState> {
    let mut out = Vec::new();
    for sign in [1.0, -1.0] {
        for i in 0..s.x.len() {
            let mut t = s.clone();
            t.x[i] += sign * PERTURBATION;
            out.push(t);
        }
        for i in 0..s.mu.len() {
            let mut t = s.clone();
            t.mu[i] += sign * PERTURBATION;
            out.push(t);
        }
        for i in 0..s.lambda.len() {
            let mut t = s.clone();
            t.lambda[i] += sign * PERTURBATION;
            out.push(t);
        }
    }
    out
}

fn kkt_fixed_points() -> lagrange_net::Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    for f in [Fixture::Path2, Fixture::Affine2] {
        let (p, r) = common::solved(f);
        let s = common::kkt_state(&p, &r);
        let residual = p.kkt_residual(&s)?.total();
        let fixed_a1 = is_fixed(&step_a1(&p, &s, 0.1)?, &s);
        let fixed_a2 = is_fixed(&step_a2(&p, &s, 0.1, 1.0)?, &s);
        let mut broken = 0;
        let perturbed = single_perturbations(&s);
        for t in &perturbed {
            let kkt_zero = p.kkt_residual(t)?.total() <= FIXED_POINT_TOL;
            let a1 = is_fixed(&step_a1(&p, t, 0.1)?, t);
            let a2 = is_fixed(&step_a2(&p, t, 0.1, 1.0)?, t);
            if !kkt_zero && !a1 && !a2 {
                broken += 1;
            }
        }
        let ok = residual <= FIXED_POINT_TOL && fixed_a1 && fixed_a2 && broken == perturbed.len();
        pass &= ok;
        notes.push(format!("{f}: kkt {residual:.1e}, perturbations broken {broken}/{}", perturbed.len()));
    }
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn a1_linear_convergence() -> lagrange_net::Result<Outcome> {
    let mut cfg = load("path2-a1.toml");
    cfg.certify = true;
    let result = harness::execute(&cfg)?;
    let s = &result.summary;
    let rho = result.certificate.as_ref().and_then(|c| c.spectral.rate_bound).unwrap_or(f64::NAN);
    let contraction = s.contraction.unwrap_or(f64::NAN);
    let r2 = s.r_squared.unwrap_or(f64::NAN);
    let pass = s.final_err_x <= CONVERGED_ERR
        && s.iterations <= A1_MAX_ITER
        && (contraction - rho).abs() <= RATE_MATCH_TOL
        && r2 >= MIN_R_SQUARED;
    Ok(Outcome::new(
        pass,
        format!(
            "err_x {:.2e} after {} iterations; contraction {contraction:.4} vs certified {rho:.4}; R² {r2:.5}",
            s.final_err_x, s.iterations
        ),
    ))
}

fn lambda_attractor_set() -> lagrange_net::Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    let j_drift = |p: &LiftedProblem, lambda: &DVector<f64>, base: &DVector<f64>| (p.topology().lifted_j() * lambda - base).amax();

    for (f, algorithm, c) in [(Fixture::Path2, "a1", 0.0), (Fixture::Affine2, "a2", 1.0)] {
        let (p, r) = common::solved(f);
        let bar = certify_step_size(&p, &r, c, 1.0)?;
        let init = common::perturbed(&p, &r, 21, 0.1);
        let base = p.topology().lifted_j() * &init.lambda;
        let mut state = init;
        let mut drift: f64 = 0.0;
        for _ in 0..A1_MAX_ITER {
            let next = step_a2(&p, &state, bar.alpha_recommended, c)?;
            drift = drift.max(j_drift(&p, &next.lambda, &base));
            state = next;
            if p.kkt_residual(&state)?.total() <= 1e-12 {
                break;
            }
        }
        let dist = lagrange_net::solvers::dist_to_multiplier_set(&p, &state.lambda, &r.lambda_star);
        let ok = dist <= CONVERGED_ERR && drift <= PROJECTION_TOL;
        pass &= ok;
        notes.push(format!("{f} {algorithm}: dist {dist:.1e}, J-drift {drift:.1e}"));
    }

    let (p, r) = common::solved(Fixture::Path2);
    let init = common::perturbed(&p, &r, 22, 0.1);
    let run = run_a3(&p, &MoMConfig::default(), &init, Some(&r))?;
    let dist = run.trace.last().and_then(|t| t.dist_lambda).unwrap_or(f64::NAN);
    // recompute the drift from the final state independently of the solver's bookkeeping
    let final_drift = j_drift(&p, &run.final_state.lambda, &(p.topology().lifted_j() * &init.lambda));
    let ok = dist <= CONVERGED_ERR && run.lambda_projection_drift <= PROJECTION_TOL && final_drift <= PROJECTION_TOL;
    pass &= ok;
    notes.push(format!("tp-path2 a3: dist {dist:.1e}, J-drift {:.1e}", run.lambda_projection_drift));
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn multipliers_equal_centralized() -> lagrange_net::Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    for f in Fixture::ALL {
        let p = f.build();
        let (solution, _) = oracle::solve_reference(&p, &f.oracle_start(), &OracleOptions::default())?;
        // least-squares solve of the full lifted stationarity system for (μ, λ)
        let x = p.consensus(&solution.x_star);
        let g = p.constraint_jacobian(&x)?;
        let st = p.topology().lifted_s().transpose();
        let mut a = DMatrix::zeros(x.len(), g.ncols() + st.ncols());
        a.view_mut((0, 0), g.shape()).copy_from(&g);
        a.view_mut((0, g.ncols()), st.shape()).copy_from(&st);
        let rhs = -p.objective_gradient(&x)?;
        let eta = a.clone().svd(true, true).solve(&rhs, 1e-12).map_err(|e| lagrange_net::Error::Oracle(e.into()))?;
        let residual = (&a * &eta - &rhs).norm();
        let mu = eta.rows(0, g.ncols()).into_owned();
        let psi = DVector::from_column_slice(&solution.psi_star);
        let gap = (&mu - &psi).amax();
        let ok = gap <= MULTIPLIER_MATCH_TOL && residual <= MULTIPLIER_MATCH_TOL;
        pass &= ok;
        notes.push(format!("{f}: |μ* − ψ*| {gap:.1e}"));
    }
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn penalty_separation() -> lagrange_net::Result<Outcome> {
    let (p, r) = common::solved(Fixture::NonConv3);
    let a1_certified = certify_step_size(&p, &r, 0.0, 1.0).is_ok();
    let init = common::perturbed(&p, &r, 31, 0.05);
    let grid = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let mut a1_converged = Vec::new();
    for alpha in grid {
        let cfg = FirstOrderConfig::a1(alpha);
        let run = run_first_order(&p, &cfg, &init, Some(&r))?;
        let err = run.trace.last().and_then(|t| t.err_x_total()).unwrap_or(f64::INFINITY);
        a1_converged.push(run.status == Status::Converged || err <= CONVERGED_ERR);
    }
    let c = 1.5 * find_cbar(&p, &r)?;
    let cert = certify_step_size(&p, &r, c, 1.0)?;
    let run = run_first_order(&p, &FirstOrderConfig::a2(cert.alpha_recommended, c), &init, Some(&r))?;
    let a2_err = run.trace.last().and_then(|t| t.err_x_total()).unwrap_or(f64::INFINITY);
    let pass = !a1_certified && a1_converged.iter().all(|c| !c) && a2_err <= CONVERGED_ERR;
    Ok(Outcome::new(
        pass,
        format!(
            "A1 certified {a1_certified}, A1 converged on {}/{} grid points; A2 c = {c:.4}, α = {:.4}: err_x {a2_err:.1e}",
            a1_converged.iter().filter(|c| **c).count(),
            grid.len(),
            cert.alpha_recommended
        ),
    ))
}

fn iteration_spectrum() -> lagrange_net::Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    for f in Fixture::ALL {
        let (p, r) = common::solved(f);
        let c = find_cbar(&p, &r)?;
        let c = if c > 0.0 { 1.5 * c } else { 0.0 };
        let cert = iteration_matrix_b(&p, &r, SPECTRAL_ALPHA, c)?;
        let at_inverse_step = cert.count_near(1.0 / SPECTRAL_ALPHA, EIGENVALUE_TOL);
        let n = p.dim();
        let null_dim = p.num_pairs() - p.num_agents() + 1;
        let ok = cert.min_real_part() > 0.0 && at_inverse_step == n;
        pass &= ok;
        notes.push(format!(
            "{f} (c = {c:.3}): min Re {:.3e}, eigenvalues at 1/α {at_inverse_step} vs n = {n} (n·dim Null(S') = {})",
            cert.min_real_part(),
            n * null_dim
        ));
    }
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn jacobian_arbiter() -> lagrange_net::Result<Outcome> {
    let mut worst: f64 = 0.0;
    for f in Fixture::ALL {
        let (p, r) = common::solved(f);
        let z = analysis::stack_state(&analysis::stationary_state(&p, &r));
        let jac = analysis::transformed_map_jacobian(&p, &z, SPECTRAL_ALPHA, 0.0, FD_STEP)?;
        let b = iteration_matrix_b(&p, &r, SPECTRAL_ALPHA, 0.0)?.entries;
        let expected = DMatrix::identity(z.len(), z.len()) - b * SPECTRAL_ALPHA;
        worst = worst.max((jac - expected).amax());
    }
    Ok(Outcome::new(worst <= JACOBIAN_TOL, format!("max |FD − (I − αB)| {worst:.2e} over all fixtures")))
}

fn multiplier_method() -> lagrange_net::Result<Outcome> {
    let (p, r) = common::solved(Fixture::Path2);
    let bound = rate_bound_mom(&p, &r, 4.0)?.rate_bound;
    let mut cfg = MoMConfig::constant(4.0);
    cfg.inner.eps0 = 1e-12;
    cfg.inner.gamma = 0.999;
    cfg.tol = 0.0;
    cfg.outer_max_iter = 12;
    let run = run_a3(&p, &cfg, &common::perturbed(&p, &r, 41, 0.1), Some(&r))?;
    let errors: Vec<f64> = run.trace.iter().filter_map(|t| t.multiplier_error()).collect();
    let ratios: Vec<f64> = errors.windows(2).filter(|w| w[1] > 1e-9).map(|w| w[1] / w[0]).collect();
    let tail = &ratios[ratios.len() / 2..];
    let tail_max = tail.iter().copied().fold(0.0, f64::max);

    let schedule = MoMConfig { tol: 1e-9, outer_max_iter: MOM_OUTER_MAX, ..Default::default() };
    let run = run_a3(&p, &schedule, &p.zero_state(), Some(&r))?;
    let last = run.trace.last().expect("trace");
    let err_x = last.err_x_total().unwrap_or(f64::INFINITY);
    let err_mu = last.err_mu.unwrap_or(f64::INFINITY);
    let pass = !tail.is_empty()
        && tail_max <= bound + MOM_RATE_SLACK
        && err_x <= CONVERGED_ERR
        && err_mu <= CONVERGED_ERR
        && run.outer_iterations <= MOM_OUTER_MAX;
    Ok(Outcome::new(
        pass,
        format!(
            "c ≡ 4: tail max ratio {tail_max:.4} vs bound {bound:.4}; schedule: err_x {err_x:.1e}, err_mu {err_mu:.1e} after {} outer steps",
            run.outer_iterations
        ),
    ))
}

/// `∇_x 𝓛_c` is affine for quadratic data, so its minimizer is `x = −A⁻¹ g(0)`
/// with `A` recovered column by column from gradient differences.
fn closed_form_inner(p: &LiftedProblem, state: &MultiplierState, c: f64) -> lagrange_net::Result<DVector<f64>> {
    let n = state.x.len();
    let mut at = state.clone();
    at.x = DVector::zeros(n);
    let g0 = p.grad_aug_lagrangian(&at, c)?;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        at.x = DVector::zeros(n);
        at.x[j] = 1.0;
        a.set_column(j, &(p.grad_aug_lagrangian(&at, c)? - &g0));
    }
    let a = (&a + a.transpose()) * 0.5;
    Ok(-a.cholesky().expect("positive definite inner Hessian").solve(&g0))
}

fn inner_solver_oracle() -> lagrange_net::Result<Outcome> {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let eps = 1e-8;
    for f in [Fixture::Path2, Fixture::Affine2] {
        let p = f.build();
        let state = common::random_state(&p, 51, 1.0);
        for c in [1.0, 4.0, 16.0] {
            let inner = InnerConfig { step: InnerStep::Auto, ..InnerConfig::default() };
            let got = inner_minimize(&p, &state, c, eps, &inner, Execution::Stacked, 0)?;
            let exact = closed_form_inner(&p, &state, c)?;
            let err = (&got.x - &exact).norm();
            worst = worst.max(err);
            // the inner Hessians here have smallest eigenvalue ≥ 1, so ‖x − x̂‖ ≤ ‖∇‖ ≤ ε
            pass &= got.converged && err <= eps;
        }
    }
    Ok(Outcome::new(pass, format!("max ‖x − x_closed‖ {worst:.2e} at ε = {eps:e}, c ∈ {{1, 4, 16}}")))
}

fn config_text(f: Fixture, algorithm: &str, execution: &str) -> String {
    let oracle = match f {
        Fixture::NonConv3 => "\n[oracle]\nx_init = [0.8, 0.2]\n",
        _ => "",
    };
    let alg = match algorithm {
        "a1" => "name = \"a1\"\nalpha = 0.05\nmax_iter = 2000\ntol = 1e-10".to_string(),
        "a2" => "name = \"a2\"\nalpha = 0.05\nc = 4.0\nmax_iter = 2000\ntol = 1e-10".to_string(),
        _ => "name = \"a3\"\nc0 = 4.0\nbeta = 2.0\nc_max = 16.0\ntol = 1e-9\n[algorithm.inner]\nalpha = \"auto\"\neps0 = 1e-4\ngamma = 0.2\n[algorithm.outer]\nmax_iter = 10"
            .to_string(),
    };
    let (head, tail) = alg.split_once('\n').unwrap();
    let alg = if algorithm == "a3" {
        let (main, rest) = tail.split_once("[algorithm.inner]").unwrap();
        format!("{head}\n{main}execution = \"{execution}\"\n[algorithm.inner]{rest}")
    } else {
        format!("{head}\n{tail}\nexecution = \"{execution}\"")
    };
    format!("seed = 9\n[problem]\nname = \"{}\"\n[algorithm]\n{alg}\n[init]\nmode = \"oracle-perturb\"\nradius = 0.05\n{oracle}", f.name())
}

fn locality() -> lagrange_net::Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for f in Fixture::ALL {
        for algorithm in ["a1", "a2", "a3"] {
            let mut traces = Vec::new();
            for execution in ["stacked", "network", "network-parallel"] {
                let cfg = ExperimentConfig::from_toml_str(&config_text(f, algorithm, execution))?;
                let dir = tmp.path().join(format!("{f}-{algorithm}-{execution}"));
                harness::run_experiment(&cfg, &dir)?;
                traces.push(fs::read(dir.join("trace.csv"))?);
            }
            compared += 1;
            if traces.iter().any(|t| t != &traces[0]) {
                mismatches.push(format!("{f}/{algorithm}"));
            }
        }
    }
    Ok(Outcome::new(
        mismatches.is_empty(),
        format!("{compared} fixture/algorithm pairs, stacked vs serial vs parallel network; mismatches {mismatches:?}"),
    ))
}

fn derivative_hygiene() -> lagrange_net::Result<Outcome> {
    let mut worst_grad: f64 = 0.0;
    let mut worst_hess: f64 = 0.0;
    for f in Fixture::ALL {
        let p = f.build();
        let report = p.check_gradients(16, 61)?;
        worst_grad = worst_grad.max(report.max_rel_error);
        for (seed, c) in [(62, 0.0), (63, 1.0), (64, 10.0)] {
            let s = common::random_state(&p, seed, 1.5);
            let h = p.hess_aug_lagrangian(&s, c)?;
            let n = s.x.len();
            let mut fd = DMatrix::zeros(n, n);
            for j in 0..n {
                let step = 1e-6 * (1.0 + s.x[j].abs());
                let mut up = s.clone();
                up.x[j] += step;
                let mut down = s.clone();
                down.x[j] -= step;
                fd.set_column(j, &((p.grad_aug_lagrangian(&up, c)? - p.grad_aug_lagrangian(&down, c)?) / (2.0 * step)));
            }
            let rel = (&h - &fd).amax() / (1.0 + h.amax());
            worst_hess = worst_hess.max(rel);
        }
    }
    Ok(Outcome::new(
        worst_grad <= DERIVATIVE_TOL && worst_hess <= DERIVATIVE_TOL,
        format!("gradient rel err {worst_grad:.1e}, Hessian vs differenced gradient {worst_hess:.1e}"),
    ))
}

fn determinism() -> lagrange_net::Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let bin = env!("CARGO_BIN_EXE_lagrange-net");
    let mut differing = Vec::new();
    let configs = ["path2-a1.toml", "affine2-a2.toml", "nonconv3-a2.toml", "path2-a3.toml", "custom-ring3.toml"];
    for name in configs {
        let mut artifacts = Vec::new();
        for run in 0..2 {
            let dir = tmp.path().join(format!("{name}-{run}"));
            let status = Command::new(bin)
                .args(["run", "--config"])
                .arg(config_path(name))
                .arg("--out")
                .arg(&dir)
                .output()?
                .status;
            if status.code() != Some(0) {
                differing.push(format!("{name}: exit {status}"));
            }
            let mut files = Vec::new();
            for file in ["trace.csv", "summary.json", "certificate.json"] {
                let path = dir.join(file);
                files.push(if path.exists() { Some(fs::read(path)?) } else { None });
            }
            artifacts.push(files);
        }
        if artifacts[0] != artifacts[1] {
            differing.push(name.to_string());
        }
    }
    Ok(Outcome::new(differing.is_empty(), format!("{} configs run twice; differing {differing:?}", configs.len())))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 12] = [
        ("KKT points are exactly the fixed points", kkt_fixed_points),
        ("first-order method converges linearly at the certified rate", a1_linear_convergence),
        ("multipliers reach the attractor set with conserved projection", lambda_attractor_set),
        ("lifted constraint multipliers equal centralized ones", multipliers_equal_centralized),
        ("penalty separates augmented from plain first-order method", penalty_separation),
        ("iteration matrix spectrum", iteration_spectrum),
        ("finite-difference Jacobian matches I − αB", jacobian_arbiter),
        ("method of multipliers converges within the rate bound", multiplier_method),
        ("inner solver matches closed form", inner_solver_oracle),
        ("neighbor-message execution matches stacked execution", locality),
        ("derivatives match finite differences", derivative_hygiene),
        ("repeated runs are byte-identical", determinism),
    ];
    let mut unexpected = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        let expected = KNOWN_RED.contains(&id);
        let note = match (outcome.pass, expected) {
            (false, true) => " [known red]",
            (true, true) => " [known red now passing]",
            _ => "",
        };
        println!(
            "criterion {id:>2} {verdict}{note}: {name} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        if !outcome.pass && !expected {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criterion/criteria failed unexpectedly");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
