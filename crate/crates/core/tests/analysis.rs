mod common;

use approx::assert_abs_diff_eq;
use lagrange_net::analysis::{
    self, certify_step_size, certify_step_size_with, estimate_linear_rate, find_cbar, fit_log_linear, iteration_matrix_b,
    rate_bound_mom, second_order_check, tangent_cone_basis, MatrixLabel,
};
use lagrange_net::graph::GraphSpec;
use lagrange_net::linalg;
use lagrange_net::multipliers::{run_a3, MoMConfig};
use lagrange_net::problem::fixtures::Fixture;
use lagrange_net::problem::{LiftedProblem, LocalProblem, Polynomial};
use lagrange_net::solvers::Reference;
use lagrange_net::Error;
use nalgebra::{DMatrix, DVector};

fn poly(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Polynomial {
    Polynomial::new(dim, terms).unwrap()
}

#[test]
fn path2_b_matrix() {
    let (p, r) = common::solved(Fixture::Path2);
    let cert = iteration_matrix_b(&p, &r, 0.1, 0.0).unwrap();
    assert_eq!(cert.matrix, MatrixLabel::B);
    assert_eq!(cert.eigenvalues.len(), 5);
    assert!(cert.verdict);
    assert!(cert.min_real_part() > 0.0);
    assert!(cert.count_near(10.0, 1e-10) >= 1);
    // eigenvector (0, 0, w) with w spanning Null(S')
    let w = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0]);
    assert!((&cert.entries * &w - &w * 10.0).amax() < 1e-12);
    let bc = iteration_matrix_b(&p, &r, 0.1, 2.0).unwrap();
    assert_eq!(bc.matrix, MatrixLabel::Bc);
}

#[test]
fn step_size_scaling() {
    let (p, r) = common::solved(Fixture::Path2);
    let b_of = |alpha: f64| Ok(iteration_matrix_b(&p, &r, alpha, 0.0)?.entries);
    let base = certify_step_size_with(&b_of, 1.0).unwrap();
    let doubled = |alpha: f64| Ok(iteration_matrix_b(&p, &r, 2.0 * alpha, 0.0)?.entries * 2.0);
    let half = certify_step_size_with(&doubled, 1.0).unwrap();
    assert!((half.alpha_bar / base.alpha_bar - 0.5).abs() < 2e-3, "{} vs {}", half.alpha_bar, base.alpha_bar);
    assert!(base.rho_at_bar < 1.0);
    let radius = |alpha: f64| {
        let b = iteration_matrix_b(&p, &r, alpha, 0.0).unwrap().entries;
        linalg::spectral_radius(&(DMatrix::identity(5, 5) - b * alpha)).unwrap()
    };
    assert!(radius(base.alpha_bar) < 1.0);
    assert!(radius(1.05 * base.alpha_bar) >= 1.0);
    assert!(base.rho_recommended <= base.rho_at_bar);
}

#[test]
fn nonconvex_fixture_needs_penalty() {
    let (p, r) = common::solved(Fixture::NonConv3);
    assert!(matches!(certify_step_size(&p, &r, 0.0, 1.0), Err(Error::CertificationFailure(_))));
    let cbar = find_cbar(&p, &r).unwrap();
    assert!(cbar > 0.0 && cbar.is_finite());
    let h_min = |c: f64| {
        let s = common::kkt_state(&p, &r);
        linalg::min_sym_eigenvalue(&p.hess_aug_lagrangian(&s, c).unwrap())
    };
    assert!(h_min(cbar) > 0.0);
    assert!(h_min(cbar / 1.1) <= 0.0);
    assert!(h_min(10.0 * cbar) > 0.0);
    let grid: Vec<bool> = (0..40).map(|k| h_min(0.1 * k as f64) > 0.0).collect();
    assert!(grid.windows(2).all(|w| !w[0] || w[1]), "predicate not monotone: {grid:?}");
    let cert = certify_step_size(&p, &r, 1.5 * cbar, 1.0).unwrap();
    assert!(cert.alpha_bar > 0.0 && cert.rho_recommended < 1.0);
}

#[test]
fn convex_fixture_needs_no_penalty() {
    let (p, r) = common::solved(Fixture::Path2);
    assert_eq!(find_cbar(&p, &r).unwrap(), 0.0);
}

#[test]
fn tangent_cones() {
    let (p, r) = common::solved(Fixture::Affine2);
    let tc = tangent_cone_basis(&p, &r.x_star).unwrap();
    assert_eq!(tc.basis.ncols(), 0);
    let (p, r) = common::solved(Fixture::Path2);
    assert_eq!(tangent_cone_basis(&p, &r.x_star).unwrap().basis.ncols(), 0);

    let (p, r) = common::solved(Fixture::NonConv3);
    let tc = tangent_cone_basis(&p, &r.x_star).unwrap();
    assert_eq!(tc.basis.ncols(), 1);
    let grad_h = DVector::from_vec(vec![2.0 * r.x_star[0], 2.0 * r.x_star[1]]);
    assert!(tc.basis.column(0).dot(&grad_h).abs() < 1e-12);
    assert_abs_diff_eq!(tc.basis.column(0).norm(), 1.0, epsilon = 1e-12);
    let x = p.consensus(&r.x_star);
    let g = p.constraint_jacobian(&x).unwrap();
    assert!((g.transpose() * &tc.lifted).amax() < 1e-10);
    assert!((p.topology().lifted_s() * &tc.lifted).amax() < 1e-10);
    // converse count: dim Null([G, S']') = n − m
    let mut stacked = DMatrix::zeros(x.len(), g.ncols() + p.lambda_len());
    stacked.view_mut((0, 0), g.shape()).copy_from(&g);
    stacked.view_mut((0, g.ncols()), (x.len(), p.lambda_len())).copy_from(&p.topology().lifted_s().transpose());
    let null = linalg::null_basis(&stacked.transpose(), linalg::RANK_REL_TOL);
    assert_eq!(null.ncols(), p.dim() - p.num_constraints());
}

#[test]
fn duplicate_constraints_are_rank_deficient() {
    let h = || poly(2, vec![(1.0, vec![1, 0]), (1.0, vec![0, 1]), (-1.0, vec![0, 0])]);
    let f = || poly(2, vec![(0.5, vec![2, 0]), (0.5, vec![0, 2])]);
    let agents = vec![LocalProblem::new(f()).with_constraint(h()), LocalProblem::new(f()).with_constraint(h())];
    let p = LiftedProblem::new("dup", agents, GraphSpec::path(2)).unwrap();
    assert!(matches!(tangent_cone_basis(&p, &[0.5, 0.5]), Err(Error::RankDeficientConstraints { .. })));
}

#[test]
fn second_order_checks() {
    let (p, r) = common::solved(Fixture::Path2);
    let rep = second_order_check(&p, &r).unwrap();
    assert!(rep.holds && rep.margin == f64::INFINITY);
    let (p, r) = common::solved(Fixture::NonConv3);
    let rep = second_order_check(&p, &r).unwrap();
    assert!(rep.holds && rep.margin > 0.0);

    // same fixture with every objective negated; (1, 0) stays a KKT point with flipped multipliers
    let agents = vec![
        LocalProblem::new(poly(2, vec![(-0.5, vec![2, 0]), (2.0, vec![1, 0]), (-2.0, vec![0, 0]), (-0.5, vec![0, 2])]))
            .with_constraint(poly(2, vec![(1.0, vec![2, 0]), (1.0, vec![0, 2]), (-1.0, vec![0, 0])])),
        LocalProblem::new(poly(2, vec![(-0.25, vec![4, 0]), (1.0, vec![0, 2])])),
        LocalProblem::new(poly(2, vec![(-0.5, vec![2, 0]), (-2.0, vec![0, 2])])),
    ];
    let neg = LiftedProblem::new("negated", agents, GraphSpec::path(3)).unwrap();
    let flipped = Reference {
        x_star: r.x_star.clone(),
        mu_star: -&r.mu_star,
        lambda_star: -&r.lambda_star,
    };
    assert!(neg.kkt_residual(&common::kkt_state(&neg, &flipped)).unwrap().total() < 1e-10);
    assert!(!second_order_check(&neg, &flipped).unwrap().holds);
    assert!(matches!(find_cbar(&neg, &flipped), Err(Error::HypothesisViolated(_))));
}

/// Exact Jacobian of the TP-PATH2 multiplier map `η ↦ η + c h̃(x(η))`, assembled by hand.
fn path2_multiplier_map(c: f64) -> DMatrix<f64> {
    let g = DVector::from_vec(vec![1.0, 0.0]);
    let s = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let l = s.transpose() * &s;
    let a = DMatrix::identity(2, 2) + &g * g.transpose() * c + l * c;
    let mut grad_tilde = DMatrix::zeros(2, 3);
    grad_tilde.set_column(0, &g);
    grad_tilde.view_mut((0, 1), (2, 2)).copy_from(&s.transpose());
    let dx = -a.try_inverse().unwrap() * &grad_tilde;
    DMatrix::identity(3, 3) + grad_tilde.transpose() * dx * c
}

#[test]
fn multiplier_rate_matches_linear_map() {
    let (p, r) = common::solved(Fixture::Path2);
    let t = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.5, -0.5, 0.0, -0.5, 0.5]);
    let mut previous = 1.0;
    for c in [1.0, 2.0, 4.0, 8.0, 16.0] {
        let cert = rate_bound_mom(&p, &r, c).unwrap();
        let exact = linalg::spectral_radius(&(&t * path2_multiplier_map(c) * &t)).unwrap();
        assert_abs_diff_eq!(cert.rate_bound, exact, epsilon = 1e-10);
        assert!(cert.rate_bound < previous);
        assert!((0.0..1.0).contains(&cert.rate_bound));
        previous = cert.rate_bound;
        for (sigma, e) in cert.sigma.iter().zip(&cert.effective_e) {
            assert!((sigma - e / (e + c)).abs() < 1e-8);
        }
        assert!(cert.admissible);
    }
}

#[test]
fn observed_multiplier_ratio_matches_bound_on_linear_fixture() {
    let (p, r) = common::solved(Fixture::Path2);
    let c = 4.0;
    let bound = rate_bound_mom(&p, &r, c).unwrap().rate_bound;
    let mut cfg = MoMConfig::constant(c);
    cfg.inner.eps0 = 1e-12;
    cfg.inner.gamma = 0.999;
    cfg.tol = 0.0;
    cfg.outer_max_iter = 12;
    let run = run_a3(&p, &cfg, &common::perturbed(&p, &r, 4, 0.3), Some(&r)).unwrap();
    let errors: Vec<f64> = run.trace.iter().map(|t| t.multiplier_error().unwrap()).collect();
    let ratios: Vec<f64> = errors.windows(2).filter(|w| w[1] > 1e-8).map(|w| w[1] / w[0]).collect();
    let observed = *ratios.last().unwrap();
    assert!((observed - bound).abs() < 1e-3, "observed {observed}, bound {bound}, ratios {ratios:?}");
}

#[test]
fn nullspace_has_no_mu_component() {
    for f in Fixture::ALL {
        let (p, r) = common::solved(f);
        let x = p.consensus(&r.x_star);
        let g = p.constraint_jacobian(&x).unwrap();
        let mut stacked = DMatrix::zeros(x.len(), g.ncols() + p.lambda_len());
        stacked.view_mut((0, 0), g.shape()).copy_from(&g);
        stacked.view_mut((0, g.ncols()), (x.len(), p.lambda_len())).copy_from(&p.topology().lifted_s().transpose());
        let null = linalg::null_basis(&stacked, linalg::RANK_REL_TOL);
        assert!(null.ncols() > 0);
        assert!(null.rows(0, p.num_constraints()).amax() <= 1e-10, "{f}");
    }
}

#[test]
fn sensitivity_ratio_is_bounded() {
    for f in [Fixture::Path2, Fixture::NonConv3] {
        let (p, r) = common::solved(f);
        let cbar = find_cbar(&p, &r).unwrap().max(1.0);
        let rep = analysis::multiplier_sensitivity(&p, &r, &[cbar, 2.0 * cbar, 4.0 * cbar], 100, 0.05, 3).unwrap();
        assert!(rep.max_ratio.iter().all(|m| m.is_finite() && *m > 0.0), "{f}: {:?}", rep.max_ratio);
        // at c̄ itself the penalized Hessian is nearly singular, so stability is judged as c grows past it
        assert!(rep.max_ratio[2] <= 1.5 * rep.max_ratio[1], "{f}: {:?}", rep.max_ratio);
    }
}

#[test]
fn rate_fits() {
    let geometric: Vec<f64> = (0..60).map(|k| 0.5f64.powi(k)).collect();
    let fit = estimate_linear_rate(&geometric, 0.5).unwrap();
    assert_abs_diff_eq!(fit.contraction, 0.5, epsilon = 1e-6);
    assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);

    let harmonic: Vec<f64> = (1..61).map(|k| 1.0 / k as f64).collect();
    let sub = estimate_linear_rate(&harmonic, 1.0).unwrap();
    assert!(sub.r_squared < fit.r_squared);
    assert!(sub.r_squared < 0.99);

    assert!(estimate_linear_rate(&geometric[..10], 0.5).is_err());

    let mut truncated = geometric.clone();
    for e in truncated.iter_mut().skip(40) {
        *e = 0.0;
    }
    let fit = fit_log_linear(&truncated, 1.0).unwrap();
    assert_eq!(fit.points, 40);
    assert_abs_diff_eq!(fit.contraction, 0.5, epsilon = 1e-9);
}

#[test]
fn linearized_map_is_identity_minus_scaled_b() {
    for (f, c) in [(Fixture::Path2, 0.0), (Fixture::Affine2, 1.0), (Fixture::NonConv3, 3.0)] {
        let (p, r) = common::solved(f);
        let alpha = 0.05;
        let z = analysis::stack_state(&analysis::stationary_state(&p, &r));
        let jac = analysis::transformed_map_jacobian(&p, &z, alpha, c, 1e-6).unwrap();
        let b = iteration_matrix_b(&p, &r, alpha, c).unwrap().entries;
        let expected = DMatrix::identity(z.len(), z.len()) - b * alpha;
        assert!((jac - expected).amax() < 1e-7, "{f}");
    }
}

#[test]
fn inverse_step_multiplicity_is_lifted_cycle_dimension() {
    for f in Fixture::ALL {
        let (p, r) = common::solved(f);
        let c = match find_cbar(&p, &r).unwrap() {
            c if c > 0.0 => 1.5 * c,
            _ => 0.0,
        };
        let alpha = 0.1;
        let cert = iteration_matrix_b(&p, &r, alpha, c).unwrap();
        let null_dim = p.num_pairs() - p.num_agents() + 1;
        assert_eq!(cert.count_near(1.0 / alpha, 1e-8), p.dim() * null_dim, "{f}");
        assert!(cert.min_real_part() > 0.0, "{f}");
    }
}
