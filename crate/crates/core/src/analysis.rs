//! Spectral certificates for the first-order methods and the method of
//! multipliers, plus empirical rate estimation from traces.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_REL_TOL};
use crate::network::{Mode, Network, Rule};
use crate::problem::{LiftedProblem, MultiplierState};
use crate::solvers::Reference;

pub use crate::solvers::dist_to_multiplier_set;

/// Eigenvalues with `|Re| < ZERO_REL_TOL · ‖A‖` count as zero in verdicts.
pub const ZERO_REL_TOL: f64 = 1e-10;

/// Maximum KKT residual accepted for a point handed to the certificates.
pub const STATIONARY_TOL: f64 = 1e-8;

/// Smallest singular value of `∇h(x*)` accepted as full rank.
pub const RANK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatrixLabel {
    B,
    #[serde(rename = "B_c")]
    Bc,
    #[serde(rename = "N_c")]
    Nc,
    #[serde(rename = "hess_aug")]
    HessAug,
}

fn complex_pairs<S: Serializer>(ev: &[Complex<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(ev.iter().map(|z| [z.re, z.im]))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralCertificate {
    pub matrix: MatrixLabel,
    #[serde(serialize_with = "complex_pairs")]
    pub eigenvalues: Vec<Complex<f64>>,
    pub verdict: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_bound: Option<f64>,
    #[serde(skip)]
    pub entries: DMatrix<f64>,
}

impl SpectralCertificate {
    pub fn min_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }

    /// Number of eigenvalues within `tol` of `target`.
    pub fn count_near(&self, target: f64, tol: f64) -> usize {
        self.eigenvalues
            .iter()
            .filter(|&&z| (z - Complex::new(target, 0.0)).norm() <= tol)
            .count()
    }
}

/// Lifted stationary state `(𝟙⊗x*, μ*, λ*)`.
pub fn stationary_state(p: &LiftedProblem, reference: &Reference) -> MultiplierState {
    MultiplierState {
        x: p.consensus(&reference.x_star),
        mu: reference.mu_star.clone(),
        lambda: reference.lambda_star.clone(),
    }
}

fn require_stationary(p: &LiftedProblem, state: &MultiplierState) -> Result<()> {
    let residual = p.kkt_residual(state)?.total();
    if residual > STATIONARY_TOL {
        return Err(Error::NotStationary {
            residual,
            tol: STATIONARY_TOL,
        });
    }
    Ok(())
}

/// Assembles
/// ```text
/// [  H    G   S' ]
/// [ -G'   0   0  ]
/// [ -S    0  J/α ]
/// ```
pub fn assemble_b(h: &DMatrix<f64>, g: &DMatrix<f64>, s: &DMatrix<f64>, j: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let nx = h.nrows();
    let m = g.ncols();
    let nl = s.nrows();
    let dim = nx + m + nl;
    let mut b = DMatrix::zeros(dim, dim);
    b.view_mut((0, 0), (nx, nx)).copy_from(h);
    b.view_mut((0, nx), (nx, m)).copy_from(g);
    b.view_mut((0, nx + m), (nx, nl)).copy_from(&s.transpose());
    b.view_mut((nx, 0), (m, nx)).copy_from(&(-g.transpose()));
    b.view_mut((nx + m, 0), (nl, nx)).copy_from(&(-s));
    b.view_mut((nx + m, nx + m), (nl, nl)).copy_from(&(j / alpha));
    b
}

fn real_part_verdict(ev: &[Complex<f64>], matrix: &DMatrix<f64>) -> bool {
    let tol = ZERO_REL_TOL * matrix.norm();
    ev.iter().all(|z| z.re > tol)
}

/// Linearization `B` (or `B_c` for `c > 0`) of the transformed first-order iteration at a stationary point.
pub fn iteration_matrix_b(p: &LiftedProblem, reference: &Reference, alpha: f64, c: f64) -> Result<SpectralCertificate> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "must be positive".into(),
        });
    }
    let state = stationary_state(p, reference);
    require_stationary(p, &state)?;
    let h = p.hess_aug_lagrangian(&state, c)?;
    let g = p.constraint_jacobian(&state.x)?;
    let topo = p.topology();
    let b = assemble_b(&h, &g, topo.lifted_s(), topo.lifted_j(), alpha);
    let eigenvalues = linalg::complex_eigenvalues(&b)?;
    let verdict = real_part_verdict(&eigenvalues, &b);
    Ok(SpectralCertificate {
        matrix: if c == 0.0 { MatrixLabel::B } else { MatrixLabel::Bc },
        eigenvalues,
        verdict,
        alpha_bound: None,
        c_bar: None,
        rate_bound: None,
        entries: b,
    })
}

/// `I − αB(α)` for the given `B` builder.
fn iteration_radius(b_of: &dyn Fn(f64) -> Result<DMatrix<f64>>, alpha: f64) -> Result<f64> {
    let b = b_of(alpha)?;
    let m = DMatrix::identity(b.nrows(), b.ncols()) - b * alpha;
    linalg::spectral_radius(&m)
}

#[derive(Debug, Clone, Serialize)]
pub struct StepSizeCertificate {
    /// Largest stable step found, to relative width `1e-3`.
    pub alpha_bar: f64,
    /// `ρ(I − ᾱB)`, just below one.
    pub rho_at_bar: f64,
    /// Step in `(0, ᾱ]` minimizing `ρ(I − αB)`.
    pub alpha_recommended: f64,
    pub rho_recommended: f64,
}

const ALPHA_FLOOR: f64 = 1e-12;
const BISECTION_REL_WIDTH: f64 = 1e-3;

/// Largest `α` with `ρ(I − αB(α)) < 1` for an arbitrary `B` builder, plus the rate-optimal step below it.
///
/// Directions `(0, 0, w)` with `w ∈ Null(S')` map to zero under `I − αB`, so
/// the full spectral radius already excludes them.
pub fn certify_step_size_with(b_of: &dyn Fn(f64) -> Result<DMatrix<f64>>, alpha_max_search: f64) -> Result<StepSizeCertificate> {
    if !(alpha_max_search > ALPHA_FLOOR) {
        return Err(Error::InvalidParameter {
            name: "alpha_max_search",
            reason: format!("must exceed {ALPHA_FLOOR:e}"),
        });
    }
    let stable = |a: f64| -> Result<bool> { Ok(iteration_radius(b_of, a)? < 1.0) };
    let mut hi = alpha_max_search;
    let mut doublings = 0;
    while stable(hi)? {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::CertificationFailure("iteration is stable for every step size tried".into()));
        }
    }
    let mut lo = hi / 2.0;
    while !stable(lo)? {
        hi = lo;
        lo /= 2.0;
        if lo < ALPHA_FLOOR {
            return Err(Error::CertificationFailure(format!(
                "no stable step size above {ALPHA_FLOOR:e}"
            )));
        }
    }
    while hi - lo > BISECTION_REL_WIDTH * lo {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha_bar = lo;
    let rho_at_bar = iteration_radius(b_of, alpha_bar)?;

    // ρ(α) is a max of convex functions |1 − αb|, so golden-section search applies
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, alpha_bar);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = iteration_radius(b_of, x1)?;
    let mut f2 = iteration_radius(b_of, x2)?;
    for _ in 0..80 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = iteration_radius(b_of, x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = iteration_radius(b_of, x2)?;
        }
        if b - a <= 1e-9 * alpha_bar {
            break;
        }
    }
    let (mut alpha_recommended, mut rho_recommended) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if rho_at_bar < rho_recommended {
        alpha_recommended = alpha_bar;
        rho_recommended = rho_at_bar;
    }
    Ok(StepSizeCertificate {
        alpha_bar,
        rho_at_bar,
        alpha_recommended,
        rho_recommended,
    })
}

/// Step-size certificate for A1 (`c = 0`) or A2 at the given stationary point.
pub fn certify_step_size(p: &LiftedProblem, reference: &Reference, c: f64, alpha_max_search: f64) -> Result<StepSizeCertificate> {
    let state = stationary_state(p, reference);
    require_stationary(p, &state)?;
    let h = p.hess_aug_lagrangian(&state, c)?;
    let g = p.constraint_jacobian(&state.x)?;
    let topo = p.topology();
    let (s, j) = (topo.lifted_s().clone(), topo.lifted_j().clone());
    let b_of = move |alpha: f64| Ok(assemble_b(&h, &g, &s, &j, alpha));
    certify_step_size_with(&b_of, alpha_max_search)
}

fn hessian_is_positive(h: &DMatrix<f64>) -> bool {
    let tol = ZERO_REL_TOL * h.norm().max(1.0);
    linalg::min_sym_eigenvalue(h) > tol
}

/// Smallest penalty with `∇²𝓛_c(x*, μ*, λ*) ≻ 0`, to relative width `1e-3`.
pub fn find_cbar(p: &LiftedProblem, reference: &Reference) -> Result<f64> {
    let report = second_order_check(p, reference)?;
    if !report.holds {
        return Err(Error::HypothesisViolated(format!(
            "Hessian is not positive on the tangent cone (margin {:e})",
            report.margin
        )));
    }
    let state = stationary_state(p, reference);
    let predicate = |c: f64| -> Result<bool> { Ok(hessian_is_positive(&p.hess_aug_lagrangian(&state, c)?)) };
    if predicate(0.0)? {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while !predicate(hi)? {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::HypothesisViolated("augmented Hessian never becomes positive definite".into()));
        }
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    while hi - lo > BISECTION_REL_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        if predicate(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Centralized constraint Jacobian `∇h(x*)`, `n × m`.
pub fn centralized_constraint_jacobian(p: &LiftedProblem, x_star: &[f64]) -> DMatrix<f64> {
    let n = p.dim();
    let mut g = DMatrix::zeros(n, p.num_constraints());
    for (q, &i) in p.constrained_agents().iter().enumerate() {
        let grad = p.agents()[i].constraint.as_ref().expect("constrained agent").gradient(x_star);
        g.set_column(q, &DVector::from_vec(grad));
    }
    g
}

#[derive(Debug, Clone)]
pub struct TangentConeBasis {
    /// Orthonormal columns spanning `Null(∇h(x*)')`, `n × (n − m)`.
    pub basis: DMatrix<f64>,
    /// `𝟙 ⊗ v / √N` for each basis column, `nN × (n − m)`.
    pub lifted: DMatrix<f64>,
    /// Smallest singular value of `∇h(x*)` (`+∞` when unconstrained).
    pub sigma_min: f64,
}

impl TangentConeBasis {
    pub fn is_trivial(&self) -> bool {
        self.basis.ncols() == 0
    }
}

/// `[∇𝐡(𝐱*), 𝐒']`.
fn extended_jacobian(p: &LiftedProblem, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let g = p.constraint_jacobian(x)?;
    let st = p.topology().lifted_s().transpose();
    let mut out = DMatrix::zeros(g.nrows(), g.ncols() + st.ncols());
    out.view_mut((0, 0), g.shape()).copy_from(&g);
    out.view_mut((0, g.ncols()), st.shape()).copy_from(&st);
    Ok(out)
}

pub fn tangent_cone_basis(p: &LiftedProblem, x_star: &[f64]) -> Result<TangentConeBasis> {
    let n = p.dim();
    if x_star.len() != n {
        return Err(Error::DimensionMismatch {
            what: "x_star",
            expected: n,
            got: x_star.len(),
        });
    }
    let g = centralized_constraint_jacobian(p, x_star);
    let sigma_min = if g.ncols() == 0 { f64::INFINITY } else { linalg::sigma_min(&g) };
    if sigma_min <= RANK_FLOOR {
        return Err(Error::RankDeficientConstraints { sigma_min });
    }
    let basis = if g.ncols() == 0 {
        DMatrix::identity(n, n)
    } else {
        linalg::null_basis(&g.transpose(), RANK_REL_TOL)
    };
    let agents = p.num_agents();
    let scale = 1.0 / (agents as f64).sqrt();
    let mut lifted = DMatrix::zeros(n * agents, basis.ncols());
    for col in 0..basis.ncols() {
        for i in 0..agents {
            for k in 0..n {
                lifted[(i * n + k, col)] = basis[(k, col)] * scale;
            }
        }
    }
    let ext = extended_jacobian(p, &p.consensus(x_star))?;
    let residual = (ext.transpose() * &lifted).amax();
    if residual > 1e-10 {
        return Err(Error::Oracle(format!("lifted tangent vectors leave the constraint nullspace ({residual:e})")));
    }
    let null_dim = ext.nrows() - linalg::rank(&ext, RANK_REL_TOL);
    if null_dim != basis.ncols() {
        return Err(Error::Oracle(format!(
            "lifted tangent space has dimension {null_dim}, expected {}",
            basis.ncols()
        )));
    }
    Ok(TangentConeBasis { basis, lifted, sigma_min })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondOrderReport {
    pub holds: bool,
    /// Smallest eigenvalue of `Z'∇²𝓛 Z`; `+∞` when the cone is `{0}`.
    pub margin: f64,
}

pub fn second_order_check(p: &LiftedProblem, reference: &Reference) -> Result<SecondOrderReport> {
    let cone = tangent_cone_basis(p, &reference.x_star)?;
    if cone.is_trivial() {
        return Ok(SecondOrderReport {
            holds: true,
            margin: f64::INFINITY,
        });
    }
    let h = p.hess_aug_lagrangian(&stationary_state(p, reference), 0.0)?;
    let reduced = cone.lifted.transpose() * h * &cone.lifted;
    let margin = linalg::min_sym_eigenvalue(&reduced);
    Ok(SecondOrderReport {
        holds: margin > ZERO_REL_TOL * reduced.norm().max(1.0),
        margin,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplierRateCertificate {
    pub c: f64,
    /// `ρ(Ñ)`, the predicted asymptotic ratio of multiplier errors.
    pub rate_bound: f64,
    /// Eigenvalues of `Ñ` restricted to Range(T), ascending.
    pub sigma: Vec<f64>,
    /// `e_i = cσ_i/(1 − σ_i)` for `σ_i ≠ 1`.
    pub effective_e: Vec<f64>,
    /// `c > max_i(−2 e_i)`.
    pub admissible: bool,
    #[serde(skip)]
    pub n_tilde: DMatrix<f64>,
}

impl MultiplierRateCertificate {
    pub fn spectral(&self) -> SpectralCertificate {
        SpectralCertificate {
            matrix: MatrixLabel::Nc,
            eigenvalues: self.sigma.iter().map(|&s| Complex::new(s, 0.0)).collect(),
            verdict: self.rate_bound < 1.0,
            alpha_bound: None,
            c_bar: None,
            rate_bound: Some(self.rate_bound),
            entries: self.n_tilde.clone(),
        }
    }
}

/// `T = diag(I_m, I − 𝐉)`.
fn multiplier_projector(p: &LiftedProblem) -> DMatrix<f64> {
    let m = p.num_constraints();
    let nl = p.lambda_len();
    let mut t = DMatrix::zeros(m + nl, m + nl);
    t.view_mut((0, 0), (m, m)).fill_with_identity();
    let j = p.topology().lifted_j();
    t.view_mut((m, m), (nl, nl)).copy_from(&(DMatrix::identity(nl, nl) - j));
    t
}

/// Rate of the multiplier iteration at penalty `c` from `Ñ = T N_c T`,
/// `N_c = I − c ∇h̃' (∇²𝓛_c)⁻¹ ∇h̃` and `∇h̃ = [∇𝐡, 𝐒']`.
pub fn rate_bound_mom(p: &LiftedProblem, reference: &Reference, c: f64) -> Result<MultiplierRateCertificate> {
    if !(c > 0.0) {
        return Err(Error::NegativePenalty(c));
    }
    let state = stationary_state(p, reference);
    require_stationary(p, &state)?;
    let h = p.hess_aug_lagrangian(&state, c)?;
    if !hessian_is_positive(&h) {
        let ev = linalg::sym_eigenvalues(&h);
        let tol = ZERO_REL_TOL * h.norm().max(1.0);
        if ev.iter().any(|e| e.abs() <= tol) {
            return Err(Error::NeedLargerPenalty { c });
        }
    }
    let h_inv = h.try_inverse().ok_or(Error::NeedLargerPenalty { c })?;
    let ext = extended_jacobian(p, &state.x)?;
    let k = ext.ncols();
    let nc = DMatrix::identity(k, k) - ext.transpose() * h_inv * &ext * c;
    let t = multiplier_projector(p);
    let n_tilde = &t * nc * &t;
    let rate_bound = linalg::spectral_radius(&n_tilde)?;
    let range = linalg::orthonormal_range_of_projector(&t);
    let restricted = range.transpose() * &n_tilde * &range;
    let sigma = linalg::sym_eigenvalues(&restricted);
    let effective_e: Vec<f64> = sigma
        .iter()
        .filter(|&&s| (1.0 - s).abs() > 1e-12)
        .map(|&s| c * s / (1.0 - s))
        .collect();
    let admissible = effective_e.iter().all(|&e| c > -2.0 * e);
    Ok(MultiplierRateCertificate {
        c,
        rate_bound,
        sigma,
        effective_e,
        admissible,
        n_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Per-iteration contraction `exp(slope)`.
    pub contraction: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

/// Least-squares fit of `log e_k` against `k` over the trailing fraction of a trace of at least 20 records.
///
/// The sequence is cut at the first non-positive or non-finite entry.
pub fn estimate_linear_rate(errors: &[f64], tail_fraction: f64) -> Result<RateFit> {
    if errors.len() < 20 {
        return Err(Error::InvalidParameter {
            name: "trace",
            reason: format!("need at least 20 records, got {}", errors.len()),
        });
    }
    fit_log_linear(errors, tail_fraction)
}

/// Same fit without the minimum-length requirement (at least 3 usable points).
pub fn fit_log_linear(errors: &[f64], tail_fraction: f64) -> Result<RateFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "tail_fraction",
            reason: "must lie in (0, 1]".into(),
        });
    }
    let usable = errors
        .iter()
        .position(|&e| !(e > 0.0 && e.is_finite()))
        .unwrap_or(errors.len());
    let count = ((usable as f64) * tail_fraction).ceil() as usize;
    if count < 3 {
        return Err(Error::InvalidParameter {
            name: "trace",
            reason: "fewer than 3 positive errors left to fit".into(),
        });
    }
    let start = usable - count;
    let pts: Vec<(f64, f64)> = (start..usable).map(|k| (k as f64, errors[k].ln())).collect();
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        contraction: slope.exp(),
        slope,
        r_squared,
        points: pts.len(),
    })
}

/// The first-order map in coordinates `(x, μ, λ̃)`, with `λ̃ ↦ λ̃ + αSx − Jλ̃`.
pub fn transformed_map(p: &LiftedProblem, z: &DVector<f64>, alpha: f64, c: f64) -> Result<DVector<f64>> {
    let (nx, m, nl) = (p.x_len(), p.num_constraints(), p.lambda_len());
    if z.len() != nx + m + nl {
        return Err(Error::DimensionMismatch {
            what: "transformed state",
            expected: nx + m + nl,
            got: z.len(),
        });
    }
    let state = MultiplierState {
        x: z.rows(0, nx).into_owned(),
        mu: z.rows(nx, m).into_owned(),
        lambda: z.rows(nx + m, nl).into_owned(),
    };
    let mut net = Network::new(p, &state, Mode::Serial)?;
    net.step(Rule::FirstOrder { alpha, c });
    let next = net.state();
    let lambda = next.lambda - p.topology().lifted_j() * &state.lambda;
    let mut out = DVector::zeros(z.len());
    out.rows_mut(0, nx).copy_from(&next.x);
    out.rows_mut(nx, m).copy_from(&next.mu);
    out.rows_mut(nx + m, nl).copy_from(&lambda);
    Ok(out)
}

pub fn stack_state(state: &MultiplierState) -> DVector<f64> {
    let mut v = Vec::with_capacity(state.x.len() + state.mu.len() + state.lambda.len());
    v.extend(state.x.iter());
    v.extend(state.mu.iter());
    v.extend(state.lambda.iter());
    DVector::from_vec(v)
}

/// Central-difference Jacobian of [`transformed_map`] at `z`.
pub fn transformed_map_jacobian(p: &LiftedProblem, z: &DVector<f64>, alpha: f64, c: f64, step: f64) -> Result<DMatrix<f64>> {
    let dim = z.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut probe = z.clone();
    for col in 0..dim {
        let h = step * (1.0 + z[col].abs());
        probe[col] = z[col] + h;
        let up = transformed_map(p, &probe, alpha, c)?;
        probe[col] = z[col] - h;
        let down = transformed_map(p, &probe, alpha, c)?;
        probe[col] = z[col];
        jac.set_column(col, &((up - down) / (2.0 * h)));
    }
    Ok(jac)
}

/// Minimizer of `x ↦ 𝓛_c(x, μ, λ)` near `x0` by Newton's method.
pub fn local_primal_solution(p: &LiftedProblem, mu: &DVector<f64>, lambda: &DVector<f64>, c: f64, x0: &DVector<f64>) -> Result<DVector<f64>> {
    let mut state = MultiplierState {
        x: x0.clone(),
        mu: mu.clone(),
        lambda: lambda.clone(),
    };
    for _ in 0..100 {
        let g = p.grad_aug_lagrangian(&state, c)?;
        if g.norm() <= 1e-13 * (1.0 + state.x.norm()) {
            return Ok(state.x);
        }
        let h = p.hess_aug_lagrangian(&state, c)?;
        let dx = h.lu().solve(&g).ok_or(Error::NeedLargerPenalty { c })?;
        state.x -= dx;
        if !state.is_finite() {
            return Err(Error::Oracle("Newton iterate became non-finite".into()));
        }
    }
    Ok(state.x)
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub c_values: Vec<f64>,
    /// `max c‖x(η, c) − x*‖ / ‖Tη − η*‖` per penalty.
    pub max_ratio: Vec<f64>,
    pub samples: usize,
}

/// Samples multipliers near `η*` and measures how far the minimizer of `𝓛_c` moves.
pub fn multiplier_sensitivity(p: &LiftedProblem, reference: &Reference, c_values: &[f64], samples: usize, radius: f64, seed: u64) -> Result<SensitivityReport> {
    let x_star = p.consensus(&reference.x_star);
    let t = multiplier_projector(p);
    let m = p.num_constraints();
    let nl = p.lambda_len();
    let mut max_ratio = Vec::with_capacity(c_values.len());
    for &c in c_values {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let raw = DVector::from_fn(m + nl, |_, _| rng.gen_range(-1.0..1.0));
            let mut dir = &t * raw;
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            dir *= radius * rng.gen_range(0.1..1.0) / norm;
            let mu = &reference.mu_star + dir.rows(0, m);
            let lambda = &reference.lambda_star + dir.rows(m, nl);
            let x = local_primal_solution(p, &mu, &lambda, c, &x_star)?;
            worst = worst.max(c * (x - &x_star).norm() / dir.norm());
        }
        max_ratio.push(worst);
    }
    Ok(SensitivityReport {
        c_values: c_values.to_vec(),
        max_ratio,
        samples,
    })
}
