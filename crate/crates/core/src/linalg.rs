//! Dense linear-algebra helpers shared by the graph, oracle and certification code.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
pub const RANK_REL_TOL: f64 = 1e-10;

fn threshold(singular_values: &[f64], rel_tol: f64) -> f64 {
    let max = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    rel_tol * max
}

/// Thin singular value decomposition, values descending.
///
/// Computed from the symmetric eigenproblem of `[[0, A], [A', 0]]`, whose
/// eigenvalues are `±σ`; this keeps full relative accuracy without forming
/// `A'A`. Singular vectors are only meaningful for nonzero values.
struct ThinSvd {
    u: DMatrix<f64>,
    values: Vec<f64>,
    v: DMatrix<f64>,
}

impl ThinSvd {
    fn new(a: &DMatrix<f64>) -> Self {
        let (r, c) = a.shape();
        let k = r.min(c);
        let mut aug = DMatrix::zeros(r + c, r + c);
        aug.view_mut((0, r), (r, c)).copy_from(a);
        aug.view_mut((r, 0), (c, r)).copy_from(&a.transpose());
        let eig = SymmetricEigen::new(aug);
        let mut order: Vec<usize> = (0..r + c).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        let mut u = DMatrix::zeros(r, k);
        let mut v = DMatrix::zeros(c, k);
        let mut values = Vec::with_capacity(k);
        for (out, &idx) in order.iter().take(k).enumerate() {
            let w = eig.eigenvectors.column(idx);
            u.set_column(out, &(w.rows(0, r) * std::f64::consts::SQRT_2));
            v.set_column(out, &(w.rows(r, c) * std::f64::consts::SQRT_2));
            values.push(eig.eigenvalues[idx].max(0.0));
        }
        ThinSvd { u, values, v }
    }

    fn kept(&self, rel_tol: f64) -> Vec<usize> {
        let tol = threshold(&self.values, rel_tol);
        (0..self.values.len()).filter(|&k| self.values[k] > tol && self.values[k] > 0.0).collect()
    }
}

/// Singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    ThinSvd::new(a).values
}

/// Numerical rank with singular values below `rel_tol * sigma_max` treated as zero.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    ThinSvd::new(a).kept(rel_tol).len()
}

/// Smallest singular value of `a` (0 for an empty matrix).
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    // thin SVD: a tall matrix is rank-deficient only through its min(r, c) values
    singular_values(a).last().cloned().unwrap_or(0.0)
}

/// Orthonormal basis (as columns) of the row space of `a`.
fn row_space_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = a.ncols();
    if a.is_empty() {
        return DMatrix::zeros(cols, 0);
    }
    let svd = ThinSvd::new(a);
    let keep = svd.kept(rel_tol);
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (out, &k) in keep.iter().enumerate() {
        basis.set_column(out, &svd.v.column(k));
    }
    basis
}

/// Orthonormal basis (as columns) of Range(a).
pub fn range_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    row_space_basis(&a.transpose(), rel_tol)
}

/// Orthonormal basis (as columns) of Null(a).
///
/// Built from the spectral decomposition of the complementary projector
/// `I - R R'`, whose eigenvalues are cleanly separated into 0 and 1.
pub fn null_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = a.ncols();
    let row_space = row_space_basis(a, rel_tol);
    if row_space.ncols() == cols {
        return DMatrix::zeros(cols, 0);
    }
    let complement = DMatrix::identity(cols, cols) - &row_space * row_space.transpose();
    orthonormal_range_of_projector(&complement)
}

/// Orthonormal basis of the range of a symmetric projector.
pub fn orthonormal_range_of_projector(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(p.clone());
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > 0.5)
        .collect();
    let mut basis = DMatrix::zeros(p.nrows(), keep.len());
    for (out, &k) in keep.iter().enumerate() {
        basis.set_column(out, &eig.eigenvectors.column(k));
    }
    basis
}

/// Least-norm least-squares solution of `a x = b` via the pseudo-inverse.
pub fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if a.is_empty() {
        return DVector::zeros(a.ncols());
    }
    let svd = ThinSvd::new(a);
    let mut x = DVector::zeros(a.ncols());
    for k in svd.kept(rel_tol) {
        let coeff = svd.u.column(k).dot(b) / svd.values[k];
        x += svd.v.column(k) * coeff;
    }
    x
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrized(a)).eigenvalues.iter().cloned().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().cloned().unwrap_or(f64::INFINITY)
}

pub fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a general real square matrix, sorted by (real, imag).
pub fn complex_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let n = a.nrows();
    let scale = 1.0 + a.norm();
    // The deflation test is relative to neighbouring diagonal entries, so exact
    // zero diagonal blocks can stall it. Retries shift the spectrum and then
    // conjugate by a fixed Householder reflection to break the block structure.
    let shifts = [0.0, scale, -0.5 * scale];
    for attempt in 0..2 * shifts.len() {
        let shift = shifts[attempt % shifts.len()];
        let mut m = a + DMatrix::<f64>::identity(n, n) * shift;
        if attempt >= shifts.len() {
            let v = DVector::from_fn(n, |i, _| ((i + 1) as f64 * 0.7 + attempt as f64).sin() + 1.5);
            let q = DMatrix::<f64>::identity(n, n) - (&v * v.transpose()) * (2.0 / v.norm_squared());
            m = &q * m * &q;
        }
        // a healthy QR sweep needs a few iterations per eigenvalue
        if let Some(schur) = Schur::try_new(m, f64::EPSILON, 50 * n + 200) {
            let mut ev: Vec<Complex<f64>> = schur
                .complex_eigenvalues()
                .iter()
                .map(|z| Complex::new(z.re - shift, z.im))
                .collect();
            ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
            return Ok(ev);
        }
    }
    Err(Error::CertificationFailure("Schur decomposition did not converge".into()))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(complex_eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Dominant |eigenvalue| of a symmetric matrix by power iteration.
pub fn power_iteration_norm(a: &DMatrix<f64>, max_iter: usize, rel_tol: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - estimate).abs() <= rel_tol * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Kronecker product `a ⊗ I_n`.
pub fn kron_identity(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    a.kronecker(&DMatrix::<f64>::identity(n, n))
}
