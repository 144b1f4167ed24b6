use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

/// A smooth scalar function on R^n with analytic derivatives.
///
/// Implementations must be pure: repeated calls with the same input return
/// the same bits.
pub trait ScalarField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// `None` when no Hessian evaluator is available.
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    /// Stable description used in the problem identity hash.
    fn describe(&self) -> String;
}

/// Monomial `coefficient * Π x_k^{exponents[k]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

/// Multivariate polynomial with exact first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Term>,
}

impl Polynomial {
    /// Terms given as `(coefficient, exponents)`; every exponent vector must have length `dim`.
    pub fn new(dim: usize, terms: impl IntoIterator<Item = (f64, Vec<u32>)>) -> Option<Self> {
        let terms: Vec<Term> = terms
            .into_iter()
            .map(|(coefficient, exponents)| Term {
                coefficient,
                exponents,
            })
            .collect();
        if terms.iter().any(|t| t.exponents.len() != dim) {
            return None;
        }
        Some(Polynomial { dim, terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Polynomial {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coefficient: t.coefficient * factor,
                    exponents: t.exponents.clone(),
                })
                .collect(),
        }
    }

    fn monomial(x: &[f64], exponents: &[u32]) -> f64 {
        exponents
            .iter()
            .zip(x)
            .fold(1.0, |acc, (&e, &xi)| acc * xi.powi(e as i32))
    }
}

impl ScalarField for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coefficient * Self::monomial(x, &t.exponents))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        let mut e = vec![0; self.dim];
        for t in &self.terms {
            for k in 0..self.dim {
                let p = t.exponents[k];
                if p == 0 {
                    continue;
                }
                e.copy_from_slice(&t.exponents);
                e[k] -= 1;
                g[k] += t.coefficient * p as f64 * Self::monomial(x, &e);
            }
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.dim;
        let mut h = DMatrix::zeros(n, n);
        let mut e = vec![0; n];
        for t in &self.terms {
            for a in 0..n {
                for b in a..n {
                    e.copy_from_slice(&t.exponents);
                    let pa = e[a];
                    if pa == 0 {
                        continue;
                    }
                    e[a] -= 1;
                    let pb = e[b];
                    if pb == 0 {
                        continue;
                    }
                    e[b] -= 1;
                    let v = t.coefficient * pa as f64 * pb as f64 * Self::monomial(x, &e);
                    h[(a, b)] += v;
                    if a != b {
                        h[(b, a)] += v;
                    }
                }
            }
        }
        Some(h)
    }

    fn describe(&self) -> String {
        let terms: Vec<String> = self
            .terms
            .iter()
            .map(|t| {
                let exps: Vec<String> = t.exponents.iter().map(u32::to_string).collect();
                format!("{:016x}:{}", t.coefficient.to_bits(), exps.join(","))
            })
            .collect();
        format!("poly[{}]({})", self.dim, terms.join(";"))
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type HessFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Scalar field assembled from closures.
#[derive(Clone)]
pub struct FnField {
    label: String,
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
    hessian: Option<Arc<HessFn>>,
}

impl FnField {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        FnField {
            label: label.into(),
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: None,
        }
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Arc::new(hessian));
        self
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("has_hessian", &self.hessian.is_some())
            .finish()
    }
}

impl ScalarField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|h| h(x))
    }
    fn describe(&self) -> String {
        format!("fn[{}]({})", self.dim, self.label)
    }
}
