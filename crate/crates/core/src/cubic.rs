//! The cubic model `m(s) = f0 + g.s + s.Bs/2 + (sigma/3)|s|^3` and its
//! minimizers.
//!
//! [`solve_exact`] finds the global minimizer of a dense model from an
//! eigendecomposition of `B` and a safeguarded Newton iteration on the
//! secular equation. [`solve_lanczos`] minimizes the model over a growing
//! Krylov space using only operator applications, solving each projected
//! tridiagonal model exactly.

use log::warn;
use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// A symmetric linear operator on `R^d`.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &Vector) -> Vector;
}

impl SymmetricOperator for Matrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &Vector) -> Vector {
        self * v
    }
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &Vector) -> Vector {
        (**self).apply(v)
    }
}

impl<T: SymmetricOperator + ?Sized> SymmetricOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &Vector) -> Vector {
        (**self).apply(v)
    }
}

/// Cubic model at the current iterate.
#[derive(Clone, Debug)]
pub struct CubicModel<B> {
    pub f0: f64,
    pub g: Vector,
    pub b: B,
    pub sigma: f64,
}

impl<B: SymmetricOperator> CubicModel<B> {
    pub fn new(f0: f64, g: Vector, b: B, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if g.len() != b.dim() {
            return Err(Error::DimensionMismatch { expected: b.dim(), got: g.len() });
        }
        if !f0.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cubic model data"));
        }
        Ok(CubicModel { f0, g, b, sigma })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn value(&self, s: &Vector) -> f64 {
        let bs = self.b.apply(s);
        let n = s.norm();
        self.f0 + self.g.dot(s) + 0.5 * s.dot(&bs) + self.sigma / 3.0 * n * n * n
    }

    /// `g + Bs + sigma |s| s`
    pub fn gradient(&self, s: &Vector) -> Vector {
        let mut out = self.b.apply(s) + &self.g;
        out.axpy(self.sigma * s.norm(), s, 1.0);
        out
    }
}

pub fn model_value<B: SymmetricOperator>(model: &CubicModel<B>, s: &Vector) -> f64 {
    model.value(s)
}

pub fn model_gradient<B: SymmetricOperator>(model: &CubicModel<B>, s: &Vector) -> Vector {
    model.gradient(s)
}

/// Residuals of the approximate-minimizer conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct A1Check {
    /// `s.g + s.Bs + sigma |s|^3`, should vanish.
    pub residual: f64,
    /// `s.Bs + sigma |s|^3`, should be nonnegative.
    pub slack: f64,
    pub pass: bool,
}

impl A1Check {
    fn from_parts(sg: f64, sbs: f64, sigma: f64, snorm: f64, tol: f64) -> Self {
        let cubic = sigma * snorm * snorm * snorm;
        let residual = sg + sbs + cubic;
        let slack = sbs + cubic;
        A1Check { residual, slack, pass: residual.abs() <= tol && slack >= -tol }
    }
}

/// Checks the approximate-minimizer conditions at `s` with absolute tolerance `tol`.
pub fn check_a1<B: SymmetricOperator>(model: &CubicModel<B>, s: &Vector, tol: f64) -> A1Check {
    let bs = model.b.apply(s);
    A1Check::from_parts(model.g.dot(s), s.dot(&bs), model.sigma, s.norm(), tol)
}

/// Default absolute tolerance for [`check_a1`]: `1e-8 (1 + |f0| + |g||s|)`.
pub fn a1_tolerance(f0: f64, gnorm: f64, snorm: f64) -> f64 {
    1e-8 * (1.0 + f0.abs() + gnorm * snorm)
}

#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub s: Vector,
    /// Multiplier, equal to `sigma |s|` at a global minimizer.
    pub lambda: f64,
    /// `f0 - m(s)`
    pub model_decrease: f64,
    pub krylov_dim: usize,
    pub tc_satisfied: bool,
    /// Lanczos found an invariant subspace.
    pub breakdown: bool,
    pub hard_case: bool,
    pub a1: A1Check,
    /// `|grad m(s)|` as estimated by the solver.
    pub model_grad_norm: f64,
}

impl SubproblemSolution {
    /// `(residual, slack)` of the approximate-minimizer conditions.
    pub fn a1_residuals(&self) -> (f64, f64) {
        (self.a1.residual, self.a1.slack)
    }
}

/// Threshold on `|<g, v_1>| / |g|` below which the leftmost eigenspace is
/// treated as orthogonal to the gradient.
pub const HARD_CASE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub struct ExactOptions {
    pub max_iterations: usize,
    /// Relative tolerance on the secular root.
    pub root_tol: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions { max_iterations: 300, root_tol: 1e-10 }
    }
}

struct Secular {
    /// Minimizer in eigen coordinates.
    y: Vec<f64>,
    lambda: f64,
    hard_case: bool,
}

fn norm_sq(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

/// Global minimizer of `c.y + y.diag(mu)y/2 + (sigma/3)|y|^3` with `mu`
/// ascending. Solves `|y(lambda)| = lambda / sigma` on `(max(-mu_1, 0), inf)`
/// through `phi(lambda) = 1/|y(lambda)| - sigma/lambda`.
fn solve_secular(mu: &[f64], c: &[f64], sigma: f64, opts: &ExactOptions) -> Result<Secular> {
    let d = mu.len();
    let gnorm = norm_sq(c).sqrt();
    let mu1 = mu[0];
    let lo = (-mu1).max(0.0);

    if gnorm == 0.0 {
        let mut y = vec![0.0; d];
        if mu1 >= 0.0 {
            return Ok(Secular { y, lambda: 0.0, hard_case: false });
        }
        y[0] = lo / sigma;
        return Ok(Secular { y, lambda: lo, hard_case: true });
    }

    let scale = mu.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let left: Vec<usize> = (0..d).filter(|&j| mu[j] - mu1 <= 1e-12 * scale).collect();
    let left_weight = left.iter().map(|&j| c[j] * c[j]).sum::<f64>().sqrt();

    let y_at = |lambda: f64, skip_left: bool| -> Vec<f64> {
        (0..d)
            .map(|j| {
                if c[j] == 0.0 || (skip_left && left.contains(&j)) {
                    0.0
                } else {
                    -c[j] / (mu[j] + lambda)
                }
            })
            .collect()
    };

    // Leftmost eigenspace (numerically) orthogonal to g with negative curvature.
    if lo > 0.0 && left_weight <= HARD_CASE_TOL * gnorm {
        let y_rest = y_at(lo, true);
        let rest = norm_sq(&y_rest).sqrt();
        let target = lo / sigma;
        if rest <= target {
            let mut y = y_rest;
            let tau = (target * target - rest * rest).max(0.0).sqrt();
            let j0 = left[0];
            y[j0] = if c[j0] > 0.0 { -tau } else { tau };
            return Ok(Secular { y, lambda: lo, hard_case: true });
        }
    }

    let phi = |lambda: f64| -> (f64, f64) {
        let mut n2 = 0.0;
        let mut n3 = 0.0;
        for j in 0..d {
            if c[j] != 0.0 {
                let t = mu[j] + lambda;
                n2 += c[j] * c[j] / (t * t);
                n3 += c[j] * c[j] / (t * t * t);
            }
        }
        let norm = n2.sqrt();
        let value = 1.0 / norm - sigma / lambda;
        let deriv = n3 / (norm * n2) + sigma / (lambda * lambda);
        (value, deriv)
    };

    // At `hi`, |y(hi)| <= gnorm / (mu1 + hi) = hi / sigma, so phi(hi) >= 0.
    let mut hi = 0.5 * (-mu1 + (mu1 * mu1 + 4.0 * sigma * gnorm).sqrt());
    if !(hi > lo) {
        hi = lo + f64::EPSILON * (1.0 + lo);
    }
    let mut a = lo;
    let mut b = hi;
    let mut lambda = hi;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let (v, dv) = phi(lambda);
        if v == 0.0 {
            converged = true;
            break;
        }
        if v > 0.0 {
            b = lambda;
        } else {
            a = lambda;
        }
        let newton = lambda - v / dv;
        let next = if newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        let step = (next - lambda).abs();
        lambda = next;
        if step <= 4.0 * f64::EPSILON * lambda || b - a <= 4.0 * f64::EPSILON * b {
            converged = true;
            break;
        }
    }
    if !converged && b - a > opts.root_tol * b {
        return Err(Error::SolverFailure(format!(
            "secular iteration did not converge: bracket [{a:e}, {b:e}], sigma {sigma:e}, |g| {gnorm:e}"
        )));
    }

    let mut y = y_at(lambda, false);
    let norm = norm_sq(&y).sqrt();
    let mut hard_case = false;
    // Root squeezed against the pole: take the limiting solution along the
    // leftmost eigenspace, which restores |y| = lambda / sigma.
    if lo > 0.0 && (lambda - sigma * norm).abs() > 1e-10 * (1.0 + lambda) && lambda - lo <= 1e-8 * (1.0 + lo) {
        let mut y_rest = y_at(lo, true);
        let rest = norm_sq(&y_rest).sqrt();
        let target = lo / sigma;
        if rest <= target && left_weight > 0.0 {
            let tau = (target * target - rest * rest).sqrt();
            for &j in &left {
                y_rest[j] = -tau * c[j] / left_weight;
            }
            y = y_rest;
            lambda = lo;
            hard_case = true;
        }
    }
    Ok(Secular { y, lambda, hard_case })
}

fn sorted_eigen(m: Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

/// Smallest eigenvalue and its eigenvector of a symmetric matrix.
pub fn leftmost_eigenpair(m: &Matrix) -> (f64, Vector) {
    let (values, vectors) = sorted_eigen(m.clone());
    (values[0], vectors.column(0).into_owned())
}

/// Exact global minimizer of a cubic model with an explicit matrix.
pub fn solve_exact(model: &CubicModel<Matrix>, opts: &ExactOptions) -> Result<SubproblemSolution> {
    let b = &model.b;
    let scale = b.amax().max(1.0);
    let asym = (b - b.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let (mu, v) = sorted_eigen(b.clone());
    let c = v.tr_mul(&model.g);
    let sec = solve_secular(&mu, c.as_slice(), model.sigma, opts)?;
    let s = &v * Vector::from_vec(sec.y);
    let bs = b * &s;
    let snorm = s.norm();
    let sg = model.g.dot(&s);
    let sbs = s.dot(&bs);
    let gnorm = model.g.norm();
    let decrease = -(sg + 0.5 * sbs + model.sigma / 3.0 * snorm.powi(3));
    let mut grad = bs + &model.g;
    grad.axpy(model.sigma * snorm, &s, 1.0);
    Ok(SubproblemSolution {
        lambda: sec.lambda,
        model_decrease: decrease,
        krylov_dim: model.dim(),
        tc_satisfied: true,
        breakdown: false,
        hard_case: sec.hard_case,
        a1: A1Check::from_parts(sg, sbs, model.sigma, snorm, a1_tolerance(model.f0, gnorm, snorm)),
        model_grad_norm: grad.norm(),
        s,
    })
}

/// Orthogonalization against previous Lanczos vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reorthogonalization {
    None,
    /// Full Gram-Schmidt against every stored vector up to `full_until`
    /// dimensions; beyond that only when the overlap with the starting
    /// vector exceeds `sqrt(eps)`.
    Selective { full_until: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    /// `kappa_theta` in `(0, 1)` for the inner stopping rule.
    pub kappa_theta: f64,
    pub max_dim: usize,
    pub reorthogonalization: Reorthogonalization,
    pub exact: ExactOptions,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            kappa_theta: 0.1,
            max_dim: usize::MAX,
            reorthogonalization: Reorthogonalization::Selective { full_until: 200 },
            exact: ExactOptions::default(),
        }
    }
}

/// Incremental Lanczos tridiagonalization of a symmetric operator.
pub struct Lanczos<'a, B: ?Sized> {
    op: &'a B,
    basis: Vec<Vector>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    reorth: Reorthogonalization,
    residual: Option<Vector>,
}

impl<'a, B: SymmetricOperator + ?Sized> Lanczos<'a, B> {
    /// Starts from `start`, which must be nonzero.
    pub fn new(op: &'a B, start: &Vector, reorth: Reorthogonalization) -> Self {
        let q0 = start / start.norm();
        Lanczos { op, basis: vec![q0], alpha: Vec::new(), beta: Vec::new(), reorth, residual: None }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Adds one basis vector to the projection; returns the new off-diagonal
    /// norm `beta` (zero at an invariant subspace).
    pub fn step(&mut self) -> f64 {
        let i = self.alpha.len();
        if let Some(r) = self.residual.take() {
            let b = *self.beta.last().expect("residual implies beta");
            self.basis.push(r / b);
        }
        let q = &self.basis[i];
        let mut w = self.op.apply(q);
        let a = q.dot(&w);
        w.axpy(-a, q, 1.0);
        if i > 0 {
            w.axpy(-self.beta[i - 1], &self.basis[i - 1], 1.0);
        }
        let full = match self.reorth {
            Reorthogonalization::None => false,
            Reorthogonalization::Selective { full_until } => {
                i < full_until || self.basis[0].dot(&w).abs() > f64::EPSILON.sqrt() * w.norm()
            }
        };
        if full {
            for _ in 0..2 {
                for qj in &self.basis {
                    let h = qj.dot(&w);
                    w.axpy(-h, qj, 1.0);
                }
            }
        }
        let b = w.norm();
        self.alpha.push(a);
        self.beta.push(b);
        self.residual = Some(w);
        b
    }

    /// The tridiagonal projection `T = Q^T B Q` built so far.
    pub fn tridiagonal(&self) -> Matrix {
        let k = self.alpha.len();
        let mut t = Matrix::zeros(k, k);
        for j in 0..k {
            t[(j, j)] = self.alpha[j];
            if j + 1 < k {
                t[(j, j + 1)] = self.beta[j];
                t[(j + 1, j)] = self.beta[j];
            }
        }
        t
    }

    /// `Q y` for coefficients `y` in the current basis.
    pub fn combine(&self, y: &[f64]) -> Vector {
        let mut s = Vector::zeros(self.op.dim());
        for (qj, &yj) in self.basis.iter().zip(y) {
            s.axpy(yj, qj, 1.0);
        }
        s
    }

    fn scale(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.beta)
            .fold(0.0f64, |m, (a, b)| m.max(a.abs() + b.abs()))
    }
}

/// Minimizes the cubic model over nested Krylov spaces `span{g, Bg, ...}`
/// until `|grad m(s_i)| <= kappa_theta min(1, |s_i|) |g|` or the dimension
/// limit.
pub fn solve_lanczos<B: SymmetricOperator + ?Sized>(
    model: &CubicModel<&B>,
    opts: &LanczosOptions,
) -> Result<SubproblemSolution> {
    if !(opts.kappa_theta > 0.0 && opts.kappa_theta < 1.0) {
        return Err(Error::InvalidArgument(format!("kappa_theta {} not in (0, 1)", opts.kappa_theta)));
    }
    let d = model.dim();
    let gnorm = model.g.norm();
    let sigma = model.sigma;
    if gnorm == 0.0 {
        return Ok(SubproblemSolution {
            s: Vector::zeros(d),
            lambda: 0.0,
            model_decrease: 0.0,
            krylov_dim: 0,
            tc_satisfied: true,
            breakdown: false,
            hard_case: false,
            a1: A1Check { residual: 0.0, slack: 0.0, pass: true },
            model_grad_norm: 0.0,
        });
    }
    let max_dim = opts.max_dim.min(d).max(1);
    let mut lanczos = Lanczos::new(model.b, &model.g, opts.reorthogonalization);
    loop {
        let beta = lanczos.step();
        let k = lanczos.dim();
        let t = lanczos.tridiagonal();
        let (mu, v) = sorted_eigen(t.clone());
        let c: Vec<f64> = (0..k).map(|j| gnorm * v[(0, j)]).collect();
        let sec = solve_secular(&mu, &c, sigma, &opts.exact)?;
        let y = &v * Vector::from_vec(sec.y);
        let ynorm = y.norm();
        let grad_norm = (beta * y[k - 1]).abs();
        let theta = opts.kappa_theta * ynorm.min(1.0);
        let tc = grad_norm <= theta * gnorm;
        let breakdown = beta <= 1e-14 * lanczos.scale().max(1.0);
        if tc || breakdown || k >= max_dim {
            if !tc && !breakdown {
                warn!("Lanczos reached dimension {k} without meeting the termination criterion");
            }
            let ty = &t * &y;
            let sbs = y.dot(&ty);
            let sg = gnorm * y[0];
            let decrease = -(sg + 0.5 * sbs + sigma / 3.0 * ynorm.powi(3));
            return Ok(SubproblemSolution {
                s: lanczos.combine(y.as_slice()),
                lambda: sec.lambda,
                model_decrease: decrease,
                krylov_dim: k,
                tc_satisfied: tc || breakdown,
                breakdown,
                hard_case: sec.hard_case,
                a1: A1Check::from_parts(sg, sbs, sigma, ynorm, a1_tolerance(model.f0, gnorm, ynorm)),
                model_grad_norm: grad_norm,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: f64, b: f64, sigma: f64) -> CubicModel<Matrix> {
        CubicModel::new(0.0, Vector::from_element(1, g), Matrix::from_element(1, 1, b), sigma).unwrap()
    }

    #[test]
    fn value_and_gradient_at_zero() {
        let m = scalar(1.0, 0.0, 1.0);
        assert_eq!(m.value(&Vector::zeros(1)), 0.0);
        assert_eq!(m.gradient(&Vector::zeros(1)), Vector::from_element(1, 1.0));
        let v = m.value(&Vector::from_element(1, -1.0));
        assert!((v + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_positive_definite_gives_zero_step() {
        let b = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let m = CubicModel::new(3.0, Vector::zeros(2), b, 1.0).unwrap();
        let sol = solve_exact(&m, &ExactOptions::default()).unwrap();
        assert_eq!(sol.s, Vector::zeros(2));
        assert_eq!(sol.lambda, 0.0);
    }

    #[test]
    fn zero_gradient_indefinite_follows_negative_curvature() {
        let b = Matrix::from_diagonal(&Vector::from_vec(vec![-2.0, 1.0]));
        let m = CubicModel::new(0.0, Vector::zeros(2), b, 4.0).unwrap();
        let sol = solve_exact(&m, &ExactOptions::default()).unwrap();
        assert!(sol.hard_case);
        assert!((sol.s.norm() - 0.5).abs() < 1e-15);
        assert!(sol.model_decrease > 0.0);
    }

    #[test]
    fn scalar_closed_form() {
        let sol = solve_exact(&scalar(1.0, 0.0, 1.0), &ExactOptions::default()).unwrap();
        assert!((sol.s[0] + 1.0).abs() < 1e-12);
        assert!((sol.lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let b = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let m = CubicModel::new(0.0, Vector::from_vec(vec![1.0, 0.0]), b, 1.0).unwrap();
        assert!(matches!(solve_exact(&m, &ExactOptions::default()), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn nonpositive_sigma_is_rejected() {
        let r = CubicModel::new(0.0, Vector::zeros(1), Matrix::zeros(1, 1), 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn multiple_of_identity_is_one_dimensional() {
        let b = Matrix::identity(5, 5) * 3.0;
        let g = Vector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 4.0]);
        let dense = CubicModel::new(0.0, g.clone(), b.clone(), 0.7).unwrap();
        let exact = solve_exact(&dense, &ExactOptions::default()).unwrap();
        let op = CubicModel::new(0.0, g, &b, 0.7).unwrap();
        let lz = solve_lanczos(&op, &LanczosOptions::default()).unwrap();
        assert_eq!(lz.krylov_dim, 1);
        assert!((lz.s - exact.s).norm() < 1e-12);
    }

    #[test]
    fn lanczos_zero_gradient_returns_zero() {
        let b = Matrix::identity(3, 3);
        let m = CubicModel::new(1.0, Vector::zeros(3), &b, 1.0).unwrap();
        let sol = solve_lanczos(&m, &LanczosOptions::default()).unwrap();
        assert_eq!(sol.s, Vector::zeros(3));
        assert_eq!(sol.krylov_dim, 0);
    }

    #[test]
    fn a1_fails_for_generic_points() {
        let b = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -0.5, 2.0]));
        let m = CubicModel::new(0.0, Vector::from_vec(vec![1.0, 1.0, 1.0]), b, 1.0).unwrap();
        let zero = check_a1(&m, &Vector::zeros(3), 1e-12);
        assert!(zero.pass && zero.residual == 0.0 && zero.slack == 0.0);
        let generic = check_a1(&m, &Vector::from_vec(vec![0.3, -0.7, 0.2]), 1e-8);
        assert!(!generic.pass);
    }
}
