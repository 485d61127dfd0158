//! Regularized binary logistic regression as a finite sum.
//!
//! `f(x) = (1/|S|) sum_{i in S} log(1 + exp(-y_i a_i.x)) + r(x)` where the
//! regularizer `r` is never subsampled.

use std::sync::Arc;

use crate::cubic::SymmetricOperator;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{chunked_reduce, Exec, IndexSet};
use crate::{Matrix, Vector};

/// A finite-sum objective evaluated over index sets.
///
/// Implementations must be deterministic for a fixed index set.
pub trait Objective: Sync {
    fn num_samples(&self) -> usize;

    fn dim(&self) -> usize;

    fn value(&self, x: &Vector, set: &IndexSet) -> Result<f64>;

    fn gradient(&self, x: &Vector, set: &IndexSet) -> Result<Vector>;

    fn hvp(&self, x: &Vector, set: &IndexSet, v: &Vector) -> Result<Vector>;

    /// Hessian over `set` at `x` as a matrix-free operator.
    fn hessian_operator<'a>(&'a self, x: &Vector, set: &'a IndexSet) -> Result<Box<dyn SymmetricOperator + 'a>> {
        set.validate(self.num_samples())?;
        check_vector(x, self.dim(), "iterate")?;
        Ok(Box::new(HvpOperator { objective: self, x: x.clone(), set }))
    }

    /// Gradient of the single summand `f_i` (data term plus regularizer).
    fn sample_gradient(&self, x: &Vector, i: usize) -> Result<Vector> {
        self.gradient(x, &IndexSet::Subset(vec![i]))
    }

    /// Dense Hessian over `set`, assembled column by column.
    fn hessian(&self, x: &Vector, set: &IndexSet) -> Result<Matrix> {
        let d = self.dim();
        let op = self.hessian_operator(x, set)?;
        let mut h = Matrix::zeros(d, d);
        let mut e = Vector::zeros(d);
        for j in 0..d {
            e[j] = 1.0;
            h.set_column(j, &op.apply(&e));
            e[j] = 0.0;
        }
        Ok(h.symmetrize())
    }

    fn full_value(&self, x: &Vector) -> Result<f64> {
        self.value(x, &IndexSet::full(self.num_samples()))
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        self.gradient(x, &IndexSet::full(self.num_samples()))
    }
}

trait Symmetrize {
    fn symmetrize(self) -> Self;
}

impl Symmetrize for Matrix {
    fn symmetrize(self) -> Self {
        (&self + self.transpose()) * 0.5
    }
}

struct HvpOperator<'a, O: ?Sized> {
    objective: &'a O,
    x: Vector,
    set: &'a IndexSet,
}

impl<O: Objective + ?Sized> SymmetricOperator for HvpOperator<'_, O> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn apply(&self, v: &Vector) -> Vector {
        self.objective
            .hvp(&self.x, self.set, v)
            .expect("hvp on a validated operator")
    }
}

pub(crate) fn check_vector(x: &Vector, d: usize, what: &'static str) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// `lambda * ||x||^2`
    L2,
    /// `lambda * sum_j x_j^2 / (1 + x_j^2)`
    NonConvex,
}

/// Value, gradient and (diagonal) Hessian of a regularizer at one point.
#[derive(Clone, Debug)]
pub struct RegDerivatives {
    pub value: f64,
    pub gradient: Vector,
    pub hessian_diag: Vector,
}

impl RegDerivatives {
    /// Hessian-vector product of the regularizer.
    pub fn apply(&self, v: &Vector) -> Vector {
        self.hessian_diag.component_mul(v)
    }
}

impl Regularizer {
    /// Per-coordinate value, first and second derivative.
    #[inline]
    pub fn coordinate(self, lambda: f64, t: f64) -> (f64, f64, f64) {
        match self {
            Regularizer::L2 => (lambda * t * t, 2.0 * lambda * t, 2.0 * lambda),
            Regularizer::NonConvex => {
                let q = 1.0 + t * t;
                let value = if t.is_infinite() { lambda } else { lambda * t * t / q };
                (
                    value,
                    2.0 * lambda * t / (q * q),
                    2.0 * lambda * (1.0 - 3.0 * t * t) / (q * q * q),
                )
            }
        }
    }

    pub fn derivatives(self, lambda: f64, x: &Vector) -> RegDerivatives {
        let d = x.len();
        let mut value = 0.0;
        let mut gradient = Vector::zeros(d);
        let mut hessian_diag = Vector::zeros(d);
        for j in 0..d {
            let (v, g, h) = self.coordinate(lambda, x[j]);
            value += v;
            gradient[j] = g;
            hessian_diag[j] = h;
        }
        RegDerivatives { value, gradient, hessian_diag }
    }

    /// Upper bound on the spectral norm of the regularizer Hessian.
    pub fn hessian_norm_bound(self, lambda: f64) -> f64 {
        2.0 * lambda
    }
}

/// Value, gradient and Hessian operator of the non-convex penalty.
pub fn nonconvex_reg_derivatives(lambda: f64, x: &Vector) -> Result<RegDerivatives> {
    check_vector(x, x.len(), "iterate")?;
    Ok(Regularizer::NonConvex.derivatives(lambda, x))
}

/// `log(1 + exp(m))` without overflow.
#[inline]
pub fn log1p_exp(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + exp(-t))` without overflow.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Regularized logistic regression over a shared dataset.
#[derive(Clone, Debug)]
pub struct ObjectiveModel {
    data: Arc<Dataset>,
    regularizer: Regularizer,
    lambda: f64,
    exec: Exec,
}

impl ObjectiveModel {
    pub fn new(data: Arc<Dataset>, regularizer: Regularizer, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("regularization weight {lambda} must be >= 0")));
        }
        Ok(ObjectiveModel { data, regularizer, lambda, exec: Exec::default() })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    fn check(&self, x: &Vector, set: &IndexSet) -> Result<()> {
        set.validate(self.data.n())?;
        check_vector(x, self.data.d(), "iterate")
    }

    /// Sum of `per_sample(i)` over `set`, reduced with the fixed tree.
    fn sum_scalar(&self, set: &IndexSet, per_sample: impl Fn(usize) -> f64 + Sync) -> f64 {
        chunked_reduce(
            self.exec,
            set.len(),
            |r| r.map(|p| per_sample(set.get(p))).sum::<f64>(),
            |a, b| a + b,
        )
        .unwrap_or(0.0)
    }

    /// `sum_i coef(i) * a_i` over `set`, reduced with the fixed tree.
    fn sum_rows(&self, set: &IndexSet, coef: impl Fn(usize) -> f64 + Sync) -> Vector {
        let d = self.data.d();
        let data = &*self.data;
        chunked_reduce(
            self.exec,
            set.len(),
            |r| {
                let mut acc = vec![0.0; d];
                for p in r {
                    let i = set.get(p);
                    data.row_axpy(i, coef(i), &mut acc);
                }
                acc
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        )
        .map(Vector::from_vec)
        .unwrap_or_else(|| Vector::zeros(d))
    }

    /// Data term of a single sample: `log(1 + exp(-y a.x))`.
    pub fn sample_loss(&self, x: &Vector, i: usize) -> f64 {
        let y = self.data.label(i);
        log1p_exp(-y * self.data.row_dot(i, x.as_slice()))
    }

    /// Curvature weights `s_i (1 - s_i)` over `set`, in set order.
    fn curvature_weights(&self, x: &Vector, set: &IndexSet) -> Vec<f64> {
        crate::exec::map_indices(self.exec, set.len(), |p| {
            let s = sigmoid(self.data.row_dot(set.get(p), x.as_slice()));
            s * (1.0 - s)
        })
    }

    /// Data-term Hessian operator with curvature weights cached at `x`.
    pub fn sampled_hessian<'a>(&'a self, x: &Vector, set: &'a IndexSet) -> Result<SampledHessian<'a>> {
        self.check(x, set)?;
        Ok(SampledHessian {
            model: self,
            set,
            weights: self.curvature_weights(x, set),
            reg_diag: self.regularizer.derivatives(self.lambda, x).hessian_diag,
        })
    }
}

impl Objective for ObjectiveModel {
    fn num_samples(&self) -> usize {
        self.data.n()
    }

    fn dim(&self) -> usize {
        self.data.d()
    }

    fn value(&self, x: &Vector, set: &IndexSet) -> Result<f64> {
        self.check(x, set)?;
        let total = self.sum_scalar(set, |i| self.sample_loss(x, i));
        let reg = self.regularizer.derivatives(self.lambda, x).value;
        Ok(total / set.len() as f64 + reg)
    }

    fn gradient(&self, x: &Vector, set: &IndexSet) -> Result<Vector> {
        self.check(x, set)?;
        let data = &*self.data;
        let mut g = self.sum_rows(set, |i| {
            let y = data.label(i);
            -y * sigmoid(-y * data.row_dot(i, x.as_slice()))
        });
        g /= set.len() as f64;
        g += self.regularizer.derivatives(self.lambda, x).gradient;
        Ok(g)
    }

    fn hvp(&self, x: &Vector, set: &IndexSet, v: &Vector) -> Result<Vector> {
        check_vector(v, self.data.d(), "direction")?;
        let op = self.sampled_hessian(x, set)?;
        Ok(op.apply(v))
    }

    fn hessian_operator<'a>(&'a self, x: &Vector, set: &'a IndexSet) -> Result<Box<dyn SymmetricOperator + 'a>> {
        Ok(Box::new(self.sampled_hessian(x, set)?))
    }
}

/// Sub-sampled Hessian `(1/|S|) sum w_i a_i a_i^T + diag(r'')`, applied
/// without forming any `d x d` matrix.
pub struct SampledHessian<'a> {
    model: &'a ObjectiveModel,
    set: &'a IndexSet,
    weights: Vec<f64>,
    reg_diag: Vector,
}

impl SampledHessian<'_> {
    /// Number of samples touched by one application.
    pub fn sample_count(&self) -> usize {
        self.set.len()
    }
}

impl SymmetricOperator for SampledHessian<'_> {
    fn dim(&self) -> usize {
        self.model.data.d()
    }

    fn apply(&self, v: &Vector) -> Vector {
        let data = &*self.model.data;
        let set = self.set;
        let weights = &self.weights;
        let d = data.d();
        let mut out = chunked_reduce(
            self.model.exec,
            set.len(),
            |r| {
                let mut acc = vec![0.0; d];
                for p in r {
                    let i = set.get(p);
                    let c = weights[p] * data.row_dot(i, v.as_slice());
                    data.row_axpy(i, c, &mut acc);
                }
                acc
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        )
        .map(Vector::from_vec)
        .unwrap_or_else(|| Vector::zeros(d));
        out /= set.len() as f64;
        out += self.reg_diag.component_mul(v);
        out
    }
}
