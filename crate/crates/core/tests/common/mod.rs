#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scr_core::{IndexSet, Matrix, Objective, Result, Vector};

/// `f_i(x) = x'Ax/2 + b_i'x` with a shared symmetric `A`.
pub struct Quadratic {
    pub a: Matrix,
    pub b: Vec<Vector>,
}

impl Quadratic {
    pub fn random(n: usize, eigenvalues: &[f64], seed: u64) -> Self {
        let d = eigenvalues.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = symmetric_with_spectrum(eigenvalues, &mut rng);
        let b = (0..n).map(|_| gaussian_vector(d, &mut rng)).collect();
        Quadratic { a, b }
    }

    pub fn mean_b(&self, set: &IndexSet) -> Vector {
        let mut s = Vector::zeros(self.a.nrows());
        for i in set.iter() {
            s += &self.b[i];
        }
        s / set.len() as f64
    }

    /// Minimizer of the full objective.
    pub fn minimizer(&self) -> Vector {
        let b = self.mean_b(&IndexSet::full(self.b.len()));
        -self.a.clone().cholesky().expect("positive definite").solve(&b)
    }
}

impl Objective for Quadratic {
    fn num_samples(&self) -> usize {
        self.b.len()
    }

    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, x: &Vector, set: &IndexSet) -> Result<f64> {
        Ok(0.5 * x.dot(&(&self.a * x)) + self.mean_b(set).dot(x))
    }

    fn gradient(&self, x: &Vector, set: &IndexSet) -> Result<Vector> {
        Ok(&self.a * x + self.mean_b(set))
    }

    fn hvp(&self, _x: &Vector, _set: &IndexSet, v: &Vector) -> Result<Vector> {
        Ok(&self.a * v)
    }
}

pub fn gaussian_vector<R: Rng>(d: usize, rng: &mut R) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

pub fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> Matrix {
    let m = Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    m.qr().q()
}

pub fn symmetric_with_spectrum<R: Rng>(eigenvalues: &[f64], rng: &mut R) -> Matrix {
    let d = eigenvalues.len();
    let q = random_orthogonal(d, rng);
    let b = &q * Matrix::from_diagonal(&Vector::from_column_slice(eigenvalues)) * q.transpose();
    (&b + b.transpose()) * 0.5
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
