//! Sample-size rules for the sub-sampled gradient and Hessian, index-set
//! draws, deterministic schedules, and Monte-Carlo checks of the Bernstein
//! deviation bounds behind the size rules.

use nalgebra::SymmetricEigen;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{map_indices, Exec, IndexSet};
use crate::losses::Objective;
use crate::{Matrix, Vector};

/// Which form of the size rules to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeFormula {
    /// `log(2d/delta)` with constants 32 (gradient) and 16 (Hessian).
    Theoretical,
    /// `log(d)` with constants 32 and 36, i.e. probability `1 - O(1/d)`.
    Practical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingParams {
    /// Gradient agreement constant.
    pub m: f64,
    /// Hessian agreement constant.
    pub c: f64,
    /// Lipschitz constant of the summands. `1.0` folds it into `m`.
    pub kappa_f: f64,
    /// Lipschitz constant of the summand gradients. `1.0` folds it into `c`.
    pub kappa_g: f64,
    /// Failure probability for the theoretical rules; `None` means `1/d`.
    pub delta: Option<f64>,
    /// Fraction of `n` used at the first iteration and as the lower clamp.
    pub floor_fraction: f64,
    pub formula: SizeFormula,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            m: 1.0,
            c: 1.0,
            kappa_f: 1.0,
            kappa_g: 1.0,
            delta: Some(0.1),
            floor_fraction: 0.05,
            formula: SizeFormula::Practical,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.m, "M")?;
        positive(self.c, "C")?;
        positive(self.kappa_f, "kappa_f")?;
        positive(self.kappa_g, "kappa_g")?;
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidArgument(format!("delta {delta} not in (0, 1)")));
            }
        }
        if !(self.floor_fraction > 0.0 && self.floor_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "floor fraction {} not in (0, 1]",
                self.floor_fraction
            )));
        }
        Ok(())
    }

    /// Smallest size ever returned: `ceil(floor_fraction * n)`, at least 1.
    pub fn floor_size(&self, n: usize) -> usize {
        ((self.floor_fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
    }

    fn log_term(&self, d: usize) -> f64 {
        let d = d as f64;
        match self.formula {
            SizeFormula::Practical => d.ln(),
            SizeFormula::Theoretical => {
                let delta = self.delta.unwrap_or(1.0 / d);
                (2.0 * d / delta).ln()
            }
        }
    }

    fn clamp(&self, raw: f64, n: usize) -> usize {
        let floor = self.floor_size(n);
        if !(raw < n as f64) {
            n
        } else {
            (raw.ceil().max(0.0) as usize).clamp(floor, n)
        }
    }
}

fn check_step(step_norm: f64) -> Result<()> {
    if step_norm > 0.0 && !step_norm.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step norm estimate must be positive, got {step_norm}")))
    }
}

/// Unclamped gradient sample size for step-norm estimate `s`.
pub fn raw_gradient_size(params: &SamplingParams, s: f64, d: usize) -> f64 {
    32.0 * params.kappa_f.powi(2) * (params.log_term(d) + 0.25) / (params.m.powi(2) * s.powi(4))
}

/// Unclamped Hessian sample size for step-norm estimate `s`.
pub fn raw_hessian_size(params: &SamplingParams, s: f64, d: usize) -> f64 {
    let constant = match params.formula {
        SizeFormula::Theoretical => 16.0,
        SizeFormula::Practical => 36.0,
    };
    constant * params.kappa_g.powi(2) * params.log_term(d) / (params.c * s).powi(2)
}

pub fn gradient_sample_size(params: &SamplingParams, step_norm: f64, d: usize, n: usize) -> Result<usize> {
    check_step(step_norm)?;
    Ok(params.clamp(raw_gradient_size(params, step_norm, d), n))
}

pub fn hessian_sample_size(params: &SamplingParams, step_norm: f64, d: usize, n: usize) -> Result<usize> {
    check_step(step_norm)?;
    Ok(params.clamp(raw_hessian_size(params, step_norm, d), n))
}

/// Gradient and Hessian sample sizes of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleSizes {
    pub gradient: usize,
    pub hessian: usize,
}

impl SampleSizes {
    pub fn uniform(size: usize) -> Self {
        SampleSizes { gradient: size, hessian: size }
    }

    /// Componentwise maximum.
    pub fn max(self, other: SampleSizes) -> Self {
        SampleSizes {
            gradient: self.gradient.max(other.gradient),
            hessian: self.hessian.max(other.hessian),
        }
    }
}

/// Uniform subset of `0..n` of the given size, drawn without replacement and
/// returned in ascending order.
pub fn draw_index_set<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Result<IndexSet> {
    if size == 0 || size > n {
        return Err(Error::InvalidArgument(format!("sample size {size} not in [1, {n}]")));
    }
    let mut picked = index::sample(rng, n, size).into_vec();
    picked.sort_unstable();
    Ok(IndexSet::Subset(picked))
}

/// Size growing linearly from `floor` at `k = 0` to `n` at `k = total`.
pub fn schedule_linear(k: usize, total: usize, n: usize, floor: usize) -> SampleSizes {
    let floor = floor.clamp(1, n);
    if total == 0 || k >= total {
        return SampleSizes::uniform(n);
    }
    let size = floor as f64 + (n - floor) as f64 * k as f64 / total as f64;
    SampleSizes::uniform((size.round() as usize).clamp(floor, n))
}

/// Size `floor * r^k` with `r = (n / floor)^(1 / total)`, so it reaches `n`
/// at `k = total`.
pub fn schedule_exponential(k: usize, total: usize, n: usize, floor: usize) -> SampleSizes {
    let floor = floor.clamp(1, n);
    if total == 0 || k >= total {
        return SampleSizes::uniform(n);
    }
    let ratio = (n as f64 / floor as f64).powf(1.0 / total as f64);
    let size = floor as f64 * ratio.powi(k as i32);
    SampleSizes::uniform((size.round() as usize).clamp(floor, n))
}

/// `4 sqrt(2) kappa_f sqrt((log(2d/delta) + 1/4) / size)`
pub fn gradient_deviation_bound(kappa_f: f64, delta: f64, d: usize, size: usize) -> f64 {
    4.0 * 2f64.sqrt() * kappa_f * (((2.0 * d as f64 / delta).ln() + 0.25) / size as f64).sqrt()
}

/// `4 kappa_g sqrt(log(2d/delta) / size)`
pub fn hessian_deviation_bound(kappa_g: f64, delta: f64, d: usize, size: usize) -> f64 {
    4.0 * kappa_g * ((2.0 * d as f64 / delta).ln() / size as f64).sqrt()
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

/// `max_i |grad f_i(x)|` over `set`.
pub fn estimate_kappa_f<O: Objective + ?Sized>(model: &O, x: &Vector, set: &IndexSet, exec: Exec) -> Result<f64> {
    let norms = map_indices(exec, set.len(), |p| model.sample_gradient(x, set.get(p)).map(|g| g.norm()));
    norms.into_iter().try_fold(0.0f64, |m, r| r.map(|v| m.max(v)))
}

/// `max_i |hess f_i(x)|` (spectral) over `set`.
pub fn estimate_kappa_g<O: Objective + ?Sized>(model: &O, x: &Vector, set: &IndexSet, exec: Exec) -> Result<f64> {
    let norms = map_indices(exec, set.len(), |p| {
        model
            .hessian(x, &IndexSet::Subset(vec![set.get(p)]))
            .map(|h| spectral_norm(&h))
    });
    norms.into_iter().try_fold(0.0f64, |m, r| r.map(|v| m.max(v)))
}

/// Outcome of a Monte-Carlo deviation experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct BernsteinReport {
    pub sample_size: usize,
    pub trials: usize,
    pub kappa: f64,
    pub bound: f64,
    pub violations: usize,
    pub violation_rate: f64,
    pub max_deviation: f64,
    pub mean_deviation: f64,
}

impl BernsteinReport {
    fn from_deviations(sample_size: usize, kappa: f64, bound: f64, deviations: &[f64]) -> Self {
        let trials = deviations.len();
        let violations = deviations.iter().filter(|&&v| v > bound).count();
        BernsteinReport {
            sample_size,
            trials,
            kappa,
            bound,
            violations,
            violation_rate: violations as f64 / trials.max(1) as f64,
            max_deviation: deviations.iter().copied().fold(0.0, f64::max),
            mean_deviation: deviations.iter().sum::<f64>() / trials.max(1) as f64,
        }
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn check_trials(n: usize, size: usize, delta: f64, trials: usize) -> Result<()> {
    if size == 0 || size > n {
        return Err(Error::InvalidArgument(format!("sample size {size} not in [1, {n}]")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} not in (0, 1)")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    Ok(())
}

/// Fraction of `trials` sub-sampled gradients whose distance to the full
/// gradient exceeds [`gradient_deviation_bound`], with `kappa_f` estimated
/// over all samples.
pub fn verify_gradient_bernstein<O: Objective + ?Sized>(
    model: &O,
    x: &Vector,
    size: usize,
    delta: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<BernsteinReport> {
    let n = model.num_samples();
    check_trials(n, size, delta, trials)?;
    let full = IndexSet::full(n);
    let kappa = estimate_kappa_f(model, x, &full, exec)?;
    let bound = gradient_deviation_bound(kappa, delta, model.dim(), size);
    let reference = model.full_gradient(x)?;
    let deviations = map_indices(exec, trials, |t| -> Result<f64> {
        let set = draw_index_set(n, size, &mut trial_rng(seed, t))?;
        Ok((model.gradient(x, &set)? - &reference).norm())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BernsteinReport::from_deviations(size, kappa, bound, &deviations))
}

/// Fraction of `trials` sub-sampled Hessians whose spectral distance to the
/// full Hessian exceeds [`hessian_deviation_bound`], with `kappa_g`
/// estimated over all samples. Needs dense `d x d` Hessians.
pub fn verify_hessian_bernstein<O: Objective + ?Sized>(
    model: &O,
    x: &Vector,
    size: usize,
    delta: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<BernsteinReport> {
    let n = model.num_samples();
    check_trials(n, size, delta, trials)?;
    let full = IndexSet::full(n);
    let kappa = estimate_kappa_g(model, x, &full, exec)?;
    let bound = hessian_deviation_bound(kappa, delta, model.dim(), size);
    let reference = model.hessian(x, &full)?;
    let deviations = map_indices(exec, trials, |t| -> Result<f64> {
        let set = draw_index_set(n, size, &mut trial_rng(seed, t))?;
        Ok(spectral_norm(&(model.hessian(x, &set)? - &reference)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BernsteinReport::from_deviations(size, kappa, bound, &deviations))
}
