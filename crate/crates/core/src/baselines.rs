//! Reference optimizers: minibatch SGD, SAGA, Newton with backtracking line
//! search and L-BFGS. They share the [`Objective`] interface and write the
//! same trace rows as SCR, with `NaN` in the cubic-model columns.

use std::collections::VecDeque;
use std::time::Instant;

use log::warn;
use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::IndexSet;
use crate::losses::{check_vector, Objective};
use crate::sampling::draw_index_set;
use crate::scr::{RunResult, Termination};
use crate::trace::{StepClass, Trace, TraceRecord};
use crate::{Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Sgd,
    Saga,
    NewtonLs,
    Lbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LineSearch {
    /// Armijo backtracking from a unit step.
    Backtracking { c1: f64, shrink: f64, max_steps: usize },
    /// Exact minimizing step for quadratic objectives, from one
    /// Hessian-vector product.
    ExactQuadratic,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::Backtracking { c1: 1e-4, shrink: 0.5, max_steps: 60 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub method: Method,
    /// Constant step for SGD and SAGA.
    pub step_size: f64,
    /// SGD minibatch size as a fraction of `n`.
    pub minibatch_fraction: f64,
    /// L-BFGS memory.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once recorded epochs reach this.
    pub max_epochs: f64,
    pub grad_tol: f64,
    pub seed: u64,
    pub line_search: LineSearch,
    /// SGD and SAGA write one row per this many iterations.
    pub record_every: usize,
    /// Largest SAGA gradient table, in `f64` entries.
    pub memory_budget: usize,
    pub divergence_limit: f64,
    pub record_wall_time: bool,
}

impl BaselineConfig {
    pub fn new(method: Method) -> Self {
        BaselineConfig {
            method,
            step_size: 1.0,
            minibatch_fraction: 0.1,
            memory: 20,
            max_iterations: 1000,
            max_epochs: f64::INFINITY,
            grad_tol: 1e-8,
            seed: 0,
            line_search: LineSearch::default(),
            record_every: 1,
            memory_budget: 1 << 28,
            divergence_limit: 1e10,
            record_wall_time: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size {} must be >= 0", self.step_size));
        }
        if !(self.minibatch_fraction > 0.0 && self.minibatch_fraction <= 1.0) {
            return bad(format!("minibatch fraction {} not in (0, 1]", self.minibatch_fraction));
        }
        if self.memory == 0 || self.record_every == 0 {
            return bad("memory and record_every must be >= 1".into());
        }
        Ok(())
    }
}

/// Runs the configured method.
pub fn run_baseline<O: Objective + ?Sized>(model: &O, config: &BaselineConfig, x0: Vector) -> Result<RunResult> {
    match config.method {
        Method::Sgd => sgd_run(model, config, x0),
        Method::Saga => saga_run(model, config, x0),
        Method::NewtonLs => newton_ls_run(model, config, x0),
        Method::Lbfgs => lbfgs_run(model, config, x0),
    }
}

struct Recorder<'a, O: ?Sized> {
    model: &'a O,
    config: &'a BaselineConfig,
    started: Instant,
    trace: Trace,
    epochs: f64,
}

/// Iterate at the start of an iteration and the cost spent to reach it.
#[derive(Clone, Copy)]
struct Snapshot {
    iteration: usize,
    f: f64,
    grad_norm: f64,
    epochs: f64,
    wall: f64,
}

impl<'a, O: Objective + ?Sized> Recorder<'a, O> {
    fn new(model: &'a O, config: &'a BaselineConfig) -> Self {
        Recorder { model, config, started: Instant::now(), trace: Trace::default(), epochs: 0.0 }
    }

    fn snapshot(&self, iteration: usize, x: &Vector) -> Result<Snapshot> {
        Ok(Snapshot {
            iteration,
            f: self.model.full_value(x)?,
            grad_norm: self.model.full_gradient(x)?.norm(),
            epochs: self.epochs,
            wall: self.wall(),
        })
    }

    /// Snapshot of an unchanged iterate after more work was spent on it.
    fn advance(&self, at: &Snapshot) -> Snapshot {
        Snapshot { iteration: at.iteration + 1, epochs: self.epochs, wall: self.wall(), ..*at }
    }

    fn wall(&self) -> f64 {
        if self.config.record_wall_time {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn step(&mut self, at: &Snapshot, success: StepClass, sample_g: usize, sample_b: usize, step_norm: f64) {
        self.trace.push(TraceRecord {
            iteration: at.iteration,
            wall_seconds: at.wall,
            epochs: at.epochs,
            f: at.f,
            grad_norm: at.grad_norm,
            rho: f64::NAN,
            success,
            sigma: f64::NAN,
            sample_g,
            sample_b,
            step_norm,
            krylov_dim: 0,
        });
    }

    /// Terminal row; returns the termination reason if the run should stop.
    fn should_stop(&mut self, at: &Snapshot) -> Option<Termination> {
        let reason = if at.grad_norm <= self.config.grad_tol {
            Some(Termination::Converged)
        } else if !at.f.is_finite() || at.f > self.config.divergence_limit {
            Some(Termination::Failed(Error::Divergence { iteration: at.iteration, value: at.f }))
        } else if at.iteration >= self.config.max_iterations || self.epochs >= self.config.max_epochs {
            Some(Termination::MaxIterations)
        } else {
            None
        };
        if reason.is_some() {
            self.step(at, StepClass::Terminal, 0, 0, 0.0);
        }
        reason
    }

    fn finish(self, x: Vector, termination: Termination) -> RunResult {
        RunResult { x, trace: self.trace, termination }
    }
}

fn start<O: Objective + ?Sized>(model: &O, config: &BaselineConfig, x0: &Vector) -> Result<()> {
    config.validate()?;
    check_vector(x0, model.dim(), "starting point")
}

/// Minibatch SGD with a constant step: `x <- x - alpha g_S`.
pub fn sgd_run<O: Objective + ?Sized>(model: &O, config: &BaselineConfig, x0: Vector) -> Result<RunResult> {
    start(model, config, &x0)?;
    let n = model.num_samples();
    let batch = ((config.minibatch_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(model, config);
    let mut x = x0;
    let mut k = 0;
    loop {
        let snap = rec.snapshot(k, &x)?;
        if let Some(t) = rec.should_stop(&snap) {
            return Ok(rec.finish(x, t));
        }
        let block_start = x.clone();
        let block = config.record_every.min(config.max_iterations - k);
        for _ in 0..block {
            let set = if batch == n { IndexSet::full(n) } else { draw_index_set(n, batch, &mut rng)? };
            let g = model.gradient(&x, &set)?;
            x.axpy(-config.step_size, &g, 1.0);
            rec.epochs += batch as f64 / n as f64;
        }
        k += block;
        rec.step(&snap, StepClass::Successful, batch, 0, (&x - &block_start).norm());
        if x.iter().any(|v| !v.is_finite()) {
            let err = Error::Divergence { iteration: k, value: f64::NAN };
            return Ok(rec.finish(block_start, Termination::Failed(err)));
        }
    }
}

/// Stored per-sample gradients and their running mean.
#[derive(Clone, Debug)]
pub struct SagaTable {
    grads: Vec<Vector>,
    average: Vector,
}

impl SagaTable {
    pub fn new<O: Objective + ?Sized>(model: &O, x: &Vector) -> Result<Self> {
        let n = model.num_samples();
        let grads = (0..n).map(|i| model.sample_gradient(x, i)).collect::<Result<Vec<_>>>()?;
        let mut table = SagaTable { grads, average: Vector::zeros(x.len()) };
        table.average = table.recomputed_mean();
        Ok(table)
    }

    pub fn average(&self) -> &Vector {
        &self.average
    }

    pub fn recomputed_mean(&self) -> Vector {
        let mut mean = Vector::zeros(self.average.len());
        for g in &self.grads {
            mean += g;
        }
        mean / self.grads.len() as f64
    }

    /// Replaces entry `j`; returns the SAGA direction `g - old_j + mean`.
    pub fn update(&mut self, j: usize, g: Vector) -> Vector {
        let n = self.grads.len() as f64;
        let diff = &g - &self.grads[j];
        let direction = &diff + &self.average;
        self.average.axpy(1.0 / n, &diff, 1.0);
        self.grads[j] = g;
        direction
    }
}

/// SAGA with one sample per iteration and a constant step.
pub fn saga_run<O: Objective + ?Sized>(model: &O, config: &BaselineConfig, x0: Vector) -> Result<RunResult> {
    start(model, config, &x0)?;
    let n = model.num_samples();
    let needed = n.saturating_mul(model.dim());
    if needed > config.memory_budget {
        return Err(Error::MemoryBudget { needed, budget: config.memory_budget });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(model, config);
    let mut table = SagaTable::new(model, &x0)?;
    rec.epochs += 1.0;
    let mut x = x0;
    let mut k = 0;
    loop {
        let snap = rec.snapshot(k, &x)?;
        if let Some(t) = rec.should_stop(&snap) {
            return Ok(rec.finish(x, t));
        }
        let block_start = x.clone();
        let block = config.record_every.min(config.max_iterations - k);
        for inner in 0..block {
            let j = rng.random_range(0..n);
            let g = model.sample_gradient(&x, j)?;
            let direction = table.update(j, g);
            x.axpy(-config.step_size, &direction, 1.0);
            rec.epochs += 1.0 / n as f64;
            if cfg!(debug_assertions) && (k + inner) % 100 == 0 {
                let drift = (table.recomputed_mean() - table.average()).amax();
                debug_assert!(drift <= 1e-10 * (1.0 + table.average().amax()), "SAGA mean drift {drift:e}");
            }
        }
        k += block;
        rec.step(&snap, StepClass::Successful, 1, 0, (&x - &block_start).norm());
        if x.iter().any(|v| !v.is_finite()) {
            let err = Error::Divergence { iteration: k, value: f64::NAN };
            return Ok(rec.finish(block_start, Termination::Failed(err)));
        }
    }
}

/// Outcome of a line search along `p`.
struct LineStep {
    t: f64,
    f_new: f64,
    /// Full Hessian-vector products spent.
    hvps: usize,
}

fn line_search<O: Objective + ?Sized>(
    model: &O,
    ls: LineSearch,
    x: &Vector,
    f: f64,
    g: &Vector,
    p: &Vector,
) -> Result<Option<LineStep>> {
    let slope = g.dot(p);
    match ls {
        LineSearch::Backtracking { c1, shrink, max_steps } => {
            let mut t = 1.0;
            for _ in 0..max_steps {
                let f_new = model.full_value(&(x + p * t))?;
                if f_new <= f + c1 * t * slope {
                    return Ok(Some(LineStep { t, f_new, hvps: 0 }));
                }
                t *= shrink;
            }
            Ok(None)
        }
        LineSearch::ExactQuadratic => {
            let n = model.num_samples();
            let curvature = p.dot(&model.hvp(x, &IndexSet::full(n), p)?);
            if !(curvature > 0.0) {
                return Ok(None);
            }
            let t = -slope / curvature;
            let f_new = model.full_value(&(x + p * t))?;
            Ok(Some(LineStep { t, f_new, hvps: 1 }))
        }
    }
}

/// Newton's method on the full Hessian with a line search. Stops with
/// [`Error::SingularHessian`] when the Hessian has no Cholesky factor.
pub fn newton_ls_run<O: Objective + ?Sized>(model: &O, config: &BaselineConfig, x0: Vector) -> Result<RunResult> {
    start(model, config, &x0)?;
    let n = model.num_samples();
    let d = model.dim();
    let full = IndexSet::full(n);
    let mut rec = Recorder::new(model, config);
    let mut x = x0;
    let mut k = 0;
    loop {
        let snap = rec.snapshot(k, &x)?;
        if let Some(t) = rec.should_stop(&snap) {
            return Ok(rec.finish(x, t));
        }
        let g = model.full_gradient(&x)?;
        let h: Matrix = model.hessian(&x, &full)?;
        rec.epochs += 1.0 + d as f64;
        let Some(chol) = Cholesky::new(h) else {
            rec.step(&snap, StepClass::Unsuccessful, n, n, 0.0);
            rec.step(&rec.advance(&snap), StepClass::Terminal, 0, 0, 0.0);
            return Ok(rec.finish(x, Termination::Failed(Error::SingularHessian { iteration: k })));
        };
        let p = -chol.solve(&g);
        let Some(step) = line_search(model, config.line_search, &x, snap.f, &g, &p)? else {
            rec.step(&snap, StepClass::Unsuccessful, n, n, 0.0);
            rec.step(&rec.advance(&snap), StepClass::Terminal, 0, 0, 0.0);
            let err = Error::SolverFailure(format!("line search failed at iteration {k}"));
            return Ok(rec.finish(x, Termination::Failed(err)));
        };
        rec.epochs += step.hvps as f64;
        x.axpy(step.t, &p, 1.0);
        debug_assert!(step.f_new <= snap.f);
        rec.step(&snap, StepClass::Successful, n, n, step.t * p.norm());
        k += 1;
    }
}

/// Two-loop recursion: applies the inverse Hessian approximation to `g`.
fn two_loop(g: &Vector, memory: &VecDeque<(Vector, Vector, f64)>) -> Vector {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}

/// L-BFGS with memory `K`; pairs with `s.y <= 1e-10` are skipped.
pub fn lbfgs_run<O: Objective + ?Sized>(model: &O, config: &BaselineConfig, x0: Vector) -> Result<RunResult> {
    start(model, config, &x0)?;
    let n = model.num_samples();
    let mut rec = Recorder::new(model, config);
    let mut memory: VecDeque<(Vector, Vector, f64)> = VecDeque::with_capacity(config.memory);
    let mut x = x0;
    let mut g = model.full_gradient(&x)?;
    rec.epochs += 1.0;
    let mut k = 0;
    loop {
        let snap = rec.snapshot(k, &x)?;
        if let Some(t) = rec.should_stop(&snap) {
            return Ok(rec.finish(x, t));
        }
        let mut p = -two_loop(&g, &memory);
        if !(g.dot(&p) < 0.0) {
            warn!("L-BFGS direction is not a descent direction at iteration {k}; clearing memory");
            memory.clear();
            p = -g.clone();
        }
        let Some(step) = line_search(model, config.line_search, &x, snap.f, &g, &p)? else {
            rec.step(&snap, StepClass::Unsuccessful, n, 0, 0.0);
            rec.step(&rec.advance(&snap), StepClass::Terminal, 0, 0, 0.0);
            let err = Error::SolverFailure(format!("line search failed at iteration {k}"));
            return Ok(rec.finish(x, Termination::Failed(err)));
        };
        rec.epochs += step.hvps as f64;
        let s = &p * step.t;
        x += &s;
        let g_new = model.full_gradient(&x)?;
        rec.epochs += 1.0;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 {
            if memory.len() == config.memory {
                memory.pop_front();
            }
            memory.push_back((s.clone(), y, 1.0 / sy));
        }
        g = g_new;
        rec.step(&snap, StepClass::Successful, n, 0, s.norm());
        k += 1;
    }
}

/// Power-iteration estimate of the full Hessian's spectral norm at `x`.
pub fn estimate_hessian_norm<O: Objective + ?Sized>(model: &O, x: &Vector, iterations: usize) -> Result<f64> {
    let d = model.dim();
    let full = IndexSet::full(model.num_samples());
    let op = model.hessian_operator(x, &full)?;
    let mut v = Vector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let w = op.apply(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        estimate = norm;
        v = w / norm;
    }
    Ok(estimate)
}
