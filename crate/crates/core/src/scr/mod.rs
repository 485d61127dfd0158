//! Adaptive cubic regularization with sub-sampled gradients and Hessians.
//!
//! Each iteration draws independent gradient and Hessian index sets, builds
//! the cubic model, minimizes it over a Krylov space, and accepts or rejects
//! the step from the ratio of actual to predicted decrease. Pinning both
//! samples to the full dataset gives deterministic ARC.

mod checks;

use std::time::Instant;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checks::{
    check_convergence_invariants, quadratic_tail, second_order_check, CheckResult, InvariantParams,
    InvariantReport, QuadraticTail, SecondOrderReport,
};

use crate::cubic::{solve_lanczos, CubicModel, LanczosOptions, Reorthogonalization, SubproblemSolution};
use crate::error::{Error, Result};
use crate::exec::IndexSet;
use crate::losses::{check_vector, Objective};
use crate::sampling::{
    draw_index_set, gradient_sample_size, hessian_sample_size, schedule_exponential, schedule_linear,
    SampleSizes, SamplingParams,
};
use crate::trace::{StepClass, Trace, TraceRecord};
use crate::Vector;

/// How the per-iteration sample sizes are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Size rules driven by the previous step norm.
    Adaptive,
    /// Every evaluation uses the whole dataset (deterministic ARC).
    Full,
    /// Linear growth from the floor to `n` over `total` iterations.
    Linear { total: usize },
    /// Geometric growth from the floor to `n` over `total` iterations.
    Exponential { total: usize },
}

/// Objective used in the acceptance ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhoMode {
    /// Full-data objective at both points.
    Full,
    /// Objective over the gradient sample only; cheaper, no decrease guarantee.
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScrConfig {
    /// Penalty growth on unsuccessful iterations, `> 1`.
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub sigma0: f64,
    /// Floor on the penalty parameter.
    pub eps_m: f64,
    pub kappa_theta: f64,
    pub sampling: SamplingParams,
    pub schedule: Schedule,
    pub max_iterations: usize,
    /// Stop once the full gradient norm is at or below this.
    pub grad_tol: f64,
    /// Full-gradient stopping check every this many iterations.
    pub check_every: usize,
    pub seed: u64,
    pub max_krylov_dim: Option<usize>,
    pub rho_mode: RhoMode,
    /// Abort once an accepted objective exceeds this.
    pub divergence_limit: f64,
    /// Record elapsed seconds; when off the column is zero and traces are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for ScrConfig {
    fn default() -> Self {
        ScrConfig {
            gamma: 2.0,
            eta1: 0.2,
            eta2: 0.8,
            sigma0: 1.0,
            eps_m: 1e-16,
            kappa_theta: 0.1,
            sampling: SamplingParams::default(),
            schedule: Schedule::Adaptive,
            max_iterations: 500,
            grad_tol: 1e-8,
            check_every: 1,
            seed: 0,
            max_krylov_dim: None,
            rho_mode: RhoMode::Full,
            divergence_limit: 1e10,
            record_wall_time: true,
        }
    }
}

impl ScrConfig {
    /// Deterministic ARC: full gradient and Hessian every iteration.
    pub fn arc() -> Self {
        ScrConfig { schedule: Schedule::Full, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.gamma > 1.0) {
            return bad(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(0.0 < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0) {
            return bad(format!("need 0 < eta1 < eta2 < 1, got {} and {}", self.eta1, self.eta2));
        }
        if !(self.sigma0 > 0.0 && self.eps_m > 0.0) {
            return bad("sigma0 and eps_m must be positive".into());
        }
        if !(self.kappa_theta > 0.0 && self.kappa_theta < 1.0) {
            return bad(format!("kappa_theta {} not in (0, 1)", self.kappa_theta));
        }
        if !(self.grad_tol >= 0.0) || self.check_every == 0 {
            return bad("grad_tol must be >= 0 and check_every >= 1".into());
        }
        self.sampling.validate()
    }

    fn lanczos_options(&self) -> LanczosOptions {
        LanczosOptions {
            kappa_theta: self.kappa_theta,
            max_dim: self.max_krylov_dim.unwrap_or(usize::MAX),
            reorthogonalization: Reorthogonalization::Selective { full_until: 200 },
            ..Default::default()
        }
    }

    pub fn invariant_params(&self, strongly_convex: bool) -> InvariantParams {
        InvariantParams { eta1: self.eta1, gamma: self.gamma, eps_m: self.eps_m, strongly_convex }
    }
}

/// Everything the driver carries between iterations.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub x: Vector,
    pub sigma: f64,
    /// Full objective at `x`.
    pub f: f64,
    /// Full gradient norm at `x`, when computed.
    pub grad_norm: Option<f64>,
    pub prev_step_norm: Option<f64>,
    pub sizes: Option<SampleSizes>,
    pub last_unsuccessful: bool,
    pub iteration: usize,
    pub successful: usize,
    pub unsuccessful: usize,
    pub epochs: f64,
    rng_g: ChaCha8Rng,
    rng_b: ChaCha8Rng,
    started: Instant,
}

impl SolverState {
    pub fn new<O: Objective + ?Sized>(model: &O, config: &ScrConfig, x0: Vector) -> Result<Self> {
        check_vector(&x0, model.dim(), "starting point")?;
        let f = model.full_value(&x0)?;
        let mut rng_g = ChaCha8Rng::seed_from_u64(config.seed);
        rng_g.set_stream(0);
        let mut rng_b = ChaCha8Rng::seed_from_u64(config.seed);
        rng_b.set_stream(1);
        Ok(SolverState {
            x: x0,
            sigma: config.sigma0,
            f,
            grad_norm: None,
            prev_step_norm: None,
            sizes: None,
            last_unsuccessful: false,
            iteration: 0,
            successful: 0,
            unsuccessful: 0,
            epochs: 0.0,
            rng_g,
            rng_b,
            started: Instant::now(),
        })
    }

    fn full_grad_norm<O: Objective + ?Sized>(&mut self, model: &O) -> Result<f64> {
        if let Some(g) = self.grad_norm {
            return Ok(g);
        }
        let g = model.full_gradient(&self.x)?.norm();
        self.grad_norm = Some(g);
        Ok(g)
    }

    fn elapsed(&self, config: &ScrConfig) -> f64 {
        if config.record_wall_time {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

fn next_sizes(state: &SolverState, config: &ScrConfig, n: usize, d: usize) -> Result<SampleSizes> {
    let floor = config.sampling.floor_size(n);
    let k = state.iteration;
    let sizes = match config.schedule {
        Schedule::Full => SampleSizes::uniform(n),
        Schedule::Linear { total } => schedule_linear(k, total, n, floor),
        Schedule::Exponential { total } => schedule_exponential(k, total, n, floor),
        Schedule::Adaptive => match state.prev_step_norm {
            None => SampleSizes::uniform(floor),
            Some(s) if s > 0.0 => SampleSizes {
                gradient: gradient_sample_size(&config.sampling, s, d, n)?,
                hessian: hessian_sample_size(&config.sampling, s, d, n)?,
            },
            Some(_) => SampleSizes::uniform(n),
        },
    };
    Ok(match (state.last_unsuccessful, state.sizes) {
        (true, Some(prev)) => sizes.max(prev),
        _ => sizes,
    })
}

struct Trial {
    solution: SubproblemSolution,
    f_trial: f64,
    rho: f64,
    g_norm: f64,
}

/// One iteration: sample, solve the cubic model, test the step, update the
/// penalty. Returns the new state and the iteration's trace row.
pub fn scr_step<O: Objective + ?Sized>(
    mut state: SolverState,
    model: &O,
    config: &ScrConfig,
) -> Result<(SolverState, TraceRecord)> {
    let n = model.num_samples();
    let d = model.dim();
    let grad_norm = state.grad_norm.unwrap_or(f64::NAN);
    let epochs_start = state.epochs;
    let wall_start = state.elapsed(config);
    let sizes = next_sizes(&state, config, n, d)?;
    let (set_g, set_b) = if config.schedule == Schedule::Full {
        (IndexSet::full(n), IndexSet::full(n))
    } else {
        (
            draw_index_set(n, sizes.gradient, &mut state.rng_g)?,
            draw_index_set(n, sizes.hessian, &mut state.rng_b)?,
        )
    };
    let nf = n as f64;

    let g = model.gradient(&state.x, &set_g)?;
    state.epochs += set_g.len() as f64 / nf;
    let f0 = match config.rho_mode {
        RhoMode::Full => state.f,
        RhoMode::Sampled => model.value(&state.x, &set_g)?,
    };
    let op = model.hessian_operator(&state.x, &set_b)?;
    let g_norm = g.norm();
    let attempt: Result<Trial> = (|| {
        let cubic = CubicModel::new(f0, g, &*op, state.sigma)?;
        let solution = solve_lanczos(&cubic, &config.lanczos_options())?;
        state.epochs += (solution.krylov_dim * set_b.len()) as f64 / nf;
        if !(solution.model_decrease > 0.0) {
            return Err(Error::SolverFailure(format!(
                "nonpositive model decrease {:e}",
                solution.model_decrease
            )));
        }
        let x_trial = &state.x + &solution.s;
        let f_trial = match config.rho_mode {
            RhoMode::Full => model.full_value(&x_trial)?,
            RhoMode::Sampled => model.value(&x_trial, &set_g)?,
        };
        if !f_trial.is_finite() {
            return Err(Error::NonFinite("trial objective"));
        }
        let rho = (f0 - f_trial) / solution.model_decrease;
        Ok(Trial { solution, f_trial, rho, g_norm })
    })();
    drop(op);

    let sigma_k = state.sigma;
    let mut record = TraceRecord {
        iteration: state.iteration,
        wall_seconds: 0.0,
        epochs: 0.0,
        f: state.f,
        grad_norm,
        rho: f64::NAN,
        success: StepClass::Unsuccessful,
        sigma: sigma_k,
        sample_g: set_g.len(),
        sample_b: set_b.len(),
        step_norm: f64::NAN,
        krylov_dim: 0,
    };

    let class = match attempt {
        Ok(trial) => {
            let step_norm = trial.solution.s.norm();
            record.rho = trial.rho;
            record.step_norm = step_norm;
            record.krylov_dim = trial.solution.krylov_dim;
            state.prev_step_norm = Some(step_norm);
            let class = if trial.rho > config.eta2 {
                StepClass::VerySuccessful
            } else if trial.rho >= config.eta1 {
                StepClass::Successful
            } else {
                StepClass::Unsuccessful
            };
            if class.accepted() {
                state.x += &trial.solution.s;
                state.f = match config.rho_mode {
                    RhoMode::Full => trial.f_trial,
                    RhoMode::Sampled => model.full_value(&state.x)?,
                };
                state.grad_norm = None;
            }
            state.sigma = match class {
                StepClass::VerySuccessful => sigma_k.min(trial.g_norm).max(config.eps_m),
                StepClass::Successful => sigma_k,
                _ => config.gamma * sigma_k,
            };
            class
        }
        Err(e) => {
            warn!("iteration {}: {e}; treating as unsuccessful", state.iteration);
            state.sigma = config.gamma * sigma_k;
            StepClass::Unsuccessful
        }
    };
    debug!(
        "iter {} f={:.12e} rho={:.3} sigma={:.3e} |Sg|={} |SB|={} |s|={:.3e} krylov={}",
        record.iteration, record.f, record.rho, sigma_k, record.sample_g, record.sample_b, record.step_norm,
        record.krylov_dim
    );
    record.success = class;
    if class.accepted() {
        state.successful += 1;
    } else {
        state.unsuccessful += 1;
    }
    state.last_unsuccessful = !class.accepted();
    state.sizes = Some(SampleSizes { gradient: set_g.len(), hessian: set_b.len() });
    state.iteration += 1;
    record.epochs = epochs_start;
    record.wall_seconds = wall_start;
    Ok((state, record))
}

/// Why a run stopped.
#[derive(Debug)]
pub enum Termination {
    Converged,
    MaxIterations,
    Failed(Error),
}

impl Termination {
    pub fn is_converged(&self) -> bool {
        matches!(self, Termination::Converged)
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub x: Vector,
    pub trace: Trace,
    pub termination: Termination,
}

impl RunResult {
    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("runs always record a final row")
    }
}

fn terminal_record(state: &SolverState, config: &ScrConfig, grad_norm: f64) -> TraceRecord {
    TraceRecord {
        iteration: state.iteration,
        wall_seconds: state.elapsed(config),
        epochs: state.epochs,
        f: state.f,
        grad_norm,
        rho: f64::NAN,
        success: StepClass::Terminal,
        sigma: state.sigma,
        sample_g: 0,
        sample_b: 0,
        step_norm: 0.0,
        krylov_dim: 0,
    }
}

/// Runs SCR from `x0` until the full gradient norm reaches the tolerance or
/// the iteration budget is spent. The last trace row describes the returned
/// iterate.
pub fn scr_run<O: Objective + ?Sized>(model: &O, config: &ScrConfig, x0: Vector) -> Result<RunResult> {
    config.validate()?;
    run_unchecked(model, config, x0)
}

/// Deterministic ARC: [`scr_run`] with both samples pinned to the full data.
pub fn arc_run<O: Objective + ?Sized>(model: &O, config: &ScrConfig, x0: Vector) -> Result<RunResult> {
    let config = ScrConfig { schedule: Schedule::Full, ..config.clone() };
    scr_run(model, &config, x0)
}

/// Like [`scr_run`] but without validating the configuration. Used by
/// negative controls that need a deliberately broken penalty update.
#[doc(hidden)]
pub fn run_unchecked<O: Objective + ?Sized>(model: &O, config: &ScrConfig, x0: Vector) -> Result<RunResult> {
    let mut state = SolverState::new(model, config, x0)?;
    let mut trace = Trace::default();
    loop {
        let check = state.iteration % config.check_every == 0 || state.iteration >= config.max_iterations;
        if check {
            let g = state.full_grad_norm(model)?;
            if g <= config.grad_tol || state.iteration >= config.max_iterations {
                trace.push(terminal_record(&state, config, g));
                let termination = if g <= config.grad_tol {
                    Termination::Converged
                } else {
                    Termination::MaxIterations
                };
                return Ok(RunResult { x: state.x, trace, termination });
            }
        }
        let (next, record) = scr_step(state, model, config)?;
        state = next;
        trace.push(record);
        if state.f > config.divergence_limit || !state.f.is_finite() {
            let g = state.full_grad_norm(model).unwrap_or(f64::NAN);
            trace.push(terminal_record(&state, config, g));
            let err = Error::Divergence { iteration: state.iteration, value: state.f };
            return Ok(RunResult { x: state.x, trace, termination: Termination::Failed(err) });
        }
    }
}
