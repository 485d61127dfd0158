//! Post-hoc checks of the convergence theory on recorded traces.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cubic::{leftmost_eigenpair, Lanczos, Reorthogonalization};
use crate::error::Result;
use crate::exec::IndexSet;
use crate::losses::Objective;
use crate::trace::{StepClass, Trace, TraceRecord};
use crate::Vector;

/// Algorithm constants a trace is checked against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvariantParams {
    pub eta1: f64,
    pub gamma: f64,
    pub eps_m: f64,
    /// Also require a quadratic tail.
    pub strongly_convex: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvariantReport {
    pub checks: Vec<CheckResult>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, failure: Option<String>, ok: String) {
        let passed = failure.is_none();
        self.checks.push(CheckResult { name, passed, detail: failure.unwrap_or(ok) });
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<28} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail)?;
        }
        Ok(())
    }
}

/// Step rows (everything but the terminal row) paired with the row after.
fn steps(trace: &Trace) -> impl Iterator<Item = (&TraceRecord, &TraceRecord)> {
    trace.records.windows(2).map(|w| (&w[0], &w[1]))
}

/// Fit of `|grad f_{k+1}| <= c |grad f_k|^2` over the last accepted steps.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTail {
    /// `(|grad f_k|, |grad f_{k+1}|)` for the last three accepted steps.
    pub pairs: Vec<(f64, f64)>,
    /// Constant fitted on the first of the three steps.
    pub constant: f64,
    /// Largest ratio `|grad f_{k+1}| / (c |grad f_k|^2)` over the later steps.
    pub worst_factor: f64,
}

impl QuadraticTail {
    pub fn holds_within(&self, factor: f64) -> bool {
        self.constant.is_finite() && self.worst_factor <= factor
    }
}

/// Fits `c` on the antepenultimate accepted step and measures the other two.
/// `None` when fewer than three accepted steps have known gradient norms.
pub fn quadratic_tail(trace: &Trace) -> Option<QuadraticTail> {
    let pairs: Vec<(f64, f64)> = steps(trace)
        .filter(|(r, _)| r.success.accepted())
        .map(|(r, next)| (r.grad_norm, next.grad_norm))
        .filter(|(a, b)| a.is_finite() && b.is_finite() && *a > 0.0)
        .collect();
    if pairs.len() < 3 {
        return None;
    }
    let tail = pairs[pairs.len() - 3..].to_vec();
    let (g0, g1) = tail[0];
    let constant = g1 / (g0 * g0);
    let worst_factor = tail[1..]
        .iter()
        .map(|(a, b)| b / (constant * a * a))
        .fold(0.0, f64::max);
    Some(QuadraticTail { pairs: tail, constant, worst_factor })
}

/// Longest run of consecutive unsuccessful iterations.
pub fn longest_unsuccessful_run(trace: &Trace) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for r in &trace.records {
        if r.success == StepClass::Unsuccessful {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

/// Checks a completed SCR/ARC trace:
///
/// * `sigma_bounds`: `sigma >= eps_m`, transitions follow the update rule,
///   unsuccessful streaks stay below `ceil(log(sigma_max / eps_m) / log gamma)`
///   and every streak ends in an accepted step.
/// * `sufficient_decrease`: accepted steps have `rho >= eta1` and
///   `f_k - f_{k+1} >= eta1 sigma_k |s_k|^3 / 6`.
/// * `monotone_objective`: accepted steps never increase `f`; rejected steps
///   leave it unchanged.
/// * `sizes_after_unsuccessful`: sample sizes never shrink after a rejection.
/// * `epochs_monotone`
/// * `quadratic_tail` (strongly convex only): see [`quadratic_tail`], factor 10.
pub fn check_convergence_invariants(trace: &Trace, params: &InvariantParams) -> InvariantReport {
    let mut report = InvariantReport::default();
    let sigma_max = trace.records.iter().map(|r| r.sigma).fold(0.0, f64::max);

    let mut failure = None;
    for (r, next) in steps(trace) {
        let expected = match r.success {
            StepClass::VerySuccessful => None,
            StepClass::Successful => Some(r.sigma),
            StepClass::Unsuccessful => Some(params.gamma * r.sigma),
            StepClass::Terminal => continue,
        };
        let ok = !(r.sigma < params.eps_m) && r.sigma.is_finite() && match expected {
            Some(want) => next.sigma == want && (r.success != StepClass::Unsuccessful || next.sigma > r.sigma),
            None => next.sigma <= r.sigma && next.sigma >= params.eps_m,
        };
        if !ok {
            failure = Some(format!(
                "iteration {}: {:?} step moved sigma {:e} -> {:e}",
                r.iteration, r.success, r.sigma, next.sigma
            ));
            break;
        }
    }
    let cap = if params.gamma > 1.0 {
        ((sigma_max / params.eps_m).ln() / params.gamma.ln()).ceil() as usize
    } else {
        0
    };
    let longest = longest_unsuccessful_run(trace);
    if failure.is_none() && longest > cap {
        failure = Some(format!("{longest} consecutive unsuccessful iterations exceed cap {cap}"));
    }
    let ends_unresolved = trace
        .records
        .iter()
        .rev()
        .find(|r| r.success != StepClass::Terminal)
        .is_some_and(|r| r.success == StepClass::Unsuccessful);
    if failure.is_none() && ends_unresolved {
        failure = Some("sigma grew without a subsequent successful step".into());
    }
    report.push(
        "sigma_bounds",
        failure,
        format!("sigma in [{:e}, {sigma_max:e}], longest unsuccessful run {longest} <= {cap}",
            trace.records.iter().map(|r| r.sigma).fold(f64::INFINITY, f64::min)),
    );

    let mut failure = None;
    let mut tightest = f64::INFINITY;
    for (r, next) in steps(trace).filter(|(r, _)| r.success.accepted()) {
        let actual = r.f - next.f;
        let lower = params.eta1 * r.sigma / 6.0 * r.step_norm.powi(3);
        let slack = 4.0 * f64::EPSILON * r.f.abs();
        if r.rho < params.eta1 || actual + slack < lower {
            failure = Some(format!(
                "iteration {}: decrease {actual:e} vs bound {lower:e} (rho {})",
                r.iteration, r.rho
            ));
            break;
        }
        if lower > 0.0 {
            tightest = tightest.min(actual / lower);
        }
    }
    report.push("sufficient_decrease", failure, format!("min decrease/bound ratio {tightest:.3e}"));

    let mut failure = None;
    for (r, next) in steps(trace) {
        let bad = match r.success {
            StepClass::VerySuccessful | StepClass::Successful => next.f > r.f,
            StepClass::Unsuccessful => next.f != r.f,
            StepClass::Terminal => false,
        };
        if bad {
            failure = Some(format!(
                "iteration {} ({:?}): f {:e} -> {:e}",
                r.iteration, r.success, r.f, next.f
            ));
            break;
        }
    }
    report.push("monotone_objective", failure, "f nonincreasing over accepted steps".into());

    let mut failure = None;
    for (r, next) in steps(trace) {
        if r.success == StepClass::Unsuccessful
            && next.success != StepClass::Terminal
            && (next.sample_g < r.sample_g || next.sample_b < r.sample_b)
        {
            failure = Some(format!("iteration {}: sizes shrank after rejection", r.iteration));
            break;
        }
    }
    report.push("sizes_after_unsuccessful", failure, "sizes never shrink after rejection".into());

    let failure = steps(trace)
        .find(|(r, next)| next.epochs < r.epochs)
        .map(|(r, _)| format!("epochs decrease after iteration {}", r.iteration));
    report.push("epochs_monotone", failure, "epochs nondecreasing".into());

    if params.strongly_convex {
        let (failure, ok) = match quadratic_tail(trace) {
            None => (Some("fewer than three accepted steps".to_string()), String::new()),
            Some(t) if t.holds_within(10.0) => (None, format!("c = {:.3e}, worst factor {:.3}", t.constant, t.worst_factor)),
            Some(t) => (
                Some(format!("c = {:.3e}, worst factor {:.3} > 10", t.constant, t.worst_factor)),
                String::new(),
            ),
        };
        report.push("quadratic_tail", failure, ok);
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondOrderReport {
    pub min_eigenvalue: f64,
    pub pass: bool,
}

/// Dimension up to which the full Hessian is assembled and diagonalized.
const DENSE_LIMIT: usize = 500;

/// Estimates the smallest eigenvalue of the full Hessian at `x`; passes when
/// it is at least `-tolerance`. Uses a dense eigensolve for small `d` and the
/// leftmost Ritz value of a Lanczos run otherwise.
pub fn second_order_check<O: Objective + ?Sized>(model: &O, x: &Vector, tolerance: f64) -> Result<SecondOrderReport> {
    let d = model.dim();
    let full = IndexSet::full(model.num_samples());
    let min_eigenvalue = if d <= DENSE_LIMIT {
        leftmost_eigenpair(&model.hessian(x, &full)?).0
    } else {
        let op = model.hessian_operator(x, &full)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let start = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let mut lanczos = Lanczos::new(&*op, &start, Reorthogonalization::Selective { full_until: 300 });
        for _ in 0..d.min(300) {
            if lanczos.step() <= 1e-12 {
                break;
            }
        }
        leftmost_eigenpair(&lanczos.tridiagonal()).0
    };
    Ok(SecondOrderReport { min_eigenvalue, pass: min_eigenvalue >= -tolerance })
}
