//! Property suite on small problems: convergence invariants, second-order
//! criticality, full-sample equivalence, deviation bounds and a negative
//! control for the penalty update.

use std::fmt;
use std::sync::Arc;

use scr_core::data::{generate_gaussian, GaussianSpec};
use scr_core::sampling::{verify_gradient_bernstein, verify_hessian_bernstein, SamplingParams};
use scr_core::scr::{
    check_convergence_invariants, run_unchecked, scr_run, second_order_check, RunResult, Schedule, ScrConfig,
};
use scr_core::{Exec, ObjectiveModel, Regularizer, Vector};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Replaces the penalty growth factor in the solver runs while the
    /// checks keep the nominal value; the suite is expected to fail.
    pub tamper_gamma: Option<f64>,
    pub bernstein_trials: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, tamper_gamma: None, bernstein_trials: 200 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&VerifyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(VerifyCheck { name: name.into(), passed, detail: detail.into() });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<40} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail)?;
        }
        Ok(())
    }
}

fn gaussian_model(n: usize, d: usize, seed: u64, reg: Regularizer, lambda: f64) -> Result<ObjectiveModel> {
    let data = generate_gaussian(&GaussianSpec::new(n, d, seed))?;
    Ok(ObjectiveModel::new(Arc::new(data), reg, lambda)?)
}

fn solve(model: &ObjectiveModel, config: &ScrConfig, x0: Vector) -> Result<RunResult> {
    Ok(if config.gamma > 1.0 { scr_run(model, config, x0)? } else { run_unchecked(model, config, x0)? })
}

/// Runs the suite; a failing property is reported, not returned as an error.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let nominal = ScrConfig { sigma0: 1e-4, record_wall_time: false, ..ScrConfig::default() };
    let solver = ScrConfig { gamma: opts.tamper_gamma.unwrap_or(nominal.gamma), max_iterations: 200, ..nominal.clone() };

    for (label, reg, lambda, grad_tol) in
        [("convex", Regularizer::L2, 1e-3, 1e-8), ("nonconvex", Regularizer::NonConvex, 1e-3, 1e-5)]
    {
        let model = gaussian_model(2000, 20, opts.seed + 1, reg, lambda)?;
        for seed in opts.seed..opts.seed + 3 {
            let config = ScrConfig { seed, grad_tol, ..solver.clone() };
            let r = solve(&model, &config, Vector::zeros(20))?;
            let name = format!("{label}/seed{seed}");
            report.push(format!("{name}/converged"), r.termination.is_converged(), format!("{:?}", r.termination));
            let params = ScrConfig { grad_tol, ..nominal.clone() }.invariant_params(reg == Regularizer::L2);
            for c in check_convergence_invariants(&r.trace, &params).checks {
                report.push(format!("{name}/{}", c.name), c.passed, c.detail);
            }
            if reg == Regularizer::NonConvex {
                let so = second_order_check(&model, &r.x, 1e-4)?;
                report.push(format!("{name}/second_order"), so.pass, format!("lambda_min {:.3e}", so.min_eigenvalue));
            }
        }
    }

    let model = gaussian_model(500, 10, opts.seed + 2, Regularizer::L2, 1e-2)?;
    let pinned = ScrConfig {
        sampling: SamplingParams { floor_fraction: 1.0, ..Default::default() },
        ..solver.clone()
    };
    let a = solve(&model, &pinned, Vector::zeros(10))?;
    let b = solve(&model, &ScrConfig { schedule: Schedule::Full, ..solver.clone() }, Vector::zeros(10))?;
    report.push("full_sample_equals_arc", a.trace.same_path(&b.trace), format!("{} rows", a.trace.len()));

    let model = gaussian_model(1000, 10, opts.seed + 3, Regularizer::L2, 1e-3)?;
    let x = Vector::from_element(10, 0.1);
    let delta = 0.1;
    let g = verify_gradient_bernstein(&model, &x, 250, delta, opts.bernstein_trials, opts.seed, Exec::Parallel)?;
    report.push(
        "bernstein_gradient",
        g.violation_rate <= delta,
        format!("violation rate {:.4} (max deviation {:.3e}, bound {:.3e})", g.violation_rate, g.max_deviation, g.bound),
    );
    let h = verify_hessian_bernstein(&model, &x, 250, delta, opts.bernstein_trials, opts.seed, Exec::Parallel)?;
    report.push(
        "bernstein_hessian",
        h.violation_rate <= delta,
        format!("violation rate {:.4} (max deviation {:.3e}, bound {:.3e})", h.violation_rate, h.max_deviation, h.bound),
    );

    let model = gaussian_model(500, 10, opts.seed + 4, Regularizer::L2, 1e-3)?;
    let tampered = ScrConfig { gamma: 0.5, sigma0: 1e-6, max_iterations: 40, ..nominal.clone() };
    let r = run_unchecked(&model, &tampered, Vector::zeros(10))?;
    let caught = check_convergence_invariants(&r.trace, &nominal.invariant_params(false))
        .get("sigma_bounds")
        .is_some_and(|c| !c.passed);
    report.push("negative_control/tampered_gamma_detected", caught, "gamma 0.5 checked against 2");
    Ok(report)
}
