//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scr_core::cubic::{a1_tolerance, check_a1, solve_exact, solve_lanczos, CubicModel, ExactOptions, LanczosOptions};
use scr_core::data::{generate_gaussian, GaussianSpec};
use scr_core::sampling::{
    estimate_kappa_f, estimate_kappa_g, gradient_sample_size, hessian_sample_size, raw_gradient_size,
    raw_hessian_size, verify_gradient_bernstein, verify_hessian_bernstein, SamplingParams, SizeFormula,
};
use scr_core::scr::{
    arc_run, check_convergence_invariants, quadratic_tail, scr_run, second_order_check, ScrConfig,
};
use scr_core::trace::{validate_csv, StepClass, Trace};
use scr_core::{Exec, IndexSet, Matrix, Objective, ObjectiveModel, Regularizer, Vector};
use scr_harness::spec::{DatasetSource, ExperimentSpec, LossSpec, MethodKind, RunSection};
use scr_harness::{run_experiment, run_schedule_comparison};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

/// Traces of every solver run in the suite, for the penalty-parameter check.
#[derive(Default)]
struct Collected {
    traces: Vec<(String, Trace)>,
}

fn gaussian(n: usize, d: usize, seed: u64, reg: Regularizer, lambda: f64) -> ObjectiveModel {
    let data = generate_gaussian(&GaussianSpec::new(n, d, seed)).unwrap();
    ObjectiveModel::new(Arc::new(data), reg, lambda).unwrap()
}

fn quiet() -> ScrConfig {
    ScrConfig { record_wall_time: false, ..ScrConfig::default() }
}

fn gaussian_vector<R: Rng>(d: usize, rng: &mut R) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal)).qr().q()
}

fn symmetric_with_spectrum(eig: &[f64], q: &Matrix) -> Matrix {
    let b = q * Matrix::from_diagonal(&Vector::from_column_slice(eig)) * q.transpose();
    (&b + b.transpose()) * 0.5
}

fn criterion_1() -> Outcome {
    let mut worst_ds = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut worst_slack = f64::INFINITY;
    let mut ok = true;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let eig: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..5.0)).collect();
        let b = symmetric_with_spectrum(&eig, &random_orthogonal(20, &mut rng));
        let g = gaussian_vector(20, &mut rng);
        let sigma = [0.1, 1.0, 10.0][(trial % 3) as usize];
        let model = CubicModel::new(0.0, g.clone(), b.clone(), sigma).unwrap();
        let exact = solve_exact(&model, &ExactOptions::default()).unwrap();
        let by_ref = CubicModel::new(0.0, g, &b, sigma).unwrap();
        let opts = LanczosOptions { max_dim: 20, kappa_theta: 1e-12, ..LanczosOptions::default() };
        let lz = solve_lanczos(&by_ref, &opts).unwrap();
        let ds = (&exact.s - &lz.s).norm();
        worst_ds = worst_ds.max(ds);
        ok &= ds <= 1e-6;
        for s in [&exact.s, &lz.s] {
            let tol = a1_tolerance(model.f0, model.g.norm(), s.norm());
            let a1 = check_a1(&model, s, tol);
            worst_residual = worst_residual.max(a1.residual.abs() / tol * 1e-8);
            worst_slack = worst_slack.min(a1.slack);
            ok &= a1.residual.abs() <= tol && a1.slack >= -1e-8;
        }
    }
    outcome(
        ok,
        format!("max |ds| {worst_ds:.2e}, max residual/scale {worst_residual:.2e}, min slack {worst_slack:.2e}"),
    )
}

/// Global minimum of the cubic model by grid search refined to `fine`,
/// followed by a pattern search.
fn grid_minimum(model: &CubicModel<Matrix>, radius: f64, fine: f64) -> f64 {
    let d = model.dim();
    let mut centers = vec![Vector::zeros(d)];
    let (mut half, mut step) = (radius, radius / 20.0);
    loop {
        let mut scored: Vec<(f64, Vector)> = Vec::new();
        let per_axis = (2.0 * half / step).round() as i64;
        for c in &centers {
            for idx in 0..(per_axis + 1).pow(d as u32) {
                let mut rem = idx;
                let s = Vector::from_fn(d, |_, _| {
                    let k = rem % (per_axis + 1);
                    rem /= per_axis + 1;
                    -half + k as f64 * step
                }) + c;
                scored.push((model.value(&s), s));
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        scored.truncate(8);
        centers = scored.into_iter().map(|(_, s)| s).collect();
        if step <= fine {
            break;
        }
        half = 2.0 * step;
        step = (step / 4.0).max(fine);
    }
    let mut s = centers[0].clone();
    let mut best = model.value(&s);
    let mut h = fine;
    while h > 1e-10 {
        let mut improved = false;
        for j in 0..d {
            for sign in [-1.0, 1.0] {
                let mut t = s.clone();
                t[j] += sign * h;
                let v = model.value(&t);
                if v < best {
                    best = v;
                    s = t;
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    best
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut cases = 0;
    let spectra: [&[f64]; 5] = [&[-1.0], &[-1.0, 2.0], &[-0.5, 1.0, 3.0], &[-2.0, -2.0, 1.0], &[-1.0, 0.5, 0.5]];
    for eig in spectra {
        let d = eig.len();
        for sigma in [0.1, 1.0, 10.0] {
            let q = random_orthogonal(d, &mut rng);
            let b = symmetric_with_spectrum(eig, &q);
            let mu1 = eig[0];
            // g has no component on the leftmost eigenspace and is small
            // enough that the secular equation has no interior root
            let mut g = Vector::zeros(d);
            for j in 0..d {
                if eig[j] > mu1 {
                    g += q.column(j) * (rng.random_range(0.05..0.5) * (eig[j] - mu1) * (-mu1) / sigma / d as f64);
                }
            }
            let model = CubicModel::new(0.0, g, b, sigma).unwrap();
            let exact = solve_exact(&model, &ExactOptions::default()).unwrap();
            let grid = grid_minimum(&model, 1.5 * exact.s.norm(), 1e-3);
            let gap = (model.value(&exact.s) - grid).abs();
            worst = worst.max(gap);
            ok &= exact.hard_case && gap <= 1e-4;
            cases += 1;
        }
    }
    outcome(ok, format!("{cases} hard cases, max |m(s) - grid min| {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for trial in 0..100u64 {
        let d = rng.random_range(1..=20);
        let reg = if trial % 2 == 0 { Regularizer::L2 } else { Regularizer::NonConvex };
        let m = gaussian(50, d, trial, reg, rng.random_range(1e-3..1.0));
        let set = IndexSet::full(50);
        let x = gaussian_vector(d, &mut rng);
        let v = gaussian_vector(d, &mut rng);
        let g = m.gradient(&x, &set).unwrap();
        let h = 1e-6;
        let fd = Vector::from_fn(d, |j, _| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            (m.value(&xp, &set).unwrap() - m.value(&xm, &set).unwrap()) / (2.0 * h)
        });
        worst_g = worst_g.max((&g - &fd).norm() / g.norm().max(1e-8));
        let h = 1e-5;
        let fd_hv = (m.gradient(&(&x + &v * h), &set).unwrap() - m.gradient(&(&x - &v * h), &set).unwrap()) / (2.0 * h);
        let hv = m.hvp(&x, &set, &v).unwrap();
        worst_h = worst_h.max((&hv - &fd_hv).norm() / hv.norm().max(1e-8));
    }
    outcome(worst_g <= 1e-5 && worst_h <= 1e-4, format!("max rel err gradient {worst_g:.2e}, hvp {worst_h:.2e}"))
}

fn criterion_4() -> Outcome {
    let (n, d, delta, trials) = (2000, 20, 0.1, 1000);
    let m = gaussian(n, d, 4, Regularizer::L2, 1e-3);
    let x = Vector::from_element(d, 0.1);
    let full = IndexSet::full(n);
    let kappa_f = estimate_kappa_f(&m, &x, &full, Exec::Parallel).unwrap();
    let kappa_g = estimate_kappa_g(&m, &x, &full, Exec::Parallel).unwrap();
    let params = SamplingParams {
        kappa_f,
        kappa_g,
        delta: Some(delta),
        floor_fraction: 1.0 / n as f64,
        formula: SizeFormula::Theoretical,
        ..SamplingParams::default()
    };
    // step norms at which the formulas ask for a tenth of the data
    let target = n as f64 / 10.0;
    let s_g = (raw_gradient_size(&params, 1.0, d) / target).powf(0.25);
    let s_b = (raw_hessian_size(&params, 1.0, d) / target).sqrt();
    let size_g = gradient_sample_size(&params, s_g, d, n).unwrap();
    let size_b = hessian_sample_size(&params, s_b, d, n).unwrap();
    let g = verify_gradient_bernstein(&m, &x, size_g, delta, trials, 4, Exec::Parallel).unwrap();
    let h = verify_hessian_bernstein(&m, &x, size_b, delta, trials, 5, Exec::Parallel).unwrap();
    outcome(
        g.violation_rate <= delta && h.violation_rate <= delta && size_g < n && size_b < n,
        format!(
            "gradient: |S| {size_g}, rate {:.3} (max dev {:.2e} vs bound {:.2e}); hessian: |S| {size_b}, rate {:.3} (max dev {:.2e} vs bound {:.2e})",
            g.violation_rate, g.max_deviation, g.bound, h.violation_rate, h.max_deviation, h.bound
        ),
    )
}

fn criterion_5(c: &mut Collected) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for reg in [Regularizer::L2, Regularizer::NonConvex] {
        let m = gaussian(1000, 20, 5, reg, 1e-3);
        let pinned = ScrConfig { sampling: SamplingParams { floor_fraction: 1.0, ..Default::default() }, ..quiet() };
        let scr = scr_run(&m, &pinned, Vector::zeros(20)).unwrap();
        let arc = arc_run(&m, &quiet(), Vector::zeros(20)).unwrap();
        let all_full = scr.trace.records.iter().all(|r| r.success == StepClass::Terminal || r.sample_g == 1000 && r.sample_b == 1000);
        let same = scr.trace.same_path(&arc.trace);
        ok &= same && all_full;
        details.push(format!("{reg:?}: {} rows, identical {same}", scr.trace.len()));
        c.traces.push((format!("c5 scr {reg:?}"), scr.trace));
        c.traces.push((format!("c5 arc {reg:?}"), arc.trace));
    }
    outcome(ok, details.join("; "))
}

fn criteria_6_7(c: &mut Collected) -> (Outcome, Outcome) {
    let m = gaussian(5000, 50, 1, Regularizer::L2, 1e-3);
    let (mut ok6, mut ok7) = (true, true);
    let (mut iters, mut factors) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let cfg = ScrConfig { seed, max_iterations: 100, ..quiet() };
        let r = scr_run(&m, &cfg, Vector::zeros(50)).unwrap();
        let last = r.final_record();
        let report = check_convergence_invariants(&r.trace, &cfg.invariant_params(true));
        let first_order = ["monotone_objective", "sufficient_decrease"]
            .iter()
            .all(|name| report.get(name).is_some_and(|c| c.passed));
        ok6 &= r.termination.is_converged() && last.grad_norm <= 1e-8 && last.iteration <= 100 && first_order;
        iters.push(last.iteration);
        match quadratic_tail(&r.trace) {
            Some(t) => {
                ok7 &= t.holds_within(10.0);
                factors.push(format!("{:.2}", t.worst_factor));
            }
            None => {
                ok7 = false;
                factors.push("n/a".into());
            }
        }
        c.traces.push((format!("c6 seed {seed}"), r.trace));
    }
    (
        outcome(ok6, format!("iterations to |grad| <= 1e-8 over 5 seeds: {iters:?}")),
        outcome(ok7, format!("final-step ratio / fitted c (limit 10): {}", factors.join(", "))),
    )
}

fn criterion_8(c: &mut Collected) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for lambda in [1e-3, 1e-1] {
        let m = gaussian(5000, 20, 8, Regularizer::NonConvex, lambda);
        let cfg = ScrConfig { grad_tol: 1e-5, ..quiet() };
        let r = scr_run(&m, &cfg, Vector::zeros(20)).unwrap();
        let g = m.full_gradient(&r.x).unwrap().norm();
        let so = second_order_check(&m, &r.x, 1e-4).unwrap();
        ok &= r.termination.is_converged() && g <= 1e-5 && so.min_eigenvalue >= -1e-4;
        details.push(format!("lambda {lambda}: |grad| {g:.2e}, lambda_min {:.3e}", so.min_eigenvalue));
        c.traces.push((format!("c8 lambda {lambda}"), r.trace));
    }
    outcome(ok, details.join("; "))
}

fn criterion_9(c: &Collected) -> Outcome {
    let params = quiet().invariant_params(false);
    let mut failures = Vec::new();
    for (name, trace) in &c.traces {
        let report = check_convergence_invariants(trace, &params);
        let check = report.get("sigma_bounds").unwrap();
        if !check.passed {
            failures.push(format!("{name}: {}", check.detail));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} runs checked", c.traces.len())
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn spec(out: &Path, n: usize, d: usize, run: RunSection) -> ExperimentSpec {
    ExperimentSpec {
        dataset: DatasetSource::Gaussian { n, d, seed: 1 },
        loss: LossSpec { regularizer: scr_harness::spec::Loss::L2, lambda: 1e-3 },
        run: RunSection { output_dir: out.to_path_buf(), record_wall_time: false, ..run },
        scr: Default::default(),
        sgd: Default::default(),
        saga: Default::default(),
        lbfgs: Default::default(),
        schedules: Default::default(),
    }
}

fn criterion_10(c: &mut Collected, out: &Path) -> Outcome {
    let mut s = spec(
        out,
        10_000,
        50,
        RunSection { seeds: (0..5).collect(), subopt_tol: 1e-6, ..RunSection::default() },
    );
    s.schedules.totals = vec![5, 10, 15, 20, 30, 40];
    let report = run_schedule_comparison(&s).unwrap();
    let mut shape_ok = true;
    for run in report.runs.iter().filter(|r| r.variant.label() == "adaptive") {
        let rows = &run.trace.records;
        let accepted: Vec<_> = rows.iter().filter(|r| r.success.accepted()).collect();
        let tail = &accepted[accepted.len().saturating_sub(3)..];
        let nondecreasing = tail.windows(2).all(|w| w[1].sample_g >= w[0].sample_g && w[1].sample_b >= w[0].sample_b);
        let reaches_n = rows.iter().any(|r| r.sample_g == 10_000 && r.sample_b == 10_000);
        shape_ok &= nondecreasing && reaches_n;
    }
    for run in &report.runs {
        c.traces.push((format!("c10 {} seed {}", run.variant.label(), run.seed), run.trace.clone()));
    }
    let adaptive = report.row("adaptive").unwrap();
    let best = report.best_hand_tuned().unwrap();
    let epochs_ok = adaptive.reached == adaptive.runs
        && adaptive.median_epochs_to_tol <= 1.5 * best.median_epochs_to_tol;
    outcome(
        shape_ok && epochs_ok,
        format!(
            "tail shape ok {shape_ok}; median epochs to 1e-6: adaptive {:.2}, best hand-tuned {} {:.2}, full {:.2}",
            adaptive.median_epochs_to_tol,
            best.method,
            best.median_epochs_to_tol,
            report.row("full").unwrap().median_epochs_to_tol
        ),
    )
}

fn criterion_11(c: &mut Collected, out: &Path) -> Outcome {
    let s = spec(
        out,
        5000,
        50,
        RunSection {
            methods: vec![MethodKind::Scr, MethodKind::Sgd, MethodKind::Saga, MethodKind::Newton, MethodKind::Lbfgs],
            seeds: (0..5).collect(),
            subopt_tol: 1e-8,
            max_epochs: 100.0,
            ..RunSection::default()
        },
    );
    let report = run_experiment(&s).unwrap();
    let scr = report.summary.iter().find(|r| r.method == "scr").unwrap();
    let scr_epochs = if scr.reached == scr.runs { scr.median_epochs_to_tol } else { f64::INFINITY };
    let mut rivals = Vec::new();
    let mut faster = true;
    for row in report.summary.iter().filter(|r| r.method.starts_with("sgd") || r.method.starts_with("saga")) {
        let epochs = if row.reached * 2 > row.runs { row.median_epochs_to_tol } else { f64::INFINITY };
        faster &= scr_epochs < epochs;
        rivals.push(format!("{} {epochs:.2}", row.method));
    }
    let newton_tail = report
        .traces("newton")
        .all(|t| quadratic_tail(t).is_some_and(|q| q.holds_within(10.0)));
    let mut schema_ok = true;
    for entry in std::fs::read_dir(out.join("runs")).unwrap() {
        let file = std::fs::File::open(entry.unwrap().path()).unwrap();
        schema_ok &= validate_csv(file).is_ok();
    }
    for o in report.outcomes.iter().filter(|o| o.method == MethodKind::Scr) {
        c.traces.push((format!("c11 scr seed {}", o.seed), o.trace.clone().unwrap()));
    }
    outcome(
        faster && newton_tail && schema_ok,
        format!(
            "median epochs to 1e-8: scr {scr_epochs:.2} vs [{}]; newton quadratic tail {newton_tail}; schema valid {schema_ok}",
            rivals.join(", ")
        ),
    )
}

fn report(number: usize, limit: Option<Duration>, started: Instant, o: Outcome, failures: &mut Vec<usize>) {
    let elapsed = started.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let passed = o.passed && in_time;
    if !passed {
        failures.push(number);
    }
    let budget = limit.map(|l| format!(" / {}s", l.as_secs())).unwrap_or_default();
    println!(
        "criterion {number:>2}: {}  [{:.1}s{budget}]  {}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        o.detail
    );
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut collected = Collected::default();
    let mut failures = Vec::new();
    let secs = |s| Some(Duration::from_secs(s));

    let t = Instant::now();
    report(1, secs(10), t, criterion_1(), &mut failures);
    let t = Instant::now();
    report(2, secs(30), t, criterion_2(), &mut failures);
    let t = Instant::now();
    report(3, None, t, criterion_3(), &mut failures);
    let t = Instant::now();
    report(4, secs(300), t, criterion_4(), &mut failures);
    let t = Instant::now();
    report(5, None, t, criterion_5(&mut collected), &mut failures);
    let t = Instant::now();
    let (c6, c7) = criteria_6_7(&mut collected);
    report(6, secs(120), t, c6, &mut failures);
    report(7, None, t, c7, &mut failures);
    let t = Instant::now();
    report(8, None, t, criterion_8(&mut collected), &mut failures);
    let t = Instant::now();
    let c10 = criterion_10(&mut collected, &dir.path().join("schedules"));
    let c10_time = t;
    let t = Instant::now();
    let c11 = criterion_11(&mut collected, &dir.path().join("baselines"));
    let c11_time = t;
    let t = Instant::now();
    report(9, None, t, criterion_9(&collected), &mut failures);
    report(10, secs(600), c10_time, c10, &mut failures);
    report(11, None, c11_time, c11, &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failures:?}");
        std::process::exit(1);
    }
}
