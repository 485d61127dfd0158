//! Multi-seed runs of every configured method, per-run CSVs and a summary.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use scr_core::baselines::{estimate_hessian_norm, run_baseline, BaselineConfig, Method};
use scr_core::scr::{arc_run, scr_run, RunResult, ScrConfig, Termination};
use scr_core::trace::Trace;
use scr_core::{Objective, ObjectiveModel, Vector};

use crate::error::{Error, Result};
use crate::spec::{ExperimentSpec, MethodKind};

/// One method configuration; SGD and SAGA expand into one variant per grid
/// step.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub method: MethodKind,
    /// `method` or `method_step<multiplier>`.
    pub label: String,
    /// Step multiplier of `1 / L` for SGD and SAGA.
    pub step_multiplier: Option<f64>,
}

pub fn variants(spec: &ExperimentSpec) -> Vec<Variant> {
    let mut out = Vec::new();
    for &method in &spec.run.methods {
        let grid = match method {
            MethodKind::Sgd => &spec.sgd.step_grid,
            MethodKind::Saga => &spec.saga.step_grid,
            _ => {
                out.push(Variant { method, label: method.name().to_string(), step_multiplier: None });
                continue;
            }
        };
        for &a in grid {
            out.push(Variant { method, label: format!("{}_step{a}", method.name()), step_multiplier: Some(a) });
        }
    }
    out
}

#[derive(Debug)]
pub struct RunOutcome {
    pub label: String,
    pub method: MethodKind,
    pub seed: u64,
    /// `None` when the run could not start.
    pub trace: Option<Trace>,
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub failed: usize,
    pub f_star: f64,
    pub median_final_subopt: f64,
    pub mean_final_subopt: f64,
    /// Runs that reached the suboptimality tolerance.
    pub reached: usize,
    pub median_epochs_to_tol: f64,
    pub mean_epochs_to_tol: f64,
    pub median_wall_seconds: f64,
    pub mean_wall_seconds: f64,
    /// Best step of its grid (SGD and SAGA only).
    pub grid_best: bool,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub f_star: f64,
    pub lipschitz_estimate: f64,
    pub outcomes: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.failed()).count()
    }

    pub fn traces<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Trace> + 'a {
        self.outcomes.iter().filter(move |o| o.label == label).filter_map(|o| o.trace.as_ref())
    }
}

fn baseline_config(spec: &ExperimentSpec, v: &Variant, seed: u64, n: usize, l_hat: f64) -> BaselineConfig {
    let method = match v.method {
        MethodKind::Sgd => Method::Sgd,
        MethodKind::Saga => Method::Saga,
        MethodKind::Newton => Method::NewtonLs,
        MethodKind::Lbfgs => Method::Lbfgs,
        MethodKind::Scr | MethodKind::Arc => unreachable!("not a baseline"),
    };
    let mut cfg = BaselineConfig {
        seed,
        grad_tol: spec.run.grad_tol,
        max_iterations: spec.run.max_iterations,
        memory: spec.lbfgs.memory,
        memory_budget: spec.saga.memory_budget,
        minibatch_fraction: spec.sgd.minibatch_fraction,
        record_wall_time: spec.run.record_wall_time,
        ..BaselineConfig::new(method)
    };
    if let Some(a) = v.step_multiplier {
        cfg.step_size = a / l_hat;
        cfg.max_epochs = spec.run.max_epochs;
        let per_epoch = match method {
            Method::Sgd => n as f64 / (cfg.minibatch_fraction * n as f64).ceil(),
            _ => n as f64,
        };
        cfg.max_iterations = (spec.run.max_epochs * per_epoch).ceil() as usize;
        cfg.record_every = ((per_epoch / 4.0).floor() as usize).max(1);
    }
    cfg
}

fn run_variant(
    spec: &ExperimentSpec,
    model: &ObjectiveModel,
    v: &Variant,
    seed: u64,
    l_hat: f64,
) -> scr_core::Result<RunResult> {
    let x0 = Vector::zeros(model.dim());
    match v.method {
        MethodKind::Scr => scr_run(model, &spec.scr_config(seed), x0),
        MethodKind::Arc => arc_run(model, &spec.scr_config(seed), x0),
        _ => run_baseline(model, &baseline_config(spec, v, seed, model.num_samples(), l_hat), x0),
    }
}

/// High-accuracy deterministic ARC run used to sharpen the optimum estimate.
pub fn polish(model: &ObjectiveModel, spec: &ExperimentSpec) -> Option<f64> {
    let config = ScrConfig {
        grad_tol: 1e-13,
        max_iterations: 200,
        record_wall_time: false,
        ..spec.scr_config(0)
    };
    match arc_run(model, &config, Vector::zeros(model.dim())) {
        Ok(r) => Some(r.trace.best_f()),
        Err(e) => {
            warn!("polish run failed: {e}");
            None
        }
    }
}

pub fn trace_file_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.csv")
}

fn parse_trace_file_name(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_suffix(".csv")?;
    let (label, seed) = stem.rsplit_once("_seed")?;
    Some((label.to_string(), seed.parse().ok()?))
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Best `f` in each trace; the optimum proxy is the smallest of these and
/// the polish value.
pub fn f_star<'a>(traces: impl IntoIterator<Item = &'a Trace>, polished: Option<f64>) -> f64 {
    traces
        .into_iter()
        .map(Trace::best_f)
        .chain(polished)
        .fold(f64::INFINITY, f64::min)
}

/// Aggregates `(label, method, trace, failed)` tuples per label, keeping
/// first-seen label order.
pub fn summarize_runs(
    runs: &[(String, Option<MethodKind>, Option<&Trace>, bool)],
    f_star: f64,
    subopt_tol: f64,
) -> Vec<SummaryRow> {
    let mut labels: Vec<&String> = Vec::new();
    for (label, ..) in runs {
        if !labels.contains(&label) {
            labels.push(label);
        }
    }
    let mut rows: Vec<SummaryRow> = labels
        .iter()
        .map(|label| {
            let mine: Vec<_> = runs.iter().filter(|r| &r.0 == *label).collect();
            let traces: Vec<&Trace> = mine.iter().filter_map(|r| r.2).filter(|t| !t.is_empty()).collect();
            let mut finals: Vec<f64> = traces.iter().map(|t| t.last().unwrap().f - f_star).collect();
            let mut epochs: Vec<f64> = traces.iter().filter_map(|t| t.epochs_to(f_star, subopt_tol)).collect();
            let mut walls: Vec<f64> = traces.iter().map(|t| t.last().unwrap().wall_seconds).collect();
            SummaryRow {
                method: label.to_string(),
                runs: mine.len(),
                failed: mine.iter().filter(|r| r.3).count(),
                f_star,
                mean_final_subopt: mean(&finals),
                median_final_subopt: median(&mut finals),
                reached: epochs.len(),
                mean_epochs_to_tol: mean(&epochs),
                median_epochs_to_tol: median(&mut epochs),
                mean_wall_seconds: mean(&walls),
                median_wall_seconds: median(&mut walls),
                grid_best: false,
            }
        })
        .collect();
    // best grid step per method: most runs reaching tolerance, then fewest
    // epochs, then smallest final suboptimality
    for kind in [MethodKind::Sgd, MethodKind::Saga] {
        let prefix = format!("{}_step", kind.name());
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.method.starts_with(&prefix))
            .min_by(|(_, a), (_, b)| {
                b.reached
                    .cmp(&a.reached)
                    .then(a.median_epochs_to_tol.total_cmp(&b.median_epochs_to_tol))
                    .then(a.median_final_subopt.total_cmp(&b.median_final_subopt))
            })
            .map(|(i, _)| i);
        if let Some(i) = best {
            rows[i].grid_best = true;
        }
    }
    rows
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    trace.write_csv(file)?;
    Ok(())
}

/// Runs every `(variant, seed)` pair on the rayon pool, writes
/// `runs/<label>_seed<seed>.csv`, `f_star.txt` and `summary.csv` under the
/// output directory. A failed run is recorded and the others continue.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let model = spec.model()?;
    let out = &spec.run.output_dir;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;

    let variants = variants(spec);
    let needs_l = variants.iter().any(|v| v.step_multiplier.is_some());
    let l_hat = if needs_l { estimate_hessian_norm(&model, &Vector::zeros(model.dim()), 100)? } else { f64::NAN };
    if needs_l {
        info!("Hessian norm estimate at x0: {l_hat:.6e}");
    }
    let jobs: Vec<(&Variant, u64)> =
        variants.iter().flat_map(|v| spec.run.seeds.iter().map(move |&s| (v, s))).collect();

    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let (trace, failure) = match run_variant(spec, &model, v, seed, l_hat) {
                Ok(r) => {
                    let failure = match &r.termination {
                        Termination::Failed(e) => Some(e.to_string()),
                        _ => None,
                    };
                    (Some(r.trace), failure)
                }
                Err(e) => (None, Some(e.to_string())),
            };
            if let Some(f) = &failure {
                warn!("{} seed {seed}: {f}", v.label);
            }
            RunOutcome { label: v.label.clone(), method: v.method, seed, trace, failure }
        })
        .collect();

    for o in &outcomes {
        if let Some(t) = &o.trace {
            write_trace(&runs_dir.join(trace_file_name(&o.label, o.seed)), t)?;
        }
    }
    let polished = polish(&model, spec);
    let f_star = f_star(outcomes.iter().filter_map(|o| o.trace.as_ref()), polished);
    fs::write(out.join("f_star.txt"), format!("{f_star:?}\n"))?;
    let rows: Vec<_> = outcomes
        .iter()
        .map(|o| (o.label.clone(), Some(o.method), o.trace.as_ref(), o.failed()))
        .collect();
    let summary = summarize_runs(&rows, f_star, spec.run.subopt_tol);
    write_summary(&out.join("summary.csv"), &summary)?;
    Ok(ExperimentReport { f_star, lipschitz_estimate: l_hat, outcomes, summary })
}

/// Rebuilds `summary.csv` from the trace files of a finished experiment.
/// The optimum proxy is the smaller of `f_star.txt` (if present) and the
/// best value found in the traces.
pub fn summarize(dir: &Path, subopt_tol: f64) -> Result<Vec<SummaryRow>> {
    let runs_dir = dir.join("runs");
    let mut files: Vec<(String, u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&runs_dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match parse_trace_file_name(name) {
            Some((label, seed)) => files.push((label, seed, path.clone())),
            None => warn!("skipping {}", path.display()),
        }
    }
    if files.is_empty() {
        return Err(Error::Invalid(format!("no trace files in {}", runs_dir.display())));
    }
    files.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let traces = files
        .iter()
        .map(|(_, _, p)| Ok(scr_core::trace::validate_csv(fs::File::open(p)?)?))
        .collect::<Result<Vec<Trace>>>()?;
    let recorded = fs::read_to_string(dir.join("f_star.txt")).ok().and_then(|s| s.trim().parse().ok());
    let f_star = f_star(&traces, recorded);
    let rows: Vec<_> = files
        .iter()
        .zip(&traces)
        .map(|((label, ..), t)| {
            let failed = t.last().is_some_and(|r| !r.f.is_finite());
            (label.clone(), None, Some(t), failed)
        })
        .collect();
    let summary = summarize_runs(&rows, f_star, subopt_tol);
    write_summary(&dir.join("summary.csv"), &summary)?;
    Ok(summary)
}
