//! Adaptive sample sizes against hand-tuned linear and exponential
//! schedules and the full-sample method.

use std::fs;

use rayon::prelude::*;
use serde::Serialize;

use scr_core::scr::{scr_run, Schedule, ScrConfig};
use scr_core::trace::Trace;
use scr_core::{Objective, Vector};

use crate::error::Result;
use crate::experiment::{f_star, polish, summarize_runs, trace_file_name, write_summary, SummaryRow};
use crate::spec::ExperimentSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleVariant {
    pub schedule: Schedule,
}

impl ScheduleVariant {
    pub fn label(&self) -> String {
        match self.schedule {
            Schedule::Adaptive => "adaptive".into(),
            Schedule::Full => "full".into(),
            Schedule::Linear { total } => format!("linear{total}"),
            Schedule::Exponential { total } => format!("exponential{total}"),
        }
    }

    pub fn is_hand_tuned(&self) -> bool {
        matches!(self.schedule, Schedule::Linear { .. } | Schedule::Exponential { .. })
    }
}

pub fn schedule_variants(spec: &ExperimentSpec) -> Vec<ScheduleVariant> {
    let mut v = vec![ScheduleVariant { schedule: Schedule::Adaptive }, ScheduleVariant { schedule: Schedule::Full }];
    for &total in &spec.schedules.totals {
        v.push(ScheduleVariant { schedule: Schedule::Linear { total } });
        v.push(ScheduleVariant { schedule: Schedule::Exponential { total } });
    }
    v
}

#[derive(Debug)]
pub struct ScheduleRun {
    pub variant: ScheduleVariant,
    pub seed: u64,
    pub trace: Trace,
}

#[derive(Debug)]
pub struct ScheduleReport {
    pub f_star: f64,
    pub runs: Vec<ScheduleRun>,
    pub summary: Vec<SummaryRow>,
}

impl ScheduleReport {
    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == label)
    }

    /// Hand-tuned row with the smallest median epochs to tolerance.
    pub fn best_hand_tuned(&self) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .filter(|r| r.method.starts_with("linear") || r.method.starts_with("exponential"))
            .filter(|r| r.reached > 0)
            .min_by(|a, b| a.median_epochs_to_tol.total_cmp(&b.median_epochs_to_tol))
    }
}

#[derive(Serialize)]
struct CurveRow<'a> {
    schedule: &'a str,
    seed: u64,
    iteration: usize,
    epochs: f64,
    suboptimality: f64,
    sample_g: usize,
    sample_b: usize,
}

/// Runs every schedule for every seed. Writes `schedules/<label>_seed<s>.csv`
/// traces, `schedule_curves.csv` (per-iteration sample sizes next to
/// suboptimality) and `schedule_summary.csv`.
pub fn run_schedule_comparison(spec: &ExperimentSpec) -> Result<ScheduleReport> {
    spec.validate()?;
    let model = spec.model()?;
    let out = &spec.run.output_dir;
    let dir = out.join("schedules");
    fs::create_dir_all(&dir)?;

    let variants = schedule_variants(spec);
    let jobs: Vec<(ScheduleVariant, u64)> =
        variants.iter().flat_map(|&v| spec.run.seeds.iter().map(move |&s| (v, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let config = ScrConfig { schedule: variant.schedule, ..spec.scr_config(seed) };
            let r = scr_run(&model, &config, Vector::zeros(model.dim()))?;
            Ok(ScheduleRun { variant, seed, trace: r.trace })
        })
        .collect::<scr_core::Result<Vec<_>>>()?;

    let f_star = f_star(results.iter().map(|r| &r.trace), polish(&model, spec));
    let mut curves = csv::Writer::from_path(out.join("schedule_curves.csv"))?;
    for r in &results {
        let label = r.variant.label();
        let file = std::io::BufWriter::new(fs::File::create(dir.join(trace_file_name(&label, r.seed)))?);
        r.trace.write_csv(file)?;
        for row in &r.trace.records {
            curves.serialize(CurveRow {
                schedule: &label,
                seed: r.seed,
                iteration: row.iteration,
                epochs: row.epochs,
                suboptimality: row.f - f_star,
                sample_g: row.sample_g,
                sample_b: row.sample_b,
            })?;
        }
    }
    curves.flush()?;
    let rows: Vec<_> =
        results.iter().map(|r| (r.variant.label(), None, Some(&r.trace), false)).collect();
    let summary = summarize_runs(&rows, f_star, spec.run.subopt_tol);
    write_summary(&out.join("schedule_summary.csv"), &summary)?;
    Ok(ScheduleReport { f_star, runs: results, summary })
}
