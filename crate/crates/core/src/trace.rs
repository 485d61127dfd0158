//! Per-iteration trace rows shared by every optimizer, and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CSV header; column order matches [`TraceRecord`].
pub const CSV_HEADER: [&str; 12] = [
    "iteration",
    "wall_seconds",
    "epochs",
    "f",
    "grad_norm",
    "rho",
    "success",
    "sigma",
    "sample_g",
    "sample_b",
    "step_norm",
    "krylov_dim",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepClass {
    VerySuccessful,
    Successful,
    Unsuccessful,
    /// Final row describing the returned iterate; no step was taken.
    Terminal,
}

impl StepClass {
    pub fn accepted(self) -> bool {
        matches!(self, StepClass::VerySuccessful | StepClass::Successful)
    }
}

/// One iteration. `wall_seconds`, `epochs`, `f` and `grad_norm` describe the
/// iterate the iteration starts from: cost spent to reach it and full-data
/// values there. The remaining fields describe the step taken. Epochs count
/// gradient and Hessian-vector work only, in units of `n` per-sample
/// evaluations. Methods without a cubic model write `NaN` for `rho` and
/// `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub wall_seconds: f64,
    pub epochs: f64,
    pub f: f64,
    pub grad_norm: f64,
    pub rho: f64,
    pub success: StepClass,
    pub sigma: f64,
    pub sample_g: usize,
    pub sample_b: usize,
    pub step_norm: f64,
    pub krylov_dim: usize,
}

impl TraceRecord {
    /// Compares every field except the wall clock, treating `NaN == NaN`.
    pub fn same_path(&self, other: &TraceRecord) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.iteration == other.iteration
            && eq(self.epochs, other.epochs)
            && eq(self.f, other.f)
            && eq(self.grad_norm, other.grad_norm)
            && eq(self.rho, other.rho)
            && self.success == other.success
            && eq(self.sigma, other.sigma)
            && self.sample_g == other.sample_g
            && self.sample_b == other.sample_b
            && eq(self.step_norm, other.step_norm)
            && self.krylov_dim == other.krylov_dim
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// True if both traces took the same path (wall clock ignored).
    pub fn same_path(&self, other: &Trace) -> bool {
        self.len() == other.len() && self.records.iter().zip(&other.records).all(|(a, b)| a.same_path(b))
    }

    /// Smallest recorded objective value.
    pub fn best_f(&self) -> f64 {
        self.records.iter().map(|r| r.f).fold(f64::INFINITY, f64::min)
    }

    /// Epochs at the first row whose `f - f_star <= tol`.
    pub fn epochs_to(&self, f_star: f64, tol: f64) -> Option<f64> {
        self.records.iter().find(|r| r.f - f_star <= tol).map(|r| r.epochs)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        writer.write_record(CSV_HEADER)?;
        for r in &self.records {
            writer.serialize(r)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a trace, rejecting any header other than [`CSV_HEADER`].
    pub fn read_csv<R: Read>(r: R) -> Result<Trace> {
        let mut reader = csv::Reader::from_reader(r);
        validate_header(reader.headers()?)?;
        let records = reader.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
        Ok(Trace { records })
    }
}

fn validate_header(header: &csv::StringRecord) -> Result<()> {
    if header.iter().eq(CSV_HEADER.iter().copied()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "trace header {:?} does not match {:?}",
            header.iter().collect::<Vec<_>>(),
            CSV_HEADER
        )))
    }
}

/// Checks a CSV trace against the shared schema: exact header, parseable
/// rows, consecutive iterations and nondecreasing epochs.
pub fn validate_csv<R: Read>(r: R) -> Result<Trace> {
    let trace = Trace::read_csv(r)?;
    for (k, w) in trace.records.windows(2).enumerate() {
        if w[1].epochs < w[0].epochs {
            return Err(Error::InvalidArgument(format!("epochs decrease at row {}", k + 1)));
        }
        if w[1].iteration <= w[0].iteration {
            return Err(Error::InvalidArgument(format!("iterations not increasing at row {}", k + 1)));
        }
    }
    Ok(trace)
}
