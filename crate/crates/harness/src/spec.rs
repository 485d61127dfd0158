//! Experiment description, read from a TOML file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use scr_core::data::{generate_gaussian, load_dataset, parse_libsvm, Dataset, GaussianSpec};
use scr_core::sampling::{SamplingParams, SizeFormula};
use scr_core::scr::ScrConfig;
use scr_core::{ObjectiveModel, Regularizer};

use crate::error::{Error, Result};

pub const ENV_OUTPUT_DIR: &str = "SCR_OUTPUT_DIR";
pub const ENV_THREADS: &str = "SCR_THREADS";

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Gaussian { n: usize, d: usize, #[serde(default)] seed: u64 },
    /// A libsvm text file, or any other extension as the binary cache format.
    File { path: PathBuf, dim: Option<usize> },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DatasetSource::Gaussian { n, d, seed } => generate_gaussian(&GaussianSpec::new(*n, *d, *seed))?,
            DatasetSource::File { path, dim: Some(dim) } => {
                let file = std::io::BufReader::new(std::fs::File::open(path)?);
                parse_libsvm(file, Some(*dim))?
            }
            DatasetSource::File { path, dim: None } => load_dataset(path)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    L2,
    Nonconvex,
}

impl From<Loss> for Regularizer {
    fn from(l: Loss) -> Self {
        match l {
            Loss::L2 => Regularizer::L2,
            Loss::Nonconvex => Regularizer::NonConvex,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub regularizer: Loss,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Scr,
    Arc,
    Sgd,
    Saga,
    Newton,
    Lbfgs,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Scr => "scr",
            MethodKind::Arc => "arc",
            MethodKind::Sgd => "sgd",
            MethodKind::Saga => "saga",
            MethodKind::Newton => "newton",
            MethodKind::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub methods: Vec<MethodKind>,
    pub seeds: Vec<u64>,
    /// Full-gradient norm at which SCR, ARC, Newton and L-BFGS stop.
    pub grad_tol: f64,
    /// Suboptimality for the epochs-to-tolerance column.
    pub subopt_tol: f64,
    pub max_iterations: usize,
    /// Epoch budget for SGD and SAGA.
    pub max_epochs: f64,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    pub record_wall_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            methods: vec![MethodKind::Scr],
            seeds: vec![0],
            grad_tol: 1e-8,
            subopt_tol: 1e-6,
            max_iterations: 500,
            max_epochs: 100.0,
            output_dir: PathBuf::from("out"),
            threads: None,
            record_wall_time: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    Practical,
    Theoretical,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScrSection {
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub sigma0: f64,
    pub kappa_theta: f64,
    pub floor_fraction: f64,
    pub formula: Formula,
    pub delta: Option<f64>,
    pub m: f64,
    pub c: f64,
    pub kappa_f: f64,
    pub kappa_g: f64,
    pub max_krylov_dim: Option<usize>,
}

impl Default for ScrSection {
    fn default() -> Self {
        let c = ScrConfig::default();
        let p = SamplingParams::default();
        ScrSection {
            gamma: c.gamma,
            eta1: c.eta1,
            eta2: c.eta2,
            sigma0: c.sigma0,
            kappa_theta: c.kappa_theta,
            floor_fraction: p.floor_fraction,
            formula: Formula::Practical,
            delta: p.delta,
            m: p.m,
            c: p.c,
            kappa_f: p.kappa_f,
            kappa_g: p.kappa_g,
            max_krylov_dim: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSection {
    pub minibatch_fraction: f64,
    /// Step sizes as multiples of `1 / L`, with `L` a power-iteration
    /// estimate of the Hessian norm at the start.
    pub step_grid: Vec<f64>,
}

impl Default for SgdSection {
    fn default() -> Self {
        SgdSection { minibatch_fraction: 0.1, step_grid: vec![1.0, 0.1, 0.01, 0.001] }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SagaSection {
    pub step_grid: Vec<f64>,
    /// Largest gradient table, in f64 entries.
    pub memory_budget: usize,
}

impl Default for SagaSection {
    fn default() -> Self {
        SagaSection { step_grid: vec![1.0, 0.1, 0.01, 0.001], memory_budget: 1 << 28 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsSection {
    pub memory: usize,
}

impl Default for LbfgsSection {
    fn default() -> Self {
        LbfgsSection { memory: 20 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulesSection {
    /// Iterations to reach `n` for the linear and exponential schedules.
    pub totals: Vec<usize>,
}

impl Default for SchedulesSection {
    fn default() -> Self {
        SchedulesSection { totals: vec![5, 10, 20, 40] }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub loss: LossSpec,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub scr: ScrSection,
    #[serde(default)]
    pub sgd: SgdSection,
    #[serde(default)]
    pub saga: SagaSection,
    #[serde(default)]
    pub lbfgs: LbfgsSection,
    #[serde(default)]
    pub schedules: SchedulesSection,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec = toml::from_str(&std::fs::read_to_string(path)?)?;
        spec.apply_env();
        spec.validate()?;
        Ok(spec)
    }

    /// `SCR_OUTPUT_DIR` and `SCR_THREADS` override the file.
    pub fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            self.run.output_dir = PathBuf::from(dir);
        }
        if let Some(t) = std::env::var(ENV_THREADS).ok().and_then(|t| t.parse().ok()) {
            self.run.threads = Some(t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.run.methods.is_empty() {
            return invalid("at least one method is required");
        }
        if self.run.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        if !(self.loss.lambda >= 0.0 && self.loss.lambda.is_finite()) {
            return invalid("lambda must be >= 0");
        }
        if self.run.methods.contains(&MethodKind::Sgd) && self.sgd.step_grid.iter().any(|&a| !(a > 0.0)) {
            return invalid("SGD step grid entries must be positive");
        }
        if self.run.methods.contains(&MethodKind::Saga) && self.saga.step_grid.iter().any(|&a| !(a > 0.0)) {
            return invalid("SAGA step grid entries must be positive");
        }
        self.scr_config(0).validate()?;
        Ok(())
    }

    pub fn model(&self) -> Result<ObjectiveModel> {
        let data = self.dataset.load()?;
        Ok(ObjectiveModel::new(Arc::new(data), self.loss.regularizer.into(), self.loss.lambda)?)
    }

    pub fn scr_config(&self, seed: u64) -> ScrConfig {
        let s = &self.scr;
        ScrConfig {
            gamma: s.gamma,
            eta1: s.eta1,
            eta2: s.eta2,
            sigma0: s.sigma0,
            kappa_theta: s.kappa_theta,
            sampling: SamplingParams {
                m: s.m,
                c: s.c,
                kappa_f: s.kappa_f,
                kappa_g: s.kappa_g,
                delta: s.delta,
                floor_fraction: s.floor_fraction,
                formula: match s.formula {
                    Formula::Practical => SizeFormula::Practical,
                    Formula::Theoretical => SizeFormula::Theoretical,
                },
            },
            max_iterations: self.run.max_iterations,
            grad_tol: self.run.grad_tol,
            seed,
            max_krylov_dim: s.max_krylov_dim,
            record_wall_time: self.run.record_wall_time,
            ..ScrConfig::default()
        }
    }
}
