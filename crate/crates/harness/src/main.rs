use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use scr_core::data::{generate_gaussian, load_dataset, parse_libsvm, save_dataset, GaussianSpec};
use scr_harness::spec::{ExperimentSpec, ENV_OUTPUT_DIR, ENV_THREADS};
use scr_harness::{run_experiment, run_schedule_comparison, summarize, verify, VerifyOptions};

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_INVARIANT_FAILURE: u8 = 2;

/// Sub-sampled cubic regularization experiments.
#[derive(Parser)]
#[command(name = "scr", version)]
struct Cli {
    /// Seed; replaces the seed list of a config, or the dataset seed for `prepare`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = ENV_THREADS)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = ENV_OUTPUT_DIR)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset file: a synthetic Gaussian set, or a libsvm file
    /// converted to the binary format.
    Prepare {
        /// Source libsvm file; without it a Gaussian set is generated.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Feature count for `--from` when the file does not reach it.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        d: usize,
        /// Destination; `.svm`, `.libsvm` and `.txt` are written as text.
        output: PathBuf,
    },
    /// Run every method and seed of a config.
    Run { config: PathBuf },
    /// Compare adaptive, linear, exponential and full-sample schedules.
    CompareSchedules { config: PathBuf },
    /// Run the property suite; exits 2 on any failed check.
    Verify {
        /// Inject this penalty growth factor into the solver runs.
        #[arg(long)]
        tamper_gamma: Option<f64>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Rebuild summary.csv from the trace files of an experiment directory.
    Summarize {
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        subopt_tol: f64,
    },
}

fn load_spec(cli: &Cli, path: &std::path::Path) -> scr_harness::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = cli.seed {
        spec.run.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        spec.run.output_dir = out.clone();
    }
    if cli.threads.is_some() {
        spec.run.threads = cli.threads;
    }
    Ok(spec)
}

fn init_pool(threads: Option<usize>) {
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            error!("thread pool: {e}");
        }
    }
}

fn run(cli: &Cli) -> scr_harness::Result<u8> {
    match &cli.command {
        Command::Prepare { from, dim, n, d, output } => {
            let data = match from {
                Some(path) if dim.is_some() => parse_libsvm(std::io::BufReader::new(std::fs::File::open(path)?), *dim)?,
                Some(path) => load_dataset(path)?,
                None => generate_gaussian(&GaussianSpec::new(*n, *d, cli.seed.unwrap_or(0)))?,
            };
            if let Some(dir) = output.parent() {
                std::fs::create_dir_all(dir)?;
            }
            save_dataset(&data, output)?;
            println!("wrote {} ({} samples, {} features)", output.display(), data.n(), data.d());
            Ok(0)
        }
        Command::Run { config } => {
            let spec = load_spec(cli, config)?;
            init_pool(spec.run.threads);
            let report = run_experiment(&spec)?;
            println!("f* = {:.15e}", report.f_star);
            for r in &report.summary {
                println!(
                    "{:<20} runs {:>3}  failed {:>2}  median subopt {:.3e}  reached {:>3}  median epochs {:.2}",
                    r.method, r.runs, r.failed, r.median_final_subopt, r.reached, r.median_epochs_to_tol
                );
            }
            println!("outputs in {}", spec.run.output_dir.display());
            Ok(if report.failures() > 0 { EXIT_RUN_FAILURE } else { 0 })
        }
        Command::CompareSchedules { config } => {
            let spec = load_spec(cli, config)?;
            init_pool(spec.run.threads);
            let report = run_schedule_comparison(&spec)?;
            for r in &report.summary {
                println!("{:<16} reached {:>3}/{:<3}  median epochs {:.2}", r.method, r.reached, r.runs, r.median_epochs_to_tol);
            }
            println!("outputs in {}", spec.run.output_dir.display());
            Ok(0)
        }
        Command::Verify { tamper_gamma, trials } => {
            init_pool(cli.threads);
            let opts = VerifyOptions { seed: cli.seed.unwrap_or(0), tamper_gamma: *tamper_gamma, bernstein_trials: *trials };
            let report = verify(&opts)?;
            print!("{report}");
            Ok(if report.all_passed() { 0 } else { EXIT_INVARIANT_FAILURE })
        }
        Command::Summarize { dir, subopt_tol } => {
            let dir = dir.clone().or_else(|| cli.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
            for r in summarize(&dir, *subopt_tol)? {
                println!("{:<20} runs {:>3}  median subopt {:.3e}  reached {:>3}", r.method, r.runs, r.median_final_subopt, r.reached);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_RUN_FAILURE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUN_FAILURE)
        }
    }
}
