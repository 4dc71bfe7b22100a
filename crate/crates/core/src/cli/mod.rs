//! Command-line front end: `accountant`, `run`, `report` and `scenarios`.
//!
//! Exit codes are a stable contract: 0 success, 2 usage or configuration
//! problems (including missing checkpoints), 3 numerical failure mid-run.

pub mod accountant;
pub mod report;
pub mod run;
pub mod scenario;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
pub use accountant::{accountant_rows, AccountantArgs, AccountantRow};
pub use report::{regenerate, ReportKind, ReportOptions};
pub use run::{run_scenario, RunManifest};
pub use scenario::{DeltaPreset, ScenarioConfig};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "FEDGEN_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fedgen", version, about = "Differentially private federated generative models, simulated")]
pub struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Privacy spend for one or more parameter rows.
    Accountant(AccountantCmd),
    /// Execute a scenario and write a run directory.
    Run(RunCmd),
    /// Regenerate a report from a run's checkpoints.
    Report(ReportCmd),
    /// List bundled scenarios, or print one.
    Scenarios { name: Option<String> },
}

#[derive(Debug, Args)]
pub struct AccountantCmd {
    #[arg(long = "qN", required = true)]
    pub cohort_size: Vec<usize>,
    #[arg(long = "N", required = true)]
    pub population: Vec<usize>,
    #[arg(long = "z", required = true)]
    pub noise_multiplier: Vec<f64>,
    #[arg(long = "S")]
    pub clip: Vec<f64>,
    #[arg(long, required = true)]
    pub rounds: Vec<u64>,
    #[arg(long)]
    pub delta: Vec<f64>,
    #[arg(long, value_enum)]
    pub delta_preset: Option<DeltaPreset>,
    /// Print CSV instead of an aligned table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct RunCmd {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scenario's delta preset.
    #[arg(long, value_enum)]
    pub delta_preset: Option<DeltaPreset>,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    #[arg(long = "run")]
    pub run_dir: PathBuf,
    /// One of grid, oov-profile, top-oov, histogram.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to one model of the run.
    #[arg(long)]
    pub model: Option<String>,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Output directory precedence: flag, environment, scenario, `runs/<name>`.
pub fn resolve_out(flag: Option<&Path>, env: Option<OsString>, cfg: &ScenarioConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or(env.filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name))
}

fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Accountant(a) => {
            let rows = accountant_rows(&AccountantArgs {
                cohort_size: a.cohort_size,
                population: a.population,
                noise_multiplier: a.noise_multiplier,
                clip: a.clip,
                rounds: a.rounds,
                delta: a.delta,
                delta_preset: a.delta_preset,
            })?;
            Ok(if a.csv {
                accountant::rows_to_csv(&rows)
            } else {
                accountant::rows_to_table(&rows)
            })
        }
        Command::Run(r) => {
            let mut cfg = ScenarioConfig::load(&r.scenario)?;
            if let Some(seed) = r.seed {
                cfg.seed = seed;
            }
            if let Some(p) = r.delta_preset {
                cfg.fed.delta_preset = p;
            }
            cfg.validate()?;
            let out = resolve_out(r.out.as_deref(), std::env::var_os(OUT_ENV), &cfg);
            let m = run_scenario(&cfg, &out)?;
            let mut msg = format!("run {} written to {}\n", m.run_id, out.display());
            for model in &m.models {
                match (&model.skipped, model.epsilon) {
                    (Some(why), _) => msg += &format!("  {}: skipped ({why})\n", model.name),
                    (None, Some(eps)) => msg += &format!("  {}: N={} epsilon={eps:.4}\n", model.name, model.population),
                    (None, None) => msg += &format!("  {}: N={} no noise, epsilon=inf\n", model.name, model.population),
                }
            }
            Ok(msg)
        }
        Command::Report(r) => {
            let kind = ReportKind::parse(&r.kind)?;
            let opts = ReportOptions {
                samples: r.samples,
                seed: r.seed,
                model: r.model,
            };
            let written = regenerate(&r.run_dir, kind, &r.out, &opts)?;
            Ok(written.iter().map(|p| format!("{}\n", p.display())).collect())
        }
        Command::Scenarios { name: None } => Ok(scenario::bundled_names().map(|n| format!("{n}\n")).collect()),
        Command::Scenarios { name: Some(n) } => {
            scenario::bundled(&n).map(str::to_string).ok_or_else(|| Error::Config(format!("no bundled scenario `{n}`")))
        }
    }
}

/// Parses `args`, runs the command and returns the exit code. Output goes
/// to stdout, diagnostics to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(|| execute(cli))),
        None => execute(cli),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
