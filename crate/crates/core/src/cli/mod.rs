//! Command-line experiment driver.
//!
//! Exit codes: 0 when every verdict passes, 1 when a statistical check fails,
//! 2 for configuration or usage errors, 3 when a computation aborts.

pub mod config;
pub mod experiments;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ExperimentConfig, Overrides};
use experiments::{CenterMode, Report, RunOptions};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hard-rods", version, about = "Hard-rod fluctuation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Batch flux against enumeration and closed forms against integrals.
    Oracle(Common),
    /// Law of large numbers for the mass density and field means.
    Lln(Common),
    /// Covariance and normality of static fluctuation fields.
    StaticClt(Common),
    /// Effective-velocity drift and transport of fluctuations.
    Euler(Common),
    /// Tagged-rod and field fluctuations at diffusive times.
    Diffusive(Common),
    /// Every experiment in turn.
    All(Common),
    /// Dump one sampled configuration as CSV.
    Sample(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Center {
    Empirical,
    Asymptotic,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Output directory (default: the `out` entry of the configuration).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// How fluctuation fields are centered.
    #[arg(long, value_enum, default_value_t = Center::Empirical)]
    pub center: Center,
    /// Replace the configured epsilons (comma separated, decreasing).
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    /// Suppress progress lines on standard error.
    #[arg(long)]
    pub quiet: bool,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Oracle(c)
            | Command::Lln(c)
            | Command::StaticClt(c)
            | Command::Euler(c)
            | Command::Diffusive(c)
            | Command::All(c)
            | Command::Sample(c) => c,
        }
    }
}

fn load(common: &Common) -> crate::Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: common.seed,
        replicas: common.replicas,
        out: common.out.as_ref().map(|p| p.display().to_string()),
        epsilons: common.epsilon.clone(),
    };
    ExperimentConfig::load(&common.config)?.apply(&overrides)
}

type Experiment = fn(&ExperimentConfig, &RunOptions) -> crate::Result<Report>;

fn experiments_for(command: &Command) -> Vec<Experiment> {
    match command {
        Command::Oracle(_) => vec![experiments::oracle],
        Command::Lln(_) => vec![experiments::lln],
        Command::StaticClt(_) => vec![experiments::static_clt],
        Command::Euler(_) => vec![experiments::euler],
        Command::Diffusive(_) => vec![experiments::diffusive],
        Command::All(_) => vec![
            experiments::oracle,
            experiments::lln,
            experiments::static_clt,
            experiments::euler,
            experiments::diffusive,
        ],
        Command::Sample(_) => Vec::new(),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let common = cli.command.common();
    let cfg = match load(common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let dir = PathBuf::from(&cfg.out);
    if let Command::Sample(_) = cli.command {
        return match experiments::sample_dump(&cfg).and_then(|c| output::write_sample(&c, &cfg, &dir)) {
            Ok(path) => {
                eprintln!("wrote {}", path.display());
                EXIT_PASS
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_INTERNAL
            }
        };
    }
    let opts = RunOptions {
        threads: common.threads,
        center: match common.center {
            Center::Empirical => CenterMode::Empirical,
            Center::Asymptotic => CenterMode::Asymptotic,
        },
        progress: !common.quiet,
    };
    let mut all_pass = true;
    for experiment in experiments_for(&cli.command) {
        let report = match experiment(&cfg, &opts) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INTERNAL;
            }
        };
        if let Err(e) = output::write_report(&report, &cfg, &dir) {
            eprintln!("error: {e}");
            return EXIT_INTERNAL;
        }
        for v in &report.verdicts {
            eprintln!("{} {} statistic={:?} target={:?}", if v.pass { "PASS" } else { "FAIL" }, v.test_id, v.statistic, v.target);
        }
        for note in &report.notes {
            eprintln!("note: {note}");
        }
        all_pass &= report.pass();
    }
    if all_pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}
