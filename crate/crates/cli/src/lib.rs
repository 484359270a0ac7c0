//! `ppscert` command-line front end.
//!
//! Exit codes: 0 success or PASS, 1 FAIL, 2 config or oracle error,
//! 3 estimator error, 4 ledger with a term that cannot be certified.

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt::Display;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "PPSCERT_OUT";
const DEFAULT_OUT: &str = "ppscert-out";

#[derive(Debug, Parser)]
#[command(name = "ppscert", version, about = "Probabilistic safety certification on analyzable testbeds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the exact failure probability of the configured bed.
    Truth(Common),
    /// Run the configured estimator; writes report.json and diagnostics.csv.
    Estimate(Common),
    /// Verify the configured safe region; writes region.json.
    Region(Common),
    /// Bound the environment and system gap terms; writes gap.json.
    Gap(Common),
    /// Full pipeline against theta; writes certificate.json.
    Certify(Common),
    /// Replay the estimate over the sweep axis; writes sweep.csv.
    Sweep(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config output_dir, then $PPSCERT_OUT, then ./ppscert-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Estimator(ppscert_core::Error),
    Uncertified(String),
}

impl Failure {
    pub fn config(e: impl Display) -> Self {
        Failure::Config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Estimator(_) => 3,
            Failure::Uncertified(_) => 4,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Estimator(e) => write!(f, "{e}"),
            Failure::Uncertified(m) => write!(f, "refusing to certify: {m}"),
        }
    }
}

impl From<ppscert_core::Error> for Failure {
    fn from(e: ppscert_core::Error) -> Self {
        Failure::Estimator(e)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("ppscert: {failure}");
            failure.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    let (common, action): (Common, fn(&commands::Context) -> Result<i32, Failure>) = match command {
        Command::Truth(c) => (c, commands::truth),
        Command::Estimate(c) => (c, commands::estimate),
        Command::Region(c) => (c, commands::region),
        Command::Gap(c) => (c, commands::gap),
        Command::Certify(c) => (c, commands::certify),
        Command::Sweep(c) => (c, commands::sweep),
    };
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed_override {
        config.seed = seed;
    }
    let out = common
        .out
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let ctx = commands::Context { config, out };
    match common.workers {
        Some(k) => ppscert_core::sampling::with_workers(k, || action(&ctx)).map_err(Failure::config)?,
        None => action(&ctx),
    }
}
