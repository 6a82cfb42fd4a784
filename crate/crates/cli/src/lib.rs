//! Pipeline subcommands behind the `labelforge` binary.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use labelforge_core::Error as CoreError;

pub use commands::ProviderFailure;
pub use config::{ConfigError, Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_INCOMPLETE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "labelforge",
    version,
    about = "Optimize ICL label tokens, run N-shot sweeps, report rank consistency"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "labelforge.toml")]
    pub config: PathBuf,

    #[command(flatten)]
    pub overrides: OverrideArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OverrideArgs {
    /// Run directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Model gateway base URL.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Labeling sample sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Demonstration counts, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    /// Demonstration draws per N
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Hill-climb restarts per K
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// Sweep cap per hill climb
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            output_dir: a.output_dir,
            endpoint: a.endpoint,
            ks: a.ks,
            ns: a.ns,
            runs: a.runs,
            restarts: a.restarts,
            max_iterations: a.max_iterations,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one label set per K and write labelsets/K<k>.json.
    FitLabels,
    /// Run or resume the N-shot sweep over all fitted label sets.
    Eval {
        /// Stop after evaluating this many new cells.
        #[arg(long)]
        cell_limit: Option<usize>,
    },
    /// Build learning curves and correlation tables from the sweep results.
    Report,
    /// Print the candidate vocabulary.
    Vocab,
    /// Score label tokens after a prompt.
    Score {
        #[arg(long)]
        prompt: String,
        /// Label tokens, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        labels: Vec<String>,
    },
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(&cli.config, &cli.overrides.into())?;
    match cli.command {
        Command::FitLabels => commands::fit_labels(&cfg, out).map(drop),
        Command::Eval { cell_limit } => commands::eval(&cfg, cell_limit, out).map(drop),
        Command::Report => commands::report(&cfg, out).map(drop),
        Command::Vocab => commands::vocab(&cfg, out).map(drop),
        Command::Score { prompt, labels } => commands::score(&cfg, &prompt, &labels, out).map(drop),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| ConfigError(e.to_string()))?;
    execute(cli, out)
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<ProviderFailure>() {
            return EXIT_PROVIDER;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            if e.is_provider_error() {
                return EXIT_PROVIDER;
            }
            match e {
                CoreError::Incomplete(_) => return EXIT_INCOMPLETE,
                CoreError::FingerprintMismatch { .. }
                | CoreError::InvalidTemplate(_)
                | CoreError::InvalidSplit(_) => return EXIT_CONFIG,
                _ => {}
            }
        }
    }
    EXIT_FAILURE
}
