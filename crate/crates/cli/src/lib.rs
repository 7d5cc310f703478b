//! Command-line front end: argument model, configuration merge and dispatch.

pub mod commands;
pub mod config;
pub mod data;
pub mod output;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser};

pub use commands::Command;

/// Exit code for usage errors (bad flags, unknown subcommand, bad config).
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running a command.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "scopelens", version, about = "Inspect what CNN units respond to")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Network spec file, or a built-in: places-alexnet, planted, texture.
    #[arg(long, global = true, default_value = "places-alexnet")]
    pub net: String,

    /// Weight blob file. Spec-file networks without weights get seeded random weights.
    #[arg(long, global = true, value_name = "PATH")]
    pub weights: Option<PathBuf>,

    /// Image directory, or an index JSON with `image` (and `mask`) entries.
    #[arg(long, global = true, value_name = "PATH")]
    pub dataset: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory for machine-readable outputs.
    #[arg(long, global = true, default_value = "scopelens-out", value_name = "DIR")]
    pub out: PathBuf,

    /// Worker threads for occlusion batches and dataset scans.
    #[arg(long, global = true, env = "SCOPELENS_THREADS")]
    pub threads: Option<usize>,
}

/// Parse `argv` (including the program name), merging a `--config` file if
/// one is given. Help and version requests come back as `Err` too.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, ParseFailure> {
    // Found by scanning, since the config may supply required flags.
    let (Some(path), Some(command)) = (config_flag(&argv), subcommand_name(&argv)) else {
        return parse_once(&argv);
    };
    let cfg = config::RunConfig::load(&path).map_err(ParseFailure::Config)?;
    parse_once(&cfg.merge_into(&argv, &command))
}

fn config_flag(argv: &[OsString]) -> Option<PathBuf> {
    let mut args = argv.iter().skip(1).map(|a| a.to_string_lossy());
    while let Some(a) = args.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return args.next().map(|v| PathBuf::from(v.as_ref()));
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn subcommand_name(argv: &[OsString]) -> Option<String> {
    let cmd = Cli::command();
    let names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
    argv.iter()
        .skip(1)
        .map(|a| a.to_string_lossy())
        .find(|a| names.contains(&a.as_ref()))
        .map(|a| a.into_owned())
}

fn parse_once(argv: &[OsString]) -> Result<Cli, ParseFailure> {
    let matches = Cli::command()
        .try_get_matches_from(argv)
        .map_err(ParseFailure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ParseFailure::Clap)
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Config(anyhow::Error),
}

/// Run the CLI and return the process exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    if let Some(n) = cli.global.threads {
        // A pool may already exist when run() is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
