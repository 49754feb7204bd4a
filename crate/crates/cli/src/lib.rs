//! Config-driven experiment runner for the decoding laboratory.

pub mod config;
mod runs;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{load_config, DenoiserSpec, ExperimentConfig, InterveneProtocol, SourceKind};

pub use runs::{check_run, RunError};

#[derive(Debug, Parser)]
#[command(
    name = "mdlm-lab",
    version,
    about = "Masked-diffusion decoding laboratory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set corpus.n=100` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Run directory (overrides `output_dir`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// `toy:PATH`, `oracle`, `remote:URL` or `stub[:SEED]`.
    #[arg(long)]
    pub denoiser: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic (or ingested) corpus.
    GenCorpus(Common),
    /// Train the toy denoiser.
    Train(Common),
    /// Decode every instance at one deliberation percentage.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: Option<u8>,
    },
    /// Decode under every percentage of a list.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        p_list: Option<Vec<u8>>,
    },
    /// Integrity or Reliance Test.
    Intervene {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolFlag>,
        #[arg(long, value_enum)]
        source: Option<SourceFlag>,
    },
    /// Re-analyze a run directory; `--check` verifies its invariants.
    Analyze {
        run_dir: PathBuf,
        #[arg(long)]
        check: bool,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ProtocolFlag {
    Integrity,
    Reliance,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SourceFlag {
    GroundTruth,
    Corrupted,
}

/// Resolves file, `--set` overrides and dedicated flags, in that order.
pub fn resolve_config(
    common: &Common,
    extra: impl FnOnce(&mut ExperimentConfig),
) -> Result<ExperimentConfig, RunError> {
    let mut cfg = load_config(common.config.as_deref(), &common.set)
        .map_err(|e| RunError::Config(e.to_string()))?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(d) = &common.denoiser {
        let spec = DenoiserSpec::parse_flag(d).map_err(RunError::Config)?;
        // a bare `oracle` flag keeps oracle settings from the file
        if !(matches!(spec, DenoiserSpec::Oracle(_))
            && matches!(cfg.denoiser, DenoiserSpec::Oracle(_)))
        {
            cfg.denoiser = spec;
        }
    }
    extra(&mut cfg);
    cfg.validate()
        .map_err(|e| RunError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Runs one command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::GenCorpus(c) => resolve_config(&c, |_| {}).and_then(|cfg| runs::gen_corpus(&cfg)),
        Command::Train(c) => resolve_config(&c, |_| {}).and_then(|cfg| runs::train(&cfg)),
        Command::Decode { common, p } => resolve_config(&common, |cfg| {
            if let Some(p) = p {
                cfg.constraints.deliberation_pct = p;
            }
        })
        .and_then(|cfg| runs::decode(&cfg)),
        Command::Sweep { common, p_list } => resolve_config(&common, |cfg| {
            if let Some(l) = p_list {
                cfg.constraints.p_list = l;
            }
        })
        .and_then(|cfg| runs::sweep(&cfg)),
        Command::Intervene {
            common,
            protocol,
            source,
        } => resolve_config(&common, |cfg| {
            match protocol {
                Some(ProtocolFlag::Integrity) => {
                    cfg.intervene.protocol = InterveneProtocol::Integrity
                }
                Some(ProtocolFlag::Reliance) => {
                    cfg.intervene.protocol = InterveneProtocol::Reliance
                }
                None => {}
            }
            match source {
                Some(SourceFlag::GroundTruth) => cfg.intervene.source = SourceKind::GroundTruth,
                Some(SourceFlag::Corrupted) => cfg.intervene.source = SourceKind::Corrupted,
                None => {}
            }
        })
        .and_then(|cfg| runs::intervene(&cfg)),
        Command::Analyze { run_dir, check } => runs::analyze(&run_dir, check),
    };
    match outcome {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Convenience for tests: parses argv-style arguments and runs them.
pub fn run_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}

pub fn default_config_text() -> &'static str {
    include_str!("../configs/default.toml")
}
