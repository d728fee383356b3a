//! Command-line front end for `nestmax`.
//!
//! Every command reads a JSON [`config::RunConfig`], computes all of its
//! outputs in memory and only then writes them, together with a
//! `provenance.json` recording the configuration digest, the seed and the
//! digests of every input and output.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::path::PathBuf;

use clap::Parser;

pub use commands::{run, CommandKind, Invocation, Outputs};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "nestmax", version, about = "Nested multivariate max-stable processes")]
pub struct Cli {
    pub command: CommandKind,
    #[arg(long)]
    pub config: PathBuf,
    /// Long-format maxima CSV; overrides the configuration.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of chains for `fit`.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Data are already unit Fréchet; skip marginal fitting.
    #[arg(long)]
    pub unit_frechet: bool,
    /// GEV margins CSV (leaf, site_id, mu, sigma, xi).
    #[arg(long)]
    pub margins: Option<PathBuf>,
    /// Chain CSV written by `fit`; repeat for several chains.
    #[arg(long = "chain")]
    pub chain_files: Vec<PathBuf>,
}

/// Default seed when neither the flag nor the configuration sets one.
pub const DEFAULT_SEED: u64 = 1;

impl Cli {
    /// Resolves flags against the configuration file without running anything.
    pub fn invocation(&self) -> CliResult<(Invocation, PathBuf)> {
        let (config, config_bytes) = config::RunConfig::load(&self.config)?;
        let out = self
            .out
            .clone()
            .or_else(|| config.out.clone())
            .ok_or_else(|| CliError::validation("no output directory: pass --out or set `out`"))?;
        let inv = Invocation {
            data: self.data.clone().or_else(|| config.data.clone()),
            margins: self.margins.clone().or_else(|| config.margins.clone()),
            seed: self.seed.or(config.seed).unwrap_or(DEFAULT_SEED),
            chain_files: self.chain_files.clone(),
            chains: self.chains,
            unit_frechet: self.unit_frechet,
            config,
            config_bytes,
        };
        Ok((inv, out))
    }

    /// Runs the command in a pool of `--workers` threads and writes its outputs.
    pub fn execute(&self) -> CliResult<Outputs> {
        let (inv, out_dir) = self.invocation()?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(CliError::validation("--workers must be at least 1"));
            }
            pool = pool.num_threads(w);
        }
        let pool = pool.build().map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
        let outputs = pool.install(|| run(self.command, &inv))?;
        outputs.write(&out_dir)?;
        Ok(outputs)
    }
}
