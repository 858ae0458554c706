//! Command-line front-end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, MeasureConfig};
use crate::error::{Error, Result};
use crate::experiment::{evolve_all, walk_all};
use crate::report::{measure_tree, verify_outputs, Summary};

pub const OUT_ENV: &str = "LANDSCAPE_LAB_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "landscape-lab",
    version,
    about = "Fitness landscape analysis of grammar-encoded CNNs"
)]
pub struct Cli {
    /// Output root. The LANDSCAPE_LAB_OUT environment variable takes precedence.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Selective walks for every configured dataset and mutation kind.
    Walk(ConfigArg),
    /// Evolutionary runs for every configured dataset and mutation kind.
    Evolve(ConfigArg),
    /// Autocorrelation and entropy reports for the walk traces under a directory.
    Measure {
        /// Directory to scan; defaults to the output root.
        trace_dir: Option<PathBuf>,
        /// Read the `measures` block (lags, threshold) from this config.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Walk, evolve and measure, then write a consolidated summary.
    Reproduce(ConfigArg),
}

fn out_root(flag: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("out")),
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Config> {
    let mut cfg = Config::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_summary(s: &Summary) {
    for c in &s.cells {
        let ks: Vec<String> = c
            .train
            .iter()
            .map(|st| format!("k={}:{}", st.k, st.classification))
            .collect();
        println!("{}: R_f={:.4} train {}", c.config, c.r_f(), ks.join(" "));
    }
}

fn measure(root: &Path, cfg: &MeasureConfig) -> Result<Summary> {
    let s = measure_tree(root, cfg)?;
    verify_outputs(root)?;
    Ok(s)
}

pub fn run(cli: Cli) -> Result<()> {
    let out = out_root(cli.out.as_deref());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::config("--jobs: must be at least 1"));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("--jobs: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Walk(a) => {
            let cfg = load(&a.config, cli.seed)?;
            for m in walk_all(&cfg, &out)? {
                let evals: usize = m.walks.iter().map(|w| w.neighbor_evaluations).sum();
                println!(
                    "{}/{}: {} walks, {evals} neighbor evaluations",
                    m.dataset,
                    m.mutation,
                    m.walks.len()
                );
            }
            verify_outputs(&out).map(drop)
        }
        Command::Evolve(a) => {
            let cfg = load(&a.config, cli.seed)?;
            for m in evolve_all(&cfg, &out)? {
                let evals: usize = m.runs.iter().map(|r| r.evaluations).sum();
                println!(
                    "{}/{}: {} runs, {evals} evaluations",
                    m.dataset,
                    m.mutation,
                    m.runs.len()
                );
            }
            verify_outputs(&out).map(drop)
        }
        Command::Measure { trace_dir, config } => {
            let mcfg = match config {
                Some(p) => load(p, cli.seed)?.measures,
                None => MeasureConfig::default(),
            };
            let root = trace_dir.clone().unwrap_or_else(|| out.clone());
            print_summary(&measure(&root, &mcfg)?);
            Ok(())
        }
        Command::Reproduce(a) => {
            let cfg = load(&a.config, cli.seed)?;
            walk_all(&cfg, &out)?;
            evolve_all(&cfg, &out)?;
            print_summary(&measure(&out, &cfg.measures)?);
            Ok(())
        }
    })
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
