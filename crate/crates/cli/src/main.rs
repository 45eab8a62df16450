use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixsemi_cli::commands;
use mixsemi_cli::config::parse_resolution;
use mixsemi_cli::RunConfig;
use mixsemi_core::metrics::Extent;
use mixsemi_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mixsemi", version, about = "Semi-supervised training with input and latent mixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`key = value` lines); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and save model.bin and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train a single run with this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate models on the test split and write metrics.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model file or training output directory; repeat to aggregate.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
    },
    /// Rasterize the decision boundary of a 2-input model to boundary.pgm.
    Boundary {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// xmin,xmax,ymin,ymax
        #[arg(long, allow_hyphen_values = true)]
        extent: Option<String>,
        /// ROWSxCOLS
        #[arg(long)]
        resolution: Option<String>,
    },
    /// Write the reliability table of a model on the test split.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Write the generated dataset partitions as CSV.
    Export {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    Ok((cfg, out))
}

fn parse_extent(s: &str) -> Result<Extent> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("extent must be xmin,xmax,ymin,ymax, got {s:?}")))?;
    if v.len() != 4 {
        return Err(Error::Usage(format!("extent needs 4 values, got {s:?}")));
    }
    Extent::new(v[0], v[1], v[2], v[3])
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, seed } => {
            let (cfg, out) = load(&common)?;
            for r in commands::cmd_train(&cfg, seed, &out)? {
                println!("trained seed={} best_epoch={} dir={}", r.seed, r.history.best_epoch.map_or(-1, |e| e as i64), r.dir.display());
            }
        }
        Command::Eval { common, model } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_eval(&cfg, &model, &out)?;
            println!("wrote {}", out.join("metrics.csv").display());
        }
        Command::Boundary {
            common,
            model,
            extent,
            resolution,
        } => {
            let (cfg, out) = load(&common)?;
            let extent = match extent {
                Some(e) => parse_extent(&e)?,
                None => cfg.boundary_extent,
            };
            let resolution = match resolution {
                Some(r) => parse_resolution(&r)?,
                None => cfg.boundary_resolution,
            };
            let (_, roughness) = commands::cmd_boundary(&model, extent, resolution, &out)?;
            println!("roughness={roughness}");
        }
        Command::Calibrate { common, model, bins } => {
            let (cfg, out) = load(&common)?;
            let b = commands::cmd_calibrate(&cfg, &model, bins.unwrap_or(cfg.n_bins), &out)?;
            println!("ece={}", b.ece);
        }
        Command::Export { common } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_export(&cfg, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
