//! Command-line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semistop::harness::{self, ExperimentConfig, HarnessError};
use semistop::stoprules::Rule;

#[derive(Parser)]
#[command(name = "semistop", version, about = "Stopping rules for semi-convergent CT reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run a canned experiment by tag.
    Reproduce {
        tag: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run every combination of the `|`-separated values in a config file.
    Grid {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Args, Clone)]
struct Flags {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long = "early-stop")]
    early_stop: Option<Rule>,
    #[arg(long = "dump-matrix")]
    dump_matrix: bool,
    #[arg(long)]
    deterministic: bool,
}

impl Flags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(k) = self.max_iters {
            cfg.max_iters = k;
        }
        if let Some(r) = self.early_stop {
            if !cfg.rules.contains(&r) {
                cfg.rules.push(r);
            }
            cfg.early_stop = Some(r);
        }
        cfg.dump_matrix |= self.dump_matrix;
        cfg.deterministic |= self.deterministic;
    }
}

fn read(path: &PathBuf) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(HarnessError::from)
}

fn main_inner(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, flags } => {
            let mut cfg = harness::parse_config(&read(&config)?)?;
            if let Some(out) = &flags.out {
                cfg.out = out.clone();
            }
            flags.apply(&mut cfg);
            let o = harness::run_experiment(&cfg)?;
            for row in &o.summary {
                println!("{}: k = {}", row.rule, row.k_stop.map_or("-".into(), |k| k.to_string()));
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::Reproduce { tag, flags } => {
            let out = flags.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&tag));
            let report = harness::reproduce(&tag, &out, |c| flags.apply(c))?;
            println!("{}", std::fs::read_to_string(&report.note)?);
        }
        Command::Grid { config, flags } => {
            let mut points = harness::parse_grid(&read(&config)?)?;
            let out = flags.out.clone().unwrap_or_else(|| points.first().map_or("out".into(), |p| p.config.out.clone()));
            for p in &mut points {
                flags.apply(&mut p.config);
            }
            let g = harness::run_grid(points, &out)?;
            println!("wrote {}", g.summary.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
