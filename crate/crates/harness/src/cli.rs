//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use fetrpo_core::env::InterferenceEnv;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessError, Result};
use crate::experiment::{self, baseline_sweep, run_experiment, write_baseline_csv};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "fetrpo", version, about = "Faded-experience TRPO for interference-channel power control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed and write per-seed and averaged learning curves.
    Train(Common),
    /// Score a checkpoint against WMMSE, random and maximum power.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
    },
    /// Per-draw sum rates of the three reference allocators.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Channel draws per seed (default: eval_episodes × episode_len).
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_name = "LIST")]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Full-length run: L = 1300, N = 10000, T = 500.
    #[arg(long)]
    long_run: bool,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if self.long_run {
            cfg.apply_long_run();
        }
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        if let Some(seeds) = &self.seeds {
            cfg.set("seeds", seeds)?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn command() -> clap::Command {
    let keys = format!("Config keys (for --config files and --set):\n{}", ExperimentConfig::key_help());
    Cli::command()
        .after_long_help(keys.clone())
        .mut_subcommand("train", |c| c.after_help(keys.clone()))
        .mut_subcommand("evaluate", |c| c.after_help(keys.clone()))
        .mut_subcommand("baseline", |c| c.after_help(keys))
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match command().try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn run(command: Command, out: &mut dyn Write) -> Result<i32> {
    let w = |e: std::io::Error| HarnessError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let outcome = run_experiment(&cfg)?;
            write!(out, "{}", experiment::evaluation_text(&outcome)).map_err(w)?;
            writeln!(out, "wrote {}", cfg.output_dir.display()).map_err(w)?;
        }
        Command::Evaluate { common, ckpt } => {
            let cfg = common.resolve()?;
            let checkpoint = Checkpoint::load(&ckpt)?;
            let policy = checkpoint.policy()?;
            let seed = cfg.seeds[0];
            let env = InterferenceEnv::new(cfg.env.clone(), &mut experiment::train_rng(seed))?;
            let r = experiment::evaluate(&policy, &env, &cfg, seed)?;
            writeln!(
                out,
                "draws {}\npolicy {}\nwmmse {}\nrandom {}\nmax_power {}\npolicy_to_wmmse {}",
                r.draws,
                r.policy,
                r.wmmse,
                r.random,
                r.max_power,
                r.policy_to_wmmse()
            )
            .map_err(w)?;
        }
        Command::Baseline { common, draws } => {
            let cfg = common.resolve()?;
            let draws = draws.unwrap_or_else(|| cfg.eval_draws());
            std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
            for &seed in &cfg.seeds {
                let rows = baseline_sweep(&cfg, seed, draws)?;
                let path = cfg.output_dir.join(format!("baseline_seed_{seed}.csv"));
                write_baseline_csv(&path, &rows)?;
                writeln!(out, "wrote {}", path.display()).map_err(w)?;
            }
        }
        Command::Selftest => {
            let checks = selftest::run_all()?;
            for c in &checks {
                let tag = if c.passed { "ok  " } else { "FAIL" };
                writeln!(out, "{tag} {}: {}", c.name, c.detail).map_err(w)?;
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}
