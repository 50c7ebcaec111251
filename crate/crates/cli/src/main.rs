use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use pdp_cli::commands::{check_gradients, gen_demos, resolve_out, run};
use pdp_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "pdp",
    version,
    about = "Differentiable optimal control: IOC, system identification and planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a configuration.
    Run(Common),
    /// Write demonstrations (IOC) or random-input trajectories (SysID) to disk.
    GenDemos(Common),
    /// Compare analytic derivatives with finite differences.
    CheckGradients {
        #[command(flatten)]
        common: Common,
        /// Random points per function.
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Check every environment, not just the configured one.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, then `$PDP_OUT_DIR/<env>_<mode>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.workers = self.workers.unwrap_or(cfg.workers);
        cfg.trials = self.trials.unwrap_or(cfg.trials);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let out = resolve_out(common.out, &cfg, &format!("{}_{}", cfg.env, cfg.mode.as_str()));
            for s in run(cfg, &out)? {
                println!("{s}");
            }
            Ok(true)
        }
        Command::GenDemos(common) => {
            let cfg = common.load()?;
            let out = resolve_out(common.out, &cfg, &format!("{}_{}_demos", cfg.env, cfg.mode.as_str()));
            println!("{}", gen_demos(cfg, &out)?.display());
            Ok(true)
        }
        Command::CheckGradients { common, points, all } => {
            let cfg = common.load()?;
            let report = check_gradients(&cfg, points, all)?;
            for l in &report.lines {
                println!(
                    "[{}] {:<36} first {:.2e}  second {:.2e}  ({} points)",
                    if l.passes() { "ok" } else { "FAIL" },
                    l.name,
                    l.report.first_order,
                    l.report.second_order,
                    l.report.points
                );
            }
            for (name, err) in &report.end_to_end {
                let ok = *err <= pdp_cli::checks::END_TO_END_TOL;
                println!(
                    "[{}] {:<36} end-to-end {:.2e}",
                    if ok { "ok" } else { "FAIL" },
                    name,
                    err
                );
            }
            Ok(report.passes())
        }
    }
}
