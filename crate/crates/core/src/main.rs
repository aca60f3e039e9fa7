use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::warn;

use tiersim::config::RunConfig;
use tiersim::{report, runner, Error};

#[derive(Parser)]
#[command(version, about = "SSD cache / disk tier simulator with burst-aware load balancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write its result files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Also write events.log, the full per-request event trace.
        #[arg(long)]
        events_log: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare run A against reference run B.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            events_log,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            for w in cfg.warnings() {
                warn!("{w}");
            }
            let res = runner::run_to_dir(&cfg, &out, events_log)?;
            let s = &res.summary;
            println!(
                "{}: {} requests, {} intervals ({} burst), mean latency {:.1} us -> {}",
                s.balancer,
                s.app_requests,
                s.intervals,
                s.burst_intervals,
                s.latency_mean_us,
                out.display()
            );
        }
        Command::Compare { dir_a, dir_b } => {
            print!("{}", report::compare(&dir_a, &dir_b)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {:#}", anyhow::Error::new(e));
            ExitCode::from(code as u8)
        }
    }
}
