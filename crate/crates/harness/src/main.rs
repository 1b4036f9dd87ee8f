use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landau_harness::config::{self, Scenario};
use landau_harness::pool;
use landau_harness::scenarios::execute;
use log::error;

#[derive(Parser)]
#[command(name = "landau", version, about = "Landau equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario named in each config.
    Run(Common),
    Poincare(Common),
    Degiorgi(Common),
    Rates(Common),
    Moments(Common),
    LorentzSelftest(Common),
}

#[derive(Args)]
struct Common {
    /// JSON file with one experiment or a list of them.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed of every experiment.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (forced, args) = match cli.command {
        Command::Run(a) => (None, a),
        Command::Poincare(a) => (Some(Scenario::Poincare), a),
        Command::Degiorgi(a) => (Some(Scenario::Degiorgi), a),
        Command::Rates(a) => (Some(Scenario::Rates), a),
        Command::Moments(a) => (Some(Scenario::Moments), a),
        Command::LorentzSelftest(a) => (Some(Scenario::LorentzSelftest), a),
    };
    let mut configs = match config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(1);
        }
    };
    for c in &mut configs {
        if let Some(s) = forced {
            c.scenario = s;
        }
        if let Some(seed) = args.seed {
            c.seed = seed;
        }
    }
    let threads = pool::worker_count(configs.len());
    let results = pool::map(&configs, threads, |c| execute(c, &args.out));
    let mut code = 0u8;
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(report) => {
                print!("{}", report.summary());
                if !report.passed && code == 0 {
                    code = 2;
                }
            }
            Err(e) => {
                error!("{}: {e}", c.name);
                code = 1;
            }
        }
    }
    ExitCode::from(code)
}
