use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use clap::{Parser, Subcommand};
use serde_json::Value;

use contactplan_cli::commands::{self, CliError, ExitCode};
use contactplan_cli::server::{self, ServiceOptions};

#[derive(Parser)]
#[command(name = "contactplan", version, about = "Contact-informed path adaptation: batch runs, offline estimation and a live service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// scenario JSON file
    scenario: PathBuf,
    /// override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// override the sample rate, Hz
    #[arg(long)]
    rate: Option<f64>,
    /// set any scenario key, e.g. `planner.alpha_gain=0.01` or `noise.sigma=0`
    #[arg(long = "config", value_name = "KEY=VALUE", value_parser = commands::parse_override)]
    config: Vec<(String, Value)>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<contactplan::sim::Scenario, CliError> {
        let overrides = commands::scenario_overrides(&self.config, self.seed, self.rate);
        commands::load(&self.scenario, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and export its trace.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// output directory
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Estimate contacts on a recorded trace (ticks.csv); prints JSON lines.
    Estimate {
        /// trace CSV with t, q, tau_hat columns
        trace: PathBuf,
        /// chain file of the robot that produced the trace
        #[arg(long)]
        chain: PathBuf,
        /// fit every window on this link instead of replaying detection
        #[arg(long)]
        link: Option<usize>,
        /// detection/estimation/planner setting, e.g. `estimation.lambda=0.01`
        #[arg(long = "config", value_name = "KEY=VALUE", value_parser = commands::parse_override)]
        config: Vec<(String, Value)>,
    },
    /// Serve a scenario live over WebSocket at ws://HOST:PORT/ws.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// telemetry messages buffered per client before the oldest are dropped
        #[arg(long, default_value_t = server::DEFAULT_CLIENT_BUFFER)]
        client_buffer: usize,
    },
}

fn main() -> ProcessExit {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONTACTPLAN_LOG", "info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ProcessExit::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ProcessExit::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run { scenario, out } => {
            let scenario = scenario.load()?;
            let outcome = commands::run(&scenario, &out)?;
            commands::print_summary(&mut std::io::stdout().lock(), &outcome)?;
            Ok(if outcome.aborted { ExitCode::Aborted } else { ExitCode::Ok })
        }
        Command::Estimate { trace, chain, link, config } => {
            let n = commands::estimate(&trace, &chain, link, &config, &mut std::io::stdout().lock())?;
            log::info!("{n} estimates");
            Ok(ExitCode::Ok)
        }
        Command::Serve { scenario, port, host, client_buffer } => {
            let scenario = scenario.load()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                let mut service = server::spawn(listener, scenario, ServiceOptions { client_buffer })?;
                println!("listening on {}", service.url());
                tokio::select! {
                    r = service.wait() => r?,
                    _ = tokio::signal::ctrl_c() => log::info!("shutting down"),
                }
                service.shutdown();
                Ok(ExitCode::Ok)
            })
        }
    }
}
