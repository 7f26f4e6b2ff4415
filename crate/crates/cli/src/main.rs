//! `eery`: run the root server, drive simulations, bind devices, tail events.

mod client;
mod error;
mod logsink;
mod serve;
mod simulate;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use eery_core::protocol::DEFAULT_PORT;
use eery_core::simulator::Transport;
use eery_core::ProxemicProfile;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "eery", version, about = "Shared-space proxemics server and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the root server until interrupted.
    Serve(ServeArgs),
    /// Run a scenario and check its expected events.
    Simulate(SimulateArgs),
    /// Feed a recorded movement trace through the engine.
    Replay(ReplayArgs),
    /// Bind a handheld device to a participant on a running server.
    Bind(BindArgs),
    /// Print a running server's events as JSON lines.
    Tail(TailArgs),
}

/// Proxemic overrides shared by every command that builds an engine.
#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    /// Bubble entry distance in metres; also sets the personal radius to half of it.
    #[arg(long)]
    bubble_enter: Option<f64>,
    #[arg(long)]
    bubble_exit: Option<f64>,
    #[arg(long)]
    intimate_radius: Option<f64>,
    #[arg(long)]
    intimate_exit: Option<f64>,
    #[arg(long)]
    moderator_depth: Option<f64>,
    #[arg(long)]
    moderator_exit: Option<f64>,
    #[arg(long)]
    alert_interval_ms: Option<u64>,
    #[arg(long)]
    silence_timeout_ms: Option<u64>,
}

impl ProfileArgs {
    pub fn profile(&self) -> Result<ProxemicProfile, CliError> {
        let mut p = ProxemicProfile::default();
        if let Some(v) = self.bubble_enter {
            p.bubble_enter = v;
            p.personal_radius = v / 2.0;
        }
        if let Some(v) = self.bubble_exit {
            p.bubble_exit = v;
        }
        if let Some(v) = self.intimate_radius {
            p.intimate_radius = v;
        }
        if let Some(v) = self.intimate_exit {
            p.intimate_exit = v;
        }
        if let Some(v) = self.moderator_depth {
            p.moderator_depth = v;
        }
        if let Some(v) = self.moderator_exit {
            p.moderator_exit = v;
        }
        if let Some(v) = self.alert_interval_ms {
            p.alert_interval_ms = v;
        }
        if let Some(v) = self.silence_timeout_ms {
            p.silence_timeout_ms = v;
        }
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Rooms configuration (JSON).
    #[arg(long)]
    rooms: PathBuf,
    /// UDP port; 0 picks a free one.
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind_addr: std::net::IpAddr,
    /// Full snapshots per second.
    #[arg(long, default_value_t = 20.0)]
    snapshot_hz: f64,
    #[command(flatten)]
    profile: ProfileArgs,
    /// Event log destination; standard output when absent.
    #[arg(long, env = "EERY_LOG")]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    scenario: PathBuf,
    #[arg(long, default_value = "inproc")]
    transport: Transport,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, env = "EERY_LOG")]
    log: Option<PathBuf>,
    /// Movement trace output (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Pace against the wall clock; 1.0 is real time. Runs flat out when absent.
    #[arg(long)]
    speed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    trace: PathBuf,
    #[arg(long)]
    rooms: PathBuf,
    #[arg(long, default_value = "inproc")]
    transport: Transport,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, env = "EERY_LOG")]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BindArgs {
    /// Participant name or numeric id.
    participant: String,
    /// Device id, either `7` or `dev7`.
    #[arg(value_parser = parse_device)]
    device: u64,
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)))]
    server: SocketAddr,
    /// Seconds to wait for the server.
    #[arg(long, default_value = "3", value_parser = parse_secs)]
    timeout: Duration,
}

#[derive(Debug, Args)]
pub struct TailArgs {
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)))]
    server: SocketAddr,
    /// Exit after this many events.
    #[arg(long)]
    count: Option<usize>,
    /// Seconds to wait for the handshake.
    #[arg(long, default_value = "3", value_parser = parse_secs)]
    timeout: Duration,
}

fn parse_device(s: &str) -> Result<u64, String> {
    s.strip_prefix("dev")
        .unwrap_or(s)
        .parse()
        .map_err(|_| format!("device must look like `7` or `dev7`, got {s:?}"))
}

fn parse_secs(s: &str) -> Result<Duration, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number of seconds: {s:?}"))?;
    Duration::try_from_secs_f64(v).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::CONFIG } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Serve(a) => serve::run(a),
        Command::Simulate(a) => simulate::simulate(a),
        Command::Replay(a) => simulate::replay(a),
        Command::Bind(a) => client::bind(a),
        Command::Tail(a) => client::tail(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eery: {e}");
            ExitCode::from(e.code())
        }
    }
}
