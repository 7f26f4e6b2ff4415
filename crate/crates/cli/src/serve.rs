use std::io::{self, Write};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use eery_core::config::RoomsFile;
use eery_core::protocol::{DatagramEndpoint, Server, ServerConfig, UdpEndpoint};
use eery_core::{EerySpace, Engine, Millis};
use log::info;

use crate::logsink::LogSink;
use crate::{CliError, ServeArgs};

const IDLE_WAIT: Duration = Duration::from_millis(10);

fn build_server(args: &ServeArgs) -> Result<Server<SocketAddr>, CliError> {
    let profile = args.profile.profile()?;
    if !(args.snapshot_hz.is_finite() && args.snapshot_hz > 0.0 && args.snapshot_hz <= 1000.0) {
        return Err(CliError::Config(format!(
            "--snapshot-hz must be in (0, 1000], got {}",
            args.snapshot_hz
        )));
    }
    let rooms = RoomsFile::load(&args.rooms).map_err(|e| CliError::Config(e.to_string()))?;
    let space = EerySpace::from_config(&rooms).map_err(|e| CliError::Config(e.to_string()))?;
    let engine = Engine::new(space, profile).map_err(|e| CliError::Config(e.to_string()))?;
    let config = ServerConfig {
        snapshot_interval_ms: (1000.0 / args.snapshot_hz).round().max(1.0) as u64,
    };
    Ok(Server::new(engine, config))
}

pub fn run(args: ServeArgs) -> Result<(), CliError> {
    let mut server = build_server(&args)?;
    let mut sink = LogSink::open(args.log.as_deref())?;
    let mut endpoint = UdpEndpoint::bind(SocketAddr::new(args.bind_addr, args.port)).map_err(|e| {
        if e.kind() == io::ErrorKind::AddrInUse {
            CliError::PortInUse(args.port)
        } else {
            CliError::Io(e)
        }
    })?;

    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).map_err(|e| CliError::Io(io::Error::other(e)))?;

    let addr = endpoint.local_addr();
    {
        let mut out = io::stdout().lock();
        writeln!(out, r#"{{"ready":true,"addr":"{addr}","port":{}}}"#, addr.port())?;
        out.flush()?;
    }
    info!("serving on {addr}, seed {}", args.seed);

    let start = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        let mut inbound = Vec::new();
        if let Some(d) = endpoint.recv_timeout(IDLE_WAIT)? {
            inbound.push(d);
        }
        while let Some(d) = endpoint.try_recv()? {
            inbound.push(d);
        }
        let now = Millis(start.elapsed().as_millis() as u64);
        for (to, bytes) in server.step(inbound, now) {
            if let Err(e) = endpoint.send_to(&to, &bytes) {
                log::warn!("send to {to} failed: {e}");
            }
        }
        let records = server.take_log();
        if !records.is_empty() {
            sink.write(&records)?;
        }
    }
    info!("interrupted; {} clients connected", server.client_count());
    Ok(())
}
