//! Short-lived observer connections used by `bind` and `tail`.

use std::io;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use eery_core::events::RejectReason;
use eery_core::protocol::{
    decode, encode, Body, ClientRole, ClientSession, DatagramEndpoint, HelloStatus, Replica, UdpEndpoint, WireMessage,
};
use eery_core::{DeviceId, EngineEvent, ParticipantId, Rgb, RoomId};
use log::debug;

use crate::{BindArgs, CliError, TailArgs};

const RETRY: Duration = Duration::from_millis(200);
const POLL: Duration = Duration::from_millis(20);

struct Link {
    endpoint: UdpEndpoint,
    server: SocketAddr,
    session: ClientSession,
    replica: Replica,
}

impl Link {
    /// Says hello as an observer, retrying until acknowledged.
    fn connect(server: SocketAddr, deadline: Instant) -> Result<Self, CliError> {
        let any = match server.ip() {
            IpAddr::V4(_) => IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            IpAddr::V6(_) => IpAddr::V6(Ipv6Addr::UNSPECIFIED),
        };
        let mut link = Self {
            endpoint: UdpEndpoint::bind(SocketAddr::new(any, 0))?,
            server,
            session: ClientSession::new(0),
            replica: Replica::new(),
        };
        let mut next_hello = Instant::now();
        loop {
            if Instant::now() >= deadline {
                return Err(CliError::Timeout(format!("no answer from {server}")));
            }
            if Instant::now() >= next_hello {
                let hello = link
                    .session
                    .hello(ClientRole::Observer, RoomId(0), Rgb::new(0, 0, 0), "eery-cli");
                link.send(&hello)?;
                next_hello = Instant::now() + RETRY;
            }
            if let Some(msg) = link.recv(POLL)? {
                if let Body::HelloAck { status, .. } = msg.body {
                    if status == HelloStatus::Ok {
                        return Ok(link);
                    }
                    return Err(CliError::Config(format!("server refused observer: {status:?}")));
                }
                link.replica.apply(msg);
            }
        }
    }

    fn send(&mut self, msg: &WireMessage) -> Result<(), CliError> {
        let bytes = encode(msg).map_err(|e| CliError::Io(io::Error::other(e)))?;
        match self.endpoint.send_to(&self.server, &bytes) {
            Ok(()) => Ok(()),
            // an earlier datagram bounced; the server may just not be up yet
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    /// One decoded message from the server, or `None` after `wait`.
    fn recv(&mut self, wait: Duration) -> Result<Option<WireMessage>, CliError> {
        match self.endpoint.recv_timeout(wait) {
            Ok(Some((from, bytes))) if from == self.server => match decode(&bytes) {
                Ok(m) => Ok(Some(m)),
                Err(e) => {
                    debug!("ignoring malformed datagram: {e}");
                    Ok(None)
                }
            },
            Ok(_) => Ok(None),
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {
                std::thread::sleep(wait);
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn bye(&mut self) {
        let msg = self.session.bye();
        let _ = self.send(&msg);
    }
}

fn resolve(link: &Link, who: &str) -> Option<ParticipantId> {
    if let Ok(n) = who.parse::<u64>() {
        return Some(ParticipantId(n));
    }
    link.replica
        .view()
        .participants
        .iter()
        .find(|(_, p)| p.name == who)
        .map(|(id, _)| *id)
}

enum BindReply {
    Bound,
    Rejected(RejectReason),
}

fn bind_reply(msg: &WireMessage, id: ParticipantId, device: DeviceId) -> Option<BindReply> {
    let Body::Event(body) = &msg.body else { return None };
    body.events.iter().find_map(|(_, ev)| match ev {
        EngineEvent::Bound { participant, device: d } if *participant == id && *d == device => Some(BindReply::Bound),
        EngineEvent::BindRejected {
            participant,
            device: d,
            reason,
        } if *participant == id && *d == device => Some(BindReply::Rejected(*reason)),
        _ => None,
    })
}

fn is_last_fragment(msg: &WireMessage) -> bool {
    matches!(&msg.body, Body::Snapshot(s) if s.part + 1 == s.parts)
}

pub fn bind(args: BindArgs) -> Result<(), CliError> {
    let deadline = Instant::now() + args.timeout;
    let mut link = Link::connect(args.server, deadline)?;
    let result = bind_on(&mut link, &args, deadline);
    link.bye();
    result
}

fn bind_on(link: &mut Link, args: &BindArgs, deadline: Instant) -> Result<(), CliError> {
    let device = DeviceId(args.device);
    let timeout = || CliError::Timeout(format!("no confirmation from {}", args.server));

    // names need a snapshot first
    let id = loop {
        if let Some(id) = resolve(link, &args.participant) {
            break id;
        }
        if Instant::now() >= deadline {
            return Err(timeout());
        }
        if let Some(msg) = link.recv(POLL)? {
            let complete = is_last_fragment(&msg);
            link.replica.apply(msg);
            if complete && resolve(link, &args.participant).is_none() {
                return Err(CliError::UnknownParticipant(args.participant.clone()));
            }
        }
    };

    let first_sent = Instant::now();
    let mut next_send = first_sent;
    loop {
        if Instant::now() >= deadline {
            return Err(timeout());
        }
        if Instant::now() >= next_send {
            let msg = link.session.bind(id, device);
            link.send(&msg)?;
            next_send = Instant::now() + RETRY;
        }
        let Some(msg) = link.recv(POLL)? else { continue };
        match bind_reply(&msg, id, device) {
            Some(BindReply::Bound) => {
                println!("bound {} to {device}", args.participant);
                return Ok(());
            }
            Some(BindReply::Rejected(RejectReason::DeviceAlreadyBound)) => {
                return Err(CliError::DeviceAlreadyBound(format!(
                    "{device} is already bound to someone else"
                )));
            }
            Some(BindReply::Rejected(RejectReason::UnknownParticipant)) => {
                return Err(CliError::UnknownParticipant(args.participant.clone()));
            }
            None => {}
        }
        let complete = is_last_fragment(&msg);
        link.replica.apply(msg);
        // rebinding the same device is silent; a later snapshot still shows it bound
        if complete
            && first_sent.elapsed() >= RETRY
            && link.replica.view().participants.get(&id).is_some_and(|p| p.bound)
        {
            println!("{} already bound to {device}", args.participant);
            return Ok(());
        }
    }
}

pub fn tail(args: TailArgs) -> Result<(), CliError> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).map_err(|e| CliError::Io(io::Error::other(e)))?;

    let mut link = Link::connect(args.server, Instant::now() + args.timeout)?;
    let limit = args.count.unwrap_or(usize::MAX);
    let (mut seen, mut printed) = (0, 0);
    while printed < limit && !stop.load(Ordering::SeqCst) {
        let Some(msg) = link.recv(POLL)? else { continue };
        link.replica.apply(msg);
        let applied = link.replica.applied_events();
        for r in applied[seen..].iter().filter(|r| r.event.is_logged()) {
            if printed == limit {
                break;
            }
            println!("{}", r.to_json_line());
            printed += 1;
        }
        seen = applied.len();
    }
    link.bye();
    Ok(())
}
