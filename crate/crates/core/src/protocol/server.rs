//! Root server: one event loop owning the engine, fed by datagrams.

use std::collections::BTreeMap;
use std::fmt::Debug;

use log::{debug, warn};

use super::codec::{
    decode, encode, pack_events, Body, ClientRole, EventBody, HelloStatus, MalformedMessage, WireMessage,
};
use super::transport::DatagramEndpoint;
use super::view::WorldView;
use crate::engine::{Engine, EngineError};
use crate::events::{EngineEvent, EventRecord, LeaveReason};
use crate::participants::{ParticipantError, ParticipantId};
use crate::Millis;

/// Server id used as the `sender` of every server-originated message.
pub const SERVER_SENDER: u64 = 0;
pub const DEFAULT_PORT: u16 = 47800;
pub const DEFAULT_SNAPSHOT_INTERVAL_MS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    pub snapshot_interval_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            snapshot_interval_ms: DEFAULT_SNAPSHOT_INTERVAL_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ClientEntry {
    role: ClientRole,
    participant: Option<ParticipantId>,
}

#[derive(Debug)]
pub struct Server<A> {
    engine: Engine,
    config: ServerConfig,
    clients: BTreeMap<A, ClientEntry>,
    tick: u64,
    seq: u32,
    last_snapshot: Option<Millis>,
    log: Vec<EventRecord>,
    rejected: u64,
}

impl<A: Clone + Ord + Debug> Server<A> {
    pub fn new(engine: Engine, config: ServerConfig) -> Self {
        Self {
            engine,
            config,
            clients: BTreeMap::new(),
            tick: 0,
            seq: 0,
            last_snapshot: None,
            log: Vec::new(),
            rejected: 0,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    /// Datagrams dropped as malformed or out of protocol.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// The state every replica should converge to.
    pub fn view(&self) -> WorldView {
        WorldView::from_engine(&self.engine, self.tick)
    }

    /// Drains the records logged since the previous call.
    pub fn take_log(&mut self) -> Vec<EventRecord> {
        std::mem::take(&mut self.log)
    }

    fn message(&mut self, body: Body) -> WireMessage {
        self.seq = self.seq.wrapping_add(1);
        WireMessage::new(SERVER_SENDER, self.seq, body)
    }

    fn broadcast(&self, out: &mut Vec<(A, Vec<u8>)>, bytes: &[u8]) {
        for addr in self.clients.keys() {
            out.push((addr.clone(), bytes.to_vec()));
        }
    }

    /// Processes one batch of inbound datagrams at `now` and returns what to
    /// send. Per-message failures are logged and never abort the step.
    pub fn step(&mut self, inbound: Vec<(A, Vec<u8>)>, now: Millis) -> Vec<(A, Vec<u8>)> {
        let mut out = Vec::new();
        let mut records: Vec<EventRecord> = Vec::new();

        for (from, bytes) in inbound {
            match decode(&bytes) {
                Ok(msg) => self.handle(from, msg, now, &mut records, &mut out),
                Err(e) => {
                    self.rejected += 1;
                    warn!("dropping datagram from {from:?}: {e}");
                }
            }
        }
        records.extend(self.engine.housekeeping(now));

        if !records.is_empty() {
            let batch: Vec<(Millis, EngineEvent)> = records.iter().map(|r| (r.at, r.event.clone())).collect();
            for group in pack_events(batch) {
                self.tick += 1;
                let msg = self.message(Body::Event(EventBody {
                    tick: self.tick,
                    events: group,
                }));
                let bytes = encode(&msg).expect("packed event groups fit a datagram");
                self.broadcast(&mut out, &bytes);
            }
            self.log.extend(records);
        }

        let due = match self.last_snapshot {
            None => true,
            Some(t) => now.0.saturating_sub(t.0) >= self.config.snapshot_interval_ms,
        };
        if due {
            self.last_snapshot = Some(now);
            for part in self.view().to_snapshot() {
                let msg = self.message(Body::Snapshot(part));
                let bytes = encode(&msg).expect("fragments fit a datagram");
                self.broadcast(&mut out, &bytes);
            }
        }
        out
    }

    fn handle(
        &mut self,
        from: A,
        msg: WireMessage,
        now: Millis,
        records: &mut Vec<EventRecord>,
        out: &mut Vec<(A, Vec<u8>)>,
    ) {
        let sender = ParticipantId(msg.sender);
        match msg.body {
            Body::Hello {
                role,
                room,
                color,
                name,
            } => {
                let (participant, status) = match role {
                    ClientRole::Observer => (ParticipantId(0), HelloStatus::Ok),
                    ClientRole::Participant => match self.clients.get(&from).and_then(|c| c.participant) {
                        // retransmitted hello
                        Some(existing) => (existing, HelloStatus::Ok),
                        None => match self.engine.join(&name, room, color, now) {
                            Ok((id, evs)) => {
                                records.extend(evs);
                                (id, HelloStatus::Ok)
                            }
                            Err(EngineError::Participant(ParticipantError::ColorCollision(_))) => {
                                (ParticipantId(0), HelloStatus::ColorCollision)
                            }
                            Err(EngineError::Participant(ParticipantError::UnknownRoom(_))) => {
                                (ParticipantId(0), HelloStatus::UnknownRoom)
                            }
                            Err(_) => (ParticipantId(0), HelloStatus::InvalidName),
                        },
                    },
                };
                if status == HelloStatus::Ok {
                    self.clients.insert(
                        from.clone(),
                        ClientEntry {
                            role,
                            participant: (role == ClientRole::Participant).then_some(participant),
                        },
                    );
                }
                let ack = self.message(Body::HelloAck { participant, status });
                out.push((from.clone(), encode(&ack).expect("ack encodes")));
            }
            Body::PositionUpdate { local } => match self.engine.update_position(sender, local, msg.seq, now) {
                Ok(evs) => records.extend(evs),
                Err(e) => debug!("position from {sender}: {e}"),
            },
            Body::BindDevice { participant, device } => {
                records.extend(self.engine.bind_or_reject(participant, device, now));
            }
            Body::InteractionRequest { target } => match self.engine.request_interaction(sender, target, now) {
                Ok(evs) => records.extend(evs),
                Err(e) => debug!("interaction request from {sender}: {e}"),
            },
            Body::ModeratorPayload { payload } => match self.engine.moderator_payload(sender, &payload, now) {
                Ok(evs) => {
                    records.extend(evs);
                    let mut relay = self.message(Body::ModeratorPayload { payload });
                    relay.sender = sender.0;
                    let bytes = encode(&relay).expect("payload already validated");
                    self.broadcast(out, &bytes);
                }
                Err(e) => debug!("payload from {sender}: {e}"),
            },
            Body::Bye => {
                if let Some(entry) = self.clients.remove(&from) {
                    if let Some(p) = entry.participant {
                        if let Ok(evs) = self.engine.leave(p, LeaveReason::Bye, now) {
                            records.extend(evs);
                        }
                    }
                }
            }
            Body::HelloAck { .. } | Body::Snapshot(_) | Body::Event(_) => {
                self.rejected += 1;
                warn!("{from:?} sent a server-only message");
            }
        }
        if let Some(p) = self.clients.get(&from).and_then(|c| c.participant) {
            self.engine.touch(p, now);
        }
    }

    /// Receives everything queued on `endpoint`, steps, and sends the output.
    pub fn pump<E>(&mut self, endpoint: &mut E, now: Millis) -> std::io::Result<usize>
    where
        E: DatagramEndpoint<Addr = A>,
    {
        let mut inbound = Vec::new();
        while let Some(d) = endpoint.try_recv()? {
            inbound.push(d);
        }
        let n = inbound.len();
        for (to, bytes) in self.step(inbound, now) {
            if let Err(e) = endpoint.send_to(&to, &bytes) {
                warn!("send to {to:?} failed: {e}");
            }
        }
        Ok(n)
    }
}

/// Decodes and discards server output addressed elsewhere; handy in tests.
pub fn decode_all(datagrams: &[(impl Debug, Vec<u8>)]) -> Result<Vec<WireMessage>, MalformedMessage> {
    datagrams.iter().map(|(_, b)| decode(b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::RejectReason;
    use crate::participants::{DeviceId, ProxemicProfile, Rgb};
    use crate::protocol::client::{ClientSession, Replica};
    use crate::protocol::transport::{FaultConfig, SimNetwork};
    use crate::space::{EerySpace, RoomId, Vec2};

    fn engine() -> Engine {
        let mut space = EerySpace::new();
        space.register_room(6.0, 5.0, (2.0, 4.0)).unwrap();
        space.register_room(4.0, 4.0, (1.0, 3.0)).unwrap();
        Engine::new(space, ProxemicProfile::default()).unwrap()
    }

    fn hello(s: &mut ClientSession, room: u16, c: u8, name: &str) -> Vec<u8> {
        encode(&s.hello(ClientRole::Participant, RoomId(room), Rgb::new(c, 0, 0), name)).unwrap()
    }

    #[test]
    fn hello_is_idempotent_per_address() {
        let mut srv: Server<u32> = Server::new(engine(), ServerConfig::default());
        let mut s = ClientSession::new(0);
        let h = hello(&mut s, 0, 1, "ana");
        let out = srv.step(vec![(1, h.clone()), (1, h)], Millis(0));
        let acks: Vec<_> = decode_all(&out)
            .unwrap()
            .into_iter()
            .filter_map(|m| match m.body {
                Body::HelloAck { participant, status } => Some((participant, status)),
                _ => None,
            })
            .collect();
        assert_eq!(acks.len(), 2);
        assert_eq!(acks[0], acks[1]);
        assert_eq!(srv.engine().roster().iter().count(), 1);

        let dup = hello(&mut s, 0, 1, "bob");
        let out = srv.step(vec![(2, dup)], Millis(10));
        let status = decode_all(&out).unwrap().into_iter().find_map(|m| match m.body {
            Body::HelloAck { status, .. } => Some(status),
            _ => None,
        });
        assert_eq!(status, Some(HelloStatus::ColorCollision));
    }

    #[test]
    fn garbage_is_not_fatal() {
        let mut srv: Server<u32> = Server::new(engine(), ServerConfig::default());
        srv.step(vec![(1, vec![0xff; 3]), (1, vec![])], Millis(0));
        assert_eq!(srv.rejected(), 2);
    }

    #[test]
    fn bind_conflict_is_an_event() {
        let mut srv: Server<u32> = Server::new(engine(), ServerConfig::default());
        let (mut a, mut b) = (ClientSession::new(0), ClientSession::new(0));
        srv.step(
            vec![(1, hello(&mut a, 0, 1, "ana")), (2, hello(&mut b, 0, 2, "bob"))],
            Millis(0),
        );
        let ids: Vec<_> = srv.engine().roster().iter().map(|p| p.id).collect();
        let m1 = encode(&a.bind(ids[0], DeviceId(9))).unwrap();
        let m2 = encode(&b.bind(ids[1], DeviceId(9))).unwrap();
        srv.step(vec![(1, m1), (2, m2)], Millis(10));
        let log = srv.take_log();
        assert!(log.iter().any(|r| matches!(
            r.event,
            EngineEvent::BindRejected {
                reason: RejectReason::DeviceAlreadyBound,
                ..
            }
        )));
    }

    #[test]
    fn replica_converges_under_faults() {
        for seed in 0..5 {
            let net = SimNetwork::new(
                seed,
                FaultConfig {
                    drop: 0.2,
                    duplicate: 0.1,
                    reorder_window: 5,
                },
            );
            let mut server_ep = SimNetwork::endpoint(&net);
            let mut obs_ep = SimNetwork::endpoint(&net);
            let mut srv = Server::new(engine(), ServerConfig::default());
            let mut replica = Replica::new();
            let mut obs = ClientSession::new(0);
            let mut sessions: Vec<ClientSession> = (0..3).map(|_| ClientSession::new(0)).collect();
            let mut eps: Vec<_> = (0..3).map(|_| SimNetwork::endpoint(&net)).collect();
            let server = server_ep.local_addr();
            for t in 0..60u64 {
                let now = Millis(t * 50);
                if t % 10 == 0 {
                    let m = obs.hello(ClientRole::Observer, RoomId(0), Rgb::new(0, 0, 0), "obs");
                    obs_ep.send_to(&server, &encode(&m).unwrap()).unwrap();
                }
                for (i, (s, ep)) in sessions.iter_mut().zip(eps.iter_mut()).enumerate() {
                    if s.sender == 0 {
                        let h = s.hello(ClientRole::Participant, RoomId(0), Rgb::new(i as u8 + 1, 0, 0), "p");
                        ep.send_to(&server, &encode(&h).unwrap()).unwrap();
                        while let Some((_, d)) = ep.try_recv().unwrap() {
                            if let Ok(WireMessage {
                                body: Body::HelloAck { participant, .. },
                                ..
                            }) = decode(&d)
                            {
                                s.sender = participant.0;
                            }
                        }
                        continue;
                    }
                    let x = 0.5 + i as f64 + (t as f64) * 0.02;
                    let m = s.position(ParticipantId(s.sender), Vec2::new(x.min(5.5), 2.0), t as u32);
                    ep.send_to(&server, &encode(&m).unwrap()).unwrap();
                    while ep.try_recv().unwrap().is_some() {}
                }
                srv.pump(&mut server_ep, now).unwrap();
                while let Some((_, d)) = obs_ep.try_recv().unwrap() {
                    replica.apply_datagram(&d).unwrap();
                }
            }
            // quiesce: snapshots keep flowing until one lands intact
            net.borrow_mut().set_faults(FaultConfig::LOSSLESS);
            for t in 60..64u64 {
                srv.pump(&mut server_ep, Millis(t * 50)).unwrap();
                while let Some((_, d)) = obs_ep.try_recv().unwrap() {
                    replica.apply_datagram(&d).unwrap();
                }
            }
            assert_eq!(replica.view(), &srv.view(), "seed {seed}");
        }
    }
}
