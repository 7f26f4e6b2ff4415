use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::time::Duration;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pursuer_step;
use super::scenario::{Action, Scenario, ScenarioError};
use super::trace::{Trace, TraceRecord};
use crate::config::RoomsFile;
use crate::engine::Engine;
use crate::events::{render_log, EventRecord, LeaveReason};
use crate::participants::{DeviceId, ParticipantId, ProxemicProfile, Rgb};
use crate::protocol::codec::{decode, encode, Body, ClientRole, HelloStatus, WireMessage};
use crate::protocol::{
    ClientSession, DatagramEndpoint, FaultConfig, Replica, Server, ServerConfig, SimAddr, SimEndpoint, SimNetwork,
};
use crate::space::{EerySpace, RoomId, Vec2};
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// Calls straight into the engine.
    #[default]
    InProc,
    /// Goes through the wire protocol on a lossless in-memory network and
    /// reads the log back from an observer replica.
    Loopback,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::InProc => "inproc",
            Transport::Loopback => "loopback",
        })
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Transport::InProc),
            "loopback" => Ok(Transport::Loopback),
            other => Err(format!("unknown transport {other:?} (inproc|loopback)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub transport: Transport,
    pub seed: u64,
    pub profile: ProxemicProfile,
    /// Wall-clock pacing: 1.0 is real time. `None` runs flat out.
    pub speed: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            transport: Transport::InProc,
            seed: 0,
            profile: ProxemicProfile::default(),
            speed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// Logged events in order.
    pub log: Vec<EventRecord>,
    pub names: BTreeMap<ParticipantId, String>,
    /// Positions as reported to the engine.
    pub trace: Trace,
    pub space: EerySpace,
}

impl SimOutcome {
    pub fn render_log(&self) -> String {
        render_log(&self.log)
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.log.iter().map(|r| r.event.kind()).collect()
    }

    pub fn id_of(&self, name: &str) -> Option<ParticipantId> {
        self.names.iter().find(|(_, n)| *n == name).map(|(id, _)| *id)
    }

    /// Reported virtual positions of one participant, oldest first.
    pub fn trajectory(&self, name: &str) -> Vec<Vec2> {
        self.trace
            .records
            .iter()
            .filter(|r| r.participant == name)
            .filter_map(|r| {
                let room = self.space.room_by_name(&r.room).ok()?;
                self.space.to_virtual(room.id, r.local()).ok()
            })
            .collect()
    }
}

trait Backend {
    fn join(&mut self, name: &str, room: RoomId, color: Rgb, now: Millis) -> Result<ParticipantId, ScenarioError>;
    fn bind(&mut self, who: ParticipantId, device: DeviceId, now: Millis);
    fn position(&mut self, who: ParticipantId, local: Vec2, seq: u32, now: Millis);
    fn request(&mut self, who: ParticipantId, target: ParticipantId, now: Millis);
    fn payload(&mut self, who: ParticipantId, data: &[u8], now: Millis);
    fn leave(&mut self, who: ParticipantId, now: Millis);
    fn end_tick(&mut self, now: Millis) -> Result<(), ScenarioError>;
    fn finish(self: Box<Self>) -> Result<Vec<EventRecord>, ScenarioError>;
}

struct InProc {
    engine: Engine,
    log: Vec<EventRecord>,
}

impl InProc {
    fn record<E: fmt::Display>(&mut self, what: &str, res: Result<Vec<EventRecord>, E>) {
        match res {
            Ok(evs) => self.log.extend(evs),
            Err(e) => debug!("{what}: {e}"),
        }
    }
}

impl Backend for InProc {
    fn join(&mut self, name: &str, room: RoomId, color: Rgb, now: Millis) -> Result<ParticipantId, ScenarioError> {
        let (id, evs) = self
            .engine
            .join(name, room, color, now)
            .map_err(|e| ScenarioError::Engine(format!("{name}: {e}")))?;
        self.log.extend(evs);
        Ok(id)
    }

    fn bind(&mut self, who: ParticipantId, device: DeviceId, now: Millis) {
        let evs = self.engine.bind_or_reject(who, device, now);
        self.log.extend(evs);
    }

    fn position(&mut self, who: ParticipantId, local: Vec2, seq: u32, now: Millis) {
        let res = self.engine.update_position(who, local, seq, now);
        self.record("position", res);
    }

    fn request(&mut self, who: ParticipantId, target: ParticipantId, now: Millis) {
        self.engine.touch(who, now);
        let res = self.engine.request_interaction(who, target, now);
        self.record("request", res);
    }

    fn payload(&mut self, who: ParticipantId, data: &[u8], now: Millis) {
        self.engine.touch(who, now);
        let res = self.engine.moderator_payload(who, data, now);
        self.record("payload", res);
    }

    fn leave(&mut self, who: ParticipantId, now: Millis) {
        let res = self.engine.leave(who, LeaveReason::Bye, now);
        self.record("leave", res);
    }

    fn end_tick(&mut self, now: Millis) -> Result<(), ScenarioError> {
        let evs = self.engine.housekeeping(now);
        self.log.extend(evs);
        Ok(())
    }

    fn finish(self: Box<Self>) -> Result<Vec<EventRecord>, ScenarioError> {
        Ok(self.log)
    }
}

struct Loopback {
    net: Rc<RefCell<SimNetwork>>,
    server: Server<SimAddr>,
    server_ep: SimEndpoint,
    observer: SimEndpoint,
    replica: Replica,
    clients: BTreeMap<ParticipantId, (ClientSession, SimEndpoint)>,
}

impl Loopback {
    fn new(engine: Engine, seed: u64) -> Result<Self, ScenarioError> {
        let net = SimNetwork::new(seed, FaultConfig::LOSSLESS);
        let server_ep = SimNetwork::endpoint(&net);
        let mut observer = SimNetwork::endpoint(&net);
        let hello = ClientSession::new(0).hello(ClientRole::Observer, RoomId(0), Rgb::new(0, 0, 0), "observer");
        observer.send_to(&server_ep.local_addr(), &encode(&hello).expect("hello encodes"))?;
        Ok(Self {
            server: Server::new(engine, ServerConfig::default()),
            server_ep,
            observer,
            replica: Replica::new(),
            clients: BTreeMap::new(),
            net,
        })
    }

    fn send(&mut self, who: ParticipantId, build: impl FnOnce(&mut ClientSession) -> WireMessage) {
        let server = self.server_ep.local_addr();
        match self.clients.get_mut(&who) {
            Some((session, ep)) => {
                let msg = build(session);
                let bytes = encode(&msg).expect("validated client messages encode");
                ep.send_to(&server, &bytes).expect("in-memory send");
            }
            None => debug!("{who} has no connection"),
        }
    }

    fn pump(&mut self, now: Millis) -> Result<(), ScenarioError> {
        self.server.pump(&mut self.server_ep, now)?;
        while let Some((_, d)) = self.observer.try_recv()? {
            self.replica
                .apply_datagram(&d)
                .map_err(|e| ScenarioError::Engine(format!("observer got a malformed datagram: {e}")))?;
        }
        Ok(())
    }
}

impl Backend for Loopback {
    fn join(&mut self, name: &str, room: RoomId, color: Rgb, now: Millis) -> Result<ParticipantId, ScenarioError> {
        let mut ep = SimNetwork::endpoint(&self.net);
        let mut session = ClientSession::new(0);
        let hello = encode(&session.hello(ClientRole::Participant, room, color, name))
            .map_err(|e| ScenarioError::Engine(format!("{name}: {e}")))?;
        ep.send_to(&self.server_ep.local_addr(), &hello)?;
        self.pump(now)?;
        while let Some((_, d)) = ep.try_recv()? {
            if let Ok(WireMessage {
                body: Body::HelloAck { participant, status },
                ..
            }) = decode(&d)
            {
                if status != HelloStatus::Ok {
                    return Err(ScenarioError::Engine(format!("{name}: hello refused ({status:?})")));
                }
                session.sender = participant.0;
                self.clients.insert(participant, (session, ep));
                return Ok(participant);
            }
        }
        Err(ScenarioError::Engine(format!("{name}: no hello acknowledgement")))
    }

    fn bind(&mut self, who: ParticipantId, device: DeviceId, _now: Millis) {
        self.send(who, |s| s.bind(who, device));
    }

    fn position(&mut self, who: ParticipantId, local: Vec2, seq: u32, _now: Millis) {
        self.send(who, |s| s.position(who, local, seq));
    }

    fn request(&mut self, who: ParticipantId, target: ParticipantId, _now: Millis) {
        self.send(who, |s| s.request(target));
    }

    fn payload(&mut self, who: ParticipantId, data: &[u8], _now: Millis) {
        self.send(who, |s| s.payload(data.to_vec()));
    }

    fn leave(&mut self, who: ParticipantId, _now: Millis) {
        self.send(who, |s| s.bye());
    }

    fn end_tick(&mut self, now: Millis) -> Result<(), ScenarioError> {
        self.pump(now)?;
        for (_, ep) in self.clients.values_mut() {
            while ep.try_recv()?.is_some() {}
        }
        Ok(())
    }

    fn finish(self: Box<Self>) -> Result<Vec<EventRecord>, ScenarioError> {
        if self.replica.view() != &self.server.view() {
            return Err(ScenarioError::Engine(
                "observer replica diverged from the server".into(),
            ));
        }
        Ok(self
            .replica
            .applied_events()
            .iter()
            .filter(|r| r.event.is_logged())
            .cloned()
            .collect())
    }
}

fn backend(space: &EerySpace, opts: &RunOptions) -> Result<Box<dyn Backend>, ScenarioError> {
    let engine = Engine::new(space.clone(), opts.profile).map_err(|e| ScenarioError::Engine(e.to_string()))?;
    Ok(match opts.transport {
        Transport::InProc => Box::new(InProc {
            engine,
            log: Vec::new(),
        }),
        Transport::Loopback => Box::new(Loopback::new(engine, opts.seed)?),
    })
}

fn pace(opts: &RunOptions, tick_ms: u64) {
    if let Some(speed) = opts.speed.filter(|s| *s > 0.0) {
        std::thread::sleep(Duration::from_secs_f64(tick_ms as f64 / 1000.0 / speed));
    }
}

#[derive(Debug, Clone)]
enum Motion {
    Idle,
    Walk { path: VecDeque<Vec2>, speed: f64 },
    Pursue { target: usize, speed: f64 },
}

struct Actor {
    id: ParticipantId,
    room: RoomId,
    pos: Vec2,
    motion: Motion,
    present: bool,
    tracked: bool,
    seq: u32,
}

/// Runs a scenario and returns its event log. Expectations are not checked
/// here; see [`Scenario::check`].
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<SimOutcome, ScenarioError> {
    scenario.validate()?;
    let space = scenario.space()?;
    let mut backend = backend(&space, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dt = scenario.tick_ms as f64 / 1000.0;
    let start = Millis(0);

    let mut actors = Vec::new();
    let mut names = BTreeMap::new();
    for c in &scenario.cast {
        let room = space.room_by_name(&c.room)?.id;
        let color = Rgb::parse_hex(&c.color).expect("validated");
        let id = backend.join(&c.name, room, color, start)?;
        names.insert(id, c.name.clone());
        actors.push(Actor {
            id,
            room,
            pos: Vec2::new(c.start[0], c.start[1]).quantize_mm(),
            motion: Motion::Idle,
            present: true,
            tracked: true,
            seq: 0,
        });
    }
    for (a, c) in actors.iter().zip(&scenario.cast) {
        if let Some(d) = c.device {
            backend.bind(a.id, DeviceId(d), start);
        }
    }

    let mut steps: Vec<_> = scenario.script.iter().collect();
    steps.sort_by_key(|s| s.at_ms());
    let mut next_step = 0;
    let mut trace = Trace::new(&scenario.rooms);
    let end = scenario.duration_ms();

    for k in 0.. {
        let now = Millis(k * scenario.tick_ms);
        if now > end {
            break;
        }
        while let Some(step) = steps.get(next_step).filter(|s| s.at_ms() <= now) {
            next_step += 1;
            let who = scenario.cast_index(&step.who).expect("validated");
            if !actors[who].present {
                debug!("{} is gone; skipping {:?}", step.who, step.action);
                continue;
            }
            let id = actors[who].id;
            match &step.action {
                Action::Walk { path, speed } => {
                    actors[who].motion = Motion::Walk {
                        path: path.iter().map(|p| Vec2::new(p[0], p[1]).quantize_mm()).collect(),
                        speed: *speed,
                    }
                }
                Action::Pursue { target, speed } => {
                    actors[who].motion = Motion::Pursue {
                        target: scenario.cast_index(target).expect("validated"),
                        speed: *speed,
                    }
                }
                Action::Stop => actors[who].motion = Motion::Idle,
                Action::Bind { device } => backend.bind(id, DeviceId(*device), now),
                Action::Request { target } => {
                    let t = actors[scenario.cast_index(target).expect("validated")].id;
                    backend.request(id, t, now);
                }
                Action::Payload { data } => backend.payload(id, &hex::decode(data).expect("validated"), now),
                Action::Leave => {
                    backend.leave(id, now);
                    actors[who].present = false;
                }
                Action::Vanish => actors[who].tracked = false,
            }
        }

        if k > 0 {
            for i in 0..actors.len() {
                advance(&mut actors, i, &space, dt)?;
            }
        }

        for a in actors.iter_mut().filter(|a| a.present && a.tracked) {
            let room = space.room(a.room)?;
            let mut reported = a.pos;
            if scenario.jitter_m > 0.0 {
                let j = scenario.jitter_m;
                let noise = Vec2::new(rng.random_range(-j..=j), rng.random_range(-j..=j));
                reported = room.local_rect().clamp(reported.add(noise)).quantize_mm();
            }
            a.seq += 1;
            backend.position(a.id, reported, a.seq, now);
            trace.records.push(TraceRecord {
                t: now.0 as f64 / 1000.0,
                participant: names[&a.id].clone(),
                room: room.name.clone(),
                x: reported.x,
                y: reported.y,
            });
        }
        backend.end_tick(now)?;
        pace(opts, scenario.tick_ms);
    }

    Ok(SimOutcome {
        log: backend.finish()?,
        names,
        trace,
        space,
    })
}

fn advance(actors: &mut [Actor], i: usize, space: &EerySpace, dt: f64) -> Result<(), ScenarioError> {
    if !actors[i].present {
        return Ok(());
    }
    let local_rect = space.room(actors[i].room)?.local_rect();
    let next = match &mut actors[i].motion {
        Motion::Idle => return Ok(()),
        Motion::Walk { path, speed } => {
            let Some(&goal) = path.front() else {
                actors[i].motion = Motion::Idle;
                return Ok(());
            };
            let p = pursuer_step(actors[i].pos, goal, *speed, dt, &local_rect);
            if p == goal {
                path.pop_front();
            }
            p
        }
        Motion::Pursue { target, speed } => {
            let (target, speed) = (*target, *speed);
            let tgt = &actors[target];
            if !tgt.present {
                actors[i].motion = Motion::Idle;
                return Ok(());
            }
            let goal = space.to_virtual(tgt.room, tgt.pos)?;
            let me = space.to_virtual(actors[i].room, actors[i].pos)?;
            let bounds = space.room_rect(actors[i].room)?;
            space.to_local(actors[i].room, pursuer_step(me, goal, speed, dt, &bounds))?
        }
    };
    actors[i].pos = local_rect.clamp(next.quantize_mm());
    Ok(())
}

const PALETTE: [Rgb; 16] = [
    Rgb::new(0xe6, 0x19, 0x4b),
    Rgb::new(0x3c, 0xb4, 0x4b),
    Rgb::new(0xff, 0xe1, 0x19),
    Rgb::new(0x43, 0x63, 0xd8),
    Rgb::new(0xf5, 0x82, 0x31),
    Rgb::new(0x91, 0x1e, 0xb4),
    Rgb::new(0x46, 0xf0, 0xf0),
    Rgb::new(0xf0, 0x32, 0xe6),
    Rgb::new(0xbc, 0xf6, 0x0c),
    Rgb::new(0xfa, 0xbe, 0xbe),
    Rgb::new(0x00, 0x80, 0x80),
    Rgb::new(0xe6, 0xbe, 0xff),
    Rgb::new(0x9a, 0x63, 0x24),
    Rgb::new(0xff, 0xfa, 0xc8),
    Rgb::new(0x80, 0x00, 0x00),
    Rgb::new(0xaa, 0xff, 0xc3),
];

/// Replays a recorded trace. Participants join on their first record,
/// take palette colours in order of appearance and are bound to devices
/// numbered from 1.
pub fn replay_trace(rooms: &RoomsFile, trace: &Trace, opts: &RunOptions) -> Result<SimOutcome, ScenarioError> {
    trace.validate(rooms)?;
    let space = EerySpace::from_config(rooms)?;
    let mut backend = backend(&space, opts)?;

    let mut records: Vec<&TraceRecord> = trace.records.iter().collect();
    records.sort_by_key(|r| (r.t * 1000.0).round() as u64);

    let mut ids: BTreeMap<&str, (ParticipantId, u32)> = BTreeMap::new();
    let mut names = BTreeMap::new();
    let mut last: Option<Millis> = None;
    for r in records {
        let now = Millis((r.t * 1000.0).round() as u64);
        if let Some(prev) = last.filter(|p| *p != now) {
            backend.end_tick(prev)?;
            pace(opts, now.0 - prev.0);
        }
        last = Some(now);
        let entry = match ids.get_mut(r.participant.as_str()) {
            Some(e) => e,
            None => {
                let n = ids.len();
                let color = *PALETTE.get(n).ok_or_else(|| {
                    ScenarioError::Invalid(format!("traces are limited to {} participants", PALETTE.len()))
                })?;
                let room = space.room_by_name(&r.room)?.id;
                let id = backend.join(&r.participant, room, color, now)?;
                backend.bind(id, DeviceId(n as u64 + 1), now);
                names.insert(id, r.participant.clone());
                ids.entry(r.participant.as_str()).or_insert((id, 0))
            }
        };
        entry.1 += 1;
        backend.position(entry.0, r.local().quantize_mm(), entry.1, now);
    }
    if let Some(prev) = last {
        backend.end_tick(prev)?;
    }
    Ok(SimOutcome {
        log: backend.finish()?,
        names,
        trace: trace.clone(),
        space,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rooms() -> RoomsFile {
        RoomsFile::parse(
            r#"{"rooms":[{"id":"main","width_m":6,"depth_m":5,"display_x0_m":2,"display_x1_m":4},
                         {"id":"remote","width_m":4,"depth_m":4,"display_x0_m":1,"display_x1_m":3}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_trace_gives_empty_log() {
        let tr = Trace::new(&rooms());
        for transport in [Transport::InProc, Transport::Loopback] {
            let out = replay_trace(
                &rooms(),
                &tr,
                &RunOptions {
                    transport,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(out.log.is_empty());
        }
    }

    #[test]
    fn trace_replay_matches_across_transports() {
        let mut tr = Trace::new(&rooms());
        for k in 0..40 {
            let t = k as f64 * 0.1;
            tr.records.push(TraceRecord {
                t,
                participant: "a".into(),
                room: "main".into(),
                x: 1.0 + 0.05 * k as f64,
                y: 2.5,
            });
            tr.records.push(TraceRecord {
                t,
                participant: "b".into(),
                room: "remote".into(),
                x: 3.0,
                y: 2.5,
            });
        }
        let run = |transport| {
            replay_trace(
                &rooms(),
                &tr,
                &RunOptions {
                    transport,
                    ..Default::default()
                },
            )
            .unwrap()
            .render_log()
        };
        let inproc = run(Transport::InProc);
        assert!(inproc.contains("BubbleCreated"));
        assert_eq!(inproc, run(Transport::Loopback));
    }

    #[test]
    fn transport_names() {
        assert_eq!("loopback".parse::<Transport>(), Ok(Transport::Loopback));
        assert!("udp".parse::<Transport>().is_err());
        assert_eq!(Transport::InProc.to_string(), "inproc");
    }
}
