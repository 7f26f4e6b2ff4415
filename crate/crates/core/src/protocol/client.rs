//! Client-side replica and message builders.

use std::collections::BTreeMap;

use super::codec::{decode, Body, ClientRole, EventBody, MalformedMessage, SnapshotBody, WireMessage};
use super::view::WorldView;
use crate::events::EventRecord;
use crate::participants::{DeviceId, ParticipantId, Rgb};
use crate::space::{RoomId, Vec2};

/// Event messages held back while waiting for a gap to fill.
const MAX_PENDING: usize = 4096;

/// A client's local copy of the data model.
///
/// Event messages apply in tick order; a gap parks later messages until
/// either the gap fills or a snapshot at or beyond them arrives. Snapshots
/// replace the view wholesale.
#[derive(Debug, Clone, Default)]
pub struct Replica {
    view: WorldView,
    pending: BTreeMap<u64, EventBody>,
    fragments: Option<(u64, Vec<Option<SnapshotBody>>)>,
    applied: Vec<EventRecord>,
    relayed: Vec<(ParticipantId, Vec<u8>)>,
}

impl Replica {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn view(&self) -> &WorldView {
        &self.view
    }

    /// Every event this replica folded in incrementally, in order.
    pub fn applied_events(&self) -> &[EventRecord] {
        &self.applied
    }

    /// Moderator payloads received, oldest first.
    pub fn relayed_payloads(&self) -> &[(ParticipantId, Vec<u8>)] {
        &self.relayed
    }

    pub fn apply_datagram(&mut self, bytes: &[u8]) -> Result<(), MalformedMessage> {
        let msg = decode(bytes)?;
        self.apply(msg);
        Ok(())
    }

    pub fn apply(&mut self, msg: WireMessage) {
        match msg.body {
            Body::Event(body) => self.on_event(body),
            Body::Snapshot(part) => self.on_snapshot(part),
            Body::ModeratorPayload { payload } => self.relayed.push((ParticipantId(msg.sender), payload)),
            _ => {}
        }
    }

    fn on_event(&mut self, body: EventBody) {
        if body.tick <= self.view.tick {
            return;
        }
        if self.pending.len() < MAX_PENDING {
            self.pending.insert(body.tick, body);
        }
        self.drain();
    }

    fn drain(&mut self) {
        while let Some(body) = self.pending.remove(&(self.view.tick + 1)) {
            for (at, ev) in body.events {
                self.view.apply(&ev);
                self.applied.push(EventRecord { at, event: ev });
            }
            self.view.tick = body.tick;
        }
        let tick = self.view.tick;
        self.pending.retain(|&t, _| t > tick);
    }

    fn on_snapshot(&mut self, part: SnapshotBody) {
        if part.tick < self.view.tick {
            return;
        }
        let parts = part.parts as usize;
        let stale = match &self.fragments {
            Some((tick, frags)) => *tick != part.tick || frags.len() != parts,
            None => true,
        };
        if stale {
            if matches!(&self.fragments, Some((tick, _)) if *tick > part.tick) {
                return;
            }
            self.fragments = Some((part.tick, vec![None; parts]));
        }
        let (_, frags) = self.fragments.as_mut().expect("just set");
        let idx = part.part as usize;
        frags[idx] = Some(part);
        if frags.iter().all(Option::is_some) {
            let complete: Vec<SnapshotBody> = frags.drain(..).flatten().collect();
            self.fragments = None;
            self.view = WorldView::from_snapshot(&complete);
            self.drain();
        }
    }
}

/// Builds outgoing messages with a per-client sequence counter.
#[derive(Debug, Clone)]
pub struct ClientSession {
    pub sender: u64,
    seq: u32,
}

impl ClientSession {
    pub fn new(sender: u64) -> Self {
        Self { sender, seq: 0 }
    }

    fn next(&mut self, body: Body) -> WireMessage {
        self.seq = self.seq.wrapping_add(1);
        WireMessage::new(self.sender, self.seq, body)
    }

    pub fn hello(&mut self, role: ClientRole, room: RoomId, color: Rgb, name: &str) -> WireMessage {
        self.next(Body::Hello {
            role,
            room,
            color,
            name: name.to_string(),
        })
    }

    /// Position messages carry their own sequence number so the server can
    /// drop stale ones.
    pub fn position(&self, participant: ParticipantId, local: Vec2, seq: u32) -> WireMessage {
        WireMessage::new(participant.0, seq, Body::PositionUpdate { local })
    }

    pub fn bind(&mut self, participant: ParticipantId, device: DeviceId) -> WireMessage {
        self.next(Body::BindDevice { participant, device })
    }

    pub fn request(&mut self, target: ParticipantId) -> WireMessage {
        self.next(Body::InteractionRequest { target })
    }

    pub fn payload(&mut self, payload: Vec<u8>) -> WireMessage {
        self.next(Body::ModeratorPayload { payload })
    }

    pub fn bye(&mut self) -> WireMessage {
        self.next(Body::Bye)
    }
}
