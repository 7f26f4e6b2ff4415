//! Binary wire format.
//!
//! Every datagram starts with a fixed 14-byte header:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 1    | version (currently 1)         |
//! | 1      | 1    | kind                          |
//! | 2      | 8    | sender id, u64 little-endian  |
//! | 10     | 4    | seq, u32 little-endian        |
//!
//! Integers are little-endian and fixed width. Distances are `f32` metres
//! holding millimetre-quantized values; decoding re-rounds to the millimetre.
//! No datagram exceeds [`MAX_DATAGRAM`] bytes.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::awareness::GlowingPath;
use crate::bubbles::BubbleId;
use crate::events::{EngineEvent, LeaveReason, RejectReason};
use crate::participants::{DeviceId, ParticipantId, Rgb, MAX_NAME_BYTES};
use crate::space::{quantize_mm, RoomId, Vec2};
use crate::Millis;

pub const WIRE_VERSION: u8 = 1;
pub const MAX_DATAGRAM: usize = 1200;
pub const HEADER_LEN: usize = 14;
pub const MAX_MODERATOR_PAYLOAD: usize = crate::moderator::MAX_PAYLOAD_BYTES;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MalformedMessage {
    #[error("truncated datagram: needed {needed} more bytes at offset {at}")]
    Truncated { at: usize, needed: usize },
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("unknown {what} tag {tag}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error("encoded size {0} exceeds {MAX_DATAGRAM}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    HelloAck = 2,
    PositionUpdate = 3,
    BindDevice = 4,
    InteractionRequest = 5,
    ModeratorPayload = 6,
    Snapshot = 7,
    Event = 8,
    Bye = 9,
}

impl MessageKind {
    fn from_u8(v: u8) -> Result<Self, MalformedMessage> {
        Ok(match v {
            1 => Self::Hello,
            2 => Self::HelloAck,
            3 => Self::PositionUpdate,
            4 => Self::BindDevice,
            5 => Self::InteractionRequest,
            6 => Self::ModeratorPayload,
            7 => Self::Snapshot,
            8 => Self::Event,
            9 => Self::Bye,
            other => return Err(MalformedMessage::UnknownKind(other)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ClientRole {
    /// Display client, gateway or operator tool: receives state only.
    Observer = 0,
    /// A tracked person's handheld.
    Participant = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum HelloStatus {
    Ok = 0,
    ColorCollision = 1,
    UnknownRoom = 2,
    InvalidName = 3,
}

/// One participant row of a snapshot; positions are home-room local.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotParticipant {
    pub id: ParticipantId,
    pub room: RoomId,
    pub local: Option<Vec2>,
    pub seq: u32,
    pub bound: bool,
    pub color: Rgb,
    pub name: String,
}

impl SnapshotParticipant {
    const FLAG_POSITIONED: u8 = 0b01;
    const FLAG_BOUND: u8 = 0b10;

    fn encoded_len(&self) -> usize {
        8 + 2 + 4 + 4 + 4 + 1 + 3 + 1 + self.name.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBubble {
    pub id: BubbleId,
    pub members: Vec<ParticipantId>,
    pub color: Rgb,
}

impl SnapshotBubble {
    fn encoded_len(&self) -> usize {
        8 + 3 + 1 + 8 * self.members.len()
    }
}

/// A snapshot fragment. A full snapshot is `parts` fragments sharing a tick;
/// bubbles and the moderator travel in every fragment's header area only
/// when they fit, otherwise in later fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBody {
    pub tick: u64,
    pub part: u8,
    pub parts: u8,
    pub moderator: Option<ParticipantId>,
    pub participants: Vec<SnapshotParticipant>,
    pub bubbles: Vec<SnapshotBubble>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventBody {
    pub tick: u64,
    pub events: Vec<(Millis, EngineEvent)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello {
        role: ClientRole,
        room: RoomId,
        color: Rgb,
        name: String,
    },
    HelloAck {
        participant: ParticipantId,
        status: HelloStatus,
    },
    PositionUpdate {
        local: Vec2,
    },
    BindDevice {
        participant: ParticipantId,
        device: DeviceId,
    },
    InteractionRequest {
        target: ParticipantId,
    },
    ModeratorPayload {
        payload: Vec<u8>,
    },
    Snapshot(SnapshotBody),
    Event(EventBody),
    Bye,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub version: u8,
    pub sender: u64,
    pub seq: u32,
    pub body: Body,
}

impl WireMessage {
    pub fn new(sender: u64, seq: u32, body: Body) -> Self {
        Self {
            version: WIRE_VERSION,
            sender,
            seq,
            body,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self.body {
            Body::Hello { .. } => MessageKind::Hello,
            Body::HelloAck { .. } => MessageKind::HelloAck,
            Body::PositionUpdate { .. } => MessageKind::PositionUpdate,
            Body::BindDevice { .. } => MessageKind::BindDevice,
            Body::InteractionRequest { .. } => MessageKind::InteractionRequest,
            Body::ModeratorPayload { .. } => MessageKind::ModeratorPayload,
            Body::Snapshot(_) => MessageKind::Snapshot,
            Body::Event(_) => MessageKind::Event,
            Body::Bye => MessageKind::Bye,
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn meters(&mut self, v: f64) {
        self.buf.extend_from_slice(&(quantize_mm(v) as f32).to_le_bytes());
    }
    fn vec2(&mut self, v: Vec2) {
        self.meters(v.x);
        self.meters(v.y);
    }
    fn rgb(&mut self, c: Rgb) {
        self.buf.extend_from_slice(&[c.r, c.g, c.b]);
    }
    fn short_bytes(&mut self, b: &[u8]) {
        self.u8(b.len() as u8);
        self.buf.extend_from_slice(b);
    }
    fn ids(&mut self, ids: &BTreeSet<ParticipantId>) {
        self.u8(ids.len() as u8);
        for id in ids {
            self.u64(id.0);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedMessage> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(MalformedMessage::Truncated {
                at: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, MalformedMessage> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, MalformedMessage> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, MalformedMessage> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, MalformedMessage> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn meters(&mut self) -> Result<f64, MalformedMessage> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(MalformedMessage::Invalid("non-finite distance"));
        }
        Ok(quantize_mm(v as f64))
    }
    fn vec2(&mut self) -> Result<Vec2, MalformedMessage> {
        Ok(Vec2::new(self.meters()?, self.meters()?))
    }
    fn rgb(&mut self) -> Result<Rgb, MalformedMessage> {
        let b = self.take(3)?;
        Ok(Rgb::new(b[0], b[1], b[2]))
    }
    fn short_bytes(&mut self) -> Result<&'a [u8], MalformedMessage> {
        let n = self.u8()? as usize;
        self.take(n)
    }
    fn name(&mut self) -> Result<String, MalformedMessage> {
        let b = self.short_bytes()?;
        if b.len() > MAX_NAME_BYTES {
            return Err(MalformedMessage::Invalid("name too long"));
        }
        String::from_utf8(b.to_vec()).map_err(|_| MalformedMessage::Invalid("name is not utf-8"))
    }
    fn ids(&mut self) -> Result<BTreeSet<ParticipantId>, MalformedMessage> {
        let n = self.u8()?;
        let mut out = BTreeSet::new();
        for _ in 0..n {
            if !out.insert(ParticipantId(self.u64()?)) {
                return Err(MalformedMessage::Invalid("duplicate id in set"));
            }
        }
        Ok(out)
    }
    fn finish(&self) -> Result<(), MalformedMessage> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(MalformedMessage::Trailing(n)),
        }
    }
}

// Event tags on the wire.
mod tag {
    pub const JOINED: u8 = 1;
    pub const LEFT: u8 = 2;
    pub const BOUND: u8 = 3;
    pub const UNBOUND: u8 = 4;
    pub const BIND_REJECTED: u8 = 5;
    pub const MOVED: u8 = 6;
    pub const BUBBLE_CREATED: u8 = 7;
    pub const BUBBLE_DISSOLVED: u8 = 8;
    pub const MEMBER_JOINED: u8 = 9;
    pub const MEMBER_LEFT: u8 = 10;
    pub const CHANNEL_OPENED: u8 = 11;
    pub const CHANNEL_CLOSED: u8 = 12;
    pub const MOD_ACQUIRED: u8 = 13;
    pub const MOD_RELEASED: u8 = 14;
    pub const MOD_HANDED_OVER: u8 = 15;
    pub const SPEECH_OPENED: u8 = 16;
    pub const SPEECH_CLOSED: u8 = 17;
    pub const PAYLOAD_RELAYED: u8 = 18;
    pub const INTIMATE_INVASION: u8 = 19;
    pub const GLOWING_PATH: u8 = 20;
}

fn write_event(w: &mut Writer, at: Millis, ev: &EngineEvent) {
    use EngineEvent::*;
    w.u64(at.0);
    match ev {
        Joined {
            participant,
            name,
            room,
            color,
        } => {
            w.u8(tag::JOINED);
            w.u64(participant.0);
            w.u16(room.0);
            w.rgb(*color);
            w.short_bytes(name.as_bytes());
        }
        Left { participant, reason } => {
            w.u8(tag::LEFT);
            w.u64(participant.0);
            w.u8(match reason {
                LeaveReason::Bye => 0,
                LeaveReason::Silence => 1,
            });
        }
        Bound { participant, device } => {
            w.u8(tag::BOUND);
            w.u64(participant.0);
            w.u64(device.0);
        }
        Unbound { participant, device } => {
            w.u8(tag::UNBOUND);
            w.u64(participant.0);
            w.u64(device.0);
        }
        BindRejected {
            participant,
            device,
            reason,
        } => {
            w.u8(tag::BIND_REJECTED);
            w.u64(participant.0);
            w.u64(device.0);
            w.u8(match reason {
                RejectReason::DeviceAlreadyBound => 0,
                RejectReason::UnknownParticipant => 1,
            });
        }
        Moved {
            participant,
            local,
            seq,
        } => {
            w.u8(tag::MOVED);
            w.u64(participant.0);
            w.vec2(*local);
            w.u32(*seq);
        }
        BubbleCreated {
            bubble,
            participants,
            color,
        }
        | BubbleDissolved {
            bubble,
            participants,
            color,
        }
        | MemberJoined {
            bubble,
            participants,
            color,
        }
        | MemberLeft {
            bubble,
            participants,
            color,
        } => {
            w.u8(match ev {
                BubbleCreated { .. } => tag::BUBBLE_CREATED,
                BubbleDissolved { .. } => tag::BUBBLE_DISSOLVED,
                MemberJoined { .. } => tag::MEMBER_JOINED,
                _ => tag::MEMBER_LEFT,
            });
            w.u64(bubble.0);
            w.rgb(*color);
            w.ids(participants);
        }
        ChannelOpened { bubble, participants } | ChannelClosed { bubble, participants } => {
            w.u8(if matches!(ev, ChannelOpened { .. }) {
                tag::CHANNEL_OPENED
            } else {
                tag::CHANNEL_CLOSED
            });
            w.u64(bubble.0);
            w.ids(participants);
        }
        ModeratorAcquired { to } => {
            w.u8(tag::MOD_ACQUIRED);
            w.u64(to.0);
        }
        ModeratorReleased { from } => {
            w.u8(tag::MOD_RELEASED);
            w.u64(from.0);
        }
        ModeratorHandedOver { from, to } => {
            w.u8(tag::MOD_HANDED_OVER);
            w.u64(from.0);
            w.u64(to.0);
        }
        SpeechChannelOpened { participant } => {
            w.u8(tag::SPEECH_OPENED);
            w.u64(participant.0);
        }
        SpeechChannelClosed { participant } => {
            w.u8(tag::SPEECH_CLOSED);
            w.u64(participant.0);
        }
        PayloadRelayed { from, payload } => {
            w.u8(tag::PAYLOAD_RELAYED);
            w.u64(from.0);
            let bytes = hex::decode(payload).unwrap_or_default();
            w.u16(bytes.len() as u16);
            w.buf.extend_from_slice(&bytes);
        }
        IntimateInvasion {
            device,
            victim,
            intruder,
        } => {
            w.u8(tag::INTIMATE_INVASION);
            w.u64(device.0);
            w.u64(victim.0);
            w.u64(intruder.0);
        }
        GlowingPathShown { path } => {
            w.u8(tag::GLOWING_PATH);
            w.u16(path.target_room.0);
            w.u64(path.target.0);
            w.u64(path.requester.0);
            w.vec2(path.from);
            w.vec2(path.to);
            w.u64(path.ttl_ms);
            w.u64(path.expires_at.0);
        }
    }
}

fn read_event(r: &mut Reader) -> Result<(Millis, EngineEvent), MalformedMessage> {
    use EngineEvent::*;
    let at = Millis(r.u64()?);
    let t = r.u8()?;
    let pid = |r: &mut Reader| r.u64().map(ParticipantId);
    let ev = match t {
        tag::JOINED => {
            let participant = pid(r)?;
            let room = RoomId(r.u16()?);
            let color = r.rgb()?;
            let name = r.name()?;
            Joined {
                participant,
                name,
                room,
                color,
            }
        }
        tag::LEFT => {
            let participant = pid(r)?;
            let reason = match r.u8()? {
                0 => LeaveReason::Bye,
                1 => LeaveReason::Silence,
                tag => {
                    return Err(MalformedMessage::BadTag {
                        what: "leave reason",
                        tag,
                    })
                }
            };
            Left { participant, reason }
        }
        tag::BOUND => Bound {
            participant: pid(r)?,
            device: DeviceId(r.u64()?),
        },
        tag::UNBOUND => Unbound {
            participant: pid(r)?,
            device: DeviceId(r.u64()?),
        },
        tag::BIND_REJECTED => {
            let participant = pid(r)?;
            let device = DeviceId(r.u64()?);
            let reason = match r.u8()? {
                0 => RejectReason::DeviceAlreadyBound,
                1 => RejectReason::UnknownParticipant,
                tag => {
                    return Err(MalformedMessage::BadTag {
                        what: "reject reason",
                        tag,
                    })
                }
            };
            BindRejected {
                participant,
                device,
                reason,
            }
        }
        tag::MOVED => Moved {
            participant: pid(r)?,
            local: r.vec2()?,
            seq: r.u32()?,
        },
        tag::BUBBLE_CREATED | tag::BUBBLE_DISSOLVED | tag::MEMBER_JOINED | tag::MEMBER_LEFT => {
            let bubble = BubbleId(r.u64()?);
            let color = r.rgb()?;
            let participants = r.ids()?;
            match t {
                tag::BUBBLE_CREATED => BubbleCreated {
                    bubble,
                    participants,
                    color,
                },
                tag::BUBBLE_DISSOLVED => BubbleDissolved {
                    bubble,
                    participants,
                    color,
                },
                tag::MEMBER_JOINED => MemberJoined {
                    bubble,
                    participants,
                    color,
                },
                _ => MemberLeft {
                    bubble,
                    participants,
                    color,
                },
            }
        }
        tag::CHANNEL_OPENED => ChannelOpened {
            bubble: BubbleId(r.u64()?),
            participants: r.ids()?,
        },
        tag::CHANNEL_CLOSED => ChannelClosed {
            bubble: BubbleId(r.u64()?),
            participants: r.ids()?,
        },
        tag::MOD_ACQUIRED => ModeratorAcquired { to: pid(r)? },
        tag::MOD_RELEASED => ModeratorReleased { from: pid(r)? },
        tag::MOD_HANDED_OVER => ModeratorHandedOver {
            from: pid(r)?,
            to: pid(r)?,
        },
        tag::SPEECH_OPENED => SpeechChannelOpened { participant: pid(r)? },
        tag::SPEECH_CLOSED => SpeechChannelClosed { participant: pid(r)? },
        tag::PAYLOAD_RELAYED => {
            let from = pid(r)?;
            let n = r.u16()? as usize;
            if n > MAX_MODERATOR_PAYLOAD {
                return Err(MalformedMessage::Invalid("payload too large"));
            }
            PayloadRelayed {
                from,
                payload: hex::encode(r.take(n)?),
            }
        }
        tag::INTIMATE_INVASION => IntimateInvasion {
            device: DeviceId(r.u64()?),
            victim: pid(r)?,
            intruder: pid(r)?,
        },
        tag::GLOWING_PATH => GlowingPathShown {
            path: GlowingPath {
                target_room: RoomId(r.u16()?),
                target: pid(r)?,
                requester: pid(r)?,
                from: r.vec2()?,
                to: r.vec2()?,
                ttl_ms: r.u64()?,
                expires_at: Millis(r.u64()?),
            },
        },
        tag => return Err(MalformedMessage::BadTag { what: "event", tag }),
    };
    Ok((at, ev))
}

/// Wire size of one event entry.
pub fn event_len(at: Millis, ev: &EngineEvent) -> usize {
    let mut w = Writer { buf: Vec::new() };
    write_event(&mut w, at, ev);
    w.buf.len()
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, MalformedMessage> {
    let mut w = Writer {
        buf: Vec::with_capacity(64),
    };
    w.u8(msg.version);
    w.u8(msg.kind() as u8);
    w.u64(msg.sender);
    w.u32(msg.seq);
    match &msg.body {
        Body::Hello {
            role,
            room,
            color,
            name,
        } => {
            if name.len() > MAX_NAME_BYTES {
                return Err(MalformedMessage::Invalid("name too long"));
            }
            w.u8(*role as u8);
            w.u16(room.0);
            w.rgb(*color);
            w.short_bytes(name.as_bytes());
        }
        Body::HelloAck { participant, status } => {
            w.u64(participant.0);
            w.u8(*status as u8);
        }
        Body::PositionUpdate { local } => w.vec2(*local),
        Body::BindDevice { participant, device } => {
            w.u64(participant.0);
            w.u64(device.0);
        }
        Body::InteractionRequest { target } => w.u64(target.0),
        Body::ModeratorPayload { payload } => {
            if payload.len() > MAX_MODERATOR_PAYLOAD {
                return Err(MalformedMessage::Invalid("payload too large"));
            }
            w.u16(payload.len() as u16);
            w.buf.extend_from_slice(payload);
        }
        Body::Snapshot(s) => {
            w.u64(s.tick);
            w.u8(s.part);
            w.u8(s.parts);
            match s.moderator {
                Some(id) => {
                    w.u8(1);
                    w.u64(id.0);
                }
                None => w.u8(0),
            }
            w.u8(s.participants.len() as u8);
            for p in &s.participants {
                w.u64(p.id.0);
                w.u16(p.room.0);
                w.vec2(p.local.unwrap_or(Vec2::ZERO));
                w.u32(p.seq);
                let mut flags = 0;
                if p.local.is_some() {
                    flags |= SnapshotParticipant::FLAG_POSITIONED;
                }
                if p.bound {
                    flags |= SnapshotParticipant::FLAG_BOUND;
                }
                w.u8(flags);
                w.rgb(p.color);
                w.short_bytes(p.name.as_bytes());
            }
            w.u8(s.bubbles.len() as u8);
            for b in &s.bubbles {
                w.u64(b.id.0);
                w.rgb(b.color);
                w.u8(b.members.len() as u8);
                for m in &b.members {
                    w.u64(m.0);
                }
            }
        }
        Body::Event(e) => {
            w.u64(e.tick);
            w.u16(e.events.len() as u16);
            for (at, ev) in &e.events {
                write_event(&mut w, *at, ev);
            }
        }
        Body::Bye => {}
    }
    if w.buf.len() > MAX_DATAGRAM {
        return Err(MalformedMessage::TooLarge(w.buf.len()));
    }
    Ok(w.buf)
}

pub fn decode(bytes: &[u8]) -> Result<WireMessage, MalformedMessage> {
    if bytes.len() > MAX_DATAGRAM {
        return Err(MalformedMessage::TooLarge(bytes.len()));
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(MalformedMessage::BadVersion(version));
    }
    let kind = MessageKind::from_u8(r.u8()?)?;
    let sender = r.u64()?;
    let seq = r.u32()?;
    let body = match kind {
        MessageKind::Hello => {
            let role = match r.u8()? {
                0 => ClientRole::Observer,
                1 => ClientRole::Participant,
                tag => return Err(MalformedMessage::BadTag { what: "role", tag }),
            };
            Body::Hello {
                role,
                room: RoomId(r.u16()?),
                color: r.rgb()?,
                name: r.name()?,
            }
        }
        MessageKind::HelloAck => Body::HelloAck {
            participant: ParticipantId(r.u64()?),
            status: match r.u8()? {
                0 => HelloStatus::Ok,
                1 => HelloStatus::ColorCollision,
                2 => HelloStatus::UnknownRoom,
                3 => HelloStatus::InvalidName,
                tag => {
                    return Err(MalformedMessage::BadTag {
                        what: "hello status",
                        tag,
                    })
                }
            },
        },
        MessageKind::PositionUpdate => Body::PositionUpdate { local: r.vec2()? },
        MessageKind::BindDevice => Body::BindDevice {
            participant: ParticipantId(r.u64()?),
            device: DeviceId(r.u64()?),
        },
        MessageKind::InteractionRequest => Body::InteractionRequest {
            target: ParticipantId(r.u64()?),
        },
        MessageKind::ModeratorPayload => {
            let n = r.u16()? as usize;
            if n > MAX_MODERATOR_PAYLOAD {
                return Err(MalformedMessage::Invalid("payload too large"));
            }
            Body::ModeratorPayload {
                payload: r.take(n)?.to_vec(),
            }
        }
        MessageKind::Snapshot => {
            let tick = r.u64()?;
            let part = r.u8()?;
            let parts = r.u8()?;
            if parts == 0 || part >= parts {
                return Err(MalformedMessage::Invalid("fragment index"));
            }
            let moderator = match r.u8()? {
                0 => None,
                1 => Some(ParticipantId(r.u64()?)),
                tag => {
                    return Err(MalformedMessage::BadTag {
                        what: "moderator flag",
                        tag,
                    })
                }
            };
            let n = r.u8()?;
            let mut participants = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let id = ParticipantId(r.u64()?);
                let room = RoomId(r.u16()?);
                let local = r.vec2()?;
                let seq = r.u32()?;
                let flags = r.u8()?;
                if flags & !0b11 != 0 {
                    return Err(MalformedMessage::Invalid("participant flags"));
                }
                let color = r.rgb()?;
                let name = r.name()?;
                participants.push(SnapshotParticipant {
                    id,
                    room,
                    local: (flags & SnapshotParticipant::FLAG_POSITIONED != 0).then_some(local),
                    seq,
                    bound: flags & SnapshotParticipant::FLAG_BOUND != 0,
                    color,
                    name,
                });
            }
            let nb = r.u8()?;
            let mut bubbles = Vec::with_capacity(nb as usize);
            for _ in 0..nb {
                let id = BubbleId(r.u64()?);
                let color = r.rgb()?;
                let m = r.u8()?;
                let mut members = Vec::with_capacity(m as usize);
                for _ in 0..m {
                    members.push(ParticipantId(r.u64()?));
                }
                bubbles.push(SnapshotBubble { id, members, color });
            }
            Body::Snapshot(SnapshotBody {
                tick,
                part,
                parts,
                moderator,
                participants,
                bubbles,
            })
        }
        MessageKind::Event => {
            let tick = r.u64()?;
            let n = r.u16()?;
            let mut events = Vec::new();
            for _ in 0..n {
                events.push(read_event(&mut r)?);
            }
            Body::Event(EventBody { tick, events })
        }
        MessageKind::Bye => Body::Bye,
    };
    r.finish()?;
    Ok(WireMessage {
        version,
        sender,
        seq,
        body,
    })
}

/// Splits a full snapshot into fragments that each fit in one datagram.
/// Participants are packed first, then bubbles; the moderator rides on
/// every fragment.
pub fn fragment_snapshot(
    tick: u64,
    moderator: Option<ParticipantId>,
    participants: Vec<SnapshotParticipant>,
    bubbles: Vec<SnapshotBubble>,
) -> Vec<SnapshotBody> {
    // header + tick + part/parts + moderator + two counts
    const FIXED: usize = HEADER_LEN + 8 + 2 + 9 + 2;
    let budget = MAX_DATAGRAM - FIXED;
    let mut frags: Vec<SnapshotBody> = Vec::new();
    let mut cur = SnapshotBody {
        tick,
        part: 0,
        parts: 1,
        moderator,
        participants: Vec::new(),
        bubbles: Vec::new(),
    };
    let mut used = 0;
    let flush = |cur: &mut SnapshotBody, frags: &mut Vec<SnapshotBody>, used: &mut usize| {
        let next = SnapshotBody {
            tick,
            part: 0,
            parts: 1,
            moderator,
            participants: Vec::new(),
            bubbles: Vec::new(),
        };
        frags.push(std::mem::replace(cur, next));
        *used = 0;
    };
    for p in participants {
        let len = p.encoded_len();
        if used + len > budget || cur.participants.len() == u8::MAX as usize {
            flush(&mut cur, &mut frags, &mut used);
        }
        used += len;
        cur.participants.push(p);
    }
    for b in bubbles {
        let len = b.encoded_len();
        if used + len > budget || cur.bubbles.len() == u8::MAX as usize {
            flush(&mut cur, &mut frags, &mut used);
        }
        used += len;
        cur.bubbles.push(b);
    }
    frags.push(cur);
    let parts = frags.len() as u8;
    for (i, f) in frags.iter_mut().enumerate() {
        f.part = i as u8;
        f.parts = parts;
    }
    frags
}

/// Packs events into as few datagrams as possible. Each returned group
/// encodes within [`MAX_DATAGRAM`] once wrapped in an `Event` message.
pub fn pack_events(events: Vec<(Millis, EngineEvent)>) -> Vec<Vec<(Millis, EngineEvent)>> {
    const FIXED: usize = HEADER_LEN + 8 + 2;
    let budget = MAX_DATAGRAM - FIXED;
    let mut groups: Vec<Vec<(Millis, EngineEvent)>> = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for (at, ev) in events {
        let len = event_len(at, &ev);
        if !cur.is_empty() && used + len > budget {
            groups.push(std::mem::take(&mut cur));
            used = 0;
        }
        used += len;
        cur.push((at, ev));
    }
    if !cur.is_empty() {
        groups.push(cur);
    }
    groups
}
