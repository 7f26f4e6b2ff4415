//! The observable event stream and its JSON-lines log form.

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::awareness::{GlowingPath, HapticAlert};
use crate::bubbles::{BubbleEvent, BubbleEventKind, BubbleId};
use crate::moderator::{ModeratorEvent, ModeratorEventKind};
use crate::participants::{DeviceId, ParticipantId, Rgb};
use crate::space::{RoomId, Vec2};
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaveReason {
    Bye,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    DeviceAlreadyBound,
    UnknownParticipant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EngineEvent {
    Joined {
        participant: ParticipantId,
        name: String,
        room: RoomId,
        color: Rgb,
    },
    Left {
        participant: ParticipantId,
        reason: LeaveReason,
    },
    Bound {
        participant: ParticipantId,
        device: DeviceId,
    },
    Unbound {
        participant: ParticipantId,
        device: DeviceId,
    },
    BindRejected {
        participant: ParticipantId,
        device: DeviceId,
        reason: RejectReason,
    },
    /// Accepted position update, in home-room coordinates.
    Moved {
        participant: ParticipantId,
        local: Vec2,
        seq: u32,
    },
    BubbleCreated {
        bubble: BubbleId,
        participants: BTreeSet<ParticipantId>,
        color: Rgb,
    },
    BubbleDissolved {
        bubble: BubbleId,
        participants: BTreeSet<ParticipantId>,
        color: Rgb,
    },
    MemberJoined {
        bubble: BubbleId,
        participants: BTreeSet<ParticipantId>,
        color: Rgb,
    },
    MemberLeft {
        bubble: BubbleId,
        participants: BTreeSet<ParticipantId>,
        color: Rgb,
    },
    ChannelOpened {
        bubble: BubbleId,
        participants: BTreeSet<ParticipantId>,
    },
    ChannelClosed {
        bubble: BubbleId,
        participants: BTreeSet<ParticipantId>,
    },
    ModeratorAcquired {
        to: ParticipantId,
    },
    ModeratorReleased {
        from: ParticipantId,
    },
    ModeratorHandedOver {
        from: ParticipantId,
        to: ParticipantId,
    },
    SpeechChannelOpened {
        participant: ParticipantId,
    },
    SpeechChannelClosed {
        participant: ParticipantId,
    },
    PayloadRelayed {
        from: ParticipantId,
        payload: String,
    },
    IntimateInvasion {
        device: DeviceId,
        victim: ParticipantId,
        intruder: ParticipantId,
    },
    GlowingPathShown {
        path: GlowingPath,
    },
}

impl EngineEvent {
    pub const KINDS: [&'static str; 20] = [
        "Joined",
        "Left",
        "Bound",
        "Unbound",
        "BindRejected",
        "Moved",
        "BubbleCreated",
        "BubbleDissolved",
        "MemberJoined",
        "MemberLeft",
        "ChannelOpened",
        "ChannelClosed",
        "ModeratorAcquired",
        "ModeratorReleased",
        "ModeratorHandedOver",
        "SpeechChannelOpened",
        "SpeechChannelClosed",
        "PayloadRelayed",
        "IntimateInvasion",
        "GlowingPathShown",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            EngineEvent::Joined { .. } => "Joined",
            EngineEvent::Left { .. } => "Left",
            EngineEvent::Bound { .. } => "Bound",
            EngineEvent::Unbound { .. } => "Unbound",
            EngineEvent::BindRejected { .. } => "BindRejected",
            EngineEvent::Moved { .. } => "Moved",
            EngineEvent::BubbleCreated { .. } => "BubbleCreated",
            EngineEvent::BubbleDissolved { .. } => "BubbleDissolved",
            EngineEvent::MemberJoined { .. } => "MemberJoined",
            EngineEvent::MemberLeft { .. } => "MemberLeft",
            EngineEvent::ChannelOpened { .. } => "ChannelOpened",
            EngineEvent::ChannelClosed { .. } => "ChannelClosed",
            EngineEvent::ModeratorAcquired { .. } => "ModeratorAcquired",
            EngineEvent::ModeratorReleased { .. } => "ModeratorReleased",
            EngineEvent::ModeratorHandedOver { .. } => "ModeratorHandedOver",
            EngineEvent::SpeechChannelOpened { .. } => "SpeechChannelOpened",
            EngineEvent::SpeechChannelClosed { .. } => "SpeechChannelClosed",
            EngineEvent::PayloadRelayed { .. } => "PayloadRelayed",
            EngineEvent::IntimateInvasion { .. } => "IntimateInvasion",
            EngineEvent::GlowingPathShown { .. } => "GlowingPathShown",
        }
    }

    /// Every participant the event names.
    pub fn participants(&self) -> BTreeSet<ParticipantId> {
        use EngineEvent::*;
        match self {
            Joined { participant, .. }
            | Left { participant, .. }
            | Bound { participant, .. }
            | Unbound { participant, .. }
            | BindRejected { participant, .. }
            | Moved { participant, .. }
            | SpeechChannelOpened { participant }
            | SpeechChannelClosed { participant } => [*participant].into(),
            BubbleCreated { participants, .. }
            | BubbleDissolved { participants, .. }
            | MemberJoined { participants, .. }
            | MemberLeft { participants, .. }
            | ChannelOpened { participants, .. }
            | ChannelClosed { participants, .. } => participants.clone(),
            ModeratorAcquired { to } => [*to].into(),
            ModeratorReleased { from } | PayloadRelayed { from, .. } => [*from].into(),
            ModeratorHandedOver { from, to } => [*from, *to].into(),
            IntimateInvasion { victim, intruder, .. } => [*victim, *intruder].into(),
            GlowingPathShown { path } => [path.requester, path.target].into(),
        }
    }

    /// Position deltas are replicated but kept out of the event log.
    pub fn is_logged(&self) -> bool {
        !matches!(self, EngineEvent::Moved { .. })
    }
}

impl From<BubbleEvent> for EngineEvent {
    fn from(ev: BubbleEvent) -> Self {
        let BubbleEvent {
            kind,
            bubble,
            participants,
            color,
        } = ev;
        match kind {
            BubbleEventKind::Created => EngineEvent::BubbleCreated {
                bubble,
                participants,
                color,
            },
            BubbleEventKind::Dissolved => EngineEvent::BubbleDissolved {
                bubble,
                participants,
                color,
            },
            BubbleEventKind::MemberJoined => EngineEvent::MemberJoined {
                bubble,
                participants,
                color,
            },
            BubbleEventKind::MemberLeft => EngineEvent::MemberLeft {
                bubble,
                participants,
                color,
            },
            BubbleEventKind::ChannelOpened => EngineEvent::ChannelOpened { bubble, participants },
            BubbleEventKind::ChannelClosed => EngineEvent::ChannelClosed { bubble, participants },
        }
    }
}

impl EngineEvent {
    /// Inverse of `From<BubbleEvent>`, for replicas rebuilding bubble state.
    pub fn as_bubble_event(&self) -> Option<BubbleEvent> {
        let (kind, bubble, participants, color) = match self {
            EngineEvent::BubbleCreated {
                bubble,
                participants,
                color,
            } => (BubbleEventKind::Created, bubble, participants, *color),
            EngineEvent::BubbleDissolved {
                bubble,
                participants,
                color,
            } => (BubbleEventKind::Dissolved, bubble, participants, *color),
            EngineEvent::MemberJoined {
                bubble,
                participants,
                color,
            } => (BubbleEventKind::MemberJoined, bubble, participants, *color),
            EngineEvent::MemberLeft {
                bubble,
                participants,
                color,
            } => (BubbleEventKind::MemberLeft, bubble, participants, *color),
            _ => return None,
        };
        Some(BubbleEvent {
            kind,
            bubble: *bubble,
            participants: participants.clone(),
            color,
        })
    }
}

impl From<ModeratorEvent> for EngineEvent {
    fn from(ev: ModeratorEvent) -> Self {
        match (ev.kind, ev.from, ev.to) {
            (ModeratorEventKind::Acquired, _, Some(to)) => EngineEvent::ModeratorAcquired { to },
            (ModeratorEventKind::Released, Some(from), _) => EngineEvent::ModeratorReleased { from },
            (ModeratorEventKind::HandedOver, Some(from), Some(to)) => EngineEvent::ModeratorHandedOver { from, to },
            _ => unreachable!("malformed moderator event {ev:?}"),
        }
    }
}

impl From<HapticAlert> for EngineEvent {
    fn from(a: HapticAlert) -> Self {
        EngineEvent::IntimateInvasion {
            device: a.device,
            victim: a.victim,
            intruder: a.intruder,
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub at: Millis,
    #[serde(flatten)]
    pub event: EngineEvent,
}

impl EventRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event records serialize")
    }
}

/// Writes logged records as JSON lines.
pub fn write_log<W: Write>(mut out: W, records: &[EventRecord]) -> io::Result<()> {
    for r in records.iter().filter(|r| r.event.is_logged()) {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

pub fn render_log(records: &[EventRecord]) -> String {
    let mut buf = Vec::new();
    write_log(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_json() {
        let recs = vec![
            EventRecord {
                at: Millis(1200),
                event: EngineEvent::BubbleCreated {
                    bubble: BubbleId(1),
                    participants: [ParticipantId(1), ParticipantId(2)].into(),
                    color: Rgb::new(128, 0, 128),
                },
            },
            EventRecord {
                at: Millis(1300),
                event: EngineEvent::Moved {
                    participant: ParticipantId(1),
                    local: Vec2::new(1.0, 2.0),
                    seq: 3,
                },
            },
            EventRecord {
                at: Millis(1400),
                event: EngineEvent::ModeratorHandedOver {
                    from: ParticipantId(1),
                    to: ParticipantId(2),
                },
            },
        ];
        let text = render_log(&recs);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"at":1200,"kind":"BubbleCreated","bubble":1,"participants":[1,2]"#));
        let back = parse_log(&text).unwrap();
        assert_eq!(back, vec![recs[0].clone(), recs[2].clone()]);
    }
}
