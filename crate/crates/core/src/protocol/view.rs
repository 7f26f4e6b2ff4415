//! The replicated data model: what every client mirrors from the server.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::codec::{fragment_snapshot, SnapshotBody, SnapshotBubble, SnapshotParticipant};
use crate::bubbles::BubbleId;
use crate::engine::Engine;
use crate::events::EngineEvent;
use crate::participants::{ParticipantId, Rgb};
use crate::space::{RoomId, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub name: String,
    pub room: RoomId,
    pub color: Rgb,
    pub local: Option<Vec2>,
    pub seq: u32,
    pub bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleView {
    pub members: BTreeSet<ParticipantId>,
    pub color: Rgb,
}

/// `tick` counts the event messages folded into this view.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldView {
    pub tick: u64,
    pub participants: BTreeMap<ParticipantId, ParticipantView>,
    pub bubbles: BTreeMap<BubbleId, BubbleView>,
    pub moderator: Option<ParticipantId>,
}

impl WorldView {
    pub fn from_engine(engine: &Engine, tick: u64) -> Self {
        Self {
            tick,
            participants: engine
                .roster()
                .iter()
                .map(|p| {
                    (
                        p.id,
                        ParticipantView {
                            name: p.name.clone(),
                            room: p.home_room,
                            color: p.color,
                            local: p.local,
                            seq: p.last_seq,
                            bound: p.device.is_some(),
                        },
                    )
                })
                .collect(),
            bubbles: engine
                .bubbles()
                .iter()
                .map(|b| {
                    (
                        b.id,
                        BubbleView {
                            members: b.members.clone(),
                            color: b.color,
                        },
                    )
                })
                .collect(),
            moderator: engine.moderator().holder,
        }
    }

    /// Folds one state-bearing event into the view. Transient events
    /// (alerts, paths, payloads, channels) leave it unchanged.
    pub fn apply(&mut self, ev: &EngineEvent) {
        use EngineEvent::*;
        match ev {
            Joined {
                participant,
                name,
                room,
                color,
            } => {
                self.participants.insert(
                    *participant,
                    ParticipantView {
                        name: name.clone(),
                        room: *room,
                        color: *color,
                        local: None,
                        seq: 0,
                        bound: false,
                    },
                );
            }
            Left { participant, .. } => {
                self.participants.remove(participant);
            }
            Bound { participant, .. } | Unbound { participant, .. } => {
                if let Some(p) = self.participants.get_mut(participant) {
                    p.bound = matches!(ev, Bound { .. });
                }
            }
            Moved {
                participant,
                local,
                seq,
            } => {
                if let Some(p) = self.participants.get_mut(participant) {
                    p.local = Some(*local);
                    p.seq = *seq;
                }
            }
            BubbleCreated {
                bubble,
                participants,
                color,
            } => {
                self.bubbles.insert(
                    *bubble,
                    BubbleView {
                        members: participants.clone(),
                        color: *color,
                    },
                );
            }
            BubbleDissolved { bubble, .. } => {
                self.bubbles.remove(bubble);
            }
            MemberJoined {
                bubble,
                participants,
                color,
            } => {
                if let Some(b) = self.bubbles.get_mut(bubble) {
                    b.members.extend(participants.iter().copied());
                    b.color = *color;
                }
            }
            MemberLeft {
                bubble,
                participants,
                color,
            } => {
                if let Some(b) = self.bubbles.get_mut(bubble) {
                    b.members.retain(|m| !participants.contains(m));
                    b.color = *color;
                }
            }
            ModeratorAcquired { to } | ModeratorHandedOver { to, .. } => self.moderator = Some(*to),
            ModeratorReleased { .. } => self.moderator = None,
            BindRejected { .. }
            | ChannelOpened { .. }
            | ChannelClosed { .. }
            | SpeechChannelOpened { .. }
            | SpeechChannelClosed { .. }
            | PayloadRelayed { .. }
            | IntimateInvasion { .. }
            | GlowingPathShown { .. } => {}
        }
    }

    pub fn to_snapshot(&self) -> Vec<SnapshotBody> {
        let participants = self
            .participants
            .iter()
            .map(|(id, p)| SnapshotParticipant {
                id: *id,
                room: p.room,
                local: p.local,
                seq: p.seq,
                bound: p.bound,
                color: p.color,
                name: p.name.clone(),
            })
            .collect();
        let bubbles = self
            .bubbles
            .iter()
            .map(|(id, b)| SnapshotBubble {
                id: *id,
                members: b.members.iter().copied().collect(),
                color: b.color,
            })
            .collect();
        fragment_snapshot(self.tick, self.moderator, participants, bubbles)
    }

    /// Rebuilds a view from a complete, ordered set of fragments.
    pub fn from_snapshot(parts: &[SnapshotBody]) -> Self {
        let mut view = WorldView {
            tick: parts.first().map(|p| p.tick).unwrap_or(0),
            moderator: parts.first().and_then(|p| p.moderator),
            ..Default::default()
        };
        for part in parts {
            for p in &part.participants {
                view.participants.insert(
                    p.id,
                    ParticipantView {
                        name: p.name.clone(),
                        room: p.room,
                        color: p.color,
                        local: p.local,
                        seq: p.seq,
                        bound: p.bound,
                    },
                );
            }
            for b in &part.bubbles {
                view.bubbles.insert(
                    b.id,
                    BubbleView {
                        members: b.members.iter().copied().collect(),
                        color: b.color,
                    },
                );
            }
        }
        view
    }
}
