//! Moderator role for the shared wall display.
//!
//! The moderator space is the strip in front of the display: at most
//! `depth` metres from the wall and laterally within the display's x-extent.
//! The holder keeps the role until they leave a slightly deeper exit strip,
//! regardless of who else walks in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::participants::ParticipantId;
use crate::space::{at_most, Vec2};
use crate::Millis;

/// Upper bound on relayed moderator payloads.
pub const MAX_PAYLOAD_BYTES: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeratorError {
    #[error("{0} is not the moderator")]
    NotModerator(ParticipantId),
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD_BYTES}")]
    PayloadTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeratorZone {
    /// Virtual x-interval in front of the display.
    pub x_range: (f64, f64),
    pub depth: f64,
    pub exit_depth: f64,
}

impl ModeratorZone {
    fn inside(&self, p: Vec2, depth: f64) -> bool {
        at_most(0.0, p.y) && at_most(p.y, depth) && at_most(self.x_range.0, p.x) && at_most(p.x, self.x_range.1)
    }

    /// Entry test.
    pub fn contains(&self, p: Vec2) -> bool {
        self.inside(p, self.depth)
    }

    /// Test applied to the current holder.
    pub fn holder_contains(&self, p: Vec2) -> bool {
        self.inside(p, self.exit_depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModeratorState {
    pub holder: Option<ParticipantId>,
    pub since: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeratorEventKind {
    Acquired,
    Released,
    HandedOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeratorEvent {
    pub kind: ModeratorEventKind,
    pub from: Option<ParticipantId>,
    pub to: Option<ParticipantId>,
}

impl ModeratorEvent {
    /// Speech channel transitions implied by this event, closes first.
    pub fn speech_changes(&self) -> Vec<(bool, ParticipantId)> {
        let mut out = Vec::new();
        if let Some(from) = self.from {
            out.push((false, from));
        }
        if let Some(to) = self.to {
            out.push((true, to));
        }
        out
    }
}

/// Nearest to the wall first, then smallest id.
fn best_candidate(
    zone: &ModeratorZone,
    positions: &[(ParticipantId, Vec2)],
    exclude: Option<ParticipantId>,
) -> Option<ParticipantId> {
    positions
        .iter()
        .filter(|(id, pos)| Some(*id) != exclude && zone.contains(*pos))
        .min_by_key(|(id, pos)| (pos.grid().y, *id))
        .map(|(id, _)| *id)
}

/// Advances the moderator state machine. `positions` lists the
/// interaction-eligible participants only; a holder missing from it is
/// treated as having left.
pub fn step(
    state: ModeratorState,
    positions: &[(ParticipantId, Vec2)],
    zone: &ModeratorZone,
    now: Millis,
) -> (ModeratorState, Vec<ModeratorEvent>) {
    match state.holder {
        None => match best_candidate(zone, positions, None) {
            Some(to) => (
                ModeratorState {
                    holder: Some(to),
                    since: now,
                },
                vec![ModeratorEvent {
                    kind: ModeratorEventKind::Acquired,
                    from: None,
                    to: Some(to),
                }],
            ),
            None => (state, Vec::new()),
        },
        Some(holder) => {
            let still_inside = positions
                .iter()
                .any(|(id, pos)| *id == holder && zone.holder_contains(*pos));
            if still_inside {
                return (state, Vec::new());
            }
            match best_candidate(zone, positions, Some(holder)) {
                Some(to) => (
                    ModeratorState {
                        holder: Some(to),
                        since: now,
                    },
                    vec![ModeratorEvent {
                        kind: ModeratorEventKind::HandedOver,
                        from: Some(holder),
                        to: Some(to),
                    }],
                ),
                None => (
                    ModeratorState {
                        holder: None,
                        since: now,
                    },
                    vec![ModeratorEvent {
                        kind: ModeratorEventKind::Released,
                        from: Some(holder),
                        to: None,
                    }],
                ),
            }
        }
    }
}

/// Checks that `sender` may broadcast `payload` to every display and device.
pub fn moderator_broadcast(
    state: &ModeratorState,
    sender: ParticipantId,
    payload: &[u8],
) -> Result<(), ModeratorError> {
    if state.holder != Some(sender) {
        return Err(ModeratorError::NotModerator(sender));
    }
    if payload.len() > MAX_PAYLOAD_BYTES {
        return Err(ModeratorError::PayloadTooLarge(payload.len()));
    }
    Ok(())
}
