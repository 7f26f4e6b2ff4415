//! Shared-space proxemics for multi-room meetings.
//!
//! Physical rooms are translated into one metric plane ([`space`]). People
//! tracked in any room are held in a [`participants::Roster`]; the
//! [`engine::Engine`] derives social bubbles, the display moderator and
//! awareness cues from their positions. [`protocol`] replicates that state
//! to room clients over unreliable datagrams and [`simulator`] drives it
//! from scripted scenarios and movement traces.

use serde::{Deserialize, Serialize};

pub mod awareness;
pub mod bubbles;
pub mod config;
pub mod engine;
pub mod events;
pub mod moderator;
pub mod participants;
pub mod protocol;
pub mod simulator;
pub mod space;

pub use engine::{Engine, EngineError};
pub use events::{EngineEvent, EventRecord};
pub use participants::{DeviceId, ParticipantId, ProxemicProfile, Rgb};
pub use space::{EerySpace, RoomId, Vec2};

/// Milliseconds on the engine clock (virtual or wall time since start).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Millis(pub u64);
