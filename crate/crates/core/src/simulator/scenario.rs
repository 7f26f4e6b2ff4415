//! `scenario.json`: rooms, cast, timed script and expected events.
//!
//! ```json
//! {
//!   "name": "task2",
//!   "description": "...",
//!   "rooms": {"version": 1, "rooms": [{"id": "main", "width_m": 6, "depth_m": 5,
//!             "display_x0_m": 2, "display_x1_m": 4}]},
//!   "duration_s": 12,
//!   "cast": [{"name": "subject", "room": "main", "color": "#d04040",
//!             "device": 1, "start": [1.0, 2.5]}],
//!   "script": [
//!     {"at": 1.0, "who": "subject", "action": "walk", "path": [[3.0, 2.5]], "speed": 0.6},
//!     {"at": 9.0, "who": "subject", "action": "payload", "data": "0a0b"}
//!   ],
//!   "expected_events": [{"kind": "BubbleCreated", "participants": ["subject", "peer"]}],
//!   "forbid": [{"kind": "IntimateInvasion"}]
//! }
//! ```
//!
//! Positions are local to the member's room. `expected_events` must appear
//! in the log as an ordered subsequence; no logged event may match a
//! `forbid` pattern.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RoomsFile};
use crate::events::{EngineEvent, EventRecord};
use crate::moderator::MAX_PAYLOAD_BYTES;
use crate::participants::{ParticipantId, Rgb};
use crate::space::{EerySpace, SpaceError, Vec2};
use crate::Millis;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario rooms: {0}")]
    Rooms(#[from] ConfigError),
    #[error("scenario geometry: {0}")]
    Space(#[from] SpaceError),
    #[error("scenario is invalid: {0}")]
    Invalid(String),
    #[error("engine rejected the scenario: {0}")]
    Engine(String),
    #[error("trace: {0}")]
    Trace(#[from] super::trace::TraceFormatError),
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastMember {
    pub name: String,
    pub room: String,
    /// `#rrggbb`
    pub color: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<u64>,
    pub start: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Walk through the waypoints in order.
    Walk {
        path: Vec<[f64; 2]>,
        speed: f64,
    },
    /// Chase another cast member until told to stop.
    Pursue {
        target: String,
        #[serde(default = "default_pursuit")]
        speed: f64,
    },
    Stop,
    Bind {
        device: u64,
    },
    Request {
        target: String,
    },
    Payload {
        data: String,
    },
    /// Says goodbye and stops being tracked.
    Leave,
    /// Stops being tracked without saying goodbye.
    Vanish,
}

fn default_pursuit() -> f64 {
    super::DEFAULT_PURSUER_SPEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Seconds from the start.
    pub at: f64,
    pub who: String,
    #[serde(flatten)]
    pub action: Action,
}

impl ScriptStep {
    pub fn at_ms(&self) -> Millis {
        Millis((self.at * 1000.0).round() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPattern {
    pub kind: String,
    /// Cast names that must all be among the event's participants.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub participants: Vec<String>,
}

impl std::fmt::Display for EventPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.participants.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}({})", self.kind, self.participants.join(", "))
        }
    }
}

impl EventPattern {
    pub fn matches(&self, ev: &EngineEvent, names: &BTreeMap<ParticipantId, String>) -> bool {
        if ev.kind() != self.kind {
            return false;
        }
        let involved: BTreeSet<&str> = ev
            .participants()
            .iter()
            .filter_map(|p| names.get(p).map(String::as_str))
            .collect();
        self.participants.iter().all(|n| involved.contains(n.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpectationMismatch {
    #[error("expected event #{index} {pattern} never followed its predecessors")]
    Missing { index: usize, pattern: EventPattern },
    #[error("forbidden {pattern} fired at {at} ms")]
    Forbidden { pattern: EventPattern, at: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub rooms: RoomsFile,
    pub duration_s: f64,
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
    /// Uniform tracking noise amplitude in metres, drawn from the run seed.
    #[serde(default)]
    pub jitter_m: f64,
    pub cast: Vec<CastMember>,
    #[serde(default)]
    pub script: Vec<ScriptStep>,
    #[serde(default)]
    pub expected_events: Vec<EventPattern>,
    #[serde(default)]
    pub forbid: Vec<EventPattern>,
}

fn default_tick() -> u64 {
    super::DEFAULT_TICK_MS
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn space(&self) -> Result<EerySpace, ScenarioError> {
        Ok(EerySpace::from_config(&self.rooms)?)
    }

    pub fn duration_ms(&self) -> Millis {
        Millis((self.duration_s * 1000.0).round() as u64)
    }

    pub fn cast_index(&self, name: &str) -> Option<usize> {
        self.cast.iter().position(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let space = self.space()?;
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(invalid("duration_s must be a non-negative number"));
        }
        if self.tick_ms == 0 {
            return Err(invalid("tick_ms must be positive"));
        }
        if !(self.jitter_m.is_finite() && (0.0..=0.1).contains(&self.jitter_m)) {
            return Err(invalid("jitter_m must lie in [0, 0.1]"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cast {
            if !seen.insert(c.name.as_str()) {
                return Err(invalid(format!("duplicate cast member {}", c.name)));
            }
            let room = space.room_by_name(&c.room)?;
            if Rgb::parse_hex(&c.color).is_none() {
                return Err(invalid(format!("{}: bad color {:?}", c.name, c.color)));
            }
            space.to_virtual(room.id, Vec2::new(c.start[0], c.start[1]))?;
        }
        let known = |n: &str| -> Result<(), ScenarioError> {
            match self.cast_index(n) {
                Some(_) => Ok(()),
                None => Err(invalid(format!("{n} is not in the cast"))),
            }
        };
        for step in &self.script {
            if !(step.at.is_finite() && step.at >= 0.0) {
                return Err(invalid(format!("step for {} has a bad time", step.who)));
            }
            known(&step.who)?;
            let room = space.room_by_name(&self.cast[self.cast_index(&step.who).unwrap()].room)?;
            match &step.action {
                Action::Walk { path, speed } => {
                    if path.is_empty() || !(speed.is_finite() && *speed > 0.0) {
                        return Err(invalid(format!("walk for {} needs waypoints and a speed", step.who)));
                    }
                    for p in path {
                        space.to_virtual(room.id, Vec2::new(p[0], p[1]))?;
                    }
                }
                Action::Pursue { target, speed } => {
                    known(target)?;
                    if !(speed.is_finite() && *speed > 0.0) {
                        return Err(invalid("pursuit speed must be positive"));
                    }
                }
                Action::Request { target } => known(target)?,
                Action::Payload { data } => {
                    let bytes = hex::decode(data).map_err(|e| invalid(format!("payload for {}: {e}", step.who)))?;
                    if bytes.len() > MAX_PAYLOAD_BYTES {
                        return Err(invalid(format!(
                            "payload for {} exceeds {MAX_PAYLOAD_BYTES} bytes",
                            step.who
                        )));
                    }
                }
                Action::Stop | Action::Bind { .. } | Action::Leave | Action::Vanish => {}
            }
        }
        for p in self.expected_events.iter().chain(&self.forbid) {
            if !EngineEvent::KINDS.contains(&p.kind.as_str()) {
                return Err(invalid(format!("unknown event kind {}", p.kind)));
            }
            for n in &p.participants {
                known(n)?;
            }
        }
        Ok(())
    }

    /// Checks `log` against `expected_events` and `forbid`.
    pub fn check(
        &self,
        log: &[EventRecord],
        names: &BTreeMap<ParticipantId, String>,
    ) -> Result<(), ExpectationMismatch> {
        for r in log {
            if let Some(p) = self.forbid.iter().find(|p| p.matches(&r.event, names)) {
                return Err(ExpectationMismatch::Forbidden {
                    pattern: p.clone(),
                    at: r.at.0,
                });
            }
        }
        let mut it = log.iter();
        for (index, pattern) in self.expected_events.iter().enumerate() {
            if !it.any(|r| pattern.matches(&r.event, names)) {
                return Err(ExpectationMismatch::Missing {
                    index,
                    pattern: pattern.clone(),
                });
            }
        }
        Ok(())
    }
}
