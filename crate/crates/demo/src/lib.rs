//! Browser playground. The page can drag people around two rooms and watch
//! the awareness frames, plot the wall-shadow curve, and replay the bundled
//! evaluation tasks.
//!
//! Everything returns JSON strings so the same functions are testable
//! natively; [`bindings`] only wraps them for wasm-bindgen.

use std::collections::BTreeMap;

use eery_core::awareness::{shadow_height, AwarenessFrame};
use eery_core::config::RoomsFile;
use eery_core::moderator::ModeratorZone;
use eery_core::simulator::{run, RunOptions, Scenario, TraceRecord};
use eery_core::space::Room;
use eery_core::{DeviceId, EerySpace, Engine, EventRecord, Millis, ParticipantId, ProxemicProfile, Rgb, Vec2};
use serde::Serialize;

pub mod bindings;

const ROOMS: &str = include_str!("../../core/scenarios/rooms.json");

const TASKS: [(&str, &str); 5] = [
    ("task1", include_str!("../../core/scenarios/task1_moderator.json")),
    ("task2", include_str!("../../core/scenarios/task2_local.json")),
    ("task3", include_str!("../../core/scenarios/task3_remote.json")),
    ("task4", include_str!("../../core/scenarios/task4_pursue.json")),
    ("task5", include_str!("../../core/scenarios/task5_pathway.json")),
];

/// (name, room, colour, local start)
const CAST: [(&str, &str, Rgb, (f64, f64)); 4] = [
    ("ana", "main", Rgb::new(230, 57, 70), (1.5, 2.5)),
    ("ben", "main", Rgb::new(42, 157, 143), (4.5, 3.5)),
    ("cleo", "remote", Rgb::new(69, 123, 157), (2.0, 3.0)),
    ("dev", "remote", Rgb::new(244, 162, 97), (3.0, 1.0)),
];

/// Milliseconds the playground clock advances per drag.
const DRAG_STEP_MS: u64 = 100;

#[derive(Debug, Serialize)]
pub struct Update<'a> {
    pub now: u64,
    pub rooms: Vec<&'a Room>,
    pub zone: ModeratorZone,
    pub frames: Vec<AwarenessFrame>,
    pub events: &'a [EventRecord],
}

/// A live engine with a fixed cast, steered by drags.
#[derive(Debug)]
pub struct Playground {
    engine: Engine,
    ids: BTreeMap<String, ParticipantId>,
    seq: u32,
    now: u64,
}

impl Default for Playground {
    fn default() -> Self {
        Self::new()
    }
}

impl Playground {
    pub fn new() -> Self {
        let rooms = RoomsFile::parse(ROOMS).expect("bundled rooms parse");
        let space = EerySpace::from_config(&rooms).expect("bundled rooms are valid");
        let mut engine = Engine::new(space, ProxemicProfile::default()).expect("default profile is valid");
        let mut ids = BTreeMap::new();
        for (i, (name, room, color, (x, y))) in CAST.iter().enumerate() {
            let room = engine.space().room_by_name(room).expect("bundled room").id;
            let (id, _) = engine.join(name, room, *color, Millis(0)).expect("cast joins");
            engine
                .bind_device(id, DeviceId(i as u64 + 1), Millis(0))
                .expect("fresh device");
            engine
                .update_position(id, Vec2::new(*x, *y), 1, Millis(0))
                .expect("start inside room");
            ids.insert(name.to_string(), id);
        }
        Self {
            engine,
            ids,
            seq: 1,
            now: 0,
        }
    }

    fn update(&self, events: &[EventRecord]) -> String {
        let logged: Vec<EventRecord> = events.iter().filter(|r| r.event.is_logged()).cloned().collect();
        serde_json::to_string(&Update {
            now: self.now,
            rooms: self.engine.space().rooms().collect(),
            zone: self.engine.zone(),
            frames: self.engine.frames(),
            events: &logged,
        })
        .expect("frames serialize")
    }

    /// Current frames without moving anyone.
    pub fn frames(&self) -> String {
        self.update(&[])
    }

    /// Moves `name` to a point of the shared plane, clamped into their own
    /// room, and returns the new frames plus whatever happened.
    pub fn drag(&mut self, name: &str, x: f64, y: f64) -> Result<String, String> {
        let id = *self
            .ids
            .get(name)
            .ok_or_else(|| format!("no participant named {name:?}"))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        let room = self.engine.roster().get(id).map_err(|e| e.to_string())?.home_room;
        let space = self.engine.space();
        let rect = space.room_rect(room).map_err(|e| e.to_string())?;
        let local = space
            .to_local(room, rect.clamp(Vec2::new(x, y)))
            .map_err(|e| e.to_string())?;
        self.seq += 1;
        self.now += DRAG_STEP_MS;
        let events = self
            .engine
            .update_position(id, local, self.seq, Millis(self.now))
            .map_err(|e| e.to_string())?;
        Ok(self.update(&events))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShadowSample {
    pub distance: f64,
    pub height: f64,
}

/// Shadow height against distance from the wall, sampled every `step` metres
/// out to where the shadow vanishes.
pub fn shadow_curve(person_height: f64, step: f64) -> Result<Vec<ShadowSample>, String> {
    if !(person_height.is_finite() && person_height > 0.0 && person_height <= 3.0) {
        return Err("height must be in (0, 3] metres".into());
    }
    if !(step.is_finite() && step >= 0.01) {
        return Err("step must be at least 0.01 m".into());
    }
    let n = (person_height / step).ceil() as usize + 1;
    Ok((0..=n)
        .map(|i| {
            let distance = (i as f64 * step * 1000.0).round() / 1000.0;
            ShadowSample {
                distance,
                height: shadow_height(distance, person_height),
            }
        })
        .collect())
}

#[derive(Debug, Serialize)]
pub struct Replay {
    pub name: String,
    pub description: String,
    pub duration_ms: u64,
    pub rooms: Vec<Room>,
    pub names: BTreeMap<ParticipantId, String>,
    pub samples: Vec<TraceRecord>,
    pub events: Vec<EventRecord>,
    pub passed: bool,
}

pub fn task_names() -> Vec<&'static str> {
    TASKS.iter().map(|(n, _)| *n).collect()
}

/// Runs one bundled task and returns its movement and event log.
pub fn replay_task(name: &str) -> Result<Replay, String> {
    let (_, text) = TASKS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| format!("unknown task {name:?}; try one of {:?}", task_names()))?;
    let scenario = Scenario::parse(text).map_err(|e| e.to_string())?;
    let out = run(&scenario, &RunOptions::default()).map_err(|e| e.to_string())?;
    Ok(Replay {
        passed: scenario.check(&out.log, &out.names).is_ok(),
        name: scenario.name.clone(),
        description: scenario.description.clone(),
        duration_ms: scenario.duration_ms().0,
        rooms: out.space.rooms().cloned().collect(),
        samples: out.trace.records,
        events: out.log.into_iter().filter(|r| r.event.is_logged()).collect(),
        names: out.names,
    })
}
