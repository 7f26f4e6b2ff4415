//! The proxemics engine: owns the roster and derived interaction state and
//! re-evaluates every rule after each accepted change.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::awareness::{self, AlertTracker, AwarenessError, AwarenessFrame, GlowingPath, HapticAlert};
use crate::bubbles::{compute_bubbles, proximity_graph, BubbleSet, Edge};
use crate::events::{EngineEvent, EventRecord, LeaveReason, RejectReason};
use crate::moderator::{self, ModeratorError, ModeratorState, ModeratorZone};
use crate::participants::{DeviceId, ParticipantError, ParticipantId, ProfileError, ProxemicProfile, Rgb, Roster};
use crate::space::{EerySpace, RoomId, Vec2};
use crate::Millis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Participant(#[from] ParticipantError),
    #[error(transparent)]
    Awareness(#[from] AwarenessError),
    #[error(transparent)]
    Moderator(#[from] ModeratorError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("no rooms registered")]
    NoRooms,
}

#[derive(Debug, Clone)]
pub struct Engine {
    space: EerySpace,
    profile: ProxemicProfile,
    roster: Roster,
    edges: BTreeSet<Edge>,
    bubbles: BubbleSet,
    moderator: ModeratorState,
    alerts: AlertTracker,
    last_alerts: Vec<HapticAlert>,
    paths: Vec<GlowingPath>,
}

impl Engine {
    pub fn new(space: EerySpace, profile: ProxemicProfile) -> Result<Self, EngineError> {
        profile.validate()?;
        if space.is_empty() {
            return Err(EngineError::NoRooms);
        }
        Ok(Self {
            space,
            profile,
            roster: Roster::new(),
            edges: BTreeSet::new(),
            bubbles: BubbleSet::new(),
            moderator: ModeratorState::default(),
            alerts: AlertTracker::new(),
            last_alerts: Vec::new(),
            paths: Vec::new(),
        })
    }

    pub fn space(&self) -> &EerySpace {
        &self.space
    }

    pub fn profile(&self) -> &ProxemicProfile {
        &self.profile
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn bubbles(&self) -> &BubbleSet {
        &self.bubbles
    }

    pub fn moderator(&self) -> &ModeratorState {
        &self.moderator
    }

    pub fn paths(&self) -> &[GlowingPath] {
        &self.paths
    }

    pub fn zone(&self) -> ModeratorZone {
        ModeratorZone {
            x_range: self.space.display_interval().expect("engine has rooms"),
            depth: self.profile.moderator_depth,
            exit_depth: self.profile.moderator_exit,
        }
    }

    fn stamp(now: Millis, events: Vec<EngineEvent>) -> Vec<EventRecord> {
        events.into_iter().map(|event| EventRecord { at: now, event }).collect()
    }

    pub fn join(
        &mut self,
        name: &str,
        room: RoomId,
        color: Rgb,
        now: Millis,
    ) -> Result<(ParticipantId, Vec<EventRecord>), EngineError> {
        let id = self.roster.join(&self.space, name, room, color, now)?;
        let ev = EngineEvent::Joined {
            participant: id,
            name: name.to_string(),
            room,
            color,
        };
        Ok((id, Self::stamp(now, vec![ev])))
    }

    pub fn leave(
        &mut self,
        id: ParticipantId,
        reason: LeaveReason,
        now: Millis,
    ) -> Result<Vec<EventRecord>, EngineError> {
        self.roster.leave(id)?;
        self.paths.retain(|p| p.requester != id && p.target != id);
        let mut events = vec![EngineEvent::Left {
            participant: id,
            reason,
        }];
        events.extend(self.recompute(now));
        Ok(Self::stamp(now, events))
    }

    pub fn bind_device(
        &mut self,
        id: ParticipantId,
        device: DeviceId,
        now: Millis,
    ) -> Result<Vec<EventRecord>, EngineError> {
        if self.roster.get(id)?.device == Some(device) {
            return Ok(Vec::new());
        }
        self.roster.bind_device(id, device)?;
        let mut events = vec![EngineEvent::Bound {
            participant: id,
            device,
        }];
        events.extend(self.recompute(now));
        Ok(Self::stamp(now, events))
    }

    /// Like [`Engine::bind_device`] but turns a refusal into a
    /// `BindRejected` record instead of an error.
    pub fn bind_or_reject(&mut self, id: ParticipantId, device: DeviceId, now: Millis) -> Vec<EventRecord> {
        match self.bind_device(id, device, now) {
            Ok(evs) => evs,
            Err(e) => {
                let reason = match e {
                    EngineError::Participant(ParticipantError::DeviceAlreadyBound { .. }) => {
                        RejectReason::DeviceAlreadyBound
                    }
                    _ => RejectReason::UnknownParticipant,
                };
                Self::stamp(
                    now,
                    vec![EngineEvent::BindRejected {
                        participant: id,
                        device,
                        reason,
                    }],
                )
            }
        }
    }

    pub fn unbind_device(&mut self, id: ParticipantId, now: Millis) -> Result<Vec<EventRecord>, EngineError> {
        let Some(device) = self.roster.unbind_device(id)? else {
            return Ok(Vec::new());
        };
        let mut events = vec![EngineEvent::Unbound {
            participant: id,
            device,
        }];
        events.extend(self.recompute(now));
        Ok(Self::stamp(now, events))
    }

    /// Applies a tracked position in the participant's home-room frame.
    /// Stale sequence numbers produce no events.
    pub fn update_position(
        &mut self,
        id: ParticipantId,
        local: Vec2,
        seq: u32,
        now: Millis,
    ) -> Result<Vec<EventRecord>, EngineError> {
        if !self.roster.update_position(&self.space, id, local, seq, now)? {
            return Ok(Vec::new());
        }
        let local = self.roster.get(id)?.local.expect("just accepted");
        let mut events = vec![EngineEvent::Moved {
            participant: id,
            local,
            seq,
        }];
        events.extend(self.recompute(now));
        Ok(Self::stamp(now, events))
    }

    pub fn touch(&mut self, id: ParticipantId, now: Millis) {
        self.roster.touch(id, now);
    }

    pub fn request_interaction(
        &mut self,
        requester: ParticipantId,
        target: ParticipantId,
        now: Millis,
    ) -> Result<Vec<EventRecord>, EngineError> {
        let path = awareness::request_interaction(&self.space, &self.roster, requester, target, &self.profile, now)?;
        Ok(match path {
            Some(path) => {
                self.paths.push(path.clone());
                Self::stamp(now, vec![EngineEvent::GlowingPathShown { path }])
            }
            None => Vec::new(),
        })
    }

    pub fn moderator_payload(
        &mut self,
        sender: ParticipantId,
        payload: &[u8],
        now: Millis,
    ) -> Result<Vec<EventRecord>, EngineError> {
        moderator::moderator_broadcast(&self.moderator, sender, payload)?;
        Ok(Self::stamp(
            now,
            vec![EngineEvent::PayloadRelayed {
                from: sender,
                payload: hex::encode(payload),
            }],
        ))
    }

    /// Removes participants that have been silent past the timeout.
    pub fn expire_silent(&mut self, now: Millis) -> Vec<EventRecord> {
        let mut out = Vec::new();
        for id in self.roster.silent_since(now, self.profile.silence_timeout_ms) {
            if let Ok(evs) = self.leave(id, LeaveReason::Silence, now) {
                out.extend(evs);
            }
        }
        out
    }

    /// Drops glowing paths whose time is up.
    pub fn prune_paths(&mut self, now: Millis) {
        self.paths.retain(|p| p.expires_at > now);
    }

    /// End-of-tick upkeep: silence expiry, then path expiry.
    pub fn housekeeping(&mut self, now: Millis) -> Vec<EventRecord> {
        let out = self.expire_silent(now);
        self.prune_paths(now);
        out
    }

    pub fn frames(&self) -> Vec<AwarenessFrame> {
        awareness::derive_frames(
            &self.space,
            &self.roster,
            &self.bubbles,
            &self.moderator,
            &self.paths,
            &self.last_alerts,
            &self.profile,
        )
    }

    fn recompute(&mut self, now: Millis) -> Vec<EngineEvent> {
        let positions = self.roster.eligible_positions();
        let mut events: Vec<EngineEvent> = Vec::new();

        self.edges = proximity_graph(
            &positions,
            self.profile.bubble_enter,
            self.profile.bubble_exit,
            &self.edges,
        );
        let roster = &self.roster;
        let (bubbles, bubble_events) = compute_bubbles(
            &self.edges,
            &self.bubbles,
            |id| roster.get(id).map(|p| p.color).unwrap_or(Rgb::new(0, 0, 0)),
            now,
        );
        self.bubbles = bubbles;
        events.extend(bubble_events.into_iter().map(EngineEvent::from));

        let zone = self.zone();
        let (state, mod_events) = moderator::step(self.moderator, &positions, &zone, now);
        self.moderator = state;
        for ev in mod_events {
            let speech = ev.speech_changes();
            events.push(ev.into());
            for (open, participant) in speech {
                events.push(if open {
                    EngineEvent::SpeechChannelOpened { participant }
                } else {
                    EngineEvent::SpeechChannelClosed { participant }
                });
            }
        }

        let with_devices: Vec<(ParticipantId, Vec2, DeviceId)> = positions
            .iter()
            .filter_map(|&(id, pos)| self.roster.get(id).ok()?.device.map(|d| (id, pos, d)))
            .collect();
        self.last_alerts = self.alerts.update(&with_devices, &self.profile, now);
        events.extend(self.last_alerts.iter().copied().map(EngineEvent::from));
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(recs: &[EventRecord]) -> Vec<&'static str> {
        recs.iter()
            .filter(|r| r.event.is_logged())
            .map(|r| r.event.kind())
            .collect()
    }

    fn engine() -> (Engine, RoomId) {
        let mut s = EerySpace::new();
        let a = s.register_room(6.0, 5.0, (2.0, 4.0)).unwrap();
        (Engine::new(s, ProxemicProfile::default()).unwrap(), a)
    }

    #[test]
    fn rejects_invalid_profile_and_empty_space() {
        let bad = ProxemicProfile {
            bubble_exit: 1.1,
            ..Default::default()
        };
        let mut s = EerySpace::new();
        assert!(matches!(Engine::new(s.clone(), bad), Err(EngineError::Profile(_))));
        assert!(matches!(
            Engine::new(s.clone(), ProxemicProfile::default()),
            Err(EngineError::NoRooms)
        ));
        s.register_room(4.0, 4.0, (1.0, 3.0)).unwrap();
        assert!(Engine::new(s, ProxemicProfile::default()).is_ok());
    }

    #[test]
    fn unbound_participants_never_bubble() {
        let (mut e, a) = engine();
        let (alice, _) = e.join("alice", a, Rgb::new(255, 0, 0), Millis(0)).unwrap();
        let (carol, _) = e.join("carol", a, Rgb::new(0, 255, 0), Millis(0)).unwrap();
        e.bind_device(alice, DeviceId(1), Millis(0)).unwrap();
        e.update_position(alice, Vec2::new(2.0, 3.0), 1, Millis(0)).unwrap();
        let evs = e.update_position(carol, Vec2::new(3.0, 3.0), 1, Millis(0)).unwrap();
        assert!(kinds(&evs).is_empty());
        assert!(e.bubbles().is_empty());
        let evs = e.bind_device(carol, DeviceId(2), Millis(10)).unwrap();
        assert_eq!(kinds(&evs), vec!["Bound", "BubbleCreated", "ChannelOpened"]);
    }

    #[test]
    fn moderator_speech_channel_and_payload() {
        let (mut e, a) = engine();
        let (alice, _) = e.join("alice", a, Rgb::new(255, 0, 0), Millis(0)).unwrap();
        let (bob, _) = e.join("bob", a, Rgb::new(0, 0, 255), Millis(0)).unwrap();
        e.bind_device(alice, DeviceId(1), Millis(0)).unwrap();
        e.bind_device(bob, DeviceId(2), Millis(0)).unwrap();
        let evs = e.update_position(alice, Vec2::new(3.0, 1.2), 1, Millis(0)).unwrap();
        assert_eq!(kinds(&evs), vec!["ModeratorAcquired", "SpeechChannelOpened"]);
        assert!(e.moderator_payload(alice, b"view", Millis(1)).is_ok());
        assert!(matches!(
            e.moderator_payload(bob, b"view", Millis(1)),
            Err(EngineError::Moderator(ModeratorError::NotModerator(_)))
        ));
        // bob far from alice so no bubble interferes
        e.update_position(bob, Vec2::new(4.5, 3.0), 1, Millis(2)).unwrap();
        let evs = e.unbind_device(alice, Millis(3)).unwrap();
        assert_eq!(kinds(&evs), vec!["Unbound", "ModeratorReleased", "SpeechChannelClosed"]);
    }

    #[test]
    fn silence_expiry_emits_left_and_dissolves() {
        let (mut e, a) = engine();
        let (x, _) = e.join("x", a, Rgb::new(1, 1, 1), Millis(0)).unwrap();
        let (y, _) = e.join("y", a, Rgb::new(2, 2, 2), Millis(0)).unwrap();
        for (id, lx) in [(x, 2.0), (y, 3.0)] {
            e.bind_device(id, DeviceId(id.0), Millis(0)).unwrap();
            e.update_position(id, Vec2::new(lx, 3.0), 1, Millis(0)).unwrap();
        }
        assert_eq!(e.bubbles().len(), 1);
        e.update_position(x, Vec2::new(2.0, 3.1), 2, Millis(4000)).unwrap();
        let evs = e.expire_silent(Millis(5500));
        assert_eq!(kinds(&evs), vec!["Left", "BubbleDissolved", "ChannelClosed"]);
        assert_eq!(e.roster().len(), 1);
    }

    #[test]
    fn paths_expire() {
        let mut s = EerySpace::new();
        let big = s.register_named("big", 6.0, 3.0, (2.0, 4.0)).unwrap();
        let small = s.register_named("small", 4.0, 4.0, (1.0, 3.0)).unwrap();
        let mut e = Engine::new(s, ProxemicProfile::default()).unwrap();
        let (req, _) = e.join("req", small, Rgb::new(1, 0, 0), Millis(0)).unwrap();
        let (tgt, _) = e.join("tgt", big, Rgb::new(0, 1, 0), Millis(0)).unwrap();
        e.bind_device(req, DeviceId(1), Millis(0)).unwrap();
        e.bind_device(tgt, DeviceId(2), Millis(0)).unwrap();
        e.update_position(req, Vec2::new(2.0, 3.5), 1, Millis(0)).unwrap();
        e.update_position(tgt, Vec2::new(5.8, 1.0), 1, Millis(0)).unwrap();
        let evs = e.request_interaction(req, tgt, Millis(0)).unwrap();
        assert_eq!(kinds(&evs), vec!["GlowingPathShown"]);
        let frames = e.frames();
        assert_eq!(frames.iter().find(|f| f.room == big).unwrap().paths.len(), 1);
        assert!(frames.iter().find(|f| f.room == small).unwrap().paths.is_empty());
        e.prune_paths(Millis(10_000));
        assert!(e.paths().is_empty());
    }
}
