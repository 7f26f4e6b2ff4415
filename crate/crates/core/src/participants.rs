//! Participant roster: identity, colour, home room, live position and
//! handheld binding.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{at_most, EerySpace, RoomId, SpaceError, Vec2};
use crate::Millis;

/// Names travel in snapshots, so they are capped to keep a 16-person roster
/// inside one datagram.
pub const MAX_NAME_BYTES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParticipantError {
    #[error("colour {0} already in use")]
    ColorCollision(Rgb),
    #[error("unknown room {0}")]
    UnknownRoom(RoomId),
    #[error("device {device} already bound to {holder}")]
    DeviceAlreadyBound { device: DeviceId, holder: ParticipantId },
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("position ({x}, {y}) outside home room")]
    OutOfRoomBounds { x: f64, y: f64 },
    #[error("name must be 1..={MAX_NAME_BYTES} bytes, got {0:?}")]
    InvalidName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(pub u64);

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u64);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dev{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub fn hex(&self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.r, self.g, self.b)
    }

    pub fn parse_hex(s: &str) -> Option<Rgb> {
        let s = s.strip_prefix('#').unwrap_or(s);
        if s.len() != 6 {
            return None;
        }
        let v = u32::from_str_radix(s, 16).ok()?;
        Some(Rgb::new((v >> 16) as u8, (v >> 8) as u8, v as u8))
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

/// Distances and timings that drive every proxemic rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxemicProfile {
    pub intimate_radius: f64,
    pub intimate_exit: f64,
    pub personal_radius: f64,
    pub bubble_enter: f64,
    pub bubble_exit: f64,
    pub moderator_depth: f64,
    pub moderator_exit: f64,
    pub person_height: f64,
    pub shadow_width: f64,
    pub alert_interval_ms: u64,
    pub path_ttl_ms: u64,
    pub silence_timeout_ms: u64,
}

impl Default for ProxemicProfile {
    fn default() -> Self {
        Self {
            intimate_radius: 0.3,
            intimate_exit: 0.35,
            personal_radius: 0.6,
            bubble_enter: 1.2,
            bubble_exit: 1.3,
            moderator_depth: 1.5,
            moderator_exit: 1.6,
            person_height: 1.8,
            shadow_width: 0.5,
            alert_interval_ms: 1000,
            path_ttl_ms: 10_000,
            silence_timeout_ms: 5000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid proxemic profile: {0}")]
pub struct ProfileError(pub String);

impl ProxemicProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let all = [
            self.intimate_radius,
            self.intimate_exit,
            self.personal_radius,
            self.bubble_enter,
            self.bubble_exit,
            self.moderator_depth,
            self.moderator_exit,
            self.person_height,
            self.shadow_width,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(ProfileError("distances must be finite and positive".into()));
        }
        if !(self.intimate_radius < self.personal_radius) {
            return Err(ProfileError("intimate radius must be below personal radius".into()));
        }
        if !at_most(self.bubble_enter, 2.0 * self.personal_radius)
            || !at_most(2.0 * self.personal_radius, self.bubble_enter)
        {
            return Err(ProfileError("bubble entry must equal twice the personal radius".into()));
        }
        if !at_most(self.bubble_enter, self.bubble_exit) {
            return Err(ProfileError("bubble exit must not be below bubble entry".into()));
        }
        if !at_most(self.moderator_depth, self.moderator_exit) {
            return Err(ProfileError("moderator exit must not be below moderator depth".into()));
        }
        if !at_most(self.intimate_radius, self.intimate_exit) {
            return Err(ProfileError("intimate exit must not be below intimate radius".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub name: String,
    pub color: Rgb,
    pub home_room: RoomId,
    /// Last accepted local position, millimetre-quantized.
    pub local: Option<Vec2>,
    /// Same point in the shared plane.
    pub position: Option<Vec2>,
    pub last_seq: u32,
    pub device: Option<DeviceId>,
    pub last_heard: Millis,
}

impl Participant {
    /// Bound to a handheld and tracked at least once.
    pub fn is_eligible(&self) -> bool {
        self.device.is_some() && self.position.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    participants: BTreeMap<ParticipantId, Participant>,
    next_id: u64,
}

impl Roster {
    pub fn new() -> Self {
        Self {
            participants: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn get(&self, id: ParticipantId) -> Result<&Participant, ParticipantError> {
        self.participants
            .get(&id)
            .ok_or(ParticipantError::UnknownParticipant(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Participant> {
        self.participants.values()
    }

    pub fn by_name(&self, name: &str) -> Option<&Participant> {
        self.participants.values().find(|p| p.name == name)
    }

    /// Eligible participants with their virtual positions, in id order.
    pub fn eligible_positions(&self) -> Vec<(ParticipantId, Vec2)> {
        self.participants
            .values()
            .filter(|p| p.is_eligible())
            .filter_map(|p| p.position.map(|pos| (p.id, pos)))
            .collect()
    }

    pub fn join(
        &mut self,
        space: &EerySpace,
        name: &str,
        home_room: RoomId,
        color: Rgb,
        now: Millis,
    ) -> Result<ParticipantId, ParticipantError> {
        if name.is_empty() || name.len() > MAX_NAME_BYTES {
            return Err(ParticipantError::InvalidName(name.to_string()));
        }
        space
            .room(home_room)
            .map_err(|_| ParticipantError::UnknownRoom(home_room))?;
        if self.participants.values().any(|p| p.color == color) {
            return Err(ParticipantError::ColorCollision(color));
        }
        let id = ParticipantId(self.next_id.max(1));
        self.next_id = id.0 + 1;
        self.participants.insert(
            id,
            Participant {
                id,
                name: name.to_string(),
                color,
                home_room,
                local: None,
                position: None,
                last_seq: 0,
                device: None,
                last_heard: now,
            },
        );
        Ok(id)
    }

    pub fn leave(&mut self, id: ParticipantId) -> Result<Participant, ParticipantError> {
        self.participants
            .remove(&id)
            .ok_or(ParticipantError::UnknownParticipant(id))
    }

    pub fn bind_device(&mut self, id: ParticipantId, device: DeviceId) -> Result<(), ParticipantError> {
        if let Some(holder) = self
            .participants
            .values()
            .find(|p| p.device == Some(device) && p.id != id)
        {
            return Err(ParticipantError::DeviceAlreadyBound {
                device,
                holder: holder.id,
            });
        }
        let p = self
            .participants
            .get_mut(&id)
            .ok_or(ParticipantError::UnknownParticipant(id))?;
        p.device = Some(device);
        Ok(())
    }

    pub fn unbind_device(&mut self, id: ParticipantId) -> Result<Option<DeviceId>, ParticipantError> {
        let p = self
            .participants
            .get_mut(&id)
            .ok_or(ParticipantError::UnknownParticipant(id))?;
        Ok(p.device.take())
    }

    /// Last-writer-wins position update. Returns whether it was applied;
    /// updates with a sequence number not above the last accepted one are
    /// dropped silently.
    pub fn update_position(
        &mut self,
        space: &EerySpace,
        id: ParticipantId,
        local: Vec2,
        seq: u32,
        now: Millis,
    ) -> Result<bool, ParticipantError> {
        let p = self
            .participants
            .get_mut(&id)
            .ok_or(ParticipantError::UnknownParticipant(id))?;
        let virt = space.to_virtual(p.home_room, local).map_err(|e| match e {
            SpaceError::UnknownRoom(_) => ParticipantError::UnknownRoom(p.home_room),
            _ => ParticipantError::OutOfRoomBounds { x: local.x, y: local.y },
        })?;
        p.last_heard = p.last_heard.max(now);
        if p.position.is_some() && seq <= p.last_seq {
            return Ok(false);
        }
        p.local = Some(local.quantize_mm());
        p.position = Some(virt);
        p.last_seq = seq;
        Ok(true)
    }

    pub fn touch(&mut self, id: ParticipantId, now: Millis) {
        if let Some(p) = self.participants.get_mut(&id) {
            p.last_heard = p.last_heard.max(now);
        }
    }

    /// Participants silent for longer than `timeout_ms`.
    pub fn silent_since(&self, now: Millis, timeout_ms: u64) -> Vec<ParticipantId> {
        self.participants
            .values()
            .filter(|p| now.0.saturating_sub(p.last_heard.0) > timeout_ms)
            .map(|p| p.id)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RED: Rgb = Rgb::new(255, 0, 0);
    const BLUE: Rgb = Rgb::new(0, 0, 255);

    fn setup() -> (EerySpace, RoomId, Roster) {
        let mut s = EerySpace::new();
        let a = s.register_room(4.0, 4.0, (1.0, 3.0)).unwrap();
        (s, a, Roster::new())
    }

    #[test]
    fn join_enforces_colour_and_room() {
        let (s, a, mut r) = setup();
        let alice = r.join(&s, "alice", a, RED, Millis(0)).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.get(alice).unwrap().name, "alice");
        assert_eq!(
            r.join(&s, "bob", a, RED, Millis(0)),
            Err(ParticipantError::ColorCollision(RED))
        );
        assert_eq!(
            r.join(&s, "carol", RoomId(5), BLUE, Millis(0)),
            Err(ParticipantError::UnknownRoom(RoomId(5)))
        );
        assert!(matches!(
            r.join(&s, "a-name-that-is-too-long", a, BLUE, Millis(0)),
            Err(ParticipantError::InvalidName(_))
        ));
    }

    #[test]
    fn device_binding_is_exclusive() {
        let (s, a, mut r) = setup();
        let alice = r.join(&s, "alice", a, RED, Millis(0)).unwrap();
        let bob = r.join(&s, "bob", a, BLUE, Millis(0)).unwrap();
        r.bind_device(alice, DeviceId(1)).unwrap();
        assert_eq!(
            r.bind_device(bob, DeviceId(1)),
            Err(ParticipantError::DeviceAlreadyBound {
                device: DeviceId(1),
                holder: alice
            })
        );
        assert_eq!(
            r.bind_device(ParticipantId(99), DeviceId(2)),
            Err(ParticipantError::UnknownParticipant(ParticipantId(99)))
        );
        r.update_position(&s, alice, Vec2::new(1.0, 1.0), 1, Millis(0)).unwrap();
        assert!(r.get(alice).unwrap().is_eligible());
        r.update_position(&s, bob, Vec2::new(1.5, 1.0), 1, Millis(0)).unwrap();
        assert!(!r.get(bob).unwrap().is_eligible());
        assert_eq!(r.eligible_positions().len(), 1);
    }

    #[test]
    fn stale_updates_are_dropped() {
        let (s, a, mut r) = setup();
        let p = r.join(&s, "alice", a, RED, Millis(0)).unwrap();
        assert!(r.update_position(&s, p, Vec2::new(1.0, 1.0), 5, Millis(0)).unwrap());
        assert!(!r.update_position(&s, p, Vec2::new(2.0, 2.0), 4, Millis(0)).unwrap());
        assert_eq!(r.get(p).unwrap().local, Some(Vec2::new(1.0, 1.0)));
        assert!(r.update_position(&s, p, Vec2::new(2.0, 2.0), 6, Millis(0)).unwrap());
        assert_eq!(r.get(p).unwrap().position, Some(Vec2::new(0.0, 2.0)));
    }

    #[test]
    fn out_of_room_update_leaves_position() {
        let (s, a, mut r) = setup();
        let p = r.join(&s, "alice", a, RED, Millis(0)).unwrap();
        r.update_position(&s, p, Vec2::new(1.0, 1.0), 1, Millis(0)).unwrap();
        assert!(matches!(
            r.update_position(&s, p, Vec2::new(5.0, 1.0), 2, Millis(0)),
            Err(ParticipantError::OutOfRoomBounds { .. })
        ));
        assert_eq!(r.get(p).unwrap().last_seq, 1);
    }

    #[test]
    fn silence_detection() {
        let (s, a, mut r) = setup();
        let p = r.join(&s, "alice", a, RED, Millis(0)).unwrap();
        assert!(r.silent_since(Millis(5000), 5000).is_empty());
        assert_eq!(r.silent_since(Millis(5001), 5000), vec![p]);
        r.touch(p, Millis(5001));
        assert!(r.silent_since(Millis(6000), 5000).is_empty());
    }

    #[test]
    fn default_profile_is_valid() {
        ProxemicProfile::default().validate().unwrap();
        let bad = ProxemicProfile {
            bubble_exit: 1.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ProxemicProfile {
            bubble_enter: 1.4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn any_delivery_order_converges(seqs in proptest::collection::vec(1u32..50, 1..30)) {
            let (s, a, mut fwd) = setup();
            let mut rev = fwd.clone();
            let p = fwd.join(&s, "alice", a, RED, Millis(0)).unwrap();
            rev.join(&s, "alice", a, RED, Millis(0)).unwrap();
            let pos = |seq: u32| Vec2::new((seq % 40) as f64 / 10.0, 1.0);
            for &q in &seqs { fwd.update_position(&s, p, pos(q), q, Millis(0)).unwrap(); }
            for &q in seqs.iter().rev() { rev.update_position(&s, p, pos(q), q, Millis(0)).unwrap(); }
            let max = *seqs.iter().max().unwrap();
            prop_assert_eq!(fwd.get(p).unwrap().last_seq, max);
            prop_assert_eq!(fwd.get(p).unwrap().local, Some(pos(max)));
            prop_assert_eq!(&fwd, &rev);
        }
    }
}
