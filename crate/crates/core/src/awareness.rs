//! Everything participants see or feel: floor circles, out-of-reach edge
//! markers, glowing request paths, wall shadows and intimate-space haptics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bubbles::{BubbleId, BubbleSet};
use crate::moderator::ModeratorState;
use crate::participants::{DeviceId, Participant, ParticipantId, ProxemicProfile, Rgb, Roster};
use crate::space::{quantize_mm, within, EerySpace, Rect, RoomId, Vec2};
use crate::Millis;

pub const FRAME_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AwarenessError {
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("{0} is not bound to a device or not yet tracked")]
    NotEligible(ParticipantId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorCircle {
    pub participant: ParticipantId,
    pub label: String,
    pub center: Vec2,
    pub intimate_radius: f64,
    pub personal_radius: f64,
    pub intimate_color: Rgb,
    pub personal_color: Rgb,
    pub bubble: Option<BubbleId>,
}

/// Semi-circle drawn on a room edge for someone outside that room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMarker {
    pub participant: ParticipantId,
    pub label: String,
    pub color: Rgb,
    pub anchor: Vec2,
    pub direction: Vec2,
    pub blank_intimate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlowingPath {
    pub target_room: RoomId,
    pub target: ParticipantId,
    pub requester: ParticipantId,
    pub from: Vec2,
    pub to: Vec2,
    pub ttl_ms: u64,
    pub expires_at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HapticAlert {
    pub device: DeviceId,
    pub victim: ParticipantId,
    pub intruder: ParticipantId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallShadow {
    pub participant: ParticipantId,
    pub label: String,
    pub color: Rgb,
    pub base_x: f64,
    pub height: f64,
    pub width: f64,
    pub is_moderator: bool,
    pub aura_color: Option<Rgb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBubble {
    pub id: BubbleId,
    pub members: Vec<ParticipantId>,
    pub color: Rgb,
}

/// Render model for one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwarenessFrame {
    pub version: u32,
    pub room: RoomId,
    pub room_name: String,
    pub rect: Rect,
    pub circles: Vec<FloorCircle>,
    pub markers: Vec<EdgeMarker>,
    pub paths: Vec<GlowingPath>,
    pub shadows: Vec<WallShadow>,
    pub moderator: Option<ParticipantId>,
    pub bubbles: Vec<FrameBubble>,
    pub alerts: Vec<HapticAlert>,
}

/// A directional light at 45 degrees: the shadow top sits `d` metres below
/// head height for someone `d` metres from the wall. Millimetre-exact.
pub fn shadow_height(distance_to_wall: f64, person_height: f64) -> f64 {
    quantize_mm((person_height - distance_to_wall).max(0.0))
}

pub fn wall_shadow(
    p: &Participant,
    profile: &ProxemicProfile,
    moderator: &ModeratorState,
    aura_color: Option<Rgb>,
) -> Option<WallShadow> {
    let pos = p.position?;
    Some(WallShadow {
        participant: p.id,
        label: p.name.clone(),
        color: p.color,
        base_x: pos.x,
        height: shadow_height(pos.y, profile.person_height),
        width: profile.shadow_width,
        is_moderator: moderator.holder == Some(p.id),
        aura_color,
    })
}

/// Marker for a point outside `rect`: nearest boundary point plus the unit
/// direction toward the true position.
pub fn edge_marker(rect: &Rect, p: &Participant, position: Vec2) -> EdgeMarker {
    let anchor = rect.closest_boundary_point(position);
    let delta = position.sub(anchor);
    let len = delta.length();
    let direction = if len > 0.0 { delta.scale(1.0 / len) } else { Vec2::ZERO };
    EdgeMarker {
        participant: p.id,
        label: p.name.clone(),
        color: p.color,
        anchor,
        direction,
        blank_intimate: true,
    }
}

/// Builds one frame per room from a consistent snapshot of engine state.
#[allow(clippy::too_many_arguments)]
pub fn derive_frames(
    space: &EerySpace,
    roster: &Roster,
    bubbles: &BubbleSet,
    moderator: &ModeratorState,
    paths: &[GlowingPath],
    alerts: &[HapticAlert],
    profile: &ProxemicProfile,
) -> Vec<AwarenessFrame> {
    let frame_bubbles: Vec<FrameBubble> = bubbles
        .iter()
        .map(|b| FrameBubble {
            id: b.id,
            members: b.members.iter().copied().collect(),
            color: b.color,
        })
        .collect();
    let shadows: Vec<WallShadow> = roster
        .iter()
        .filter_map(|p| {
            let aura = bubbles.bubble_of(p.id).map(|b| b.color);
            wall_shadow(p, profile, moderator, aura)
        })
        .collect();

    space
        .rooms()
        .map(|room| {
            let rect = space.room_rect(room.id).expect("registered room");
            let mut circles = Vec::new();
            let mut markers = Vec::new();
            for p in roster.iter() {
                let Some(pos) = p.position else { continue };
                if rect.contains(pos) {
                    let bubble = bubbles.bubble_of(p.id);
                    circles.push(FloorCircle {
                        participant: p.id,
                        label: p.name.clone(),
                        center: pos,
                        intimate_radius: profile.intimate_radius,
                        personal_radius: profile.personal_radius,
                        intimate_color: p.color,
                        personal_color: bubble.map(|b| b.color).unwrap_or(p.color),
                        bubble: bubble.map(|b| b.id),
                    });
                } else {
                    markers.push(edge_marker(&rect, p, pos));
                }
            }
            AwarenessFrame {
                version: FRAME_SCHEMA_VERSION,
                room: room.id,
                room_name: room.name.clone(),
                rect,
                circles,
                markers,
                paths: paths.iter().filter(|g| g.target_room == room.id).cloned().collect(),
                shadows: shadows.clone(),
                moderator: moderator.holder,
                bubbles: frame_bubbles.clone(),
                alerts: alerts.to_vec(),
            }
        })
        .collect()
}

/// Glowing path for a request that cannot be answered by simply walking
/// over; `None` when the target stands inside the requester's room.
pub fn request_interaction(
    space: &EerySpace,
    roster: &Roster,
    requester: ParticipantId,
    target: ParticipantId,
    profile: &ProxemicProfile,
    now: Millis,
) -> Result<Option<GlowingPath>, AwarenessError> {
    let lookup = |id| {
        let p = roster.get(id).map_err(|_| AwarenessError::UnknownParticipant(id))?;
        if !p.is_eligible() {
            return Err(AwarenessError::NotEligible(id));
        }
        Ok(p)
    };
    let req = lookup(requester)?;
    let tgt = lookup(target)?;
    let (req_pos, tgt_pos) = (req.position.expect("eligible"), tgt.position.expect("eligible"));
    let req_rect = space.room_rect(req.home_room).expect("registered room");
    if req_rect.contains(tgt_pos) {
        return Ok(None);
    }
    let tgt_rect = space.room_rect(tgt.home_room).expect("registered room");
    Ok(Some(GlowingPath {
        target_room: tgt.home_room,
        target,
        requester,
        from: tgt_pos.quantize_mm(),
        to: tgt_rect.clamp(req_pos).quantize_mm(),
        ttl_ms: profile.path_ttl_ms,
        expires_at: Millis(now.0 + profile.path_ttl_ms),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
struct PairState {
    active: bool,
    last_emitted: Option<Millis>,
}

/// Tracks intimate-space violations per ordered (victim, intruder) pair.
///
/// A pair turns active at `intimate_radius` and clears beyond
/// `intimate_exit`. An alert fires when a pair turns active and again every
/// `alert_interval_ms` while it stays active; no pair is ever alerted twice
/// within one interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertTracker {
    pairs: BTreeMap<(ParticipantId, ParticipantId), PairState>,
}

impl AlertTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn active_pairs(&self) -> Vec<(ParticipantId, ParticipantId)> {
        self.pairs.iter().filter(|(_, s)| s.active).map(|(k, _)| *k).collect()
    }

    /// `eligible` holds device-bound, tracked participants.
    pub fn update(
        &mut self,
        eligible: &[(ParticipantId, Vec2, DeviceId)],
        profile: &ProxemicProfile,
        now: Millis,
    ) -> Vec<HapticAlert> {
        let mut alerts = Vec::new();
        let present: std::collections::BTreeSet<ParticipantId> = eligible.iter().map(|e| e.0).collect();
        for ((v, i), state) in self.pairs.iter_mut() {
            if !present.contains(v) || !present.contains(i) {
                state.active = false;
            }
        }
        for &(victim, vpos, device) in eligible {
            for &(intruder, ipos, _) in eligible {
                if victim == intruder {
                    continue;
                }
                let state = self.pairs.entry((victim, intruder)).or_default();
                let limit = if state.active {
                    profile.intimate_exit
                } else {
                    profile.intimate_radius
                };
                state.active = within(vpos, ipos, limit);
                if !state.active {
                    continue;
                }
                let due = match state.last_emitted {
                    None => true,
                    Some(t) => now.0.saturating_sub(t.0) >= profile.alert_interval_ms,
                };
                if due {
                    state.last_emitted = Some(now);
                    alerts.push(HapticAlert {
                        device,
                        victim,
                        intruder,
                    });
                }
            }
        }
        alerts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubbles::{compute_bubbles, proximity_graph};
    use std::collections::BTreeSet;

    const RED: Rgb = Rgb::new(255, 0, 0);
    const BLUE: Rgb = Rgb::new(0, 0, 255);

    fn p(n: u64) -> ParticipantId {
        ParticipantId(n)
    }

    fn two_rooms() -> (EerySpace, RoomId, RoomId) {
        let mut s = EerySpace::new();
        let a = s.register_named("A", 6.0, 3.0, (2.0, 4.0)).unwrap();
        let b = s.register_named("B", 4.0, 4.0, (1.0, 3.0)).unwrap();
        (s, a, b)
    }

    #[test]
    fn shadow_heights() {
        assert_eq!(shadow_height(0.5, 1.8), 1.8 - 0.5);
        assert_eq!(shadow_height(1.8, 1.8), 0.0);
        assert_eq!(shadow_height(2.5, 1.8), 0.0);
        assert!(shadow_height(0.5, 1.8) > shadow_height(1.0, 1.8));
    }

    #[test]
    fn one_room_one_circle() {
        let mut s = EerySpace::new();
        let a = s.register_room(4.0, 4.0, (1.0, 3.0)).unwrap();
        let mut r = Roster::new();
        let id = r.join(&s, "alice", a, RED, Millis(0)).unwrap();
        r.update_position(&s, id, Vec2::new(2.0, 2.0), 1, Millis(0)).unwrap();
        let frames = derive_frames(
            &s,
            &r,
            &BubbleSet::new(),
            &ModeratorState::default(),
            &[],
            &[],
            &ProxemicProfile::default(),
        );
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].circles.len(), 1);
        assert!(frames[0].markers.is_empty());
        assert_eq!(frames[0].shadows.len(), 1);
        assert_eq!(frames[0].circles[0].personal_color, RED);
    }

    #[test]
    fn out_of_reach_becomes_edge_marker() {
        let (s, a, b) = two_rooms();
        let mut r = Roster::new();
        let id = r.join(&s, "bob", b, BLUE, Millis(0)).unwrap();
        // virtual (0, 3.5) is local (2, 3.5) in B
        r.update_position(&s, id, Vec2::new(2.0, 3.5), 1, Millis(0)).unwrap();
        let frames = derive_frames(
            &s,
            &r,
            &BubbleSet::new(),
            &ModeratorState::default(),
            &[],
            &[],
            &ProxemicProfile::default(),
        );
        let fa = frames.iter().find(|f| f.room == a).unwrap();
        let fb = frames.iter().find(|f| f.room == b).unwrap();
        assert_eq!(fb.circles.len(), 1);
        assert!(fa.circles.is_empty());
        assert_eq!(fa.markers[0].anchor, Vec2::new(0.0, 3.0));
        assert_eq!(fa.markers[0].direction, Vec2::new(0.0, 1.0));
        assert!(fa.markers[0].blank_intimate);
    }

    #[test]
    fn bubble_members_share_ring_colour() {
        let (s, a, _) = two_rooms();
        let mut r = Roster::new();
        let x = r.join(&s, "x", a, RED, Millis(0)).unwrap();
        let y = r.join(&s, "y", a, BLUE, Millis(0)).unwrap();
        for (id, lx, dev) in [(x, 2.0, 1), (y, 3.0, 2)] {
            r.bind_device(id, DeviceId(dev)).unwrap();
            r.update_position(&s, id, Vec2::new(lx, 2.0), 1, Millis(0)).unwrap();
        }
        let edges = proximity_graph(&r.eligible_positions(), 1.2, 1.3, &BTreeSet::new());
        let (bubbles, _) = compute_bubbles(&edges, &BubbleSet::new(), |id| r.get(id).unwrap().color, Millis(0));
        let frames = derive_frames(
            &s,
            &r,
            &bubbles,
            &ModeratorState::default(),
            &[],
            &[],
            &ProxemicProfile::default(),
        );
        let f = &frames[0];
        assert_eq!(f.circles[0].personal_color, Rgb::new(128, 0, 128));
        assert_eq!(f.circles[1].personal_color, Rgb::new(128, 0, 128));
        assert_eq!(f.circles[0].intimate_color, RED);
        assert_eq!(f.shadows[0].aura_color, Some(Rgb::new(128, 0, 128)));
    }

    fn eligible_pair(s: &EerySpace, room: RoomId, a: Vec2, b: Vec2) -> (Roster, ParticipantId, ParticipantId) {
        let mut r = Roster::new();
        let x = r.join(s, "x", room, RED, Millis(0)).unwrap();
        let y = r.join(s, "y", room, BLUE, Millis(0)).unwrap();
        r.bind_device(x, DeviceId(1)).unwrap();
        r.bind_device(y, DeviceId(2)).unwrap();
        r.update_position(s, x, a, 1, Millis(0)).unwrap();
        r.update_position(s, y, b, 1, Millis(0)).unwrap();
        (r, x, y)
    }

    #[test]
    fn glowing_path_only_when_out_of_reach() {
        let (s, a, b) = two_rooms();
        let mut r = Roster::new();
        let req = r.join(&s, "req", b, RED, Millis(0)).unwrap();
        let tgt = r.join(&s, "tgt", a, BLUE, Millis(0)).unwrap();
        r.bind_device(req, DeviceId(1)).unwrap();
        r.bind_device(tgt, DeviceId(2)).unwrap();
        r.update_position(&s, req, Vec2::new(2.0, 3.8), 1, Millis(0)).unwrap(); // virtual (0, 3.8)
        r.update_position(&s, tgt, Vec2::new(5.5, 1.0), 1, Millis(0)).unwrap(); // virtual (2.5, 1.0)
        let prof = ProxemicProfile::default();
        let path = request_interaction(&s, &r, req, tgt, &prof, Millis(100))
            .unwrap()
            .unwrap();
        assert_eq!(path.target_room, a);
        assert_eq!(path.from, Vec2::new(2.5, 1.0));
        // requester at depth 3.8 clamps to the 3 m deep room
        assert_eq!(path.to, Vec2::new(0.0, 3.0));
        assert_eq!(path.expires_at, Millis(10_100));

        let (r2, x, y) = eligible_pair(&s, a, Vec2::new(1.0, 1.0), Vec2::new(5.0, 2.0));
        assert_eq!(request_interaction(&s, &r2, x, y, &prof, Millis(0)).unwrap(), None);
        assert_eq!(
            request_interaction(&s, &r2, x, p(77), &prof, Millis(0)),
            Err(AwarenessError::UnknownParticipant(p(77)))
        );
    }

    #[test]
    fn alerts_fire_with_hysteresis_and_rate_limit() {
        let prof = ProxemicProfile::default();
        let mut t = AlertTracker::new();
        let at = |d: f64| {
            vec![
                (p(1), Vec2::new(0.0, 1.0), DeviceId(10)),
                (p(2), Vec2::new(d, 1.0), DeviceId(20)),
            ]
        };
        let first = t.update(&at(0.25), &prof, Millis(0));
        assert_eq!(first.len(), 2);
        assert!(first.iter().any(|a| a.device == DeviceId(10) && a.intruder == p(2)));
        assert!(first.iter().any(|a| a.device == DeviceId(20) && a.intruder == p(1)));
        assert!(t.update(&at(0.32), &prof, Millis(500)).is_empty());
        assert_eq!(t.active_pairs().len(), 2);
        assert_eq!(t.update(&at(0.32), &prof, Millis(1000)).len(), 2);
        assert!(t.update(&at(0.40), &prof, Millis(1100)).is_empty());
        assert!(t.active_pairs().is_empty());
        // re-entry inside the interval stays quiet
        assert!(t.update(&at(0.2), &prof, Millis(1500)).is_empty());
        assert_eq!(t.update(&at(0.2), &prof, Millis(2000)).len(), 2);
    }

    #[test]
    fn no_alert_outside_radius() {
        let prof = ProxemicProfile::default();
        let mut t = AlertTracker::new();
        let pos = vec![
            (p(1), Vec2::new(0.0, 1.0), DeviceId(10)),
            (p(2), Vec2::new(0.32, 1.0), DeviceId(20)),
        ];
        assert!(t.update(&pos, &prof, Millis(0)).is_empty());
    }

    #[test]
    fn marker_anchor_minimizes_boundary_distance() {
        let rect = Rect::new(Vec2::new(-3.0, 0.0), Vec2::new(3.0, 3.0));
        let mut r = Roster::new();
        let mut s = EerySpace::new();
        let room = s.register_room(6.0, 6.0, (2.0, 4.0)).unwrap();
        let id = r.join(&s, "q", room, RED, Millis(0)).unwrap();
        let who = r.get(id).unwrap().clone();
        // brute force over a 1 mm discretization of the outline
        let mut outline = Vec::new();
        for i in 0..=6000 {
            let x = -3.0 + i as f64 / 1000.0;
            outline.push(Vec2::new(x, 0.0));
            outline.push(Vec2::new(x, 3.0));
        }
        for i in 0..=3000 {
            let y = i as f64 / 1000.0;
            outline.push(Vec2::new(-3.0, y));
            outline.push(Vec2::new(3.0, y));
        }
        for q in [
            Vec2::new(0.0, 3.5),
            Vec2::new(4.2, 5.1),
            Vec2::new(-3.7, 1.234),
            Vec2::new(3.3, -0.4),
        ] {
            let m = edge_marker(&rect, &who, q);
            let best = outline.iter().map(|b| b.distance(q)).fold(f64::INFINITY, f64::min);
            assert!((m.anchor.distance(q) - best).abs() < 1e-9, "{q}");
        }
    }
}
