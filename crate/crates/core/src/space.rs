//! Shared metric plane that every physical room is translated into.
//!
//! Each room keeps its own local frame: `x` runs along the display wall and
//! `y` grows away from it. Registration anchors a room so that its display
//! wall lies on virtual `y = 0` and the midpoint of its display segment lands
//! on virtual `x = 0`. The mapping is a pure translation.
//!
//! Room geometry and local positions are quantized to whole millimetres, so
//! every virtual coordinate is an exact multiple of half a millimetre. All
//! threshold tests go through [`GridPoint`], which makes them exact integer
//! comparisons.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RoomsFile;

/// Largest tracked-area extent along either room axis, in metres.
pub const MAX_ROOM_EXTENT: f64 = 6.4;

/// Grid cells per metre (half-millimetre resolution).
const GRID_PER_METER: f64 = 2000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("invalid room dimensions {width} x {depth} m")]
    InvalidDimensions { width: f64, depth: f64 },
    #[error("display segment [{x0}, {x1}] does not fit on a {width} m wall")]
    InvalidDisplaySegment { x0: f64, x1: f64, width: f64 },
    #[error("unknown room {0}")]
    UnknownRoom(String),
    #[error("duplicate room name {0:?}")]
    DuplicateRoom(String),
    #[error("point ({x}, {y}) lies outside room {room}")]
    OutOfRoomBounds { room: RoomId, x: f64, y: f64 },
}

/// Floor-plane coordinates in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn add(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn length(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        self.sub(other).length()
    }

    /// Rounds both components to the nearest millimetre.
    pub fn quantize_mm(self) -> Vec2 {
        Vec2::new(quantize_mm(self.x), quantize_mm(self.y))
    }

    pub fn grid(self) -> GridPoint {
        GridPoint {
            x: to_grid(self.x),
            y: to_grid(self.y),
        }
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

pub fn quantize_mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn to_grid(v: f64) -> i64 {
    (v * GRID_PER_METER).round() as i64
}

/// A point on the half-millimetre integer lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPoint {
    pub x: i64,
    pub y: i64,
}

impl GridPoint {
    pub fn to_vec2(self) -> Vec2 {
        Vec2::new(self.x as f64 / GRID_PER_METER, self.y as f64 / GRID_PER_METER)
    }

    pub fn dist_sq(self, other: GridPoint) -> i64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Closed-disc membership test, exact on the lattice: `|a - b| <= radius`.
pub fn within(a: Vec2, b: Vec2, radius: f64) -> bool {
    let r = to_grid(radius);
    a.grid().dist_sq(b.grid()) <= r * r
}

/// Exact `value <= limit` on the lattice.
pub fn at_most(value: f64, limit: f64) -> bool {
    to_grid(value) <= to_grid(limit)
}

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (lo, hi, g) = (self.min.grid(), self.max.grid(), p.grid());
        lo.x <= g.x && g.x <= hi.x && lo.y <= g.y && g.y <= hi.y
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }

    /// Point on the rectangle's outline nearest to `p`.
    pub fn closest_boundary_point(&self, p: Vec2) -> Vec2 {
        if !self.contains(p) {
            return self.clamp(p);
        }
        let candidates = [
            (p.x - self.min.x, Vec2::new(self.min.x, p.y)),
            (self.max.x - p.x, Vec2::new(self.max.x, p.y)),
            (p.y - self.min.y, Vec2::new(p.x, self.min.y)),
            (self.max.y - p.y, Vec2::new(p.x, self.max.y)),
        ];
        candidates
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, q)| q)
            .unwrap_or(p)
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect::new(
            Vec2::new(self.min.x.min(other.min.x), self.min.y.min(other.min.y)),
            Vec2::new(self.max.x.max(other.max.x), self.max.y.max(other.max.y)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoomId(pub u16);

impl fmt::Display for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "room#{}", self.0)
    }
}

/// A physical room, stored with millimetre-quantized geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: RoomId,
    pub name: String,
    pub width: f64,
    pub depth: f64,
    pub display: (f64, f64),
}

impl Room {
    pub fn local_rect(&self) -> Rect {
        Rect::new(Vec2::ZERO, Vec2::new(self.width, self.depth))
    }

    /// Translation from local to virtual coordinates, in lattice units.
    fn anchor_grid(&self) -> i64 {
        -(to_grid(self.display.0) + to_grid(self.display.1)) / 2
    }

    fn anchor(&self) -> Vec2 {
        Vec2::new(self.anchor_grid() as f64 / GRID_PER_METER, 0.0)
    }
}

fn validate(width: f64, depth: f64, display: (f64, f64)) -> Result<(), SpaceError> {
    let dims_ok = |v: f64| v.is_finite() && v > 0.0 && v <= MAX_ROOM_EXTENT;
    if !dims_ok(width) || !dims_ok(depth) {
        return Err(SpaceError::InvalidDimensions { width, depth });
    }
    let (x0, x1) = display;
    if !(x0.is_finite() && x1.is_finite() && 0.0 <= x0 && x0 < x1 && x1 <= width) {
        return Err(SpaceError::InvalidDisplaySegment { x0, x1, width });
    }
    Ok(())
}

/// The merged virtual space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EerySpace {
    rooms: BTreeMap<RoomId, Room>,
}

impl EerySpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_config(file: &RoomsFile) -> Result<Self, SpaceError> {
        let mut space = Self::new();
        for spec in &file.rooms {
            space.register_named(
                &spec.id,
                spec.width_m,
                spec.depth_m,
                (spec.display_x0_m, spec.display_x1_m),
            )?;
        }
        Ok(space)
    }

    /// Registers an anonymous room; its name is derived from the new id.
    pub fn register_room(&mut self, width: f64, depth: f64, display: (f64, f64)) -> Result<RoomId, SpaceError> {
        let name = format!("room{}", self.rooms.len());
        self.register_named(&name, width, depth, display)
    }

    pub fn register_named(
        &mut self,
        name: &str,
        width: f64,
        depth: f64,
        display: (f64, f64),
    ) -> Result<RoomId, SpaceError> {
        validate(width, depth, display)?;
        let (width, depth) = (quantize_mm(width), quantize_mm(depth));
        let display = (quantize_mm(display.0), quantize_mm(display.1));
        validate(width, depth, display)?;
        if self.rooms.values().any(|r| r.name == name) {
            return Err(SpaceError::DuplicateRoom(name.to_string()));
        }
        let id = RoomId(self.rooms.len() as u16);
        self.rooms.insert(
            id,
            Room {
                id,
                name: name.to_string(),
                width,
                depth,
                display,
            },
        );
        Ok(id)
    }

    pub fn room(&self, id: RoomId) -> Result<&Room, SpaceError> {
        self.rooms
            .get(&id)
            .ok_or_else(|| SpaceError::UnknownRoom(id.to_string()))
    }

    pub fn room_by_name(&self, name: &str) -> Result<&Room, SpaceError> {
        self.rooms
            .values()
            .find(|r| r.name == name)
            .ok_or_else(|| SpaceError::UnknownRoom(name.to_string()))
    }

    pub fn rooms(&self) -> impl Iterator<Item = &Room> {
        self.rooms.values()
    }

    pub fn is_empty(&self) -> bool {
        self.rooms.is_empty()
    }

    /// Maps a local point (quantized to the millimetre) into the shared plane.
    pub fn to_virtual(&self, room: RoomId, local: Vec2) -> Result<Vec2, SpaceError> {
        let r = self.room(room)?;
        let local = local.quantize_mm();
        if !local.is_finite() || !r.local_rect().contains(local) {
            return Err(SpaceError::OutOfRoomBounds {
                room,
                x: local.x,
                y: local.y,
            });
        }
        let g = local.grid();
        Ok(GridPoint {
            x: g.x + r.anchor_grid(),
            y: g.y,
        }
        .to_vec2())
    }

    /// Inverse of [`to_virtual`](Self::to_virtual); no bounds check.
    pub fn to_local(&self, room: RoomId, virt: Vec2) -> Result<Vec2, SpaceError> {
        let r = self.room(room)?;
        let g = virt.grid();
        Ok(GridPoint {
            x: g.x - r.anchor_grid(),
            y: g.y,
        }
        .to_vec2())
    }

    pub fn room_rect(&self, room: RoomId) -> Result<Rect, SpaceError> {
        let r = self.room(room)?;
        let a = r.anchor();
        Ok(Rect::new(a, a.add(Vec2::new(r.width, r.depth))))
    }

    pub fn in_room_bounds(&self, room: RoomId, virt: Vec2) -> Result<bool, SpaceError> {
        Ok(self.room_rect(room)?.contains(virt))
    }

    /// Virtual x-interval covered by the room's display.
    pub fn display_segment(&self, room: RoomId) -> Result<(f64, f64), SpaceError> {
        let r = self.room(room)?;
        let a = r.anchor().x;
        Ok((r.display.0 + a, r.display.1 + a))
    }

    /// Hull of every room's mapped display segment.
    pub fn display_interval(&self) -> Option<(f64, f64)> {
        self.rooms
            .keys()
            .filter_map(|&id| self.display_segment(id).ok())
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    /// Axis-aligned union of the mapped room rectangles.
    pub fn bounds(&self) -> Option<Rect> {
        self.rooms
            .keys()
            .filter_map(|&id| self.room_rect(id).ok())
            .reduce(|a, b| a.union(&b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_rooms() -> (EerySpace, RoomId, RoomId) {
        let mut s = EerySpace::new();
        let a = s.register_room(4.0, 4.0, (1.0, 3.0)).unwrap();
        let b = s.register_room(6.0, 3.0, (2.0, 4.0)).unwrap();
        (s, a, b)
    }

    #[test]
    fn single_room_is_centred_on_display() {
        let mut s = EerySpace::new();
        let a = s.register_room(4.0, 4.0, (1.0, 3.0)).unwrap();
        let r = s.room_rect(a).unwrap();
        assert_eq!(r.min, Vec2::new(-2.0, 0.0));
        assert_eq!(r.max, Vec2::new(2.0, 4.0));
    }

    #[test]
    fn second_room_shares_display_midpoint() {
        let (s, a, b) = two_rooms();
        let r = s.room_rect(b).unwrap();
        assert_eq!(r.min, Vec2::new(-3.0, 0.0));
        assert_eq!(r.max, Vec2::new(3.0, 3.0));
        assert_eq!(s.to_virtual(b, Vec2::new(3.0, 0.0)).unwrap(), Vec2::ZERO);
        assert_eq!(s.to_virtual(a, Vec2::new(2.0, 0.0)).unwrap(), Vec2::ZERO);
        assert_eq!(
            s.bounds().unwrap(),
            Rect::new(Vec2::new(-3.0, 0.0), Vec2::new(3.0, 4.0))
        );
    }

    #[test]
    fn rejects_degenerate_rooms() {
        let mut s = EerySpace::new();
        assert!(matches!(
            s.register_room(0.0, 4.0, (0.0, 1.0)),
            Err(SpaceError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            s.register_room(7.0, 4.0, (0.0, 1.0)),
            Err(SpaceError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            s.register_room(4.0, 4.0, (3.0, 4.5)),
            Err(SpaceError::InvalidDisplaySegment { .. })
        ));
        assert!(matches!(
            s.register_room(4.0, 4.0, (2.0, 2.0)),
            Err(SpaceError::InvalidDisplaySegment { .. })
        ));
        assert!(s.is_empty());
    }

    #[test]
    fn to_virtual_translates() {
        let (s, a, _) = two_rooms();
        assert_eq!(s.to_virtual(a, Vec2::new(2.0, 1.5)).unwrap(), Vec2::new(0.0, 1.5));
        assert_eq!(s.to_virtual(a, Vec2::new(0.0, 0.0)).unwrap(), Vec2::new(-2.0, 0.0));
        assert!(matches!(
            s.to_virtual(a, Vec2::new(4.5, 1.0)),
            Err(SpaceError::OutOfRoomBounds { .. })
        ));
        assert!(matches!(
            s.to_virtual(RoomId(9), Vec2::ZERO),
            Err(SpaceError::UnknownRoom(_))
        ));
    }

    #[test]
    fn in_room_bounds_is_closed() {
        let (s, _, b) = two_rooms();
        assert!(!s.in_room_bounds(b, Vec2::new(0.0, 3.5)).unwrap());
        assert!(s.in_room_bounds(b, Vec2::new(-3.0, 0.0)).unwrap());
        assert!(s.in_room_bounds(b, Vec2::new(2.9, 2.9)).unwrap());
        assert!(s.in_room_bounds(RoomId(7), Vec2::ZERO).is_err());
    }

    #[test]
    fn odd_millimetre_display_lands_on_half_millimetre() {
        let mut s = EerySpace::new();
        let a = s.register_room(3.001, 2.0, (0.0, 3.001)).unwrap();
        let (x0, x1) = s.display_segment(a).unwrap();
        assert_eq!(x0, -x1);
        assert_eq!(x0 + x1, 0.0);
    }

    #[test]
    fn boundary_point_of_outside_point_is_clamp() {
        let r = Rect::new(Vec2::new(-3.0, 0.0), Vec2::new(3.0, 3.0));
        assert_eq!(r.closest_boundary_point(Vec2::new(0.0, 3.5)), Vec2::new(0.0, 3.0));
        assert_eq!(r.closest_boundary_point(Vec2::new(4.0, 4.0)), Vec2::new(3.0, 3.0));
        assert_eq!(r.closest_boundary_point(Vec2::new(2.5, 1.0)), Vec2::new(3.0, 1.0));
    }

    #[test]
    fn within_is_exact_at_threshold() {
        assert!(within(Vec2::new(0.0, 1.0), Vec2::new(1.2, 1.0), 1.2));
        assert!(!within(Vec2::new(0.0, 1.0), Vec2::new(1.2005, 1.0), 1.2));
        assert!(at_most(1.5, 1.5));
        assert!(!at_most(1.5005, 1.5));
    }

    fn mm() -> impl Strategy<Value = f64> {
        (0i32..=4000).prop_map(|v| v as f64 / 1000.0)
    }

    proptest! {
        #[test]
        fn mapping_is_an_isometry(px in mm(), py in mm(), qx in mm(), qy in mm(), w in 2000i32..6400, x0 in 0i32..1000) {
            let mut s = EerySpace::new();
            let w = w as f64 / 1000.0;
            let r = s.register_room(w.max(4.0), 4.0, (x0 as f64 / 1000.0, w.max(4.0) - 0.5)).unwrap();
            let (p, q) = (Vec2::new(px, py), Vec2::new(qx, qy));
            let (vp, vq) = (s.to_virtual(r, p).unwrap(), s.to_virtual(r, q).unwrap());
            prop_assert_eq!(vp.grid().dist_sq(vq.grid()), p.grid().dist_sq(q.grid()));
            prop_assert_eq!(vp.grid().x - vq.grid().x, p.grid().x - q.grid().x);
            prop_assert_eq!(s.to_local(r, vp).unwrap(), p);
        }

        #[test]
        fn display_midpoints_coincide_in_any_order(
            dims in proptest::collection::vec((1i32..6400, 1i32..6400, 0.0f64..1.0, 0.0f64..1.0), 1..6),
        ) {
            let specs: Vec<(f64, f64, (f64, f64))> = dims.iter().map(|&(w, d, a, b)| {
                let w = w as f64 / 1000.0;
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let x0 = quantize_mm(lo * w);
                let x1 = quantize_mm(hi * w).max(x0 + 0.001).min(w);
                (w, d as f64 / 1000.0, (x0, x1))
            }).filter(|s| s.2.0 < s.2.1).collect();
            let mut fwd = EerySpace::new();
            let mut rev = EerySpace::new();
            for s in &specs { fwd.register_room(s.0, s.1, s.2).unwrap(); }
            for s in specs.iter().rev() { rev.register_room(s.0, s.1, s.2).unwrap(); }
            let n = specs.len();
            for i in 0..n {
                let seg = fwd.display_segment(RoomId(i as u16)).unwrap();
                prop_assert_eq!(seg.0.grid_mid(seg.1), 0);
                let rseg = rev.display_segment(RoomId((n - 1 - i) as u16)).unwrap();
                prop_assert_eq!(seg, rseg);
                prop_assert_eq!(fwd.room_rect(RoomId(i as u16)).unwrap(), rev.room_rect(RoomId((n - 1 - i) as u16)).unwrap());
            }
        }
    }

    trait GridMid {
        fn grid_mid(self, other: f64) -> i64;
    }

    impl GridMid for f64 {
        fn grid_mid(self, other: f64) -> i64 {
            Vec2::new(self, 0.0).grid().x + Vec2::new(other, 0.0).grid().x
        }
    }
}
