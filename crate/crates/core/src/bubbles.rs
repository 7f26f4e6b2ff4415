//! Social bubbles: connected groups of participants whose personal spaces
//! intersect.
//!
//! Formation uses a two-threshold proximity graph. A pair links when its
//! centres come within the entry distance and stays linked until they drift
//! past the exit distance. Bubbles are the connected components of that graph
//! with at least two members. Between recomputations a component keeps the id
//! of the previous bubble it shares the most members with, so a channel
//! survives members coming and going.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::participants::{ParticipantId, Rgb};
use crate::space::{within, Vec2};
use crate::Millis;

/// Unordered pair stored as `(low, high)`.
pub type Edge = (ParticipantId, ParticipantId);

fn edge(a: ParticipantId, b: ParticipantId) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BubbleId(pub u64);

impl fmt::Display for BubbleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialBubble {
    pub id: BubbleId,
    pub members: BTreeSet<ParticipantId>,
    pub color: Rgb,
    pub created_at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BubbleEventKind {
    Created,
    Dissolved,
    MemberJoined,
    MemberLeft,
    ChannelOpened,
    ChannelClosed,
}

/// One change to the bubble set. `participants` holds the full membership
/// for `Created`/`Dissolved`/channel events and only the affected members for
/// `MemberJoined`/`MemberLeft`. `color` is the bubble colour after the change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleEvent {
    pub kind: BubbleEventKind,
    pub bubble: BubbleId,
    pub participants: BTreeSet<ParticipantId>,
    pub color: Rgb,
}

/// Links every pair within `enter`, and keeps previously linked pairs up to
/// `exit`. Only pairs of listed participants survive.
pub fn proximity_graph(
    positions: &[(ParticipantId, Vec2)],
    enter: f64,
    exit: f64,
    previous: &BTreeSet<Edge>,
) -> BTreeSet<Edge> {
    let mut edges = BTreeSet::new();
    for (i, &(a, pa)) in positions.iter().enumerate() {
        for &(b, pb) in &positions[i + 1..] {
            let e = edge(a, b);
            if within(pa, pb, enter) || (previous.contains(&e) && within(pa, pb, exit)) {
                edges.insert(e);
            }
        }
    }
    edges
}

/// Per-channel mean, rounded half away from zero.
pub fn bubble_color(colors: &[Rgb]) -> Rgb {
    let n = colors.len() as u32;
    if n == 0 {
        return Rgb::new(0, 0, 0);
    }
    let mean = |f: fn(&Rgb) -> u8| -> u8 {
        let sum: u32 = colors.iter().map(|c| f(c) as u32).sum();
        ((2 * sum + n) / (2 * n)) as u8
    };
    Rgb::new(mean(|c| c.r), mean(|c| c.g), mean(|c| c.b))
}

/// Disjoint-set forest over dense indices.
struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so component order is stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components with at least two members, ordered by smallest id.
pub fn components(edges: &BTreeSet<Edge>) -> Vec<BTreeSet<ParticipantId>> {
    let nodes: Vec<ParticipantId> = edges
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<ParticipantId, usize> = nodes.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut dsu = DisjointSet::new(nodes.len());
    for (a, b) in edges {
        dsu.union(index[a], index[b]);
    }
    let mut groups: BTreeMap<usize, BTreeSet<ParticipantId>> = BTreeMap::new();
    for (i, &p) in nodes.iter().enumerate() {
        groups.entry(dsu.find(i)).or_default().insert(p);
    }
    let mut out: Vec<_> = groups.into_values().filter(|g| g.len() >= 2).collect();
    out.sort_by_key(|g| *g.iter().next().expect("non-empty"));
    out
}

/// Live bubbles plus the id allocator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleSet {
    pub bubbles: BTreeMap<BubbleId, SocialBubble>,
    next_id: u64,
}

impl Default for BubbleSet {
    fn default() -> Self {
        Self {
            bubbles: BTreeMap::new(),
            next_id: 1,
        }
    }
}

impl BubbleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.bubbles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bubbles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SocialBubble> {
        self.bubbles.values()
    }

    pub fn bubble_of(&self, p: ParticipantId) -> Option<&SocialBubble> {
        self.bubbles.values().find(|b| b.members.contains(&p))
    }

    /// Membership sets, sorted; handy for comparisons that ignore ids.
    pub fn member_sets(&self) -> Vec<BTreeSet<ParticipantId>> {
        let mut v: Vec<_> = self.bubbles.values().map(|b| b.members.clone()).collect();
        v.sort();
        v
    }

    /// Rebuilds a bubble set by applying `events` to `self`.
    pub fn apply(&mut self, events: &[BubbleEvent], at: Millis) {
        for ev in events {
            match ev.kind {
                BubbleEventKind::Created => {
                    self.bubbles.insert(
                        ev.bubble,
                        SocialBubble {
                            id: ev.bubble,
                            members: ev.participants.clone(),
                            color: ev.color,
                            created_at: at,
                        },
                    );
                    self.next_id = self.next_id.max(ev.bubble.0 + 1);
                }
                BubbleEventKind::Dissolved => {
                    self.bubbles.remove(&ev.bubble);
                }
                BubbleEventKind::MemberJoined => {
                    if let Some(b) = self.bubbles.get_mut(&ev.bubble) {
                        b.members.extend(ev.participants.iter().copied());
                        b.color = ev.color;
                    }
                }
                BubbleEventKind::MemberLeft => {
                    if let Some(b) = self.bubbles.get_mut(&ev.bubble) {
                        b.members.retain(|m| !ev.participants.contains(m));
                        b.color = ev.color;
                    }
                }
                BubbleEventKind::ChannelOpened | BubbleEventKind::ChannelClosed => {}
            }
        }
    }
}

/// Derives the next bubble set from an edge set and reports the delta.
///
/// Each new component claims at most one previous bubble and vice versa.
/// Claims are granted greedily by descending member overlap, then ascending
/// previous id, then ascending smallest member of the component.
pub fn compute_bubbles(
    edges: &BTreeSet<Edge>,
    previous: &BubbleSet,
    color_of: impl Fn(ParticipantId) -> Rgb,
    now: Millis,
) -> (BubbleSet, Vec<BubbleEvent>) {
    let comps = components(edges);

    let mut candidates: Vec<(usize, BubbleId, usize)> = Vec::new();
    for (ci, comp) in comps.iter().enumerate() {
        for prev in previous.bubbles.values() {
            let overlap = comp.intersection(&prev.members).count();
            if overlap > 0 {
                candidates.push((overlap, prev.id, ci));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut claimed_prev: BTreeSet<BubbleId> = BTreeSet::new();
    let mut assignment: Vec<Option<BubbleId>> = vec![None; comps.len()];
    for (_, prev, ci) in candidates {
        if assignment[ci].is_none() && !claimed_prev.contains(&prev) {
            assignment[ci] = Some(prev);
            claimed_prev.insert(prev);
        }
    }

    let color_for = |members: &BTreeSet<ParticipantId>| -> Rgb {
        let colors: Vec<Rgb> = members.iter().map(|&m| color_of(m)).collect();
        bubble_color(&colors)
    };

    let mut next = BubbleSet {
        bubbles: BTreeMap::new(),
        next_id: previous.next_id,
    };
    let mut events = Vec::new();

    for prev in previous.bubbles.values() {
        if !claimed_prev.contains(&prev.id) {
            for kind in [BubbleEventKind::Dissolved, BubbleEventKind::ChannelClosed] {
                events.push(BubbleEvent {
                    kind,
                    bubble: prev.id,
                    participants: prev.members.clone(),
                    color: prev.color,
                });
            }
        }
    }

    let mut continued: Vec<(BubbleId, usize)> = assignment
        .iter()
        .enumerate()
        .filter_map(|(ci, a)| a.map(|id| (id, ci)))
        .collect();
    continued.sort();
    for (id, ci) in continued {
        let prev = &previous.bubbles[&id];
        let members = comps[ci].clone();
        let color = color_for(&members);
        let left: BTreeSet<_> = prev.members.difference(&members).copied().collect();
        let joined: BTreeSet<_> = members.difference(&prev.members).copied().collect();
        if !left.is_empty() {
            let remaining: BTreeSet<_> = prev.members.intersection(&members).copied().collect();
            let mid_color = if joined.is_empty() {
                color
            } else {
                color_for(&remaining)
            };
            events.push(BubbleEvent {
                kind: BubbleEventKind::MemberLeft,
                bubble: id,
                participants: left,
                color: mid_color,
            });
        }
        if !joined.is_empty() {
            events.push(BubbleEvent {
                kind: BubbleEventKind::MemberJoined,
                bubble: id,
                participants: joined,
                color,
            });
        }
        next.bubbles.insert(
            id,
            SocialBubble {
                id,
                members,
                color,
                created_at: prev.created_at,
            },
        );
    }

    for (ci, comp) in comps.iter().enumerate() {
        if assignment[ci].is_some() {
            continue;
        }
        let id = BubbleId(next.next_id);
        next.next_id += 1;
        let color = color_for(comp);
        for kind in [BubbleEventKind::Created, BubbleEventKind::ChannelOpened] {
            events.push(BubbleEvent {
                kind,
                bubble: id,
                participants: comp.clone(),
                color,
            });
        }
        next.bubbles.insert(
            id,
            SocialBubble {
                id,
                members: comp.clone(),
                color,
                created_at: now,
            },
        );
    }

    (next, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(n: u64) -> ParticipantId {
        ParticipantId(n)
    }

    fn grey(_: ParticipantId) -> Rgb {
        Rgb::new(10, 10, 10)
    }

    fn set(ids: &[u64]) -> BTreeSet<ParticipantId> {
        ids.iter().map(|&i| p(i)).collect()
    }

    fn kinds(evs: &[BubbleEvent]) -> Vec<BubbleEventKind> {
        evs.iter().map(|e| e.kind).collect()
    }

    #[test]
    fn graph_entry_and_hysteresis() {
        let none = BTreeSet::new();
        let a = (p(1), Vec2::new(0.0, 1.0));
        assert_eq!(
            proximity_graph(&[a, (p(2), Vec2::new(1.1, 1.0))], 1.2, 1.3, &none).len(),
            1
        );
        let far = [a, (p(2), Vec2::new(1.25, 1.0))];
        assert!(proximity_graph(&far, 1.2, 1.3, &none).is_empty());
        let prior: BTreeSet<_> = [(p(1), p(2))].into_iter().collect();
        assert_eq!(proximity_graph(&far, 1.2, 1.3, &prior), prior);
    }

    #[test]
    fn colour_average_rounds_half_away() {
        assert_eq!(
            bubble_color(&[Rgb::new(255, 0, 0), Rgb::new(0, 0, 255)]),
            Rgb::new(128, 0, 128)
        );
        assert_eq!(
            bubble_color(&[Rgb::new(10, 10, 10), Rgb::new(10, 10, 10)]),
            Rgb::new(10, 10, 10)
        );
        assert_eq!(
            bubble_color(&[Rgb::new(0, 0, 0), Rgb::new(0, 0, 0), Rgb::new(255, 255, 255)]),
            Rgb::new(85, 85, 85)
        );
        assert_eq!(bubble_color(&[Rgb::new(1, 2, 3), Rgb::new(2, 3, 4)]), Rgb::new(2, 3, 4));
    }

    #[test]
    fn chain_forms_one_bubble() {
        let pos = [
            (p(1), Vec2::new(0.0, 1.0)),
            (p(2), Vec2::new(1.1, 1.0)),
            (p(3), Vec2::new(2.2, 1.0)),
        ];
        let edges = proximity_graph(&pos, 1.2, 1.3, &BTreeSet::new());
        let (set_, evs) = compute_bubbles(&edges, &BubbleSet::new(), grey, Millis(0));
        assert_eq!(set_.member_sets(), vec![set(&[1, 2, 3])]);
        assert_eq!(
            kinds(&evs),
            vec![BubbleEventKind::Created, BubbleEventKind::ChannelOpened]
        );
    }

    #[test]
    fn moving_apart_dissolves_and_closes_channel() {
        let mut edges = proximity_graph(
            &[(p(1), Vec2::new(0.0, 1.0)), (p(2), Vec2::new(1.0, 1.0))],
            1.2,
            1.3,
            &BTreeSet::new(),
        );
        let (s1, _) = compute_bubbles(&edges, &BubbleSet::new(), grey, Millis(0));
        edges = proximity_graph(
            &[(p(1), Vec2::new(0.0, 1.0)), (p(2), Vec2::new(1.4, 1.0))],
            1.2,
            1.3,
            &edges,
        );
        let (s2, evs) = compute_bubbles(&edges, &s1, grey, Millis(1));
        assert!(s2.is_empty());
        assert_eq!(
            kinds(&evs),
            vec![BubbleEventKind::Dissolved, BubbleEventKind::ChannelClosed]
        );
    }

    #[test]
    fn split_keeps_id_for_larger_part() {
        let e1: BTreeSet<_> = [(p(1), p(2)), (p(2), p(3))].into_iter().collect();
        let (s1, _) = compute_bubbles(&e1, &BubbleSet::new(), grey, Millis(0));
        let id = s1.iter().next().unwrap().id;
        let e2: BTreeSet<_> = [(p(1), p(2))].into_iter().collect();
        let (s2, evs) = compute_bubbles(&e2, &s1, grey, Millis(1));
        assert_eq!(s2.bubbles[&id].members, set(&[1, 2]));
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].kind, BubbleEventKind::MemberLeft);
        assert_eq!(evs[0].participants, set(&[3]));
    }

    #[test]
    fn merge_dissolves_the_smaller_bubble() {
        let e1: BTreeSet<_> = [(p(1), p(2)), (p(2), p(3)), (p(4), p(5))].into_iter().collect();
        let (s1, _) = compute_bubbles(&e1, &BubbleSet::new(), grey, Millis(0));
        let big = s1.bubble_of(p(1)).unwrap().id;
        let small = s1.bubble_of(p(4)).unwrap().id;
        let mut e2 = e1.clone();
        e2.insert((p(3), p(4)));
        let (s2, evs) = compute_bubbles(&e2, &s1, grey, Millis(1));
        assert_eq!(s2.len(), 1);
        assert_eq!(s2.bubbles[&big].members, set(&[1, 2, 3, 4, 5]));
        assert_eq!(
            kinds(&evs),
            vec![
                BubbleEventKind::Dissolved,
                BubbleEventKind::ChannelClosed,
                BubbleEventKind::MemberJoined
            ]
        );
        assert_eq!(evs[0].bubble, small);
    }

    #[test]
    fn tie_goes_to_smallest_previous_id() {
        // {1,2} and {3,4} merge; both overlap by two
        let e1: BTreeSet<_> = [(p(1), p(2)), (p(3), p(4))].into_iter().collect();
        let (s1, _) = compute_bubbles(&e1, &BubbleSet::new(), grey, Millis(0));
        let mut e2 = e1.clone();
        e2.insert((p(2), p(3)));
        let (s2, _) = compute_bubbles(&e2, &s1, grey, Millis(1));
        let smallest = *s1.bubbles.keys().next().unwrap();
        assert!(s2.bubbles.contains_key(&smallest));
    }

    #[test]
    fn four_way_split_inherits_once() {
        let e1: BTreeSet<_> = [(p(1), p(2)), (p(2), p(3)), (p(3), p(4))].into_iter().collect();
        let (s1, _) = compute_bubbles(&e1, &BubbleSet::new(), grey, Millis(0));
        let old = s1.iter().next().unwrap().id;
        let e2: BTreeSet<_> = [(p(1), p(2)), (p(3), p(4))].into_iter().collect();
        let (s2, evs) = compute_bubbles(&e2, &s1, grey, Millis(1));
        assert_eq!(s2.bubbles[&old].members, set(&[1, 2]));
        assert_eq!(s2.len(), 2);
        assert_eq!(
            kinds(&evs),
            vec![
                BubbleEventKind::MemberLeft,
                BubbleEventKind::Created,
                BubbleEventKind::ChannelOpened
            ]
        );
    }

    fn brute_components(pos: &[(ParticipantId, Vec2)], r: f64) -> Vec<BTreeSet<ParticipantId>> {
        // label propagation to fixpoint over all pairs
        let n = pos.len();
        let mut label: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if i != j && within(pos[i].1, pos[j].1, r) && label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<ParticipantId>> = BTreeMap::new();
        for i in 0..n {
            groups.entry(label[i]).or_default().insert(pos[i].0);
        }
        let mut v: Vec<_> = groups.into_values().filter(|g| g.len() >= 2).collect();
        v.sort();
        v
    }

    fn positions() -> impl Strategy<Value = Vec<(ParticipantId, Vec2)>> {
        proptest::collection::vec((0i32..4000, 0i32..4000), 0..10).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (x, y))| (p(i as u64 + 1), Vec2::new(x as f64 / 1000.0, y as f64 / 1000.0)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_components(pos in positions()) {
            let edges = proximity_graph(&pos, 1.2, 1.3, &BTreeSet::new());
            let (s, _) = compute_bubbles(&edges, &BubbleSet::new(), grey, Millis(0));
            prop_assert_eq!(s.member_sets(), brute_components(&pos, 1.2));
        }

        #[test]
        fn members_are_disjoint_and_replay_rebuilds(steps in proptest::collection::vec(positions(), 1..6)) {
            let mut edges = BTreeSet::new();
            let mut state = BubbleSet::new();
            let mut replayed = BubbleSet::new();
            for (t, pos) in steps.iter().enumerate() {
                edges = proximity_graph(pos, 1.2, 1.3, &edges);
                let (next, evs) = compute_bubbles(&edges, &state, grey, Millis(t as u64));
                replayed.apply(&evs, Millis(t as u64));
                state = next;
                let mut seen = BTreeSet::new();
                for b in state.iter() {
                    prop_assert!(b.members.len() >= 2);
                    for m in &b.members {
                        prop_assert!(seen.insert(*m));
                    }
                }
                prop_assert_eq!(replayed.member_sets(), state.member_sets());
                prop_assert_eq!(
                    replayed.iter().map(|b| (b.id, b.color)).collect::<Vec<_>>(),
                    state.iter().map(|b| (b.id, b.color)).collect::<Vec<_>>()
                );
            }
        }

        #[test]
        fn relabeling_gives_isomorphic_bubbles(pos in positions(), shift in 1u64..1000) {
            let n = pos.len() as u64;
            let relabeled: Vec<_> = pos.iter().map(|&(id, v)| (p(n + shift - id.0), v)).collect();
            let a = compute_bubbles(&proximity_graph(&pos, 1.2, 1.3, &BTreeSet::new()), &BubbleSet::new(), grey, Millis(0)).0;
            let b = compute_bubbles(&proximity_graph(&relabeled, 1.2, 1.3, &BTreeSet::new()), &BubbleSet::new(), grey, Millis(0)).0;
            let mapped: Vec<BTreeSet<_>> = {
                let mut v: Vec<_> = a.member_sets().into_iter()
                    .map(|s| s.into_iter().map(|id| p(n + shift - id.0)).collect())
                    .collect();
                v.sort();
                v
            };
            prop_assert_eq!(mapped, b.member_sets());
        }
    }
}
