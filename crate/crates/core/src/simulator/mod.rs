//! Deterministic movement driver: scripted scenarios, trace replay and the
//! computer-controlled pursuer.

mod runner;
pub mod scenario;
pub mod trace;

pub use runner::{replay_trace, run, RunOptions, SimOutcome, Transport};
pub use scenario::{EventPattern, ExpectationMismatch, Scenario, ScenarioError};
pub use trace::{Trace, TraceFormatError, TraceHeader, TraceRecord};

use crate::space::{within, Rect, Vec2};

pub const DEFAULT_PURSUER_SPEED: f64 = 0.8;
pub const DEFAULT_TICK_MS: u64 = 100;

/// Moves `bot` straight toward `target` by at most `speed * dt` without
/// overshooting, then clamps the result into `bounds`.
pub fn pursuer_step(bot: Vec2, target: Vec2, speed: f64, dt: f64, bounds: &Rect) -> Vec2 {
    assert!(dt > 0.0, "dt must be positive");
    let delta = target.sub(bot);
    let dist = delta.length();
    let reach = speed * dt;
    let next = if dist <= reach {
        target
    } else {
        bot.add(delta.scale(reach / dist))
    };
    bounds.clamp(next)
}

/// Number of trajectory samples that fall within `radius` of any of the
/// static positions.
pub fn task5_pathcheck(trajectory: &[Vec2], remotes: &[Vec2], radius: f64) -> usize {
    trajectory
        .iter()
        .filter(|s| remotes.iter().any(|r| within(**s, *r, radius)))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn big() -> Rect {
        Rect::new(Vec2::new(-10.0, -10.0), Vec2::new(10.0, 10.0))
    }

    #[test]
    fn straight_line_step() {
        let p = pursuer_step(Vec2::ZERO, Vec2::new(2.0, 0.0), 0.8, 1.0, &big());
        assert_eq!(p, Vec2::new(0.8, 0.0));
    }

    #[test]
    fn lands_on_close_target() {
        let t = Vec2::new(0.1, 0.0);
        assert_eq!(pursuer_step(Vec2::ZERO, t, 0.8, 1.0, &big()), t);
    }

    #[test]
    fn stops_at_room_edge() {
        let room = Rect::new(Vec2::ZERO, Vec2::new(1.0, 1.0));
        let p = pursuer_step(Vec2::new(0.9, 0.5), Vec2::new(5.0, 0.5), 0.8, 1.0, &room);
        assert_eq!(p, Vec2::new(1.0, 0.5));
    }

    #[test]
    fn pathcheck_examples() {
        let remotes = [Vec2::new(2.0, 0.0), Vec2::new(4.0, 0.0)];
        let line: Vec<Vec2> = (0..=60).map(|i| Vec2::new(i as f64 * 0.1, 0.0)).collect();
        assert!(task5_pathcheck(&line, &remotes, 0.3) >= 1);
        let offset: Vec<Vec2> = (0..=60).map(|i| Vec2::new(i as f64 * 0.1, 0.31)).collect();
        assert_eq!(task5_pathcheck(&offset, &remotes, 0.3), 0);
        assert_eq!(task5_pathcheck(&[], &remotes, 0.3), 0);
    }

    proptest! {
        #[test]
        fn never_overshoots(bx in -5.0..5.0f64, by in -5.0..5.0f64, tx in -5.0..5.0f64, ty in -5.0..5.0f64,
                            v in 0.1..2.0f64, dt in 0.01..1.0f64) {
            let (b, t) = (Vec2::new(bx, by), Vec2::new(tx, ty));
            let n = pursuer_step(b, t, v, dt, &big());
            prop_assert!(n.distance(b) <= v * dt + 1e-9);
            prop_assert!(n.distance(t) <= b.distance(t) + 1e-9);
        }
    }
}
