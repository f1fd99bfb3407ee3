//! One-step state propagation: unicycle robot, holonomic humans.

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::domain::{wrap_angle, Action, FullAgentState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    /// Decision-step duration in seconds.
    pub dt: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { dt: 0.25 }
    }
}

/// Rotate first, then translate along the new heading.
pub fn propagate_robot(state: &FullAgentState, action: Action, cfg: &StepConfig) -> FullAgentState {
    let theta = wrap_angle(state.theta + action.dtheta);
    let (s, c) = theta.sin_cos();
    let vx = action.v * c;
    let vy = action.v * s;
    FullAgentState {
        px: state.px + vx * cfg.dt,
        py: state.py + vy * cfg.dt,
        vx,
        vy,
        theta,
        ..*state
    }
}

/// Moves a human with the velocity chosen by the crowd policy.
pub fn propagate_human(state: &FullAgentState, velocity: DVec2, cfg: &StepConfig) -> Result<FullAgentState> {
    let DVec2 { x: vx, y: vy } = velocity;
    let speed = vx.hypot(vy);
    if speed > state.v_pref + 1e-9 {
        return Err(Error::SpeedExceeded {
            speed,
            v_pref: state.v_pref,
        });
    }
    let theta = if speed > 0.0 { vy.atan2(vx) } else { state.theta };
    Ok(FullAgentState {
        px: state.px + vx * cfg.dt,
        py: state.py + vy * cfg.dt,
        vx,
        vy,
        theta,
        ..*state
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_action_space;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn agent(theta: f64, v_pref: f64) -> FullAgentState {
        FullAgentState {
            px: 0.0,
            py: 0.0,
            vx: 0.3,
            vy: -0.2,
            radius: 0.3,
            gx: 0.0,
            gy: 4.0,
            v_pref,
            theta,
        }
    }

    #[test]
    fn straight_motion() {
        let next = propagate_robot(
            &agent(FRAC_PI_2, 1.0),
            Action { v: 1.0, dtheta: 0.0 },
            &StepConfig::default(),
        );
        assert!(next.px.abs() < 1e-15);
        assert!((next.py - 0.25).abs() < 1e-15);
        assert_eq!(next.theta, FRAC_PI_2);
    }

    #[test]
    fn stop_only_zeroes_velocity() {
        let s = agent(0.7, 1.0);
        let next = propagate_robot(&s, Action::STOP, &StepConfig::default());
        assert_eq!(next.px, s.px);
        assert_eq!(next.py, s.py);
        assert_eq!(next.theta, s.theta);
        assert_eq!((next.vx, next.vy), (0.0, 0.0));
    }

    #[test]
    fn turn_then_translate() {
        let d = 10f64.to_radians();
        let next = propagate_robot(&agent(0.0, 1.0), Action { v: 1.0, dtheta: d }, &StepConfig::default());
        assert!((next.theta - d).abs() < 1e-15);
        assert!((next.px - 0.25 * d.cos()).abs() < 1e-15);
        assert!((next.py - 0.25 * d.sin()).abs() < 1e-15);
    }

    #[test]
    fn human_moves_with_velocity() {
        let cfg = StepConfig::default();
        let next = propagate_human(&agent(0.0, 1.0), DVec2::new(1.0, 0.0), &cfg).unwrap();
        assert_eq!((next.px, next.py), (0.25, 0.0));
        let next = propagate_human(&agent(0.0, 1.0), DVec2::new(0.6, 0.8), &cfg).unwrap();
        assert!((next.position().length() - 0.25).abs() < 1e-12);
        assert!((next.theta - 0.8f64.atan2(0.6)).abs() < 1e-15);
    }

    #[test]
    fn static_human_stays_put() {
        let s = agent(0.4, 0.0);
        let next = propagate_human(&s, DVec2::ZERO, &StepConfig::default()).unwrap();
        assert_eq!(next.position(), s.position());
        assert_eq!(next.theta, s.theta);
    }

    #[test]
    fn human_over_speed_is_rejected() {
        let err = propagate_human(&agent(0.0, 1.0), DVec2::new(1.0, 0.1), &StepConfig::default());
        assert!(matches!(err, Err(Error::SpeedExceeded { .. })));
    }

    proptest! {
        #[test]
        fn displacement_matches_speed(theta in -3.0..3.0f64, idx in 0usize..11, dt in 0.05..1.0f64) {
            let actions = build_action_space(1.0, 10, 10f64.to_radians());
            let a = actions[idx];
            let cfg = StepConfig { dt };
            let s = agent(theta, 1.0);
            let n = propagate_robot(&s, a, &cfg);
            let disp = (n.position() - s.position()).length();
            prop_assert!((disp - a.v * dt).abs() < 1e-12);
            prop_assert!(wrap_angle(n.theta - s.theta).abs() <= 10f64.to_radians() + 1e-12);
            prop_assert_eq!(n, propagate_robot(&s, a, &cfg));
        }

        #[test]
        fn human_displacement_matches_speed(ang in -3.1..3.1f64, speed in 0.0..1.0f64) {
            let cfg = StepConfig::default();
            let v = DVec2::new(speed * ang.cos(), speed * ang.sin());
            let s = agent(0.0, 1.0);
            let n = propagate_human(&s, v, &cfg).unwrap();
            prop_assert!(((n.position() - s.position()).length() - speed * cfg.dt).abs() < 1e-12);
        }
    }
}
