//! Navigation reward: current-state term, look-ahead terms for static and
//! dynamic humans, and the time term.
//!
//! Distances compared against `d_disc` and the effective range are
//! surface-to-surface clearances (center distance minus both radii).

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, JointState, ObservableState};
use crate::error::{Error, Result};

const COLLISION_REWARD: f64 = -0.25;
const GOAL_REWARD: f64 = 1.0;
const TIMEOUT_REWARD: f64 = -0.2;
const ARRIVAL_TIME_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Discomfort distance (m).
    pub d_disc: f64,
    /// Weight of the static look-ahead penalty.
    pub alpha: f64,
    /// Weight of the dynamic look-ahead penalty (1/m).
    pub beta: f64,
    /// Effective range around the robot (m).
    pub r_e: f64,
    /// Static look-ahead horizon (s).
    pub dt_static: f64,
    /// Dynamic look-ahead horizon (s).
    pub dt_dynamic: f64,
    /// Look-ahead distance horizon (s); caps both horizons above.
    pub dt_lookahead: f64,
    pub t_limit: f64,
    pub goal_tolerance: f64,
    /// Keep the dynamic term a pure penalty. When false the term is
    /// `beta * (d - d_disc)` and can be positive.
    pub clamp_dynamic: bool,
    /// Sampling interval of the dynamic look-ahead (s).
    pub lookahead_substep: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            d_disc: 0.2,
            alpha: 0.15,
            beta: 0.5,
            r_e: 1.0,
            dt_static: 1.0,
            dt_dynamic: 1.0,
            dt_lookahead: 1.0,
            t_limit: 25.0,
            goal_tolerance: 0.3,
            clamp_dynamic: true,
            lookahead_substep: 0.05,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("reward.d_disc", self.d_disc),
            ("reward.alpha", self.alpha),
            ("reward.beta", self.beta),
            ("reward.r_e", self.r_e),
            ("reward.dt_static", self.dt_static),
            ("reward.dt_dynamic", self.dt_dynamic),
            ("reward.dt_lookahead", self.dt_lookahead),
            ("reward.t_limit", self.t_limit),
            ("reward.goal_tolerance", self.goal_tolerance),
            ("reward.lookahead_substep", self.lookahead_substep),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.d_disc >= self.r_e {
            return Err(Error::Config(format!(
                "reward.d_disc ({}) must be smaller than reward.r_e ({})",
                self.d_disc, self.r_e
            )));
        }
        Ok(())
    }

    fn static_horizon(&self) -> f64 {
        self.dt_static.min(self.dt_lookahead)
    }

    fn dynamic_horizon(&self) -> f64 {
        self.dt_dynamic.min(self.dt_lookahead)
    }
}

/// Which reward terms are active on top of the current-state term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub lookahead: bool,
    pub time: bool,
}

/// The four reward variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    RcOnly,
    RcRl,
    RcRt,
}

impl Ablation {
    pub fn terms(self) -> RewardTerms {
        match self {
            Ablation::Full => RewardTerms {
                lookahead: true,
                time: true,
            },
            Ablation::RcOnly => RewardTerms {
                lookahead: false,
                time: false,
            },
            Ablation::RcRl => RewardTerms {
                lookahead: true,
                time: false,
            },
            Ablation::RcRt => RewardTerms {
                lookahead: false,
                time: true,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::RcOnly => "rc_only",
            Ablation::RcRl => "rc_rl",
            Ablation::RcRt => "rc_rt",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "rc_only" => Ok(Ablation::RcOnly),
            "rc_rl" => Ok(Ablation::RcRl),
            "rc_rt" => Ok(Ablation::RcRt),
            other => Err(format!(
                "unknown ablation `{other}` (expected full|rc_only|rc_rl|rc_rt)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_c: f64,
    pub r_st: f64,
    pub r_dy: f64,
    pub r_t: f64,
    pub total: f64,
    pub n_col: usize,
    pub n_static: usize,
    pub d_lookahead_dyn: Option<f64>,
}

/// Current-state term from the closest clearance `d_t` after the transition.
/// Branch order: collision, discomfort, goal.
pub fn current_reward_value(d_t: f64, at_goal: bool, cfg: &RewardConfig) -> f64 {
    if d_t < 0.0 {
        COLLISION_REWARD
    } else if d_t < cfg.d_disc {
        0.25 * (-0.1 + d_t / 2.0)
    } else if at_goal {
        GOAL_REWARD
    } else {
        0.0
    }
}

pub fn reached_goal(state: &JointState, cfg: &RewardConfig) -> bool {
    state.robot.distance_to_goal() < cfg.goal_tolerance
}

pub fn current_reward(_state: &JointState, next_state: &JointState, cfg: &RewardConfig) -> f64 {
    current_reward_value(next_state.min_clearance(), reached_goal(next_state, cfg), cfg)
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: DVec2, a: DVec2, b: DVec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.length_squared();
    if len_sq == 0.0 {
        return (p - a).length();
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    (p - (a + t * ab)).length()
}

/// Whether the robot disc swept straight ahead for `horizon` seconds touches
/// the (stationary) human.
pub fn swept_collision(
    robot_pos: DVec2,
    heading: f64,
    speed: f64,
    horizon: f64,
    human: &ObservableState,
    robot_radius: f64,
) -> bool {
    let end = robot_pos + speed * horizon * DVec2::from_angle(heading);
    point_segment_distance(human.position(), robot_pos, end) < robot_radius + human.radius
}

fn in_effective_range(state: &JointState, human: &ObservableState, cfg: &RewardConfig) -> bool {
    let d = (human.position() - state.robot.position()).length() - human.radius - state.robot.radius;
    d <= cfg.r_e
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticLookahead {
    pub reward: f64,
    pub n_col: usize,
    pub n_static: usize,
}

pub fn static_penalty(n_col: usize, n_static: usize, alpha: f64) -> f64 {
    if n_static == 0 {
        0.0
    } else {
        -alpha * n_col as f64 / n_static as f64
    }
}

/// Counts static humans in range and those the action would run into within
/// the static horizon. `static_flags[i]` marks human `i` as static.
pub fn lookahead_static(
    state: &JointState,
    action: Action,
    static_flags: &[bool],
    cfg: &RewardConfig,
) -> StaticLookahead {
    let heading = state.robot.theta + action.dtheta;
    let mut n_static = 0;
    let mut n_col = 0;
    for (h, _) in state
        .humans
        .iter()
        .zip(static_flags)
        .filter(|(_, &is_static)| is_static)
    {
        if !in_effective_range(state, h, cfg) {
            continue;
        }
        n_static += 1;
        if swept_collision(
            state.robot.position(),
            heading,
            action.v,
            cfg.static_horizon(),
            h,
            state.robot.radius,
        ) {
            n_col += 1;
        }
    }
    StaticLookahead {
        reward: static_penalty(n_col, n_static, cfg.alpha),
        n_col,
        n_static,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicLookahead {
    pub reward: f64,
    /// Smallest predicted clearance, absent when no dynamic human is in range.
    pub min_clearance: Option<f64>,
}

pub fn dynamic_penalty(d: f64, cfg: &RewardConfig) -> f64 {
    let raw = cfg.beta * (d - cfg.d_disc);
    if cfg.clamp_dynamic {
        raw.min(0.0)
    } else {
        raw
    }
}

/// Smallest clearance between the robot following `action` and the dynamic
/// humans in range moving at constant velocity, sampled every
/// `lookahead_substep` over the dynamic horizon.
pub fn lookahead_dynamic(
    state: &JointState,
    action: Action,
    static_flags: &[bool],
    cfg: &RewardConfig,
) -> DynamicLookahead {
    let robot = &state.robot;
    let p0 = robot.position();
    let vel = action.v * DVec2::from_angle(robot.theta + action.dtheta);
    let horizon = cfg.dynamic_horizon();
    let n_samples = ((horizon / cfg.lookahead_substep) - 1e-9).ceil().max(1.0) as usize;

    let mut min_clearance: Option<f64> = None;
    for (h, _) in state
        .humans
        .iter()
        .zip(static_flags)
        .filter(|(_, &is_static)| !is_static)
    {
        if !in_effective_range(state, h, cfg) {
            continue;
        }
        let radii = h.radius + robot.radius;
        let d = (1..=n_samples)
            .map(|k| {
                let tau = (k as f64 * cfg.lookahead_substep).min(horizon);
                let pr = p0 + vel * tau;
                let ph = h.position() + h.velocity() * tau;
                (pr - ph).length() - radii
            })
            .fold(f64::INFINITY, f64::min);
        min_clearance = Some(min_clearance.map_or(d, |m| m.min(d)));
    }
    DynamicLookahead {
        reward: min_clearance.map_or(0.0, |d| dynamic_penalty(d, cfg)),
        min_clearance,
    }
}

/// Time term at time `t` (seconds since episode start, after the transition).
pub fn time_reward(t: f64, at_goal: bool, cfg: &RewardConfig) -> f64 {
    if at_goal {
        -ARRIVAL_TIME_WEIGHT * t / cfg.t_limit
    } else if t >= cfg.t_limit {
        TIMEOUT_REWARD
    } else {
        0.0
    }
}

/// Full reward for the transition `state --action--> next_state` ending at
/// time `t`. Disabled terms are reported as zero so that `total` is always
/// the sum of the parts; the look-ahead counts are reported regardless.
pub fn total_reward(
    state: &JointState,
    next_state: &JointState,
    action: Action,
    static_flags: &[bool],
    t: f64,
    cfg: &RewardConfig,
    terms: RewardTerms,
) -> RewardBreakdown {
    let at_goal = reached_goal(next_state, cfg);
    let r_c = current_reward_value(next_state.min_clearance(), at_goal, cfg);
    let st = lookahead_static(state, action, static_flags, cfg);
    let dy = lookahead_dynamic(state, action, static_flags, cfg);
    let (r_st, r_dy) = if terms.lookahead {
        (st.reward, dy.reward)
    } else {
        (0.0, 0.0)
    };
    let r_t = if terms.time { time_reward(t, at_goal, cfg) } else { 0.0 };
    RewardBreakdown {
        r_c,
        r_st,
        r_dy,
        r_t,
        total: r_c + r_st + r_dy + r_t,
        n_col: st.n_col,
        n_static: st.n_static,
        d_lookahead_dyn: dy.min_clearance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FullAgentState;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    fn robot_at(x: f64, y: f64, theta: f64) -> FullAgentState {
        FullAgentState {
            px: x,
            py: y,
            vx: 0.0,
            vy: 0.0,
            radius: 0.3,
            gx: 0.0,
            gy: 4.0,
            v_pref: 1.0,
            theta,
        }
    }

    fn human(x: f64, y: f64, vx: f64, vy: f64) -> ObservableState {
        ObservableState {
            px: x,
            py: y,
            vx,
            vy,
            radius: 0.3,
        }
    }

    #[test]
    fn current_reward_branches() {
        let c = cfg();
        assert_eq!(current_reward_value(-0.05, false, &c), -0.25);
        assert_eq!(current_reward_value(-0.05, true, &c), -0.25);
        assert!((current_reward_value(0.1, false, &c) + 0.0125).abs() < 1e-12);
        assert_eq!(current_reward_value(0.5, true, &c), 1.0);
        assert_eq!(current_reward_value(0.5, false, &c), 0.0);
        assert!((current_reward_value(0.0, false, &c) + 0.025).abs() < 1e-15);
    }

    #[test]
    fn current_reward_on_states() {
        let c = cfg();
        let s = JointState {
            robot: robot_at(0.0, 3.6, 1.0),
            humans: vec![human(2.0, 0.0, 0.0, 0.0)],
        };
        let mut next = s.clone();
        next.robot.py = 3.8;
        assert_eq!(current_reward(&s, &next, &c), 1.0);
        next.humans[0] = human(0.55, 3.8, 0.0, 0.0);
        assert_eq!(current_reward(&s, &next, &c), -0.25);
    }

    #[test]
    fn swept_collision_cases() {
        let origin = DVec2::ZERO;
        assert!(swept_collision(origin, 0.0, 1.0, 1.0, &human(0.5, 0.0, 0.0, 0.0), 0.3));
        assert!(!swept_collision(origin, 0.0, 1.0, 1.0, &human(0.5, 2.0, 0.0, 0.0), 0.3));
        assert!(!swept_collision(
            origin,
            0.0,
            1.0,
            1.0,
            &human(-1.0, 0.0, 0.0, 0.0),
            0.3
        ));
    }

    #[test]
    fn static_penalty_values() {
        assert!((static_penalty(2, 4, 0.15) + 0.075).abs() < 1e-12);
        assert_eq!(static_penalty(0, 0, 0.15), 0.0);
        assert!((static_penalty(3, 3, 0.15) + 0.15).abs() < 1e-12);
    }

    #[test]
    fn static_lookahead_counts_in_range_humans() {
        // Robot at origin facing +x; four statics in range, two on the path.
        let s = JointState {
            robot: robot_at(0.0, 0.0, 0.0),
            humans: vec![
                human(0.9, 0.0, 0.0, 0.0),
                human(1.2, 0.2, 0.0, 0.0),
                human(0.0, 1.0, 0.0, 0.0),
                human(0.0, -1.1, 0.0, 0.0),
                human(5.0, 0.0, 0.0, 0.0),
                human(0.5, 0.0, 1.0, 0.0),
            ],
        };
        let flags = [true, true, true, true, true, false];
        let la = lookahead_static(&s, Action { v: 1.0, dtheta: 0.0 }, &flags, &cfg());
        assert_eq!((la.n_col, la.n_static), (2, 4));
        assert!((la.reward + 0.075).abs() < 1e-12);
        let none = lookahead_static(&s, Action::STOP, &[false; 6], &cfg());
        assert_eq!((none.n_static, none.reward), (0, 0.0));
    }

    #[test]
    fn dynamic_penalty_values() {
        let c = cfg();
        assert!((dynamic_penalty(0.1, &c) + 0.05).abs() < 1e-12);
        assert_eq!(dynamic_penalty(0.2, &c), 0.0);
        assert_eq!(dynamic_penalty(0.8, &c), 0.0);
        let unclamped = RewardConfig {
            clamp_dynamic: false,
            ..c
        };
        assert!((dynamic_penalty(0.8, &unclamped) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dynamic_lookahead_predicts_closing_human() {
        // Human 1.5 m ahead walking toward the robot at 0.5 m/s.
        let s = JointState {
            robot: robot_at(0.0, 0.0, 0.0),
            humans: vec![human(1.5, 0.0, -0.5, 0.0)],
        };
        let la = lookahead_dynamic(&s, Action::STOP, &[false], &cfg());
        let d = la.min_clearance.unwrap();
        // Clearance at t = 1 s: (1.5 - 0.5) - 0.6 = 0.4.
        assert!((d - 0.4).abs() < 1e-12);
        assert_eq!(la.reward, 0.0);
        // Robot at 1 m/s behind a human walking away at 0.2 m/s: clearance
        // 0.9 - 0.8 t, smallest at the horizon: 0.1.
        let ahead = JointState {
            robot: robot_at(0.0, 0.0, 0.0),
            humans: vec![human(1.5, 0.0, 0.2, 0.0)],
        };
        let la = lookahead_dynamic(&ahead, Action { v: 1.0, dtheta: 0.0 }, &[false], &cfg());
        assert!((la.min_clearance.unwrap() - 0.1).abs() < 1e-12);
        assert!((la.reward + 0.05).abs() < 1e-12);
        let far = JointState {
            robot: robot_at(0.0, 0.0, 0.0),
            humans: vec![human(3.0, 0.0, -1.0, 0.0)],
        };
        let la = lookahead_dynamic(&far, Action::STOP, &[false], &cfg());
        assert_eq!((la.reward, la.min_clearance), (0.0, None));
    }

    #[test]
    fn time_reward_branches() {
        let c = cfg();
        assert!((time_reward(12.5, true, &c) + 0.05).abs() < 1e-12);
        assert_eq!(time_reward(25.0, false, &c), -0.2);
        assert_eq!(time_reward(10.0, false, &c), 0.0);
        assert!((time_reward(25.0, true, &c) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn total_reward_compositions() {
        let c = cfg();
        // Collision step with one static in range on the path.
        let s = JointState {
            robot: robot_at(0.0, 0.0, 0.0),
            humans: vec![human(0.8, 0.0, 0.0, 0.0)],
        };
        let mut next = s.clone();
        next.robot.px = 0.25;
        let b = total_reward(
            &s,
            &next,
            Action { v: 1.0, dtheta: 0.0 },
            &[true],
            0.25,
            &c,
            Ablation::Full.terms(),
        );
        assert_eq!((b.n_col, b.n_static), (1, 1));
        assert!((b.total + 0.40).abs() < 1e-12, "{b:?}");
        let rc = total_reward(
            &s,
            &next,
            Action { v: 1.0, dtheta: 0.0 },
            &[true],
            0.25,
            &c,
            Ablation::RcOnly.terms(),
        );
        assert_eq!(rc.total, rc.r_c);
        assert_eq!(rc.n_col, 1);

        // Goal step at t = t_limit with nobody around.
        let s = JointState {
            robot: robot_at(0.0, 3.5, std::f64::consts::FRAC_PI_2),
            humans: vec![],
        };
        let mut next = s.clone();
        next.robot.py = 3.75;
        let b = total_reward(
            &s,
            &next,
            Action { v: 1.0, dtheta: 0.0 },
            &[],
            25.0,
            &c,
            Ablation::Full.terms(),
        );
        assert!((b.total - 0.9).abs() < 1e-12);
    }

    /// Static count by stepping the robot center along its path every 1 ms.
    fn dense_static_count(state: &JointState, action: Action, flags: &[bool], c: &RewardConfig) -> (usize, usize) {
        let heading = state.robot.theta + action.dtheta;
        let dir = DVec2::from_angle(heading);
        let steps = (c.dt_static / 1e-3).round() as usize;
        let mut n_static = 0;
        let mut n_col = 0;
        for (h, _) in state.humans.iter().zip(flags).filter(|(_, &f)| f) {
            let gap = (h.position() - state.robot.position()).length() - h.radius - state.robot.radius;
            if gap > c.r_e {
                continue;
            }
            n_static += 1;
            let hit = (0..=steps).any(|k| {
                let p = state.robot.position() + dir * action.v * (k as f64 * 1e-3);
                (h.position() - p).length() < h.radius + state.robot.radius
            });
            n_col += hit as usize;
        }
        (n_col, n_static)
    }

    proptest! {
        #[test]
        fn static_counts_match_dense_stepping(
            theta in -3.1..3.1f64,
            act in 0usize..11,
            hs in proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64, proptest::bool::ANY), 0..8),
        ) {
            let actions = crate::domain::build_action_space(1.0, 10, 10f64.to_radians());
            let s = JointState {
                robot: robot_at(0.0, 0.0, theta),
                humans: hs.iter().map(|&(x, y, _)| human(x, y, 0.0, 0.0)).collect(),
            };
            let flags: Vec<bool> = hs.iter().map(|h| h.2).collect();
            let c = cfg();
            let la = lookahead_static(&s, actions[act], &flags, &c);
            prop_assert_eq!((la.n_col, la.n_static), dense_static_count(&s, actions[act], &flags, &c));
            prop_assert!(la.reward <= 0.0 && la.reward >= -c.alpha);
        }

        #[test]
        fn moving_static_away_never_increases_penalty(
            y in 0.0..1.5f64, dy in 0.0..1.0f64, x in 0.2..1.4f64,
        ) {
            let c = cfg();
            let a = Action { v: 1.0, dtheta: 0.0 };
            let near = JointState { robot: robot_at(0.0, 0.0, 0.0), humans: vec![human(x, y, 0.0, 0.0)] };
            let far = JointState { robot: robot_at(0.0, 0.0, 0.0), humans: vec![human(x, y + dy, 0.0, 0.0)] };
            let pn = lookahead_static(&near, a, &[true], &c).reward;
            let pf = lookahead_static(&far, a, &[true], &c).reward;
            prop_assert!(pf.abs() <= pn.abs());
        }

        #[test]
        fn breakdown_sums_and_ranges(
            rx in -1.0..1.0f64, ry in -1.0..1.0f64, theta in -3.1..3.1f64, act in 0usize..11,
            hs in proptest::collection::vec((-2.5..2.5f64, -2.5..2.5f64, -1.0..1.0f64, -1.0..1.0f64, proptest::bool::ANY), 0..6),
            t in 0.0..30.0f64,
        ) {
            let c = cfg();
            let actions = crate::domain::build_action_space(1.0, 10, 10f64.to_radians());
            let s = JointState {
                robot: robot_at(rx, ry, theta),
                humans: hs.iter().map(|&(x, y, vx, vy, st)| if st { human(x, y, 0.0, 0.0) } else { human(x, y, vx, vy) }).collect(),
            };
            let flags: Vec<bool> = hs.iter().map(|h| h.4).collect();
            let next = JointState {
                robot: crate::kinematics::propagate_robot(&s.robot, actions[act], &Default::default()),
                humans: s.humans.clone(),
            };
            let b = total_reward(&s, &next, actions[act], &flags, t, &c, Ablation::Full.terms());
            prop_assert_eq!(b.total, b.r_c + b.r_st + b.r_dy + b.r_t);
            prop_assert!(b.r_st >= -c.alpha && b.r_st <= 0.0);
            prop_assert!(b.r_dy <= 0.0);
            prop_assert!(b.r_t >= -0.2 && b.r_t <= 0.0);
            prop_assert!(b.r_c == -0.25 || (b.r_c >= -0.025 && b.r_c < 0.0) || b.r_c == 0.0 || b.r_c == 1.0);
        }
    }
}
