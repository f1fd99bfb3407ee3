//! State and action types, the robot-centric transform and the discrete
//! unicycle action space.

use glam::DVec2;
use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`. Values already in range are returned
/// unchanged bit-for-bit.
pub fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    while a > PI {
        a -= TAU;
    }
    while a <= -PI {
        a += TAU;
    }
    a
}

/// Full state of an agent: the observable part (position, velocity, radius)
/// plus the hidden part (goal, preferred speed, heading).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullAgentState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
    pub gx: f64,
    pub gy: f64,
    pub v_pref: f64,
    pub theta: f64,
}

impl FullAgentState {
    pub fn position(&self) -> DVec2 {
        DVec2::new(self.px, self.py)
    }

    pub fn velocity(&self) -> DVec2 {
        DVec2::new(self.vx, self.vy)
    }

    pub fn goal(&self) -> DVec2 {
        DVec2::new(self.gx, self.gy)
    }

    pub fn distance_to_goal(&self) -> f64 {
        (self.goal() - self.position()).length()
    }

    pub fn observable(&self) -> ObservableState {
        ObservableState {
            px: self.px,
            py: self.py,
            vx: self.vx,
            vy: self.vy,
            radius: self.radius,
        }
    }
}

/// What the robot can see of another agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
}

impl ObservableState {
    pub fn position(&self) -> DVec2 {
        DVec2::new(self.px, self.py)
    }

    pub fn velocity(&self) -> DVec2 {
        DVec2::new(self.vx, self.vy)
    }
}

/// Robot full state plus the observable states of all humans. The index of a
/// human is its identity for the whole episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub robot: FullAgentState,
    pub humans: Vec<ObservableState>,
}

impl JointState {
    /// Smallest surface-to-surface distance between the robot and any human,
    /// negative on overlap. `+inf` with no humans.
    pub fn min_clearance(&self) -> f64 {
        let p = self.robot.position();
        self.humans
            .iter()
            .map(|h| (h.position() - p).length() - h.radius - self.robot.radius)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Unicycle command: forward speed and heading change over one decision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub dtheta: f64,
}

impl Action {
    pub const STOP: Action = Action { v: 0.0, dtheta: 0.0 };

    pub fn is_stop(&self) -> bool {
        self.v == 0.0
    }
}

/// Robot part of the robot-centric state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotFeatures {
    /// Distance to goal.
    pub d_goal: f64,
    pub v_pref: f64,
    /// Goal direction measured from the robot heading, in `(-pi, pi]`.
    pub theta: f64,
    pub radius: f64,
}

impl RobotFeatures {
    pub const DIM: usize = 4;

    pub fn to_array(&self) -> [f64; Self::DIM] {
        [self.d_goal, self.v_pref, self.theta, self.radius]
    }
}

/// One human expressed in the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanFeatures {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub radius: f64,
    /// Robot-to-human center distance.
    pub distance: f64,
    /// Human radius plus robot radius.
    pub radius_sum: f64,
}

impl HumanFeatures {
    pub const DIM: usize = 7;

    pub fn to_array(&self) -> [f64; Self::DIM] {
        [
            self.px,
            self.py,
            self.vx,
            self.vy,
            self.radius,
            self.distance,
            self.radius_sum,
        ]
    }
}

/// Joint state in the robot-centric frame: origin at the robot, x-axis along
/// its heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedState {
    pub robot: RobotFeatures,
    pub humans: Vec<HumanFeatures>,
}

/// Rotation into the frame whose x-axis points along `heading`.
#[derive(Debug, Clone, Copy)]
pub struct RobotFrame {
    origin: DVec2,
    cos: f64,
    sin: f64,
}

impl RobotFrame {
    pub fn new(origin: DVec2, heading: f64) -> Self {
        let (sin, cos) = heading.sin_cos();
        Self { origin, cos, sin }
    }

    pub fn rotate(&self, v: DVec2) -> DVec2 {
        DVec2::new(v.x * self.cos + v.y * self.sin, -v.x * self.sin + v.y * self.cos)
    }

    pub fn point(&self, p: DVec2) -> DVec2 {
        self.rotate(p - self.origin)
    }
}

pub fn rotate_to_robot_frame(state: &JointState) -> RotatedState {
    let r = &state.robot;
    let p = r.position();
    let to_goal = r.goal() - p;
    let goal_dir = to_goal.y.atan2(to_goal.x);
    let frame = RobotFrame::new(p, r.theta);
    let robot = RobotFeatures {
        d_goal: to_goal.length(),
        v_pref: r.v_pref,
        theta: wrap_angle(goal_dir - r.theta),
        radius: r.radius,
    };
    let humans = state
        .humans
        .iter()
        .map(|h| {
            let rel = frame.point(h.position());
            let vel = frame.rotate(h.velocity());
            HumanFeatures {
                px: rel.x,
                py: rel.y,
                vx: vel.x,
                vy: vel.y,
                radius: h.radius,
                distance: (h.position() - p).length(),
                radius_sum: h.radius + r.radius,
            }
        })
        .collect();
    RotatedState { robot, humans }
}

/// One stop action followed by `n_headings` moving actions at `v_pref`, with
/// heading changes evenly spaced over `[-dtheta_max, dtheta_max]` in
/// ascending order.
pub fn build_action_space(v_pref: f64, n_headings: usize, dtheta_max: f64) -> Vec<Action> {
    assert!(n_headings >= 1, "need at least one heading");
    assert!(dtheta_max > 0.0, "dtheta_max must be positive");
    let mut actions = Vec::with_capacity(n_headings + 1);
    actions.push(Action::STOP);
    if n_headings == 1 {
        actions.push(Action { v: v_pref, dtheta: 0.0 });
        return actions;
    }
    let span = 2.0 * dtheta_max;
    let last = (n_headings - 1) as f64;
    for k in 0..n_headings {
        let dtheta = -dtheta_max + span * k as f64 / last;
        actions.push(Action { v: v_pref, dtheta });
    }
    actions
}
