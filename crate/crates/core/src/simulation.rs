//! Circle-crossing scenarios with optional static obstacles, and the episode
//! loop that ties robot policy, crowd policy, kinematics and reward together.

use std::f64::consts::TAU;
use std::str::FromStr;

use glam::DVec2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{wrap_angle, Action, FullAgentState, JointState, ObservableState};
use crate::error::{Error, Result};
use crate::kinematics::{propagate_human, propagate_robot, StepConfig};
use crate::orca::{crowd_step, orca_halfplanes_weighted, preferred_velocity, solve_velocity, Neighbor, OrcaConfig};
use crate::reward::{reached_goal, total_reward, RewardBreakdown, RewardConfig, RewardTerms};
use crate::rng::SimRng;

/// Rejection-sampling budget per agent.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvType {
    Separated,
    TwoBarriers,
    Concave,
    None,
}

impl EnvType {
    pub fn name(self) -> &'static str {
        match self {
            EnvType::Separated => "separated",
            EnvType::TwoBarriers => "two_barriers",
            EnvType::Concave => "concave",
            EnvType::None => "none",
        }
    }
}

impl FromStr for EnvType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separated" => Ok(EnvType::Separated),
            "two_barriers" => Ok(EnvType::TwoBarriers),
            "concave" => Ok(EnvType::Concave),
            "none" => Ok(EnvType::None),
            other => Err(Error::Config(format!(
                "unknown env type {other:?} (expected separated, two_barriers, concave or none)"
            ))),
        }
    }
}

/// Static-human positions for one environment, used in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticLayout {
    pub points: Vec<[f64; 2]>,
    /// Radius of the uniform disc each point is jittered in.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layouts {
    pub separated: StaticLayout,
    pub two_barriers: StaticLayout,
    pub concave: StaticLayout,
}

fn polar(r: f64, deg: f64) -> [f64; 2] {
    let a = deg.to_radians();
    [r * a.cos(), r * a.sin()]
}

impl Default for Layouts {
    fn default() -> Self {
        Self {
            separated: StaticLayout {
                points: [90.0, 162.0, 234.0, 306.0, 18.0]
                    .iter()
                    .map(|&d| polar(2.0, d))
                    .collect(),
                jitter: 0.2,
            },
            two_barriers: StaticLayout {
                points: vec![[-0.35, -1.0], [0.35, -1.0], [-0.7, 1.0], [0.0, 1.0], [0.7, 1.0]],
                jitter: 0.0,
            },
            concave: StaticLayout {
                points: [90.0, 45.0, 135.0, 0.0, 180.0].iter().map(|&d| polar(1.2, d)).collect(),
                jitter: 0.0,
            },
        }
    }
}

impl Layouts {
    pub fn get(&self, env: EnvType) -> Option<&StaticLayout> {
        match env {
            EnvType::Separated => Some(&self.separated),
            EnvType::TwoBarriers => Some(&self.two_barriers),
            EnvType::Concave => Some(&self.concave),
            EnvType::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub env_type: EnvType,
    pub circle_radius: f64,
    pub n_dynamic: usize,
    /// Taken from the front of the environment's layout; ignored for `none`.
    pub n_static: usize,
    pub robot_start: [f64; 2],
    pub robot_goal: [f64; 2],
    /// Radius of the uniform disc the robot start and goal are jittered in.
    pub perturbation: f64,
    /// Half-width of the uniform box noise on each walking human's start;
    /// its goal is the exact opposite point.
    pub human_noise: f64,
    pub agent_radius: f64,
    pub v_pref: f64,
    /// Extra clearance required between initial positions and goals.
    pub spawn_margin: f64,
    pub layouts: Layouts,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            env_type: EnvType::Separated,
            circle_radius: 4.0,
            n_dynamic: 5,
            n_static: 5,
            robot_start: [0.0, -4.0],
            robot_goal: [0.0, 4.0],
            perturbation: 0.5,
            human_noise: 0.5,
            agent_radius: 0.3,
            v_pref: 1.0,
            spawn_margin: 0.2,
            layouts: Layouts::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scenario.circle_radius", self.circle_radius),
            ("scenario.agent_radius", self.agent_radius),
            ("scenario.v_pref", self.v_pref),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("scenario.perturbation", self.perturbation),
            ("scenario.human_noise", self.human_noise),
            ("scenario.spawn_margin", self.spawn_margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let Some(layout) = self.layouts.get(self.env_type) {
            if self.n_static > layout.points.len() {
                return Err(Error::Config(format!(
                    "scenario.n_static = {} but the {} layout has {} points",
                    self.n_static,
                    self.env_type.name(),
                    layout.points.len()
                )));
            }
        }
        Ok(())
    }

    pub fn static_count(&self) -> usize {
        if self.env_type == EnvType::None {
            0
        } else {
            self.n_static
        }
    }
}

/// Initial world: static humans come first in `humans`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub robot: FullAgentState,
    pub humans: Vec<FullAgentState>,
    pub static_flags: Vec<bool>,
}

impl Scenario {
    pub fn joint_state(&self) -> JointState {
        JointState {
            robot: self.robot,
            humans: self.humans.iter().map(FullAgentState::observable).collect(),
        }
    }
}

fn in_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> DVec2 {
    if radius <= 0.0 {
        return DVec2::ZERO;
    }
    let r = radius * rng.gen::<f64>().sqrt();
    let a = rng.gen_range(0.0..TAU);
    DVec2::new(r * a.cos(), r * a.sin())
}

fn standing(p: DVec2, radius: f64) -> FullAgentState {
    FullAgentState {
        px: p.x,
        py: p.y,
        vx: 0.0,
        vy: 0.0,
        radius,
        gx: p.x,
        gy: p.y,
        v_pref: 0.0,
        theta: 0.0,
    }
}

/// Draws one episode's initial state.
pub fn generate_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    cfg.validate()?;
    let r = cfg.agent_radius;
    let min_gap = 2.0 * r + cfg.spawn_margin;

    let start = DVec2::from(cfg.robot_start) + in_disc(rng, cfg.perturbation);
    let goal = DVec2::from(cfg.robot_goal) + in_disc(rng, cfg.perturbation);
    let to_goal = goal - start;
    let robot = FullAgentState {
        px: start.x,
        py: start.y,
        vx: 0.0,
        vy: 0.0,
        radius: r,
        gx: goal.x,
        gy: goal.y,
        v_pref: cfg.v_pref,
        theta: to_goal.y.atan2(to_goal.x),
    };

    let mut humans = Vec::with_capacity(cfg.static_count() + cfg.n_dynamic);
    let mut occupied = vec![start, goal];
    if let Some(layout) = cfg.layouts.get(cfg.env_type) {
        for p in layout.points.iter().take(cfg.static_count()) {
            let p = DVec2::from(*p) + in_disc(rng, layout.jitter);
            occupied.push(p);
            humans.push(standing(p, r));
        }
    }
    let n_static = humans.len();

    for i in 0..cfg.n_dynamic {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let a = rng.gen_range(0.0..TAU);
            let mut noise = DVec2::ZERO;
            if cfg.human_noise > 0.0 {
                noise.x = rng.gen_range(-cfg.human_noise..=cfg.human_noise);
                noise.y = rng.gen_range(-cfg.human_noise..=cfg.human_noise);
            }
            let p = cfg.circle_radius * DVec2::new(a.cos(), a.sin()) + noise;
            let g = -p;
            if occupied
                .iter()
                .all(|&q| (q - p).length() >= min_gap && (q - g).length() >= min_gap)
            {
                occupied.push(p);
                occupied.push(g);
                let heading = g - p;
                humans.push(FullAgentState {
                    px: p.x,
                    py: p.y,
                    vx: 0.0,
                    vy: 0.0,
                    radius: r,
                    gx: g.x,
                    gy: g.y,
                    v_pref: cfg.v_pref,
                    theta: heading.y.atan2(heading.x),
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleScenario(format!(
                "could not place walking human {i} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )));
        }
    }
    let mut static_flags = vec![true; n_static];
    static_flags.resize(humans.len(), false);
    Ok(Scenario {
        robot,
        humans,
        static_flags,
    })
}

/// Everything the episode loop needs besides the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub reward: RewardConfig,
    pub terms: RewardTerms,
    pub step: StepConfig,
    pub orca: OrcaConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            reward: RewardConfig::default(),
            terms: RewardTerms {
                lookahead: true,
                time: true,
            },
            step: StepConfig::default(),
            orca: OrcaConfig::default(),
        }
    }
}

/// What a robot policy sees at one decision step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: &'a JointState,
    pub static_flags: &'a [bool],
    /// Time at the start of the step.
    pub t: f64,
}

pub trait Policy: Sync {
    fn act(&self, obs: &Observation<'_>, rng: &mut SimRng) -> Action;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

/// World after one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub robot: FullAgentState,
    pub humans: Vec<ObservableState>,
    pub action: Action,
    pub reward: RewardBreakdown,
    /// Closest robot-human surface distance after the transition.
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    pub seed: u64,
    pub config_hash: String,
    pub env_type: EnvType,
    pub dt: f64,
    pub d_disc: f64,
    pub t_limit: f64,
    pub initial: JointState,
    pub static_flags: Vec<bool>,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    /// Time of arrival, successful episodes only.
    pub nav_time: Option<f64>,
    pub discomfort_steps: usize,
}

impl EpisodeRecord {
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.total).sum()
    }
}

/// Steps before the last one whose clearance is below `d_disc`.
pub fn count_discomfort(steps: &[StepRecord], d_disc: f64) -> usize {
    let n = steps.len().saturating_sub(1);
    steps[..n].iter().filter(|s| s.clearance < d_disc).count()
}

fn orca_neighbors(state: &JointState, static_flags: &[bool]) -> Vec<Neighbor> {
    state
        .humans
        .iter()
        .zip(static_flags)
        .map(|(h, &st)| Neighbor {
            state: *h,
            share: if st { 1.0 } else { 0.5 },
        })
        .collect()
}

/// Action whose resulting velocity is closest to `v`; lowest index wins ties.
pub fn nearest_action(robot: &FullAgentState, actions: &[Action], v: DVec2) -> Action {
    let mut best = actions[0];
    let mut best_d = f64::INFINITY;
    for a in actions {
        let w = a.v * DVec2::from_angle(robot.theta + a.dtheta);
        let d = (w - v).length_squared();
        if d < best_d {
            best_d = d;
            best = *a;
        }
    }
    best
}

/// Scripted robot: ORCA velocity projected to the nearest discrete action.
#[derive(Debug, Clone)]
pub struct OrcaPolicy {
    pub actions: Vec<Action>,
    pub orca: OrcaConfig,
}

impl Policy for OrcaPolicy {
    fn act(&self, obs: &Observation<'_>, _rng: &mut SimRng) -> Action {
        let robot = &obs.state.robot;
        let neighbors = orca_neighbors(obs.state, obs.static_flags);
        let planes = orca_halfplanes_weighted(robot, &neighbors, &self.orca);
        let v = solve_velocity(&planes, preferred_velocity(robot, self.orca.dt), robot.v_pref);
        nearest_action(robot, &self.actions, v)
    }
}

/// Scripted robot that ignores everybody and turns toward its goal.
#[derive(Debug, Clone)]
pub struct StraightPolicy {
    pub actions: Vec<Action>,
}

impl Policy for StraightPolicy {
    fn act(&self, obs: &Observation<'_>, _rng: &mut SimRng) -> Action {
        let r = &obs.state.robot;
        let to_goal = r.goal() - r.position();
        let want = to_goal.y.atan2(to_goal.x);
        let mut best = self.actions[0];
        let mut best_err = f64::INFINITY;
        for a in self.actions.iter().filter(|a| !a.is_stop()) {
            let err = wrap_angle(want - r.theta - a.dtheta).abs();
            if err < best_err {
                best_err = err;
                best = *a;
            }
        }
        best
    }
}

/// Always stops.
#[derive(Debug, Clone, Copy)]
pub struct FrozenPolicy;

impl Policy for FrozenPolicy {
    fn act(&self, _obs: &Observation<'_>, _rng: &mut SimRng) -> Action {
        Action::STOP
    }
}

/// Rolls one episode to its terminal condition.
pub fn run_episode(
    policy: &dyn Policy,
    scenario: &Scenario,
    cfg: &SimConfig,
    rng: &mut SimRng,
) -> Result<EpisodeRecord> {
    let t_limit = cfg.reward.t_limit;
    let mut robot = scenario.robot;
    let mut humans = scenario.humans.clone();
    let mut state = scenario.joint_state();
    let initial = state.clone();
    let mut steps = Vec::new();
    let mut k: u64 = 0;
    let outcome = loop {
        let t = k as f64 * cfg.step.dt;
        let action = policy.act(
            &Observation {
                state: &state,
                static_flags: &scenario.static_flags,
                t,
            },
            rng,
        );
        let velocities = crowd_step(&humans, Some(&robot), &cfg.orca);
        let next_robot = propagate_robot(&robot, action, &cfg.step);
        for (h, v) in humans.iter_mut().zip(velocities) {
            *h = propagate_human(h, v, &cfg.step)?;
        }
        robot = next_robot;
        let next = JointState {
            robot,
            humans: humans.iter().map(FullAgentState::observable).collect(),
        };
        k += 1;
        let t_next = k as f64 * cfg.step.dt;
        let reward = total_reward(
            &state,
            &next,
            action,
            &scenario.static_flags,
            t_next,
            &cfg.reward,
            cfg.terms,
        );
        let clearance = next.min_clearance();
        steps.push(StepRecord {
            t: t_next,
            robot,
            humans: next.humans.clone(),
            action,
            reward,
            clearance,
        });
        state = next;
        if clearance < 0.0 {
            break Outcome::Collision;
        }
        if reached_goal(&state, &cfg.reward) {
            break Outcome::Success;
        }
        if t_next >= t_limit {
            break Outcome::Timeout;
        }
    };
    let nav_time = (outcome == Outcome::Success).then(|| steps.last().map_or(0.0, |s| s.t));
    let discomfort_steps = count_discomfort(&steps, cfg.reward.d_disc);
    Ok(EpisodeRecord {
        index: 0,
        seed: 0,
        config_hash: String::new(),
        env_type: cfg.scenario.env_type,
        dt: cfg.step.dt,
        d_disc: cfg.reward.d_disc,
        t_limit,
        initial,
        static_flags: scenario.static_flags.clone(),
        steps,
        outcome,
        nav_time,
        discomfort_steps,
    })
}
