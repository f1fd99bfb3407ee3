//! Optimal reciprocal collision avoidance for the simulated crowd.
//!
//! Each agent turns every nearby neighbour into a half-plane of permitted
//! velocities (the truncated velocity-obstacle cone, shifted by its share of
//! the avoidance effort) and then solves a small 2D linear program for the
//! permitted velocity closest to its preferred one. When the half-planes have
//! no common point inside the speed disc, a second program finds the
//! velocity whose largest constraint violation is smallest.

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::domain::{FullAgentState, ObservableState};

const LP_EPSILON: f64 = 1e-9;
/// Rotation applied to a relative velocity lying exactly on the cone axis.
const AXIS_TIE_BREAK: f64 = 1e-3;

fn det(a: DVec2, b: DVec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Permitted region `{v : (v - point) . normal >= 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub point: DVec2,
    /// Unit normal pointing into the permitted side.
    pub normal: DVec2,
}

impl HalfPlane {
    pub fn new(point: DVec2, normal: DVec2) -> Self {
        Self {
            point,
            normal: normal.normalize(),
        }
    }

    /// Boundary direction with the permitted side on its left.
    fn direction(&self) -> DVec2 {
        DVec2::new(self.normal.y, -self.normal.x)
    }

    /// Signed distance by which `v` violates the constraint (<= 0 when
    /// satisfied).
    pub fn violation(&self, v: DVec2) -> f64 {
        -(v - self.point).dot(self.normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrcaConfig {
    /// Time horizon for agent-agent avoidance (s).
    pub tau: f64,
    /// Step used to resolve an existing overlap (s).
    pub dt: f64,
    pub neighbor_dist: f64,
    pub max_neighbors: usize,
    /// Whether humans see the robot and include it as a neighbour.
    pub robot_visible: bool,
    /// Padding added to every radius inside the velocity obstacle (m).
    pub radius_margin: f64,
}

impl Default for OrcaConfig {
    fn default() -> Self {
        Self {
            tau: 5.0,
            dt: 0.25,
            neighbor_dist: 10.0,
            max_neighbors: 10,
            robot_visible: true,
            radius_margin: 0.01,
        }
    }
}

/// Smallest change of the relative velocity that takes it to the boundary of
/// the velocity obstacle, and the outward boundary normal there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoProjection {
    pub u: DVec2,
    pub normal: DVec2,
}

/// `rel_pos` is neighbour minus self, `rel_vel` is self minus neighbour.
pub fn vo_projection(rel_pos: DVec2, rel_vel: DVec2, combined_radius: f64, tau: f64, dt: f64) -> VoProjection {
    // Exactly head-on: nudge counter-clockwise so both agents pass on their
    // left. Applied to both sides of a pair, the nudge keeps the
    // adjustments antisymmetric.
    let rel_vel = if rel_vel != DVec2::ZERO && det(rel_pos, rel_vel) == 0.0 {
        DVec2::from_angle(AXIS_TIE_BREAK).rotate(rel_vel)
    } else {
        rel_vel
    };
    let dist_sq = rel_pos.length_squared();
    let r = combined_radius;
    let r_sq = r * r;

    if dist_sq > r_sq {
        let w = rel_vel - rel_pos / tau;
        let w_len_sq = w.length_squared();
        let dot = w.dot(rel_pos);
        if dot < 0.0 && dot * dot > r_sq * w_len_sq {
            // Closest boundary point is on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            VoProjection {
                u: (r / tau - w_len) * unit_w,
                normal: unit_w,
            }
        } else {
            // Closest boundary point is on one of the legs. On the cone axis
            // the left leg wins.
            let leg = (dist_sq - r_sq).sqrt();
            let dir = if det(rel_pos, w) >= 0.0 {
                DVec2::new(rel_pos.x * leg - rel_pos.y * r, rel_pos.x * r + rel_pos.y * leg) / dist_sq
            } else {
                -DVec2::new(rel_pos.x * leg + rel_pos.y * r, -rel_pos.x * r + rel_pos.y * leg) / dist_sq
            };
            VoProjection {
                u: rel_vel.dot(dir) * dir - rel_vel,
                normal: DVec2::new(-dir.y, dir.x),
            }
        }
    } else {
        // Already overlapping: separate within one step.
        let w = rel_vel - rel_pos / dt;
        let w_len = w.length();
        let unit_w = if w_len > 1e-12 {
            w / w_len
        } else {
            (-rel_pos).try_normalize().unwrap_or(DVec2::NEG_X)
        };
        VoProjection {
            u: (r / dt - w_len) * unit_w,
            normal: unit_w,
        }
    }
}

/// A neighbour together with the share of the avoidance this agent takes on
/// (0.5 for a reciprocating agent, 1.0 for one that never yields).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub state: ObservableState,
    pub share: f64,
}

/// Half-planes for reciprocal neighbours: every neighbour takes half the
/// avoidance.
pub fn orca_halfplanes(agent: &FullAgentState, neighbors: &[ObservableState], cfg: &OrcaConfig) -> Vec<HalfPlane> {
    let weighted: Vec<Neighbor> = neighbors.iter().map(|&state| Neighbor { state, share: 0.5 }).collect();
    orca_halfplanes_weighted(agent, &weighted, cfg)
}

/// One half-plane per neighbour among the nearest `max_neighbors` within
/// `neighbor_dist`, ordered by distance.
pub fn orca_halfplanes_weighted(agent: &FullAgentState, neighbors: &[Neighbor], cfg: &OrcaConfig) -> Vec<HalfPlane> {
    let p = agent.position();
    let mut near: Vec<(f64, usize)> = neighbors
        .iter()
        .enumerate()
        .map(|(i, n)| ((n.state.position() - p).length_squared(), i))
        .filter(|(d2, _)| *d2 < cfg.neighbor_dist * cfg.neighbor_dist)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.truncate(cfg.max_neighbors);

    near.into_iter()
        .map(|(_, i)| {
            let n = &neighbors[i];
            let proj = vo_projection(
                n.state.position() - p,
                agent.velocity() - n.state.velocity(),
                agent.radius + n.state.radius + 2.0 * cfg.radius_margin,
                cfg.tau,
                cfg.dt,
            );
            HalfPlane {
                point: agent.velocity() + n.share * proj.u,
                normal: proj.normal,
            }
        })
        .collect()
}

/// Optimal point on the boundary line of `lines[line_no]`, subject to the
/// earlier lines and the speed disc.
fn lp_on_line(lines: &[HalfPlane], line_no: usize, radius: f64, opt: DVec2, direction_opt: bool) -> Option<DVec2> {
    let line = &lines[line_no];
    let (lp, ld) = (line.point, line.direction());
    let dot = lp.dot(ld);
    let disc = dot * dot + radius * radius - lp.length_squared();
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let mut t_left = -dot - s;
    let mut t_right = -dot + s;

    for other in &lines[..line_no] {
        let od = other.direction();
        let denom = det(ld, od);
        let numer = det(od, lp - other.point);
        if denom.abs() <= LP_EPSILON {
            if numer < 0.0 {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if opt.dot(ld) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        ld.dot(opt - lp).clamp(t_left, t_right)
    };
    Some(lp + t * ld)
}

/// Incremental 2D program. On failure returns the index of the line that
/// could not be satisfied and the best point found before it.
fn lp_2d(lines: &[HalfPlane], radius: f64, opt: DVec2, direction_opt: bool) -> Result<DVec2, (usize, DVec2)> {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.length_squared() > radius * radius {
        opt.normalize() * radius
    } else {
        opt
    };
    for i in 0..lines.len() {
        if det(lines[i].direction(), lines[i].point - result) > 0.0 {
            match lp_on_line(lines, i, radius, opt, direction_opt) {
                Some(r) => result = r,
                None => return Err((i, result)),
            }
        }
    }
    Ok(result)
}

/// Minimises the largest violation over `lines[begin..]`, starting from a
/// point that satisfies `lines[..begin]`.
fn lp_min_violation(lines: &[HalfPlane], begin: usize, radius: f64, mut result: DVec2) -> DVec2 {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        let li = &lines[i];
        let di = li.direction();
        if det(di, li.point - result) <= distance {
            continue;
        }
        let mut projected = Vec::with_capacity(i);
        for lj in &lines[..i] {
            let dj = lj.direction();
            let determinant = det(di, dj);
            let point = if determinant.abs() <= LP_EPSILON {
                if di.dot(dj) > 0.0 {
                    continue;
                }
                0.5 * (li.point + lj.point)
            } else {
                li.point + (det(dj, li.point - lj.point) / determinant) * di
            };
            let dir = (dj - di).normalize();
            projected.push(HalfPlane {
                point,
                normal: DVec2::new(-dir.y, dir.x),
            });
        }
        if let Ok(r) = lp_2d(&projected, radius, li.normal, true) {
            result = r;
        }
        distance = det(di, li.point - result);
    }
    result
}

/// Velocity inside every half-plane and the speed disc that is closest to
/// `pref_vel`, or the least-violating velocity when none exists.
pub fn solve_velocity(halfplanes: &[HalfPlane], pref_vel: DVec2, max_speed: f64) -> DVec2 {
    if max_speed <= 0.0 {
        return DVec2::ZERO;
    }
    let v = match lp_2d(halfplanes, max_speed, pref_vel, false) {
        Ok(v) => v,
        Err((failed, partial)) => lp_min_violation(halfplanes, failed, max_speed, partial),
    };
    let len = v.length();
    if len > max_speed {
        v * (max_speed / len)
    } else {
        v
    }
}

/// Heads for the goal at `v_pref`, slowing to land on it exactly.
pub fn preferred_velocity(agent: &FullAgentState, dt: f64) -> DVec2 {
    let to_goal = agent.goal() - agent.position();
    let dist = to_goal.length();
    if dist < 1e-9 || agent.v_pref <= 0.0 {
        return DVec2::ZERO;
    }
    to_goal / dist * agent.v_pref.min(dist / dt)
}

/// New velocities for every human, all computed from the same snapshot.
/// Humans with `v_pref == 0` are static and always get zero. The robot, when
/// given and visible, is a reciprocating neighbour.
pub fn crowd_step(humans: &[FullAgentState], robot: Option<&FullAgentState>, cfg: &OrcaConfig) -> Vec<DVec2> {
    let robot = robot.filter(|_| cfg.robot_visible);
    let mut neighbors: Vec<Neighbor> = Vec::with_capacity(humans.len());
    humans
        .iter()
        .enumerate()
        .map(|(i, h)| {
            if h.v_pref <= 0.0 {
                return DVec2::ZERO;
            }
            neighbors.clear();
            neighbors.extend(
                humans
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, o)| Neighbor {
                        state: o.observable(),
                        share: if o.v_pref <= 0.0 { 1.0 } else { 0.5 },
                    }),
            );
            if let Some(r) = robot {
                neighbors.push(Neighbor {
                    state: r.observable(),
                    share: 0.5,
                });
            }
            let planes = orca_halfplanes_weighted(h, &neighbors, cfg);
            solve_velocity(&planes, preferred_velocity(h, cfg.dt), h.v_pref)
        })
        .collect()
}
