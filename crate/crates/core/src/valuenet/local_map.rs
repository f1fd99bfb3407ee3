//! Coarse occupancy/velocity grids describing each human's neighbourhood.

use serde::{Deserialize, Serialize};

use crate::domain::RotatedState;

/// Channels per cell: occupancy count, mean vx, mean vy.
pub const MAP_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalMapConfig {
    pub grid_side: usize,
    pub cell_size: f64,
}

impl Default for LocalMapConfig {
    fn default() -> Self {
        Self {
            grid_side: 4,
            cell_size: 1.0,
        }
    }
}

impl LocalMapConfig {
    pub fn len(&self) -> usize {
        self.grid_side * self.grid_side * MAP_CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell `(ix, iy)` holding a neighbour at `local` (human frame), if any.
    pub fn cell_of(&self, local_x: f64, local_y: f64) -> Option<(usize, usize)> {
        let half = self.grid_side as f64 / 2.0;
        let fx = (local_x / self.cell_size + half).floor();
        let fy = (local_y / self.cell_size + half).floor();
        let side = self.grid_side as f64;
        if fx < 0.0 || fy < 0.0 || fx >= side || fy >= side {
            return None;
        }
        Some((fx as usize, fy as usize))
    }
}

/// One flattened grid per human, centred on that human with its x-axis along
/// the human's walking direction (the robot frame's x-axis when standing).
/// Cell `(ix, iy)` channel `c` lives at `(iy * grid_side + ix) * 3 + c`.
/// Velocities are robot-frame velocities of the other humans.
pub fn build_local_maps(state: &RotatedState, cfg: &LocalMapConfig) -> Vec<Vec<f64>> {
    let humans = &state.humans;
    humans
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut grid = vec![0.0; cfg.len()];
            let speed = h.vx.hypot(h.vy);
            let (ux, uy) = if speed > 1e-9 {
                (h.vx / speed, h.vy / speed)
            } else {
                (1.0, 0.0)
            };
            for (j, o) in humans.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dx = o.px - h.px;
                let dy = o.py - h.py;
                let lx = dx * ux + dy * uy;
                let ly = -dx * uy + dy * ux;
                if let Some((ix, iy)) = cfg.cell_of(lx, ly) {
                    let k = (iy * cfg.grid_side + ix) * MAP_CHANNELS;
                    grid[k] += 1.0;
                    grid[k + 1] += o.vx;
                    grid[k + 2] += o.vy;
                }
            }
            for cell in grid.chunks_exact_mut(MAP_CHANNELS) {
                if cell[0] > 0.0 {
                    cell[1] /= cell[0];
                    cell[2] /= cell[0];
                }
            }
            grid
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{HumanFeatures, RobotFeatures};

    fn h(px: f64, py: f64, vx: f64, vy: f64) -> HumanFeatures {
        HumanFeatures {
            px,
            py,
            vx,
            vy,
            radius: 0.3,
            distance: px.hypot(py),
            radius_sum: 0.6,
        }
    }

    fn state(humans: Vec<HumanFeatures>) -> RotatedState {
        RotatedState {
            robot: RobotFeatures {
                d_goal: 1.0,
                v_pref: 1.0,
                theta: 0.0,
                radius: 0.3,
            },
            humans,
        }
    }

    #[test]
    fn lone_human_has_empty_map() {
        let maps = build_local_maps(&state(vec![h(1.0, 1.0, 0.5, 0.0)]), &LocalMapConfig::default());
        assert_eq!(maps.len(), 1);
        assert!(maps[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn half_cell_offset_lands_in_diagonal_cell() {
        let cfg = LocalMapConfig::default();
        let s = state(vec![h(2.0, 1.0, 0.0, 0.0), h(2.5, 1.5, 0.0, 0.0)]);
        let maps = build_local_maps(&s, &cfg);
        let (ix, iy) = (2, 2);
        let k = (iy * cfg.grid_side + ix) * MAP_CHANNELS;
        assert_eq!(maps[0][k], 1.0);
        assert_eq!(maps[0].iter().sum::<f64>(), 1.0);
        // and the reverse offset lands in the opposite diagonal cell
        let k = (cfg.grid_side + 1) * MAP_CHANNELS;
        assert_eq!(maps[1][k], 1.0);
    }

    #[test]
    fn coincident_neighbours_are_averaged() {
        let cfg = LocalMapConfig::default();
        let s = state(vec![
            h(0.0, 0.0, 0.0, 0.0),
            h(0.2, 0.3, 1.0, 0.0),
            h(0.2, 0.3, 0.0, 1.0),
        ]);
        let maps = build_local_maps(&s, &cfg);
        let k = (2 * cfg.grid_side + 2) * MAP_CHANNELS;
        assert_eq!(&maps[0][k..k + 3], &[2.0, 0.5, 0.5]);
    }

    #[test]
    fn grid_follows_walking_direction() {
        let cfg = LocalMapConfig::default();
        // Centre human walks along +y; a neighbour 1.5 m to its left (-x in
        // the robot frame) is at local (0, 1.5).
        let s = state(vec![h(0.0, 0.0, 0.0, 1.0), h(-1.5, 0.0, 0.0, 0.0)]);
        let maps = build_local_maps(&s, &cfg);
        let (ix, iy) = cfg.cell_of(0.0, 1.5).unwrap();
        assert_eq!(maps[0][(iy * cfg.grid_side + ix) * MAP_CHANNELS], 1.0);
    }

    #[test]
    fn far_neighbours_are_dropped() {
        let maps = build_local_maps(
            &state(vec![h(0.0, 0.0, 0.0, 0.0), h(2.0, 0.0, 0.0, 0.0)]),
            &LocalMapConfig::default(),
        );
        assert!(maps[0].iter().all(|&x| x == 0.0));
    }
}
