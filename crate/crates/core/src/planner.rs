//! Local policy: distance field toward the active goal map, waypoint choice
//! inside the reachable disc, velocity command synthesis and visit counting
//! to get out of places where the agent keeps circling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{distance_transform, segment_clear, wrap_angle, Cell, Grid};
use crate::policy::GoalMap;
use crate::world::{Action, Pose, MAX_ANGULAR_STEP, MAX_LINEAR_STEP};

/// Heading error above which the agent turns in place.
pub const TURN_IN_PLACE: f64 = 15.0 * std::f64::consts::PI / 180.0;
pub const STUCK_N: u32 = 8;
pub const STUCK_WINDOW: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("every goal cell lies inside an obstacle")]
    NoSeed,
    #[error("no reachable cell within {0} m of the agent")]
    UnreachableLocal(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub feasible_radius: f64,
    pub stop_distance: f64,
    /// Obstacle dilation in cells for the distance field.
    pub inflation: i32,
    pub stuck_n: u32,
    pub stuck_window: usize,
    /// Steps between exploration goal refreshes.
    pub explore_refresh: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            feasible_radius: 1.5,
            stop_distance: 0.9,
            inflation: 1,
            stuck_n: STUCK_N,
            stuck_window: STUCK_WINDOW,
            explore_refresh: 10,
        }
    }
}

/// Shortest travel distance (metres) from each cell to the goal set; `+∞`
/// on obstacles and unreachable cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    values: Grid<f64>,
    resolution: f64,
}

impl DistanceField {
    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn at(&self, cell: Cell) -> f64 {
        self.values.get(cell).copied().unwrap_or(f64::INFINITY)
    }
}

/// Chebyshev dilation of the obstacle set by `radius` cells.
pub fn inflate(obstacles: &Grid<bool>, radius: i32) -> Grid<bool> {
    if radius <= 0 {
        return obstacles.clone();
    }
    let mut out = obstacles.clone();
    for c in obstacles.true_cells() {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                out.set(c.offset(dx, dy), true);
            }
        }
    }
    out
}

/// Multi-source distance field from the goal cells over free cells,
/// 8-connected with step costs `resolution` and `√2·resolution`.
pub fn fmm_field(obstacles: &Grid<bool>, goal: &GoalMap, resolution: f64) -> Result<DistanceField, PlanError> {
    let seeds: Vec<Cell> = goal.grid().true_cells().filter(|&c| !obstacles.at_or(c, true)).collect();
    if seeds.is_empty() {
        return Err(PlanError::NoSeed);
    }
    Ok(DistanceField { values: distance_transform(obstacles, seeds, resolution), resolution })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub cell: Cell,
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn at(cell: Cell, resolution: f64) -> Self {
        let (x, y) = cell.center(resolution);
        Self { cell, x, y }
    }
}

fn heading_change(pose: &Pose, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - pose.x, y - pose.y);
    if dx.hypot(dy) < 1e-12 {
        return 0.0;
    }
    wrap_angle(dy.atan2(dx) - pose.theta).abs()
}

/// Lowest-field cell within `radius` of the agent whose straight segment
/// from the agent crosses no obstacle. Ties go to the smaller heading change,
/// then to row-major order.
pub fn select_waypoint(
    field: &DistanceField,
    obstacles: &Grid<bool>,
    pose: &Pose,
    radius: f64,
) -> Result<Waypoint, PlanError> {
    let res = field.resolution;
    let reach = (radius / res).ceil() as i32 + 1;
    let here = pose.cell(res);
    let mut candidates: Vec<(f64, f64, Cell)> = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let c = here.offset(dx, dy);
            let v = field.at(c);
            if !v.is_finite() {
                continue;
            }
            let (cx, cy) = c.center(res);
            if (cx - pose.x).hypot(cy - pose.y) > radius {
                continue;
            }
            candidates.push((v, heading_change(pose, cx, cy), c));
        }
    }
    if candidates.is_empty() {
        return Err(PlanError::UnreachableLocal(radius));
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then((a.2.y, a.2.x).cmp(&(b.2.y, b.2.x)))
    });
    candidates
        .into_iter()
        .find(|&(_, _, c)| segment_clear((pose.x, pose.y), c.center(res), res, |k| obstacles.at_or(k, true)))
        .map(|(_, _, c)| Waypoint::at(c, res))
        .ok_or(PlanError::UnreachableLocal(radius))
}

/// Velocity command toward the waypoint. Stops when a confirmed goal cell is
/// within `stop_distance`.
pub fn waypoint_to_action(
    pose: &Pose,
    wp: &Waypoint,
    confirmed_goal: Option<&GoalMap>,
    stop_distance: f64,
    resolution: f64,
) -> Action {
    if confirmed_goal.is_some_and(|g| g.distance_from(pose.x, pose.y, resolution) <= stop_distance) {
        return Action::stop();
    }
    let (dx, dy) = (wp.x - pose.x, wp.y - pose.y);
    let dist = dx.hypot(dy);
    if dist < 1e-9 {
        return Action::new(0.0, 0.0);
    }
    let err = wrap_angle(dy.atan2(dx) - pose.theta);
    let angular = err / MAX_ANGULAR_STEP;
    if err.abs() > TURN_IN_PLACE {
        Action::new(0.0, angular)
    } else {
        Action::new((dist / MAX_LINEAR_STEP).min(1.0), angular)
    }
}

/// Per-episode visit counts with a sliding window for stuck detection.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryMemory {
    counts: Grid<u32>,
    recent: VecDeque<Cell>,
    stuck: bool,
    stuck_n: u32,
    window: usize,
    resolution: f64,
}

impl TrajectoryMemory {
    pub fn new(width: usize, height: usize, resolution: f64, stuck_n: u32, window: usize) -> Self {
        Self {
            counts: Grid::filled(width, height, 0),
            recent: VecDeque::with_capacity(window + 1),
            stuck: false,
            stuck_n,
            window,
            resolution,
        }
    }

    pub fn count(&self, cell: Cell) -> u32 {
        self.counts.get(cell).copied().unwrap_or(0)
    }

    pub fn is_stuck(&self) -> bool {
        self.stuck
    }

    /// Returns and clears the stuck flag. The window restarts so the same
    /// visits do not trigger again.
    pub fn take_stuck(&mut self) -> bool {
        let was = self.stuck;
        if was {
            self.stuck = false;
            self.recent.clear();
        }
        was
    }
}

pub fn update_trajectory(mut tm: TrajectoryMemory, pose: &Pose) -> TrajectoryMemory {
    let cell = pose.cell(tm.resolution);
    if let Some(c) = tm.counts.get_mut(cell) {
        *c += 1;
    }
    tm.recent.push_back(cell);
    while tm.recent.len() > tm.window {
        tm.recent.pop_front();
    }
    let repeats = tm.recent.iter().filter(|c| **c == cell).count() as u32;
    if repeats >= tm.stuck_n {
        tm.stuck = true;
    }
    tm
}

/// The 8-neighbour of the agent's cell closest to its heading.
pub fn forward_cell(pose: &Pose, resolution: f64) -> Cell {
    let octant = (pose.theta / (std::f64::consts::PI / 4.0)).round();
    let a = octant * std::f64::consts::PI / 4.0;
    pose.cell(resolution).offset(a.cos().round() as i32, a.sin().round() as i32)
}
