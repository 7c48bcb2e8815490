//! Switch policy and goal-mapping sub-policies.
//!
//! The switch maps (target present, distance to it, matched keypoints) to one
//! of three goal-mapping modes. Two distance-dependent thresholds split the
//! keypoint axis: at or above the upper curve the target is confirmed, below
//! the lower curve it is dropped, in between the agent moves closer to look
//! again. Confirmation latches for the rest of the episode; a target dropped
//! while under verification is remembered as rejected.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, Grid};
use crate::mapping::{hit_cell, MapConfig, SemanticMap};
use crate::world::{Category, Observation, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid threshold curves: {0}")]
    InvalidCurves(String),
    #[error("goal map has no cells")]
    EmptyGoal,
    #[error("no ray hits a {0}")]
    EmptyProjection(Category),
    #[error("map has no explored free cell")]
    NothingExplored,
    #[error("switch precondition violated: {0}")]
    Precondition(String),
}

/// Ordered so that `Exploration < Verification < Exploitation`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchSignal {
    Exploration,
    Verification,
    Exploitation,
}

impl SwitchSignal {
    pub fn name(self) -> &'static str {
        match self {
            SwitchSignal::Exploration => "exploration",
            SwitchSignal::Verification => "verification",
            SwitchSignal::Exploitation => "exploitation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub distance: f64,
    pub upper: f64,
    pub lower: f64,
}

impl Breakpoint {
    pub const fn new(distance: f64, upper: f64, lower: f64) -> Self {
        Self { distance, upper, lower }
    }
}

/// Piecewise-linear upper and lower keypoint thresholds over distance,
/// clamped beyond the first and last breakpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Breakpoint>", into = "Vec<Breakpoint>")]
pub struct ThresholdCurves {
    breakpoints: Vec<Breakpoint>,
}

impl TryFrom<Vec<Breakpoint>> for ThresholdCurves {
    type Error = PolicyError;

    fn try_from(v: Vec<Breakpoint>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ThresholdCurves> for Vec<Breakpoint> {
    fn from(c: ThresholdCurves) -> Self {
        c.breakpoints
    }
}

impl Default for ThresholdCurves {
    fn default() -> Self {
        Self::new(vec![
            Breakpoint::new(1.0, 24.0, 8.0),
            Breakpoint::new(3.0, 60.0, 60.0),
            Breakpoint::new(5.0, 100.0, 100.0),
        ])
        .expect("valid defaults")
    }
}

impl ThresholdCurves {
    pub fn new(breakpoints: Vec<Breakpoint>) -> Result<Self, PolicyError> {
        if breakpoints.is_empty() {
            return Err(PolicyError::InvalidCurves("no breakpoints".into()));
        }
        for b in &breakpoints {
            if !(b.distance.is_finite() && b.upper.is_finite() && b.lower.is_finite()) {
                return Err(PolicyError::InvalidCurves("non-finite breakpoint".into()));
            }
            if !(b.upper >= b.lower && b.lower >= 0.0) {
                return Err(PolicyError::InvalidCurves(format!(
                    "need upper >= lower >= 0 at {} m (upper {}, lower {})",
                    b.distance, b.upper, b.lower
                )));
            }
        }
        for w in breakpoints.windows(2) {
            if w[1].distance <= w[0].distance {
                return Err(PolicyError::InvalidCurves("distances must strictly increase".into()));
            }
            if w[1].upper < w[0].upper || w[1].lower < w[0].lower {
                return Err(PolicyError::InvalidCurves(format!(
                    "thresholds must not shrink with distance between {} m and {} m",
                    w[0].distance, w[1].distance
                )));
            }
        }
        Ok(Self { breakpoints })
    }

    /// A single fixed threshold at every distance; the switch then never
    /// verifies.
    pub fn constant(threshold: f64) -> Self {
        Self::new(vec![Breakpoint::new(1.0, threshold, threshold)]).expect("valid constant curve")
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    fn interpolate(&self, d: f64, pick: impl Fn(&Breakpoint) -> f64) -> f64 {
        let bps = &self.breakpoints;
        if d <= bps[0].distance {
            return pick(&bps[0]);
        }
        for w in bps.windows(2) {
            if d <= w[1].distance {
                let t = (d - w[0].distance) / (w[1].distance - w[0].distance);
                return pick(&w[0]) + t * (pick(&w[1]) - pick(&w[0]));
            }
        }
        pick(bps.last().expect("non-empty"))
    }

    pub fn upper(&self, d: f64) -> f64 {
        self.interpolate(d, |b| b.upper)
    }

    pub fn lower(&self, d: f64) -> f64 {
        self.interpolate(d, |b| b.lower)
    }
}

/// Goal-map selection. Boundaries: `ω ≥ U(d)` confirms, `ω < L(d)` drops.
pub fn f_switch(exists: bool, d: f64, omega: u32, curves: &ThresholdCurves) -> SwitchSignal {
    if !exists {
        return SwitchSignal::Exploration;
    }
    let omega = omega as f64;
    if omega >= curves.upper(d) {
        SwitchSignal::Exploitation
    } else if omega < curves.lower(d) {
        SwitchSignal::Exploration
    } else {
        SwitchSignal::Verification
    }
}

/// Boolean grid with at least one set cell marking where to go.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalMap {
    grid: Grid<bool>,
}

impl GoalMap {
    pub fn new(grid: Grid<bool>) -> Result<Self, PolicyError> {
        if grid.count_true() == 0 {
            return Err(PolicyError::EmptyGoal);
        }
        Ok(Self { grid })
    }

    pub fn from_cells(width: usize, height: usize, cells: impl IntoIterator<Item = Cell>) -> Result<Self, PolicyError> {
        let mut grid = Grid::filled(width, height, false);
        for c in cells {
            grid.set(c, true);
        }
        Self::new(grid)
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.grid
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.grid.at_or(cell, false)
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.grid.true_cells().collect()
    }

    /// Distance from a point to the nearest goal cell centre.
    pub fn distance_from(&self, x: f64, y: f64, resolution: f64) -> f64 {
        self.grid.true_cells().map(|c| c.distance_from(x, y, resolution)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTarget {
    pub cells: Vec<Cell>,
    pub distance: f64,
}

/// Nearest 8-connected component of goal-category map cells that are not
/// rejected, with its distance to the agent (cell centres).
pub fn detect_potential(
    map: &SemanticMap,
    goal: Category,
    rejected: &Grid<bool>,
    agent: &Pose,
) -> Option<PotentialTarget> {
    let res = map.resolution();
    let mut candidate = Grid::filled(map.width(), map.height(), false);
    for c in map.category_cells(goal) {
        if !rejected.at_or(c, false) {
            candidate.set(c, true);
        }
    }
    let mut seen = Grid::filled(map.width(), map.height(), false);
    let mut best: Option<PotentialTarget> = None;
    for start in candidate.true_cells().collect::<Vec<_>>() {
        if seen.at_or(start, true) {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen.set(start, true);
        while let Some(c) = queue.pop_front() {
            component.push(c);
            for n in c.neighbors8() {
                if candidate.at_or(n, false) && !seen.at_or(n, true) {
                    seen.set(n, true);
                    queue.push_back(n);
                }
            }
        }
        component.sort();
        let d = component.iter().map(|c| c.distance_from(agent.x, agent.y, res)).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| d < b.distance) {
            best = Some(PotentialTarget { cells: component, distance: d });
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchState {
    mode: SwitchSignal,
    confirmed_goal: Option<GoalMap>,
    rejected: Grid<bool>,
    verifying: Option<PotentialTarget>,
}

impl SwitchState {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            mode: SwitchSignal::Exploration,
            confirmed_goal: None,
            rejected: Grid::filled(width, height, false),
            verifying: None,
        }
    }

    pub fn mode(&self) -> SwitchSignal {
        self.mode
    }

    pub fn confirmed_goal(&self) -> Option<&GoalMap> {
        self.confirmed_goal.as_ref()
    }

    pub fn rejected(&self) -> &Grid<bool> {
        &self.rejected
    }

    /// Target currently under verification.
    pub fn verifying(&self) -> Option<&PotentialTarget> {
        self.verifying.as_ref()
    }
}

/// Advances the switch state by one decision.
pub fn update_switch(
    mut state: SwitchState,
    signal: SwitchSignal,
    target: Option<&PotentialTarget>,
    goal_projection: Option<GoalMap>,
) -> Result<SwitchState, PolicyError> {
    if state.mode == SwitchSignal::Exploitation {
        return Ok(state);
    }
    match signal {
        SwitchSignal::Exploitation | SwitchSignal::Verification => {
            let (Some(t), Some(goal)) = (target, goal_projection) else {
                return Err(PolicyError::Precondition(format!(
                    "{} requires a potential target and its goal projection",
                    signal.name()
                )));
            };
            if signal == SwitchSignal::Exploitation {
                state.confirmed_goal = Some(goal);
                state.verifying = None;
            } else {
                state.verifying = Some(t.clone());
            }
        }
        SwitchSignal::Exploration => {
            if state.mode == SwitchSignal::Verification {
                if let Some(t) = state.verifying.take() {
                    for c in t.cells {
                        state.rejected.set(c, true);
                    }
                }
            }
            state.verifying = None;
        }
    }
    state.mode = signal;
    Ok(state)
}

/// Goal map at the cells hit by rays labelled with the goal category.
pub fn project_goal(obs: &Observation, goal: Category, cfg: &MapConfig) -> Result<GoalMap, PolicyError> {
    let cells: Vec<Cell> = obs
        .rays
        .iter()
        .filter(|r| r.category() == Some(goal))
        .map(|r| hit_cell(&obs.pose, r.bearing, r.distance, cfg.resolution))
        .collect();
    if cells.is_empty() {
        return Err(PolicyError::EmptyProjection(goal));
    }
    GoalMap::from_cells(cfg.width, cfg.height, cells).map_err(|_| PolicyError::EmptyProjection(goal))
}

/// Explored free cells that border unexplored space (4-neighbourhood, in
/// bounds).
pub fn frontier_cells(map: &SemanticMap) -> Vec<Cell> {
    map.cells()
        .filter(|&c| {
            map.is_free_explored(c)
                && c.neighbors4().iter().any(|&n| {
                    n.x >= 0
                        && n.y >= 0
                        && (n.x as usize) < map.width()
                        && (n.y as usize) < map.height()
                        && !map.is_explored(n)
                })
        })
        .collect()
}

/// Frontier exploration goal. When nothing borders unexplored space the
/// explored free cell farthest from `agent` is used instead.
pub fn frontier_goal(map: &SemanticMap, agent: &Pose) -> Result<GoalMap, PolicyError> {
    let frontier = frontier_cells(map);
    if !frontier.is_empty() {
        return GoalMap::from_cells(map.width(), map.height(), frontier);
    }
    let res = map.resolution();
    let mut best: Option<(f64, Cell)> = None;
    for c in map.cells().filter(|&c| map.is_free_explored(c)) {
        let d = c.distance_from(agent.x, agent.y, res);
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, c));
        }
    }
    let (_, c) = best.ok_or(PolicyError::NothingExplored)?;
    GoalMap::from_cells(map.width(), map.height(), [c])
}

/// Single explored free cell drawn uniformly.
pub fn random_goal<R: Rng + ?Sized>(map: &SemanticMap, rng: &mut R) -> Result<GoalMap, PolicyError> {
    let free: Vec<Cell> = map.cells().filter(|&c| map.is_free_explored(c)).collect();
    if free.is_empty() {
        return Err(PolicyError::NothingExplored);
    }
    let c = free[rng.random_range(0..free.len())];
    GoalMap::from_cells(map.width(), map.height(), [c])
}
