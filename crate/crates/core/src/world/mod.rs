//! Ground-truth environments: occupancy, labelled object instances, the
//! point-agent kinematics and a planar range sensor with per-ray labels.

mod format;

pub use format::{load_episodes, load_world, save_episodes, save_world};

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{distance_transform, first_blocked, flood_fill, wrap_angle, Cell, Grid};

/// Largest translation per frame, metres.
pub const MAX_LINEAR_STEP: f64 = 0.35;
/// Largest rotation per frame, radians.
pub const MAX_ANGULAR_STEP: f64 = PI / 3.0;
/// Success radius around the goal instance, metres.
pub const SUCCESS_DISTANCE: f64 = 1.0;
/// Gap kept between the agent and an obstacle it runs into.
const CONTACT_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid world: {0}")]
    Invariant(String),
    #[error("unknown instance id {0}")]
    UnknownInstance(u32),
    #[error("invalid episode: {0}")]
    Episode(String),
}

/// The fixed goal-category vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Chair,
    Couch,
    Plant,
    Bed,
    Toilet,
    Tv,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::Chair, Category::Couch, Category::Plant, Category::Bed, Category::Toilet, Category::Tv];
    pub const COUNT: usize = Self::ALL.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Chair => "chair",
            Category::Couch => "couch",
            Category::Plant => "plant",
            Category::Bed => "bed",
            Category::Toilet => "toilet",
            Category::Tv => "tv",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s || (s == "television" && *c == Category::Tv))
            .ok_or_else(|| format!("unknown category '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    pub category: Category,
    pub cells: Vec<Cell>,
}

impl Instance {
    /// Distance from a point to the nearest cell centre of the instance.
    pub fn distance_from(&self, x: f64, y: f64, resolution: f64) -> f64 {
        self.cells.iter().map(|c| c.distance_from(x, y, resolution)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn cell(&self, resolution: f64) -> Cell {
        Cell::containing(self.x, self.y, resolution)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Normalised velocity command. `linear` and `angular` are scaled by
/// [`MAX_LINEAR_STEP`] and [`MAX_ANGULAR_STEP`].
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub linear: f64,
    pub angular: f64,
    pub stop: bool,
}

impl Action {
    pub fn new(linear: f64, angular: f64) -> Self {
        Self { linear: linear.clamp(-1.0, 1.0), angular: angular.clamp(-1.0, 1.0), stop: false }
    }

    pub fn stop() -> Self {
        Self { linear: 0.0, angular: 0.0, stop: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub rays: usize,
    pub fov: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { rays: 90, fov: PI / 2.0, max_range: 5.0 }
    }
}

impl SensorConfig {
    pub fn bearing(&self, theta: f64, k: usize) -> f64 {
        if self.rays <= 1 {
            return theta;
        }
        theta - self.fov / 2.0 + k as f64 * self.fov / (self.rays - 1) as f64
    }
}

/// What a single ray ran into.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RayHit {
    /// Nothing within range.
    Clear,
    /// Unlabelled obstacle (walls, clutter, the world border).
    Wall,
    /// A labelled object. `instance` is ground truth and only meant for
    /// matchers and metrics.
    Object { category: Category, instance: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub bearing: f64,
    pub distance: f64,
    pub hit: RayHit,
}

impl Ray {
    pub fn category(&self) -> Option<Category> {
        match self.hit {
            RayHit::Object { category, .. } => Some(category),
            _ => None,
        }
    }

    pub fn instance(&self) -> Option<u32> {
        match self.hit {
            RayHit::Object { instance, .. } => Some(instance),
            _ => None,
        }
    }

    pub fn is_hit(&self) -> bool {
        !matches!(self.hit, RayHit::Clear)
    }

    /// Metric point at `distance + extra` along the ray from `pose`.
    pub fn point(&self, pose: &Pose, extra: f64) -> (f64, f64) {
        let r = self.distance + extra;
        (pose.x + r * self.bearing.cos(), pose.y + r * self.bearing.sin())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pose: Pose,
    pub rays: Vec<Ray>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalDescriptor {
    pub category: Category,
    /// Identity of the pictured instance. Read only by matchers.
    pub instance_hint: u32,
    pub capture_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: Pose,
    pub goal_instance: u32,
    pub goal: GoalDescriptor,
    pub max_steps: usize,
}

pub const DEFAULT_MAX_STEPS: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    resolution: f64,
    occupancy: Grid<bool>,
    instances: Vec<Instance>,
    /// Index into `instances` for every instance cell.
    owner: Grid<Option<usize>>,
}

impl World {
    /// Validates and assembles a world. Instance cells are marked as obstacles.
    pub fn new(resolution: f64, mut occupancy: Grid<bool>, instances: Vec<Instance>) -> Result<Self, WorldError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(WorldError::Invariant(format!("resolution must be positive, got {resolution}")));
        }
        if occupancy.width() == 0 || occupancy.height() == 0 {
            return Err(WorldError::Invariant("empty grid".into()));
        }
        let mut owner: Grid<Option<usize>> = Grid::filled(occupancy.width(), occupancy.height(), None);
        let mut ids = HashSet::new();
        for (k, inst) in instances.iter().enumerate() {
            if !ids.insert(inst.id) {
                return Err(WorldError::Invariant(format!("duplicate instance id {}", inst.id)));
            }
            if inst.cells.is_empty() {
                return Err(WorldError::Invariant(format!("instance {} has no cells", inst.id)));
            }
            for &c in &inst.cells {
                match owner.get_mut(c) {
                    None => {
                        return Err(WorldError::Invariant(format!(
                            "instance {} cell ({}, {}) is off-grid",
                            inst.id, c.x, c.y
                        )))
                    }
                    Some(Some(other)) => {
                        return Err(WorldError::Invariant(format!(
                            "instances {} and {} overlap at ({}, {})",
                            instances[*other].id, inst.id, c.x, c.y
                        )))
                    }
                    Some(slot) => *slot = Some(k),
                }
                occupancy.set(c, true);
            }
            if !four_connected(&inst.cells) {
                return Err(WorldError::Invariant(format!("instance {} is not 4-connected", inst.id)));
            }
        }
        if occupancy.values().iter().all(|v| *v) {
            return Err(WorldError::Invariant("no traversable cell".into()));
        }
        Ok(Self { resolution, occupancy, instances, owner })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.occupancy.width()
    }

    pub fn height(&self) -> usize {
        self.occupancy.height()
    }

    pub fn occupancy(&self) -> &Grid<bool> {
        &self.occupancy
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn instance(&self, id: u32) -> Result<&Instance, WorldError> {
        self.instances.iter().find(|i| i.id == id).ok_or(WorldError::UnknownInstance(id))
    }

    pub fn instance_at(&self, cell: Cell) -> Option<&Instance> {
        self.owner.get(cell).copied().flatten().map(|k| &self.instances[k])
    }

    /// Obstacle test; everything outside the grid is an obstacle.
    pub fn blocked(&self, cell: Cell) -> bool {
        self.occupancy.at_or(cell, true)
    }

    pub fn is_traversable(&self, x: f64, y: f64) -> bool {
        x.is_finite() && y.is_finite() && !self.blocked(Cell::containing(x, y, self.resolution))
    }

    /// Simulated range scan with per-ray labels.
    pub fn sense(&self, pose: &Pose, cfg: &SensorConfig) -> Observation {
        let rays = (0..cfg.rays)
            .map(|k| {
                let bearing = cfg.bearing(pose.theta, k);
                match first_blocked(pose.x, pose.y, bearing, cfg.max_range, self.resolution, |c| self.blocked(c)) {
                    Some((cell, t)) => {
                        let hit = match self.instance_at(cell) {
                            Some(inst) => RayHit::Object { category: inst.category, instance: inst.id },
                            None => RayHit::Wall,
                        };
                        Ray { bearing, distance: t.max(f64::MIN_POSITIVE), hit }
                    }
                    None => Ray { bearing, distance: cfg.max_range, hit: RayHit::Clear },
                }
            })
            .collect();
        Observation { pose: *pose, rays }
    }

    /// Kinematic update: rotate first, then translate along the new heading,
    /// stopping just short of the first obstacle on the way.
    pub fn step(&self, pose: &Pose, action: &Action) -> Pose {
        if action.stop {
            return *pose;
        }
        let theta = wrap_angle(pose.theta + action.angular.clamp(-1.0, 1.0) * MAX_ANGULAR_STEP);
        let travel = action.linear.clamp(-1.0, 1.0) * MAX_LINEAR_STEP;
        if travel == 0.0 {
            return Pose { theta, ..*pose };
        }
        let heading = if travel > 0.0 { theta } else { theta + PI };
        let wanted = travel.abs();
        let allowed = match first_blocked(pose.x, pose.y, heading, wanted, self.resolution, |c| self.blocked(c)) {
            Some((_, t)) => (t - CONTACT_MARGIN).max(0.0),
            None => wanted,
        };
        let moved = Pose { x: pose.x + allowed * heading.cos(), y: pose.y + allowed * heading.sin(), theta };
        if self.is_traversable(moved.x, moved.y) {
            moved
        } else {
            Pose { theta, ..*pose }
        }
    }

    /// Planar line-of-sight test: true iff some ray from the point reaches a
    /// cell of the instance first, at a range of at most `max_range`.
    pub fn oracle_visible(&self, x: f64, y: f64, id: u32, max_range: f64) -> Result<bool, WorldError> {
        let inst = self.instance(id)?;
        let res = self.resolution;
        let hits_instance = |angle: f64| -> bool {
            first_blocked(x, y, angle, max_range, res, |c| self.blocked(c))
                .is_some_and(|(c, _)| self.instance_at(c).is_some_and(|i| i.id == id))
        };

        // Aiming at cell centres settles the common case.
        for c in &inst.cells {
            let (cx, cy) = c.center(res);
            if hits_instance((cy - y).atan2(cx - x)) {
                return Ok(true);
            }
        }

        // The first-hit cell only changes where a ray passes a cell corner,
        // and the hit range along one face is monotone between the corners
        // and the perpendicular foot. Probing each interval between those
        // critical angles is therefore exhaustive.
        let (cx, cy) = centroid(&inst.cells, res);
        let reference = (cy - y).atan2(cx - x);
        let rel = |px: f64, py: f64| wrap_angle((py - y).atan2(px - x) - reference);

        let mut instance_angles = Vec::new();
        for c in &inst.cells {
            let (x0, y0) = (c.x as f64 * res, c.y as f64 * res);
            let (x1, y1) = (x0 + res, y0 + res);
            for (px, py) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
                instance_angles.push(rel(px, py));
            }
            // perpendicular feet on the four face lines
            if (x0..=x1).contains(&x) {
                instance_angles.push(rel(x, y0));
                instance_angles.push(rel(x, y1));
            }
            if (y0..=y1).contains(&y) {
                instance_angles.push(rel(x0, y));
                instance_angles.push(rel(x1, y));
            }
        }
        let lo = instance_angles.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = instance_angles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let wedge = hi - lo < PI;

        // Any segment to the instance stays inside this bounding box.
        let agent = Cell::containing(x, y, res);
        let (mut bx0, mut by0, mut bx1, mut by1) = (agent.x, agent.y, agent.x, agent.y);
        for c in &inst.cells {
            bx0 = bx0.min(c.x);
            by0 = by0.min(c.y);
            bx1 = bx1.max(c.x);
            by1 = by1.max(c.y);
        }
        let mut critical = instance_angles.clone();
        for cy_ in by0..=by1 {
            for cx_ in bx0..=bx1 {
                let c = Cell::new(cx_, cy_);
                if !self.blocked(c) || self.instance_at(c).is_some_and(|i| i.id == id) {
                    continue;
                }
                let (x0, y0) = (c.x as f64 * res, c.y as f64 * res);
                for (px, py) in [(x0, y0), (x0 + res, y0), (x0, y0 + res), (x0 + res, y0 + res)] {
                    let a = rel(px, py);
                    if !wedge || (lo..=hi).contains(&a) {
                        critical.push(a);
                    }
                }
            }
        }
        if !wedge {
            critical.push(-PI);
            critical.push(PI);
        }
        critical.sort_by(f64::total_cmp);
        critical.dedup();
        for pair in critical.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let gap = b - a;
            if gap <= 0.0 {
                continue;
            }
            let nudge = (gap * 0.25).min(1e-9);
            for probe in [a + nudge, 0.5 * (a + b), b - nudge] {
                if hits_instance(reference + probe) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Free cells within [`SUCCESS_DISTANCE`] of the instance from whose
    /// centre the instance is oracle-visible.
    pub fn success_cells(&self, id: u32, max_range: f64) -> Result<Vec<Cell>, WorldError> {
        let inst = self.instance(id)?;
        let res = self.resolution;
        let reach = (SUCCESS_DISTANCE / res).ceil() as i32 + 1;
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for c in &inst.cells {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let n = c.offset(dx, dy);
                    if self.blocked(n) || !seen.insert(n) {
                        continue;
                    }
                    let (nx, ny) = n.center(res);
                    if inst.distance_from(nx, ny, res) <= SUCCESS_DISTANCE && self.oracle_visible(nx, ny, id, max_range)? {
                        out.push(n);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Length of the shortest 8-connected path from the start cell to the
    /// success region of the instance, or `None` if it cannot be reached.
    pub fn shortest_path_length(&self, start: &Pose, id: u32, max_range: f64) -> Result<Option<f64>, WorldError> {
        let targets = self.success_cells(id, max_range)?;
        let field = distance_transform(&self.occupancy, targets, self.resolution);
        let d = field.get(start.cell(self.resolution)).copied().unwrap_or(f64::INFINITY);
        Ok(d.is_finite().then_some(d))
    }

    /// Whether all free cells form one 4-connected component.
    pub fn is_connected(&self) -> bool {
        let Some(first) = self.occupancy.iter().find(|(_, b)| !**b).map(|(c, _)| c) else {
            return false;
        };
        let reach = flood_fill(&self.occupancy, first);
        reach.count_true() == self.occupancy.values().iter().filter(|b| !**b).count()
    }

    /// Whether a stop at this point counts as success: close enough to the
    /// goal instance and with a clear line of sight to it.
    pub fn is_success(&self, pose: &Pose, id: u32, max_range: f64) -> Result<bool, WorldError> {
        let inst = self.instance(id)?;
        Ok(inst.distance_from(pose.x, pose.y, self.resolution) <= SUCCESS_DISTANCE
            && self.oracle_visible(pose.x, pose.y, id, max_range)?)
    }

    /// Builds a validated episode. The goal must be reachable.
    pub fn episode(
        &self,
        start: Pose,
        goal_instance: u32,
        capture_distance: f64,
        max_steps: usize,
        max_range: f64,
    ) -> Result<Episode, WorldError> {
        let inst = self.instance(goal_instance)?;
        if !self.is_traversable(start.x, start.y) {
            return Err(WorldError::Episode(format!("start ({}, {}) is not traversable", start.x, start.y)));
        }
        if max_steps == 0 {
            return Err(WorldError::Episode("max_steps must be positive".into()));
        }
        if !(capture_distance > 0.0) {
            return Err(WorldError::Episode("capture distance must be positive".into()));
        }
        if self.shortest_path_length(&start, goal_instance, max_range)?.is_none() {
            return Err(WorldError::Episode(format!("goal instance {goal_instance} is unreachable from the start")));
        }
        Ok(Episode {
            start,
            goal_instance,
            goal: GoalDescriptor { category: inst.category, instance_hint: goal_instance, capture_distance },
            max_steps,
        })
    }
}

fn centroid(cells: &[Cell], res: f64) -> (f64, f64) {
    let n = cells.len() as f64;
    let (sx, sy) = cells.iter().map(|c| c.center(res)).fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (sx / n, sy / n)
}

fn four_connected(cells: &[Cell]) -> bool {
    let set: HashSet<Cell> = cells.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut stack = vec![cells[0]];
    seen.insert(cells[0]);
    while let Some(c) = stack.pop() {
        for n in c.neighbors4() {
            if set.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == set.len()
}
