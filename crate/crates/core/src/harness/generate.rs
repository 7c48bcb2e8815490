//! Procedural worlds (rooms joined by doorways, clutter, object instances)
//! and episode sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::grid::{distance_transform, flood_fill, Cell, Grid};
use crate::world::{Category, Episode, GoalDescriptor, Instance, Pose, World, DEFAULT_MAX_STEPS};

const WORLD_ATTEMPTS: usize = 50;
const PLACE_ATTEMPTS: usize = 400;
const START_ATTEMPTS: usize = 10_000;
const DOOR_WIDTH: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    /// Side length in cells.
    pub size: usize,
    pub resolution: f64,
    pub rooms: usize,
    /// Fraction of free floor turned into clutter.
    pub obstacle_density: f64,
    pub instances_per_category: usize,
    pub categories: Vec<Category>,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            size: 64,
            resolution: 0.25,
            rooms: 9,
            obstacle_density: 0.02,
            instances_per_category: 2,
            categories: Category::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeParams {
    pub max_steps: usize,
    /// Sensor range used for the success region.
    pub max_range: f64,
    pub capture_min: f64,
    pub capture_max: f64,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self { max_steps: DEFAULT_MAX_STEPS, max_range: 5.0, capture_min: 1.0, capture_max: 3.0 }
    }
}

fn split(lo: i32, hi: i32, parts: usize) -> Vec<i32> {
    // wall coordinates strictly inside (lo, hi)
    (1..parts).map(|i| lo + ((hi - lo) as f64 * i as f64 / parts as f64).round() as i32).collect()
}

struct Layout {
    occ: Grid<bool>,
    /// Doorways and their surroundings; nothing may be placed here.
    keep_clear: Grid<bool>,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

fn rooms_layout<R: Rng + ?Sized>(p: &WorldParams, rng: &mut R) -> Layout {
    let n = p.size as i32;
    let mut occ = Grid::filled(p.size, p.size, false);
    for i in 0..n {
        for c in [Cell::new(i, 0), Cell::new(i, n - 1), Cell::new(0, i), Cell::new(n - 1, i)] {
            occ.set(c, true);
        }
    }
    let (kx, ky) = room_grid(p);
    let xs = split(0, n - 1, kx);
    let ys = split(0, n - 1, ky);
    for &x in &xs {
        for y in 0..n {
            occ.set(Cell::new(x, y), true);
        }
    }
    for &y in &ys {
        for x in 0..n {
            occ.set(Cell::new(x, y), true);
        }
    }
    // room spans, walls excluded
    let bounds = |cuts: &[i32]| -> Vec<(i32, i32)> {
        let mut edges = vec![0];
        edges.extend_from_slice(cuts);
        edges.push(n - 1);
        edges.windows(2).map(|w| (w[0] + 1, w[1] - 1)).collect()
    };
    let (bx, by) = (bounds(&xs), bounds(&ys));
    // adjacency between neighbouring rooms: (room a, room b, wall cells)
    let id = |i: usize, j: usize| j * kx + i;
    let mut walls: Vec<(usize, usize, Vec<Cell>)> = Vec::new();
    for j in 0..ky {
        for i in 0..kx {
            if i + 1 < kx {
                let x = xs[i];
                walls.push((id(i, j), id(i + 1, j), (by[j].0..=by[j].1).map(|y| Cell::new(x, y)).collect()));
            }
            if j + 1 < ky {
                let y = ys[j];
                walls.push((id(i, j), id(i, j + 1), (bx[i].0..=bx[i].1).map(|x| Cell::new(x, y)).collect()));
            }
        }
    }
    walls.shuffle(rng);
    let mut parent: Vec<usize> = (0..kx * ky).collect();
    let mut keep_clear = Grid::filled(p.size, p.size, false);
    for (a, b, cells) in walls {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let tree_edge = ra != rb;
        if tree_edge {
            parent[ra] = rb;
        }
        if !(tree_edge || rng.random_bool(0.35)) || cells.len() < (DOOR_WIDTH + 2) as usize {
            continue;
        }
        let start = rng.random_range(1..=cells.len() - 1 - DOOR_WIDTH as usize);
        for c in &cells[start..start + DOOR_WIDTH as usize] {
            occ.set(*c, false);
            for dy in -2..=2 {
                for dx in -2..=2 {
                    keep_clear.set(c.offset(dx, dy), true);
                }
            }
        }
    }
    Layout { occ, keep_clear }
}

fn any_in(grid: &Grid<bool>, cells: &[Cell], radius: i32) -> bool {
    cells.iter().any(|c| {
        (-radius..=radius).any(|dy| (-radius..=radius).any(|dx| grid.at_or(c.offset(dx, dy), false)))
    })
}

fn connected(occ: &Grid<bool>) -> bool {
    let Some(first) = occ.iter().find(|(_, b)| !**b).map(|(c, _)| c) else {
        return false;
    };
    flood_fill(occ, first).count_true() == occ.values().iter().filter(|b| !**b).count()
}

fn random_block<R: Rng + ?Sized>(n: i32, w: i32, h: i32, rng: &mut R) -> Vec<Cell> {
    let x0 = rng.random_range(1..n - w);
    let y0 = rng.random_range(1..n - h);
    (0..h).flat_map(|dy| (0..w).map(move |dx| Cell::new(x0 + dx, y0 + dy))).collect()
}

fn try_world<R: Rng + ?Sized>(p: &WorldParams, rng: &mut R) -> Option<World> {
    let n = p.size as i32;
    let Layout { mut occ, keep_clear } = rooms_layout(p, rng);
    if !connected(&occ) {
        return None;
    }
    // clutter: small blocks floating in open floor
    let free = occ.values().iter().filter(|b| !**b).count();
    let mut budget = (p.obstacle_density * free as f64).round() as usize;
    let mut tries = 0;
    while budget > 0 && tries < PLACE_ATTEMPTS * 4 {
        tries += 1;
        let (w, h) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let block = random_block(n, w, h, rng);
        if any_in(&occ, &block, 3) || any_in(&keep_clear, &block, 0) {
            continue;
        }
        for c in &block {
            occ.set(*c, true);
        }
        budget = budget.saturating_sub(block.len());
    }
    // instances, kept apart from each other and from clutter
    const SHAPES: [(i32, i32); 6] = [(1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (1, 3)];
    let walls = occ.clone();
    let partitions = xs_ys(p);
    let mut taken = Grid::filled(p.size, p.size, false);
    let mut instances = Vec::new();
    for &category in &p.categories {
        for _ in 0..p.instances_per_category {
            let mut placed = false;
            for _ in 0..PLACE_ATTEMPTS {
                let (w, h) = SHAPES[rng.random_range(0..SHAPES.len())];
                let cells = random_block(n, w, h, rng);
                if any_in(&occ, &cells, 0) || any_in(&keep_clear, &cells, 0) || any_in(&taken, &cells, 3) {
                    continue;
                }
                // only room walls may touch an instance
                let touches_clutter = cells.iter().any(|c| {
                    c.neighbors8().iter().any(|n| occ.at_or(*n, false) && !is_wall(&walls, *n, &partitions))
                });
                if touches_clutter {
                    continue;
                }
                let mut trial = occ.clone();
                for c in &cells {
                    trial.set(*c, true);
                }
                if !connected(&trial) {
                    continue;
                }
                occ = trial;
                for c in &cells {
                    taken.set(*c, true);
                }
                instances.push(Instance { id: instances.len() as u32, category, cells });
                placed = true;
                break;
            }
            if !placed {
                return None;
            }
        }
    }
    // World::new re-marks instance cells itself; hand it the bare layout
    let mut layout = occ;
    for inst in &instances {
        for c in &inst.cells {
            layout.set(*c, false);
        }
    }
    let world = World::new(p.resolution, layout, instances).ok()?;
    world.is_connected().then_some(world)
}

/// Wall cells of the room layout: the border and the full-length partition
/// lines.
fn is_wall(occ: &Grid<bool>, c: Cell, (xs, ys): &(Vec<i32>, Vec<i32>)) -> bool {
    let n = occ.width() as i32;
    occ.at_or(c, true) && (c.x == 0 || c.y == 0 || c.x == n - 1 || c.y == n - 1 || xs.contains(&c.x) || ys.contains(&c.y))
}

fn xs_ys(p: &WorldParams) -> (Vec<i32>, Vec<i32>) {
    let n = p.size as i32;
    let (kx, ky) = room_grid(p);
    (split(0, n - 1, kx), split(0, n - 1, ky))
}

/// Rooms per row and column. Small maps get fewer rooms so that every
/// partition wall can still hold a door.
fn room_grid(p: &WorldParams) -> (usize, usize) {
    let fit = ((p.size as i32 - 1) / (DOOR_WIDTH + 3)).max(1) as usize;
    let kx = ((p.rooms.max(1) as f64).sqrt().ceil() as usize).min(fit);
    let ky = p.rooms.max(1).div_ceil(kx).min(fit);
    (kx, ky)
}

pub fn generate_world<R: Rng + ?Sized>(params: &WorldParams, rng: &mut R) -> Result<World, HarnessError> {
    if params.size < 8 {
        return Err(HarnessError::Generation(format!("size {} is below the minimum of 8", params.size)));
    }
    if !(params.resolution > 0.0) || !(0.0..0.5).contains(&params.obstacle_density) {
        return Err(HarnessError::Generation("resolution must be positive and density in [0, 0.5)".into()));
    }
    for _ in 0..WORLD_ATTEMPTS {
        if let Some(w) = try_world(params, rng) {
            return Ok(w);
        }
    }
    Err(HarnessError::Generation(format!("no valid layout after {WORLD_ATTEMPTS} attempts")))
}

/// Draws `n` episodes: the goal instance uniformly, then a uniform start
/// among free cells from which the goal's success region is reachable.
pub fn generate_episodes<R: Rng + ?Sized>(
    world: &World,
    n: usize,
    params: &EpisodeParams,
    rng: &mut R,
) -> Result<Vec<Episode>, HarnessError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if world.instances().is_empty() {
        return Err(HarnessError::Generation("world has no instances".into()));
    }
    let res = world.resolution();
    let free: Vec<Cell> = world.occupancy().iter().filter(|(_, b)| !**b).map(|(c, _)| c).collect();
    let mut fields: Vec<Option<Grid<f64>>> = vec![None; world.instances().len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..world.instances().len());
        let inst = &world.instances()[k];
        if fields[k].is_none() {
            let targets = world.success_cells(inst.id, params.max_range)?;
            fields[k] = Some(distance_transform(world.occupancy(), targets, res));
        }
        let field = fields[k].as_ref().expect("filled above");
        let mut found = None;
        for _ in 0..START_ATTEMPTS {
            let c = free[rng.random_range(0..free.len())];
            let x = (c.x as f64 + rng.random::<f64>()) * res;
            let y = (c.y as f64 + rng.random::<f64>()) * res;
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            if field.get(Cell::containing(x, y, res)).is_some_and(|d| d.is_finite()) {
                found = Some(Pose::new(x, y, theta));
                break;
            }
        }
        let start = found.ok_or_else(|| HarnessError::Generation(format!("instance {} is unreachable", inst.id)))?;
        let capture = rng.random_range(params.capture_min..=params.capture_max);
        out.push(Episode {
            start,
            goal_instance: inst.id,
            goal: GoalDescriptor { category: inst.category, instance_hint: inst.id, capture_distance: capture },
            max_steps: params.max_steps,
        });
    }
    Ok(out)
}
