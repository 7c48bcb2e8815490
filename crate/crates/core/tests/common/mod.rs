//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use evenav::grid::{Cell, Grid};
use evenav::world::{Category, Instance, World};
use rand::Rng;

/// Single-source-set shortest distances by repeated relaxation until nothing
/// changes. Same connectivity rule as the planner: 8 neighbours, a diagonal
/// step needs both orthogonal side cells free.
pub fn bellman_ford(blocked: &Grid<bool>, seeds: &[Cell], res: f64) -> Vec<Vec<f64>> {
    let (w, h) = (blocked.width() as i32, blocked.height() as i32);
    let free = |x: i32, y: i32| x >= 0 && y >= 0 && x < w && y < h && !blocked.get(Cell::new(x, y)).unwrap();
    let mut d = vec![vec![f64::INFINITY; w as usize]; h as usize];
    for s in seeds {
        if free(s.x, s.y) {
            d[s.y as usize][s.x as usize] = 0.0;
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if !free(x, y) {
                    continue;
                }
                let mut best = d[y as usize][x as usize];
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                            continue;
                        }
                        let diagonal = dx != 0 && dy != 0;
                        if diagonal && !(free(x + dx, y) && free(x, y + dy)) {
                            continue;
                        }
                        let step = if diagonal { res * 2f64.sqrt() } else { res };
                        let v = d[(y + dy) as usize][(x + dx) as usize] + step;
                        if v < best - 1e-12 {
                            best = v;
                        }
                    }
                }
                if best < d[y as usize][x as usize] {
                    d[y as usize][x as usize] = best;
                    changed = true;
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

/// First blocked cell along a ray by exact slab stepping, written
/// independently of the library walker. Returns (cell, entry distance).
pub fn march(blocked: impl Fn(Cell) -> bool, x: f64, y: f64, angle: f64, res: f64, max: f64) -> Option<(Cell, f64)> {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut cx = (x / res).floor() as i64;
    let mut cy = (y / res).floor() as i64;
    let sx: i64 = if dx > 0.0 { 1 } else { -1 };
    let sy: i64 = if dy > 0.0 { 1 } else { -1 };
    let next = |c: i64, s: i64, p: f64, d: f64| -> f64 {
        if d.abs() < 1e-15 {
            return f64::INFINITY;
        }
        let edge = if s > 0 { (c + 1) as f64 * res } else { c as f64 * res };
        (edge - p) / d
    };
    let mut tx = next(cx, sx, x, dx);
    let mut ty = next(cy, sy, y, dy);
    let mut t = 0.0;
    loop {
        if blocked(Cell::new(cx as i32, cy as i32)) {
            return Some((Cell::new(cx as i32, cy as i32), t));
        }
        if tx <= ty {
            t = tx;
            cx += sx;
            tx = next(cx, sx, x, dx);
        } else {
            t = ty;
            cy += sy;
            ty = next(cy, sy, y, dy);
        }
        if t > max {
            return None;
        }
    }
}

/// Visibility by casting `rays` evenly spaced rays.
pub fn dense_visible(world: &World, x: f64, y: f64, id: u32, max_range: f64, rays: usize) -> bool {
    let inst = world.instances().iter().find(|i| i.id == id).unwrap();
    let occ = world.occupancy();
    (0..rays).any(|k| {
        let a = -std::f64::consts::PI + k as f64 * std::f64::consts::TAU / rays as f64;
        match march(|c| occ.at_or(c, true), x, y, a, world.resolution(), max_range) {
            Some((c, t)) => t <= max_range && inst.cells.contains(&c),
            None => false,
        }
    })
}

/// Random cluttered world with 1-cell and 2-cell instances.
pub fn random_world<R: Rng>(rng: &mut R, w: usize, h: usize, density: f64, instances: usize) -> World {
    loop {
        let mut occ = Grid::filled(w, h, false);
        for c in occ.cells().collect::<Vec<_>>() {
            if rng.random_bool(density) {
                occ.set(c, true);
            }
        }
        let mut taken: Vec<Cell> = Vec::new();
        let mut list = Vec::new();
        for id in 0..instances {
            let c = Cell::new(rng.random_range(0..w as i32), rng.random_range(0..h as i32));
            let mut cells = vec![c];
            if rng.random_bool(0.5) && (c.x + 1) < w as i32 {
                cells.push(c.offset(1, 0));
            }
            if cells.iter().any(|c| taken.contains(c)) {
                continue;
            }
            for c in &cells {
                occ.set(*c, false);
            }
            taken.extend(&cells);
            list.push(Instance { id: id as u32, category: Category::ALL[id % Category::COUNT], cells });
        }
        if let Ok(world) = World::new(0.25, occ, list) {
            return world;
        }
    }
}

pub fn free_cells(world: &World) -> Vec<Cell> {
    world.occupancy().iter().filter(|(_, b)| !**b).map(|(c, _)| c).collect()
}

/// Uniform point inside a random free cell.
pub fn random_free_point<R: Rng>(rng: &mut R, world: &World) -> (f64, f64) {
    let free = free_cells(world);
    let c = free[rng.random_range(0..free.len())];
    let r = world.resolution();
    ((c.x as f64 + rng.random_range(0.01..0.99)) * r, (c.y as f64 + rng.random_range(0.01..0.99)) * r)
}

/// Pearson chi-square p-value for equal expected counts.
pub fn chi_square_uniform_p(counts: &[usize]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}
