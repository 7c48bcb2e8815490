mod common;

use evenav::grid::{Cell, Grid};
use evenav::planner::*;
use evenav::policy::GoalMap;
use evenav::rng::stream;
use evenav::world::{Pose, World};
use rand::Rng;

fn random_obstacles<R: Rng>(rng: &mut R, w: usize, h: usize, p: f64) -> Grid<bool> {
    let mut g = Grid::filled(w, h, false);
    for c in g.cells().collect::<Vec<_>>() {
        g.set(c, rng.random_bool(p));
    }
    g
}

fn random_goal<R: Rng>(rng: &mut R, obstacles: &Grid<bool>) -> GoalMap {
    let (w, h) = (obstacles.width() as i32, obstacles.height() as i32);
    loop {
        let cells: Vec<Cell> = (0..rng.random_range(1..6)).map(|_| Cell::new(rng.random_range(0..w), rng.random_range(0..h))).collect();
        if cells.iter().any(|c| !obstacles.get(*c).unwrap()) {
            return GoalMap::from_cells(w as usize, h as usize, cells).unwrap();
        }
    }
}

#[test]
fn field_matches_relaxation_oracle() {
    let mut rng = stream(41, &[]);
    for _ in 0..50 {
        let p = rng.random_range(0.0..0.35);
        let obstacles = random_obstacles(&mut rng, 50, 50, p);
        let goal = random_goal(&mut rng, &obstacles);
        let f = fmm_field(&obstacles, &goal, 0.25).unwrap();
        let oracle = common::bellman_ford(&obstacles, &goal.cells(), 0.25);
        for (c, v) in f.values().iter() {
            let o = oracle[c.y as usize][c.x as usize];
            assert_eq!(v.is_finite(), o.is_finite(), "{c:?}");
            if o.is_finite() {
                assert!((v - o).abs() <= 0.25, "{c:?}: {v} vs {o}");
            }
        }
    }
}

#[test]
fn waypoint_is_best_feasible_cell() {
    let mut rng = stream(42, &[]);
    let mut checked = 0;
    while checked < 100 {
        let obstacles = random_obstacles(&mut rng, 30, 30, 0.2);
        let goal = random_goal(&mut rng, &obstacles);
        let Ok(f) = fmm_field(&obstacles, &goal, 0.25) else { continue };
        let free: Vec<Cell> = obstacles.iter().filter(|(_, b)| !**b).map(|(c, _)| c).collect();
        let c = free[rng.random_range(0..free.len())];
        let pose = Pose::new((c.x as f64 + rng.random_range(0.05..0.95)) * 0.25, (c.y as f64 + rng.random_range(0.05..0.95)) * 0.25, rng.random_range(-3.1..3.1));
        let radius = 1.5;
        let clear = |k: Cell| {
            let (x, y) = k.center(0.25);
            let len = (x - pose.x).hypot(y - pose.y);
            if len == 0.0 {
                return !obstacles.get(k).unwrap();
            }
            let hit = common::march(|q| obstacles.at_or(q, true), pose.x, pose.y, (y - pose.y).atan2(x - pose.x), 0.25, len);
            hit.is_none_or(|(_, t)| t > len)
        };
        let mut best = f64::INFINITY;
        for k in obstacles.cells() {
            let (x, y) = k.center(0.25);
            if (x - pose.x).hypot(y - pose.y) <= radius && f.at(k).is_finite() && clear(k) {
                best = best.min(f.at(k));
            }
        }
        match select_waypoint(&f, &obstacles, &pose, radius) {
            Ok(wp) => {
                assert!(clear(wp.cell));
                assert!((f.at(wp.cell) - best).abs() < 1e-12, "{} vs {best}", f.at(wp.cell));
                checked += 1;
            }
            Err(_) => assert!(best.is_infinite()),
        }
    }
}

#[test]
fn action_examples() {
    let pose = Pose::new(2.0, 2.0, 0.0);
    let behind = Waypoint::at(Cell::new(4, 8), 0.25);
    let a = waypoint_to_action(&pose, &behind, None, 0.9, 0.25);
    assert_eq!(a.linear, 0.0);
    let ahead = Waypoint { cell: Cell::new(8, 8), x: 2.1, y: 2.0 };
    let a = waypoint_to_action(&pose, &ahead, None, 0.9, 0.25);
    assert!((a.linear - 0.1 / 0.35).abs() < 1e-12 && a.angular.abs() < 1e-12);
}

/// Plans on `known` obstacles (plus virtual ones from the stuck handler),
/// moves in `world`, until the agent stops next to `goal`.
fn drive(world: &World, known: &Grid<bool>, start: Pose, goal: Cell, limit: usize) -> Option<usize> {
    let res = world.resolution();
    let goal_map = GoalMap::from_cells(known.width(), known.height(), [goal]).unwrap();
    let mut virtual_cells: Vec<Cell> = Vec::new();
    let mut tm = TrajectoryMemory::new(known.width(), known.height(), res, STUCK_N, STUCK_WINDOW);
    let mut pose = start;
    for step in 0..limit {
        if pose.cell(res) == goal {
            return Some(step);
        }
        let mut obstacles = inflate(known, 1);
        for c in &virtual_cells {
            obstacles.set(*c, true);
        }
        obstacles.set(pose.cell(res), false);
        let f = fmm_field(&obstacles, &goal_map, res).ok()?;
        let wp = select_waypoint(&f, &obstacles, &pose, 1.5).ok()?;
        let action = waypoint_to_action(&pose, &wp, None, 0.9, res);
        pose = world.step(&pose, &action);
        tm = update_trajectory(tm, &pose);
        if tm.take_stuck() {
            virtual_cells.push(forward_cell(&pose, res));
        }
    }
    None
}

#[test]
fn closed_loop_reaches_goal() {
    let world = World::new(0.25, Grid::filled(40, 40, false), vec![]).unwrap();
    let mut rng = stream(43, &[]);
    for _ in 0..200 {
        let start = Pose::new(rng.random_range(0.1..9.9), rng.random_range(0.1..9.9), rng.random_range(-3.1..3.1));
        let goal = Cell::new(rng.random_range(0..40), rng.random_range(0..40));
        let steps = drive(&world, world.occupancy(), start, goal, 80);
        assert!(steps.is_some(), "{start:?} -> {goal:?}");
    }
}

#[test]
fn escapes_unmapped_blockage() {
    // ring corridor around a central block; the short (lower) branch is cut
    // by an obstacle the planner does not know about
    let (w, h) = (41, 17);
    let mut known = Grid::filled(w, h, false);
    for c in known.cells().collect::<Vec<_>>() {
        let border = c.x == 0 || c.y == 0 || c.x == w as i32 - 1 || c.y == h as i32 - 1;
        let block = (4..=36).contains(&c.x) && (4..=12).contains(&c.y);
        known.set(c, border || block);
    }
    let mut real = known.clone();
    for y in 1..=3 {
        real.set(Cell::new(20, y), true);
    }
    let world = World::new(0.25, real, vec![]).unwrap();
    let start = Pose::new(2.5 * 0.25, 2.5 * 0.25, 0.0);
    let goal = Cell::new(38, 2);
    let steps = drive(&world, &known, start, goal, 150);
    assert!(steps.is_some());
    // the blockage really was in the way: without it the trip is short
    let open = World::new(0.25, known.clone(), vec![]).unwrap();
    assert!(drive(&open, &known, start, goal, 150).unwrap() < 40);
}
