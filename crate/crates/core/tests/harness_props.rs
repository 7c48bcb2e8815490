mod common;

use std::process::Command;

use std::collections::VecDeque;

use evenav::grid::{Cell, Grid};
use evenav::harness::*;
use evenav::rng::stream;
use evenav::world::{Action, Category, Episode, GoalDescriptor, Instance, Pose, World};
use rand::Rng;

fn result(success: bool, p: f64, l: f64) -> EpisodeResult {
    EpisodeResult {
        success,
        path_length: p,
        shortest_length: l,
        steps: 1,
        stop_called: success,
        termination: if success { Termination::Success } else { Termination::Timeout },
        diagnostics: None,
    }
}

#[test]
fn metric_unit_cases() {
    let m = compute_metrics(&[result(true, 3.0, 3.0)]).unwrap();
    assert_eq!((m.success_rate, m.spl), (1.0, 1.0));
    let m = compute_metrics(&[result(false, 3.0, 3.0)]).unwrap();
    assert_eq!((m.success_rate, m.spl), (0.0, 0.0));
    assert_eq!(compute_metrics(&[result(true, 4.0, 2.0)]).unwrap().spl, 0.5);
    assert!(compute_metrics(&[]).is_err());
    assert_eq!(result(true, 0.0, 0.0).spl(), 1.0);
}

#[test]
fn metric_fixtures() {
    let mut rng = stream(51, &[]);
    for _ in 0..100_000 {
        let n = rng.random_range(1..6);
        let rs: Vec<EpisodeResult> = (0..n)
            .map(|_| {
                let l = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..20.0) };
                let p = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..40.0) };
                result(rng.random_bool(0.5), p, l)
            })
            .collect();
        for r in &rs {
            let s = r.spl();
            assert!((0.0..=1.0).contains(&s) && s <= if r.success { 1.0 } else { 0.0 });
        }
        let m = compute_metrics(&rs).unwrap();
        assert!(0.0 <= m.spl && m.spl <= m.success_rate + 1e-12 && m.success_rate <= 1.0);
    }
}

#[test]
fn generated_worlds_are_connected() {
    let params = WorldParams::default();
    for seed in 0..100 {
        let w = generate_world(&params, &mut stream(seed, &[7])).unwrap();
        let free: Vec<Cell> = common::free_cells(&w);
        let mut reach = Grid::filled(w.width(), w.height(), false);
        let mut queue = VecDeque::from([free[0]]);
        reach.set(free[0], true);
        while let Some(c) = queue.pop_front() {
            for n in c.neighbors4() {
                if !w.occupancy().at_or(n, true) && reach.get(n) == Some(&false) {
                    reach.set(n, true);
                    queue.push_back(n);
                }
            }
        }
        assert!(free.iter().all(|c| reach.get(*c) == Some(&true)), "world {seed} is split");
        for cat in Category::ALL {
            let n = w.instances().iter().filter(|i| i.category == cat).count();
            assert_eq!(n, 2, "{cat:?}");
        }
        // World invariants: instance cells are occupied and disjoint
        let mut seen = Grid::filled(w.width(), w.height(), false);
        for i in w.instances() {
            for c in &i.cells {
                assert!(w.blocked(*c));
                assert!(!seen.get(*c).unwrap());
                seen.set(*c, true);
            }
        }
    }
}

#[test]
fn small_world_without_instances() {
    let params = WorldParams { size: 16, instances_per_category: 0, categories: vec![], ..WorldParams::default() };
    let w = generate_world(&params, &mut stream(3, &[])).unwrap();
    assert!(w.instances().is_empty());
    assert!(w.is_connected());
}

#[test]
fn episodes_are_reachable_and_goals_uniform() {
    let w = generate_world(&WorldParams::default(), &mut stream(52, &[])).unwrap();
    let p = EpisodeParams::default();
    assert!(generate_episodes(&w, 0, &p, &mut stream(1, &[])).unwrap().is_empty());
    let eps = generate_episodes(&w, 10_000, &p, &mut stream(53, &[])).unwrap();
    let mut counts = vec![0usize; w.instances().len()];
    for (k, e) in eps.iter().enumerate() {
        counts[w.instances().iter().position(|i| i.id == e.goal_instance).unwrap()] += 1;
        assert!(w.is_traversable(e.start.x, e.start.y));
        assert!((p.capture_min..=p.capture_max).contains(&e.goal.capture_distance));
        if k < 40 {
            let inst = w.instance(e.goal_instance).unwrap();
            let res = w.resolution();
            let targets: Vec<Cell> = common::free_cells(&w)
                .into_iter()
                .filter(|c| {
                    let (x, y) = c.center(res);
                    inst.distance_from(x, y, res) <= 1.0 && common::dense_visible(&w, x, y, inst.id, 5.0, 2048)
                })
                .collect();
            let d = common::bellman_ford(w.occupancy(), &targets, res);
            let s = e.start.cell(res);
            assert!(d[s.y as usize][s.x as usize].is_finite());
        }
    }
    assert!(common::chi_square_uniform_p(&counts) > 0.01, "{counts:?}");
}

fn corridor_world() -> World {
    let mut occ = Grid::filled(30, 5, true);
    for x in 1..29 {
        for y in 1..4 {
            occ.set(Cell::new(x, y), false);
        }
    }
    occ.set(Cell::new(27, 2), true);
    World::new(0.25, occ, vec![Instance { id: 0, category: Category::Bed, cells: vec![Cell::new(27, 2)] }]).unwrap()
}

fn episode(start: Pose, max_steps: usize) -> Episode {
    Episode {
        start,
        goal_instance: 0,
        goal: GoalDescriptor { category: Category::Bed, instance_hint: 0, capture_distance: 1.0 },
        max_steps,
    }
}

#[test]
fn degenerate_episode_succeeds_quickly() {
    let w = corridor_world();
    let start = Pose::new(26.5 * 0.25, 2.5 * 0.25, 0.0);
    let r = run_episode(&w, &episode(start, 50), &RunConfig::eve().with_oracle(), 1);
    assert!(r.success && r.steps <= 5, "{r:?}");
    assert!(r.spl() > 0.99);
}

#[test]
fn unreachable_goal_rejected_at_load() {
    let w = corridor_world();
    let mut occ = w.occupancy().clone();
    for y in 0..5 {
        occ.set(Cell::new(10, y), true);
    }
    let cut = World::new(0.25, occ, w.instances().to_vec()).unwrap();
    let text = "EVENAV-EPISODES 1\n0.5 0.625 0.0 0 1.0 100\n";
    assert!(evenav::world::load_episodes(text, &cut, 5.0).is_err());
    assert!(evenav::world::load_episodes(text, &w, 5.0).is_ok());
}

#[test]
fn episode_invariants_on_suite() {
    let params = SuiteParams { worlds: 3, episodes_per_world: 6, ..SuiteParams::default() };
    let suite = generate_suite(&params, 54).unwrap();
    for cfg in [RunConfig::eve(), RunConfig::ee(), RunConfig::eve().with_oracle()] {
        for (wi, entry) in suite.entries.iter().enumerate() {
            for (ei, ep) in entry.episodes.iter().enumerate() {
                let seed = wi as u64 * 100 + ei as u64;
                let (r, rows) = run_episode_traced(&entry.world, ep, &cfg, seed);
                assert_eq!(r, run_episode(&entry.world, ep, &cfg, seed));
                assert!(r.steps <= ep.max_steps && r.steps == rows.len());
                assert_ne!(r.termination, Termination::Error, "{:?}", r.diagnostics);
                assert!(!r.success || r.stop_called);
                // path accounting by replaying the recorded actions
                let mut total = 0.0;
                for (k, row) in rows.iter().enumerate() {
                    let pose = Pose { x: row.x, y: row.y, theta: row.theta };
                    if row.action.stop {
                        assert_eq!(k + 1, rows.len());
                        break;
                    }
                    let next = entry.world.step(&pose, &row.action);
                    assert!(entry.world.is_traversable(next.x, next.y));
                    if let Some(n) = rows.get(k + 1) {
                        assert_eq!((n.x, n.y, n.theta), (next.x, next.y, next.theta));
                    }
                    total += (next.x - pose.x).hypot(next.y - pose.y);
                }
                assert!((total - r.path_length).abs() <= 1e-9 * total.max(1.0));
            }
        }
    }
}

#[test]
fn benchmark_single_episode_matches_metrics() {
    let params = SuiteParams { worlds: 1, episodes_per_world: 1, ..SuiteParams::default() };
    let suite = generate_suite(&params, 55).unwrap();
    let report = run_benchmark(&[RunConfig::eve()], &suite, 1).unwrap();
    let c = &report.configs[0];
    assert_eq!(c.metrics.unwrap(), compute_metrics(&c.results).unwrap());
    let mut bad = RunConfig::ee();
    bad.name = "bad".into();
    bad.format_version = 99;
    let report = run_benchmark(&[RunConfig::eve(), bad], &suite, 1).unwrap();
    assert!(report.configs[0].metrics.is_some());
    assert!(report.configs[1].error.is_some());
}

#[test]
fn action_clamping() {
    let a = Action::new(3.0, -7.0);
    assert_eq!((a.linear, a.angular), (1.0, -1.0));
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_evenav")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let suite = d.join("suite");
    let s = suite.to_str().unwrap();
    assert_eq!(cli(&[]).status.code(), Some(1));
    assert_eq!(cli(&["bogus"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    let out = cli(&["generate", "--out", s, "--worlds", "1", "--episodes", "2", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = d.join("eve.toml");
    assert_eq!(cli(&["init-config", "--out", cfg.to_str().unwrap()]).status.code(), Some(0));
    let metrics = d.join("m.json");
    let out = cli(&["run", "--config", cfg.to_str().unwrap(), "--suite", s, "--out", metrics.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(v.is_object());
    // malformed config → 1, missing suite → 2
    let broken = d.join("broken.toml");
    std::fs::write(&broken, "format_version = 1\nnonsense = 3\n").unwrap();
    assert_eq!(cli(&["run", "--config", broken.to_str().unwrap(), "--suite", s]).status.code(), Some(1));
    let missing = d.join("nowhere");
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap(), "--suite", missing.to_str().unwrap()]).status.code(), Some(2));
    let corrupt = d.join("corrupt");
    std::fs::create_dir(&corrupt).unwrap();
    std::fs::write(corrupt.join("world_000.txt"), "EVENAV-WORLD 1\nresolution x\n").unwrap();
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap(), "--suite", corrupt.to_str().unwrap()]).status.code(), Some(2));
    let csv = d.join("c.csv");
    let out = cli(&["calibrate", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(cli(&["calibrate", "--anchor", "easy:60:1.5"]).status.code(), Some(1));
    assert_eq!(cli(&["calibrate", "--seed", "3"]).status.code(), Some(1));
    let fitted = cli(&["calibrate", "--suite", s, "--samples", "300"]);
    assert_eq!(fitted.status.code(), Some(0), "{}", String::from_utf8_lossy(&fitted.stderr));
    assert!(String::from_utf8_lossy(&fitted.stdout).contains("[[positive]]"));
}
