//! Exit criteria. Every test prints one `criterion N: PASS|FAIL` line and
//! fails when its criterion does.
//!
//! The heavy criteria share one generated 300-episode suite and hold a lock
//! while they run so the timing criterion is not measured under contention.

mod common;

use std::collections::BinaryHeap;
use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use evenav::grid::{Cell, Grid};
use evenav::harness::*;
use evenav::mapping::{project_observation, MapConfig, SemanticMap};
use evenav::planner::fmm_field;
use evenav::policy::*;
use evenav::rng::stream;
use evenav::world::{Action, Pose, SensorConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

const SUITE_SEED: u64 = 7;

fn report(n: u32, pass: bool, detail: String) {
    // straight to stdout so the line survives the harness's output capture
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).expect("stdout");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn heavy() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

struct Bench {
    dir: tempfile::TempDir,
    suite: Suite,
}

fn bench() -> &'static Bench {
    static BENCH: OnceLock<Bench> = OnceLock::new();
    BENCH.get_or_init(|| {
        let suite = generate_suite(&SuiteParams::default(), SUITE_SEED).unwrap();
        assert_eq!(suite.episode_count(), 300);
        let dir = tempfile::tempdir().unwrap();
        save_suite(&suite, dir.path()).unwrap();
        Bench { dir, suite }
    })
}

/// EE then EVE with the calibrated synthetic matcher, run single-threaded
/// and timed per config.
fn synthetic_run() -> &'static (Vec<ConfigReport>, Vec<Duration>) {
    static RUN: OnceLock<(Vec<ConfigReport>, Vec<Duration>)> = OnceLock::new();
    RUN.get_or_init(|| {
        let suite = &bench().suite;
        let mut times = Vec::new();
        let mut configs = Vec::new();
        for cfg in [RunConfig::ee(), RunConfig::eve()] {
            let t = Instant::now();
            let r = run_benchmark(std::slice::from_ref(&cfg), suite, 1).unwrap();
            times.push(t.elapsed());
            configs.push(r.configs.into_iter().next().unwrap());
        }
        (configs, times)
    })
}

fn cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_evenav")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Plain Dijkstra with the planner's connectivity: 8 neighbours, diagonal
/// moves need both side cells free.
fn dijkstra(blocked: &Grid<bool>, seeds: &[Cell], res: f64) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    let (w, h) = (blocked.width() as i32, blocked.height() as i32);
    let free = |x: i32, y: i32| x >= 0 && y >= 0 && x < w && y < h && !blocked.get(Cell::new(x, y)).unwrap();
    let mut dist = vec![f64::INFINITY; (w * h) as usize];
    let mut heap = BinaryHeap::new();
    for s in seeds {
        if free(s.x, s.y) {
            dist[(s.y * w + s.x) as usize] = 0.0;
            heap.push(Item(0.0, (s.y * w + s.x) as usize));
        }
    }
    while let Some(Item(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let (x, y) = (i as i32 % w, i as i32 / w);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if !free(nx, ny) || (dx != 0 && dy != 0 && !(free(x + dx, y) && free(x, y + dy))) {
                continue;
            }
            let nd = d + if dx != 0 && dy != 0 { res * 2f64.sqrt() } else { res };
            let j = (ny * w + nx) as usize;
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Item(nd, j));
            }
        }
    }
    dist
}

#[test]
fn criterion_01_distance_field_matches_dijkstra() {
    let mut rng = stream(1001, &[]);
    let mut maps = Vec::new();
    for _ in 0..50 {
        let density = rng.random_range(0.0..0.35);
        let mut g = Grid::filled(50, 50, false);
        for c in g.cells().collect::<Vec<_>>() {
            g.set(c, rng.random_bool(density));
        }
        let goal = loop {
            let cells: Vec<Cell> =
                (0..rng.random_range(1..8)).map(|_| Cell::new(rng.random_range(0..50), rng.random_range(0..50))).collect();
            if cells.iter().any(|c| !g.get(*c).unwrap()) {
                break GoalMap::from_cells(50, 50, cells).unwrap();
            }
        };
        maps.push((g, goal));
    }
    let t = Instant::now();
    let fields: Vec<_> = maps.iter().map(|(g, goal)| fmm_field(g, goal, 0.25).unwrap()).collect();
    let elapsed = t.elapsed();
    let mut worst = 0.0f64;
    let mut mismatched_reach = 0;
    for ((g, goal), f) in maps.iter().zip(&fields) {
        let oracle = dijkstra(g, &goal.cells(), 0.25);
        for (c, v) in f.values().iter() {
            let o = oracle[(c.y * 50 + c.x) as usize];
            if o.is_finite() != v.is_finite() {
                mismatched_reach += 1;
            } else if o.is_finite() {
                worst = worst.max((v - o).abs());
            }
        }
    }
    let pass = worst <= 0.25 && mismatched_reach == 0 && elapsed < Duration::from_secs(5);
    report(1, pass, format!("max |field - dijkstra| = {worst:.3e} m, reach mismatches {mismatched_reach}, {elapsed:.2?}"));
}

/// band -> threshold -> tp from the study CSV.
fn reid_table() -> &'static Vec<(String, u32, f64)> {
    static TABLE: OnceLock<Vec<(String, u32, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let b = bench();
        let d = b.dir.path();
        let params = d.join("matcher.toml");
        let csv = d.join("reid.csv");
        // fit on one draw of view poses, evaluate on a fresh one
        cli(&["calibrate", "--suite", d.to_str().unwrap(), "--seed", "2", "--out", params.to_str().unwrap()]);
        cli(&[
            "reid-study",
            "--suite",
            d.to_str().unwrap(),
            "--params",
            params.to_str().unwrap(),
            "--samples",
            "10000",
            "--out",
            csv.to_str().unwrap(),
        ]);
        std::fs::read_to_string(&csv)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect()
    })
}

fn tp(band: &str, t: u32) -> f64 {
    reid_table().iter().find(|(b, th, _)| b == band && *th == t).map(|r| r.2).unwrap()
}

#[test]
fn criterion_02_reid_calibration() {
    let _g = heavy();
    let targets = [("easy", 60, 0.651), ("medium", 60, 0.569), ("hard", 60, 0.380), ("hard", 100, 0.090)];
    let mut detail = Vec::new();
    let mut pass = true;
    for (band, t, want) in targets {
        let got = tp(band, t);
        pass &= (got - want).abs() <= 0.02;
        detail.push(format!("{band}@{t} {got:.3} (target {want})"));
    }
    report(2, pass, detail.join(", "));
}

#[test]
fn criterion_03_tp_monotone_in_difficulty() {
    let _g = heavy();
    let mut pass = true;
    let mut detail = Vec::new();
    for t in [20, 40, 60, 80, 100] {
        let row = [tp("easy", t), tp("medium", t), tp("hard", t)];
        pass &= row[0] >= row[1] && row[1] >= row[2];
        detail.push(format!("{t}: {:.3}/{:.3}/{:.3}", row[0], row[1], row[2]));
    }
    report(3, pass, detail.join(", "));
}

/// Two-sided exact binomial test on discordant pairs.
fn sign_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_choose - n as f64 * 2f64.ln()).exp();
    }
    (2.0 * tail).min(1.0)
}

#[test]
fn criterion_04_eve_beats_ee() {
    let _g = heavy();
    let (r, _) = synthetic_run();
    let (ee, eve) = (&r[0], &r[1]);
    let s = |c: &ConfigReport| c.results.iter().filter(|r| r.success).count() as f64 / c.results.len() as f64;
    let (wins, losses) = ee.results.iter().zip(&eve.results).fold((0, 0), |(w, l), (a, b)| match (a.success, b.success) {
        (false, true) => (w + 1, l),
        (true, false) => (w, l + 1),
        _ => (w, l),
    });
    let gap = s(eve) - s(ee);
    let p = sign_p(wins, losses);
    let pass = gap >= 0.03 && p < 0.05;
    report(
        4,
        pass,
        format!("EE {:.3}, EVE {:.3}, gap {gap:+.3}, wins {wins} losses {losses}, sign test p = {p:.4}", s(ee), s(eve)),
    );
}

#[test]
fn criterion_05_oracle_upper_bound() {
    let _g = heavy();
    let r = run_benchmark(&[RunConfig::ee().with_oracle(), RunConfig::eve().with_oracle()], &bench().suite, 1).unwrap();
    let s: Vec<f64> = r.configs.iter().map(|c| c.metrics.unwrap().success_rate).collect();
    let pass = s[1] >= 0.95 && (s[1] - s[0]).abs() <= 0.02;
    report(5, pass, format!("oracle EE {:.3}, oracle EVE {:.3}", s[0], s[1]));
}

#[test]
fn criterion_06_metric_properties() {
    let mut rng = stream(1006, &[]);
    let fixture = |success: bool, p: f64, l: f64| EpisodeResult {
        success,
        path_length: p,
        shortest_length: l,
        steps: 1,
        stop_called: success,
        termination: if success { Termination::Success } else { Termination::Timeout },
        diagnostics: None,
    };
    let mut violations = 0;
    for _ in 0..100_000 {
        let r = fixture(rng.random_bool(0.5), rng.random_range(0.0..30.0), rng.random_range(0.0..30.0));
        let m = compute_metrics(std::slice::from_ref(&r)).unwrap();
        let s = if r.success { 1.0 } else { 0.0 };
        if !(0.0 <= m.spl && m.spl <= m.success_rate && m.success_rate <= 1.0 && m.success_rate == s) {
            violations += 1;
        }
    }
    let one = compute_metrics(&[fixture(true, 4.0, 4.0)]).unwrap();
    let zero = compute_metrics(&[fixture(false, 4.0, 4.0)]).unwrap();
    let half = compute_metrics(&[fixture(true, 8.0, 4.0)]).unwrap();
    let units = one.spl == 1.0 && zero.spl == 0.0 && half.spl == 0.5;
    report(6, violations == 0 && units, format!("{violations} violations in 100000 fixtures, unit cases {}", if units { "exact" } else { "wrong" }));
}

#[test]
fn criterion_07_mapping_invariants() {
    let mut violations = Vec::new();
    for ep in 0..100u64 {
        let mut rng = stream(1007, &[ep]);
        let world = generate_world(&WorldParams::default(), &mut rng).unwrap();
        let cfg = MapConfig { width: world.width(), height: world.height(), resolution: world.resolution() };
        let mut map = SemanticMap::empty(cfg);
        let (x, y) = common::random_free_point(&mut rng, &world);
        let mut pose = Pose::new(x, y, rng.random_range(-3.1..3.1));
        let mut explored = 0;
        for step in 0..100 {
            let obs = world.sense(&pose, &SensorConfig::default());
            map.fuse_in_place(&project_observation(&obs, &cfg)).unwrap();
            let now = map.cells().filter(|c| map.raw(*c) & 1 != 0).count();
            // category bits imply obstacle, obstacle implies explored
            let hierarchy = map.cells().all(|c| {
                let v = map.raw(c);
                (v >> 2 == 0 || v & 2 != 0) && (v & 2 == 0 || v & 1 != 0)
            });
            if now < explored || !hierarchy {
                violations.push((ep, step));
            }
            explored = now;
            pose = world.step(&pose, &Action::new(rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)));
        }
    }
    report(7, violations.is_empty(), format!("100 walks x 100 steps, violations {violations:?}"));
}

#[test]
fn criterion_08_switch_properties() {
    let curves = prop::collection::vec((0.1f64..2.0, 0.0f64..50.0, 0.0f64..50.0), 1..5).prop_map(|steps| {
        let (mut d, mut u, mut l) = (0.0, 0.0, 0.0);
        ThresholdCurves::new(
            steps
                .into_iter()
                .map(|(dd, du, dl)| {
                    d += dd;
                    l += dl;
                    u = (u + du).max(l);
                    Breakpoint::new(d, u, l)
                })
                .collect(),
        )
        .unwrap()
    });
    let run = |name: &str, f: &dyn Fn(&mut TestRunner) -> Result<(), String>| {
        let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
        let r = f(&mut runner);
        (name.to_string(), r)
    };
    let results = vec![
        run("totality", &|r| {
            r.run(&(curves.clone(), any::<bool>(), 0.0f64..10.0, 0u32..400), |(c, e, d, w)| {
                let s = f_switch(e, d, w, &c);
                let (u, l) = (c.upper(d), c.lower(d));
                let expect = if !e {
                    SwitchSignal::Exploration
                } else if w as f64 >= u {
                    SwitchSignal::Exploitation
                } else if (w as f64) < l {
                    SwitchSignal::Exploration
                } else {
                    SwitchSignal::Verification
                };
                prop_assert_eq!(s, expect);
                prop_assert_eq!(s, f_switch(e, d, w, &c));
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
        run("monotonicity", &|r| {
            r.run(&(curves.clone(), 0.0f64..10.0, 0u32..400, 0u32..400), |(c, d, a, b)| {
                prop_assert!(f_switch(true, d, a.min(b), &c) <= f_switch(true, d, a.max(b), &c));
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
        run("latch and rejection growth", &|r| {
            r.run(&any::<u64>(), |seed| {
                let mut rng = stream(seed, &[]);
                let mut state = SwitchState::new(10, 10);
                for _ in 0..12 {
                    let cells: Vec<Cell> =
                        (0..rng.random_range(1..4)).map(|_| Cell::new(rng.random_range(0..10), rng.random_range(0..10))).collect();
                    let t = PotentialTarget { cells: cells.clone(), distance: 1.0 };
                    let signal = [SwitchSignal::Exploration, SwitchSignal::Verification, SwitchSignal::Exploitation]
                        [rng.random_range(0..3)];
                    let proj = (signal != SwitchSignal::Exploration).then(|| GoalMap::from_cells(10, 10, cells).unwrap());
                    let before = state.clone();
                    state = update_switch(state, signal, Some(&t), proj).unwrap();
                    if before.mode() == SwitchSignal::Exploitation {
                        prop_assert_eq!(&state, &before);
                    }
                    prop_assert!(before.rejected().true_cells().all(|c| state.rejected().get(c) == Some(&true)));
                    prop_assert_eq!(state.mode() == SwitchSignal::Exploitation, state.confirmed_goal().is_some());
                }
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
        run("fixed-threshold reduction", &|r| {
            let fixed = ThresholdCurves::constant(60.0);
            r.run(&(0.0f64..20.0, 0u32..1000), |(d, w)| {
                let s = f_switch(true, d, w, &fixed);
                prop_assert_ne!(s, SwitchSignal::Verification);
                prop_assert_eq!(s == SwitchSignal::Exploitation, w >= 60);
                Ok(())
            })
            .map_err(|e| e.to_string())
        }),
    ];
    let failed: Vec<String> = results.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    report(8, failed.is_empty(), format!("4 suites x 10000 cases; failures {failed:?}"));
}

#[test]
fn criterion_09_eval_is_deterministic() {
    let _g = heavy();
    let b = bench();
    let d = b.dir.path();
    let write_cfg = |cfg: RunConfig| -> PathBuf {
        let p = d.join(format!("{}.toml", cfg.name));
        std::fs::write(&p, cfg.to_toml()).unwrap();
        p
    };
    let ee = write_cfg(RunConfig::ee());
    let eve = write_cfg(RunConfig::eve());
    let outs: Vec<Vec<u8>> = ["1", "2"]
        .iter()
        .map(|threads| {
            let out = d.join(format!("eval_{threads}.csv"));
            let args = [
                "eval", "--config", ee.to_str().unwrap(), "--config", eve.to_str().unwrap(), "--suite", d.to_str().unwrap(),
                "--threads", threads, "--out", out.to_str().unwrap(),
            ];
            cli(&args);
            std::fs::read(out).unwrap()
        })
        .collect();
    let same = outs[0] == outs[1] && !outs[0].is_empty();
    report(9, same, format!("two eval runs (1 and 2 threads), {} bytes, identical: {same}", outs[0].len()));
}

#[test]
fn criterion_10_runtime() {
    let _g = heavy();
    let (_, times) = synthetic_run();
    let worst = times.iter().max().unwrap();
    report(10, *worst < Duration::from_secs(60), format!("300 episodes single-threaded: EE {:.1?}, EVE {:.1?}", times[0], times[1]));
}
