//! Paired benchmark over a fixed suite of worlds and episodes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{compute_metrics, generate_episodes, generate_world, run_episode, EpisodeParams, EpisodeResult, HarnessError};
use super::{Metrics, RunConfig, WorldParams};
use crate::rng::{derive_seed, stream};
use crate::world::{load_episodes, load_world, save_episodes, save_world, Episode, World};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub world: World,
    pub episodes: Vec<Episode>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Suite {
    pub entries: Vec<SuiteEntry>,
}

impl Suite {
    pub fn episode_count(&self) -> usize {
        self.entries.iter().map(|e| e.episodes.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub worlds: usize,
    pub episodes_per_world: usize,
    pub world: WorldParams,
    pub episode: EpisodeParams,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self { worlds: 20, episodes_per_world: 15, world: WorldParams::default(), episode: EpisodeParams::default() }
    }
}

pub fn generate_suite(params: &SuiteParams, seed: u64) -> Result<Suite, HarnessError> {
    let entries = (0..params.worlds)
        .map(|i| {
            let world = generate_world(&params.world, &mut stream(seed, &[i as u64, 0]))?;
            let episodes =
                generate_episodes(&world, params.episodes_per_world, &params.episode, &mut stream(seed, &[i as u64, 1]))?;
            Ok(SuiteEntry { world, episodes })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(Suite { entries })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

/// Writes `world_NNN.txt` / `episodes_NNN.txt` pairs.
pub fn save_suite(suite: &Suite, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, e) in suite.entries.iter().enumerate() {
        let wp = dir.join(format!("world_{i:03}.txt"));
        fs::write(&wp, save_world(&e.world)).map_err(io_err(&wp))?;
        let ep = dir.join(format!("episodes_{i:03}.txt"));
        fs::write(&ep, save_episodes(&e.episodes)).map_err(io_err(&ep))?;
    }
    Ok(())
}

pub fn load_suite(dir: &Path, max_range: f64) -> Result<Suite, HarnessError> {
    if !dir.is_dir() {
        return Err(HarnessError::Io {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "suite directory not found"),
        });
    }
    let mut entries = Vec::new();
    for i in 0.. {
        let wp = dir.join(format!("world_{i:03}.txt"));
        if !wp.exists() {
            break;
        }
        let world = load_world(&fs::read_to_string(&wp).map_err(io_err(&wp))?)?;
        let ep = dir.join(format!("episodes_{i:03}.txt"));
        let episodes = load_episodes(&fs::read_to_string(&ep).map_err(io_err(&ep))?, &world, max_range)?;
        entries.push(SuiteEntry { world, episodes });
    }
    if entries.is_empty() {
        return Err(HarnessError::Config(format!("no world_000.txt in {}", dir.display())));
    }
    Ok(Suite { entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub name: String,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
    pub results: Vec<EpisodeResult>,
}

/// Comparison of one config against the first (baseline) config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub baseline: String,
    pub config: String,
    pub d_success: f64,
    pub d_spl: f64,
    /// Episodes where only the config succeeded.
    pub wins: usize,
    /// Episodes where only the baseline succeeded.
    pub losses: usize,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub configs: Vec<ConfigReport>,
    pub deltas: Vec<PairedDelta>,
}

/// Two-sided exact sign test on discordant pairs.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses) as u64;
    let b = Binomial::new(0.5, n).expect("valid binomial");
    (2.0 * b.cdf(k)).min(1.0)
}

/// Runs every config on every episode. Episode seeds depend only on the
/// config seed and the (world, episode) index, so configs sharing a seed are
/// paired with common random numbers; results come back in suite order
/// whatever the thread count.
pub fn run_benchmark(cfgs: &[RunConfig], suite: &Suite, threads: usize) -> Result<BenchmarkReport, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let jobs: Vec<(usize, usize)> = suite
        .entries
        .iter()
        .enumerate()
        .flat_map(|(wi, e)| (0..e.episodes.len()).map(move |ei| (wi, ei)))
        .collect();
    let mut configs = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        if let Err(e) = cfg.validate() {
            configs.push(ConfigReport { name: cfg.name.clone(), metrics: None, error: Some(e.to_string()), results: vec![] });
            continue;
        }
        let results: Vec<EpisodeResult> = pool.install(|| {
            jobs.par_iter()
                .map(|&(wi, ei)| {
                    let entry = &suite.entries[wi];
                    let seed = derive_seed(cfg.seed, &[wi as u64, ei as u64]);
                    run_episode(&entry.world, &entry.episodes[ei], cfg, seed)
                })
                .collect()
        });
        let (metrics, error) = match compute_metrics(&results) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        configs.push(ConfigReport { name: cfg.name.clone(), metrics, error, results });
    }
    let mut deltas = Vec::new();
    if let Some(base) = configs.first().filter(|b| b.metrics.is_some()) {
        for other in configs.iter().skip(1).filter(|c| c.metrics.is_some()) {
            let (bm, om) = (base.metrics.expect("checked"), other.metrics.expect("checked"));
            let pairs = base.results.iter().zip(&other.results);
            let wins = pairs.clone().filter(|(b, o)| o.success && !b.success).count();
            let losses = pairs.filter(|(b, o)| b.success && !o.success).count();
            deltas.push(PairedDelta {
                baseline: base.name.clone(),
                config: other.name.clone(),
                d_success: om.success_rate - bm.success_rate,
                d_spl: om.spl - bm.spl,
                wins,
                losses,
                p_value: sign_test(wins, losses),
            });
        }
    }
    Ok(BenchmarkReport { configs, deltas })
}

impl BenchmarkReport {
    pub fn config(&self, name: &str) -> Option<&ConfigReport> {
        self.configs.iter().find(|c| c.name == name)
    }

    /// One row per config; paired columns compare against the first config.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,episodes,success,spl,delta_success,delta_spl,wins,losses,sign_test_p,error\n");
        for c in &self.configs {
            let d = self.deltas.iter().find(|d| d.config == c.name);
            let m = c.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                c.name,
                c.results.len(),
                m.map(|m| format!("{:.6}", m.success_rate)).unwrap_or_default(),
                m.map(|m| format!("{:.6}", m.spl)).unwrap_or_default(),
                d.map(|d| format!("{:.6}", d.d_success)).unwrap_or_default(),
                d.map(|d| format!("{:.6}", d.d_spl)).unwrap_or_default(),
                d.map(|d| d.wins.to_string()).unwrap_or_default(),
                d.map(|d| d.losses.to_string()).unwrap_or_default(),
                d.map(|d| format!("{:.6}", d.p_value)).unwrap_or_default(),
                c.error.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        out
    }

    /// Per-episode rows, in suite order.
    pub fn episodes_csv(&self, suite: &Suite) -> String {
        let mut out = String::from("config,world,episode,success,spl,path_length,shortest_length,steps,termination\n");
        for c in &self.configs {
            let ids = suite.entries.iter().enumerate().flat_map(|(wi, e)| (0..e.episodes.len()).map(move |ei| (wi, ei)));
            for ((wi, ei), r) in ids.zip(&c.results) {
                let _ = writeln!(
                    out,
                    "{},{wi},{ei},{},{:.6},{:.6},{:.6},{},{}",
                    c.name,
                    r.success,
                    r.spl(),
                    r.path_length,
                    r.shortest_length,
                    r.steps,
                    r.termination.name()
                );
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.configs {
            match (&c.metrics, &c.error) {
                (Some(m), _) => {
                    let errors = c.results.iter().filter(|r| r.diagnostics.is_some()).count();
                    let _ = writeln!(
                        out,
                        "{:<16} episodes {:>4}  success {:.3}  spl {:.3}  errors {}",
                        c.name, m.episodes, m.success_rate, m.spl, errors
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(out, "{:<16} FAILED: {e}", c.name);
                }
                (None, None) => {}
            }
        }
        for d in &self.deltas {
            let _ = writeln!(
                out,
                "{} vs {}: Δsuccess {:+.3}  Δspl {:+.3}  wins {} losses {}  sign test p = {:.4}",
                d.config, d.baseline, d.d_success, d.d_spl, d.wins, d.losses, d.p_value
            );
        }
        out
    }
}
