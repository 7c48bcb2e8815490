use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use evenav::harness::{
    generate_suite, load_suite, run_benchmark, run_episode_traced, save_suite, trace_csv, EpisodeParams, HarnessError,
    RunConfig, SuiteParams, WorldParams,
};
use evenav::matching::{
    build_reid_dataset, calibrate_synthetic, calibrate_to_views, Anchor, Band, BandEdges, Gaussian, Label, Matcher,
    ReidConfig, ReidSample, SyntheticMatcherParams, DEFAULT_NEGATIVE, REFERENCE_ANCHORS,
};
use evenav::rng::{derive_seed, stream};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "evenav", version, about = "Instance-goal navigation in a 2D gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Eve,
    Ee,
}

#[derive(Subcommand)]
enum Command {
    /// Generate worlds and episodes into a suite directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        worlds: usize,
        #[arg(long, default_value_t = 15)]
        episodes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 9)]
        rooms: usize,
        #[arg(long, default_value_t = 0.02)]
        density: f64,
        #[arg(long, default_value_t = 2)]
        per_category: usize,
        #[arg(long, default_value_t = 500)]
        max_steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a default run config.
    InitConfig {
        #[arg(long, value_enum, default_value = "eve")]
        policy: PolicyArg,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one config over a suite; metrics JSON and optional traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-episode trace CSVs.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Paired comparison of several configs; the first is the baseline.
    Eval {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-episode results CSV.
        #[arg(long)]
        episodes_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Confusion table of a matcher on a re-identification dataset.
    ReidStudy {
        #[arg(long)]
        suite: PathBuf,
        /// Synthetic matcher params (TOML); defaults to calibration on the
        /// reference anchors.
        #[arg(long, conflicts_with = "oracle")]
        params: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        /// Target positive samples per band (negatives match it).
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
        thresholds: Vec<u32>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit synthetic matcher params to true-positive anchors.
    Calibrate {
        /// `band:threshold:tp`, repeatable; defaults to the reference anchors.
        #[arg(long = "anchor")]
        anchors: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_NEGATIVE.mu)]
        negative_mu: f64,
        #[arg(long, default_value_t = DEFAULT_NEGATIVE.sigma)]
        negative_sigma: f64,
        /// Fit against the positive view distances of this suite's
        /// re-identification dataset instead of the band centres.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Dataset size per band when fitting against a suite.
        #[arg(long, default_value_t = 10_000, requires = "suite")]
        samples: usize,
        #[arg(long, default_value_t = 1, requires = "suite")]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::from_toml(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn parse_anchor(s: &str) -> Result<Anchor, CliError> {
    let bad = || CliError::Usage(format!("anchor `{s}` is not band:threshold:tp"));
    let mut parts = s.split(':');
    let (Some(b), Some(t), Some(tp), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    Ok(Anchor::new(b.parse().map_err(|_| bad())?, t.parse().map_err(|_| bad())?, tp.parse().map_err(|_| bad())?))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { out, worlds, episodes, size, rooms, density, per_category, max_steps, seed } => {
            let params = SuiteParams {
                worlds,
                episodes_per_world: episodes,
                world: WorldParams {
                    size,
                    rooms,
                    obstacle_density: density,
                    instances_per_category: per_category,
                    ..WorldParams::default()
                },
                episode: EpisodeParams { max_steps, ..EpisodeParams::default() },
            };
            let suite = generate_suite(&params, seed)?;
            save_suite(&suite, &out)?;
            eprintln!("wrote {} worlds, {} episodes to {}", suite.entries.len(), suite.episode_count(), out.display());
        }
        Command::InitConfig { policy, oracle, out } => {
            let mut cfg = match policy {
                PolicyArg::Eve => RunConfig::eve(),
                PolicyArg::Ee => RunConfig::ee(),
            };
            if oracle {
                cfg = cfg.with_oracle();
            }
            emit(out.as_deref(), &cfg.to_toml())?;
        }
        Command::Run { config, suite, out, trace_dir, threads } => {
            let cfg = load_config(&config)?;
            let suite = load_suite(&suite, cfg.sensor.max_range)?;
            let report = run_benchmark(std::slice::from_ref(&cfg), &suite, threads)?;
            let c = &report.configs[0];
            if let Some(dir) = trace_dir {
                for (wi, entry) in suite.entries.iter().enumerate() {
                    for (ei, ep) in entry.episodes.iter().enumerate() {
                        let seed = derive_seed(cfg.seed, &[wi as u64, ei as u64]);
                        let (_, rows) = run_episode_traced(&entry.world, ep, &cfg, seed);
                        write(&dir.join(format!("trace_{wi:03}_{ei:03}.csv")), &trace_csv(&rows))?;
                    }
                }
            }
            let json = serde_json::json!({
                "config": c.name,
                "metrics": c.metrics,
                "error": c.error,
                "results": c.results,
            });
            emit(out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&json).expect("json")))?;
            eprint!("{}", report.summary());
        }
        Command::Eval { configs, suite, out, episodes_out, threads } => {
            let cfgs = configs.iter().map(|p| load_config(p)).collect::<Result<Vec<_>, _>>()?;
            let max_range = cfgs.iter().map(|c| c.sensor.max_range).fold(0.0, f64::max);
            let suite = load_suite(&suite, max_range)?;
            let report = run_benchmark(&cfgs, &suite, threads)?;
            emit(out.as_deref(), &report.to_csv())?;
            if let Some(p) = episodes_out {
                write(&p, &report.episodes_csv(&suite))?;
            }
            eprint!("{}", report.summary());
        }
        Command::ReidStudy { suite, params, oracle, samples, thresholds, seed, out } => {
            let matcher = if oracle {
                Matcher::Oracle
            } else {
                let p: SyntheticMatcherParams = match params {
                    Some(path) => toml::from_str(&read(&path)?)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
                    None => calibrate_synthetic(&REFERENCE_ANCHORS, BandEdges::default(), DEFAULT_NEGATIVE)
                        .map_err(|e| CliError::Runtime(e.to_string()))?,
                };
                p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                Matcher::Synthetic(p)
            };
            let bands = match &matcher {
                Matcher::Synthetic(p) => p.bands,
                Matcher::Oracle => BandEdges::default(),
            };
            let dataset = reid_dataset(&suite, bands, samples, seed)?;
            let table = evenav::matching::confusion_study(&dataset, &matcher, &thresholds, &mut stream(seed, &[3]));
            emit(out.as_deref(), &table.to_csv())?;
            eprintln!("{} samples", dataset.len());
        }
        Command::Calibrate { anchors, negative_mu, negative_sigma, suite, samples, seed, out } => {
            let anchors = if anchors.is_empty() {
                REFERENCE_ANCHORS.to_vec()
            } else {
                anchors.iter().map(|a| parse_anchor(a)).collect::<Result<_, _>>()?
            };
            let negative = Gaussian { mu: negative_mu, sigma: negative_sigma };
            let bands = BandEdges::default();
            let params = match suite {
                Some(dir) => {
                    let views: Vec<(Band, f64)> = reid_dataset(&dir, bands, samples, seed)?
                        .into_iter()
                        .filter(|s| s.label == Label::Positive)
                        .map(|s| (s.band, s.view.distance))
                        .collect();
                    calibrate_to_views(&anchors, bands, negative, &views)
                }
                None => calibrate_synthetic(&anchors, bands, negative),
            }
            .map_err(|e| CliError::Usage(e.to_string()))?;
            emit(out.as_deref(), &toml::to_string(&params).expect("params serialise"))?;
        }
    }
    Ok(())
}

/// Re-identification dataset over a whole suite, `samples` positives and as
/// many negatives per band.
fn reid_dataset(dir: &Path, bands: BandEdges, samples: usize, seed: u64) -> Result<Vec<ReidSample>, CliError> {
    let suite = load_suite(dir, bands.max_distance())?;
    let anchors = suite.episode_count().max(1);
    // bands take turns within an anchor, so round up to a multiple of three
    let per_anchor = 3 * samples.div_ceil(anchors);
    let cfg = ReidConfig { bands, ..ReidConfig::default() };
    let mut dataset = Vec::new();
    for (wi, entry) in suite.entries.iter().enumerate() {
        let mut rng = stream(seed, &[wi as u64, 2]);
        let part = build_reid_dataset(&entry.world, &entry.episodes, per_anchor, &cfg, &mut rng)
            .map_err(|e| CliError::Runtime(format!("world {wi}: {e}")))?;
        dataset.extend(part);
    }
    Ok(dataset)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
