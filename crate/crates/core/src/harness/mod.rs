//! Episode loop, metrics, world and episode generators, and the paired
//! benchmark.

mod benchmark;
mod config;
mod episode;
mod generate;
mod metrics;

use thiserror::Error;

pub use benchmark::{
    generate_suite, load_suite, run_benchmark, save_suite, sign_test, BenchmarkReport, ConfigReport, PairedDelta, Suite,
    SuiteEntry, SuiteParams,
};
pub use config::{ExplorationVariant, MatchNoise, PolicyVariant, RunConfig, FORMAT_VERSION};
pub use episode::{run_episode, run_episode_traced, trace_csv, EpisodeResult, Termination, TraceRow, TRACE_HEADER};
pub use generate::{generate_episodes, generate_world, EpisodeParams, WorldParams};
pub use metrics::{compute_metrics, Metrics};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("episode: {0}")]
    Episode(String),
    #[error("no episode results")]
    EmptyResults,
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("io on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
    #[error(transparent)]
    Map(#[from] crate::mapping::MapError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
}
