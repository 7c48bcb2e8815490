use serde::{Deserialize, Serialize};

use super::{EpisodeResult, HarnessError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub spl: f64,
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<Metrics, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let n = results.len() as f64;
    let success = results.iter().filter(|r| r.success).count() as f64 / n;
    let spl = results.iter().map(EpisodeResult::spl).sum::<f64>() / n;
    Ok(Metrics { episodes: results.len(), success_rate: success, spl })
}
