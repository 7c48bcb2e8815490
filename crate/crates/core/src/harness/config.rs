//! Run configuration, stored as TOML with a `format_version` key.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::matching::{calibrate_synthetic, BandEdges, Matcher, DEFAULT_NEGATIVE, REFERENCE_ANCHORS};
use crate::planner::PlannerConfig;
use crate::policy::ThresholdCurves;
use crate::world::SensorConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyVariant {
    Eve,
    Ee,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplorationVariant {
    Frontier,
    Random,
}

/// How match scores of one instance correlate across frames within an
/// episode. The per-frame marginal is unchanged: the score is
/// `√s · z_pair + √(1 − s) · z_view` with `s = pair_share`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchNoise {
    /// Share of score variance fixed per (goal, instance) pair.
    pub pair_share: f64,
    /// Reuse the view term for the same cell and heading octant instead of
    /// drawing it afresh every frame.
    pub per_view: bool,
}

impl MatchNoise {
    /// Independent draw every frame.
    pub const IID: MatchNoise = MatchNoise { pair_share: 0.0, per_view: false };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub policy: PolicyVariant,
    pub exploration: ExplorationVariant,
    /// Single threshold of the two-way policy.
    pub ee_threshold: f64,
    /// Consecutive undecided verification steps before the target is
    /// rejected.
    pub verify_patience: usize,
    pub sensor: SensorConfig,
    pub planner: PlannerConfig,
    pub matcher: Matcher,
    pub match_noise: MatchNoise,
    pub curves: ThresholdCurves,
}

impl RunConfig {
    /// EVE with the synthetic matcher calibrated on the reference anchors.
    pub fn eve() -> Self {
        let params = calibrate_synthetic(&REFERENCE_ANCHORS, BandEdges::default(), DEFAULT_NEGATIVE)
            .expect("reference anchors are feasible");
        Self {
            format_version: FORMAT_VERSION,
            name: "eve".into(),
            seed: 1,
            policy: PolicyVariant::Eve,
            exploration: ExplorationVariant::Frontier,
            ee_threshold: 60.0,
            verify_patience: 25,
            sensor: SensorConfig::default(),
            planner: PlannerConfig::default(),
            matcher: Matcher::Synthetic(params),
            match_noise: MatchNoise { pair_share: 0.8, per_view: true },
            curves: ThresholdCurves::default(),
        }
    }

    pub fn ee() -> Self {
        Self { name: "ee".into(), policy: PolicyVariant::Ee, ..Self::eve() }
    }

    pub fn with_oracle(mut self) -> Self {
        self.matcher = Matcher::Oracle;
        self.name = format!("{}-oracle", self.name);
        self
    }

    /// Curves the switch actually uses.
    pub fn active_curves(&self) -> ThresholdCurves {
        match self.policy {
            PolicyVariant::Eve => self.curves.clone(),
            PolicyVariant::Ee => ThresholdCurves::constant(self.ee_threshold),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format_version {} (expected {FORMAT_VERSION})", self.format_version));
        }
        let s = &self.sensor;
        if s.rays == 0 || !(s.fov > 0.0 && s.fov <= std::f64::consts::TAU) || !(s.max_range > 0.0) {
            return bad("sensor needs rays > 0, fov in (0, 2π] and max_range > 0".into());
        }
        let p = &self.planner;
        if !(p.feasible_radius > 0.0) || !(p.stop_distance > 0.0) || p.inflation < 0 {
            return bad("planner radii must be positive and inflation non-negative".into());
        }
        if p.stuck_n == 0 || p.stuck_window == 0 || p.explore_refresh == 0 {
            return bad("planner counters must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.match_noise.pair_share) {
            return bad("match_noise.pair_share must lie in [0, 1]".into());
        }
        if !(self.ee_threshold >= 0.0) {
            return bad("ee_threshold must be non-negative".into());
        }
        if let Matcher::Synthetic(params) = &self.matcher {
            params.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        ThresholdCurves::new(self.curves.breakpoints().to_vec()).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
