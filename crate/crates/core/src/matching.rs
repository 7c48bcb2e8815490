//! Matched-keypoint counts between the current view and the goal picture,
//! plus the re-identification dataset and its confusion study.
//!
//! Two matchers implement the same interface. The oracle compares instance
//! identities. The synthetic matcher draws `ω = round(max(0, N(μ, σ)))` with
//! parameters depending on whether the view shows the goal instance and, for
//! positives, on the viewing distance.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use thiserror::Error;

use crate::grid::Cell;
use crate::rng;
use crate::world::{Category, Episode, GoalDescriptor, Pose, World, WorldError};

/// Oracle count reported for a same-instance view.
pub const OMEGA_HIGH: u32 = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("calibration infeasible: {0}")]
    Infeasible(String),
    #[error("invalid matcher parameters: {0}")]
    InvalidParams(String),
    #[error("no valid {label} view for anchor {anchor} in the {band} band after {attempts} attempts")]
    SampleExhausted { anchor: usize, band: Band, label: Label, attempts: usize },
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Easy,
    Medium,
    Hard,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Easy, Band::Medium, Band::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Easy => "easy",
            Band::Medium => "medium",
            Band::Hard => "hard",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Band::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| format!("unknown band '{s}'"))
    }
}

/// Distance edges `[e0, e1, e2, e3]`: easy is `[e0, e1)`, medium `[e1, e2)`,
/// hard `[e2, e3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEdges(pub [f64; 4]);

impl Default for BandEdges {
    fn default() -> Self {
        Self([0.5, 2.5, 4.5, 6.5])
    }
}

impl BandEdges {
    pub fn validate(&self) -> Result<(), MatchError> {
        let e = self.0;
        if e[0] >= 0.0 && e.windows(2).all(|w| w[0] < w[1]) && e.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(MatchError::InvalidParams(format!("band edges must be increasing and non-negative: {e:?}")))
        }
    }

    pub fn band_of(&self, d: f64) -> Option<Band> {
        Band::ALL.into_iter().find(|b| self.range(*b).contains(&d))
    }

    pub fn range(&self, b: Band) -> std::ops::Range<f64> {
        self.0[b.index()]..self.0[b.index() + 1]
    }

    pub fn center(&self, b: Band) -> f64 {
        let r = self.range(b);
        0.5 * (r.start + r.end)
    }

    pub fn max_distance(&self) -> f64 {
        self.0[3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl Gaussian {
    /// `P(X ≥ t)` of the underlying continuous normal.
    pub fn tail(&self, t: f64) -> f64 {
        1.0 - standard_normal().cdf((t - self.mu) / self.sigma)
    }
}

fn standard_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("unit normal")
}

/// Default negative-view distribution. Negatives essentially never reach
/// 60 matches; near-range thresholds in the twenties still see a few.
pub const DEFAULT_NEGATIVE: Gaussian = Gaussian { mu: 10.0, sigma: 8.0 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMatcherParams {
    pub bands: BandEdges,
    /// Positive-view distribution per band, indexed easy/medium/hard.
    pub positive: [Gaussian; 3],
    pub negative: Gaussian,
}

impl SyntheticMatcherParams {
    pub fn validate(&self) -> Result<(), MatchError> {
        self.bands.validate()?;
        let all_sigma = self.positive.iter().chain([&self.negative]).all(|g| g.sigma > 0.0 && g.sigma.is_finite());
        if !all_sigma {
            return Err(MatchError::InvalidParams("every sigma must be positive".into()));
        }
        let [e, m, h] = self.positive;
        if !(e.mu >= m.mu && m.mu >= h.mu) {
            return Err(MatchError::InvalidParams(format!(
                "positive means must not increase with distance: {} {} {}",
                e.mu, m.mu, h.mu
            )));
        }
        Ok(())
    }

    /// Positive-view distribution at a continuous distance: linear between
    /// band centres, clamped outside them.
    pub fn positive_at(&self, d: f64) -> Gaussian {
        let centers = Band::ALL.map(|b| self.bands.center(b));
        if d <= centers[0] {
            return self.positive[0];
        }
        if d >= centers[2] {
            return self.positive[2];
        }
        let k = if d < centers[1] { 0 } else { 1 };
        let w = (d - centers[k]) / (centers[k + 1] - centers[k]);
        let (a, b) = (self.positive[k], self.positive[k + 1]);
        Gaussian { mu: a.mu + w * (b.mu - a.mu), sigma: a.sigma + w * (b.sigma - a.sigma) }
    }

    /// Analytic true-positive rate at a band centre.
    pub fn tp_rate(&self, band: Band, threshold: u32) -> f64 {
        self.positive[band.index()].tail(threshold as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Matcher {
    Oracle,
    Synthetic(SyntheticMatcherParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    /// Instance under the agent's gaze; only the matcher looks at it.
    pub instance_id: u32,
    pub distance: f64,
    pub category: Category,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub omega: u32,
}

impl Matcher {
    pub fn match_count<R: Rng + ?Sized>(&self, goal: &GoalDescriptor, view: &CandidateView, rng: &mut R) -> MatchResult {
        let z = match self {
            Matcher::Oracle => 0.0,
            Matcher::Synthetic(_) => StandardNormal.sample(rng),
        };
        self.omega_for(goal, view, z)
    }

    /// `ω` for a given standard-normal score; the synthetic matcher maps it
    /// to `round(max(0, μ + σ z))`. Callers that correlate scores across
    /// views go through here.
    pub fn omega_for(&self, goal: &GoalDescriptor, view: &CandidateView, z: f64) -> MatchResult {
        let same = view.instance_id == goal.instance_hint;
        match self {
            Matcher::Oracle => MatchResult { omega: if same { OMEGA_HIGH } else { 0 } },
            Matcher::Synthetic(p) => {
                let g = if same { p.positive_at(view.distance) } else { p.negative };
                MatchResult { omega: (g.mu + g.sigma * z).max(0.0).round() as u32 }
            }
        }
    }
}

/// Target true-positive rate of one band at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub band: Band,
    pub threshold: u32,
    pub tp: f64,
}

impl Anchor {
    pub const fn new(band: Band, threshold: u32, tp: f64) -> Self {
        Self { band, threshold, tp }
    }
}

/// Measured true-positive rates of the local-feature matcher on the
/// re-identification benchmark.
pub const REFERENCE_ANCHORS: [Anchor; 4] = [
    Anchor::new(Band::Easy, 60, 0.651),
    Anchor::new(Band::Medium, 60, 0.569),
    Anchor::new(Band::Hard, 60, 0.380),
    Anchor::new(Band::Hard, 100, 0.090),
];

/// Spread used when no band carries two anchors.
pub const DEFAULT_POSITIVE_SIGMA: f64 = 40.0;

/// Fits positive-view distributions to true-positive anchors.
///
/// A band with two or more anchors fixes both `μ` and `σ` from its quantile
/// constraints. Bands with a single anchor reuse the spread of the hardest
/// fully determined band and solve `μ` alone.
pub fn calibrate_synthetic(
    anchors: &[Anchor],
    bands: BandEdges,
    negative: Gaussian,
) -> Result<SyntheticMatcherParams, MatchError> {
    bands.validate()?;
    let mut by_band: BTreeMap<Band, Vec<Anchor>> = BTreeMap::new();
    for a in anchors {
        if !(a.tp > 0.0 && a.tp < 1.0) {
            return Err(MatchError::Infeasible(format!("tp {} for {} at {} must lie in (0, 1)", a.tp, a.band, a.threshold)));
        }
        by_band.entry(a.band).or_default().push(*a);
    }
    for b in Band::ALL {
        if !by_band.contains_key(&b) {
            return Err(MatchError::Infeasible(format!("no anchor for the {b} band")));
        }
    }

    let mut fitted: [Option<Gaussian>; 3] = [None; 3];
    for (band, list) in &mut by_band {
        list.sort_by_key(|a| a.threshold);
        for pair in list.windows(2) {
            if pair[0].threshold == pair[1].threshold || pair[1].tp >= pair[0].tp {
                return Err(MatchError::Infeasible(format!(
                    "{band} band: tp must strictly decrease with threshold ({} at {}, {} at {})",
                    pair[0].tp, pair[0].threshold, pair[1].tp, pair[1].threshold
                )));
            }
        }
        if list.len() >= 2 {
            fitted[band.index()] = Some(fit_two_or_more(list)?);
        }
    }
    let shared_sigma = Band::ALL
        .iter()
        .rev()
        .find_map(|b| fitted[b.index()].map(|g| g.sigma))
        .unwrap_or(DEFAULT_POSITIVE_SIGMA);
    for b in Band::ALL {
        if fitted[b.index()].is_none() {
            let a = by_band[&b][0];
            let mu = solve_mean(a.threshold as f64, a.tp, shared_sigma)?;
            fitted[b.index()] = Some(Gaussian { mu, sigma: shared_sigma });
        }
    }
    let params = SyntheticMatcherParams { bands, positive: fitted.map(|g| g.expect("all bands fitted")), negative };
    params.validate().map_err(|e| MatchError::Infeasible(e.to_string()))?;
    for a in anchors {
        let got = params.tp_rate(a.band, a.threshold);
        if (got - a.tp).abs() > 1e-3 {
            return Err(MatchError::Infeasible(format!(
                "{} band at {}: fitted tp {got:.4} misses anchor {}",
                a.band, a.threshold, a.tp
            )));
        }
    }
    Ok(params)
}

/// Refits the calibrated params so that each anchor holds on average over a
/// set of positive view distances rather than at the band centre.
///
/// With `μ` interpolated between band centres and clamped beyond them, the
/// rate a band shows on real views depends on how its distances spread, so
/// centre calibration over- or undershoots. This keeps the same shape (one
/// knot per band centre, one shared spread when any band has two anchors) and
/// solves the knots against `P(round(max(0, X)) ≥ t)` averaged over `views`.
pub fn calibrate_to_views(
    anchors: &[Anchor],
    bands: BandEdges,
    negative: Gaussian,
    views: &[(Band, f64)],
) -> Result<SyntheticMatcherParams, MatchError> {
    let mut params = calibrate_synthetic(anchors, bands, negative)?;
    let mut by_band: [Vec<f64>; 3] = Default::default();
    for &(b, d) in views {
        by_band[b.index()].push(d);
    }
    if let Some(b) = Band::ALL.into_iter().find(|b| by_band[b.index()].is_empty()) {
        return Err(MatchError::Infeasible(format!("no views in the {b} band")));
    }
    let fit_sigma = {
        let mut seen = [0usize; 3];
        anchors.iter().for_each(|a| seen[a.band.index()] += 1);
        seen.iter().any(|&n| n >= 2)
    };
    let residuals = |p: &SyntheticMatcherParams| -> Vec<f64> {
        anchors
            .iter()
            .map(|a| {
                let ds = &by_band[a.band.index()];
                let t = a.threshold as f64 - 0.5;
                ds.iter().map(|&d| p.positive_at(d).tail(t)).sum::<f64>() / ds.len() as f64 - a.tp
            })
            .collect()
    };
    let unknowns = if fit_sigma { 4 } else { 3 };
    let apply = |p: &mut SyntheticMatcherParams, k: usize, delta: f64| {
        if k < 3 {
            p.positive[k].mu += delta;
        } else {
            p.positive.iter_mut().for_each(|g| g.sigma += delta);
        }
    };
    let mut r = residuals(&params);
    for _ in 0..100 {
        if r.iter().all(|x| x.abs() < 1e-9) {
            break;
        }
        // forward-difference Jacobian, then damped normal equations
        let mut jac = vec![vec![0.0; unknowns]; anchors.len()];
        for k in 0..unknowns {
            let mut q = params.clone();
            apply(&mut q, k, 1e-4);
            for (i, v) in residuals(&q).into_iter().enumerate() {
                jac[i][k] = (v - r[i]) / 1e-4;
            }
        }
        let mut a = vec![vec![0.0; unknowns + 1]; unknowns];
        for (row, ri) in jac.iter().zip(&r) {
            for i in 0..unknowns {
                for j in 0..unknowns {
                    a[i][j] += row[i] * row[j];
                }
                a[i][unknowns] -= row[i] * ri;
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] *= 1.0 + 1e-9;
        }
        let step = solve_dense(a).ok_or_else(|| MatchError::Infeasible("singular calibration system".into()))?;
        step.iter().enumerate().for_each(|(k, &dk)| apply(&mut params, k, dk));
        if params.positive.iter().any(|g| !(g.sigma > 0.0)) {
            return Err(MatchError::Infeasible("spread collapsed while fitting".into()));
        }
        r = residuals(&params);
    }
    params.validate().map_err(|e| MatchError::Infeasible(e.to_string()))?;
    if let Some((a, x)) = anchors.iter().zip(&r).find(|(_, x)| x.abs() > 1e-3) {
        return Err(MatchError::Infeasible(format!(
            "{} band at {}: view-averaged tp misses anchor {} by {x:.4}",
            a.band, a.threshold, a.tp
        )));
    }
    Ok(params)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..=n {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (a[i][n] - s) / a[i][i];
    }
    Some(x)
}

/// Least-squares fit of `t = μ + σ·z` over the standard-normal upper
/// quantiles `z` of each anchor; exact for two anchors.
fn fit_two_or_more(list: &[Anchor]) -> Result<Gaussian, MatchError> {
    let n = standard_normal();
    let pts: Vec<(f64, f64)> = list.iter().map(|a| (n.inverse_cdf(1.0 - a.tp), a.threshold as f64)).collect();
    let k = pts.len() as f64;
    let (mz, mt) = pts.iter().fold((0.0, 0.0), |(a, b), (z, t)| (a + z / k, b + t / k));
    let szz: f64 = pts.iter().map(|(z, _)| (z - mz).powi(2)).sum();
    let szt: f64 = pts.iter().map(|(z, t)| (z - mz) * (t - mt)).sum();
    let sigma = szt / szz;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MatchError::Infeasible("non-monotone quantiles".into()));
    }
    let mut g = Gaussian { mu: mt - sigma * mz, sigma };
    // polish against the tail equations
    for _ in 0..50 {
        let residual: Vec<f64> = list.iter().map(|a| g.tail(a.threshold as f64) - a.tp).collect();
        if residual.iter().all(|r| r.abs() < 1e-12) {
            break;
        }
        let step = newton_step(&g, list, &residual);
        g.mu -= step.0;
        g.sigma -= step.1;
        if !(g.sigma > 0.0) {
            return Err(MatchError::Infeasible("spread collapsed while fitting".into()));
        }
    }
    Ok(g)
}

/// Gauss–Newton step on the tail residuals with respect to `(μ, σ)`.
fn newton_step(g: &Gaussian, list: &[Anchor], residual: &[f64]) -> (f64, f64) {
    let n = standard_normal();
    use statrs::distribution::Continuous;
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, r) in list.iter().zip(residual) {
        let z = (a.threshold as f64 - g.mu) / g.sigma;
        let pdf = n.pdf(z);
        // d tail / d mu = pdf / sigma ; d tail / d sigma = pdf * z / sigma
        let (j1, j2) = (pdf / g.sigma, pdf * z / g.sigma);
        a11 += j1 * j1;
        a12 += j1 * j2;
        a22 += j2 * j2;
        b1 += j1 * r;
        b2 += j2 * r;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-300 {
        return (0.0, 0.0);
    }
    ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det)
}

/// Root of `P(X ≥ t) = tp` in `μ` for fixed `σ`, by bisection.
fn solve_mean(t: f64, tp: f64, sigma: f64) -> Result<f64, MatchError> {
    let f = |mu: f64| Gaussian { mu, sigma }.tail(t) - tp;
    let (mut lo, mut hi) = (t - 40.0 * sigma, t + 40.0 * sigma);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(MatchError::Infeasible(format!("cannot bracket mean for tp {tp} at {t}")));
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReidSample {
    pub goal: GoalDescriptor,
    pub view: CandidateView,
    pub pose: Pose,
    pub label: Label,
    pub band: Band,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReidConfig {
    pub bands: BandEdges,
    /// Pose proposals per sample before giving up.
    pub max_attempts: usize,
}

impl Default for ReidConfig {
    fn default() -> Self {
        Self { bands: BandEdges::default(), max_attempts: 4000 }
    }
}

/// Proposes a free pose at a distance inside `band` from `target`, facing it.
fn propose<R: Rng + ?Sized>(
    world: &World,
    target: u32,
    band: std::ops::Range<f64>,
    rng: &mut R,
) -> Result<Option<(Pose, f64)>, WorldError> {
    let inst = world.instance(target)?;
    let res = world.resolution();
    let anchor: Cell = inst.cells[rng.random_range(0..inst.cells.len())];
    let (ax, ay) = anchor.center(res);
    let r = rng.random_range(band.clone());
    let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (x, y) = (ax + r * phi.cos(), ay + r * phi.sin());
    if !world.is_traversable(x, y) {
        return Ok(None);
    }
    let d = inst.distance_from(x, y, res);
    if !band.contains(&d) {
        return Ok(None);
    }
    Ok(Some((Pose::new(x, y, (ay - y).atan2(ax - x)), d)))
}

/// Builds the re-identification dataset: per anchor episode, `per_anchor`
/// positive views of the goal instance and `per_anchor` negative views of a
/// different instance (same category when possible) from which the goal is
/// not visible. Samples cycle through the bands, so each band receives a
/// third of them. An anchor that has no valid pose in some band hands its
/// share of that band to the remaining anchors; the build fails only when
/// none is left.
pub fn build_reid_dataset<R: Rng + ?Sized>(
    world: &World,
    episodes: &[Episode],
    per_anchor: usize,
    cfg: &ReidConfig,
    rng: &mut R,
) -> Result<Vec<ReidSample>, MatchError> {
    cfg.bands.validate()?;
    let mut out = Vec::with_capacity(episodes.len() * per_anchor * 2);
    for label in [Label::Positive, Label::Negative] {
        for (b, band) in Band::ALL.into_iter().enumerate() {
            let wanted = episodes.len() * (0..per_anchor).filter(|i| i % 3 == b).count();
            let mut live: Vec<usize> = (0..episodes.len()).collect();
            let mut turn = 0;
            for _ in 0..wanted {
                loop {
                    if live.is_empty() {
                        return Err(MatchError::SampleExhausted {
                            anchor: episodes.len().saturating_sub(1),
                            band,
                            label,
                            attempts: cfg.max_attempts,
                        });
                    }
                    turn %= live.len();
                    let k = live[turn];
                    match sample_view(world, &episodes[k], label, band, cfg, rng)? {
                        Some(s) => {
                            out.push(s);
                            turn += 1;
                            break;
                        }
                        None => {
                            live.remove(turn);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One view of `ep`'s goal (positive) or of a distractor (negative) in
/// `band`, or `None` when the attempt budget runs out.
fn sample_view<R: Rng + ?Sized>(
    world: &World,
    ep: &Episode,
    label: Label,
    band: Band,
    cfg: &ReidConfig,
    rng: &mut R,
) -> Result<Option<ReidSample>, MatchError> {
    let range = cfg.bands.max_distance();
    let goal = ep.goal;
    let others: Vec<u32> = world.instances().iter().filter(|i| i.id != ep.goal_instance).map(|i| i.id).collect();
    let same: Vec<u32> = others
        .iter()
        .copied()
        .filter(|&id| world.instance(id).is_ok_and(|i| i.category == goal.category))
        .collect();
    let preferred = if same.is_empty() { &others } else { &same };
    for attempt in 0..cfg.max_attempts {
        // A same-category distractor can share a room with the goal, leaving
        // no pose that sees one but not the other; widen to every instance
        // after half the budget.
        let pool = if attempt < cfg.max_attempts / 2 { preferred } else { &others };
        let target = match label {
            Label::Positive => ep.goal_instance,
            Label::Negative if pool.is_empty() => return Ok(None),
            Label::Negative => pool[rng.random_range(0..pool.len())],
        };
        let Some((pose, d)) = propose(world, target, cfg.bands.range(band), rng)? else {
            continue;
        };
        if !world.oracle_visible(pose.x, pose.y, target, range)? {
            continue;
        }
        if label == Label::Negative && world.oracle_visible(pose.x, pose.y, ep.goal_instance, range)? {
            continue;
        }
        let category = world.instance(target)?.category;
        return Ok(Some(ReidSample {
            goal,
            view: CandidateView { instance_id: target, distance: d, category },
            pose,
            label,
            band,
        }));
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub band: Band,
    pub threshold: u32,
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub rows: Vec<ConfusionRow>,
    /// Bands left out because they had no positives or no negatives.
    pub excluded: Vec<Band>,
}

impl ConfusionTable {
    pub fn row(&self, band: Band, threshold: u32) -> Option<&ConfusionRow> {
        self.rows.iter().find(|r| r.band == band && r.threshold == threshold)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,threshold,tp,tn,fp,fn\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6},{:.6}", r.band, r.threshold, r.tp, r.tn, r.fp, r.fn_);
        }
        out
    }
}

/// Classifies every sample as same-instance iff `ω ≥ threshold` and tabulates
/// rates per band and threshold. One `ω` is drawn per sample from a stream
/// derived from the sample index, so results do not depend on thread count.
pub fn confusion_study<R: Rng + ?Sized>(
    samples: &[ReidSample],
    matcher: &Matcher,
    thresholds: &[u32],
    rng: &mut R,
) -> ConfusionTable {
    let base: u64 = rng.random();
    let omegas: Vec<u32> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| matcher.match_count(&s.goal, &s.view, &mut rng::stream(base, &[i as u64])).omega)
        .collect();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for band in Band::ALL {
        let pos: Vec<u32> = samples
            .iter()
            .zip(&omegas)
            .filter(|(s, _)| s.band == band && s.label == Label::Positive)
            .map(|(_, o)| *o)
            .collect();
        let neg: Vec<u32> = samples
            .iter()
            .zip(&omegas)
            .filter(|(s, _)| s.band == band && s.label == Label::Negative)
            .map(|(_, o)| *o)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            excluded.push(band);
            continue;
        }
        for &t in thresholds {
            let tp = pos.iter().filter(|o| **o >= t).count() as f64 / pos.len() as f64;
            let fp = neg.iter().filter(|o| **o >= t).count() as f64 / neg.len() as f64;
            rows.push(ConfusionRow {
                band,
                threshold: t,
                tp,
                tn: 1.0 - fp,
                fp,
                fn_: 1.0 - tp,
                positives: pos.len(),
                negatives: neg.len(),
            });
        }
    }
    ConfusionTable { rows, excluded }
}
