//! One navigation episode: sense, map, decide, plan, act.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{ExplorationVariant, RunConfig};
use super::HarnessError;
use crate::grid::{wrap_angle, Cell, Grid};
use crate::mapping::{hit_cell, project_observation, MapConfig, SemanticMap};
use crate::matching::CandidateView;
use crate::planner::{
    fmm_field, forward_cell, inflate, select_waypoint, update_trajectory, waypoint_to_action, DistanceField,
    TrajectoryMemory, Waypoint,
};
use crate::policy::{
    detect_potential, f_switch, frontier_goal, project_goal, random_goal, update_switch, GoalMap, PotentialTarget,
    SwitchSignal, SwitchState, ThresholdCurves,
};
use crate::rng::{stream, Stream};
use crate::world::{Action, Episode, Observation, Pose, World, MAX_ANGULAR_STEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    WrongStop,
    Timeout,
    Error,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Success => "success",
            Termination::WrongStop => "wrong_stop",
            Termination::Timeout => "timeout",
            Termination::Error => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub path_length: f64,
    pub shortest_length: f64,
    pub steps: usize,
    pub stop_called: bool,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl EpisodeResult {
    /// `S · l / max(p, l)`; a degenerate episode (`l = 0`) scores its
    /// success indicator.
    pub fn spl(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let l = self.shortest_length;
        let denom = self.path_length.max(l);
        if l <= 0.0 || denom <= 0.0 {
            1.0
        } else {
            l / denom
        }
    }
}

/// Per-step record for trace CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub mode: SwitchSignal,
    pub target_distance: Option<f64>,
    pub omega: Option<u32>,
    /// Ground-truth instance behind the matched view.
    pub instance: Option<u32>,
    pub waypoint: Option<(f64, f64)>,
    pub action: Action,
    pub field: f64,
}

pub const TRACE_HEADER: &str = "step,x,y,theta,mode,target_distance,omega,instance,waypoint_x,waypoint_y,linear,angular,stop,field";

impl TraceRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        format!(
            "{},{:.4},{:.4},{:.4},{},{},{},{},{},{},{:.4},{:.4},{},{}",
            self.step,
            self.x,
            self.y,
            self.theta,
            self.mode.name(),
            opt(self.target_distance),
            self.omega.map(|o| o.to_string()).unwrap_or_default(),
            self.instance.map(|o| o.to_string()).unwrap_or_default(),
            opt(self.waypoint.map(|w| w.0)),
            opt(self.waypoint.map(|w| w.1)),
            self.action.linear,
            self.action.angular,
            self.action.stop,
            if self.field.is_finite() { format!("{:.4}", self.field) } else { "inf".into() }
        )
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// Runs one episode. Matcher draws and exploration draws come from separate
/// streams derived from `seed`, so configs that share a seed see common
/// random numbers.
pub fn run_episode(world: &World, episode: &Episode, cfg: &RunConfig, seed: u64) -> EpisodeResult {
    run(world, episode, cfg, seed, None)
}

pub fn run_episode_traced(world: &World, episode: &Episode, cfg: &RunConfig, seed: u64) -> (EpisodeResult, Vec<TraceRow>) {
    let mut rows = Vec::new();
    let r = run(world, episode, cfg, seed, Some(&mut rows));
    (r, rows)
}

fn run(world: &World, episode: &Episode, cfg: &RunConfig, seed: u64, trace: Option<&mut Vec<TraceRow>>) -> EpisodeResult {
    let mut path_length = 0.0;
    let mut steps = 0;
    let outcome = (|| {
        cfg.validate()?;
        let shortest = world
            .shortest_path_length(&episode.start, episode.goal_instance, cfg.sensor.max_range)?
            .ok_or_else(|| HarnessError::Episode("goal is unreachable from the start".into()))?;
        let mut agent = Agent::new(world, episode, cfg, seed);
        let mut trace = trace;
        let stop = agent.drive(&mut path_length, &mut steps, &mut trace)?;
        Ok::<_, HarnessError>((shortest, stop))
    })();
    match outcome {
        Ok((shortest, Some(pose))) => {
            let success = world.is_success(&pose, episode.goal_instance, cfg.sensor.max_range).unwrap_or(false);
            EpisodeResult {
                success,
                path_length,
                shortest_length: shortest,
                steps,
                stop_called: true,
                termination: if success { Termination::Success } else { Termination::WrongStop },
                diagnostics: None,
            }
        }
        Ok((shortest, None)) => EpisodeResult {
            success: false,
            path_length,
            shortest_length: shortest,
            steps,
            stop_called: false,
            termination: Termination::Timeout,
            diagnostics: None,
        },
        Err(e) => EpisodeResult {
            success: false,
            path_length,
            shortest_length: 0.0,
            steps,
            stop_called: false,
            termination: Termination::Error,
            diagnostics: Some(e.to_string()),
        },
    }
}

/// Planning result for one step.
struct Plan {
    field: DistanceField,
    obstacles: Grid<bool>,
}

struct Agent<'a> {
    world: &'a World,
    episode: &'a Episode,
    cfg: &'a RunConfig,
    curves: ThresholdCurves,
    mcfg: MapConfig,
    map: SemanticMap,
    switch: SwitchState,
    memory: TrajectoryMemory,
    /// Cells blocked by stuck recovery, with the step they expire at.
    virtual_obstacles: Vec<(Cell, usize)>,
    explore_goal: Option<GoalMap>,
    explore_age: usize,
    undecided: usize,
    /// Recent distance fields with the obstacles and goal they came from.
    fields: Vec<(Grid<bool>, GoalMap, DistanceField)>,
    seed: u64,
    match_rng: Stream,
    explore_rng: Stream,
}

impl<'a> Agent<'a> {
    fn new(world: &'a World, episode: &'a Episode, cfg: &'a RunConfig, seed: u64) -> Self {
        let (w, h, res) = (world.width(), world.height(), world.resolution());
        let p = &cfg.planner;
        Self {
            world,
            episode,
            cfg,
            curves: cfg.active_curves(),
            mcfg: MapConfig { width: w, height: h, resolution: res },
            map: SemanticMap::empty(MapConfig { width: w, height: h, resolution: res }),
            switch: SwitchState::new(w, h),
            memory: TrajectoryMemory::new(w, h, res, p.stuck_n, p.stuck_window),
            virtual_obstacles: Vec::new(),
            explore_goal: None,
            explore_age: 0,
            undecided: 0,
            fields: Vec::new(),
            seed,
            match_rng: stream(seed, &[0]),
            explore_rng: stream(seed, &[1]),
        }
    }

    /// Returns the pose at which stop was called, or `None` on timeout.
    fn drive(
        &mut self,
        path_length: &mut f64,
        steps: &mut usize,
        trace: &mut Option<&mut Vec<TraceRow>>,
    ) -> Result<Option<Pose>, HarnessError> {
        let mut pose = self.episode.start;
        for step in 0..self.episode.max_steps {
            self.virtual_obstacles.retain(|&(_, until)| until > step);
            let obs = self.world.sense(&pose, &self.cfg.sensor);
            self.map.fuse_in_place(&project_observation(&obs, &self.mcfg))?;

            let (target, omega, instance) = self.decide(&obs)?;
            let (action, wp, field) = self.act(&pose)?;
            *steps = step + 1;
            if let Some(rows) = trace.as_deref_mut() {
                rows.push(TraceRow {
                    step,
                    x: pose.x,
                    y: pose.y,
                    theta: pose.theta,
                    mode: self.switch.mode(),
                    target_distance: target.map(|t| t.distance),
                    omega,
                    instance,
                    waypoint: wp.map(|w| (w.x, w.y)),
                    action,
                    field,
                });
            }
            if action.stop {
                return Ok(Some(pose));
            }
            let next = self.world.step(&pose, &action);
            *path_length += next.distance_to(&pose);
            pose = next;
            self.memory = update_trajectory(std::mem::replace(&mut self.memory, TrajectoryMemory::new(0, 0, 1.0, 1, 1)), &pose);
            if self.memory.take_stuck() {
                let ahead = forward_cell(&pose, self.mcfg.resolution);
                if ahead != pose.cell(self.mcfg.resolution) {
                    self.virtual_obstacles.push((ahead, step + 1 + self.cfg.planner.stuck_window));
                }
                self.explore_goal = None;
            }
        }
        Ok(None)
    }

    /// Potential-target detection, matching and the switch update.
    fn decide(&mut self, obs: &Observation) -> Result<(Option<PotentialTarget>, Option<u32>, Option<u32>), HarnessError> {
        if self.switch.mode() == SwitchSignal::Exploitation {
            return Ok((None, None, None));
        }
        let goal = &self.episode.goal;
        let res = self.mcfg.resolution;
        let target = detect_potential(&self.map, goal.category, self.switch.rejected(), &obs.pose);
        let Some(t) = target else {
            let state = std::mem::replace(&mut self.switch, SwitchState::new(0, 0));
            self.switch = update_switch(state, SwitchSignal::Exploration, None, None)?;
            return Ok((None, None, None));
        };
        // rays landing on the potential target, nearest first
        let in_view = obs
            .rays
            .iter()
            .filter(|r| r.category() == Some(goal.category))
            .filter(|r| t.cells.contains(&hit_cell(&obs.pose, r.bearing, r.distance, res)))
            .min_by(|a, b| a.distance.total_cmp(&b.distance));
        let mut omega = None;
        let instance = in_view.and_then(|r| r.instance());
        let signal = match in_view {
            Some(ray) => {
                let view = CandidateView {
                    instance_id: ray.instance().expect("labelled ray"),
                    distance: t.distance,
                    category: goal.category,
                };
                let z = self.score(&obs.pose, view.instance_id);
                let o = self.cfg.matcher.omega_for(goal, &view, z).omega;
                omega = Some(o);
                f_switch(true, t.distance, o, &self.curves)
            }
            // keep approaching a verification target that slipped out of view
            None if self.switch.mode() == SwitchSignal::Verification => SwitchSignal::Verification,
            None => SwitchSignal::Exploration,
        };
        // a verification that stays undecided for too long is a rejection
        let signal = if signal == SwitchSignal::Verification {
            self.undecided += 1;
            if self.undecided > self.cfg.verify_patience {
                SwitchSignal::Exploration
            } else {
                signal
            }
        } else {
            signal
        };
        if signal != SwitchSignal::Verification {
            self.undecided = 0;
        }
        let projection = match signal {
            SwitchSignal::Exploitation => {
                let seen = project_goal(obs, goal.category, &self.mcfg)
                    .ok()
                    .map(|g| g.cells().into_iter().filter(|c| t.cells.contains(c)).collect::<Vec<_>>())
                    .filter(|c| !c.is_empty())
                    .unwrap_or_else(|| t.cells.clone());
                Some(GoalMap::from_cells(self.mcfg.width, self.mcfg.height, seen)?)
            }
            SwitchSignal::Verification => Some(GoalMap::from_cells(self.mcfg.width, self.mcfg.height, t.cells.clone())?),
            SwitchSignal::Exploration => None,
        };
        let state = std::mem::replace(&mut self.switch, SwitchState::new(0, 0));
        self.switch = update_switch(state, signal, Some(&t), projection)?;
        Ok((Some(t), omega, instance))
    }

    /// Standard-normal match score for the instance seen from `pose`.
    fn score(&mut self, pose: &Pose, instance: u32) -> f64 {
        let noise = self.cfg.match_noise;
        let view: f64 = if noise.per_view {
            let cell = pose.cell(self.mcfg.resolution);
            let octant = (pose.theta / (std::f64::consts::PI / 4.0)).round().rem_euclid(8.0) as u64;
            let key = [3, instance as u64, cell.x as u64, cell.y as u64, octant];
            StandardNormal.sample(&mut stream(self.seed, &key))
        } else {
            StandardNormal.sample(&mut self.match_rng)
        };
        if noise.pair_share <= 0.0 {
            return view;
        }
        let pair: f64 = StandardNormal.sample(&mut stream(self.seed, &[2, instance as u64]));
        noise.pair_share.sqrt() * pair + (1.0 - noise.pair_share).sqrt() * view
    }

    /// Goal map selection, distance field, waypoint and command.
    fn act(&mut self, pose: &Pose) -> Result<(Action, Option<Waypoint>, f64), HarnessError> {
        let res = self.mcfg.resolution;
        let here = pose.cell(res);
        match self.switch.mode() {
            SwitchSignal::Exploitation | SwitchSignal::Verification => {
                let object = match self.switch.mode() {
                    SwitchSignal::Exploitation => self.switch.confirmed_goal().cloned(),
                    _ => self
                        .switch
                        .verifying()
                        .map(|t| GoalMap::from_cells(self.mcfg.width, self.mcfg.height, t.cells.clone()))
                        .transpose()?,
                };
                let object = object.ok_or_else(|| HarnessError::Episode("active mode without a goal".into()))?;
                let confirmed = (self.switch.mode() == SwitchSignal::Exploitation).then_some(&object);
                if confirmed.is_some_and(|g| g.distance_from(pose.x, pose.y, res) <= self.cfg.planner.stop_distance) {
                    return Ok((Action::stop(), None, 0.0));
                }
                let approach = self.cfg.planner.stop_distance - res;
                let Some(plan) = self.plan(pose, |obstacles| approach_goal(&object, obstacles, approach, res)) else {
                    // nowhere to stand near it: give up on a verification target
                    if self.switch.mode() == SwitchSignal::Verification {
                        self.undecided = self.cfg.verify_patience;
                    }
                    return Ok((Action::new(0.0, 1.0), None, f64::INFINITY));
                };
                let field = plan.field.at(here);
                if field == 0.0 {
                    // standing in the approach zone: face the object
                    return Ok((face(pose, &object, res), None, field));
                }
                self.follow(pose, &plan, confirmed, field)
            }
            SwitchSignal::Exploration => {
                self.explore_age += 1;
                if self.explore_goal.is_none() || self.explore_age >= self.cfg.planner.explore_refresh {
                    self.refresh_explore(pose)?;
                }
                let mut plan = self.plan_explore(pose);
                if plan.is_none() {
                    self.refresh_explore(pose)?;
                    plan = self.plan_explore(pose);
                }
                let Some(plan) = plan else {
                    self.explore_goal = None;
                    return Ok((Action::new(0.0, 1.0), None, f64::INFINITY));
                };
                let field = plan.field.at(here);
                if field == 0.0 {
                    // on the goal: look around, then pick a new one
                    self.explore_goal = None;
                    return Ok((Action::new(0.0, 1.0), None, field));
                }
                self.follow(pose, &plan, None, field)
            }
        }
    }

    fn follow(
        &self,
        pose: &Pose,
        plan: &Plan,
        confirmed: Option<&GoalMap>,
        field: f64,
    ) -> Result<(Action, Option<Waypoint>, f64), HarnessError> {
        let p = &self.cfg.planner;
        let wp = select_waypoint(&plan.field, &plan.obstacles, pose, p.feasible_radius)?;
        Ok((waypoint_to_action(pose, &wp, confirmed, p.stop_distance, self.mcfg.resolution), Some(wp), field))
    }

    fn refresh_explore(&mut self, pose: &Pose) -> Result<(), HarnessError> {
        self.explore_age = 0;
        self.explore_goal = Some(match self.cfg.exploration {
            ExplorationVariant::Frontier => frontier_goal(&self.map, pose)?,
            ExplorationVariant::Random => random_goal(&self.map, &mut self.explore_rng)?,
        });
        Ok(())
    }

    fn plan_explore(&mut self, pose: &Pose) -> Option<Plan> {
        let goal = self.explore_goal.clone()?;
        self.plan(pose, |_| Some(goal.clone()))
    }

    /// Distance field over the inflated map, falling back to the raw map when
    /// inflation leaves no usable route.
    fn plan(&mut self, pose: &Pose, goal_for: impl Fn(&Grid<bool>) -> Option<GoalMap>) -> Option<Plan> {
        let res = self.mcfg.resolution;
        let here = pose.cell(res);
        let raw = self.map.channel(crate::mapping::OBSTACLE);
        let inflation = self.cfg.planner.inflation;
        let attempts: &[i32] = if inflation > 0 { &[inflation, 0] } else { &[0] };
        for &r in attempts {
            let mut obstacles = if r > 0 { inflate(&raw, r) } else { raw.clone() };
            for &(c, _) in &self.virtual_obstacles {
                obstacles.set(c, true);
            }
            if !raw.at_or(here, true) {
                obstacles.set(here, false);
            }
            let Some(goal) = goal_for(&obstacles) else { continue };
            let Some(field) = self.field(&obstacles, goal) else { continue };
            if select_waypoint(&field, &obstacles, pose, self.cfg.planner.feasible_radius).is_ok() || field.at(here) == 0.0 {
                return Some(Plan { field, obstacles });
            }
        }
        None
    }

    /// Distance field for `goal`, reusing a recent one when neither the
    /// obstacles nor the goal changed.
    fn field(&mut self, obstacles: &Grid<bool>, goal: GoalMap) -> Option<DistanceField> {
        if let Some((_, _, f)) = self.fields.iter().find(|(o, g, _)| g == &goal && o == obstacles) {
            return Some(f.clone());
        }
        let field = fmm_field(obstacles, &goal, self.mcfg.resolution).ok()?;
        if self.fields.len() == FIELD_CACHE {
            self.fields.remove(0);
        }
        self.fields.push((obstacles.clone(), goal, field.clone()));
        Some(field)
    }
}

const FIELD_CACHE: usize = 2;

/// Free cells whose centre lies within `reach` of an object cell centre.
fn approach_goal(object: &GoalMap, obstacles: &Grid<bool>, reach: f64, res: f64) -> Option<GoalMap> {
    let span = (reach / res).ceil() as i32;
    let mut cells = Vec::new();
    for c in object.cells() {
        for dy in -span..=span {
            for dx in -span..=span {
                let n = c.offset(dx, dy);
                if !obstacles.at_or(n, true) && ((dx * dx + dy * dy) as f64).sqrt() * res <= reach {
                    cells.push(n);
                }
            }
        }
    }
    GoalMap::from_cells(obstacles.width(), obstacles.height(), cells).ok()
}

/// Turn toward the nearest object cell.
fn face(pose: &Pose, object: &GoalMap, res: f64) -> Action {
    let nearest = object
        .cells()
        .into_iter()
        .min_by(|a, b| a.distance_from(pose.x, pose.y, res).total_cmp(&b.distance_from(pose.x, pose.y, res)))
        .expect("goal maps are non-empty");
    let (cx, cy) = nearest.center(res);
    let err = wrap_angle((cy - pose.y).atan2(cx - pose.x) - pose.theta);
    Action::new(0.0, err / MAX_ANGULAR_STEP)
}
