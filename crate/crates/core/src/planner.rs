//! Online receding-horizon loop: place the library at the measured state,
//! certify tubes against risk contours, rank, execute, account risk.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contours::{outer_ellipse, ContourError, RiskContourSet, UncertainObstacle};
use crate::dynamics::{ControlSequence, DynamicsError, ModelKind, StateMoments, SystemModel};
use crate::sos::{certify_tube, Certificate, CertifyOptions};
use crate::tubes::{build_primitive, Library, MotionPrimitive, PrimitiveSpec, TubeError};
use crate::uncertainty::{DistributionSpec, SimRng, UncertaintyError};

pub const DEFAULT_DELTA_TUBE: f64 = 0.001;
/// Variance of the measured position handed to the ground-vehicle tubes.
pub const POSITION_VARIANCE: f64 = 1e-4;
const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("infeasible risk allocation: {0}")]
    Allocation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no certified primitive at cycle {cycle}")]
    Stuck { cycle: usize, log: Box<PlanningCycleLog> },
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

/// `Δ_o + M Δ_tube <= Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    pub delta: f64,
    pub max_cycles: usize,
    pub delta_o: f64,
    pub delta_tube: f64,
}

impl RiskBudget {
    pub fn validate(&self) -> Result<(), PlanError> {
        for (name, v) in [("delta", self.delta), ("delta_o", self.delta_o), ("delta_tube", self.delta_tube)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PlanError::Allocation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.max_cycles == 0 {
            return Err(PlanError::Allocation("cycle bound M must be at least 1".into()));
        }
        if self.delta_o + self.max_cycles as f64 * self.delta_tube > self.delta + BUDGET_SLACK {
            return Err(PlanError::Allocation(format!(
                "{} + {}·{} exceeds {}",
                self.delta_o, self.max_cycles, self.delta_tube, self.delta
            )));
        }
        Ok(())
    }

    pub fn linear_bound(&self, n: usize) -> f64 {
        linear_risk_bound(self.delta_o, self.delta_tube, n)
    }

    pub fn product_bound(&self, n: usize) -> f64 {
        product_risk_bound(self.delta_o, self.delta_tube, n)
    }
}

/// `Δ_o + N Δ_tube`.
pub fn linear_risk_bound(delta_o: f64, delta_tube: f64, n: usize) -> f64 {
    delta_o + n as f64 * delta_tube
}

/// `Δ_o + 1 - (1 - Δ_tube)^N`.
pub fn product_risk_bound(delta_o: f64, delta_tube: f64, n: usize) -> f64 {
    delta_o + (1.0 - (1.0 - delta_tube).powi(n as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// Fix `Δ_tube` and give the rest to the contours.
    FixedTube { delta_tube: f64 },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy::FixedTube {
            delta_tube: DEFAULT_DELTA_TUBE,
        }
    }
}

pub fn allocate_risk(delta: f64, max_cycles: usize, policy: SplitPolicy) -> Result<RiskBudget, PlanError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PlanError::Allocation(format!("total risk {delta} not in (0, 1)")));
    }
    if max_cycles == 0 {
        return Err(PlanError::Allocation("cycle bound M must be at least 1".into()));
    }
    let SplitPolicy::FixedTube { delta_tube } = policy;
    let delta_o = delta - max_cycles as f64 * delta_tube;
    if delta_o <= 0.0 {
        return Err(PlanError::Allocation(format!("Δ_o = {delta_o} is not positive")));
    }
    let b = RiskBudget {
        delta,
        max_cycles,
        delta_o,
        delta_tube,
    };
    b.validate()?;
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    /// Sum over steps of squared distances of expected positions to a polyline.
    PathTracking { path: Vec<[f64; 2]> },
    /// `(y - y*)² + w θ² + penalty · I(|θ| > limit)` on the expected terminal state.
    TerminalCost {
        target_y: f64,
        heading_weight: f64,
        heading_limit: f64,
        penalty: f64,
    },
}

impl Objective {
    pub fn lane_change(target_y: f64) -> Objective {
        Objective::TerminalCost {
            target_y,
            heading_weight: 10.0,
            heading_limit: std::f64::consts::FRAC_PI_6,
            penalty: 1e7,
        }
    }

    pub fn score(&self, moments: &StateMoments) -> f64 {
        match self {
            Objective::PathTracking { path } => moments.steps[1..].iter().map(|s| polyline_distance2(path, s.pos.mean())).sum(),
            Objective::TerminalCost {
                target_y,
                heading_weight,
                heading_limit,
                penalty,
            } => {
                let last = moments.steps.last().unwrap();
                let y = last.pos.mean()[1];
                let th = last.mean_theta.unwrap_or(0.0);
                let ind = if th.abs() > *heading_limit { 1.0 } else { 0.0 };
                (y - target_y).powi(2) + heading_weight * th * th + penalty * ind
            }
        }
    }
}

pub fn polyline_distance2(path: &[[f64; 2]], p: [f64; 2]) -> f64 {
    if path.len() == 1 {
        return (p[0] - path[0][0]).powi(2) + (p[1] - path[0][1]).powi(2);
    }
    path.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let s = if len2 > 0.0 {
                (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (p[0] - a[0] - s * d[0]).powi(2) + (p[1] - a[1] - s * d[1]).powi(2)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GoalRegion {
    Disc {
        center: [f64; 2],
        radius: f64,
    },
    /// `|y - y*| <= y_tol` and `|θ| <= heading_tol`.
    Lane {
        y: f64,
        y_tol: f64,
        heading_tol: f64,
    },
}

impl GoalRegion {
    pub fn contains(&self, state: &[f64]) -> bool {
        match *self {
            GoalRegion::Disc { center, radius } => (state[0] - center[0]).powi(2) + (state[1] - center[1]).powi(2) <= radius * radius,
            GoalRegion::Lane { y, y_tol, heading_tol } => {
                (state[1] - y).abs() <= y_tol && state.get(3).is_none_or(|th| th.abs() <= heading_tol)
            }
        }
    }
}

/// Planner state that is not part of the measured state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub time: f64,
    /// Body-frame heading for rigid recentring (last commanded heading).
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub certify: CertifyOptions,
    /// Skip obstacles whose centre path stays beyond the cull radius.
    pub cull: bool,
    /// Extra distance added to the cull radius.
    pub cull_margin: f64,
    /// Keep Gram matrices in the cycle log's certificates.
    pub keep_grams: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            certify: CertifyOptions::default(),
            cull: true,
            cull_margin: 0.0,
            keep_grams: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLog {
    pub index: usize,
    pub certified: bool,
    pub score: f64,
    pub radius: f64,
    pub obstacles_checked: usize,
    pub seconds: f64,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningCycleLog {
    pub cycle: usize,
    pub time: f64,
    pub state: Vec<f64>,
    pub certified: Vec<usize>,
    pub chosen: Option<usize>,
    pub candidates: Vec<CandidateLog>,
    /// Bounds after `cycle + 1` executed tubes.
    pub linear_bound: f64,
    pub product_bound: f64,
    pub seconds: f64,
}

/// A primitive placed at the current state, with world-frame controls.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedPrimitive {
    pub primitive: MotionPrimitive,
    pub moments: StateMoments,
}

/// Place a library primitive at `state`. Underwater primitives are rotated
/// by the pose heading and translated; ground-vehicle tubes are rebuilt from
/// the measured state with the library's tracking targets.
pub fn place_primitive(library: &Library, index: usize, state: &[f64], pose: &Pose) -> Result<PlacedPrimitive, PlanError> {
    let prim = library
        .primitives
        .get(index)
        .ok_or_else(|| PlanError::Config(format!("primitive {index} out of range")))?;
    let origin = [state[0], state[1]];
    match library.model.kind {
        ModelKind::Underwater => {
            let base = prim
                .moments
                .as_ref()
                .ok_or_else(|| PlanError::Config("primitive lacks moments".into()))?;
            let moments = base.transformed(pose.heading, origin);
            let mut p = prim.clone();
            p.nominal = prim.nominal.transformed(pose.heading, origin);
            p.tube.nominal = p.nominal.clone();
            p.controls = prim.controls.rotated(pose.heading);
            p.moments = Some(moments.clone());
            Ok(PlacedPrimitive { primitive: p, moments })
        }
        ModelKind::GroundVehicle => {
            if state.len() != 4 {
                return Err(PlanError::Config(format!("ground vehicle state has {} components", state.len())));
            }
            let th0 = state[3];
            // rebuild in the frame of the measured pose, then map back
            let initial = vec![
                DistributionSpec::gaussian(0.0, POSITION_VARIANCE),
                DistributionSpec::gaussian(0.0, POSITION_VARIANCE),
                DistributionSpec::point(state[2]),
                DistributionSpec::point(0.0),
            ];
            let spec = PrimitiveSpec {
                label: prim.label.clone(),
                controls: prim.controls.rotated(-th0),
            };
            let body = build_primitive(&library.model, &initial, &spec, &library.config, prim.seed)?;
            let moments = body.moments.as_ref().unwrap().transformed(th0, origin);
            let mut p = body;
            p.index = prim.index;
            p.nominal = p.nominal.transformed(th0, origin);
            p.tube.nominal = p.nominal.clone();
            p.controls = prim.controls.clone();
            p.tracking_inputs = None;
            p.moments = Some(moments.clone());
            Ok(PlacedPrimitive { primitive: p, moments })
        }
    }
}

/// Obstacles over the primitive's time window, `t ∈ [0, 1]`.
pub fn window_obstacles(obstacles: &[UncertainObstacle], time: f64, duration: f64) -> Vec<UncertainObstacle> {
    obstacles.iter().map(|o| o.retime(time, duration)).collect()
}

/// Radius beyond which an obstacle cannot reach the tube: obstacle extent
/// plus tube length plus three tube radii.
pub fn cull_radius(extent: f64, placed: &MotionPrimitive, margin: f64) -> f64 {
    let n = &placed.nominal;
    let start = n.at_step(0);
    let length = (0..=n.horizon)
        .map(|k| {
            let p = n.at_step(k);
            ((p[0] - start[0]).powi(2) + (p[1] - start[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    extent + length + 3.0 * placed.tube.radius + margin
}

/// Largest semi-axis of the outer ellipse, or `None` when the contour has no
/// quadric shape (such obstacles are never culled).
fn obstacle_extent(set: &RiskContourSet, i: usize) -> Option<f64> {
    let e = &set.entries[i];
    e.shape.as_ref()?;
    let el = outer_ellipse(e, set.delta).ok()?;
    let ax = el.semi_axes();
    Some(ax[0].max(ax[1]))
}

fn center_path_distance(set: &RiskContourSet, i: usize, p: [f64; 2]) -> f64 {
    let shape = set.entries[i].shape.as_ref().unwrap();
    // centres move on polynomial paths; sample the window densely
    (0..=20)
        .map(|k| {
            let c = shape.center_at(k as f64 / 20.0);
            ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// One planning cycle. `contours` must already be in the window time
/// variable (see [`window_obstacles`]).
pub fn plan_cycle(
    cycle: usize,
    state: &[f64],
    pose: &Pose,
    library: &Library,
    contours: &RiskContourSet,
    objective: &Objective,
    budget: &RiskBudget,
    options: &PlanOptions,
) -> Result<(PlacedPrimitive, PlanningCycleLog), PlanError> {
    if library.is_empty() {
        return Err(PlanError::Config("empty primitive library".into()));
    }
    let start = Instant::now();
    let extents: Vec<Option<f64>> = (0..contours.entries.len()).map(|i| obstacle_extent(contours, i)).collect();
    let here = [state[0], state[1]];
    let results: Vec<Result<(PlacedPrimitive, CandidateLog), PlanError>> = (0..library.len())
        .into_par_iter()
        .map(|i| {
            let t0 = Instant::now();
            let placed = place_primitive(library, i, state, pose)?;
            let keep: Vec<_> = (0..contours.entries.len())
                .filter(|&j| match (options.cull, extents[j]) {
                    (true, Some(ext)) => {
                        center_path_distance(contours, j, here) <= cull_radius(ext, &placed.primitive, options.cull_margin)
                    }
                    _ => true,
                })
                .map(|j| contours.entries[j].clone())
                .collect();
            let local = RiskContourSet {
                delta: contours.delta,
                entries: keep,
            };
            let tube = &placed.primitive.tube;
            let mut certificate = certify_tube(&tube.nominal.coords, &tube.q(), &local, &options.certify);
            if !options.keep_grams {
                for o in &mut certificate.obstacles {
                    for c in &mut o.conditions {
                        c.grams.clear();
                    }
                }
            }
            let score = objective.score(&placed.moments);
            let log = CandidateLog {
                index: i,
                certified: certificate.is_certified(),
                score,
                radius: tube.radius,
                obstacles_checked: local.entries.len(),
                seconds: t0.elapsed().as_secs_f64(),
                certificate,
            };
            Ok((placed, log))
        })
        .collect();
    let mut placed = Vec::with_capacity(results.len());
    let mut candidates = Vec::with_capacity(results.len());
    for r in results {
        let (p, c) = r?;
        placed.push(p);
        candidates.push(c);
    }
    let certified: Vec<usize> = candidates.iter().filter(|c| c.certified).map(|c| c.index).collect();
    // strict comparison keeps the lowest index on ties
    let mut chosen: Option<usize> = None;
    for &i in &certified {
        if chosen.is_none_or(|c| candidates[i].score < candidates[c].score) {
            chosen = Some(i);
        }
    }
    let log = PlanningCycleLog {
        cycle,
        time: pose.time,
        state: state.to_vec(),
        certified,
        chosen,
        candidates,
        linear_bound: budget.linear_bound(cycle + 1),
        product_bound: budget.product_bound(cycle + 1),
        seconds: start.elapsed().as_secs_f64(),
    };
    match chosen {
        Some(i) => Ok((placed.swap_remove(i), log)),
        None => Err(PlanError::Stuck { cycle, log: Box::new(log) }),
    }
}

/// Stochastic rollout of the first `steps` controls; returns the visited
/// states (excluding the start).
pub fn execute(
    model: &SystemModel,
    state: &[f64],
    controls: &ControlSequence,
    steps: usize,
    rng: &mut SimRng,
) -> Result<Vec<Vec<f64>>, PlanError> {
    if steps == 0 || steps > controls.horizon() {
        return Err(PlanError::Config(format!("steps {steps} outside 1..={}", controls.horizon())));
    }
    let nv = model.noise_v.sampler()?;
    let nt = model.noise_theta.sampler()?;
    let mut out = Vec::with_capacity(steps);
    let mut s = state.to_vec();
    for &u in &controls.entries()[..steps] {
        let noise = [nv.draw(rng), nt.draw(rng)];
        s = model.step(&s, u, noise)?;
        out.push(s.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub obstacles: Vec<UncertainObstacle>,
    pub objective: Objective,
    pub goal: GoalRegion,
    /// Steps executed per cycle.
    pub stride: usize,
    /// Hard stop on the number of cycles.
    pub cycle_cap: usize,
    pub options: PlanOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    GoalReached,
    PlannerStuck,
    CycleCapExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub status: RunStatus,
    pub cycles: usize,
    pub delta_o: f64,
    pub delta_tube: f64,
    pub linear_bound: f64,
    pub product_bound: f64,
    /// `N > M`.
    pub budget_violated: bool,
    pub all_executed_certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub trajectory: Vec<Vec<f64>>,
    pub logs: Vec<PlanningCycleLog>,
    pub report: RiskReport,
}

/// Initial body heading: the measured heading for the ground vehicle, 0 otherwise.
pub fn initial_pose(model: &SystemModel, state: &[f64]) -> Pose {
    Pose {
        time: 0.0,
        heading: if model.kind == ModelKind::GroundVehicle { state[3] } else { 0.0 },
    }
}

pub fn run_to_goal(
    library: &Library,
    initial: &[f64],
    mission: &Mission,
    budget: &RiskBudget,
    rng: &mut SimRng,
) -> Result<RunOutcome, PlanError> {
    budget.validate()?;
    let model = &library.model;
    if initial.len() != model.state_dim() {
        return Err(PlanError::Config(format!(
            "initial state has {} components, model needs {}",
            initial.len(),
            model.state_dim()
        )));
    }
    if mission.stride == 0 || library.primitives.iter().any(|p| p.horizon() < mission.stride) {
        return Err(PlanError::Config(format!(
            "replan stride {} incompatible with library",
            mission.stride
        )));
    }
    if (budget.delta_tube - library.config.delta_tube).abs() > BUDGET_SLACK {
        return Err(PlanError::Config(format!(
            "library tubes sized for Δ_tube = {}, budget uses {}",
            library.config.delta_tube, budget.delta_tube
        )));
    }
    let horizon = library.primitives[0].horizon();
    let duration = horizon as f64 * model.dt;
    let mut state = initial.to_vec();
    let mut pose = initial_pose(model, &state);
    let mut trajectory = vec![state.clone()];
    let mut logs = Vec::new();
    let mut status = RunStatus::CycleCapExceeded;
    if mission.goal.contains(&state) {
        status = RunStatus::GoalReached;
    } else {
        'outer: for cycle in 0..mission.cycle_cap {
            let obs = window_obstacles(&mission.obstacles, pose.time, duration);
            let contours = RiskContourSet::build(&obs, budget.delta_o)?;
            let (placed, log) = match plan_cycle(
                cycle,
                &state,
                &pose,
                library,
                &contours,
                &mission.objective,
                budget,
                &mission.options,
            ) {
                Ok(r) => r,
                Err(PlanError::Stuck { log, .. }) => {
                    logs.push(*log);
                    status = RunStatus::PlannerStuck;
                    break;
                }
                Err(e) => return Err(e),
            };
            logs.push(log);
            let visited = execute(model, &state, &placed.primitive.controls, mission.stride, rng)?;
            if model.kind == ModelKind::Underwater {
                pose.heading = placed.primitive.controls.entries()[mission.stride - 1][1];
            }
            for s in visited {
                pose.time += model.dt;
                trajectory.push(s.clone());
                state = s;
                if mission.goal.contains(&state) {
                    status = RunStatus::GoalReached;
                    break 'outer;
                }
            }
        }
    }
    let executed = logs.iter().filter(|l| l.chosen.is_some()).count();
    let all_executed_certified = logs.iter().all(|l| l.chosen.is_none_or(|c| l.certified.contains(&c)));
    let report = RiskReport {
        status,
        cycles: executed,
        delta_o: budget.delta_o,
        delta_tube: budget.delta_tube,
        linear_bound: budget.linear_bound(executed),
        product_bound: budget.product_bound(executed),
        budget_violated: executed > budget.max_cycles,
        all_executed_certified,
    };
    Ok(RunOutcome { trajectory, logs, report })
}
