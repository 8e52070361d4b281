//! Versioned TOML scenario files and the seeded scene generator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccrrt::{CcrrtParams, DiscObstacle};
use crate::contours::UncertainObstacle;
use crate::dynamics::{ModelKind, SystemModel};
use crate::planner::{allocate_risk, GoalRegion, Mission, Objective, PlanError, PlanOptions, RiskBudget, SplitPolicy};
use crate::sos::{CertifyOptions, CheckMode};
use crate::tubes::{ground_vehicle_initial, ground_vehicle_specs, underwater_initial, underwater_specs, PrimitiveSpec};
use crate::uncertainty::{rng_from_seed, DistributionSpec};

pub const SCENARIO_VERSION: u32 = 1;

pub const UNDERWATER_CLUSTERED: &str = include_str!("../fixtures/underwater_clustered.toml");
pub const LANE_CHANGE: &str = include_str!("../fixtures/lane_change.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Nominal speed of the primitive library.
    #[serde(default = "unit")]
    pub speed: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    pub delta: f64,
    pub max_cycles: usize,
    #[serde(default = "default_delta_tube")]
    pub delta_tube: f64,
}

fn default_delta_tube() -> f64 {
    crate::planner::DEFAULT_DELTA_TUBE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StartSection {
    Fixed {
        state: Vec<f64>,
    },
    /// Position uniform on an axis-aligned square; remaining components fixed.
    UniformSquare {
        center: [f64; 2],
        side: f64,
        #[serde(default)]
        rest: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub stride: usize,
    pub cycle_cap: usize,
    #[serde(default = "default_mode")]
    pub mode: CheckMode,
    #[serde(default = "yes")]
    pub cull: bool,
}

fn default_mode() -> CheckMode {
    CheckMode::Cascade
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub name: String,
    pub center: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default = "unit_weights")]
    pub weights: [f64; 2],
    pub half_width: DistributionSpec,
}

fn unit_weights() -> [f64; 2] {
    [1.0, 1.0]
}

impl ObstacleSpec {
    pub fn to_obstacle(&self) -> UncertainObstacle {
        UncertainObstacle::quadric(self.name.clone(), self.center, self.velocity, self.weights, self.half_width.clone())
    }
}

/// Ranges for one generated vehicle: `x ~ U[x]`, speed `~ U[speed]`, fixed lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleRange {
    pub name: String,
    pub lane_y: f64,
    pub x: [f64; 2],
    pub speed: [f64; 2],
    pub weights: [f64; 2],
    pub half_width: DistributionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGenerator {
    pub count: usize,
    pub seed: u64,
    pub vehicles: Vec<VehicleRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    /// Set when the obstacle layout is hand-placed rather than surveyed.
    #[serde(default)]
    pub approximate: bool,
    #[serde(default)]
    pub notes: String,
    pub seed: u64,
    pub model: ModelSection,
    pub risk: RiskSection,
    pub start: StartSection,
    pub goal: GoalRegion,
    pub objective: Objective,
    pub planner: PlannerSection,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub scenes: Option<SceneGenerator>,
    pub baseline: Option<CcrrtParams>,
}

impl Scenario {
    pub fn from_toml(s: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = toml::from_str(s)?;
        if sc.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(sc.version));
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Built-in fixture by name.
    pub fn builtin(name: &str) -> Option<Scenario> {
        let text = match name {
            "underwater_clustered" => UNDERWATER_CLUSTERED,
            "lane_change" => LANE_CHANGE,
            _ => return None,
        };
        Some(Scenario::from_toml(text).expect("shipped fixtures parse"))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let model = self.system_model();
        model.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let n = model.state_dim();
        match &self.start {
            StartSection::Fixed { state } if state.len() != n => {
                return Err(ScenarioError::Invalid(format!(
                    "start state has {} components, expected {n}",
                    state.len()
                )));
            }
            StartSection::UniformSquare { side, rest, .. } => {
                if !(*side >= 0.0) || rest.len() + 2 != n {
                    return Err(ScenarioError::Invalid("uniform-square start does not match the model".into()));
                }
            }
            _ => {}
        }
        let goal_ok = match self.goal {
            GoalRegion::Disc { radius, .. } => radius > 0.0,
            GoalRegion::Lane { y_tol, heading_tol, .. } => y_tol > 0.0 && heading_tol > 0.0,
        };
        if !goal_ok {
            return Err(ScenarioError::Invalid("empty goal region".into()));
        }
        if self.planner.stride == 0 || self.planner.stride > 5 {
            return Err(ScenarioError::Invalid(format!(
                "replan stride {} outside 1..=5",
                self.planner.stride
            )));
        }
        for o in &self.obstacles {
            o.half_width
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("{}: {e}", o.name)))?;
        }
        if let Some(g) = &self.scenes {
            for v in &g.vehicles {
                v.half_width
                    .validate()
                    .map_err(|e| ScenarioError::Invalid(format!("{}: {e}", v.name)))?;
                if v.x[0] > v.x[1] || v.speed[0] > v.speed[1] {
                    return Err(ScenarioError::Invalid(format!("{}: empty range", v.name)));
                }
            }
        }
        self.budget()?;
        Ok(())
    }

    pub fn system_model(&self) -> SystemModel {
        match self.model.kind {
            ModelKind::Underwater => SystemModel::underwater(),
            ModelKind::GroundVehicle => SystemModel::ground_vehicle(),
        }
    }

    pub fn library_inputs(&self) -> (Vec<DistributionSpec>, Vec<PrimitiveSpec>) {
        match self.model.kind {
            ModelKind::Underwater => (underwater_initial(), underwater_specs()),
            ModelKind::GroundVehicle => (ground_vehicle_initial(self.model.speed), ground_vehicle_specs(self.model.speed)),
        }
    }

    pub fn budget(&self) -> Result<RiskBudget, ScenarioError> {
        Ok(allocate_risk(
            self.risk.delta,
            self.risk.max_cycles,
            SplitPolicy::FixedTube {
                delta_tube: self.risk.delta_tube,
            },
        )?)
    }

    /// Number of runs a batch covers by default.
    pub fn default_runs(&self) -> usize {
        self.scenes.as_ref().map_or(1, |g| g.count)
    }

    /// Seed of run `run` under batch seed `seed`.
    pub fn run_seed(seed: u64, run: usize) -> u64 {
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(run as u64)
    }

    pub fn start_state(&self, run_seed: u64) -> Vec<f64> {
        match &self.start {
            StartSection::Fixed { state } => state.clone(),
            StartSection::UniformSquare { center, side, rest } => {
                let mut rng = rng_from_seed(run_seed ^ 0x53_5441_5254);
                let h = 0.5 * side;
                let mut s = vec![center[0] + rng.random_range(-h..=h), center[1] + rng.random_range(-h..=h)];
                s.extend_from_slice(rest);
                s
            }
        }
    }

    /// Static obstacles plus the generated scene of `run`.
    pub fn obstacle_specs(&self, run: usize) -> Vec<ObstacleSpec> {
        let mut out = self.obstacles.clone();
        if let Some(g) = &self.scenes {
            out.extend(generate_scene(g, run));
        }
        out
    }

    pub fn obstacles(&self, run: usize) -> Vec<UncertainObstacle> {
        self.obstacle_specs(run).iter().map(|o| o.to_obstacle()).collect()
    }

    pub fn mission(&self, run: usize) -> Mission {
        Mission {
            obstacles: self.obstacles(run),
            objective: self.objective.clone(),
            goal: self.goal.clone(),
            stride: self.planner.stride,
            cycle_cap: self.planner.cycle_cap,
            options: PlanOptions {
                certify: CertifyOptions {
                    mode: self.planner.mode,
                    pre_reject: true,
                },
                cull: self.planner.cull,
                cull_margin: 0.0,
                keep_grams: false,
            },
        }
    }

    /// Deterministic discs for the baseline: the largest possible half-width.
    pub fn baseline_obstacles(&self, run: usize) -> Vec<DiscObstacle> {
        self.obstacle_specs(run)
            .iter()
            .map(|o| DiscObstacle {
                center: o.center,
                radius: support_max(&o.half_width),
            })
            .collect()
    }
}

fn support_max(d: &DistributionSpec) -> f64 {
    match *d {
        DistributionSpec::Uniform { b, .. } => b,
        DistributionSpec::PointMass { value } => value,
        DistributionSpec::Beta { scale, shift, .. } => shift + scale.max(0.0),
        // unbounded: three standard deviations
        DistributionSpec::Gaussian { mean, variance } => mean + 3.0 * variance.sqrt(),
    }
}

pub fn generate_scene(g: &SceneGenerator, run: usize) -> Vec<ObstacleSpec> {
    let mut rng = rng_from_seed(Scenario::run_seed(g.seed, run));
    g.vehicles
        .iter()
        .map(|v| {
            let x = if v.x[0] < v.x[1] {
                rng.random_range(v.x[0]..=v.x[1])
            } else {
                v.x[0]
            };
            let s = if v.speed[0] < v.speed[1] {
                rng.random_range(v.speed[0]..=v.speed[1])
            } else {
                v.speed[0]
            };
            ObstacleSpec {
                name: v.name.clone(),
                center: [x, v.lane_y],
                velocity: [s, 0.0],
                weights: v.weights,
                half_width: v.half_width.clone(),
            }
        })
        .collect()
}
