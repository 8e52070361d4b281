//! Experiment orchestration: batch runs, baseline comparison, contour
//! dumps, tube diagnostics and report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccrrt::{ccrrt_run, BaselineError, CcrrtParams};
use crate::contours::{outer_ellipse, ContourError, RiskContourSet};
use crate::dynamics::{DynamicsError, ModelKind, SystemModel};
use crate::planner::{run_to_goal, Objective, PlanError, RunOutcome, RunStatus};
use crate::scenario::{ObstacleSpec, Scenario, ScenarioError};
use crate::tubes::{
    build_library, containment_fractions, ground_vehicle_initial, ground_vehicle_specs, underwater_initial, underwater_specs, Library,
    LibraryConfig, TubeError, VerifierKind,
};
use crate::uncertainty::{rng_from_seed, UncertaintyError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("library does not match scenario: {0}")]
    Incompatible(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub model: ModelKind,
    pub speed: f64,
    pub library: LibraryConfig,
}

impl BuildConfig {
    pub fn for_model(model: ModelKind) -> BuildConfig {
        BuildConfig {
            model,
            speed: 1.0,
            library: LibraryConfig::default(),
        }
    }
}

pub fn cmd_build_primitives(config: &BuildConfig) -> Result<Library, BenchError> {
    let (model, initial, specs) = match config.model {
        ModelKind::Underwater => (SystemModel::underwater(), underwater_initial(), underwater_specs()),
        ModelKind::GroundVehicle => (
            SystemModel::ground_vehicle(),
            ground_vehicle_initial(config.speed),
            ground_vehicle_specs(config.speed),
        ),
    };
    Ok(build_library(&model, &initial, &specs, &config.library)?)
}

/// Analytical library for a scenario's model.
pub fn scenario_library(scenario: &Scenario) -> Result<Library, BenchError> {
    let mut cfg = BuildConfig::for_model(scenario.model.kind);
    cfg.speed = scenario.model.speed;
    cfg.library.delta_tube = scenario.risk.delta_tube;
    cmd_build_primitives(&cfg)
}

fn check_compatible(scenario: &Scenario, library: &Library) -> Result<(), BenchError> {
    if library.model.kind != scenario.model.kind {
        return Err(BenchError::Incompatible(format!(
            "library model {} vs scenario {}",
            library.model.kind.name(),
            scenario.model.kind.name()
        )));
    }
    if library.primitives.iter().any(|p| p.horizon() < scenario.planner.stride) {
        return Err(BenchError::Incompatible("primitive horizon shorter than the replan stride".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub start: Vec<f64>,
    pub status: Option<RunStatus>,
    pub goal_reached: bool,
    pub cycles: usize,
    pub linear_bound: f64,
    pub product_bound: f64,
    pub budget_violated: bool,
    pub all_executed_certified: bool,
    /// Steps at which the state lies inside a realised obstacle.
    pub collision_steps: usize,
    pub steps: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub cycles: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub goal_reached: usize,
    pub success_rate: f64,
    pub planner_stuck: usize,
    pub cap_exceeded: usize,
    pub errors: usize,
    pub budget_violations: usize,
    pub max_cycles: usize,
    pub mean_cycles: f64,
    pub collision_rate: f64,
    pub histogram: Vec<HistogramBin>,
}

impl Aggregate {
    pub fn from_records(records: &[RunRecord]) -> Aggregate {
        let runs = records.len();
        let goal_reached = records.iter().filter(|r| r.goal_reached).count();
        let count = |s: RunStatus| records.iter().filter(|r| r.status == Some(s)).count();
        let mut hist = std::collections::BTreeMap::new();
        for r in records.iter().filter(|r| r.goal_reached) {
            *hist.entry(r.cycles).or_insert(0) += 1;
        }
        let steps: usize = records.iter().map(|r| r.steps).sum();
        let collisions: usize = records.iter().map(|r| r.collision_steps).sum();
        Aggregate {
            runs,
            goal_reached,
            success_rate: if runs == 0 { 0.0 } else { goal_reached as f64 / runs as f64 },
            planner_stuck: count(RunStatus::PlannerStuck),
            cap_exceeded: count(RunStatus::CycleCapExceeded),
            errors: records.iter().filter(|r| r.error.is_some()).count(),
            budget_violations: records.iter().filter(|r| r.budget_violated).count(),
            max_cycles: records.iter().map(|r| r.cycles).max().unwrap_or(0),
            mean_cycles: if runs == 0 {
                0.0
            } else {
                records.iter().map(|r| r.cycles as f64).sum::<f64>() / runs as f64
            },
            collision_rate: if steps == 0 { 0.0 } else { collisions as f64 / steps as f64 },
            histogram: hist.into_iter().map(|(cycles, count)| HistogramBin { cycles, count }).collect(),
        }
    }
}

/// Timing-free batch summary, reproducible byte for byte from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub delta_o: f64,
    pub delta_tube: f64,
    pub max_cycles: usize,
    pub records: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

pub struct Batch {
    pub report: RunReport,
    pub outcomes: Vec<Option<RunOutcome>>,
}

/// Realised obstacle half-widths for collision counting.
fn realised_widths(specs: &[ObstacleSpec], seed: u64) -> Result<Vec<f64>, BenchError> {
    let mut rng = rng_from_seed(seed ^ 0x4f42_5354);
    specs.iter().map(|o| Ok(o.half_width.sampler()?.draw(&mut rng))).collect()
}

fn collisions(specs: &[ObstacleSpec], widths: &[f64], states: &[(f64, [f64; 2])]) -> usize {
    states
        .iter()
        .filter(|(t, p)| {
            specs.iter().zip(widths).any(|(o, w)| {
                let c = [o.center[0] + o.velocity[0] * t, o.center[1] + o.velocity[1] * t];
                o.weights[0] * (p[0] - c[0]).powi(2) + o.weights[1] * (p[1] - c[1]).powi(2) <= w * w
            })
        })
        .count()
}

pub fn cmd_run(scenario: &Scenario, library: &Library, runs: usize, seed: u64) -> Result<Batch, BenchError> {
    check_compatible(scenario, library)?;
    let budget = scenario.budget()?;
    let dt = library.model.dt;
    let results: Vec<Result<(RunRecord, Option<RunOutcome>), BenchError>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let rs = Scenario::run_seed(seed, run);
            let start = scenario.start_state(rs);
            let mission = scenario.mission(run);
            let specs = scenario.obstacle_specs(run);
            let widths = realised_widths(&specs, rs)?;
            let mut rng = rng_from_seed(rs);
            let mut rec = RunRecord {
                run,
                seed: rs,
                start: start.clone(),
                status: None,
                goal_reached: false,
                cycles: 0,
                linear_bound: budget.delta_o,
                product_bound: budget.delta_o,
                budget_violated: false,
                all_executed_certified: true,
                collision_steps: 0,
                steps: 0,
                error: None,
            };
            match run_to_goal(library, &start, &mission, &budget, &mut rng) {
                Ok(out) => {
                    let states: Vec<(f64, [f64; 2])> = out
                        .trajectory
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(k, s)| (k as f64 * dt, [s[0], s[1]]))
                        .collect();
                    rec.status = Some(out.report.status);
                    rec.goal_reached = out.report.status == RunStatus::GoalReached;
                    rec.cycles = out.report.cycles;
                    rec.linear_bound = out.report.linear_bound;
                    rec.product_bound = out.report.product_bound;
                    rec.budget_violated = out.report.budget_violated;
                    rec.all_executed_certified = out.report.all_executed_certified;
                    rec.collision_steps = collisions(&specs, &widths, &states);
                    rec.steps = states.len();
                    Ok((rec, Some(out)))
                }
                Err(e) => {
                    rec.error = Some(e.to_string());
                    Ok((rec, None))
                }
            }
        })
        .collect();
    let mut records = Vec::with_capacity(runs);
    let mut outcomes = Vec::with_capacity(runs);
    for r in results {
        let (rec, out) = r?;
        records.push(rec);
        outcomes.push(out);
    }
    let aggregate = Aggregate::from_records(&records);
    Ok(Batch {
        report: RunReport {
            scenario: scenario.name.clone(),
            seed,
            delta_o: budget.delta_o,
            delta_tube: budget.delta_tube,
            max_cycles: budget.max_cycles,
            records,
            aggregate,
        },
        outcomes,
    })
}

/// Write `report.json`, `histogram.csv`, `timings.csv`, per-run JSONL cycle
/// logs under `runs/` and trajectory CSVs under `trajectories/`.
pub fn write_batch(batch: &Batch, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir.join("runs"))?;
    fs::create_dir_all(dir.join("trajectories"))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&batch.report)? + "\n")?;
    let mut h = csv::Writer::from_path(dir.join("histogram.csv"))?;
    h.write_record(["cycles", "count"])?;
    for b in &batch.report.aggregate.histogram {
        h.write_record([b.cycles.to_string(), b.count.to_string()])?;
    }
    h.flush()?;
    let mut t = csv::Writer::from_path(dir.join("timings.csv"))?;
    t.write_record(["run", "cycle", "candidate", "certified", "obstacles", "seconds"])?;
    for (rec, out) in batch.report.records.iter().zip(&batch.outcomes) {
        let Some(out) = out else { continue };
        let mut w = BufWriter::new(fs::File::create(dir.join("runs").join(format!("run_{:04}.jsonl", rec.run)))?);
        for log in &out.logs {
            serde_json::to_writer(&mut w, log)?;
            w.write_all(b"\n")?;
            for c in &log.candidates {
                t.write_record([
                    rec.run.to_string(),
                    log.cycle.to_string(),
                    c.index.to_string(),
                    c.certified.to_string(),
                    c.obstacles_checked.to_string(),
                    format!("{:.6}", c.seconds),
                ])?;
            }
        }
        w.flush()?;
        write_trajectory(&out.trajectory, &dir.join("trajectories").join(format!("run_{:04}.csv", rec.run)))?;
    }
    t.flush()?;
    Ok(())
}

pub fn write_trajectory(traj: &[Vec<f64>], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    let n = traj.first().map_or(0, |s| s.len());
    let mut header = vec!["step".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (k, s) in traj.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub run: usize,
    pub seed: u64,
    pub goal_reached: bool,
    pub stuck: bool,
    pub cycles: usize,
    pub collision_steps: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonNote {
    pub axis: String,
    pub primary: String,
    pub baseline: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario: String,
    pub seed: u64,
    pub primary: RunReport,
    pub baseline: Option<Vec<BaselineRecord>>,
    pub baseline_success_rate: Option<f64>,
    pub baseline_collision_rate: Option<f64>,
    pub notes: Vec<ComparisonNote>,
}

fn comparison_notes() -> Vec<ComparisonNote> {
    let n = |a: &str, p: &str, b: &str| ComparisonNote {
        axis: a.into(),
        primary: p.into(),
        baseline: b.into(),
    };
    vec![
        n(
            "safety check",
            "SOS certificate over the whole continuous tube",
            "chance constraint at discrete tree nodes",
        ),
        n("dynamics", "nonlinear stochastic model", "linear integrator"),
        n("noise", "arbitrary distributions through moments", "Gaussian only"),
        n(
            "obstacles",
            "polynomial sets with random parameters, non-convex allowed",
            "deterministic discs with inflated radii",
        ),
    ]
}

/// Primary planner and, when enabled, the baseline on the same seeds.
pub fn cmd_compare(
    scenario: &Scenario,
    library: &Library,
    runs: usize,
    seed: u64,
    baseline: bool,
) -> Result<(Batch, CompareReport), BenchError> {
    let batch = cmd_run(scenario, library, runs, seed)?;
    let mut base = None;
    if baseline {
        let params: CcrrtParams = scenario.baseline.unwrap_or_default();
        let Objective::PathTracking { path } = &scenario.objective else {
            return Err(BenchError::Incompatible("baseline needs a reference path".into()));
        };
        let recs: Vec<Result<BaselineRecord, BenchError>> = (0..runs)
            .into_par_iter()
            .map(|run| {
                let rs = Scenario::run_seed(seed, run);
                let start = scenario.start_state(rs);
                let specs = scenario.obstacle_specs(run);
                let widths = realised_widths(&specs, rs)?;
                let mut rng = rng_from_seed(rs ^ 0x4343_5252);
                let out = ccrrt_run(
                    [start[0], start[1]],
                    &scenario.baseline_obstacles(run),
                    path,
                    &scenario.goal,
                    scenario.planner.stride,
                    scenario.planner.cycle_cap,
                    &params,
                    &mut rng,
                )?;
                let states: Vec<(f64, [f64; 2])> = out
                    .trajectory
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, s)| (k as f64 * params.model.dt, *s))
                    .collect();
                Ok(BaselineRecord {
                    run,
                    seed: rs,
                    goal_reached: out.goal_reached,
                    stuck: out.stuck,
                    cycles: out.cycles,
                    collision_steps: collisions(&specs, &widths, &states),
                    steps: states.len(),
                })
            })
            .collect();
        base = Some(recs.into_iter().collect::<Result<Vec<_>, _>>()?);
    }
    let rate = |f: &dyn Fn(&BaselineRecord) -> (usize, usize)| {
        base.as_ref().map(|b: &Vec<BaselineRecord>| {
            let (num, den) = b.iter().map(f).fold((0, 0), |a, x| (a.0 + x.0, a.1 + x.1));
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        })
    };
    let report = CompareReport {
        scenario: scenario.name.clone(),
        seed,
        baseline_success_rate: rate(&|r| (r.goal_reached as usize, 1)),
        baseline_collision_rate: rate(&|r| (r.collision_steps, r.steps)),
        baseline: base,
        primary: batch.report.clone(),
        notes: comparison_notes(),
    };
    Ok((batch, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseRecord {
    pub name: String,
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourDump {
    pub delta: f64,
    pub grid: GridSpec,
    /// Boundary segments of the membership region.
    pub segments: Vec<[[f64; 2]; 2]>,
    pub outer: Vec<EllipseRecord>,
}

/// Scalar field that is `<= 0` exactly on members of every contour.
pub fn membership_field(set: &RiskContourSet, p: [f64; 2], t: f64) -> f64 {
    set.entries
        .iter()
        .map(|e| {
            let (p1, p2) = e.values(p, t);
            p2.max((1.0 - set.delta) * p1 - p2 * p2)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Marching squares on the zero level of `f` over the grid.
pub fn marching_squares(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Vec<[[f64; 2]; 2]> {
    let (nx, ny) = (grid.nx.max(2), grid.ny.max(2));
    let px = |i: usize| grid.x[0] + (grid.x[1] - grid.x[0]) * i as f64 / (nx - 1) as f64;
    let py = |j: usize| grid.y[0] + (grid.y[1] - grid.y[0]) * j as f64 / (ny - 1) as f64;
    let vals: Vec<f64> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| f([px(i), py(j)]))
        .collect();
    let v = |i: usize, j: usize| vals[j * nx + i];
    let lerp = |a: [f64; 2], b: [f64; 2], fa: f64, fb: f64| {
        let s = if fa == fb { 0.5 } else { fa / (fa - fb) };
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    };
    let mut segs = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            // corners counter-clockwise from bottom-left
            let c = [[px(i), py(j)], [px(i + 1), py(j)], [px(i + 1), py(j + 1)], [px(i), py(j + 1)]];
            let fv = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if (fv[a] <= 0.0) != (fv[b] <= 0.0) {
                    pts.push(lerp(c[a], c[b], fv[a], fv[b]));
                }
            }
            match pts.len() {
                2 => segs.push([pts[0], pts[1]]),
                4 => {
                    segs.push([pts[0], pts[1]]);
                    segs.push([pts[2], pts[3]]);
                }
                _ => {}
            }
        }
    }
    segs
}

pub fn cmd_contour_dump(scenario: &Scenario, run: usize, grid: &GridSpec, delta: Option<f64>) -> Result<ContourDump, BenchError> {
    let delta = match delta {
        Some(d) => d,
        None => scenario.budget()?.delta_o,
    };
    let set = RiskContourSet::build(&scenario.obstacles(run), delta)?;
    let segments = marching_squares(grid, |p| membership_field(&set, p, grid.t));
    let outer = set
        .entries
        .iter()
        .filter(|e| e.shape.is_some())
        .map(|e| {
            let el = outer_ellipse(e, delta)?;
            Ok(EllipseRecord {
                name: e.name.clone(),
                center: el.shape.center_at(grid.t),
                semi_axes: el.semi_axes(),
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    Ok(ContourDump {
        delta,
        grid: *grid,
        segments,
        outer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeCheck {
    pub index: usize,
    pub label: String,
    pub radius: f64,
    pub verifier: VerifierKind,
    pub fractions: Vec<f64>,
    pub min_fraction: f64,
    pub pass: bool,
}

/// Re-simulate every primitive and report per-step containment.
pub fn cmd_tube_check(library: &Library, samples: usize, seed: u64) -> Result<Vec<TubeCheck>, BenchError> {
    library
        .primitives
        .par_iter()
        .map(|p| {
            let mut rng = rng_from_seed(seed.wrapping_add(p.index as u64));
            let sims = library.model.simulate(&library.initial, &p.controls, samples, &mut rng)?;
            let fractions = containment_fractions(&sims, &p.tube.nominal, p.tube.phi());
            let min_fraction = fractions.iter().cloned().fold(1.0, f64::min);
            Ok(TubeCheck {
                index: p.index,
                label: p.label.clone(),
                radius: p.tube.radius,
                verifier: p.tube.verifier,
                pass: min_fraction >= 1.0 - p.tube.delta_tube,
                fractions,
                min_fraction,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contours::quadric_boundary_level;
    use crate::uncertainty::DistributionSpec;

    #[test]
    fn zero_runs_gives_empty_report() {
        let sc = Scenario::builtin("underwater_clustered").unwrap();
        let lib = scenario_library(&sc).unwrap();
        let b = cmd_run(&sc, &lib, 0, 1).unwrap();
        assert!(b.report.records.is_empty());
        assert_eq!(b.report.aggregate.runs, 0);
    }

    #[test]
    fn library_rebuild_is_byte_identical() {
        let cfg = BuildConfig::for_model(ModelKind::GroundVehicle);
        let a = cmd_build_primitives(&cfg).unwrap().to_json().unwrap();
        let b = cmd_build_primitives(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let lib = cmd_build_primitives(&BuildConfig::for_model(ModelKind::Underwater)).unwrap();
        assert_eq!(lib.len(), 5);
        assert!(lib.primitives.iter().all(|p| p.horizon() == 5));
    }

    #[test]
    fn incompatible_library_rejected() {
        let sc = Scenario::builtin("lane_change").unwrap();
        let lib = cmd_build_primitives(&BuildConfig::for_model(ModelKind::Underwater)).unwrap();
        assert!(matches!(cmd_run(&sc, &lib, 1, 0), Err(BenchError::Incompatible(_))));
    }

    fn single_disc_scenario() -> Scenario {
        let mut sc = Scenario::builtin("underwater_clustered").unwrap();
        sc.obstacles.truncate(1);
        sc.obstacles[0].center = [0.0, 0.0];
        sc
    }

    #[test]
    fn disc_boundary_is_circle_of_bisection_radius() {
        let sc = single_disc_scenario();
        let grid = GridSpec {
            x: [-1.0, 1.0],
            y: [-1.0, 1.0],
            nx: 201,
            ny: 201,
            t: 0.0,
        };
        let d = cmd_contour_dump(&sc, 0, &grid, None).unwrap();
        // radial bisection on the membership test
        let set = RiskContourSet::build(&sc.obstacles(0), 0.1).unwrap();
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if set.contains([mid, 0.0], 0.0) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!(!d.segments.is_empty());
        for s in &d.segments {
            for p in s {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                assert!((r - hi).abs() < 0.01, "{r} vs {hi}");
            }
        }
        assert_eq!(d.outer.len(), 1);
        assert!(d.outer[0].semi_axes[0] >= hi);
    }

    #[test]
    fn boundary_shrinks_as_delta_grows() {
        let sc = single_disc_scenario();
        let w = DistributionSpec::uniform(0.3, 0.4);
        let m = [w.raw_moment(2).unwrap(), w.raw_moment(4).unwrap()];
        let r = |d: f64| quadric_boundary_level(m, d).sqrt();
        assert!(r(0.5) < r(0.1));
        assert!((r(0.999_999) - m[0].sqrt()).abs() < 1e-3);
        let grid = GridSpec {
            x: [-1.0, 1.0],
            y: [-1.0, 1.0],
            nx: 101,
            ny: 101,
            t: 0.0,
        };
        let d = cmd_contour_dump(&sc, 0, &grid, Some(0.99)).unwrap();
        for s in &d.segments {
            let rr = (s[0][0].powi(2) + s[0][1].powi(2)).sqrt();
            assert!((rr - r(0.99)).abs() < 0.02);
        }
    }

    #[test]
    fn lane_vehicle_boundary_is_two_to_one() {
        let sc = Scenario::builtin("lane_change").unwrap();
        let specs = sc.obstacle_specs(0);
        let c = specs[0].center;
        let grid = GridSpec {
            x: [c[0] - 1.0, c[0] + 1.0],
            y: [c[1] - 1.0, c[1] + 1.0],
            nx: 401,
            ny: 401,
            t: 0.0,
        };
        let d = cmd_contour_dump(&sc, 0, &grid, None).unwrap();
        let near: Vec<[f64; 2]> = d
            .segments
            .iter()
            .map(|s| s[0])
            .filter(|p| (p[0] - c[0]).abs() < 1.0 && (p[1] - c[1]).abs() < 0.6)
            .collect();
        let xmax = near.iter().map(|p| (p[0] - c[0]).abs()).fold(0.0, f64::max);
        let ymax = near.iter().map(|p| (p[1] - c[1]).abs()).fold(0.0, f64::max);
        assert!((xmax / ymax - 2.0).abs() < 0.05, "{xmax} {ymax}");
        let e = d.outer.iter().find(|e| e.name == specs[0].name).unwrap();
        assert!((e.semi_axes[0] / e.semi_axes[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn marching_squares_on_unit_circle() {
        let grid = GridSpec {
            x: [-2.0, 2.0],
            y: [-2.0, 2.0],
            nx: 81,
            ny: 81,
            t: 0.0,
        };
        let s = marching_squares(&grid, |p| p[0] * p[0] + p[1] * p[1] - 1.0);
        assert!(s.len() > 50);
        for seg in s {
            for p in seg {
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn compare_is_reproducible_and_optional() {
        let sc = Scenario::builtin("underwater_clustered").unwrap();
        let lib = scenario_library(&sc).unwrap();
        let (_, a) = cmd_compare(&sc, &lib, 2, 3, true).unwrap();
        let (_, b) = cmd_compare(&sc, &lib, 2, 3, true).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.notes.len(), 4);
        assert_eq!(a.baseline.as_ref().unwrap().len(), 2);
        let (_, c) = cmd_compare(&sc, &lib, 2, 3, false).unwrap();
        assert!(c.baseline.is_none());
        assert_eq!(c.primary, a.primary);
    }

    #[test]
    fn batch_files_written_and_report_recomputable() {
        let sc = Scenario::builtin("underwater_clustered").unwrap();
        let lib = scenario_library(&sc).unwrap();
        let b = cmd_run(&sc, &lib, 3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_batch(&b, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(Aggregate::from_records(&back.records), back.aggregate);
        for r in &back.records {
            assert_eq!(
                r.linear_bound,
                crate::planner::linear_risk_bound(back.delta_o, back.delta_tube, r.cycles)
            );
            let lines = fs::read_to_string(dir.path().join("runs").join(format!("run_{:04}.jsonl", r.run))).unwrap();
            assert_eq!(lines.lines().count(), r.cycles);
            assert!(dir.path().join("trajectories").join(format!("run_{:04}.csv", r.run)).exists());
        }
        let again = cmd_run(&sc, &lib, 3, 9).unwrap();
        assert_eq!(serde_json::to_string_pretty(&again.report).unwrap() + "\n", text);
    }
}
