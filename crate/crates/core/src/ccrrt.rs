//! Chance-constrained RRT baseline for a linear-Gaussian point robot,
//! replanned every cycle.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};
use thiserror::Error;

use crate::planner::{polyline_distance2, GoalRegion};
use crate::uncertainty::SimRng;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid baseline parameters: {0}")]
    Config(String),
}

/// `x_{t+1} = x_t + ΔT v_t + w_t`, `w_t ~ N(0, σ² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearGaussianModel {
    pub dt: f64,
    pub std: f64,
}

impl Default for LinearGaussianModel {
    fn default() -> Self {
        LinearGaussianModel { dt: 0.1, std: 0.02 }
    }
}

impl LinearGaussianModel {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.dt > 0.0 && self.std > 0.0) {
            return Err(BaselineError::Config(format!("dt = {}, std = {}", self.dt, self.std)));
        }
        Ok(())
    }

    /// Per-axis standard deviation after `k` noisy steps from a measured state.
    pub fn std_at(&self, k: usize) -> f64 {
        self.std * (k as f64).sqrt()
    }

    pub fn step(&self, x: [f64; 2], v: [f64; 2], rng: &mut SimRng) -> [f64; 2] {
        let n = Normal::new(0.0, self.std).unwrap();
        [x[0] + self.dt * v[0] + n.sample(rng), x[1] + self.dt * v[1] + n.sample(rng)]
    }
}

/// Deterministic disc obstacle used by the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscObstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// `radius + σ Φ⁻¹(1 - Δ)`.
pub fn inflated_radius(obstacle: &DiscObstacle, sigma: f64, delta: f64) -> f64 {
    if sigma == 0.0 {
        return obstacle.radius;
    }
    let q = StatNormal::standard().inverse_cdf(1.0 - delta);
    obstacle.radius + sigma * q
}

/// Collision probability of the tangent half-plane at the closest point of
/// the disc, for an isotropic Gaussian node.
pub fn halfplane_risk(obstacle: &DiscObstacle, mean: [f64; 2], sigma: f64) -> f64 {
    let d = ((mean[0] - obstacle.center[0]).powi(2) + (mean[1] - obstacle.center[1]).powi(2)).sqrt();
    1.0 - StatNormal::standard().cdf((d - obstacle.radius) / sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcrrtParams {
    pub model: LinearGaussianModel,
    pub speed: f64,
    /// Tree depth in steps.
    pub horizon: usize,
    pub node_budget: usize,
    pub goal_bias: f64,
    /// Weight of the goal distance in the leaf score.
    pub goal_weight: f64,
    /// Half-width of the sampling box around the current state.
    pub sample_radius: f64,
    /// Per-node chance-constraint level.
    pub delta: f64,
}

impl Default for CcrrtParams {
    fn default() -> Self {
        CcrrtParams {
            model: LinearGaussianModel::default(),
            speed: 1.0,
            horizon: 15,
            node_budget: 600,
            goal_bias: 0.1,
            goal_weight: 1.0,
            sample_radius: 1.5,
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrtNode {
    pub mean: [f64; 2],
    /// `Σ = depth · σ² I`.
    pub depth: usize,
    pub parent: Option<usize>,
    pub control: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrtTree {
    pub nodes: Vec<RrtNode>,
}

impl RrtTree {
    /// Controls from the root to `leaf`.
    pub fn branch(&self, leaf: usize) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        let mut i = leaf;
        while let Some(p) = self.nodes[i].parent {
            out.push(self.nodes[i].control);
            i = p;
        }
        out.reverse();
        out
    }
}

pub fn node_is_safe(params: &CcrrtParams, obstacles: &[DiscObstacle], mean: [f64; 2], depth: usize) -> bool {
    let sigma = params.model.std_at(depth);
    obstacles.iter().all(|o| {
        let d = ((mean[0] - o.center[0]).powi(2) + (mean[1] - o.center[1]).powi(2)).sqrt();
        d > inflated_radius(o, sigma, params.delta)
    })
}

pub fn grow_tree(params: &CcrrtParams, root: [f64; 2], obstacles: &[DiscObstacle], goal: [f64; 2], rng: &mut SimRng) -> RrtTree {
    let mut tree = RrtTree {
        nodes: vec![RrtNode {
            mean: root,
            depth: 0,
            parent: None,
            control: [0.0, 0.0],
        }],
    };
    let step = params.speed * params.model.dt;
    for _ in 0..params.node_budget {
        let target = if rng.random::<f64>() < params.goal_bias {
            goal
        } else {
            [
                root[0] + rng.random_range(-params.sample_radius..params.sample_radius),
                root[1] + rng.random_range(-params.sample_radius..params.sample_radius),
            ]
        };
        let near = tree
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.depth < params.horizon)
            .map(|(i, n)| (i, (n.mean[0] - target[0]).powi(2) + (n.mean[1] - target[1]).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, d2)) = near else { break };
        if d2 == 0.0 {
            continue;
        }
        let from = tree.nodes[i].mean;
        let d = d2.sqrt();
        let v = [params.speed * (target[0] - from[0]) / d, params.speed * (target[1] - from[1]) / d];
        let mean = [from[0] + step * v[0] / params.speed, from[1] + step * v[1] / params.speed];
        let depth = tree.nodes[i].depth + 1;
        if node_is_safe(params, obstacles, mean, depth) {
            tree.nodes.push(RrtNode {
                mean,
                depth,
                parent: Some(i),
                control: v,
            });
        }
    }
    tree
}

/// Path distance plus weighted goal distance.
pub fn leaf_score(params: &CcrrtParams, path: &[[f64; 2]], goal: [f64; 2], p: [f64; 2]) -> f64 {
    polyline_distance2(path, p).sqrt() + params.goal_weight * ((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCycleLog {
    pub cycle: usize,
    pub time: f64,
    pub state: Vec<f64>,
    pub nodes: usize,
    pub chosen: Option<usize>,
    pub score: Option<f64>,
    pub seconds: f64,
}

/// One cycle: grow a tree and return the branch controls of the best leaf,
/// or `None` when no node beyond the root survived the chance checks.
pub fn ccrrt_plan_cycle(
    cycle: usize,
    time: f64,
    state: [f64; 2],
    obstacles: &[DiscObstacle],
    path: &[[f64; 2]],
    goal: [f64; 2],
    params: &CcrrtParams,
    rng: &mut SimRng,
) -> (Option<Vec<[f64; 2]>>, BaselineCycleLog) {
    let start = Instant::now();
    let tree = grow_tree(params, state, obstacles, goal, rng);
    let best = tree
        .nodes
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, n)| (i, leaf_score(params, path, goal, n.mean)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let log = BaselineCycleLog {
        cycle,
        time,
        state: state.to_vec(),
        nodes: tree.nodes.len(),
        chosen: best.map(|b| b.0),
        score: best.map(|b| b.1),
        seconds: start.elapsed().as_secs_f64(),
    };
    (best.map(|(i, _)| tree.branch(i)), log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub trajectory: Vec<[f64; 2]>,
    pub logs: Vec<BaselineCycleLog>,
    pub goal_reached: bool,
    pub stuck: bool,
    pub cycles: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn ccrrt_run(
    start: [f64; 2],
    obstacles: &[DiscObstacle],
    path: &[[f64; 2]],
    goal: &GoalRegion,
    stride: usize,
    cycle_cap: usize,
    params: &CcrrtParams,
    rng: &mut SimRng,
) -> Result<BaselineOutcome, BaselineError> {
    params.model.validate()?;
    if stride == 0 || stride > params.horizon {
        return Err(BaselineError::Config(format!("stride {stride} outside 1..={}", params.horizon)));
    }
    let goal_point = match goal {
        GoalRegion::Disc { center, .. } => *center,
        GoalRegion::Lane { .. } => return Err(BaselineError::Config("baseline needs a disc goal".into())),
    };
    let mut state = start;
    let mut trajectory = vec![state];
    let mut logs = Vec::new();
    let (mut goal_reached, mut stuck) = (goal.contains(&state), false);
    let mut time = 0.0;
    let mut cycle = 0;
    while !goal_reached && cycle < cycle_cap {
        let (branch, log) = ccrrt_plan_cycle(cycle, time, state, obstacles, path, goal_point, params, rng);
        logs.push(log);
        cycle += 1;
        let Some(branch) = branch else {
            stuck = true;
            break;
        };
        for v in branch.iter().take(stride) {
            state = params.model.step(state, *v, rng);
            time += params.model.dt;
            trajectory.push(state);
            if goal.contains(&state) {
                goal_reached = true;
                break;
            }
        }
    }
    Ok(BaselineOutcome {
        trajectory,
        logs,
        goal_reached,
        stuck,
        cycles: cycle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::rng_from_seed;

    #[test]
    fn inflation_matches_gaussian_tail() {
        let o = DiscObstacle {
            center: [1.0, 2.0],
            radius: 0.4,
        };
        for (k, delta) in [(1usize, 0.1), (4, 0.05), (9, 0.01), (25, 0.2)] {
            let sigma = LinearGaussianModel::default().std_at(k);
            let r = inflated_radius(&o, sigma, delta);
            for ang in [0.0f64, 1.0, 2.5] {
                let mean = [o.center[0] + r * ang.cos(), o.center[1] + r * ang.sin()];
                assert!((halfplane_risk(&o, mean, sigma) - delta).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn node_inside_inflated_obstacle_is_pruned() {
        let p = CcrrtParams::default();
        let o = [DiscObstacle {
            center: [0.0, 0.0],
            radius: 0.3,
        }];
        let r = inflated_radius(&o[0], p.model.std_at(2), p.delta);
        assert!(!node_is_safe(&p, &o, [r - 1e-9, 0.0], 2));
        assert!(node_is_safe(&p, &o, [r + 1e-9, 0.0], 2));
        assert!(!node_is_safe(&p, &o, [0.31, 0.0], 1));
        let tree = grow_tree(&p, [0.5, 0.0], &o, [2.0, 0.0], &mut rng_from_seed(0));
        for n in &tree.nodes[1..] {
            assert!(node_is_safe(&p, &o, n.mean, n.depth));
        }
    }

    #[test]
    fn obstacle_free_heads_along_reference() {
        let p = CcrrtParams {
            node_budget: 600,
            ..CcrrtParams::default()
        };
        let (branch, log) = ccrrt_plan_cycle(
            0,
            0.0,
            [0.0, 0.0],
            &[],
            &[[0.0, 0.0], [5.0, 0.0]],
            [5.0, 0.0],
            &p,
            &mut rng_from_seed(1),
        );
        let b = branch.unwrap();
        assert!(log.nodes > 1);
        let v = b[0];
        assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - p.speed).abs() < 1e-12);
        assert!(v[0] > 0.9 * p.speed, "{v:?}");
    }

    #[test]
    fn tree_is_deterministic() {
        let p = CcrrtParams::default();
        let o = [DiscObstacle {
            center: [0.6, 0.1],
            radius: 0.3,
        }];
        let a = grow_tree(&p, [0.0, 0.0], &o, [2.0, 0.0], &mut rng_from_seed(9));
        let b = grow_tree(&p, [0.0, 0.0], &o, [2.0, 0.0], &mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn reaches_goal_around_obstacle() {
        let p = CcrrtParams::default();
        let o = [DiscObstacle {
            center: [1.0, 0.1],
            radius: 0.3,
        }];
        let goal = GoalRegion::Disc {
            center: [2.0, 0.0],
            radius: 0.09,
        };
        let out = ccrrt_run([0.0, 0.0], &o, &[[0.0, 0.0], [2.5, 0.0]], &goal, 2, 100, &p, &mut rng_from_seed(4)).unwrap();
        assert!(
            out.goal_reached && !out.stuck,
            "{} cycles {:?}",
            out.cycles,
            &out.trajectory[out.trajectory.len().saturating_sub(30)..]
        );
    }
}
