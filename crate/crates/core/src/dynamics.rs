//! Benchmark stochastic systems, Monte Carlo rollouts and exact propagation of
//! position moments.
//!
//! Both models move in the plane by increments `ΔT·V·(cos Φ, sin Φ)` where the
//! speed `V` and heading `Φ` of one step are independent of each other and of
//! every other step:
//!
//! * underwater robot: `V = v_t + ω_v`, `Φ = θ_t + ω_θ` with the control
//!   `(v_t, θ_t)` fixed in advance;
//! * ground vehicle under the tracking law: `v_{t+1} = v̄_{t+1} + ΔT·ω_v`,
//!   `θ_{t+1} = θ̄_{t+1} + ΔT·ω_θ`, so the increment at step `t` only involves
//!   the noise drawn at step `t-1`.
//!
//! Raw moments of position up to order four then follow from moments of sums
//! of independent 2D increments.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uncertainty::{DistributionSpec, SimRng, UncertaintyError};

/// Highest order of tracked position moments.
pub const MOMENT_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("controls of kind {controls} are not supported by the {model} model")]
    Unsupported { model: &'static str, controls: &'static str },
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Underwater,
    GroundVehicle,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Underwater => "underwater",
            ModelKind::GroundVehicle => "ground-vehicle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub kind: ModelKind,
    pub dt: f64,
    /// Speed channel `ω_v`.
    pub noise_v: DistributionSpec,
    /// Heading channel `ω_θ`.
    pub noise_theta: DistributionSpec,
}

impl SystemModel {
    /// Underwater robot with `ΔT = 0.1` and `ω_v, ω_θ ~ U[-0.1, 0.1]`.
    pub fn underwater() -> Self {
        SystemModel {
            kind: ModelKind::Underwater,
            dt: 0.1,
            noise_v: DistributionSpec::uniform(-0.1, 0.1),
            noise_theta: DistributionSpec::uniform(-0.1, 0.1),
        }
    }

    /// Ground vehicle with `ΔT = 0.1`, `ω_v ~ N(0, 0.09)` and `ω_θ ~ 3·Beta(1, 3)`.
    pub fn ground_vehicle() -> Self {
        SystemModel {
            kind: ModelKind::GroundVehicle,
            dt: 0.1,
            noise_v: DistributionSpec::gaussian(0.0, 0.09),
            noise_theta: DistributionSpec::beta(1.0, 3.0, 3.0, 0.0),
        }
    }

    pub fn noise_free(&self) -> Self {
        SystemModel {
            noise_v: DistributionSpec::point(0.0),
            noise_theta: DistributionSpec::point(0.0),
            ..self.clone()
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            ModelKind::Underwater => 2,
            ModelKind::GroundVehicle => 4,
        }
    }

    pub fn control_dim(&self) -> usize {
        2
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0) {
            return Err(UncertaintyError::InvalidParameters(format!("dt must be positive, got {}", self.dt)).into());
        }
        self.noise_v.validate()?;
        self.noise_theta.validate()?;
        Ok(())
    }

    fn check_controls(&self, controls: &ControlSequence) -> Result<(), DynamicsError> {
        match (self.kind, controls) {
            (ModelKind::Underwater, ControlSequence::Direct { .. }) | (ModelKind::GroundVehicle, ControlSequence::Tracking { .. }) => {
                Ok(())
            }
            (k, c) => Err(DynamicsError::Unsupported {
                model: k.name(),
                controls: c.kind_name(),
            }),
        }
    }

    /// One application of the update equations. `control` is `(v, θ)` for the
    /// underwater robot and the tracking target `(v̄_{t+1}, θ̄_{t+1})` for the
    /// ground vehicle; `noise` is `(ω_v, ω_θ)`.
    pub fn step(&self, state: &[f64], control: [f64; 2], noise: [f64; 2]) -> Result<Vec<f64>, DynamicsError> {
        if state.len() != self.state_dim() {
            return Err(DynamicsError::Dimension {
                expected: self.state_dim(),
                found: state.len(),
            });
        }
        let dt = self.dt;
        Ok(match self.kind {
            ModelKind::Underwater => {
                let speed = control[0] + noise[0];
                let heading = control[1] + noise[1];
                vec![state[0] + dt * speed * heading.cos(), state[1] + dt * speed * heading.sin()]
            }
            ModelKind::GroundVehicle => {
                let (v, th) = (state[2], state[3]);
                vec![
                    state[0] + dt * v * th.cos(),
                    state[1] + dt * v * th.sin(),
                    control[0] + dt * noise[0],
                    control[1] + dt * noise[1],
                ]
            }
        })
    }

    /// Noise-free rollout of `controls` from `x0`.
    pub fn rollout(&self, x0: &[f64], controls: &ControlSequence) -> Result<Vec<Vec<f64>>, DynamicsError> {
        self.check_controls(controls)?;
        let mut out = vec![x0.to_vec()];
        for &u in controls.entries() {
            let next = self.step(out.last().unwrap(), u, [0.0, 0.0])?;
            out.push(next);
        }
        Ok(out)
    }

    /// Monte Carlo rollouts: `samples` trajectories of `T + 1` states, with the
    /// initial state drawn componentwise from `initial`.
    pub fn simulate(
        &self,
        initial: &[DistributionSpec],
        controls: &ControlSequence,
        samples: usize,
        rng: &mut SimRng,
    ) -> Result<Trajectories, DynamicsError> {
        self.check_controls(controls)?;
        let n = self.state_dim();
        if initial.len() != n {
            return Err(DynamicsError::Dimension {
                expected: n,
                found: initial.len(),
            });
        }
        let init: Vec<_> = initial.iter().map(|d| d.sampler()).collect::<Result<_, _>>()?;
        let nv = self.noise_v.sampler()?;
        let nt = self.noise_theta.sampler()?;
        let steps = controls.horizon() + 1;
        let mut data = Vec::with_capacity(samples * steps * n);
        let mut state = vec![0.0; n];
        for _ in 0..samples {
            for (s, d) in state.iter_mut().zip(&init) {
                *s = d.draw(rng);
            }
            data.extend_from_slice(&state);
            for &u in controls.entries() {
                let noise = [nv.draw(rng), nt.draw(rng)];
                state = self.step(&state, u, noise)?;
                data.extend_from_slice(&state);
            }
        }
        Ok(Trajectories {
            samples,
            steps,
            state_dim: n,
            data,
        })
    }

    /// Exact raw position moments up to order four at every step.
    pub fn propagate_moments(&self, initial: &[DistributionSpec], controls: &ControlSequence) -> Result<StateMoments, DynamicsError> {
        self.check_controls(controls)?;
        let n = self.state_dim();
        if initial.len() != n {
            return Err(DynamicsError::Dimension {
                expected: n,
                found: initial.len(),
            });
        }
        let dt = self.dt;
        let mut pos = PositionMoments::independent(&initial[0], &initial[1])?;
        let mut steps = Vec::with_capacity(controls.horizon() + 1);
        match controls {
            ControlSequence::Direct { controls } => {
                steps.push(StepMoments {
                    pos: pos.clone(),
                    mean_v: None,
                    mean_theta: None,
                });
                for &[v, th] in controls {
                    // V = ΔT (v + ω_v), Φ = θ + ω_θ
                    let speed = self.noise_v.affine(dt, dt * v);
                    let inc = increment_moments(&speed, &self.noise_theta, th)?;
                    pos = pos.convolve(&inc);
                    steps.push(StepMoments {
                        pos: pos.clone(),
                        mean_v: None,
                        mean_theta: None,
                    });
                }
            }
            ControlSequence::Tracking { targets } => {
                let mut speed = initial[2].affine(dt, 0.0);
                let mut heading = initial[3].clone();
                let mut phase = 0.0;
                steps.push(StepMoments {
                    pos: pos.clone(),
                    mean_v: Some(initial[2].mean()),
                    mean_theta: Some(initial[3].mean()),
                });
                for &[vbar, thbar] in targets {
                    let inc = increment_moments(&speed, &heading, phase)?;
                    pos = pos.convolve(&inc);
                    // state after this step: v = v̄ + ΔT ω_v, θ = θ̄ + ΔT ω_θ
                    let v_next = self.noise_v.affine(dt, vbar);
                    let th_noise = self.noise_theta.affine(dt, 0.0);
                    steps.push(StepMoments {
                        pos: pos.clone(),
                        mean_v: Some(v_next.mean()),
                        mean_theta: Some(thbar + th_noise.mean()),
                    });
                    speed = v_next.affine(dt, 0.0);
                    heading = th_noise;
                    phase = thbar;
                }
            }
        }
        Ok(StateMoments { steps })
    }
}

/// Per-step controls of a motion primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlSequence {
    /// `(speed, heading)` applied at steps `0..T`.
    Direct { controls: Vec<[f64; 2]> },
    /// Tracking targets `(v̄_{t+1}, θ̄_{t+1})` for steps `0..T`.
    Tracking { targets: Vec<[f64; 2]> },
}

impl ControlSequence {
    pub fn horizon(&self) -> usize {
        self.entries().len()
    }

    pub fn entries(&self) -> &[[f64; 2]] {
        match self {
            ControlSequence::Direct { controls } => controls,
            ControlSequence::Tracking { targets } => targets,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            ControlSequence::Direct { .. } => "direct",
            ControlSequence::Tracking { .. } => "tracking",
        }
    }

    /// Rotate headings by `heading` (body frame to world frame).
    pub fn rotated(&self, heading: f64) -> ControlSequence {
        let rot = |e: &Vec<[f64; 2]>| e.iter().map(|&[v, th]| [v, th + heading]).collect();
        match self {
            ControlSequence::Direct { controls } => ControlSequence::Direct { controls: rot(controls) },
            ControlSequence::Tracking { targets } => ControlSequence::Tracking { targets: rot(targets) },
        }
    }
}

/// Acceleration and turn-rate inputs `(a_t, u_t)` realising a tracking target
/// from the current ground-vehicle state.
pub fn tracking_inputs(state: &[f64], target: [f64; 2], dt: f64) -> [f64; 2] {
    [(target[0] - state[2]) / dt, (target[1] - state[3]) / dt]
}

/// Simulated trajectories, row-major `[sample][step][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub samples: usize,
    pub steps: usize,
    pub state_dim: usize,
    pub data: Vec<f64>,
}

impl Trajectories {
    pub fn state(&self, sample: usize, step: usize) -> &[f64] {
        let o = (sample * self.steps + step) * self.state_dim;
        &self.data[o..o + self.state_dim]
    }

    /// CSV with columns `sample,step,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DynamicsError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["sample".to_string(), "step".to_string()];
        header.extend((0..self.state_dim).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for s in 0..self.samples {
            for k in 0..self.steps {
                let mut rec = vec![s.to_string(), k.to_string()];
                rec.extend(self.state(s, k).iter().map(|v| format!("{v}")));
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Raw moments `E[x^a y^b]`, `a + b <= 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionMoments {
    m: [[f64; MOMENT_ORDER + 1]; MOMENT_ORDER + 1],
}

impl PositionMoments {
    pub fn deterministic(x: f64, y: f64) -> Self {
        let mut m = [[0.0; MOMENT_ORDER + 1]; MOMENT_ORDER + 1];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate().take(MOMENT_ORDER + 1 - a) {
                *v = x.powi(a as i32) * y.powi(b as i32);
            }
        }
        PositionMoments { m }
    }

    pub fn independent(x: &DistributionSpec, y: &DistributionSpec) -> Result<Self, UncertaintyError> {
        let mx = x.moment_sequence(MOMENT_ORDER as u32)?;
        let my = y.moment_sequence(MOMENT_ORDER as u32)?;
        let mut m = [[0.0; MOMENT_ORDER + 1]; MOMENT_ORDER + 1];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate().take(MOMENT_ORDER + 1 - a) {
                *v = mx.get(a) * my.get(b);
            }
        }
        Ok(PositionMoments { m })
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        assert!(a + b <= MOMENT_ORDER);
        self.m[a][b]
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.m[1][0], self.m[0][1]]
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [mx, my] = self.mean();
        let cxy = self.m[1][1] - mx * my;
        [[self.m[2][0] - mx * mx, cxy], [cxy, self.m[0][2] - my * my]]
    }

    /// Moments of the sum with an independent increment.
    pub fn convolve(&self, inc: &PositionMoments) -> PositionMoments {
        let mut m = [[0.0; MOMENT_ORDER + 1]; MOMENT_ORDER + 1];
        for a in 0..=MOMENT_ORDER {
            for b in 0..=(MOMENT_ORDER - a) {
                let mut s = 0.0;
                for i in 0..=a {
                    for j in 0..=b {
                        s += binom(a, i) * binom(b, j) * self.m[i][j] * inc.m[a - i][b - j];
                    }
                }
                m[a][b] = s;
            }
        }
        PositionMoments { m }
    }

    /// Moments of `(x - cx, y - cy)`.
    pub fn shifted(&self, center: [f64; 2]) -> PositionMoments {
        self.convolve(&PositionMoments::deterministic(-center[0], -center[1]))
    }

    /// Moments after the rigid motion `p -> R(heading) p + offset`.
    pub fn transformed(&self, heading: f64, offset: [f64; 2]) -> PositionMoments {
        let (c, s) = (heading.cos(), heading.sin());
        // E[(c x - s y)^a (s x + c y)^b] expanded by the binomial theorem
        let mut m = [[0.0; MOMENT_ORDER + 1]; MOMENT_ORDER + 1];
        for a in 0..=MOMENT_ORDER {
            for b in 0..=(MOMENT_ORDER - a) {
                let mut acc = 0.0;
                for i in 0..=a {
                    for j in 0..=b {
                        // (c x)^i (-s y)^{a-i} (s x)^j (c y)^{b-j}
                        let coef = binom(a, i)
                            * binom(b, j)
                            * c.powi(i as i32)
                            * (-s).powi((a - i) as i32)
                            * s.powi(j as i32)
                            * c.powi((b - j) as i32);
                        acc += coef * self.m[i + j][a - i + b - j];
                    }
                }
                m[a][b] = acc;
            }
        }
        PositionMoments { m }.convolve(&PositionMoments::deterministic(offset[0], offset[1]))
    }
}

fn binom(n: usize, k: usize) -> f64 {
    const T: [[f64; 5]; 5] = [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0, 0.0],
        [1.0, 3.0, 3.0, 1.0, 0.0],
        [1.0, 4.0, 6.0, 4.0, 1.0],
    ];
    T[n][k]
}

/// Moments of `V·(cos Φ, sin Φ)` with `Φ = phase + Ω`, `V ⟂ Ω`.
fn increment_moments(speed: &DistributionSpec, angle_noise: &DistributionSpec, phase: f64) -> Result<PositionMoments, UncertaintyError> {
    let vm = speed.moment_sequence(MOMENT_ORDER as u32)?;
    // E[e^{i k Φ}] for k = 0..=4
    let mut char_pos = [Complex64::new(1.0, 0.0); MOMENT_ORDER + 1];
    for (k, c) in char_pos.iter_mut().enumerate().skip(1) {
        let (re, im) = angle_noise.trig_moments(k as f64 * phase, k as u32)?;
        *c = Complex64::new(re, im);
    }
    let e_pow = |k: i32| -> Complex64 {
        if k >= 0 {
            char_pos[k as usize]
        } else {
            char_pos[(-k) as usize].conj()
        }
    };
    let mut m = [[0.0; MOMENT_ORDER + 1]; MOMENT_ORDER + 1];
    for a in 0..=MOMENT_ORDER {
        for b in 0..=(MOMENT_ORDER - a) {
            // cos^a sin^b = (z + 1/z)^a (z - 1/z)^b / (2^a (2i)^b)
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..=a {
                for j in 0..=b {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    let k = (a + b) as i32 - 2 * (i + j) as i32;
                    acc += e_pow(k) * (binom(a, i) * binom(b, j) * sign);
                }
            }
            let denom = Complex64::new(2f64.powi(a as i32), 0.0) * Complex64::new(0.0, 2.0).powi(b as i32);
            m[a][b] = (acc / denom).re * vm.get(a + b);
        }
    }
    Ok(PositionMoments { m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMoments {
    pub pos: PositionMoments,
    /// `E[v_k]` for models with a speed state.
    pub mean_v: Option<f64>,
    /// `E[θ_k]` for models with a heading state.
    pub mean_theta: Option<f64>,
}

/// Moments at steps `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMoments {
    pub steps: Vec<StepMoments>,
}

impl StateMoments {
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn means(&self) -> Vec<[f64; 2]> {
        self.steps.iter().map(|s| s.pos.mean()).collect()
    }

    pub fn transformed(&self, heading: f64, offset: [f64; 2]) -> StateMoments {
        StateMoments {
            steps: self
                .steps
                .iter()
                .map(|s| StepMoments {
                    pos: s.pos.transformed(heading, offset),
                    mean_v: s.mean_v,
                    mean_theta: s.mean_theta.map(|t| t + heading),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::rng_from_seed;
    use std::f64::consts::FRAC_PI_4;

    fn det(v: &[f64]) -> Vec<DistributionSpec> {
        v.iter().map(|&x| DistributionSpec::point(x)).collect()
    }

    fn straight(n: usize) -> ControlSequence {
        ControlSequence::Direct {
            controls: vec![[1.0, 0.0]; n],
        }
    }

    fn curved(kappa: f64) -> ControlSequence {
        ControlSequence::Direct {
            controls: (0..5).map(|k| [1.0, kappa * (k + 1) as f64]).collect(),
        }
    }

    fn vehicle_targets(turn: f64) -> ControlSequence {
        ControlSequence::Tracking {
            targets: (0..5).map(|k| [1.0, turn * (k + 1) as f64]).collect(),
        }
    }

    #[test]
    fn noise_free_underwater_step() {
        let m = SystemModel::underwater();
        let s = m.step(&[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-15 && s[1] == 0.0);
        assert!(m.step(&[0.0], [1.0, 0.0], [0.0, 0.0]).is_err());
    }

    #[test]
    fn noisy_underwater_step_matches_formula() {
        let m = SystemModel::underwater();
        let s = m.step(&[1.0, 2.0], [1.0, FRAC_PI_4], [0.05, -0.03]).unwrap();
        let ex = 1.0 + 0.1 * 1.05 * (FRAC_PI_4 - 0.03).cos();
        let ey = 2.0 + 0.1 * 1.05 * (FRAC_PI_4 - 0.03).sin();
        assert!((s[0] - ex).abs() < 1e-12 && (s[1] - ey).abs() < 1e-12);
    }

    #[test]
    fn tracking_law_hits_targets() {
        let m = SystemModel::ground_vehicle();
        let s = m.step(&[0.0, 0.0, 1.0, 0.0], [1.3, 0.2], [0.0, 0.0]).unwrap();
        assert_eq!(s[2], 1.3);
        assert_eq!(s[3], 0.2);
        let u = tracking_inputs(&[0.0, 0.0, 1.0, 0.0], [1.3, 0.2], 0.1);
        assert!((u[0] - 3.0).abs() < 1e-12 && (u[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_controls_rejected() {
        let m = SystemModel::underwater();
        assert!(matches!(
            m.propagate_moments(&det(&[0.0, 0.0]), &vehicle_targets(0.0)),
            Err(DynamicsError::Unsupported { .. })
        ));
    }

    #[test]
    fn zero_noise_simulation_equals_rollout() {
        let m = SystemModel::underwater().noise_free();
        let c = curved(0.1);
        let tr = m.simulate(&det(&[0.5, -1.0]), &c, 3, &mut rng_from_seed(1)).unwrap();
        let ro = m.rollout(&[0.5, -1.0], &c).unwrap();
        for k in 0..=5 {
            assert_eq!(tr.state(2, k), ro[k].as_slice());
        }
        let mom = m.propagate_moments(&det(&[0.5, -1.0]), &c).unwrap();
        for k in 0..=5 {
            let (x, y) = (ro[k][0], ro[k][1]);
            for a in 0..=4 {
                for b in 0..=(4 - a) {
                    let want = x.powi(a as i32) * y.powi(b as i32);
                    assert!((mom.steps[k].pos.get(a, b) - want).abs() < 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let m = SystemModel::ground_vehicle();
        let init = [
            DistributionSpec::gaussian(0.0, 1e-4),
            DistributionSpec::gaussian(0.0, 1e-4),
            DistributionSpec::point(1.0),
            DistributionSpec::point(0.0),
        ];
        let a = m.simulate(&init, &vehicle_targets(0.05), 50, &mut rng_from_seed(4)).unwrap();
        let b = m.simulate(&init, &vehicle_targets(0.05), 50, &mut rng_from_seed(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_underwater_mean() {
        let m = SystemModel::underwater();
        let mom = m.propagate_moments(&det(&[0.0, 0.0]), &straight(1)).unwrap();
        let [mx, my] = mom.steps[1].pos.mean();
        assert!((mx - 0.1 * 0.1f64.sin() / 0.1).abs() < 1e-15);
        assert!((mx - 0.0998334).abs() < 1e-7);
        assert!(my.abs() < 1e-17);
    }

    /// Compare every moment of every step against Monte Carlo within four
    /// standard errors.
    fn check_against_monte_carlo(m: &SystemModel, init: &[DistributionSpec], c: &ControlSequence, n: usize, seed: u64) {
        let mom = m.propagate_moments(init, c).unwrap();
        let tr = m.simulate(init, c, n, &mut rng_from_seed(seed)).unwrap();
        for k in 0..=c.horizon() {
            for a in 0..=4usize {
                for b in 0..=(4 - a) {
                    if a + b == 0 {
                        continue;
                    }
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for i in 0..n {
                        let st = tr.state(i, k);
                        let v = st[0].powi(a as i32) * st[1].powi(b as i32);
                        s1 += v;
                        s2 += v * v;
                    }
                    let mean = s1 / n as f64;
                    let var = (s2 / n as f64 - mean * mean).max(0.0);
                    let se = (var / n as f64).sqrt();
                    let exact = mom.steps[k].pos.get(a, b);
                    assert!(
                        (mean - exact).abs() <= 4.0 * se + 1e-13 * exact.abs().max(1e-3),
                        "{:?} step {k} moment ({a},{b}): mc {mean} exact {exact} se {se}",
                        m.kind
                    );
                }
            }
        }
    }

    #[test]
    fn underwater_moments_match_monte_carlo() {
        let m = SystemModel::underwater();
        for (i, kappa) in [-0.2, -0.1, 0.0, 0.1, 0.2].into_iter().enumerate() {
            check_against_monte_carlo(&m, &det(&[0.0, 0.0]), &curved(kappa), 200_000, 10 + i as u64);
        }
    }

    #[test]
    fn vehicle_moments_match_monte_carlo() {
        let m = SystemModel::ground_vehicle();
        let init = [
            DistributionSpec::gaussian(0.0, 1e-4),
            DistributionSpec::gaussian(0.0, 1e-4),
            DistributionSpec::point(1.0),
            DistributionSpec::point(0.0),
        ];
        for (i, turn) in [-0.1, -0.05, 0.0, 0.05, 0.1].into_iter().enumerate() {
            check_against_monte_carlo(&m, &init, &vehicle_targets(turn), 200_000, 20 + i as u64);
        }
    }

    #[test]
    fn vehicle_cross_moments_factor() {
        // increment moments at a tracking step factor into speed and heading parts
        let m = SystemModel::ground_vehicle();
        let speed = m.noise_v.affine(m.dt * m.dt, m.dt * 1.2);
        let heading = m.noise_theta.affine(m.dt, 0.0);
        let inc = increment_moments(&speed, &heading, 0.3).unwrap();
        let (c, _) = heading.trig_moments(0.3, 1).unwrap();
        assert!((inc.get(1, 0) - speed.mean() * c).abs() < 1e-15);
        let cos2 = 0.5 * (1.0 + heading.trig_moments(0.6, 2).unwrap().0);
        assert!((inc.get(2, 0) - speed.raw_moment(2).unwrap() * cos2).abs() < 1e-15);
    }

    #[test]
    fn covariance_is_psd() {
        let m = SystemModel::underwater();
        let mom = m.propagate_moments(&det(&[0.0, 0.0]), &curved(0.15)).unwrap();
        for s in &mom.steps {
            let c = s.pos.covariance();
            let tr = c[0][0] + c[1][1];
            let dt = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            let lmin = 0.5 * (tr - (tr * tr - 4.0 * dt).max(0.0).sqrt());
            assert!(lmin >= -1e-10);
        }
    }

    #[test]
    fn rigid_transform_of_moments() {
        let m = SystemModel::underwater();
        let body = m.propagate_moments(&det(&[0.0, 0.0]), &curved(0.1)).unwrap();
        let h = 0.7;
        let world = m.propagate_moments(&det(&[2.0, -1.0]), &curved(0.1).rotated(h)).unwrap();
        let tf = body.transformed(h, [2.0, -1.0]);
        for k in 0..=5 {
            for a in 0..=4 {
                for b in 0..=(4 - a) {
                    let (x, y) = (world.steps[k].pos.get(a, b), tf.steps[k].pos.get(a, b));
                    assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn csv_export() {
        let m = SystemModel::underwater();
        let tr = m.simulate(&det(&[0.0, 0.0]), &straight(2), 2, &mut rng_from_seed(0)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1 + 2 * 3);
        assert!(s.starts_with("sample,step,x0,x1\n0,0,0,0\n"));
    }
}
