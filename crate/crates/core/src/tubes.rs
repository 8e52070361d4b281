//! Nominal trajectory fitting, tube verification and the primitive library.
//!
//! Tubes are discs `{x : φ |x - x̄(t)|² <= 1}` with `φ = r⁻²`, checked at the
//! discrete times `t = k/T`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{tracking_inputs, ControlSequence, DynamicsError, PositionMoments, StateMoments, SystemModel, Trajectories};
use crate::poly::Polynomial;
use crate::uncertainty::{rng_from_seed, DistributionSpec};

pub const LIBRARY_VERSION: u32 = 1;
pub const RADIUS_MIN: f64 = 1e-4;
pub const RADIUS_MAX: f64 = 10.0;
pub const RADIUS_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TubeError {
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("need at least {needed} states, got {found}")]
    TooFewStates { needed: usize, found: usize },
    #[error("primitive {0} fails verification even at the largest radius")]
    Unsizeable(String),
    #[error("unsupported library version {0}")]
    Version(u32),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryFamily {
    /// `x(t) = θ₁ t`, `y(t) = θ₂ x(t)²`.
    Parabolic,
    /// Independent least-squares polynomials of the given degree per coordinate.
    Polynomial { degree: u32 },
}

impl TrajectoryFamily {
    fn num_params(&self) -> usize {
        match self {
            TrajectoryFamily::Parabolic => 2,
            TrajectoryFamily::Polynomial { degree } => *degree as usize + 1,
        }
    }
}

/// `x̄(t)` on `[0, 1]`, with step `k` at `t = k/T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalTrajectory {
    pub family: TrajectoryFamily,
    pub params: Vec<f64>,
    /// Coordinates as polynomials in `t`.
    pub coords: [Polynomial; 2],
    pub horizon: usize,
    /// Sum of squared distances to the fitted states.
    pub residual: f64,
}

impl NominalTrajectory {
    pub fn eval(&self, t: f64) -> [f64; 2] {
        [self.coords[0].eval_unchecked(&[t]), self.coords[1].eval_unchecked(&[t])]
    }

    pub fn at_step(&self, k: usize) -> [f64; 2] {
        self.eval(k as f64 / self.horizon as f64)
    }

    /// Apply `p -> R(heading) p + offset`.
    pub fn transformed(&self, heading: f64, offset: [f64; 2]) -> NominalTrajectory {
        let (c, s) = (heading.cos(), heading.sin());
        let [x, y] = &self.coords;
        let wx = x.scale(c).sub(&y.scale(s)).unwrap().add_constant(offset[0]);
        let wy = x.scale(s).add(&y.scale(c)).unwrap().add_constant(offset[1]);
        NominalTrajectory {
            coords: [wx, wy],
            ..self.clone()
        }
    }

    /// Restrict to `t ∈ [a, b]` and rescale that window onto `[0, 1]`.
    pub fn window(&self, a: f64, b: f64) -> [Polynomial; 2] {
        let map = [Polynomial::var(1, 0).scale(b - a).add_constant(a)];
        [self.coords[0].compose(&map).unwrap(), self.coords[1].compose(&map).unwrap()]
    }
}

/// Least-squares fit of `states[k]` at `t = k/T`, `T = states.len() - 1`.
pub fn fit_nominal(states: &[[f64; 2]], family: TrajectoryFamily) -> Result<NominalTrajectory, TubeError> {
    let needed = family.num_params().max(2);
    if states.len() < needed {
        return Err(TubeError::TooFewStates {
            needed,
            found: states.len(),
        });
    }
    let spread = states
        .iter()
        .map(|s| (s[0] - states[0][0]).hypot(s[1] - states[0][1]))
        .fold(0.0, f64::max);
    if spread < 1e-12 {
        return Err(TubeError::Degenerate("all states identical, zero-length trajectory".into()));
    }
    let horizon = states.len() - 1;
    let ts: Vec<f64> = (0..states.len()).map(|k| k as f64 / horizon as f64).collect();
    let (params, coords) = match family {
        TrajectoryFamily::Parabolic => {
            // With c = θ₂ θ₁² the objective separates into two linear fits.
            let st2: f64 = ts.iter().map(|t| t * t).sum();
            let st4: f64 = ts.iter().map(|t| t.powi(4)).sum();
            let theta1 = states.iter().zip(&ts).map(|(s, t)| s[0] * t).sum::<f64>() / st2;
            let c = states.iter().zip(&ts).map(|(s, t)| s[1] * t * t).sum::<f64>() / st4;
            if theta1.abs() < 1e-12 {
                return Err(TubeError::Degenerate("no progress along x; y = θ₂x² cannot fit".into()));
            }
            let theta2 = c / (theta1 * theta1);
            let x = Polynomial::from_terms(1, [(vec![1], theta1)]).unwrap();
            let y = Polynomial::from_terms(1, [(vec![2], c)]).unwrap();
            (vec![theta1, theta2], [x, y])
        }
        TrajectoryFamily::Polynomial { degree } => {
            let d = degree as usize;
            let a = DMatrix::from_fn(ts.len(), d + 1, |i, j| ts[i].powi(j as i32));
            let svd = a.svd(true, true);
            let mut params = Vec::with_capacity(2 * (d + 1));
            let mut coords = Vec::with_capacity(2);
            for axis in 0..2 {
                let b = DVector::from_iterator(states.len(), states.iter().map(|s| s[axis]));
                let sol = svd.solve(&b, 1e-12).map_err(|e| TubeError::Degenerate(e.to_string()))?;
                params.extend(sol.iter().copied());
                coords.push(Polynomial::from_terms(1, sol.iter().enumerate().map(|(j, &c)| (vec![j as u32], c))).unwrap());
            }
            let y = coords.pop().unwrap();
            let x = coords.pop().unwrap();
            (params, [x, y])
        }
    };
    let mut nominal = NominalTrajectory {
        family,
        params,
        coords,
        horizon,
        residual: 0.0,
    };
    nominal.residual = fit_residual(&nominal, states);
    Ok(nominal)
}

pub fn fit_residual(nominal: &NominalTrajectory, states: &[[f64; 2]]) -> f64 {
    states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = nominal.at_step(k);
            (s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifierKind {
    Sampling,
    Analytical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub nominal: NominalTrajectory,
    pub radius: f64,
    pub delta_tube: f64,
    pub verifier: VerifierKind,
}

impl Tube {
    /// `φ = r⁻²`.
    pub fn phi(&self) -> f64 {
        self.radius.powi(-2)
    }

    /// `Q = φ I`.
    pub fn q(&self) -> [[f64; 2]; 2] {
        let phi = self.phi();
        [[phi, 0.0], [0.0, phi]]
    }

    pub fn contains(&self, k: usize, point: [f64; 2]) -> bool {
        let c = self.nominal.at_step(k);
        quad_form(&self.q(), [point[0] - c[0], point[1] - c[1]]) <= 1.0
    }
}

fn quad_form(q: &[[f64; 2]; 2], d: [f64; 2]) -> f64 {
    q[0][0] * d[0] * d[0] + (q[0][1] + q[1][0]) * d[0] * d[1] + q[1][1] * d[1] * d[1]
}

/// `E[z]`, `E[z²]` of `z = (x - c)ᵀ Q (x - c) - 1` from raw position moments.
pub fn tube_statistic_moments(moments: &PositionMoments, center: [f64; 2], q: &[[f64; 2]; 2]) -> (f64, f64) {
    let m = moments.shifted(center);
    let (a, b, c) = (q[0][0], 0.5 * (q[0][1] + q[1][0]), q[1][1]);
    let s1 = a * m.get(2, 0) + 2.0 * b * m.get(1, 1) + c * m.get(0, 2);
    let s2 = a * a * m.get(4, 0)
        + 4.0 * a * b * m.get(3, 1)
        + (2.0 * a * c + 4.0 * b * b) * m.get(2, 2)
        + 4.0 * b * c * m.get(1, 3)
        + c * c * m.get(0, 4);
    (s1 - 1.0, s2 - 2.0 * s1 + 1.0)
}

/// Cantelli check `E[z] <= 0`, `Var z <= Δ E[z²]` at every step.
pub fn verify_tube_analytical_q(moments: &StateMoments, nominal: &NominalTrajectory, q: &[[f64; 2]; 2], delta_tube: f64) -> bool {
    moments.steps.iter().enumerate().all(|(k, s)| {
        let (ez, ez2) = tube_statistic_moments(&s.pos, nominal.at_step(k), q);
        ez <= 0.0 && ez2 - ez * ez <= delta_tube * ez2
    })
}

pub fn verify_tube_analytical(moments: &StateMoments, nominal: &NominalTrajectory, phi: f64, delta_tube: f64) -> bool {
    verify_tube_analytical_q(moments, nominal, &[[phi, 0.0], [0.0, phi]], delta_tube)
}

/// Fraction of samples inside the disc at every step, compared with `1 - Δ`.
pub fn verify_tube_sampling(samples: &Trajectories, nominal: &NominalTrajectory, phi: f64, delta_tube: f64) -> bool {
    containment_fractions(samples, nominal, phi)
        .into_iter()
        .all(|f| f >= 1.0 - delta_tube)
}

pub fn containment_fractions(samples: &Trajectories, nominal: &NominalTrajectory, phi: f64) -> Vec<f64> {
    (0..samples.steps)
        .map(|k| {
            let c = nominal.at_step(k);
            let inside = (0..samples.samples)
                .filter(|&i| {
                    let s = samples.state(i, k);
                    phi * ((s[0] - c[0]).powi(2) + (s[1] - c[1]).powi(2)) <= 1.0
                })
                .count();
            inside as f64 / samples.samples as f64
        })
        .collect()
}

/// Monte Carlo simulation and analytical moments for the rollout of `controls`.
pub enum Verifier<'a> {
    Sampling(&'a Trajectories),
    Analytical(&'a StateMoments),
}

impl Verifier<'_> {
    pub fn kind(&self) -> VerifierKind {
        match self {
            Verifier::Sampling(_) => VerifierKind::Sampling,
            Verifier::Analytical(_) => VerifierKind::Analytical,
        }
    }

    pub fn check(&self, nominal: &NominalTrajectory, radius: f64, delta_tube: f64) -> bool {
        let phi = radius.powi(-2);
        match self {
            Verifier::Sampling(s) => verify_tube_sampling(s, nominal, phi, delta_tube),
            Verifier::Analytical(m) => verify_tube_analytical(m, nominal, phi, delta_tube),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingBounds {
    pub min_radius: f64,
    pub max_radius: f64,
    pub tolerance: f64,
}

impl Default for SizingBounds {
    fn default() -> Self {
        SizingBounds {
            min_radius: RADIUS_MIN,
            max_radius: RADIUS_MAX,
            tolerance: RADIUS_TOLERANCE,
        }
    }
}

/// Bisection on the radius for the smallest verified disc, assuming the
/// verifier is monotone in the radius.
pub fn size_tube(nominal: &NominalTrajectory, verifier: &Verifier<'_>, delta_tube: f64, bounds: SizingBounds) -> Result<Tube, TubeError> {
    if !(bounds.tolerance > 0.0 && bounds.min_radius > 0.0 && bounds.max_radius > bounds.min_radius) {
        return Err(TubeError::Config(format!("invalid sizing bounds {bounds:?}")));
    }
    let tube = |radius| Tube {
        nominal: nominal.clone(),
        radius,
        delta_tube,
        verifier: verifier.kind(),
    };
    if !verifier.check(nominal, bounds.max_radius, delta_tube) {
        return Err(TubeError::Unsizeable(format!("{:?}", nominal.params)));
    }
    if verifier.check(nominal, bounds.min_radius, delta_tube) {
        return Ok(tube(bounds.min_radius));
    }
    let (mut lo, mut hi) = (bounds.min_radius, bounds.max_radius);
    while hi - lo > bounds.tolerance {
        let mid = 0.5 * (lo + hi);
        if verifier.check(nominal, mid, delta_tube) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(tube(hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub label: String,
    /// Body-frame controls (origin, heading 0).
    pub controls: ControlSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LibraryMethod {
    /// Given control sequences, fit and size.
    ControlSampling,
    /// Given nominal speed/heading targets, derive tracking inputs, fit and size.
    StateTracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub method: LibraryMethod,
    pub verifier: VerifierKind,
    pub delta_tube: f64,
    /// Monte Carlo samples for the sampling verifier.
    pub samples: usize,
    pub seed: u64,
    pub family: TrajectoryFamily,
    pub bounds: SizingBounds,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig {
            method: LibraryMethod::ControlSampling,
            verifier: VerifierKind::Analytical,
            delta_tube: 0.001,
            samples: 10_000,
            seed: 0,
            family: TrajectoryFamily::Parabolic,
            bounds: SizingBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    /// Position in the left-to-right ordering.
    pub index: usize,
    pub label: String,
    pub controls: ControlSequence,
    pub nominal: NominalTrajectory,
    pub tube: Tube,
    pub moments: Option<StateMoments>,
    /// Accelerations and turn rates realising the targets in the noise-free rollout.
    pub tracking_inputs: Option<Vec<[f64; 2]>>,
    /// Heading of the last control entry, used for ordering and recentring.
    pub terminal_heading: f64,
    pub seed: u64,
}

impl MotionPrimitive {
    pub fn horizon(&self) -> usize {
        self.controls.horizon()
    }

    pub fn expected_positions(&self) -> Vec<[f64; 2]> {
        match &self.moments {
            Some(m) => m.means(),
            None => (0..=self.horizon()).map(|k| self.nominal.at_step(k)).collect(),
        }
    }
}

/// Fit and size a single primitive from `initial`.
pub fn build_primitive(
    model: &SystemModel,
    initial: &[DistributionSpec],
    spec: &PrimitiveSpec,
    config: &LibraryConfig,
    seed: u64,
) -> Result<MotionPrimitive, TubeError> {
    let moments = model.propagate_moments(initial, &spec.controls)?;
    let nominal = fit_nominal(&moments.means(), config.family)?;
    let tube = match config.verifier {
        VerifierKind::Analytical => size_tube(&nominal, &Verifier::Analytical(&moments), config.delta_tube, config.bounds),
        VerifierKind::Sampling => {
            let samples = model.simulate(initial, &spec.controls, config.samples, &mut rng_from_seed(seed))?;
            size_tube(&nominal, &Verifier::Sampling(&samples), config.delta_tube, config.bounds)
        }
    }
    .map_err(|e| match e {
        TubeError::Unsizeable(_) => TubeError::Unsizeable(spec.label.clone()),
        e => e,
    })?;
    let tracking = match (&config.method, &spec.controls) {
        (LibraryMethod::StateTracking, ControlSequence::Tracking { .. }) => {
            let mean: Vec<f64> = initial.iter().map(|d| d.mean()).collect();
            let path = model.noise_free().rollout(&mean, &spec.controls)?;
            Some(
                spec.controls
                    .entries()
                    .iter()
                    .zip(&path)
                    .map(|(&target, state)| tracking_inputs(state, target, model.dt))
                    .collect(),
            )
        }
        (LibraryMethod::StateTracking, _) => {
            return Err(TubeError::Config("state tracking needs tracking targets".into()));
        }
        _ => None,
    };
    let terminal_heading = spec.controls.entries().last().map(|e| e[1]).unwrap_or(0.0);
    Ok(MotionPrimitive {
        index: 0,
        label: spec.label.clone(),
        controls: spec.controls.clone(),
        nominal,
        tube,
        moments: Some(moments),
        tracking_inputs: tracking,
        terminal_heading,
        seed,
    })
}

/// Versioned primitive library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Library {
    pub version: u32,
    pub model: SystemModel,
    pub initial: Vec<DistributionSpec>,
    pub config: LibraryConfig,
    pub primitives: Vec<MotionPrimitive>,
}

impl Library {
    pub fn to_json(&self) -> Result<String, TubeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Library, TubeError> {
        let lib: Library = serde_json::from_str(s)?;
        if lib.version != LIBRARY_VERSION {
            return Err(TubeError::Version(lib.version));
        }
        Ok(lib)
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }
}

/// Build all primitives (in parallel) and order them left to right, i.e. by
/// decreasing terminal heading.
pub fn build_library(
    model: &SystemModel,
    initial: &[DistributionSpec],
    specs: &[PrimitiveSpec],
    config: &LibraryConfig,
) -> Result<Library, TubeError> {
    if specs.is_empty() {
        return Err(TubeError::Config("no primitive specs".into()));
    }
    if specs.iter().any(|s| s.controls.horizon() == 0) {
        return Err(TubeError::Config("primitive horizon must be at least 1".into()));
    }
    model.validate()?;
    let mut prims: Vec<MotionPrimitive> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| build_primitive(model, initial, spec, config, config.seed.wrapping_add(i as u64)))
        .collect::<Result<_, _>>()?;
    prims.sort_by(|a, b| b.terminal_heading.total_cmp(&a.terminal_heading));
    for (i, p) in prims.iter_mut().enumerate() {
        p.index = i;
    }
    Ok(Library {
        version: LIBRARY_VERSION,
        model: model.clone(),
        initial: initial.to_vec(),
        config: config.clone(),
        primitives: prims,
    })
}

/// Five constant-speed primitives whose heading at step `k` is `(k + 1) δ`.
pub fn fan_specs(kind_tracking: bool, speed: f64, deltas: &[f64], horizon: usize) -> Vec<PrimitiveSpec> {
    deltas
        .iter()
        .map(|&d| {
            let entries: Vec<[f64; 2]> = (0..horizon).map(|k| [speed, (k + 1) as f64 * d]).collect();
            PrimitiveSpec {
                label: format!("turn{d:+.3}"),
                controls: if kind_tracking {
                    ControlSequence::Tracking { targets: entries }
                } else {
                    ControlSequence::Direct { controls: entries }
                },
            }
        })
        .collect()
}

/// Underwater library inputs: five primitives, `T = 5`, from the origin.
pub fn underwater_specs() -> Vec<PrimitiveSpec> {
    fan_specs(false, 1.0, &[-0.2, -0.1, 0.0, 0.1, 0.2], 5)
}

/// Ground-vehicle library inputs: five tracking primitives, `T = 5`.
pub fn ground_vehicle_specs(speed: f64) -> Vec<PrimitiveSpec> {
    fan_specs(true, speed, &[-0.1, -0.05, 0.0, 0.05, 0.1], 5)
}

/// Deterministic start at the origin.
pub fn underwater_initial() -> Vec<DistributionSpec> {
    vec![DistributionSpec::point(0.0), DistributionSpec::point(0.0)]
}

/// `x₀, y₀ ~ N(0, 0.01²)`, `v₀ = speed`, `θ₀ = 0`.
pub fn ground_vehicle_initial(speed: f64) -> Vec<DistributionSpec> {
    vec![
        DistributionSpec::gaussian(0.0, 1e-4),
        DistributionSpec::gaussian(0.0, 1e-4),
        DistributionSpec::point(speed),
        DistributionSpec::point(0.0),
    ]
}
