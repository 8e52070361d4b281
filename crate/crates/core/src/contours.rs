//! Deterministic risk contours of uncertain polynomial obstacles.
//!
//! An obstacle is `{x : p(x, t, ω) <= 0}`. With `g = -p`, a point belongs to
//! the `Δ`-risk contour when `E[g] <= 0` and `E[g]² >= (1 - Δ) E[g²]`, which by
//! Cantelli's inequality bounds the collision probability by `Δ`.
//!
//! Obstacle polynomials use the variable order `(x, y, t, ω_0, ω_1, ...)`; the
//! contour polynomials `P₁ = E[g²]` and `P₂ = E[g]` live in `(x, y, t)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{PolyError, Polynomial};
use crate::uncertainty::{partial_expectation, DistributionSpec, UncertaintyError};

/// Number of deterministic variables `(x, y, t)`.
pub const SPACE_TIME_VARS: usize = 3;

/// Default inflation of the outer-ellipse axes.
pub const OUTER_MARGIN: f64 = 1.02;

#[derive(Debug, Error)]
pub enum ContourError {
    #[error("risk level must lie in (0, 1), got {0}")]
    InvalidRisk(f64),
    #[error("obstacle {0} has no quadric shape; outer ellipse unsupported")]
    Unsupported(String),
    #[error("obstacle {name}: {nrand} uncertainty variables but {given} distributions")]
    Assignment { name: String, nrand: usize, given: usize },
    #[error("could not bracket the contour boundary of {0}")]
    NoBoundary(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

/// `p = a (x - c_x(t))² + b (y - c_y(t))² - w²` with a random half-width `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadricShape {
    /// Center path, polynomials in the single variable `t`.
    pub center: [Polynomial; 2],
    /// Axis weights `(a, b)`.
    pub weights: [f64; 2],
}

impl QuadricShape {
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        [self.center[0].eval_unchecked(&[t]), self.center[1].eval_unchecked(&[t])]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainObstacle {
    pub name: String,
    /// Polynomial in `(x, y, t, ω...)`.
    pub p: Polynomial,
    /// Independent distributions of the `ω` variables.
    pub uncertainty: Vec<DistributionSpec>,
    pub shape: Option<QuadricShape>,
}

impl UncertainObstacle {
    /// General obstacle; `p` must have `3 + uncertainty.len()` variables.
    pub fn new(name: impl Into<String>, p: Polynomial, uncertainty: Vec<DistributionSpec>) -> Result<Self, ContourError> {
        let name = name.into();
        let nrand = p.nvars().saturating_sub(SPACE_TIME_VARS);
        if p.nvars() < SPACE_TIME_VARS || nrand != uncertainty.len() {
            return Err(ContourError::Assignment {
                name,
                nrand,
                given: uncertainty.len(),
            });
        }
        Ok(UncertainObstacle {
            name,
            p,
            uncertainty,
            shape: None,
        })
    }

    /// Quadric obstacle `a(x - c_x - v_x t)² + b(y - c_y - v_y t)² - w²`.
    pub fn quadric(name: impl Into<String>, center: [f64; 2], velocity: [f64; 2], weights: [f64; 2], half_width: DistributionSpec) -> Self {
        let shape = QuadricShape {
            center: [
                Polynomial::from_terms(1, [(vec![0], center[0]), (vec![1], velocity[0])]).unwrap(),
                Polynomial::from_terms(1, [(vec![0], center[1]), (vec![1], velocity[1])]).unwrap(),
            ],
            weights,
        };
        let p = quadric_polynomial(&shape);
        UncertainObstacle {
            name: name.into(),
            p,
            uncertainty: vec![half_width],
            shape: Some(shape),
        }
    }

    /// Disc `(x - c_x)² + (y - c_y)² - w²`.
    pub fn disc(name: impl Into<String>, center: [f64; 2], radius: DistributionSpec) -> Self {
        Self::quadric(name, center, [0.0, 0.0], [1.0, 1.0], radius)
    }

    pub fn num_random(&self) -> usize {
        self.uncertainty.len()
    }

    /// Add constant-velocity motion: the obstacle at time `t` is the original
    /// one translated by `velocity · t`.
    pub fn time_shift(&self, velocity: [f64; 2]) -> UncertainObstacle {
        let n = self.p.nvars();
        let mut subs: Vec<Polynomial> = (0..n).map(|i| Polynomial::var(n, i)).collect();
        for (k, v) in velocity.iter().enumerate() {
            // x_k -> x_k - v_k t
            subs[k] = subs[k].sub(&Polynomial::var(n, 2).scale(*v)).unwrap();
        }
        let p = self.p.compose(&subs).unwrap();
        let shape = self.shape.as_ref().map(|s| {
            let mut s = s.clone();
            for (k, v) in velocity.iter().enumerate() {
                s.center[k] = s.center[k].add(&Polynomial::var(1, 0).scale(*v)).unwrap();
            }
            s
        });
        UncertainObstacle {
            name: self.name.clone(),
            p,
            uncertainty: self.uncertainty.clone(),
            shape,
        }
    }

    /// Reparametrise time by `t -> offset + scale · t`.
    pub fn retime(&self, offset: f64, scale: f64) -> UncertainObstacle {
        let n = self.p.nvars();
        let mut subs: Vec<Polynomial> = (0..n).map(|i| Polynomial::var(n, i)).collect();
        subs[2] = Polynomial::var(n, 2).scale(scale).add_constant(offset);
        let p = self.p.compose(&subs).unwrap();
        let shape = self.shape.as_ref().map(|s| {
            let tmap = [Polynomial::var(1, 0).scale(scale).add_constant(offset)];
            QuadricShape {
                center: [s.center[0].compose(&tmap).unwrap(), s.center[1].compose(&tmap).unwrap()],
                weights: s.weights,
            }
        });
        UncertainObstacle {
            name: self.name.clone(),
            p,
            uncertainty: self.uncertainty.clone(),
            shape,
        }
    }

    /// Draw-wise collision test, used by Monte Carlo oracles.
    pub fn contains(&self, point: [f64; 2], t: f64, omega: &[f64]) -> bool {
        let mut v = vec![point[0], point[1], t];
        v.extend_from_slice(omega);
        self.p.eval_unchecked(&v) <= 0.0
    }
}

fn quadric_polynomial(shape: &QuadricShape) -> Polynomial {
    // variables (x, y, t, w)
    let n = SPACE_TIME_VARS + 1;
    let mut p = Polynomial::var(n, 3).pow(2).scale(-1.0);
    for k in 0..2 {
        let c = shape.center[k].embed(n, &[2]);
        let d = Polynomial::var(n, k).sub(&c).unwrap();
        p = p.add(&d.pow(2).scale(shape.weights[k])).unwrap();
    }
    p
}

/// `P₁ = E[g²]` and `P₂ = E[g]` of one obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourEntry {
    pub name: String,
    pub p1: Polynomial,
    pub p2: Polynomial,
    pub shape: Option<QuadricShape>,
    /// Raw moments `E[w²]`, `E[w⁴]` of the half-width for quadric obstacles.
    pub width_moments: Option<[f64; 2]>,
}

impl ContourEntry {
    pub fn values(&self, point: [f64; 2], t: f64) -> (f64, f64) {
        let v = [point[0], point[1], t];
        (self.p1.eval_unchecked(&v), self.p2.eval_unchecked(&v))
    }

    pub fn is_safe(&self, point: [f64; 2], t: f64, delta: f64) -> bool {
        let (p1, p2) = self.values(point, t);
        membership_condition(p1, p2, delta)
    }
}

/// `P₂ <= 0` and `P₂² >= (1 - Δ) P₁`.
pub fn membership_condition(p1: f64, p2: f64, delta: f64) -> bool {
    p2 <= 0.0 && p2 * p2 >= (1.0 - delta) * p1
}

pub fn build_contour(obs: &UncertainObstacle, delta: f64) -> Result<ContourEntry, ContourError> {
    check_delta(delta)?;
    let g = obs.p.scale(-1.0);
    let p2 = partial_expectation(&g, SPACE_TIME_VARS, &obs.uncertainty)?;
    let p1 = partial_expectation(&g.mul(&g)?, SPACE_TIME_VARS, &obs.uncertainty)?;
    let width_moments = match &obs.shape {
        Some(_) => {
            let w = &obs.uncertainty[0];
            Some([w.raw_moment(2)?, w.raw_moment(4)?])
        }
        None => None,
    };
    Ok(ContourEntry {
        name: obs.name.clone(),
        p1,
        p2,
        shape: obs.shape.clone(),
        width_moments,
    })
}

fn check_delta(delta: f64) -> Result<(), ContourError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(ContourError::InvalidRisk(delta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskContourSet {
    pub delta: f64,
    pub entries: Vec<ContourEntry>,
}

impl RiskContourSet {
    pub fn build(obstacles: &[UncertainObstacle], delta: f64) -> Result<Self, ContourError> {
        check_delta(delta)?;
        let entries = obstacles.iter().map(|o| build_contour(o, delta)).collect::<Result<_, _>>()?;
        Ok(RiskContourSet { delta, entries })
    }

    pub fn contains(&self, point: [f64; 2], t: f64) -> bool {
        contour_membership(self, point, t)
    }
}

/// True iff `(point, t)` lies in the risk contour of every obstacle.
pub fn contour_membership(set: &RiskContourSet, point: [f64; 2], t: f64) -> bool {
    set.entries.iter().all(|e| e.is_safe(point, t, set.delta))
}

/// Circumscribing ellipse of the unsafe region of a quadric obstacle:
/// `a (x - c_x(t))² + b (y - c_y(t))² <= radius²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterEllipse {
    pub name: String,
    pub shape: QuadricShape,
    /// Membership-boundary value of `sqrt(a dx² + b dy²)`.
    pub boundary: f64,
    /// `margin · boundary`.
    pub radius: f64,
}

impl OuterEllipse {
    /// Quadratic in `(x, y)` at time `t`, non-positive on the unsafe region.
    pub fn quadratic_at(&self, t: f64) -> Polynomial {
        let c = self.shape.center_at(t);
        let [a, b] = self.shape.weights;
        let dx = Polynomial::var(2, 0).add_constant(-c[0]);
        let dy = Polynomial::var(2, 1).add_constant(-c[1]);
        dx.pow(2)
            .scale(a)
            .add(&dy.pow(2).scale(b))
            .unwrap()
            .add_constant(-self.radius * self.radius)
    }

    /// The same quadratic as a polynomial in `(x, y, t)`.
    pub fn polynomial(&self) -> Polynomial {
        let n = SPACE_TIME_VARS;
        let mut q = Polynomial::constant(n, -self.radius * self.radius);
        for k in 0..2 {
            let d = Polynomial::var(n, k).sub(&self.shape.center[k].embed(n, &[2])).unwrap();
            q = q.add(&d.pow(2).scale(self.shape.weights[k])).unwrap();
        }
        q
    }

    pub fn value(&self, point: [f64; 2], t: f64) -> f64 {
        let c = self.shape.center_at(t);
        let [a, b] = self.shape.weights;
        a * (point[0] - c[0]).powi(2) + b * (point[1] - c[1]).powi(2) - self.radius * self.radius
    }

    /// Semi-axes along x and y.
    pub fn semi_axes(&self) -> [f64; 2] {
        [
            self.radius / self.shape.weights[0].sqrt(),
            self.radius / self.shape.weights[1].sqrt(),
        ]
    }
}

/// Outer ellipse of `entry` at risk level `delta` with the default margin.
pub fn outer_ellipse(entry: &ContourEntry, delta: f64) -> Result<OuterEllipse, ContourError> {
    outer_ellipse_with_margin(entry, delta, OUTER_MARGIN)
}

/// Locate the membership boundary by bisection along the first principal
/// axis at `t = 0`, then inflate by `margin`.
pub fn outer_ellipse_with_margin(entry: &ContourEntry, delta: f64, margin: f64) -> Result<OuterEllipse, ContourError> {
    check_delta(delta)?;
    let shape = entry.shape.clone().ok_or_else(|| ContourError::Unsupported(entry.name.clone()))?;
    let c = shape.center_at(0.0);
    let scale = 1.0 / shape.weights[0].sqrt();
    let safe = |rho: f64| entry.is_safe([c[0] + rho * scale, c[1]], 0.0, delta);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut tries = 0;
    while !safe(hi) {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(ContourError::NoBoundary(entry.name.clone()));
        }
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if safe(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(OuterEllipse {
        name: entry.name.clone(),
        shape,
        boundary: hi,
        radius: margin * hi,
    })
}

/// Closed-form boundary of a quadric contour: membership holds iff
/// `a dx² + b dy² >= m₂ + sqrt((1 - Δ)(m₄ - m₂²) / Δ)` with `m_k = E[w^k]`.
pub fn quadric_boundary_level(width_moments: [f64; 2], delta: f64) -> f64 {
    let [m2, m4] = width_moments;
    m2 + ((1.0 - delta) * (m4 - m2 * m2).max(0.0) / delta).sqrt()
}

impl ContourEntry {
    /// Coefficient lists `(exponents, value)` of `P₁` and `P₂` for plotting.
    pub fn coefficient_lists(&self) -> (Vec<(Vec<u32>, f64)>, Vec<(Vec<u32>, f64)>) {
        let list = |p: &Polynomial| p.terms().map(|(m, c)| (m.exponents().to_vec(), c)).collect();
        (list(&self.p1), list(&self.p2))
    }
}
