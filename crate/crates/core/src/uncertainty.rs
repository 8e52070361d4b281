//! Noise sources and their moments.
//!
//! Every random quantity in the toolkit is a [`DistributionSpec`]. Raw moments
//! are closed form; trigonometric moments `E[cos(φ + mω)]`, `E[sin(φ + mω)]`
//! come from the characteristic function, which is closed form except for the
//! Beta family where a fixed Gauss–Legendre rule is used.
//!
//! Distinct random variables are always treated as mutually independent, both
//! across noise channels and across time steps.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Monomial, Polynomial};
use crate::quadrature;

/// Portable seedable generator used for every stochastic computation.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Node count of the Gauss–Legendre rule for Beta characteristic functions.
/// The rule is cross-checked against twice as many nodes on every call.
pub const BETA_QUADRATURE_NODES: usize = 64;
/// Absolute agreement required between the two quadrature rules.
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UncertaintyError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("no distribution assigned to variable {0}")]
    MissingAssignment(usize),
}

/// A scalar noise source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    Uniform {
        a: f64,
        b: f64,
    },
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// `scale * B + shift` with `B ~ Beta(alpha, beta)` on `[0, 1]`.
    Beta {
        alpha: f64,
        beta: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    PointMass {
        value: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl DistributionSpec {
    pub fn uniform(a: f64, b: f64) -> Self {
        DistributionSpec::Uniform { a, b }
    }

    pub fn gaussian(mean: f64, variance: f64) -> Self {
        DistributionSpec::Gaussian { mean, variance }
    }

    pub fn beta(alpha: f64, beta: f64, scale: f64, shift: f64) -> Self {
        DistributionSpec::Beta { alpha, beta, scale, shift }
    }

    pub fn point(value: f64) -> Self {
        DistributionSpec::PointMass { value }
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let bad = |s: String| Err(UncertaintyError::InvalidParameters(s));
        match *self {
            DistributionSpec::Uniform { a, b } => {
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return bad(format!("uniform requires a < b, got [{a}, {b}]"));
                }
            }
            DistributionSpec::Gaussian { mean, variance } => {
                if !(variance > 0.0) || !mean.is_finite() || !variance.is_finite() {
                    return bad(format!("gaussian requires variance > 0, got {variance}"));
                }
            }
            DistributionSpec::Beta { alpha, beta, scale, shift } => {
                if !(alpha > 0.0 && beta > 0.0) || scale == 0.0 || !scale.is_finite() || !shift.is_finite() {
                    return bad(format!(
                        "beta requires alpha, beta > 0 and scale != 0, got ({alpha}, {beta}, {scale})"
                    ));
                }
            }
            DistributionSpec::PointMass { value } => {
                if !value.is_finite() {
                    return bad("point mass must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Distribution of `scale * z + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> DistributionSpec {
        if scale == 0.0 {
            return DistributionSpec::point(shift);
        }
        match *self {
            DistributionSpec::Uniform { a, b } => {
                let (lo, hi) = if scale > 0.0 { (a, b) } else { (b, a) };
                DistributionSpec::uniform(scale * lo + shift, scale * hi + shift)
            }
            DistributionSpec::Gaussian { mean, variance } => DistributionSpec::gaussian(scale * mean + shift, scale * scale * variance),
            DistributionSpec::Beta {
                alpha,
                beta,
                scale: s,
                shift: c,
            } => DistributionSpec::beta(alpha, beta, scale * s, scale * c + shift),
            DistributionSpec::PointMass { value } => DistributionSpec::point(scale * value + shift),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, DistributionSpec::PointMass { .. })
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1).expect("first moment exists")
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.mean();
        (self.raw_moment(2).expect("second moment exists") - m1 * m1).max(0.0)
    }

    /// Closed-form `E[z^k]`.
    pub fn raw_moment(&self, k: u32) -> Result<f64, UncertaintyError> {
        self.validate()?;
        Ok(self.raw_moment_unchecked(k))
    }

    fn raw_moment_unchecked(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match *self {
            DistributionSpec::Uniform { a, b } => {
                let kp = k as i32 + 1;
                (b.powi(kp) - a.powi(kp)) / (kp as f64 * (b - a))
            }
            DistributionSpec::Gaussian { mean, variance } => {
                // m_j = mean m_{j-1} + (j-1) var m_{j-2}
                let mut prev = 1.0;
                let mut cur = mean;
                for j in 2..=k {
                    let next = mean * cur + (j as f64 - 1.0) * variance * prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
            DistributionSpec::Beta { alpha, beta, scale, shift } => {
                // E[B^j] = prod_{i<j} (alpha + i) / (alpha + beta + i)
                let mut bm = Vec::with_capacity(k as usize + 1);
                bm.push(1.0);
                for j in 0..k {
                    let last = *bm.last().unwrap();
                    bm.push(last * (alpha + j as f64) / (alpha + beta + j as f64));
                }
                let mut sum = 0.0;
                let mut binom = 1.0;
                for j in 0..=k {
                    sum += binom * scale.powi(j as i32) * shift.powi((k - j) as i32) * bm[j as usize];
                    binom = binom * (k - j) as f64 / (j + 1) as f64;
                }
                sum
            }
            DistributionSpec::PointMass { value } => value.powi(k as i32),
        }
    }

    /// `E[z^k]` for `k = 0..=max_order`.
    pub fn moment_sequence(&self, max_order: u32) -> Result<MomentSequence, UncertaintyError> {
        self.validate()?;
        Ok(MomentSequence {
            moments: (0..=max_order).map(|k| self.raw_moment_unchecked(k)).collect(),
        })
    }

    /// Characteristic function `E[exp(i m z)]` at integer frequency `m`.
    pub fn characteristic(&self, m: i32) -> Result<Complex64, UncertaintyError> {
        self.validate()?;
        if m == 0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        let mf = m as f64;
        Ok(match *self {
            DistributionSpec::Uniform { a, b } => {
                let ea = Complex64::from_polar(1.0, mf * a);
                let eb = Complex64::from_polar(1.0, mf * b);
                (eb - ea) / Complex64::new(0.0, mf * (b - a))
            }
            DistributionSpec::Gaussian { mean, variance } => Complex64::from_polar((-0.5 * mf * mf * variance).exp(), mf * mean),
            DistributionSpec::Beta { alpha, beta, scale, shift } => {
                Complex64::from_polar(1.0, mf * shift) * beta_characteristic(alpha, beta, mf * scale)
            }
            DistributionSpec::PointMass { value } => Complex64::from_polar(1.0, mf * value),
        })
    }

    /// `(E[cos(phase + m z)], E[sin(phase + m z)])`.
    pub fn trig_moments(&self, phase: f64, multiplier: u32) -> Result<(f64, f64), UncertaintyError> {
        let c = Complex64::from_polar(1.0, phase) * self.characteristic(multiplier as i32)?;
        Ok((c.re, c.im))
    }

    pub fn sampler(&self) -> Result<Sampler, UncertaintyError> {
        self.validate()?;
        let err = |e: String| UncertaintyError::InvalidParameters(e);
        Ok(match *self {
            DistributionSpec::Uniform { a, b } => Sampler::Uniform(rand_distr::Uniform::new(a, b).map_err(|e| err(e.to_string()))?),
            DistributionSpec::Gaussian { mean, variance } => {
                Sampler::Gaussian(rand_distr::Normal::new(mean, variance.sqrt()).map_err(|e| err(e.to_string()))?)
            }
            DistributionSpec::Beta { alpha, beta, scale, shift } => Sampler::Beta {
                inner: rand_distr::Beta::new(alpha, beta).map_err(|e| err(e.to_string()))?,
                scale,
                shift,
            },
            DistributionSpec::PointMass { value } => Sampler::Point(value),
        })
    }

    /// `count` independent draws.
    pub fn sample(&self, rng: &mut SimRng, count: usize) -> Result<Vec<f64>, UncertaintyError> {
        let s = self.sampler()?;
        Ok((0..count).map(|_| s.draw(rng)).collect())
    }
}

/// Beta(α, β) characteristic function at `ω`: fixed Gauss–Legendre rule on the
/// density, checked against a rule with twice the nodes. Densities that are
/// singular at an endpoint (α < 1 or β < 1) fail that check; for those the
/// confluent hypergeometric series `1F1(α; α+β; iω)` is used instead.
fn beta_characteristic(alpha: f64, beta: f64, omega: f64) -> Complex64 {
    let ln_norm = statrs::function::beta::ln_beta(alpha, beta);
    let rule = |n: usize| {
        let (x, w) = quadrature::gauss_legendre(n);
        let mut acc = Complex64::new(0.0, 0.0);
        for (&xi, &wi) in x.iter().zip(&w) {
            let u = 0.5 * (xi + 1.0);
            let dens = ((alpha - 1.0) * u.ln() + (beta - 1.0) * (1.0 - u).ln() - ln_norm).exp();
            acc += Complex64::from_polar(0.5 * wi * dens, omega * u);
        }
        acc
    };
    let coarse = rule(BETA_QUADRATURE_NODES);
    let fine = rule(2 * BETA_QUADRATURE_NODES);
    if (coarse - fine).norm() < QUADRATURE_TOLERANCE {
        fine
    } else {
        hypergeometric_1f1(alpha, alpha + beta, Complex64::new(0.0, omega))
    }
}

pub(crate) fn hypergeometric_1f1(a: f64, b: f64, z: Complex64) -> Complex64 {
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    for k in 0..2000 {
        let kf = k as f64;
        term = term * z * ((a + kf) / ((b + kf) * (kf + 1.0)));
        sum += term;
        if term.norm() < 1e-17 * sum.norm().max(1e-300) && kf > z.norm() {
            break;
        }
    }
    sum
}

/// Prebuilt sampler for a [`DistributionSpec`].
#[derive(Debug, Clone)]
pub enum Sampler {
    Uniform(rand_distr::Uniform<f64>),
    Gaussian(rand_distr::Normal<f64>),
    Beta {
        inner: rand_distr::Beta<f64>,
        scale: f64,
        shift: f64,
    },
    Point(f64),
}

impl Sampler {
    pub fn draw(&self, rng: &mut SimRng) -> f64 {
        match self {
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Gaussian(d) => d.sample(rng),
            Sampler::Beta { inner, scale, shift } => scale * inner.sample(rng) + shift,
            Sampler::Point(v) => *v,
        }
    }
}

/// `E[z^k]` for `k = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSequence {
    pub moments: Vec<f64>,
}

impl MomentSequence {
    pub fn get(&self, k: usize) -> f64 {
        self.moments[k]
    }

    /// Entry 0 is one, even moments are nonnegative and `E[z^j]² <= E[z^{2j}]`.
    pub fn check_invariants(&self, tol: f64) -> bool {
        let m = &self.moments;
        if m.is_empty() || (m[0] - 1.0).abs() > tol {
            return false;
        }
        for (k, &v) in m.iter().enumerate() {
            if k % 2 == 0 && v < -tol {
                return false;
            }
            if 2 * k < m.len() && m[k] * m[k] > m[2 * k] * (1.0 + tol) + tol {
                return false;
            }
        }
        true
    }
}

/// `E[p]` where variable `i` is distributed as `assignment[i]`, all independent.
pub fn poly_expectation(p: &Polynomial, assignment: &[DistributionSpec]) -> Result<f64, UncertaintyError> {
    if assignment.len() < p.nvars() {
        return Err(UncertaintyError::MissingAssignment(assignment.len()));
    }
    let r = partial_expectation(p, 0, assignment)?;
    Ok(r.coeff(&Monomial::one(0)))
}

/// Expectation over the trailing variables `first_random..nvars` (distributed
/// as `dists` in order), leaving a polynomial in the leading `first_random`
/// variables.
pub fn partial_expectation(p: &Polynomial, first_random: usize, dists: &[DistributionSpec]) -> Result<Polynomial, UncertaintyError> {
    let nrand = p.nvars() - first_random;
    if dists.len() < nrand {
        return Err(UncertaintyError::MissingAssignment(first_random + dists.len()));
    }
    let tables: Vec<MomentSequence> = (0..nrand)
        .map(|i| dists[i].moment_sequence(p.degree_in(first_random + i).max(0) as u32))
        .collect::<Result<_, _>>()?;
    let mut out = Polynomial::zero(first_random);
    for (m, c) in p.terms() {
        let e = m.exponents();
        let mut factor = c;
        for (i, t) in tables.iter().enumerate() {
            factor *= t.get(e[first_random + i] as usize);
        }
        out.add_term(Monomial::new(e[..first_random].to_vec()), factor);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, integrate_composite};
    use std::f64::consts::PI;

    fn relclose(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    /// Numerical quadrature of `E[f(z)]` against the density.
    fn quad_expect<F: Fn(f64) -> f64>(d: &DistributionSpec, f: F) -> f64 {
        match *d {
            DistributionSpec::Uniform { a, b } => integrate(|x| f(x) / (b - a), a, b, 64),
            DistributionSpec::Gaussian { mean, variance } => {
                let s = variance.sqrt();
                integrate_composite(
                    |x| f(x) * (-(x - mean).powi(2) / (2.0 * variance)).exp() / (s * (2.0 * PI).sqrt()),
                    mean - 14.0 * s,
                    mean + 14.0 * s,
                    32,
                    16,
                )
            }
            DistributionSpec::Beta { alpha, beta, scale, shift } => {
                let nb = statrs::function::beta::beta(alpha, beta);
                integrate_composite(
                    |u| f(scale * u + shift) * u.powf(alpha - 1.0) * (1.0 - u).powf(beta - 1.0) / nb,
                    0.0,
                    1.0,
                    32,
                    8,
                )
            }
            DistributionSpec::PointMass { value } => f(value),
        }
    }

    fn catalogue() -> Vec<DistributionSpec> {
        vec![
            DistributionSpec::uniform(0.3, 0.4),
            DistributionSpec::uniform(-0.1, 0.1),
            DistributionSpec::gaussian(0.0, 0.09),
            DistributionSpec::gaussian(1.0, 0.0009),
            DistributionSpec::beta(1.0, 3.0, 3.0, 0.0),
            DistributionSpec::beta(2.0, 5.0, 0.3, -0.1),
            DistributionSpec::point(0.7),
        ]
    }

    #[test]
    fn uniform_second_moment() {
        let d = DistributionSpec::uniform(0.3, 0.4);
        assert!(relclose(d.raw_moment(2).unwrap(), 0.037 / 0.3, 1e-14));
        assert!(relclose(d.raw_moment(4).unwrap(), 0.015620, 1e-12));
        for d in catalogue() {
            assert_eq!(d.raw_moment(0).unwrap(), 1.0);
        }
    }

    #[test]
    fn scaled_beta_moments() {
        let d = DistributionSpec::beta(1.0, 3.0, 3.0, 0.0);
        assert!(relclose(d.raw_moment(1).unwrap(), 0.75, 1e-14));
        assert!(relclose(d.raw_moment(2).unwrap(), 0.9, 1e-14));
    }

    #[test]
    fn raw_moments_match_quadrature() {
        for d in catalogue() {
            for k in 0..=8u32 {
                let exact = d.raw_moment(k).unwrap();
                let q = quad_expect(&d, |x| x.powi(k as i32));
                assert!((exact - q).abs() <= 1e-9, "{d:?} k={k}: {exact} vs {q}");
            }
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(DistributionSpec::uniform(1.0, 1.0).raw_moment(1).is_err());
        assert!(DistributionSpec::gaussian(0.0, 0.0).raw_moment(1).is_err());
        assert!(DistributionSpec::beta(0.0, 1.0, 1.0, 0.0).raw_moment(1).is_err());
        assert!(DistributionSpec::beta(1.0, 1.0, 0.0, 0.0).validate().is_err());
    }

    #[test]
    fn trig_moments_closed_forms() {
        let d = DistributionSpec::uniform(-0.1, 0.1);
        let (c, s) = d.trig_moments(0.0, 1).unwrap();
        assert!((c - 0.1f64.sin() / 0.1).abs() < 1e-15);
        assert!(s.abs() < 1e-15);
        let p = DistributionSpec::point(0.0);
        let (c, s) = p.trig_moments(1.3, 1).unwrap();
        assert!((c - 1.3f64.cos()).abs() < 1e-15 && (s - 1.3f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn trig_moments_match_quadrature() {
        for d in catalogue() {
            for m in 1..=4u32 {
                for &phase in &[0.0, 0.4, -2.0] {
                    let (c, s) = d.trig_moments(phase, m).unwrap();
                    let qc = quad_expect(&d, |x| (phase + m as f64 * x).cos());
                    let qs = quad_expect(&d, |x| (phase + m as f64 * x).sin());
                    assert!((c - qc).abs() < 1e-10 && (s - qs).abs() < 1e-10, "{d:?} m={m}");
                    assert!(c * c + s * s <= 1.0 + 1e-14);
                }
            }
        }
    }

    #[test]
    fn singular_beta_uses_series() {
        // alpha < 1: density blows up at 0, quadrature self-check fails
        let d = DistributionSpec::beta(0.5, 2.0, 1.0, 0.0);
        let c = d.characteristic(1).unwrap();
        // E[cos B] by moment series cos x = sum (-1)^k x^{2k}/(2k)!
        let mut oracle = 0.0;
        let mut fact = 1.0;
        for k in 0..15u32 {
            if k > 0 {
                fact *= (2 * k - 1) as f64 * (2 * k) as f64;
            }
            oracle += (-1f64).powi(k as i32) * d.raw_moment(2 * k).unwrap() / fact;
        }
        assert!((c.re - oracle).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_centered() {
        let d = DistributionSpec::uniform(0.3, 0.4);
        let a = d.sample(&mut rng_from_seed(5), 1000).unwrap();
        let b = d.sample(&mut rng_from_seed(5), 1000).unwrap();
        assert_eq!(a, b);
        let pm = DistributionSpec::point(2.5).sample(&mut rng_from_seed(1), 10).unwrap();
        assert!(pm.iter().all(|&v| v == 2.5));
        let n = 1_000_000;
        let xs = d.sample(&mut rng_from_seed(9), n).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (0.01f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.35).abs() < 4.0 * se);
    }

    #[test]
    fn empirical_moments_within_four_standard_errors() {
        let n = 1_000_000;
        for (i, d) in catalogue().into_iter().enumerate() {
            let xs = d.sample(&mut rng_from_seed(100 + i as u64), n).unwrap();
            for k in 1..=4u32 {
                let exact = d.raw_moment(k).unwrap();
                let var_k = d.raw_moment(2 * k).unwrap() - exact * exact;
                let emp = xs.iter().map(|x| x.powi(k as i32)).sum::<f64>() / n as f64;
                let se = (var_k.max(0.0) / n as f64).sqrt();
                // slack covers summation rounding for point masses
                assert!((emp - exact).abs() <= 4.0 * se + 1e-9 * exact.abs(), "{d:?} k={k}");
            }
        }
    }

    #[test]
    fn moment_sequences_satisfy_invariants() {
        for d in catalogue() {
            let ms = d.moment_sequence(8).unwrap();
            assert!(ms.check_invariants(1e-12), "{d:?}");
        }
    }

    #[test]
    fn expectation_of_disc_obstacle_polynomial() {
        // g = w^2 - 0.25
        let g = Polynomial::from_terms(1, [(vec![2], 1.0), (vec![0], -0.25)]).unwrap();
        let w = [DistributionSpec::uniform(0.3, 0.4)];
        let eg = poly_expectation(&g, &w).unwrap();
        assert!((eg - (0.037 / 0.3 - 0.25)).abs() < 1e-14);
        let eg2 = poly_expectation(&g.pow(2), &w).unwrap();
        assert!((eg2 - 0.0164533).abs() < 1e-7);
        let c = Polynomial::constant(1, 3.5);
        assert_eq!(poly_expectation(&c, &w).unwrap(), 3.5);
        assert!(matches!(
            poly_expectation(&Polynomial::var(2, 1), &w),
            Err(UncertaintyError::MissingAssignment(_))
        ));
    }

    #[test]
    fn affine_transform_maps_moments() {
        let base = DistributionSpec::beta(1.0, 3.0, 1.0, 0.0);
        let t = base.affine(0.3, 0.1);
        for k in 0..=4u32 {
            let direct = quad_expect(&base, |x| (0.3 * x + 0.1).powi(k as i32));
            assert!((t.raw_moment(k).unwrap() - direct).abs() < 1e-12);
        }
        let u = DistributionSpec::uniform(-0.1, 0.1).affine(-2.0, 1.0);
        assert_eq!(u, DistributionSpec::uniform(0.8, 1.2));
    }
}
