//! Sum-of-squares safety certificates for tubes against risk contours.
//!
//! A tube point is `x = x̄(t) + L⁻ᵀ u` with `Q = L Lᵀ`, `t ∈ [0, 1]` and
//! `|u| <= 1`. For each obstacle the two conditions
//!
//! * `P₂² - (1 - Δ) P₁ >= 0`
//! * `-P₂ >= 0`
//!
//! are certified on that domain by Putinar representations
//! `target = σ₀ + σ₁ t(1 - t) + σ₂ (1 - |u|²)` with SOS multipliers, each
//! compiled to an SDP over Gram matrices.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contours::{outer_ellipse, ContourEntry, RiskContourSet};
use crate::poly::{monomial_basis, Monomial, PolyError, Polynomial};
use crate::sdp::{eigen_floor, solve, Constraint, SdpProblem, SdpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Variables of certificate polynomials: `(t, u₁, u₂)`.
pub const CERT_VARS: usize = 3;
pub const EPS_MATCH: f64 = 1e-7;
pub const EPS_PSD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SosError {
    #[error("empty multiplier basis (degree bound {0})")]
    EmptyBasis(i32),
    #[error("variable sets differ: {0}")]
    Variables(String),
    #[error("matrix Q is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// One SOS multiplier `σ` with Gram basis of the given degree, weighting `generator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub generator: Polynomial,
    pub basis_degree: i32,
}

/// `target = Σ σ_slot · generator_slot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosProgram {
    pub target: Polynomial,
    pub slots: Vec<Slot>,
}

impl SosProgram {
    /// Plain SOS test with a single unweighted multiplier.
    pub fn global(target: Polynomial) -> SosProgram {
        let n = target.nvars();
        let d = (target.degree().max(0) + 1) / 2;
        SosProgram {
            slots: vec![Slot {
                generator: Polynomial::constant(n, 1.0),
                basis_degree: d,
            }],
            target,
        }
    }

    /// Putinar representation on `t ∈ [0, 1]`, `|u| <= 1` in `(t, u₁, u₂)`.
    pub fn tube_domain(target: Polynomial) -> SosProgram {
        let n = CERT_VARS;
        let d = target.degree().max(0);
        let k = (d + 1) / 2;
        let t = Polynomial::var(n, 0);
        let time_gen = t.mul(&t.scale(-1.0).add_constant(1.0)).unwrap();
        let disc_gen = Polynomial::var(n, 1)
            .pow(2)
            .add(&Polynomial::var(n, 2).pow(2))
            .unwrap()
            .scale(-1.0)
            .add_constant(1.0);
        SosProgram {
            target,
            slots: vec![
                Slot {
                    generator: Polynomial::constant(n, 1.0),
                    basis_degree: k,
                },
                Slot {
                    generator: time_gen,
                    basis_degree: k - 1,
                },
                Slot {
                    generator: disc_gen,
                    basis_degree: k - 1,
                },
            ],
        }
    }

    fn max_degree(&self) -> i32 {
        let slot_deg = self
            .slots
            .iter()
            .map(|s| 2 * s.basis_degree + s.generator.degree())
            .max()
            .unwrap_or(0);
        slot_deg.max(self.target.degree())
    }
}

/// The SDP together with the bookkeeping needed to read back multipliers.
#[derive(Debug, Clone)]
pub struct CompiledSos {
    pub problem: SdpProblem,
    pub bases: Vec<Vec<Monomial>>,
    /// Monomial matched by each constraint row.
    pub monomials: Vec<Monomial>,
    pub target: Polynomial,
    pub slots: Vec<Slot>,
}

pub fn compile_sos(program: &SosProgram) -> Result<CompiledSos, SosError> {
    let n = program.target.nvars();
    for s in &program.slots {
        if s.basis_degree < 0 {
            return Err(SosError::EmptyBasis(s.basis_degree));
        }
        if s.generator.nvars() != n {
            return Err(SosError::Variables(format!(
                "generator has {} variables, target {n}",
                s.generator.nvars()
            )));
        }
    }
    let monomials = monomial_basis(n, program.max_degree().max(0) as u32);
    let index: HashMap<&Monomial, usize> = monomials.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut rows: Vec<Constraint> = monomials
        .iter()
        .map(|m| Constraint {
            entries: Vec::new(),
            rhs: program.target.coeff(m),
        })
        .collect();
    let bases: Vec<Vec<Monomial>> = program.slots.iter().map(|s| monomial_basis(n, s.basis_degree as u32)).collect();
    for (bk, (slot, basis)) in program.slots.iter().zip(&bases).enumerate() {
        for i in 0..basis.len() {
            for j in i..basis.len() {
                let prod = basis[i].mul(&basis[j]);
                for (g, c) in slot.generator.terms() {
                    let m = prod.mul(g);
                    rows[index[&m]].add(bk, i, j, c);
                }
            }
        }
    }
    let problem = SdpProblem {
        blocks: bases.iter().map(|b| b.len()).collect(),
        constraints: rows,
        objective: Vec::new(),
    };
    Ok(CompiledSos {
        problem,
        bases,
        monomials,
        target: program.target.clone(),
        slots: program.slots.clone(),
    })
}

impl CompiledSos {
    /// `Σ σ_slot · generator_slot` for Gram matrices `grams`.
    pub fn reconstruct(&self, grams: &[DMatrix<f64>]) -> Polynomial {
        let n = self.target.nvars();
        let mut out = Polynomial::zero(n);
        for ((slot, basis), g) in self.slots.iter().zip(&self.bases).zip(grams) {
            let mut sigma = Polynomial::zero(n);
            for i in 0..basis.len() {
                for j in 0..basis.len() {
                    sigma.add_term(basis[i].mul(&basis[j]), g[(i, j)]);
                }
            }
            out = out.add(&sigma.mul(&slot.generator).unwrap()).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedSafe,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub label: String,
    pub certified: bool,
    /// Max coefficient mismatch of the reconstruction (normalized target).
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub gram_sizes: Vec<usize>,
    pub constraints: usize,
    pub sdp_status: Option<SdpStatus>,
    pub iterations: usize,
    pub seconds: f64,
    /// Rejected by sampling the target before any SDP.
    pub pre_rejected: bool,
    #[serde(skip)]
    pub grams: Vec<DMatrix<f64>>,
}

/// Solve one SOS program and validate its multipliers.
pub fn certify_program(program: &SosProgram, label: &str, pre_reject: bool) -> Result<ConditionReport, SosError> {
    let start = Instant::now();
    let scale = program.target.max_abs_coeff();
    let mut report = ConditionReport {
        label: label.to_string(),
        certified: false,
        residual: 0.0,
        min_eigenvalue: 0.0,
        gram_sizes: Vec::new(),
        constraints: 0,
        sdp_status: None,
        iterations: 0,
        seconds: 0.0,
        pre_rejected: false,
        grams: Vec::new(),
    };
    if scale == 0.0 {
        report.certified = true;
        report.seconds = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    let normalized = SosProgram {
        target: program.target.scale(1.0 / scale),
        slots: program.slots.clone(),
    };
    if pre_reject && program.target.nvars() == CERT_VARS && grid_violation(&normalized.target) {
        report.pre_rejected = true;
        report.seconds = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    let compiled = compile_sos(&normalized)?;
    report.gram_sizes = compiled.problem.blocks.clone();
    report.constraints = compiled.problem.constraints.len();
    let sol = solve(&compiled.problem, DEFAULT_TOL, DEFAULT_MAX_ITER).expect("compiled problem is valid");
    report.sdp_status = Some(sol.status);
    report.iterations = sol.iterations;
    if sol.status == SdpStatus::Feasible {
        let rec = compiled.reconstruct(&sol.x);
        let residual = rec.sub(&compiled.target).unwrap().terms().map(|(_, c)| c.abs()).fold(0.0, f64::max);
        let min_eig = sol
            .x
            .iter()
            .map(|g| eigen_floor(&((g + g.transpose()) * 0.5)).unwrap())
            .fold(f64::INFINITY, f64::min);
        report.residual = residual;
        report.min_eigenvalue = min_eig;
        report.certified = residual <= EPS_MATCH && min_eig >= -EPS_PSD;
        report.grams = sol.x;
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// A negative value anywhere on a coarse sample of the tube domain rules out
/// any Putinar certificate.
fn grid_violation(target: &Polynomial) -> bool {
    const NT: usize = 11;
    const NR: usize = 3;
    const NA: usize = 12;
    for it in 0..NT {
        let t = it as f64 / (NT - 1) as f64;
        if target.eval_unchecked(&[t, 0.0, 0.0]) < -1e-9 {
            return true;
        }
        for ir in 1..=NR {
            let r = ir as f64 / NR as f64;
            for ia in 0..NA {
                let a = ia as f64 * std::f64::consts::TAU / NA as f64;
                if target.eval_unchecked(&[t, r * a.cos(), r * a.sin()]) < -1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// `x = x̄(t) + L⁻ᵀ u` as polynomials in `(t, u₁, u₂)`.
pub fn tube_parametrization(nominal: &[Polynomial; 2], q: &[[f64; 2]; 2]) -> Result<[Polynomial; 2], SosError> {
    for c in nominal {
        if c.nvars() != 1 {
            return Err(SosError::Variables(format!(
                "nominal coordinate has {} variables, expected 1",
                c.nvars()
            )));
        }
    }
    let qm = nalgebra::Matrix2::new(q[0][0], 0.5 * (q[0][1] + q[1][0]), 0.5 * (q[0][1] + q[1][0]), q[1][1]);
    let l = qm.cholesky().ok_or(SosError::NotPositiveDefinite)?.l();
    let m = l.transpose().try_inverse().ok_or(SosError::NotPositiveDefinite)?;
    let n = CERT_VARS;
    let mut out = Vec::with_capacity(2);
    for k in 0..2 {
        let mut p = nominal[k].embed(n, &[0]);
        for j in 0..2 {
            if m[(k, j)] != 0.0 {
                p = p.add(&Polynomial::var(n, 1 + j).scale(m[(k, j)]))?;
            }
        }
        out.push(p);
    }
    let y = out.pop().unwrap();
    let x = out.pop().unwrap();
    Ok([x, y])
}

/// The two target polynomials of one contour entry over the tube.
pub fn build_targets(
    entry: &ContourEntry,
    nominal: &[Polynomial; 2],
    q: &[[f64; 2]; 2],
    delta: f64,
) -> Result<(Polynomial, Polynomial), SosError> {
    if entry.p1.nvars() != 3 || entry.p2.nvars() != 3 {
        return Err(SosError::Variables("contour polynomials must be in (x, y, t)".into()));
    }
    let [x, y] = tube_parametrization(nominal, q)?;
    let subs = [x, y, Polynomial::var(CERT_VARS, 0)];
    let p1 = entry.p1.compose(&subs)?;
    let p2 = entry.p2.compose(&subs)?;
    let t1 = p2.mul(&p2)?.sub(&p1.scale(1.0 - delta))?;
    Ok((t1, p2.scale(-1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckMode {
    /// Both contour conditions.
    Full,
    /// Tube outside the outer ellipse of each quadric obstacle.
    Outer,
    /// Outer first, falling back to the full conditions.
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub mode: CheckMode,
    pub pre_reject: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            mode: CheckMode::Full,
            pre_reject: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCertificate {
    pub name: String,
    pub certified: bool,
    pub conditions: Vec<ConditionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub obstacles: Vec<ObstacleCertificate>,
    pub seconds: f64,
    /// Set when certification could not run (e.g. malformed input).
    pub diagnostic: Option<String>,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::CertifiedSafe
    }
}

/// Certify the tube `x̄(t) + {x : xᵀQx <= 1}`, `t ∈ [0, 1]`, against every
/// contour of `set`. The contours must already be expressed in the tube's
/// time variable. Stops at the first obstacle that fails.
pub fn certify_tube(nominal: &[Polynomial; 2], q: &[[f64; 2]; 2], set: &RiskContourSet, opts: &CertifyOptions) -> Certificate {
    let start = Instant::now();
    let mut obstacles = Vec::with_capacity(set.entries.len());
    let mut verdict = Verdict::CertifiedSafe;
    let mut diagnostic = None;
    for entry in &set.entries {
        match certify_obstacle(nominal, q, entry, set.delta, opts) {
            Ok(oc) => {
                let ok = oc.certified;
                obstacles.push(oc);
                if !ok {
                    verdict = Verdict::NotCertified;
                    break;
                }
            }
            Err(e) => {
                verdict = Verdict::NotCertified;
                diagnostic = Some(format!("{}: {e}", entry.name));
                break;
            }
        }
    }
    Certificate {
        verdict,
        obstacles,
        seconds: start.elapsed().as_secs_f64(),
        diagnostic,
    }
}

pub fn certify_obstacle(
    nominal: &[Polynomial; 2],
    q: &[[f64; 2]; 2],
    entry: &ContourEntry,
    delta: f64,
    opts: &CertifyOptions,
) -> Result<ObstacleCertificate, SosError> {
    let mut conditions = Vec::new();
    let outer_first = matches!(opts.mode, CheckMode::Outer | CheckMode::Cascade) && entry.shape.is_some();
    if outer_first {
        let el = outer_ellipse(entry, delta).map_err(|e| SosError::Variables(e.to_string()))?;
        let [x, y] = tube_parametrization(nominal, q)?;
        let target = el.polynomial().compose(&[x, y, Polynomial::var(CERT_VARS, 0)])?;
        let rep = certify_program(&SosProgram::tube_domain(target), "outer", opts.pre_reject)?;
        let ok = rep.certified;
        conditions.push(rep);
        if ok || opts.mode == CheckMode::Outer {
            return Ok(ObstacleCertificate {
                name: entry.name.clone(),
                certified: ok,
                conditions,
            });
        }
    }
    let (t1, t2) = build_targets(entry, nominal, q, delta)?;
    // the sign condition is cheaper, so it goes first
    let rep2 = certify_program(&SosProgram::tube_domain(t2), "mean", opts.pre_reject)?;
    let ok2 = rep2.certified;
    conditions.push(rep2);
    if !ok2 {
        return Ok(ObstacleCertificate {
            name: entry.name.clone(),
            certified: false,
            conditions,
        });
    }
    let rep1 = certify_program(&SosProgram::tube_domain(t1), "cantelli", opts.pre_reject)?;
    let ok1 = rep1.certified;
    conditions.push(rep1);
    Ok(ObstacleCertificate {
        name: entry.name.clone(),
        certified: ok1,
        conditions,
    })
}

/// Dense check of both membership conditions over the tube: `nt` times,
/// `nu × nu` points of the unit square kept inside the disc. Returns the
/// first violating `(t, u₁, u₂)`.
pub fn grid_oracle(
    nominal: &[Polynomial; 2],
    q: &[[f64; 2]; 2],
    entry: &ContourEntry,
    delta: f64,
    nt: usize,
    nu: usize,
    eps: f64,
) -> Result<Option<[f64; 3]>, SosError> {
    let [x, y] = tube_parametrization(nominal, q)?;
    for it in 0..nt {
        let t = if nt == 1 { 0.0 } else { it as f64 / (nt - 1) as f64 };
        for i in 0..nu {
            for j in 0..nu {
                let u1 = -1.0 + 2.0 * i as f64 / (nu - 1) as f64;
                let u2 = -1.0 + 2.0 * j as f64 / (nu - 1) as f64;
                if u1 * u1 + u2 * u2 > 1.0 {
                    continue;
                }
                let v = [t, u1, u2];
                let px = x.eval_unchecked(&v);
                let py = y.eval_unchecked(&v);
                let (p1, p2) = entry.values([px, py], t);
                if p2 > eps || p2 * p2 < (1.0 - delta) * p1 - eps {
                    return Ok(Some(v));
                }
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contours::{build_contour, UncertainObstacle};
    use crate::uncertainty::DistributionSpec;

    fn poly1(c: &[(u32, f64)]) -> Polynomial {
        Polynomial::from_terms(1, c.iter().map(|&(e, v)| (vec![e], v))).unwrap()
    }

    fn disc_q(r: f64) -> [[f64; 2]; 2] {
        [[r.powi(-2), 0.0], [0.0, r.powi(-2)]]
    }

    fn obstacle_set(center: [f64; 2], delta: f64) -> RiskContourSet {
        let o = UncertainObstacle::disc("o", center, DistributionSpec::uniform(0.3, 0.4));
        RiskContourSet {
            delta,
            entries: vec![build_contour(&o, delta).unwrap()],
        }
    }

    #[test]
    fn univariate_sos_cases() {
        let p = poly1(&[(2, 1.0), (0, 1.0)]);
        let r = certify_program(&SosProgram::global(p), "t2+1", false).unwrap();
        assert!(r.certified);
        assert_eq!(r.gram_sizes, vec![2]);
        let g = &r.grams[0];
        assert!((g[(0, 0)] - 1.0).abs() < 1e-6 && (g[(1, 1)] - 1.0).abs() < 1e-6 && g[(0, 1)].abs() < 1e-6);
        let n = poly1(&[(2, -1.0), (0, -1.0)]);
        assert!(!certify_program(&SosProgram::global(n), "neg", false).unwrap().certified);
    }

    #[test]
    fn interval_positivity() {
        // t(1 - t) + 0.01 >= 0 on [0,1] though not globally
        let n = 3;
        let t = Polynomial::var(n, 0);
        let p = t.mul(&t.scale(-1.0).add_constant(1.0)).unwrap().add_constant(0.01);
        assert!(!certify_program(&SosProgram::global(p.clone()), "global", false).unwrap().certified);
        assert!(certify_program(&SosProgram::tube_domain(p), "domain", false).unwrap().certified);
        // 1 - |u|² - 0.5 is negative near the rim
        let q = Polynomial::var(n, 1).pow(2).scale(-1.0).add_constant(0.5);
        let r = certify_program(&SosProgram::tube_domain(q.clone()), "rim", true).unwrap();
        assert!(!r.certified && r.pre_rejected);
        let r = certify_program(&SosProgram::tube_domain(q), "rim", false).unwrap();
        assert!(!r.certified && !r.pre_rejected);
    }

    #[test]
    fn empty_basis_error() {
        let p = SosProgram {
            target: Polynomial::constant(1, 1.0),
            slots: vec![Slot {
                generator: Polynomial::constant(1, 1.0),
                basis_degree: -1,
            }],
        };
        assert!(matches!(compile_sos(&p), Err(SosError::EmptyBasis(-1))));
    }

    fn example_nominal() -> [Polynomial; 2] {
        // x = θ₁ t, y = θ₂ θ₁² t², shifted to start at (1, 1)
        [poly1(&[(0, 1.0), (1, 0.48)]), poly1(&[(0, 1.0), (2, 0.1)])]
    }

    #[test]
    fn full_block_structure_and_reconstruction() {
        let set = obstacle_set([3.0, 1.5], 0.1);
        let (t1, t2) = build_targets(&set.entries[0], &example_nominal(), &disc_q(0.1), 0.1).unwrap();
        assert_eq!(t1.degree(), 8);
        assert!(t1.degree_in(0) <= 8 && t1.degree_in(1) <= 4);
        assert_eq!(t2.degree(), 4);
        let prog = SosProgram::tube_domain(t1.scale(1.0 / t1.max_abs_coeff()));
        let c = compile_sos(&prog).unwrap();
        assert_eq!(c.problem.blocks, vec![35, 20, 20]);
        assert_eq!(c.problem.constraints.len(), 165);
        let r = certify_program(&SosProgram::tube_domain(t1.clone()), "cantelli", false).unwrap();
        assert!(r.certified, "{r:?}");
        let rec = c.reconstruct(&r.grams);
        let diff = rec.sub(&prog.target).unwrap().max_abs_coeff();
        assert!(diff <= EPS_MATCH);
    }

    #[test]
    fn targets_match_pointwise_composition() {
        let set = obstacle_set([1.5, 1.2], 0.1);
        let nominal = example_nominal();
        let (t1, t2) = build_targets(&set.entries[0], &nominal, &disc_q(0.2), 0.1).unwrap();
        let mut rng = crate::uncertainty::rng_from_seed(1);
        use rand::Rng;
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..1.0);
            let u = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x = nominal[0].evaluate(&[t]).unwrap() + 0.2 * u[0];
            let y = nominal[1].evaluate(&[t]).unwrap() + 0.2 * u[1];
            let (p1, p2) = set.entries[0].values([x, y], t);
            let want1 = p2 * p2 - 0.9 * p1;
            let got1 = t1.evaluate(&[t, u[0], u[1]]).unwrap();
            assert!((got1 - want1).abs() <= 1e-9 * want1.abs().max(1e-3));
            let got2 = t2.evaluate(&[t, u[0], u[1]]).unwrap();
            assert!((got2 + p2).abs() <= 1e-9 * p2.abs().max(1e-3));
        }
    }

    #[test]
    fn static_point_targets_are_constant_in_time() {
        let o = UncertainObstacle::disc("d", [2.0, 0.0], DistributionSpec::point(0.3));
        let set = RiskContourSet {
            delta: 0.1,
            entries: vec![build_contour(&o, 0.1).unwrap()],
        };
        let nominal = [poly1(&[(0, 0.0)]), poly1(&[(0, 0.0)])];
        let (t1, t2) = build_targets(&set.entries[0], &nominal, &disc_q(1e-3), 0.1).unwrap();
        assert!(t1.degree_in(0) <= 0);
        assert!(t2.degree_in(0) <= 0);
    }

    #[test]
    fn far_tube_certified_and_oracle_agrees() {
        let set = obstacle_set([10.0, 10.0], 0.1);
        let nominal = [poly1(&[(1, 0.5)]), poly1(&[(2, 0.1)])];
        let c = certify_tube(&nominal, &disc_q(0.1), &set, &CertifyOptions::default());
        assert!(c.is_certified());
        assert_eq!(
            grid_oracle(&nominal, &disc_q(0.1), &set.entries[0], 0.1, 50, 200, EPS_MATCH).unwrap(),
            None
        );
    }

    #[test]
    fn tube_through_obstacle_not_certified() {
        let set = obstacle_set([0.25, 0.0], 0.1);
        let nominal = [poly1(&[(1, 0.5)]), poly1(&[(0, 0.0)])];
        for mode in [CheckMode::Full, CheckMode::Outer, CheckMode::Cascade] {
            let c = certify_tube(&nominal, &disc_q(0.1), &set, &CertifyOptions { mode, pre_reject: false });
            assert!(!c.is_certified());
        }
        assert!(grid_oracle(&nominal, &disc_q(0.1), &set.entries[0], 0.1, 50, 50, EPS_MATCH)
            .unwrap()
            .is_some());
    }

    #[test]
    fn zero_delta_cannot_certify_noisy_obstacle() {
        let o = UncertainObstacle::disc("o", [5.0, 0.0], DistributionSpec::uniform(0.3, 0.4));
        // build_contour rejects Δ = 0, so form the targets directly
        let e = build_contour(&o, 0.5).unwrap();
        let nominal = [poly1(&[(1, 0.5)]), poly1(&[(0, 0.0)])];
        let (t1, _) = build_targets(&e, &nominal, &disc_q(0.1), 0.0).unwrap();
        for &(t, u1, u2) in &[(0.0, 0.0, 0.0), (0.5, 0.3, -0.2), (1.0, -1.0, 0.0)] {
            assert!(t1.evaluate(&[t, u1, u2]).unwrap() < 0.0);
        }
        let r = certify_program(&SosProgram::tube_domain(t1), "cantelli", false).unwrap();
        assert!(!r.certified);
    }

    #[test]
    fn tiny_tube_on_safe_nominal() {
        let set = obstacle_set([1.0, 0.8], 0.1);
        let nominal = [poly1(&[(1, 1.0)]), poly1(&[(0, 0.0)])];
        let c = certify_tube(&nominal, &disc_q(1e-4), &set, &CertifyOptions::default());
        assert!(c.is_certified());
    }

    #[test]
    fn outer_mode_uses_small_program() {
        let set = obstacle_set([2.0, 1.0], 0.1);
        let nominal = [poly1(&[(1, 0.5)]), poly1(&[(2, 0.1)])];
        let c = certify_tube(
            &nominal,
            &disc_q(0.1),
            &set,
            &CertifyOptions {
                mode: CheckMode::Cascade,
                pre_reject: true,
            },
        );
        assert!(c.is_certified());
        let cond = &c.obstacles[0].conditions[0];
        assert_eq!(cond.label, "outer");
        assert_eq!(cond.gram_sizes, vec![10, 4, 4]);
    }

    #[test]
    fn sdp_size_independent_of_interval_length() {
        let set = obstacle_set([3.0, 3.0], 0.1);
        let n = crate::tubes::fit_nominal(
            &(0..=5).map(|k| [0.1 * k as f64, 0.01 * (k * k) as f64]).collect::<Vec<_>>(),
            crate::tubes::TrajectoryFamily::Parabolic,
        )
        .unwrap();
        let mut sizes = Vec::new();
        for (a, b) in [(0.0, 1.0), (0.0, 0.2), (0.3, 0.9)] {
            let w = n.window(a, b);
            let (t1, _) = build_targets(&set.entries[0], &w, &disc_q(0.1), 0.1).unwrap();
            let c = compile_sos(&SosProgram::tube_domain(t1)).unwrap();
            sizes.push((c.problem.blocks.clone(), c.problem.constraints.len()));
        }
        assert!(sizes.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn general_q_parametrization() {
        let q = [[4.0, 1.0], [1.0, 2.0]];
        let nominal = [poly1(&[(0, 0.0)]), poly1(&[(0, 0.0)])];
        let [x, y] = tube_parametrization(&nominal, &q).unwrap();
        for &(u1, u2) in &[(1.0, 0.0), (0.0, 1.0), (0.6, 0.8)] {
            let px = x.evaluate(&[0.3, u1, u2]).unwrap();
            let py = y.evaluate(&[0.3, u1, u2]).unwrap();
            let qf = q[0][0] * px * px + 2.0 * q[0][1] * px * py + q[1][1] * py * py;
            assert!((qf - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            tube_parametrization(&nominal, &[[1.0, 2.0], [2.0, 1.0]]),
            Err(SosError::NotPositiveDefinite)
        ));
    }
}
