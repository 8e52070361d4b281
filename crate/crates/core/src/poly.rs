//! Sparse multivariate polynomials over `f64` in graded reverse lexicographic
//! (grevlex) monomial order.
//!
//! A [`Polynomial`] is a map from [`Monomial`] to a nonzero coefficient. Only
//! exact zeros are pruned; numerical tolerances are the business of callers.
//! The degree of the zero polynomial is `-1`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, got {found}")]
    Dimension { expected: usize, found: usize },
}

/// Exponent vector `x^α`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_var`.
    pub fn var(nvars: usize, var: usize) -> Self {
        let mut e = vec![0; nvars];
        e[var] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0.iter().zip(point).map(|(&e, &x)| x.powi(e as i32)).product()
    }
}

/// Grevlex comparison: higher total degree ranks first; at equal degree the
/// monomial whose last nonzero entry of `a - b` is negative ranks first.
/// `Ordering::Greater` means `a` ranks before `b`.
pub fn grevlex_compare(a: &Monomial, b: &Monomial) -> Result<Ordering, PolyError> {
    if a.nvars() != b.nvars() {
        return Err(PolyError::Dimension {
            expected: a.nvars(),
            found: b.nvars(),
        });
    }
    Ok(grevlex(a, b))
}

fn grevlex(a: &Monomial, b: &Monomial) -> Ordering {
    match a.degree().cmp(&b.degree()) {
        Ordering::Equal => {}
        ord => return ord,
    }
    for (ea, eb) in a.0.iter().zip(&b.0).rev() {
        match ea.cmp(eb) {
            Ordering::Equal => continue,
            // smaller exponent in the last differing variable ranks higher
            ord => return ord.reverse(),
        }
    }
    Ordering::Equal
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        debug_assert_eq!(self.nvars(), other.nvars());
        grevlex(self, other)
    }
}

/// All monomials in `nvars` variables of degree at most `max_degree`:
/// ascending by degree, and within a degree in descending grevlex order, so
/// in two variables the list reads `1, x, y, x², xy, y², ...`.
pub fn monomial_basis(nvars: usize, max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=max_degree {
        let mut layer = Vec::new();
        let mut cur = vec![0u32; nvars];
        exponents_of_degree(nvars, d, 0, &mut cur, &mut layer);
        layer.sort_by(|a, b| b.cmp(a));
        out.extend(layer);
    }
    out
}

fn exponents_of_degree(nvars: usize, left: u32, idx: usize, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if nvars == 0 {
        if left == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if idx == nvars - 1 {
        cur[idx] = left;
        out.push(Monomial(cur.clone()));
        cur[idx] = 0;
        return;
    }
    for e in 0..=left {
        cur[idx] = e;
        exponents_of_degree(nvars, left - e, idx + 1, cur, out);
    }
    cur[idx] = 0;
}

/// Sparse polynomial `Σ p_α x^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SerializedPoly", try_from = "SerializedPoly")]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The coordinate polynomial `x_var`.
    pub fn var(nvars: usize, var: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, var), 1.0);
        p
    }

    /// Build from `(exponents, coefficient)` pairs; repeated monomials are summed.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(PolyError::Dimension {
                    expected: nvars,
                    found: e.len(),
                });
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Maximum total degree; `-1` for the zero polynomial.
    pub fn degree(&self) -> i32 {
        self.terms.keys().map(|m| m.degree() as i32).max().unwrap_or(-1)
    }

    /// Maximum exponent of a single variable; `-1` for the zero polynomial.
    pub fn degree_in(&self, var: usize) -> i32 {
        self.terms.keys().map(|m| m.0[var] as i32).max().unwrap_or(-1)
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Terms in descending grevlex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().rev().map(|(m, &c)| (m, c))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Sum of absolute coefficients.
    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).sum()
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn check(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::Dimension {
                expected: self.nvars,
                found: other.nvars,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn add_constant(&self, c: f64) -> Polynomial {
        let mut out = self.clone();
        out.add_term(Monomial::one(self.nvars), c);
        out
    }

    /// `p^k` by repeated squaring.
    pub fn pow(&self, k: u32) -> Polynomial {
        let mut result = Polynomial::constant(self.nvars, 1.0);
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base).expect("same nvars");
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base).expect("same nvars");
            }
        }
        result
    }

    /// Evaluate by direct monomial summation. Per-variable powers are
    /// precomputed by repeated multiplication, and terms are accumulated in
    /// descending grevlex order, so the result is deterministic and carries the
    /// rounding of a plain term-by-term sum.
    pub fn evaluate(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::Dimension {
                expected: self.nvars,
                found: point.len(),
            });
        }
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &[f64]) -> f64 {
        let maxdeg: Vec<usize> = (0..self.nvars).map(|v| self.degree_in(v).max(0) as usize).collect();
        let powers: Vec<Vec<f64>> = point
            .iter()
            .zip(&maxdeg)
            .map(|(&x, &d)| {
                let mut pw = Vec::with_capacity(d + 1);
                let mut acc = 1.0;
                pw.push(acc);
                for _ in 0..d {
                    acc *= x;
                    pw.push(acc);
                }
                pw
            })
            .collect();
        let mut sum = 0.0;
        for (m, c) in self.terms() {
            let mut t = c;
            for (v, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    t *= powers[v][e as usize];
                }
            }
            sum += t;
        }
        sum
    }

    /// Substitute `x_i -> subs[i]`. All substitutes must share a variable set.
    pub fn compose(&self, subs: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if subs.len() != self.nvars {
            return Err(PolyError::Dimension {
                expected: self.nvars,
                found: subs.len(),
            });
        }
        let out_vars = match subs.first() {
            Some(s) => s.nvars,
            None => 0,
        };
        for s in subs {
            if s.nvars != out_vars {
                return Err(PolyError::Dimension {
                    expected: out_vars,
                    found: s.nvars,
                });
            }
        }
        // cached powers of each substitute
        let mut cache: Vec<Vec<Polynomial>> = subs.iter().map(|s| vec![Polynomial::constant(out_vars, 1.0), s.clone()]).collect();
        for v in 0..self.nvars {
            let d = self.degree_in(v).max(0) as usize;
            while cache[v].len() <= d {
                let next = cache[v].last().unwrap().mul(&subs[v])?;
                cache[v].push(next);
            }
        }
        let mut out = Polynomial::zero(out_vars);
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(out_vars, c);
            for (v, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    term = term.mul(&cache[v][e as usize])?;
                }
            }
            for (mm, cc) in term.terms {
                out.add_term(mm, cc);
            }
        }
        Ok(out)
    }

    /// Re-embed into a larger variable set: variable `i` maps to `mapping[i]`.
    pub fn embed(&self, nvars: usize, mapping: &[usize]) -> Polynomial {
        assert_eq!(mapping.len(), self.nvars);
        let mut out = Polynomial::zero(nvars);
        for (m, &c) in &self.terms {
            let mut e = vec![0; nvars];
            for (i, &ex) in m.0.iter().enumerate() {
                e[mapping[i]] += ex;
            }
            out.add_term(Monomial(e), c);
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (v, &e) in m.0.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{v}")?,
                    _ => write!(f, "*x{v}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

/// On-disk form: variable count plus `(exponent-vector, coefficient)` pairs.
#[derive(Serialize, Deserialize)]
struct SerializedPoly {
    nvars: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl From<Polynomial> for SerializedPoly {
    fn from(p: Polynomial) -> Self {
        SerializedPoly {
            nvars: p.nvars,
            terms: p.terms().map(|(m, c)| (m.0.clone(), c)).collect(),
        }
    }
}

impl TryFrom<SerializedPoly> for Polynomial {
    type Error = PolyError;
    fn try_from(s: SerializedPoly) -> Result<Self, Self::Error> {
        Polynomial::from_terms(s.nvars, s.terms)
    }
}
