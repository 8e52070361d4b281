//! Dense primal-dual interior-point solver for block-diagonal SDPs.
//!
//! Primal: `min C•X  s.t.  A_j•X = b_j, X ⪰ 0`; dual: `max bᵀy  s.t.
//! C - Σ y_j A_j = S ⪰ 0`. Search directions are HKM with a Mehrotra
//! predictor-corrector. A problem without an objective is a feasibility
//! problem and is solved as `min λ  s.t.  A(X) = b, X + λI ⪰ 0`, `λ >= -1`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
const STEP_FRACTION: f64 = 0.98;

#[derive(Debug, Error, PartialEq)]
pub enum SdpError {
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NonSymmetric(f64),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Symmetric coefficient `v` at `(row, col)` and `(col, row)` of a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub entries: Vec<Entry>,
    pub rhs: f64,
}

impl Constraint {
    pub fn add(&mut self, block: usize, row: usize, col: usize, value: f64) {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        self.entries.push(Entry { block, row, col, value });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<usize>,
    pub constraints: Vec<Constraint>,
    /// Objective `C`, same symmetric-entry convention; empty for feasibility.
    pub objective: Vec<Entry>,
}

impl SdpProblem {
    pub fn new(blocks: Vec<usize>) -> Self {
        SdpProblem {
            blocks,
            ..Default::default()
        }
    }

    pub fn is_feasibility(&self) -> bool {
        self.objective.is_empty()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.blocks.iter().any(|&n| n == 0) {
            return Err(SdpError::Invalid("empty block".into()));
        }
        let check = |e: &Entry| {
            if e.block >= self.blocks.len() || e.col >= self.blocks[e.block] || e.row >= self.blocks[e.block] {
                Err(SdpError::Invalid(format!("entry {e:?} out of range")))
            } else if !e.value.is_finite() {
                Err(SdpError::Invalid(format!("entry {e:?} not finite")))
            } else {
                Ok(())
            }
        };
        for c in &self.constraints {
            c.entries.iter().try_for_each(check)?;
            if !c.rhs.is_finite() {
                return Err(SdpError::Invalid("non-finite rhs".into()));
            }
        }
        self.objective.iter().try_for_each(check)
    }

    /// `A_j • X` for block matrices `x`.
    pub fn apply(&self, j: usize, x: &[DMatrix<f64>]) -> f64 {
        inner_sym(&self.constraints[j].entries, x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("problem serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn inner_sym(entries: &[Entry], x: &[DMatrix<f64>]) -> f64 {
    entries
        .iter()
        .map(|e| {
            let v = x[e.block][(e.row, e.col)];
            if e.row == e.col {
                e.value * v
            } else {
                2.0 * e.value * v
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdpStatus {
    Optimal,
    Feasible,
    InfeasibleCertificate,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    #[serde(skip)]
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Optimal `λ` of the feasibility formulation.
    pub lambda: Option<f64>,
    /// A linear combination of constraints with `Aᵀy = 0`, `bᵀy ≠ 0`.
    pub farkas_ray: Option<Vec<f64>>,
    pub iterations: usize,
    pub seconds: f64,
    /// Number of constraints removed as linearly dependent.
    pub dropped_rows: usize,
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn eigen_floor(m: &DMatrix<f64>) -> Result<f64, SdpError> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(SdpError::NonSymmetric(asym));
    }
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.min())
}

/// Internal form: full-symmetric triplets (both halves stored).
struct Work {
    dims: Vec<usize>,
    rows: Vec<Vec<(usize, usize, usize, f64)>>,
    b: Vec<f64>,
    c: Vec<DMatrix<f64>>,
}

impl Work {
    fn from_entries(dims: Vec<usize>, rows: Vec<(Vec<Entry>, f64)>, objective: &[Entry]) -> Work {
        let full = |es: &[Entry]| {
            let mut out = Vec::with_capacity(2 * es.len());
            for e in es {
                if e.row == e.col {
                    out.push((e.block, e.row, e.col, e.value));
                } else {
                    out.push((e.block, e.row, e.col, e.value));
                    out.push((e.block, e.col, e.row, e.value));
                }
            }
            // merge duplicates for deterministic sparse products
            out.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
            let mut merged: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(out.len());
            for t in out {
                match merged.last_mut() {
                    Some(l) if (l.0, l.1, l.2) == (t.0, t.1, t.2) => l.3 += t.3,
                    _ => merged.push(t),
                }
            }
            merged.retain(|t| t.3 != 0.0);
            merged
        };
        let mut c: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for &(bk, r, col, v) in &full(objective) {
            c[bk][(r, col)] += v;
        }
        let (rows, b): (Vec<_>, Vec<_>) = rows.into_iter().map(|(e, rhs)| (full(&e), rhs)).unzip();
        Work { dims, rows, b, c }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, j: usize, x: &[DMatrix<f64>]) -> f64 {
        self.rows[j].iter().map(|&(bk, r, c, v)| v * x[bk][(c, r)]).sum()
    }

    fn apply_all(&self, x: &[DMatrix<f64>]) -> Vec<f64> {
        (0..self.m()).map(|j| self.apply(j, x)).collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (row, &yj) in self.rows.iter().zip(y) {
            for &(bk, r, c, v) in row {
                out[bk][(r, c)] += yj * v;
            }
        }
        out
    }

    fn row_dot(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.rows[i], &self.rows[j]);
        let (mut p, mut q, mut s) = (0, 0, 0.0);
        while p < a.len() && q < b.len() {
            let ka = (a[p].0, a[p].1, a[p].2);
            let kb = (b[q].0, b[q].1, b[q].2);
            match ka.cmp(&kb) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    s += a[p].3 * b[q].3;
                    p += 1;
                    q += 1;
                }
            }
        }
        s
    }
}

/// Outcome of dependent-row elimination.
enum Reduction {
    Keep(Vec<usize>),
    Inconsistent(Vec<f64>),
}

/// Pivoted Cholesky on `AAᵀ`; dependent rows must have consistent right-hand
/// sides, otherwise the combination exhibiting the conflict is returned.
fn reduce_rows(w: &Work) -> Reduction {
    let m = w.m();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = w.row_dot(i, j);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let maxdiag = (0..m).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let eps = 1e-12 * maxdiag.max(1e-300);
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut diag: Vec<f64> = (0..m).map(|i| g[(i, i)]).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut used = vec![false; m];
    for k in 0..m {
        let (piv, &best) = match diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        {
            Some(p) => p,
            None => break,
        };
        if best <= eps {
            break;
        }
        used[piv] = true;
        chosen.push(piv);
        let lkk = best.sqrt();
        l[(piv, k)] = lkk;
        for i in 0..m {
            if used[i] {
                continue;
            }
            let mut s = g[(i, piv)];
            for p in 0..k {
                s -= l[(i, p)] * l[(piv, p)];
            }
            l[(i, k)] = s / lkk;
            diag[i] -= l[(i, k)] * l[(i, k)];
        }
    }
    if chosen.len() == m {
        return Reduction::Keep(chosen);
    }
    // check consistency of each dropped row: a_j = Σ c_i a_i over chosen rows
    let k = chosen.len();
    let gss = DMatrix::from_fn(k, k, |a, b| g[(chosen[a], chosen[b])]);
    let chol = gss.clone().cholesky();
    let bnorm = w.b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for j in (0..m).filter(|j| !used[*j]) {
        let gsj = DVector::from_fn(k, |a, _| g[(chosen[a], j)]);
        let coef = match &chol {
            Some(c) => c.solve(&gsj),
            None => DVector::zeros(k),
        };
        let predicted: f64 = (0..k).map(|a| coef[a] * w.b[chosen[a]]).sum();
        if (w.b[j] - predicted).abs() > 1e-9 * (1.0 + bnorm) {
            let mut ray = vec![0.0; m];
            ray[j] = 1.0;
            for a in 0..k {
                ray[chosen[a]] = -coef[a];
            }
            return Reduction::Inconsistent(ray);
        }
    }
    chosen.sort_unstable();
    Reduction::Keep(chosen)
}

fn frob(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm_blocks(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Largest `α <= 1/τ` with `M + α D ⪰ 0`, scaled by the step fraction.
fn max_step(m: &[DMatrix<f64>], d: &[DMatrix<f64>]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (mb, db) in m.iter().zip(d) {
        let chol = mb.clone().cholesky()?;
        let l = chol.l();
        let linv = l.clone().try_inverse()?;
        let w = &linv * db * linv.transpose();
        let w = (&w + w.transpose()) * 0.5;
        let lmin = SymmetricEigen::new(w).eigenvalues.min();
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    Some((STEP_FRACTION * alpha).min(1.0))
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dy: Vec<f64>,
    ds: Vec<DMatrix<f64>>,
}

/// HKM direction for the complementarity target `rc` (`dX = rc - X dS S⁻¹`).
fn hkm_direction(
    w: &Work,
    x: &[DMatrix<f64>],
    sinv: &[DMatrix<f64>],
    schur: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    rp: &[f64],
    rd: &[DMatrix<f64>],
    rc: &[DMatrix<f64>],
) -> Direction {
    let x_rd_sinv: Vec<DMatrix<f64>> = x.iter().zip(rd).zip(sinv).map(|((xb, rb), sb)| xb * rb * sb).collect();
    let a_rc = w.apply_all(rc);
    let a_xrs = w.apply_all(&x_rd_sinv);
    let rhs = DVector::from_fn(w.m(), |j, _| rp[j] - a_rc[j] + a_xrs[j]);
    let dy = schur.solve(&rhs);
    let dy: Vec<f64> = dy.iter().copied().collect();
    let aty = w.adjoint(&dy);
    let ds: Vec<DMatrix<f64>> = rd.iter().zip(&aty).map(|(r, a)| r - a).collect();
    let dx: Vec<DMatrix<f64>> = rc
        .iter()
        .zip(x)
        .zip(&ds)
        .zip(sinv)
        .map(|(((r, xb), dsb), sb)| {
            let d = r - xb * dsb * sb;
            (&d + d.transpose()) * 0.5
        })
        .collect();
    Direction { dx, dy, ds }
}

/// `M_ij = A_i • (X A_j S⁻¹)`, built column-sparse per constraint.
fn schur_matrix(w: &Work, x: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = w.m();
    let mut mm = DMatrix::zeros(m, m);
    let mut bmat: Vec<DMatrix<f64>> = w.dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    for j in 0..m {
        // X A_j restricted to its nonzero columns
        let mut cols: Vec<(usize, usize, DVector<f64>)> = Vec::new();
        for &(bk, r, c, v) in &w.rows[j] {
            match cols.iter_mut().find(|(b, cc, _)| *b == bk && *cc == c) {
                Some((_, _, col)) => col.axpy(v, &x[bk].column(r), 1.0),
                None => cols.push((bk, c, x[bk].column(r) * v)),
            }
        }
        let touched: Vec<usize> = {
            let mut t: Vec<usize> = cols.iter().map(|c| c.0).collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        for &bk in &touched {
            bmat[bk].fill(0.0);
        }
        for (bk, c, col) in &cols {
            let srow = sinv[*bk].row(*c);
            bmat[*bk].ger(1.0, col, &srow.transpose(), 1.0);
        }
        for i in 0..m {
            let mut s = 0.0;
            for &(bk, r, c, v) in &w.rows[i] {
                if touched.binary_search(&bk).is_ok() {
                    s += v * bmat[bk][(c, r)];
                }
            }
            mm[(i, j)] = s;
        }
    }
    (&mm + mm.transpose()) * 0.5
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    y: Vec<f64>,
    s: Vec<DMatrix<f64>>,
}

struct Outcome {
    status: SdpStatus,
    it: Iterate,
    pres: f64,
    dres: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
    iterations: usize,
}

/// Early exits for the feasibility formulation, whose last block is `λ' = λ + 1`.
#[derive(Clone, Copy)]
struct FeasibilityExit {
    lambda_block: usize,
}

fn interior_point(w: &Work, tol: f64, max_iter: usize, feas: Option<FeasibilityExit>) -> Outcome {
    let n_total: usize = w.dims.iter().sum();
    let bnorm = w.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cnorm = norm_blocks(&w.c);
    let anorm_max = (0..w.m()).map(|j| w.row_dot(j, j).sqrt()).fold(0.0, f64::max);
    let xi = (0..w.m())
        .map(|j| (1.0 + w.b[j].abs()) / (1.0 + w.row_dot(j, j).sqrt()))
        .fold((n_total as f64).sqrt().max(10.0), f64::max);
    let eta = (1.0 + anorm_max.max(cnorm)).max((n_total as f64).sqrt());
    let mut it = Iterate {
        x: w.dims.iter().map(|&n| DMatrix::identity(n, n) * xi).collect(),
        y: vec![0.0; w.m()],
        s: w.dims.iter().map(|&n| DMatrix::identity(n, n) * eta).collect(),
    };
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY, 0.0, 0.0);
    for iter in 0..max_iter {
        let ax = w.apply_all(&it.x);
        let rp: Vec<f64> = w.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let aty = w.adjoint(&it.y);
        let rd: Vec<DMatrix<f64>> = w.c.iter().zip(&aty).zip(&it.s).map(|((c, a), s)| c - a - s).collect();
        let pres = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + bnorm);
        let dres = norm_blocks(&rd) / (1.0 + cnorm);
        let pobj = frob(&w.c, &it.x);
        let dobj: f64 = w.b.iter().zip(&it.y).map(|(b, y)| b * y).sum();
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        last = (pres, dres, gap, pobj, dobj);
        let done = |status| Outcome {
            status,
            it: Iterate {
                x: it.x.clone(),
                y: it.y.clone(),
                s: it.s.clone(),
            },
            pres,
            dres,
            gap,
            pobj,
            dobj,
            iterations: iter,
        };
        if let Some(f) = feas {
            let lambda = it.x[f.lambda_block][(0, 0)] - 1.0;
            if pres <= tol && lambda < 0.0 {
                return done(SdpStatus::Feasible);
            }
            if dres <= tol && dobj - 1.0 >= tol {
                return done(SdpStatus::InfeasibleCertificate);
            }
        }
        // feasibility runs keep tightening the gap until λ resolves against tol
        let gap_tol = if feas.is_some() { 1e-3 * tol } else { tol };
        if pres <= tol && dres <= tol && gap <= gap_tol {
            return done(SdpStatus::Optimal);
        }
        let mu = frob(&it.x, &it.s) / n_total as f64;
        let sinv: Option<Vec<DMatrix<f64>>> = it.s.iter().map(inverse_spd).collect();
        let Some(sinv) = sinv else {
            return done(SdpStatus::MaxIterations);
        };
        let schur = schur_matrix(w, &it.x, &sinv);
        let schur_chol = match schur.clone().cholesky() {
            Some(c) => c,
            None => {
                let reg = 1e-14 * schur.diagonal().amax().max(1.0);
                match (schur + DMatrix::identity(w.m(), w.m()) * reg).cholesky() {
                    Some(c) => c,
                    None => return done(SdpStatus::MaxIterations),
                }
            }
        };
        // predictor
        let rc_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let aff = hkm_direction(w, &it.x, &sinv, &schur_chol, &rp, &rd, &rc_aff);
        let (Some(ap), Some(ad)) = (max_step(&it.x, &aff.dx), max_step(&it.s, &aff.ds)) else {
            return done(SdpStatus::MaxIterations);
        };
        let xa: Vec<DMatrix<f64>> = it.x.iter().zip(&aff.dx).map(|(x, d)| x + d * ap).collect();
        let sa: Vec<DMatrix<f64>> = it.s.iter().zip(&aff.ds).map(|(s, d)| s + d * ad).collect();
        let mu_aff = frob(&xa, &sa) / n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        // corrector
        let rc: Vec<DMatrix<f64>> =
            it.x.iter()
                .zip(&sinv)
                .zip(aff.dx.iter().zip(&aff.ds))
                .map(|((x, si), (dxa, dsa))| si * (sigma * mu) - x - dxa * dsa * si)
                .collect();
        let dir = hkm_direction(w, &it.x, &sinv, &schur_chol, &rp, &rd, &rc);
        let (Some(ap), Some(ad)) = (max_step(&it.x, &dir.dx), max_step(&it.s, &dir.ds)) else {
            return done(SdpStatus::MaxIterations);
        };
        for (x, d) in it.x.iter_mut().zip(&dir.dx) {
            *x += d * ap;
        }
        for (s, d) in it.s.iter_mut().zip(&dir.ds) {
            *s += d * ad;
        }
        for (y, d) in it.y.iter_mut().zip(&dir.dy) {
            *y += ad * d;
        }
    }
    Outcome {
        status: SdpStatus::MaxIterations,
        it,
        pres: last.0,
        dres: last.1,
        gap: last.2,
        pobj: last.3,
        dobj: last.4,
        iterations: max_iter,
    }
}

/// Solve `problem`; feasibility problems go through the slack formulation.
pub fn solve(problem: &SdpProblem, tol: f64, max_iter: usize) -> Result<SdpSolution, SdpError> {
    if !(tol > 0.0) {
        return Err(SdpError::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    problem.validate()?;
    let start = Instant::now();
    let nb = problem.blocks.len();
    let feasibility = problem.is_feasibility();
    let (dims, rows, objective) = if feasibility {
        // X = X' - λ I with λ = λ' - 1:  A(X') - λ' A(I) = b - A(I)
        let mut dims = problem.blocks.clone();
        dims.push(1);
        let rows = problem
            .constraints
            .iter()
            .map(|c| {
                let tr: f64 = c.entries.iter().filter(|e| e.row == e.col).map(|e| e.value).sum();
                let mut es = c.entries.clone();
                if tr != 0.0 {
                    es.push(Entry {
                        block: nb,
                        row: 0,
                        col: 0,
                        value: -tr,
                    });
                }
                (es, c.rhs - tr)
            })
            .collect::<Vec<_>>();
        (
            dims,
            rows,
            vec![Entry {
                block: nb,
                row: 0,
                col: 0,
                value: 1.0,
            }],
        )
    } else {
        let rows = problem.constraints.iter().map(|c| (c.entries.clone(), c.rhs)).collect();
        (problem.blocks.clone(), rows, problem.objective.clone())
    };
    let full = Work::from_entries(dims.clone(), rows, &objective);
    let m = full.m();
    let keep = match reduce_rows(&full) {
        Reduction::Keep(k) => k,
        Reduction::Inconsistent(ray) => {
            return Ok(SdpSolution {
                status: SdpStatus::InfeasibleCertificate,
                x: problem.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
                y: vec![0.0; m],
                primal_residual: f64::INFINITY,
                dual_residual: 0.0,
                gap: 0.0,
                primal_objective: f64::INFINITY,
                dual_objective: f64::INFINITY,
                lambda: None,
                farkas_ray: Some(ray),
                iterations: 0,
                seconds: start.elapsed().as_secs_f64(),
                dropped_rows: 0,
            })
        }
    };
    let dropped = m - keep.len();
    let work = Work {
        dims: full.dims.clone(),
        rows: keep.iter().map(|&j| full.rows[j].clone()).collect(),
        b: keep.iter().map(|&j| full.b[j]).collect(),
        c: full.c.clone(),
    };
    let feas = feasibility.then_some(FeasibilityExit { lambda_block: nb });
    let out = interior_point(&work, tol, max_iter, feas);
    let mut y = vec![0.0; m];
    for (k, &j) in keep.iter().enumerate() {
        y[j] = out.it.y[k];
    }
    let (x, lambda, status) = if feasibility {
        let lambda = out.it.x[nb][(0, 0)] - 1.0;
        let x: Vec<DMatrix<f64>> = out.it.x[..nb]
            .iter()
            .map(|xb| xb - DMatrix::identity(xb.nrows(), xb.ncols()) * lambda)
            .collect();
        let status = match out.status {
            SdpStatus::Feasible | SdpStatus::InfeasibleCertificate => out.status,
            SdpStatus::Optimal if lambda < tol => SdpStatus::Feasible,
            SdpStatus::Optimal => SdpStatus::InfeasibleCertificate,
            SdpStatus::MaxIterations if out.pres <= tol && lambda < tol => SdpStatus::Feasible,
            SdpStatus::MaxIterations => SdpStatus::MaxIterations,
        };
        (x, Some(lambda), status)
    } else {
        (out.it.x, None, out.status)
    };
    // residuals against the original problem
    let primal_residual = (0..problem.constraints.len())
        .map(|j| (problem.apply(j, &x) - problem.constraints[j].rhs).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(SdpSolution {
        status,
        x,
        y,
        primal_residual,
        dual_residual: out.dres,
        gap: out.gap,
        primal_objective: out.pobj,
        dual_objective: out.dobj,
        lambda,
        farkas_ray: None,
        iterations: out.iterations,
        seconds: start.elapsed().as_secs_f64(),
        dropped_rows: dropped,
    })
}

impl SdpSolution {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, SdpStatus::Feasible | SdpStatus::Optimal)
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        self.x
            .iter()
            .map(|b| eigen_floor(&((b + b.transpose()) * 0.5)).unwrap_or(f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::rng_from_seed;
    use rand::Rng;

    /// Gram problem for `c0 + c1 t + c2 t²` over basis `(1, t)`.
    fn univariate_gram(c: [f64; 3]) -> SdpProblem {
        let mut p = SdpProblem::new(vec![2]);
        let mut k0 = Constraint::default();
        k0.add(0, 0, 0, 1.0);
        k0.rhs = c[0];
        let mut k1 = Constraint::default();
        // off-diagonal entries count twice in A•X
        k1.add(0, 0, 1, 1.0);
        k1.rhs = c[1];
        let mut k2 = Constraint::default();
        k2.add(0, 1, 1, 1.0);
        k2.rhs = c[2];
        p.constraints = vec![k0, k1, k2];
        p
    }

    #[test]
    fn trace_one_block() {
        let mut p = SdpProblem::new(vec![1]);
        let mut c = Constraint::default();
        c.add(0, 0, 0, 1.0);
        c.rhs = 1.0;
        p.constraints.push(c);
        p.objective.push(Entry {
            block: 0,
            row: 0,
            col: 0,
            value: 1.0,
        });
        let s = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.x[0][(0, 0)] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn sos_sign_cases() {
        // t² + 2t + 2 = (t + 1)² + 1
        let s = solve(&univariate_gram([2.0, 2.0, 1.0]), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, SdpStatus::Feasible);
        assert!(s.min_eigenvalue() >= -1e-8);
        assert!(s.primal_residual < 1e-7);
        let s = solve(&univariate_gram([-1.0, 0.0, -1.0]), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, SdpStatus::InfeasibleCertificate);
        // t² + 1 with the identity Gram
        let s = solve(&univariate_gram([1.0, 0.0, 1.0]), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, SdpStatus::Feasible);
        // boundary case t² (PSD but singular Gram)
        let s = solve(&univariate_gram([0.0, 0.0, 1.0]), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, SdpStatus::Feasible);
        assert!(s.lambda.unwrap() < DEFAULT_TOL);
    }

    #[test]
    fn dependent_rows_are_dropped() {
        let mut p = univariate_gram([2.0, 2.0, 1.0]);
        let dup = p.constraints[1].clone();
        p.constraints.push(dup);
        let s = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, SdpStatus::Feasible);
        assert_eq!(s.dropped_rows, 1);
        let mut bad = dup_inconsistent();
        let s = solve(&bad, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.status, SdpStatus::InfeasibleCertificate);
        assert!(s.farkas_ray.is_some());
        bad.constraints.pop();
        assert_eq!(solve(&bad, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap().status, SdpStatus::Feasible);
    }

    fn dup_inconsistent() -> SdpProblem {
        let mut p = univariate_gram([2.0, 2.0, 1.0]);
        let mut dup = p.constraints[1].clone();
        dup.rhs = 3.0;
        p.constraints.push(dup);
        p
    }

    fn random_orthogonal(n: usize, rng: &mut crate::uncertainty::SimRng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        a.qr().q()
    }

    /// Planted primal-dual pair with strict complementarity.
    fn planted(blocks: &[usize], m: usize, seed: u64) -> (SdpProblem, f64) {
        let mut rng = rng_from_seed(seed);
        let mut xs = Vec::new();
        let mut ss = Vec::new();
        for &n in blocks {
            let u = random_orthogonal(n, &mut rng);
            let r = n / 2;
            let mut dx = DMatrix::zeros(n, n);
            let mut dsm = DMatrix::zeros(n, n);
            for i in 0..n {
                if i < r {
                    dx[(i, i)] = rng.random_range(0.5..2.0);
                } else {
                    dsm[(i, i)] = rng.random_range(0.5..2.0);
                }
            }
            xs.push(&u * dx * u.transpose());
            ss.push(&u * dsm * u.transpose());
        }
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = SdpProblem::new(blocks.to_vec());
        let mut cmat: Vec<DMatrix<f64>> = ss.clone();
        for (j, &yj) in y.iter().enumerate() {
            let mut c = Constraint::default();
            for (bk, &n) in blocks.iter().enumerate() {
                for r in 0..n {
                    for col in r..n {
                        if rng.random_range(0.0..1.0) < 0.3 || (j == 0 && r == col) {
                            let v: f64 = rng.random_range(-1.0..1.0);
                            let v = if j == 0 && r == col { 1.0 } else { v };
                            c.add(bk, r, col, v);
                            cmat[bk][(r, col)] += yj * v;
                            if r != col {
                                cmat[bk][(col, r)] += yj * v;
                            }
                        }
                    }
                }
            }
            c.rhs = inner_sym(&c.entries, &xs);
            p.constraints.push(c);
        }
        for (bk, &n) in blocks.iter().enumerate() {
            for r in 0..n {
                for col in r..n {
                    p.objective.push(Entry {
                        block: bk,
                        row: r,
                        col,
                        value: cmat[bk][(r, col)],
                    });
                }
            }
        }
        let opt: f64 = p.constraints.iter().zip(&y).map(|(c, yj)| c.rhs * yj).sum();
        (p, opt)
    }

    #[test]
    fn planted_solutions() {
        for (i, (blocks, m)) in [(vec![5], 6), (vec![5, 3], 10), (vec![12, 4, 1], 40), (vec![35], 120)]
            .into_iter()
            .enumerate()
        {
            let (p, opt) = planted(&blocks, m, 40 + i as u64);
            let s = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            assert_eq!(s.status, SdpStatus::Optimal, "{blocks:?}");
            assert!(
                (s.primal_objective - opt).abs() < 1e-6 * (1.0 + opt.abs()),
                "{} vs {opt}",
                s.primal_objective
            );
            assert!(s.primal_objective >= s.dual_objective - 1e-6);
            assert!(s.primal_residual < 1e-6);
        }
    }

    #[test]
    fn iterates_are_deterministic() {
        let (p, _) = planted(&[6, 2], 8, 3);
        let a = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let b = solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn eigen_floor_cases() {
        assert_eq!(eigen_floor(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]));
        assert!((eigen_floor(&d).unwrap() + 2.0).abs() < 1e-15);
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(eigen_floor(&ns), Err(SdpError::NonSymmetric(_))));
    }

    #[test]
    fn dump_round_trip() {
        let (p, _) = planted(&[3], 2, 1);
        let back = SdpProblem::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn invalid_inputs() {
        let mut p = univariate_gram([1.0, 0.0, 1.0]);
        p.constraints[0].entries[0].row = 5;
        assert!(solve(&p, DEFAULT_TOL, 10).is_err());
        assert!(solve(&univariate_gram([1.0, 0.0, 1.0]), 0.0, 10).is_err());
    }
}
