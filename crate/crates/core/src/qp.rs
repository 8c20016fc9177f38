//! Dual active-set solver for strictly convex quadratic programs with a
//! diagonal Hessian.
//!
//! Solves
//!
//! ```txt
//!     min  ½ xᵀ diag(g) x + aᵀx
//!     s.t. M x ≤ h               (general inequality rows)
//!          lo ≤ x ≤ hi           (boxes, entries may be infinite)
//!          eᵀx = d               (optional single equality)
//! ```
//!
//! The method is the Goldfarb–Idnani dual algorithm: start from the
//! unconstrained minimiser, then repeatedly add a violated constraint to the
//! active set while keeping dual feasibility, dropping active constraints
//! whose multipliers would turn negative. The factorisation `J = L⁻ᵀ Q` is
//! kept up to date with Givens reflections. Box constraints are never
//! materialised as matrix rows; their normals are unit vectors so the
//! products with `J` reduce to row lookups.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default absolute tolerance on KKT residuals.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Feasibility tolerance, relative to the scale of each constraint.
const FEAS_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("hessian diagonal entry {index} is {value}; strict convexity needs every entry > 0")]
    NonPositiveHessian { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lower bound {lo} exceeds upper bound {hi} for variable {index}")]
    InvertedBounds { index: usize, lo: f64, hi: f64 },
    #[error("non-finite problem data: {0}")]
    NonFinite(String),
    #[error("equality constraint vector is zero")]
    ZeroEquality,
    #[error("active-set iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("KKT residual {residual:e} exceeds tolerance {limit:e}")]
    Inaccurate { residual: f64, limit: f64 },
}

/// Identifies one constraint of a [`Cqp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintId {
    Equality,
    /// General inequality row `M_k x ≤ h_k`.
    Row(usize),
    /// `x_i ≥ lo_i`.
    Lower(usize),
    /// `x_i ≤ hi_i`.
    Upper(usize),
}

impl std::fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintId::Equality => write!(f, "balance equality"),
            ConstraintId::Row(k) => write!(f, "inequality row {k}"),
            ConstraintId::Lower(i) => write!(f, "lower bound of x[{i}]"),
            ConstraintId::Upper(i) => write!(f, "upper bound of x[{i}]"),
        }
    }
}

/// A strictly convex QP with diagonal Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct Cqp {
    diag_hessian: Vec<f64>,
    linear_cost: Vec<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: Vec<f64>,
    lower_bounds: Vec<f64>,
    upper_bounds: Vec<f64>,
    equality: Option<(Vec<f64>, f64)>,
}

impl Cqp {
    /// Unconstrained problem `min ½xᵀdiag(g)x + aᵀx`; add constraints with
    /// the `with_*` builders.
    pub fn new(diag_hessian: Vec<f64>, linear_cost: Vec<f64>) -> Result<Self, QpError> {
        let n = diag_hessian.len();
        if linear_cost.len() != n {
            return Err(QpError::Dimension(format!("hessian has {n} entries but linear cost has {}", linear_cost.len())));
        }
        for (index, &value) in diag_hessian.iter().enumerate() {
            if !value.is_finite() {
                return Err(QpError::NonFinite(format!("hessian[{index}] = {value}")));
            }
            if value <= 0.0 {
                return Err(QpError::NonPositiveHessian { index, value });
            }
        }
        if let Some(i) = linear_cost.iter().position(|v| !v.is_finite()) {
            return Err(QpError::NonFinite(format!("linear cost[{i}]")));
        }
        Ok(Cqp {
            diag_hessian,
            linear_cost,
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; n],
            upper_bounds: vec![f64::INFINITY; n],
            equality: None,
        })
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, QpError> {
        let n = self.dim();
        if lower.len() != n || upper.len() != n {
            return Err(QpError::Dimension(format!("bounds have lengths {}/{} for {n} variables", lower.len(), upper.len())));
        }
        for i in 0..n {
            if lower[i].is_nan() || upper[i].is_nan() {
                return Err(QpError::NonFinite(format!("bound of x[{i}]")));
            }
            if lower[i] > upper[i] {
                return Err(QpError::InvertedBounds { index: i, lo: lower[i], hi: upper[i] });
            }
        }
        self.lower_bounds = lower;
        self.upper_bounds = upper;
        Ok(self)
    }

    pub fn with_equality(mut self, vector: Vec<f64>, rhs: f64) -> Result<Self, QpError> {
        if vector.len() != self.dim() {
            return Err(QpError::Dimension(format!("equality vector has {} entries for {} variables", vector.len(), self.dim())));
        }
        if !rhs.is_finite() || vector.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("equality data".into()));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(QpError::ZeroEquality);
        }
        self.equality = Some((vector, rhs));
        Ok(self)
    }

    pub fn with_inequalities(mut self, matrix: DMatrix<f64>, rhs: Vec<f64>) -> Result<Self, QpError> {
        if matrix.ncols() != self.dim() || matrix.nrows() != rhs.len() {
            return Err(QpError::Dimension(format!(
                "inequality matrix is {}x{} with {} right-hand sides for {} variables",
                matrix.nrows(),
                matrix.ncols(),
                rhs.len(),
                self.dim()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("inequality data".into()));
        }
        self.ineq_matrix = matrix;
        self.ineq_rhs = rhs;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.diag_hessian.len()
    }

    pub fn diag_hessian(&self) -> &[f64] {
        &self.diag_hessian
    }

    pub fn linear_cost(&self) -> &[f64] {
        &self.linear_cost
    }

    pub fn ineq_matrix(&self) -> &DMatrix<f64> {
        &self.ineq_matrix
    }

    pub fn ineq_rhs(&self) -> &[f64] {
        &self.ineq_rhs
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower_bounds
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper_bounds
    }

    pub fn equality(&self) -> Option<(&[f64], f64)> {
        self.equality.as_ref().map(|(v, r)| (v.as_slice(), *r))
    }

    pub fn n_rows(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.diag_hessian).zip(&self.linear_cost).map(|((&xi, &g), &a)| 0.5 * g * xi * xi + a * xi).sum()
    }

    /// Copy of the problem without inequality row `k`.
    pub fn without_row(&self, k: usize) -> Cqp {
        let mut out = self.clone();
        out.ineq_matrix = self.ineq_matrix.clone().remove_row(k);
        out.ineq_rhs.remove(k);
        out
    }

    /// Every finite inequality constraint, in selection order: rows first,
    /// then lower bounds, then upper bounds.
    fn inequality_ids(&self) -> Vec<ConstraintId> {
        let n = self.dim();
        let mut ids: Vec<ConstraintId> = (0..self.n_rows()).filter(|&k| self.ineq_rhs[k] < f64::INFINITY).map(ConstraintId::Row).collect();
        ids.extend((0..n).filter(|&i| self.lower_bounds[i] > f64::NEG_INFINITY).map(ConstraintId::Lower));
        ids.extend((0..n).filter(|&i| self.upper_bounds[i] < f64::INFINITY).map(ConstraintId::Upper));
        ids
    }

    /// Constraint in `nᵀx ≥ b` form: returns `b`.
    fn ge_rhs(&self, c: ConstraintId) -> f64 {
        match c {
            ConstraintId::Equality => self.equality.as_ref().map(|e| e.1).unwrap_or(0.0),
            ConstraintId::Row(k) => -self.ineq_rhs[k],
            ConstraintId::Lower(i) => self.lower_bounds[i],
            ConstraintId::Upper(i) => -self.upper_bounds[i],
        }
    }

    /// `nᵀv` for the `≥`-form normal of constraint `c`.
    fn normal_dot(&self, c: ConstraintId, v: &DVector<f64>) -> f64 {
        match c {
            ConstraintId::Equality => {
                let e = &self.equality.as_ref().expect("equality present").0;
                e.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
            }
            ConstraintId::Row(k) => -self.ineq_matrix.row(k).iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>(),
            ConstraintId::Lower(i) => v[i],
            ConstraintId::Upper(i) => -v[i],
        }
    }

    /// Scale of `|n|ᵀ|v|`, used for relative feasibility tests.
    fn normal_abs_dot(&self, c: ConstraintId, v: &DVector<f64>) -> f64 {
        match c {
            ConstraintId::Equality => {
                let e = &self.equality.as_ref().expect("equality present").0;
                e.iter().zip(v.iter()).map(|(a, b)| (a * b).abs()).sum()
            }
            ConstraintId::Row(k) => self.ineq_matrix.row(k).iter().zip(v.iter()).map(|(a, b)| (a * b).abs()).sum(),
            ConstraintId::Lower(i) | ConstraintId::Upper(i) => v[i].abs(),
        }
    }

    /// Dense `≥`-form normal of `c`.
    fn normal_vector(&self, c: ConstraintId) -> DVector<f64> {
        let n = self.dim();
        match c {
            ConstraintId::Equality => DVector::from_column_slice(&self.equality.as_ref().expect("equality present").0),
            ConstraintId::Row(k) => -self.ineq_matrix.row(k).transpose(),
            ConstraintId::Lower(i) => DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 }),
            ConstraintId::Upper(i) => DVector::from_fn(n, |r, _| if r == i { -1.0 } else { 0.0 }),
        }
    }

    fn normal_norm(&self, c: ConstraintId) -> f64 {
        match c {
            ConstraintId::Equality => self.equality.as_ref().expect("equality present").0.iter().map(|a| a * a).sum::<f64>().sqrt(),
            ConstraintId::Row(k) => self.ineq_matrix.row(k).norm(),
            ConstraintId::Lower(_) | ConstraintId::Upper(_) => 1.0,
        }
    }

    /// `Jᵀn` for the `≥`-form normal of `c`.
    fn jt_normal(&self, c: ConstraintId, j: &DMatrix<f64>) -> DVector<f64> {
        match c {
            ConstraintId::Equality => {
                let e = &self.equality.as_ref().expect("equality present").0;
                j.tr_mul(&DVector::from_column_slice(e))
            }
            ConstraintId::Row(k) => -j.tr_mul(&self.ineq_matrix.row(k).transpose()),
            ConstraintId::Lower(i) => j.row(i).transpose(),
            ConstraintId::Upper(i) => -j.row(i).transpose(),
        }
    }

    /// Signed slack `nᵀx − b` (negative means violated).
    fn slack(&self, c: ConstraintId, x: &DVector<f64>) -> f64 {
        self.normal_dot(c, x) - self.ge_rhs(c)
    }

    fn feas_tol(&self, c: ConstraintId, x: &DVector<f64>) -> f64 {
        FEAS_REL_TOL * 1f64.max(self.ge_rhs(c).abs()).max(self.normal_abs_dot(c, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Optimal,
    /// The constraint that could not be satisfied together with the current
    /// active set, and its residual violation at the last iterate.
    Infeasible {
        constraint: ConstraintId,
        violation: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqpSolution {
    pub x: Vec<f64>,
    /// Multiplier `ν` of the equality, with stationarity written as
    /// `Gx + a + Mᵀμ + eν − η_lo + η_hi = 0`.
    pub eq_multiplier: f64,
    pub ineq_multipliers: Vec<f64>,
    pub lower_multipliers: Vec<f64>,
    pub upper_multipliers: Vec<f64>,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub active_set: Vec<ConstraintId>,
    pub iterations: usize,
}

impl CqpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solve `problem`; `tol` bounds the KKT residual expected of optimal returns.
pub fn solve_cqp(problem: &Cqp, tol: f64) -> Result<CqpSolution, QpError> {
    solve_cqp_with_hint(problem, tol, &[])
}

/// As [`solve_cqp`], but constraints listed in `hint` are preferred when
/// picking which violated constraint enters the active set next. The hint
/// only steers the path; the minimiser is unique.
pub fn solve_cqp_with_hint(problem: &Cqp, tol: f64, hint: &[ConstraintId]) -> Result<CqpSolution, QpError> {
    let mut state = DualActiveSet::new(problem);
    let outcome = state.run(hint)?;
    let mut solution = state.into_solution(outcome);
    solution.kkt_residual = kkt_residual(problem, &solution);
    if solution.is_optimal() {
        // Absolute for O(1) data, relative once magnitudes exceed one.
        let limit = tol * problem_scale(problem, &solution.x);
        if solution.kkt_residual > limit {
            return Err(QpError::Inaccurate { residual: solution.kkt_residual, limit });
        }
    }
    Ok(solution)
}

fn problem_scale(problem: &Cqp, x: &[f64]) -> f64 {
    let mut scale: f64 = 1.0;
    for i in 0..problem.dim() {
        scale = scale.max(problem.linear_cost[i].abs()).max((problem.diag_hessian[i] * x[i]).abs());
    }
    for &h in &problem.ineq_rhs {
        if h.is_finite() {
            scale = scale.max(h.abs());
        }
    }
    if let Some((_, d)) = &problem.equality {
        scale = scale.max(d.abs());
    }
    scale
}

struct DualActiveSet<'a> {
    qp: &'a Cqp,
    n: usize,
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    active: Vec<ConstraintId>,
    u: Vec<f64>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Infeasible(ConstraintId, f64),
}

impl<'a> DualActiveSet<'a> {
    fn new(qp: &'a Cqp) -> Self {
        let n = qp.dim();
        let g = &qp.diag_hessian;
        let x = DVector::from_iterator(n, (0..n).map(|i| -qp.linear_cost[i] / g[i]));
        let j = DMatrix::from_diagonal(&DVector::from_iterator(n, g.iter().map(|v| 1.0 / v.sqrt())));
        DualActiveSet { qp, n, x, j, r: DMatrix::zeros(n, n), r_norm: 1.0, active: Vec::new(), u: Vec::new(), iterations: 0 }
    }

    fn iq(&self) -> usize {
        self.active.len()
    }

    /// Step direction in primal space `z = J₂ d₂` and in dual space
    /// `r = R⁻¹ d₁`.
    fn directions(&self, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let iq = self.iq();
        let mut z = DVector::zeros(self.n);
        for col in iq..self.n {
            if d[col] != 0.0 {
                z.axpy(d[col], &self.j.column(col), 1.0);
            }
        }
        let mut r = DVector::zeros(iq);
        for i in (0..iq).rev() {
            let mut sum = d[i];
            for k in i + 1..iq {
                sum -= self.r[(i, k)] * r[k];
            }
            r[i] = sum / self.r[(i, i)];
        }
        (z, r)
    }

    /// Whether the null-space part of `d` vanishes, i.e. the constraint is
    /// linearly dependent on the active set.
    fn null_part_is_zero(&self, d: &DVector<f64>) -> bool {
        let iq = self.iq();
        let tail: f64 = (iq..self.n).map(|k| d[k] * d[k]).sum();
        let total: f64 = d.iter().map(|v| v * v).sum();
        tail <= 1e-24 * total.max(f64::MIN_POSITIVE)
    }

    /// Rotate `J` so that `d = Jᵀn` has zeros below position `iq`, then
    /// append `d[..=iq]` as a new column of `R`.
    fn add_constraint(&mut self, d: &mut DVector<f64>) -> bool {
        let iq = self.iq();
        for jj in ((iq + 1)..self.n).rev() {
            let (a, b) = (d[jj - 1], d[jj]);
            let h = a.hypot(b);
            if h == 0.0 {
                continue;
            }
            let (cc, ss) = (a / h, b / h);
            d[jj - 1] = h;
            d[jj] = 0.0;
            for k in 0..self.n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                self.j[(k, jj - 1)] = cc * t1 + ss * t2;
                self.j[(k, jj)] = ss * t1 - cc * t2;
            }
        }
        if d[iq].abs() <= f64::EPSILON * self.r_norm {
            return false;
        }
        for i in 0..=iq {
            self.r[(i, iq)] = d[i];
        }
        self.r_norm = self.r_norm.max(d[iq].abs());
        true
    }

    fn delete_constraint(&mut self, pos: usize) {
        let iq = self.iq();
        self.active.remove(pos);
        self.u.remove(pos);
        for col in pos..iq - 1 {
            for row in 0..self.n {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..self.n {
            self.r[(row, iq - 1)] = 0.0;
        }
        let iq = iq - 1;
        for jj in pos..iq {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = a.hypot(b);
            if h == 0.0 {
                continue;
            }
            let (cc, ss) = (a / h, b / h);
            self.r[(jj, jj)] = h;
            self.r[(jj + 1, jj)] = 0.0;
            for k in jj + 1..iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = cc * t1 + ss * t2;
                self.r[(jj + 1, k)] = ss * t1 - cc * t2;
            }
            for k in 0..self.n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                self.j[(k, jj)] = cc * t1 + ss * t2;
                self.j[(k, jj + 1)] = ss * t1 - cc * t2;
            }
        }
    }

    /// Most violated inactive inequality (normalised by the normal's norm),
    /// hinted constraints first, ties to the lowest index.
    fn pick_violated(&self, candidates: &[ConstraintId], hint: &[ConstraintId]) -> Option<(ConstraintId, f64)> {
        let mut best: Option<(bool, f64, ConstraintId, f64)> = None;
        for &c in candidates {
            if self.active.contains(&c) {
                continue;
            }
            let s = self.qp.slack(c, &self.x);
            if s >= -self.qp.feas_tol(c, &self.x) {
                continue;
            }
            let score = s / self.qp.normal_norm(c);
            let hinted = hint.contains(&c);
            let better = match best {
                None => true,
                Some((bh, bs, _, _)) => (hinted && !bh) || (hinted == bh && score < bs),
            };
            if better {
                best = Some((hinted, score, c, s));
            }
        }
        best.map(|(_, _, c, s)| (c, s))
    }

    fn run(&mut self, hint: &[ConstraintId]) -> Result<Outcome, QpError> {
        if self.qp.equality.is_some() {
            let c = ConstraintId::Equality;
            let mut d = self.qp.jt_normal(c, &self.j);
            let (z, _) = self.directions(&d);
            let nz = self.qp.normal_dot(c, &z);
            let t = -self.qp.slack(c, &self.x) / nz;
            self.x.axpy(t, &z, 1.0);
            if self.add_constraint(&mut d) {
                self.active.push(c);
                self.u.push(t);
            }
        }

        let candidates = self.qp.inequality_ids();
        let limit = 50 * (self.n + candidates.len()) + 100;
        loop {
            let Some((p, mut s_p)) = self.pick_violated(&candidates, hint) else {
                return Ok(Outcome::Optimal);
            };
            let mut u_p = 0.0;
            loop {
                self.iterations += 1;
                if self.iterations > limit {
                    return Err(QpError::IterationLimit(limit));
                }
                let mut d = self.qp.jt_normal(p, &self.j);
                let (z, r) = self.directions(&d);

                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (k, &rk) in r.iter().enumerate() {
                    if self.active[k] != ConstraintId::Equality && rk > 0.0 {
                        let ratio = self.u[k] / rk;
                        if ratio < t1 {
                            t1 = ratio;
                            drop = Some(k);
                        }
                    }
                }
                let t2 = if self.null_part_is_zero(&d) { f64::INFINITY } else { -s_p / self.qp.normal_dot(p, &z) };
                let t = t1.min(t2);
                if t.is_infinite() {
                    return Ok(Outcome::Infeasible(p, -s_p));
                }
                for (uk, rk) in self.u.iter_mut().zip(r.iter()) {
                    *uk -= t * rk;
                }
                u_p += t;
                if t2.is_infinite() {
                    self.delete_constraint(drop.expect("finite partial step has a blocking constraint"));
                    continue;
                }
                self.x.axpy(t, &z, 1.0);
                if t2 <= t1 {
                    if self.add_constraint(&mut d) {
                        self.active.push(p);
                        self.u.push(u_p);
                    }
                    break;
                }
                self.delete_constraint(drop.expect("partial step has a blocking constraint"));
                s_p = self.qp.slack(p, &self.x);
            }
        }
    }

    /// Re-solve the equality-constrained problem on the final active set to
    /// clean up accumulated rounding; kept only if it stays dual feasible.
    fn polish(&mut self) {
        let iq = self.iq();
        if iq == 0 {
            return;
        }
        let n = self.n;
        let g = &self.qp.diag_hessian;
        let a = DVector::from_column_slice(&self.qp.linear_cost);
        let mut normals = DMatrix::zeros(n, iq);
        for (k, &c) in self.active.iter().enumerate() {
            normals.set_column(k, &self.qp.normal_vector(c));
        }
        let ginv_n = DMatrix::from_fn(n, iq, |i, k| normals[(i, k)] / g[i]);
        let schur = normals.tr_mul(&ginv_n);
        let rhs = DVector::from_iterator(iq, self.active.iter().map(|&c| self.qp.ge_rhs(c))) + ginv_n.tr_mul(&a);
        let Some(chol) = schur.cholesky() else { return };
        let u = chol.solve(&rhs);
        if self.active.iter().zip(u.iter()).any(|(&c, &uk)| c != ConstraintId::Equality && uk < 0.0) {
            return;
        }
        let nu = &normals * &u;
        let x = DVector::from_iterator(n, (0..n).map(|i| (nu[i] - a[i]) / g[i]));
        let before = stationarity_gap(self.qp, &self.x, &self.active, &self.u);
        let after = stationarity_gap(self.qp, &x, &self.active, u.as_slice());
        if after <= before {
            self.x = x;
            self.u = u.iter().copied().collect();
        }
    }

    fn into_solution(mut self, outcome: Outcome) -> CqpSolution {
        let status = match outcome {
            Outcome::Optimal => {
                self.polish();
                SolveStatus::Optimal
            }
            Outcome::Infeasible(constraint, violation) => SolveStatus::Infeasible { constraint, violation },
        };
        let n = self.n;
        let mut eq_multiplier = 0.0;
        let mut ineq_multipliers = vec![0.0; self.qp.n_rows()];
        let mut lower_multipliers = vec![0.0; n];
        let mut upper_multipliers = vec![0.0; n];
        for (&c, &u) in self.active.iter().zip(&self.u) {
            match c {
                ConstraintId::Equality => eq_multiplier = -u,
                ConstraintId::Row(k) => ineq_multipliers[k] = u,
                ConstraintId::Lower(i) => lower_multipliers[i] = u,
                ConstraintId::Upper(i) => upper_multipliers[i] = u,
            }
        }
        CqpSolution {
            x: self.x.iter().copied().collect(),
            eq_multiplier,
            ineq_multipliers,
            lower_multipliers,
            upper_multipliers,
            status,
            kkt_residual: 0.0,
            active_set: self.active,
            iterations: self.iterations,
        }
    }
}

fn stationarity_gap(qp: &Cqp, x: &DVector<f64>, active: &[ConstraintId], u: &[f64]) -> f64 {
    let n = qp.dim();
    let mut grad = DVector::from_iterator(n, (0..n).map(|i| qp.diag_hessian[i] * x[i] + qp.linear_cost[i]));
    for (&c, &uk) in active.iter().zip(u) {
        grad.axpy(-uk, &qp.normal_vector(c), 1.0);
    }
    let primal = active.iter().map(|&c| qp.slack(c, x).abs()).fold(0.0, f64::max);
    grad.amax().max(primal)
}

/// Stationarity residual `‖Gx + a + Mᵀμ + eν − η_lo + η_hi‖∞`.
pub fn stationarity_residual(problem: &Cqp, sol: &CqpSolution) -> f64 {
    let n = problem.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut g = problem.diag_hessian[i] * sol.x[i] + problem.linear_cost[i];
        for k in 0..problem.n_rows() {
            g += problem.ineq_matrix[(k, i)] * sol.ineq_multipliers[k];
        }
        if let Some((e, _)) = problem.equality() {
            g += e[i] * sol.eq_multiplier;
        }
        g += sol.upper_multipliers[i] - sol.lower_multipliers[i];
        worst = worst.max(g.abs());
    }
    worst
}

/// Largest constraint violation of `x` (zero when feasible).
pub fn primal_violation(problem: &Cqp, x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let mut worst: f64 = 0.0;
    if problem.equality.is_some() {
        worst = worst.max(problem.slack(ConstraintId::Equality, &xv).abs());
    }
    for c in problem.inequality_ids() {
        worst = worst.max(-problem.slack(c, &xv));
    }
    worst
}

/// Max of stationarity, primal violation, complementarity and dual sign
/// residuals.
pub fn kkt_residual(problem: &Cqp, sol: &CqpSolution) -> f64 {
    let xv = DVector::from_column_slice(&sol.x);
    let mut worst = stationarity_residual(problem, sol).max(primal_violation(problem, &sol.x));
    let mut check = |c: ConstraintId, mult: f64| {
        worst = worst.max(-mult);
        if mult != 0.0 {
            worst = worst.max((mult * problem.slack(c, &xv)).abs());
        }
    };
    for (k, &m) in sol.ineq_multipliers.iter().enumerate() {
        if m != 0.0 {
            check(ConstraintId::Row(k), m);
        }
    }
    for i in 0..problem.dim() {
        if sol.lower_multipliers[i] != 0.0 {
            check(ConstraintId::Lower(i), sol.lower_multipliers[i]);
        }
        if sol.upper_multipliers[i] != 0.0 {
            check(ConstraintId::Upper(i), sol.upper_multipliers[i]);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_variable_equality() {
        let qp = Cqp::new(vec![1.0], vec![0.0]).unwrap().with_bounds(vec![0.0], vec![2.0]).unwrap().with_equality(vec![1.0], 1.0).unwrap();
        let sol = solve_cqp(&qp, DEFAULT_TOL).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.eq_multiplier, -1.0, epsilon = 1e-12);
        assert!(sol.kkt_residual <= DEFAULT_TOL);
    }

    #[test]
    fn symmetric_split() {
        let qp = Cqp::new(vec![1.0, 1.0], vec![0.0, 0.0])
            .unwrap()
            .with_bounds(vec![0.0, 0.0], vec![f64::INFINITY; 2])
            .unwrap()
            .with_equality(vec![1.0, 1.0], 2.0)
            .unwrap();
        let sol = solve_cqp(&qp, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_positive_hessian() {
        assert!(matches!(Cqp::new(vec![1.0, 0.0], vec![0.0, 0.0]), Err(QpError::NonPositiveHessian { index: 1, .. })));
        assert!(matches!(Cqp::new(vec![-2.0], vec![0.0]), Err(QpError::NonPositiveHessian { index: 0, .. })));
    }

    #[test]
    fn rejects_inverted_bounds() {
        let err = Cqp::new(vec![1.0], vec![0.0]).unwrap().with_bounds(vec![1.0], vec![0.0]);
        assert!(matches!(err, Err(QpError::InvertedBounds { .. })));
    }

    #[test]
    fn infeasible_reports_certificate() {
        // x1 + x2 = 10 with both capped at 2.
        let qp = Cqp::new(vec![1.0, 1.0], vec![0.0, 0.0])
            .unwrap()
            .with_bounds(vec![0.0, 0.0], vec![2.0, 2.0])
            .unwrap()
            .with_equality(vec![1.0, 1.0], 10.0)
            .unwrap();
        let sol = solve_cqp(&qp, DEFAULT_TOL).unwrap();
        match sol.status {
            SolveStatus::Infeasible { constraint, violation } => {
                assert!(matches!(constraint, ConstraintId::Upper(_)));
                assert!(violation > 0.0);
            }
            SolveStatus::Optimal => panic!("expected infeasible"),
        }
    }

    #[test]
    fn general_row_binds() {
        // min ½(x² + y²) - 2x - 2y  s.t. x + y ≤ 2  → (1, 1), μ = 1
        let qp = Cqp::new(vec![1.0, 1.0], vec![-2.0, -2.0])
            .unwrap()
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), vec![2.0])
            .unwrap();
        let sol = solve_cqp(&qp, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.ineq_multipliers[0], 1.0, epsilon = 1e-12);
        assert!(sol.kkt_residual <= DEFAULT_TOL);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        let qp = Cqp::new(vec![1.0, 1.0], vec![-2.0, -2.0]).unwrap().with_inequalities(m, vec![2.0, 2.0, 4.0]).unwrap();
        let sol = solve_cqp(&qp, DEFAULT_TOL).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert!(sol.kkt_residual <= DEFAULT_TOL);
    }

    #[test]
    fn fixed_variable_with_equal_bounds() {
        let qp = Cqp::new(vec![1.0, 1.0], vec![0.0, 0.0])
            .unwrap()
            .with_bounds(vec![0.0, 0.0], vec![0.0, 5.0])
            .unwrap()
            .with_equality(vec![1.0, 1.0], 3.0)
            .unwrap();
        let sol = solve_cqp(&qp, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 3.0, epsilon = 1e-12);
    }
}
