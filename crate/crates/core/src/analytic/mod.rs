//! Closed-form machinery for the single-zone market without capacity or
//! network constraints.
//!
//! Clearing reduces to finding the common marginal price `v` of the active
//! players, `x_i = (v − a_i)/m_i`. With every player active, the
//! intercepts `a⁺` at which each player's profit is stationary in its own
//! intercept solve a linear system whose matrix is diagonal minus a rank-one
//! term.

pub mod experiments;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::market::Strategy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("demand {0} must be positive")]
    NonPositiveDemand(f64),
    #[error("player {index}: {reason}")]
    InvalidData { index: usize, reason: String },
    #[error("expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("at least two players are needed, got {0}")]
    TooFewPlayers(usize),
    #[error("player {index}: 1 − k K2 = {value:e} is too close to zero")]
    SingularCoefficient { index: usize, value: f64 },
    #[error("equilibrium system is numerically singular")]
    Singular,
}

/// True cost structure `c x + b` of one producer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub c: f64,
    pub b: f64,
}

impl Cost {
    pub fn new(c: f64, b: f64) -> Self {
        Cost { c, b }
    }
}

pub fn costs_from(c: &[f64], b: &[f64]) -> Vec<Cost> {
    c.iter().zip(b).map(|(&c, &b)| Cost { c, b }).collect()
}

/// Single-zone market: one linear ask per player and an inelastic demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleMarket {
    pub strategies: Vec<Strategy>,
    pub costs: Vec<Cost>,
    pub demand: f64,
}

impl SimpleMarket {
    pub fn new(strategies: Vec<Strategy>, costs: Vec<Cost>, demand: f64) -> Result<Self, AnalyticError> {
        if costs.len() != strategies.len() {
            return Err(AnalyticError::Dimension { expected: strategies.len(), got: costs.len() });
        }
        check_strategies(&strategies, demand)?;
        for (index, c) in costs.iter().enumerate() {
            if !(c.c > 0.0) || !c.b.is_finite() {
                return Err(AnalyticError::InvalidData { index, reason: format!("cost ({}, {}) invalid", c.c, c.b) });
            }
        }
        Ok(SimpleMarket { strategies, costs, demand })
    }

    /// Profit of every player at the clearing of this market.
    pub fn profits(&self) -> Vec<f64> {
        let sol = clear_simplified(&self.strategies, self.demand);
        self.costs.iter().zip(&sol.x).map(|(c, &x)| profit(sol.v, x, *c)).collect()
    }
}

fn check_strategies(strategies: &[Strategy], demand: f64) -> Result<(), AnalyticError> {
    if !(demand > 0.0) {
        return Err(AnalyticError::NonPositiveDemand(demand));
    }
    if strategies.is_empty() {
        return Err(AnalyticError::TooFewPlayers(0));
    }
    for (index, s) in strategies.iter().enumerate() {
        if !(s.m > 0.0) || !s.a.is_finite() {
            return Err(AnalyticError::InvalidData { index, reason: format!("strategy ({}, {}) invalid", s.m, s.a) });
        }
    }
    Ok(())
}

pub fn profit(v: f64, x: f64, cost: Cost) -> f64 {
    v * x - 0.5 * cost.c * x * x - cost.b * x
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetSolution {
    /// Active players in increasing index order.
    pub active: Vec<usize>,
    pub x: Vec<f64>,
    pub v: f64,
}

/// Allocation for a fixed active set: `v = (d + Σ a_j/m_j)/Σ 1/m_j` and
/// `x_i = (v − a_i)/m_i` on the set, zero elsewhere.
pub fn allocation_on(strategies: &[Strategy], active: &[usize], demand: f64) -> (Vec<f64>, f64) {
    let s: f64 = active.iter().map(|&j| 1.0 / strategies[j].m).sum();
    let sa: f64 = active.iter().map(|&j| strategies[j].a / strategies[j].m).sum();
    let v = (demand + sa) / s;
    let mut x = vec![0.0; strategies.len()];
    for &i in active {
        x[i] = (v - strategies[i].a) / strategies[i].m;
    }
    (x, v)
}

/// Clear the single-zone market. Starts from every player active and drops
/// players with non-positive allocation until the set is stable; the price
/// only falls as players leave, so no dropped player is ever readmitted.
///
/// Strategies must have positive slopes and the demand must be positive.
pub fn clear_simplified(strategies: &[Strategy], demand: f64) -> ActiveSetSolution {
    let mut active: Vec<usize> = (0..strategies.len()).collect();
    loop {
        let (x, v) = allocation_on(strategies, &active, demand);
        let before = active.len();
        active.retain(|&i| x[i] > 0.0);
        if active.len() == before {
            return ActiveSetSolution { active, x, v };
        }
    }
}

/// Checked variant of [`clear_simplified`].
pub fn try_clear_simplified(strategies: &[Strategy], demand: f64) -> Result<ActiveSetSolution, AnalyticError> {
    check_strategies(strategies, demand)?;
    Ok(clear_simplified(strategies, demand))
}

/// Allocation on a fixed active set through the reduced system: eliminating
/// the last active player via the balance leaves `(D̂ + m_n e eᵀ) x̂ = r`,
/// inverted with the Sherman–Morrison formula.
pub fn allocation_reduced(strategies: &[Strategy], active: &[usize], demand: f64) -> Vec<f64> {
    let mut x = vec![0.0; strategies.len()];
    let Some((&last, rest)) = active.split_last() else { return x };
    let sn = strategies[last];
    if rest.is_empty() {
        x[last] = demand;
        return x;
    }
    // Equal marginal asks against the eliminated player:
    //   m_i x_i + m_n Σ_j x_j = m_n d + a_n − a_i
    let dinv: Vec<f64> = rest.iter().map(|&i| 1.0 / strategies[i].m).collect();
    let r: Vec<f64> = rest.iter().map(|&i| sn.m * demand + sn.a - strategies[i].a).collect();
    let dinv_r: Vec<f64> = dinv.iter().zip(&r).map(|(a, b)| a * b).collect();
    let e_dinv_r: f64 = dinv_r.iter().sum();
    let e_dinv_e: f64 = dinv.iter().sum();
    let coef = sn.m * e_dinv_r / (1.0 + sn.m * e_dinv_e);
    let mut total = 0.0;
    for (k, &i) in rest.iter().enumerate() {
        x[i] = dinv_r[k] - dinv[k] * coef;
        total += x[i];
    }
    x[last] = demand - total;
    x
}

/// Per-player coefficients of the stationarity conditions in the
/// all-active market.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumCoefficients {
    /// `k_i = 2 m_i − c_i`.
    pub k: Vec<f64>,
    /// `K2_i = S₋ᵢ/(m_i S)`, the magnitude of `∂x_i/∂a_i`.
    pub k2: Vec<f64>,
    /// `K1_i = d/(m_i S)`.
    pub k1: Vec<f64>,
    /// `θ_i = (2 − k_i K2_i)/(1 − k_i K2_i)`.
    pub theta: Vec<f64>,
    /// `S₋ᵢ = Σ_{j≠i} 1/m_j`.
    pub s_minus: Vec<f64>,
}

fn check_equilibrium_input(costs: &[Cost], m_plus: &[f64], demand: f64) -> Result<(), AnalyticError> {
    if costs.len() != m_plus.len() {
        return Err(AnalyticError::Dimension { expected: costs.len(), got: m_plus.len() });
    }
    if costs.len() < 2 {
        return Err(AnalyticError::TooFewPlayers(costs.len()));
    }
    if !(demand > 0.0) {
        return Err(AnalyticError::NonPositiveDemand(demand));
    }
    for (index, (c, &m)) in costs.iter().zip(m_plus).enumerate() {
        if !(c.c > 0.0) || !c.b.is_finite() {
            return Err(AnalyticError::InvalidData { index, reason: format!("cost ({}, {}) invalid", c.c, c.b) });
        }
        if !(m >= 0.5 * c.c) || !m.is_finite() {
            return Err(AnalyticError::InvalidData { index, reason: format!("slope {m} below half the cost slope") });
        }
    }
    Ok(())
}

impl EquilibriumCoefficients {
    pub fn new(costs: &[Cost], m_plus: &[f64], demand: f64) -> Result<Self, AnalyticError> {
        check_equilibrium_input(costs, m_plus, demand)?;
        let s: f64 = m_plus.iter().map(|m| 1.0 / m).sum();
        let n = costs.len();
        let mut out = EquilibriumCoefficients {
            k: Vec::with_capacity(n),
            k2: Vec::with_capacity(n),
            k1: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            s_minus: Vec::with_capacity(n),
        };
        for (index, (cost, &m)) in costs.iter().zip(m_plus).enumerate() {
            let s_minus = s - 1.0 / m;
            let k = 2.0 * m - cost.c;
            let k2 = s_minus / (m * s);
            let denom = 1.0 - k * k2;
            if denom.abs() < 1e-12 {
                return Err(AnalyticError::SingularCoefficient { index, value: denom });
            }
            out.k.push(k);
            out.k2.push(k2);
            out.k1.push(demand / (m * s));
            out.theta.push((2.0 - k * k2) / denom);
            out.s_minus.push(s_minus);
        }
        Ok(out)
    }
}

/// The equilibrium system `(D − e wᵀ) a = r` with `w_j = 1/m_j`,
/// `D_ii = θ_i S₋ᵢ + 1/m_i`, `r_i = d + (θ_i − 1) S₋ᵢ b_i`.
struct EquilibriumSystem {
    diag: Vec<f64>,
    w: Vec<f64>,
    rhs: Vec<f64>,
}

impl EquilibriumSystem {
    fn new(costs: &[Cost], m_plus: &[f64], demand: f64) -> Result<Self, AnalyticError> {
        let co = EquilibriumCoefficients::new(costs, m_plus, demand)?;
        let n = costs.len();
        let w: Vec<f64> = m_plus.iter().map(|m| 1.0 / m).collect();
        let diag = (0..n).map(|i| co.theta[i] * co.s_minus[i] + w[i]).collect();
        let rhs = (0..n).map(|i| demand + (co.theta[i] - 1.0) * co.s_minus[i] * costs[i].b).collect();
        Ok(EquilibriumSystem { diag, w, rhs })
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        DMatrix::from_fn(n, n, |i, j| if i == j { self.diag[i] } else { 0.0 } - self.w[j])
    }
}

/// Intercepts `a⁺` at which every player's profit is stationary in its own
/// intercept, given slopes `m⁺` and assuming all players active. Solved by
/// Sherman–Morrison on the diagonal-minus-rank-one structure.
pub fn solve_a_plus(costs: &[Cost], m_plus: &[f64], demand: f64) -> Result<Vec<f64>, AnalyticError> {
    let sys = EquilibriumSystem::new(costs, m_plus, demand)?;
    let dinv_r: Vec<f64> = sys.rhs.iter().zip(&sys.diag).map(|(r, d)| r / d).collect();
    let w_dinv_r: f64 = sys.w.iter().zip(&dinv_r).map(|(a, b)| a * b).sum();
    let w_dinv_e: f64 = sys.w.iter().zip(&sys.diag).map(|(w, d)| w / d).sum();
    let denom = 1.0 - w_dinv_e;
    if denom.abs() < 1e-14 || sys.diag.iter().any(|d| d.abs() < 1e-14) {
        return Err(AnalyticError::Singular);
    }
    let coef = w_dinv_r / denom;
    Ok(dinv_r.iter().zip(&sys.diag).map(|(x, d)| x + coef / d).collect())
}

/// Same system as [`solve_a_plus`], solved by dense LU.
pub fn solve_a_plus_dense(costs: &[Cost], m_plus: &[f64], demand: f64) -> Result<Vec<f64>, AnalyticError> {
    let sys = EquilibriumSystem::new(costs, m_plus, demand)?;
    let a = sys.dense().lu().solve(&DVector::from_vec(sys.rhs)).ok_or(AnalyticError::Singular)?;
    Ok(a.iter().copied().collect())
}

/// First and second derivatives of one player's profit in its own `(m, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfitDerivatives {
    pub x: f64,
    pub d_a: f64,
    pub d_m: f64,
    pub d_aa: f64,
    pub d_am: f64,
    pub d_mm: f64,
}

impl ProfitDerivatives {
    pub fn trace(&self) -> f64 {
        self.d_aa + self.d_mm
    }

    pub fn det(&self) -> f64 {
        self.d_aa * self.d_mm - self.d_am * self.d_am
    }
}

/// Analytic derivatives of `π_i` at the clearing of `strategies`, for a
/// player that is active. With `x_a = ∂x_i/∂a_i = −K2_i` and
/// `∂x_i/∂m_i = x_i x_a`:
///
/// ```txt
///     ∂π/∂a   = x + x_a (k x + a − b)
///     ∂π/∂m   = x ∂π/∂a
///     ∂²π/∂a² = 2 x_a + k x_a²
///     ∂²π/∂m∂a = x_a ∂π/∂a + x ∂²π/∂a²
///     ∂²π/∂m² = 2 x x_a ∂π/∂a + x² ∂²π/∂a²
/// ```
pub fn profit_derivatives(strategies: &[Strategy], cost: Cost, i: usize, demand: f64) -> ProfitDerivatives {
    let sol = clear_simplified(strategies, demand);
    let s: f64 = sol.active.iter().map(|&j| 1.0 / strategies[j].m).sum();
    let m = strategies[i].m;
    let a = strategies[i].a;
    let x = sol.x[i];
    let x_a = -(s - 1.0 / m) / (m * s);
    let k = 2.0 * m - cost.c;
    let d_a = x + x_a * (k * x + a - cost.b);
    let d_aa = 2.0 * x_a + k * x_a * x_a;
    ProfitDerivatives { x, d_a, d_m: x * d_a, d_aa, d_am: x_a * d_a + x * d_aa, d_mm: 2.0 * x * x_a * d_a + x * x * d_aa }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub derivatives: Vec<ProfitDerivatives>,
    /// Every player stationary in both `a` and `m`.
    pub stationary: bool,
    /// Every player's Hessian has negative trace.
    pub negative_trace: bool,
    /// Every player's Hessian determinant is zero up to
    /// `1e-6 · max(1, trace²)`.
    pub zero_det: bool,
    /// Some player is inactive at `(m⁺, a⁺)`, contradicting the all-active
    /// premise of the intercept system.
    pub active_set_violated: bool,
}

impl EquilibriumReport {
    pub fn is_local_equilibrium(&self) -> bool {
        self.stationary && self.negative_trace && self.zero_det && !self.active_set_violated
    }

    pub fn max_trace(&self) -> f64 {
        self.derivatives.iter().map(ProfitDerivatives::trace).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_det(&self) -> f64 {
        self.derivatives.iter().map(|d| d.det().abs()).fold(0.0, f64::max)
    }
}

pub const DET_REL_TOL: f64 = 1e-6;
const STATIONARY_REL_TOL: f64 = 1e-8;

/// Check the second-order picture at `(m⁺, a⁺)`: stationarity of every
/// player's profit, negative Hessian trace and singular Hessian.
pub fn verify_local_equilibrium(costs: &[Cost], m_plus: &[f64], a_plus: &[f64], demand: f64) -> Result<EquilibriumReport, AnalyticError> {
    check_equilibrium_input(costs, m_plus, demand)?;
    if a_plus.len() != costs.len() {
        return Err(AnalyticError::Dimension { expected: costs.len(), got: a_plus.len() });
    }
    let strategies: Vec<Strategy> = m_plus.iter().zip(a_plus).map(|(&m, &a)| Strategy::new(m, a)).collect();
    let sol = clear_simplified(&strategies, demand);
    let scale = sol.v.abs().max(demand).max(1.0);
    let derivatives: Vec<ProfitDerivatives> = (0..costs.len()).map(|i| profit_derivatives(&strategies, costs[i], i, demand)).collect();
    let stationary =
        derivatives.iter().all(|d| d.d_a.abs() <= STATIONARY_REL_TOL * scale && d.d_m.abs() <= STATIONARY_REL_TOL * scale * scale);
    let negative_trace = derivatives.iter().all(|d| d.trace() < 0.0);
    let zero_det = derivatives.iter().all(|d| d.det().abs() <= DET_REL_TOL * d.trace().powi(2).max(1.0));
    Ok(EquilibriumReport { derivatives, stationary, negative_trace, zero_det, active_set_violated: sol.active.len() != costs.len() })
}
