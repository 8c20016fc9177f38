//! Fitting per-zone cost scales to observed prices.
//!
//! Under truthful bids with scaled costs the price of zone `z` in hour `t` is
//! `v = s^c_z c_k x_k + s^b_z b_k` for the price-setting player `k`. The fit
//! minimises
//!
//! ```txt
//!     F(s) = (1/N_T) Σ_t Σ_z (v_{z,t} − P_{z,t})²
//! ```
//!
//! by projected gradient descent with backtracking. Derivatives hold the
//! price setter and the clearing's active set fixed; the allocation's
//! response to `s` enters through the KKT system of the active constraints,
//! so where only the price setter moves the price derivative is the plain
//! `(c_k x_k, b_k)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{apply_scales, CostError};
use crate::market::{build_swm, clear_market, truthful_profile, MarketError, MarketInstance};
use crate::qp::ConstraintId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("no hours to calibrate on")]
    NoHours,
    #[error("hour {hour}: {expected} zones but {got} targets")]
    TargetShape { hour: usize, expected: usize, got: usize },
    #[error("hour {hour}: every hour must have the same zones ({expected}), got {got}")]
    ZoneMismatch { hour: usize, expected: usize, got: usize },
    #[error("hour {hour}, zone {zone}: target {value} is not finite")]
    BadTarget { hour: usize, zone: usize, value: f64 },
    #[error("{expected} zones but {got} scale entries")]
    ScaleShape { expected: usize, got: usize },
    #[error("no hour could be cleared ({infeasible} infeasible)")]
    AllHoursInfeasible { infeasible: usize },
    #[error("zone {zone}: no priced hour in the subset")]
    NoRatioData { zone: usize },
    #[error("hour {hour}, zone {zone}: target price is zero")]
    ZeroTarget { hour: usize, zone: usize },
    #[error("zone {zone}: mean price ratio {ratio} is not positive")]
    NonPositiveRatio { zone: usize, ratio: f64 },
    #[error("hour index {0} out of range")]
    BadHour(usize),
    #[error("invalid optimiser settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("hour {hour}: {source}")]
    Market { hour: usize, source: MarketError },
}

/// Per-zone slope and intercept scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

impl Scales {
    pub fn ones(n_zones: usize) -> Self {
        Scales { c: vec![1.0; n_zones], b: vec![1.0; n_zones] }
    }

    pub fn n_zones(&self) -> usize {
        self.c.len()
    }

    /// `[s^c_0, s^b_0, s^c_1, s^b_1, …]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.c.iter().zip(&self.b).flat_map(|(&c, &b)| [c, b]).collect()
    }

    pub fn from_vec(v: &[f64]) -> Self {
        Scales { c: v.iter().step_by(2).copied().collect(), b: v.iter().skip(1).step_by(2).copied().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub initial_step: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { initial_step: 1.0, backtrack: 0.5, sufficient_decrease: 1e-4, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub line_search: LineSearch,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Scales are projected onto `[s_min, ∞)`.
    pub s_min: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { line_search: LineSearch::default(), max_iter: 500, grad_tol: 1e-8, s_min: 1e-3 }
    }
}

impl FitSettings {
    fn validate(&self) -> Result<(), CalibrationError> {
        let ls = &self.line_search;
        if !(ls.initial_step > 0.0) || !(ls.backtrack > 0.0 && ls.backtrack < 1.0) {
            return Err(CalibrationError::Settings("step must be positive and backtracking factor in (0, 1)".into()));
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return Err(CalibrationError::Settings("sufficient decrease must lie in (0, 1)".into()));
        }
        if !(self.s_min > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(CalibrationError::Settings("s_min must be positive and grad_tol nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub hours: Vec<MarketInstance>,
    /// `targets[t][z]`; `None` where no price was observed.
    pub targets: Vec<Vec<Option<f64>>>,
    pub s0: Scales,
    pub settings: FitSettings,
}

impl CalibrationProblem {
    pub fn new(hours: Vec<MarketInstance>, targets: Vec<Vec<Option<f64>>>) -> Result<Self, CalibrationError> {
        let nz = hours.first().ok_or(CalibrationError::NoHours)?.n_zones();
        let problem = CalibrationProblem { hours, targets, s0: Scales::ones(nz), settings: FitSettings::default() };
        problem.validate()?;
        Ok(problem)
    }

    pub fn n_zones(&self) -> usize {
        self.hours.first().map_or(0, |h| h.n_zones())
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let nz = self.hours.first().ok_or(CalibrationError::NoHours)?.n_zones();
        if self.targets.len() != self.hours.len() {
            return Err(CalibrationError::TargetShape { hour: self.targets.len(), expected: self.hours.len(), got: 0 });
        }
        for (t, (h, p)) in self.hours.iter().zip(&self.targets).enumerate() {
            if h.n_zones() != nz {
                return Err(CalibrationError::ZoneMismatch { hour: t, expected: nz, got: h.n_zones() });
            }
            if p.len() != nz {
                return Err(CalibrationError::TargetShape { hour: t, expected: nz, got: p.len() });
            }
            for (z, v) in p.iter().enumerate() {
                if let Some(v) = *v {
                    if !v.is_finite() {
                        return Err(CalibrationError::BadTarget { hour: t, zone: z, value: v });
                    }
                }
            }
        }
        check_scales(&self.s0, nz)?;
        self.settings.validate()
    }
}

fn check_scales(s: &Scales, nz: usize) -> Result<(), CalibrationError> {
    if s.c.len() != nz || s.b.len() != nz {
        return Err(CalibrationError::ScaleShape { expected: nz, got: s.c.len().min(s.b.len()) });
    }
    Ok(())
}

/// Truthful clearing of one hour with scaled costs.
#[derive(Debug, Clone, PartialEq)]
pub struct HourFit {
    pub v: Vec<Option<f64>>,
    pub price_setters: Vec<Option<usize>>,
    pub x: Vec<f64>,
    pub active_set: Vec<ConstraintId>,
}

/// Objective, gradient and Gauss–Newton blocks at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    /// Same layout as [`Scales::to_vec`].
    pub grad: Vec<f64>,
    /// Per zone, in `(s^c, s^b)` order.
    pub blocks: Vec<[[f64; 2]; 2]>,
    /// `None` for hours whose clearing was infeasible.
    pub hours: Vec<Option<HourFit>>,
    pub n_hours_used: usize,
    pub skipped_hours: usize,
    /// Priced-and-targeted points missing a price or a target.
    pub skipped_points: usize,
}

/// Clears hour `t` under truthful bids with costs scaled by `s`.
pub fn clear_scaled(instance: &MarketInstance, s: &Scales) -> Result<Option<HourFit>, CostError> {
    let players = apply_scales(&instance.players, &s.c, &s.b)?;
    let scaled = MarketInstance { players, ..instance.clone() };
    match clear_market(&scaled, &truthful_profile(&scaled.players)) {
        Ok(r) if r.is_optimal() => Ok(Some(HourFit { v: r.v, price_setters: r.price_setters, x: r.x, active_set: r.active_set })),
        _ => Ok(None),
    }
}

/// `∂v_z/∂s` for every priced zone of one hour, columns in [`Scales::to_vec`]
/// order. Rows of unpriced zones are zero.
pub fn price_jacobian(instance: &MarketInstance, s: &Scales, fit: &HourFit) -> DMatrix<f64> {
    let nz = instance.n_zones();
    let n = instance.n_players();
    let players = &instance.players;
    let mut jac = DMatrix::zeros(nz, 2 * nz);
    let fixed: Vec<bool> =
        (0..n).map(|i| fit.active_set.iter().any(|c| matches!(c, ConstraintId::Lower(j) | ConstraintId::Upper(j) if *j == i))).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    // Rows of the active equality and network constraints on the free players.
    let m_p = {
        let scaled = MarketInstance { players: apply_scales(players, &s.c, &s.b).unwrap_or_else(|_| players.clone()), ..instance.clone() };
        build_swm(&scaled, &truthful_profile(&scaled.players)).ok()
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in &fit.active_set {
        match c {
            ConstraintId::Equality => rows.push(vec![1.0; free.len()]),
            ConstraintId::Row(k) => {
                if let Some(qp) = &m_p {
                    rows.push(free.iter().map(|&i| qp.ineq_matrix()[(*k, i)]).collect());
                }
            }
            _ => {}
        }
    }
    let minv = DVector::from_iterator(free.len(), free.iter().map(|&i| 1.0 / (s.c[players[i].zone] * players[i].c)));
    let a = DMatrix::from_fn(rows.len(), free.len(), |r, j| rows[r][j]);
    let a_minv = DMatrix::from_fn(rows.len(), free.len(), |r, j| a[(r, j)] * minv[j]);
    let schur_pinv = (&a_minv * a.transpose()).pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::zeros(rows.len(), rows.len()));
    for z in 0..nz {
        for (col, is_c) in [(2 * z, true), (2 * z + 1, false)] {
            // Gradient of the objective's linear part with respect to this scale.
            let g = DVector::from_iterator(
                free.len(),
                free.iter().map(|&i| {
                    let p = &players[i];
                    match (p.zone == z, is_c) {
                        (false, _) => 0.0,
                        (true, true) => p.c * fit.x[i],
                        (true, false) => p.b,
                    }
                }),
            );
            let mg = minv.component_mul(&g);
            let correction = a_minv.transpose() * (&schur_pinv * (&a * &mg));
            let dx_free = -(mg - correction);
            let mut dx = vec![0.0; n];
            for (j, &i) in free.iter().enumerate() {
                dx[i] = dx_free[j];
            }
            for zz in 0..nz {
                let Some(k) = fit.price_setters[zz] else { continue };
                let p = &players[k];
                let mut d = s.c[zz] * p.c * dx[k];
                if zz == z {
                    d += if is_c { p.c * fit.x[k] } else { p.b };
                }
                jac[(zz, col)] = d;
            }
        }
    }
    jac
}

pub fn evaluate(problem: &CalibrationProblem, s: &Scales) -> Result<Evaluation, CalibrationError> {
    let nz = problem.n_zones();
    check_scales(s, nz)?;
    let hours: Vec<Option<HourFit>> = problem.hours.par_iter().map(|h| clear_scaled(h, s)).collect::<Result<_, CostError>>()?;
    let n_used = hours.iter().filter(|h| h.is_some()).count();
    if n_used == 0 {
        return Err(CalibrationError::AllHoursInfeasible { infeasible: hours.len() });
    }
    let scale = 1.0 / n_used as f64;
    let mut f = 0.0;
    let mut grad = vec![0.0; 2 * nz];
    let mut blocks = vec![[[0.0; 2]; 2]; nz];
    let mut skipped_points = 0;
    for ((fit, inst), targets) in hours.iter().zip(&problem.hours).zip(&problem.targets) {
        let Some(fit) = fit else { continue };
        let jac = price_jacobian(inst, s, fit);
        for z in 0..nz {
            let (Some(v), Some(p), Some(_)) = (fit.v[z], targets[z], fit.price_setters[z]) else {
                skipped_points += 1;
                continue;
            };
            let r = v - p;
            f += scale * r * r;
            for (col, g) in grad.iter_mut().enumerate() {
                *g += 2.0 * scale * r * jac[(z, col)];
            }
            for (zz, block) in blocks.iter_mut().enumerate() {
                let (jc, jb) = (jac[(z, 2 * zz)], jac[(z, 2 * zz + 1)]);
                let w = 2.0 * scale;
                block[0][0] += w * jc * jc;
                block[0][1] += w * jc * jb;
                block[1][0] += w * jc * jb;
                block[1][1] += w * jb * jb;
            }
        }
    }
    Ok(Evaluation { f, grad, blocks, skipped_hours: hours.len() - n_used, hours, n_hours_used: n_used, skipped_points })
}

pub fn objective(problem: &CalibrationProblem, s: &Scales) -> Result<f64, CalibrationError> {
    evaluate(problem, s).map(|e| e.f)
}

pub fn gradient(problem: &CalibrationProblem, s: &Scales) -> Result<Vec<f64>, CalibrationError> {
    evaluate(problem, s).map(|e| e.grad)
}

pub fn hessian_diag_blocks(problem: &CalibrationProblem, s: &Scales) -> Result<Vec<[[f64; 2]; 2]>, CalibrationError> {
    evaluate(problem, s).map(|e| e.blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    IterationCap,
    /// No step along the projected gradient decreased `F` enough.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    /// Accepted step length, 0 at the starting point.
    pub step: f64,
    pub scales: Scales,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub scales: Scales,
    pub f: f64,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
    /// Price-setting player per hour and zone at the final scales.
    pub price_setters: Vec<Vec<Option<usize>>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected gradient descent with Armijo backtracking from `problem.s0`.
pub fn fit_tb_scales(problem: &CalibrationProblem) -> Result<FitResult, CalibrationError> {
    problem.validate()?;
    let st = &problem.settings;
    let ls = &st.line_search;
    let mut s = problem.s0.to_vec();
    let mut eval = evaluate(problem, &problem.s0)?;
    let mut trace = vec![TraceRow { iter: 0, f: eval.f, grad_norm: norm(&eval.grad), step: 0.0, scales: problem.s0.clone() }];
    let mut stop = StopReason::IterationCap;
    for iter in 1..=st.max_iter {
        let g = eval.grad.clone();
        if norm(&g) <= st.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut alpha = ls.initial_step;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let trial: Vec<f64> = s.iter().zip(&g).map(|(si, gi)| (si - alpha * gi).max(st.s_min)).collect();
            let decrease: f64 = g.iter().zip(trial.iter().zip(&s)).map(|(gi, (t, si))| gi * (t - si)).sum();
            if decrease < 0.0 {
                let e = evaluate(problem, &Scales::from_vec(&trial))?;
                if e.f <= eval.f + ls.sufficient_decrease * decrease {
                    accepted = Some((trial, e));
                    break;
                }
            }
            alpha *= ls.backtrack;
        }
        let Some((trial, e)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        s = trial;
        eval = e;
        trace.push(TraceRow { iter, f: eval.f, grad_norm: norm(&eval.grad), step: alpha, scales: Scales::from_vec(&s) });
    }
    if stop == StopReason::IterationCap && norm(&eval.grad) <= st.grad_tol {
        stop = StopReason::GradientTolerance;
    }
    let price_setters =
        eval.hours.iter().map(|h| h.as_ref().map_or_else(|| vec![None; problem.n_zones()], |h| h.price_setters.clone())).collect();
    Ok(FitResult { scales: Scales::from_vec(&s), f: eval.f, stop, trace, price_setters })
}

/// Divides each zone's slope scale by the mean ratio of strategic-model
/// prices to targets over `hours`; intercept scales are kept.
pub fn gt_ratio_adjust(
    gt_prices: &[Vec<Option<f64>>],
    targets: &[Vec<Option<f64>>],
    s_tb: &Scales,
    hours: &[usize],
) -> Result<Scales, CalibrationError> {
    let nz = s_tb.n_zones();
    check_scales(s_tb, nz)?;
    let mut out = s_tb.clone();
    for z in 0..nz {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &t in hours {
            let (Some(gt), Some(p)) = (gt_prices.get(t), targets.get(t)) else {
                return Err(CalibrationError::BadHour(t));
            };
            if gt.len() != nz || p.len() != nz {
                return Err(CalibrationError::TargetShape { hour: t, expected: nz, got: gt.len().min(p.len()) });
            }
            let (Some(v), Some(p)) = (gt[z], p[z]) else { continue };
            if p == 0.0 {
                return Err(CalibrationError::ZeroTarget { hour: t, zone: z });
            }
            sum += v / p;
            count += 1;
        }
        if count == 0 {
            return Err(CalibrationError::NoRatioData { zone: z });
        }
        let ratio = sum / count as f64;
        if !(ratio > 0.0) {
            return Err(CalibrationError::NonPositiveRatio { zone: z, ratio });
        }
        out.c[z] = s_tb.c[z] / ratio;
    }
    Ok(out)
}
