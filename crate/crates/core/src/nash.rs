//! Approximate global Nash equilibria by grid best responses on the robust
//! strategy segments.
//!
//! Each player's strategy is a slope on an equispaced grid over `[½c, c]`
//! with the intercept read off its segment. A best response clears the full
//! market once per grid point and keeps the most profitable point; players
//! are updated simultaneously (Jacobi) or in turn (Gauss–Seidel) until the
//! slope vector repeats.

use rayon::prelude::*;
use thiserror::Error;

use crate::market::{all_profits, clear_market, player_profit, ClearingResult, MarketError, MarketInstance, Strategy};
use crate::rss::{RssContext, RssError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NashError {
    #[error("player {player}: every grid point is infeasible ({detail})")]
    NoFeasiblePoint { player: usize, detail: String },
    #[error("invalid grid configuration: {0}")]
    Config(String),
    #[error("{expected} players but {got} strategies")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Rss(#[from] RssError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Jacobi,
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub n_pts: usize,
    pub max_cycles: usize,
    /// Stop when `‖m⁽ᵏ⁾ − m⁽ᵏ⁻¹⁾‖₂ < tol_ne`; exact repetition always stops.
    pub tol_ne: f64,
    pub schedule: Schedule,
    /// Coarser search run first to warm-start this one.
    pub presolve: Option<Box<GridConfig>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_pts: 11, max_cycles: 50, tol_ne: 0.0, schedule: Schedule::Jacobi, presolve: None }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), NashError> {
        if self.n_pts < 2 {
            return Err(NashError::Config(format!("n_pts = {} must be at least 2", self.n_pts)));
        }
        if self.max_cycles < 1 {
            return Err(NashError::Config("max_cycles must be at least 1".into()));
        }
        if !(self.tol_ne >= 0.0) {
            return Err(NashError::Config(format!("tol_ne = {} must be nonnegative", self.tol_ne)));
        }
        if let Some(p) = &self.presolve {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub strategy: Strategy,
    /// Grid index of the chosen point (0 for the fallback).
    pub index: usize,
    pub profit: f64,
}

fn with_strategy(strategies: &[Strategy], i: usize, s: Strategy) -> Vec<Strategy> {
    let mut out = strategies.to_vec();
    out[i] = s;
    out
}

/// Profit of player `i` for each candidate, `None` where clearing fails.
fn candidate_profits(
    instance: &MarketInstance,
    strategies: &[Strategy],
    i: usize,
    candidates: &[Strategy],
) -> Vec<Result<f64, MarketError>> {
    candidates
        .par_iter()
        .map(|&cand| {
            let res = clear_market(instance, &with_strategy(strategies, i, cand))?;
            res.require_optimal()?;
            Ok(player_profit(&res, instance, i))
        })
        .collect()
}

/// Profits within this relative distance of the best count as ties.
pub const TIE_REL_TOL: f64 = 1e-12;

/// Best grid response of player `i` to the others' `strategies`; ties, up to
/// [`TIE_REL_TOL`], go to the lowest grid index.
pub fn best_response(
    instance: &MarketInstance,
    context: &RssContext,
    strategies: &[Strategy],
    i: usize,
    n_pts: usize,
) -> Result<BestResponse, NashError> {
    let candidates = context.candidates(i, n_pts)?;
    let profits = candidate_profits(instance, strategies, i, &candidates);
    let max = profits.iter().filter_map(|p| p.as_ref().ok()).copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = max - TIE_REL_TOL * max.abs().max(1.0);
    let mut last_err = None;
    for (index, (cand, p)) in candidates.iter().zip(profits).enumerate() {
        match p {
            Ok(p) if p >= floor => return Ok(BestResponse { strategy: *cand, index, profit: p }),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    Err(NashError::NoFeasiblePoint { player: i, detail: last_err.map_or_else(String::new, |e| e.to_string()) })
}

fn check_profile(instance: &MarketInstance, strategies: &[Strategy]) -> Result<(), NashError> {
    if strategies.len() != instance.n_players() {
        return Err(NashError::Dimension { expected: instance.n_players(), got: strategies.len() });
    }
    Ok(())
}

/// Every player best-responds to the same input profile.
pub fn jacobi_update(
    instance: &MarketInstance,
    context: &RssContext,
    strategies: &[Strategy],
    n_pts: usize,
) -> Result<Vec<Strategy>, NashError> {
    check_profile(instance, strategies)?;
    (0..instance.n_players()).into_par_iter().map(|i| best_response(instance, context, strategies, i, n_pts).map(|b| b.strategy)).collect()
}

/// Players best-respond one after another in `order`, each seeing the
/// updates made earlier in the sweep.
pub fn gauss_seidel_update(
    instance: &MarketInstance,
    context: &RssContext,
    strategies: &[Strategy],
    n_pts: usize,
    order: &[usize],
) -> Result<Vec<Strategy>, NashError> {
    check_profile(instance, strategies)?;
    let mut current = strategies.to_vec();
    for &i in order {
        current[i] = best_response(instance, context, &current, i, n_pts)?.strategy;
    }
    Ok(current)
}

/// Largest profit gain any single player can get by moving to another grid
/// point of its own segment, holding the others fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub gains: Vec<f64>,
}

impl Audit {
    pub fn max_gain(&self) -> f64 {
        self.gains.iter().copied().fold(0.0, f64::max)
    }

    /// No player improves by more than `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_gain() <= tol
    }
}

pub fn audit(instance: &MarketInstance, context: &RssContext, strategies: &[Strategy], n_pts: usize) -> Result<Audit, NashError> {
    check_profile(instance, strategies)?;
    let base = clear_market(instance, strategies)?;
    base.require_optimal()?;
    let gains = (0..instance.n_players())
        .map(|i| {
            let current = player_profit(&base, instance, i);
            let candidates = context.candidates(i, n_pts)?;
            let gain = candidate_profits(instance, strategies, i, &candidates)
                .into_iter()
                .filter_map(Result::ok)
                .map(|p| p - current)
                .fold(0.0, f64::max);
            Ok(gain)
        })
        .collect::<Result<Vec<_>, NashError>>()?;
    Ok(Audit { gains })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub strategies: Vec<Strategy>,
    pub profits: Vec<f64>,
    pub converged: bool,
    pub cycles_used: usize,
    /// Profile after each cycle; the first entry is the starting profile.
    pub trace: Vec<Vec<Strategy>>,
    pub clearing: ClearingResult,
    /// Grid-deviation audit of the final profile.
    pub audit: Audit,
    /// Cycles spent in the presolve stage.
    pub presolve_cycles: usize,
}

/// Truthful bids `(c, b)`, the last point of every segment.
pub fn default_initial_profile(context: &RssContext) -> Vec<Strategy> {
    context.costs.iter().map(|c| Strategy::new(c.c, c.b)).collect()
}

pub fn find_equilibrium(
    instance: &MarketInstance,
    context: &RssContext,
    initial: &[Strategy],
    config: &GridConfig,
) -> Result<EquilibriumReport, NashError> {
    config.validate()?;
    check_profile(instance, initial)?;
    let mut start = initial.to_vec();
    let mut presolve_cycles = 0;
    if let Some(coarse) = &config.presolve {
        let pre = find_equilibrium(instance, context, initial, coarse)?;
        presolve_cycles = pre.cycles_used + pre.presolve_cycles;
        start = pre.strategies;
    }
    let order: Vec<usize> = (0..instance.n_players()).collect();
    let mut current = start.clone();
    let mut trace = vec![start];
    let mut converged = false;
    let mut cycles_used = 0;
    for _ in 0..config.max_cycles {
        let next = match config.schedule {
            Schedule::Jacobi => jacobi_update(instance, context, &current, config.n_pts)?,
            Schedule::GaussSeidel => gauss_seidel_update(instance, context, &current, config.n_pts, &order)?,
        };
        cycles_used += 1;
        let repeated = next.iter().zip(&current).all(|(a, b)| a.m == b.m);
        let step = next.iter().zip(&current).map(|(a, b)| (a.m - b.m).powi(2)).sum::<f64>().sqrt();
        trace.push(next.clone());
        current = next;
        if repeated || step < config.tol_ne {
            converged = true;
            break;
        }
    }
    let clearing = clear_market(instance, &current)?;
    clearing.require_optimal()?;
    let audit = audit(instance, context, &current, config.n_pts)?;
    Ok(EquilibriumReport {
        profits: all_profits(&clearing, instance),
        strategies: current,
        converged,
        cycles_used,
        trace,
        clearing,
        audit,
        presolve_cycles,
    })
}
