//! Robust strategy selection.
//!
//! Each player's profit only grows when opponents raise their asks, so the
//! worst case is every player bidding its lowest safe ask `(½c, b)`. Under
//! price taking at the resulting zonal price `v`, the best worst-case
//! responses form the segment
//!
//! ```txt
//!     a = v − (v − b)/c · m,    ½c ≤ m ≤ c
//! ```
//!
//! which joins `(½c, ½v + ½b)` to the truthful point `(c, b)`.

use thiserror::Error;

use crate::analytic::{clear_simplified, Cost};
use crate::market::{clear_market, MarketError, MarketInstance, Strategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RssError {
    #[error("player {i}: slope {m} outside [{lo}, {hi}]")]
    SlopeOutOfRange { i: usize, m: f64, lo: f64, hi: f64 },
    #[error("player {0} has an empty strategy segment; use the fallback strategy")]
    EmptySet(usize),
    #[error("player {0} has a non-empty strategy segment, the fallback does not apply")]
    NotEmpty(usize),
    #[error("player index {0} out of range")]
    BadPlayer(usize),
    #[error("no intercept in [{lo}, {hi}] solves the stationarity condition for player {i}")]
    NoRoot { i: usize, lo: f64, hi: f64 },
    #[error(transparent)]
    Market(#[from] MarketError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RssFlag {
    /// `v > b`: a proper segment.
    ActiveSetNonempty,
    /// `v = b`: the segment collapses to `a = b`.
    DegenerateUnique,
    /// `v < b` or the zone has no worst-case price.
    Empty,
}

/// Worst-case zonal prices and per-player segment data for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RssContext {
    pub v_wcp: Vec<Option<f64>>,
    pub costs: Vec<Cost>,
    pub zones: Vec<usize>,
    pub flags: Vec<RssFlag>,
}

/// `v` and `b` count as equal within `1e-9 · max(1, |b|)`.
pub const DEGENERATE_REL_TOL: f64 = 1e-9;

/// Zonal prices of the clearing at `m = ½c`, `a = b`.
pub fn worst_case_price(instance: &MarketInstance) -> Result<Vec<Option<f64>>, MarketError> {
    let s: Vec<Strategy> = instance.players.iter().map(|p| Strategy::new(0.5 * p.c, p.b)).collect();
    let res = clear_market(instance, &s)?;
    res.require_optimal()?;
    Ok(res.v)
}

impl RssContext {
    pub fn new(instance: &MarketInstance) -> Result<Self, MarketError> {
        let v = worst_case_price(instance)?;
        Ok(Self::from_prices(instance, v))
    }

    pub fn from_prices(instance: &MarketInstance, v_wcp: Vec<Option<f64>>) -> Self {
        let costs: Vec<Cost> = instance.players.iter().map(|p| Cost::new(p.c, p.b)).collect();
        let zones: Vec<usize> = instance.players.iter().map(|p| p.zone).collect();
        let flags = costs.iter().zip(&zones).map(|(c, &z)| classify(v_wcp[z], c.b)).collect();
        RssContext { v_wcp, costs, zones, flags }
    }

    pub fn n_players(&self) -> usize {
        self.costs.len()
    }

    /// Worst-case price seen by player `i`.
    pub fn price_for(&self, i: usize) -> Option<f64> {
        self.v_wcp[self.zones[i]]
    }

    /// Intercept on the segment for slope `m`.
    pub fn intercept_for_slope(&self, i: usize, m: f64) -> Result<f64, RssError> {
        let cost = *self.costs.get(i).ok_or(RssError::BadPlayer(i))?;
        let (lo, hi) = (0.5 * cost.c, cost.c);
        let slack = 1e-12 * cost.c;
        if !(m >= lo - slack && m <= hi + slack) {
            return Err(RssError::SlopeOutOfRange { i, m, lo, hi });
        }
        match (self.flags[i], self.price_for(i)) {
            (RssFlag::Empty, _) | (_, None) => Err(RssError::EmptySet(i)),
            (RssFlag::DegenerateUnique, _) => Ok(cost.b),
            (RssFlag::ActiveSetNonempty, Some(v)) => Ok(cost.b + (v - cost.b) * (1.0 - m / cost.c)),
        }
    }

    pub fn strategy_for_slope(&self, i: usize, m: f64) -> Result<Strategy, RssError> {
        Ok(Strategy::new(m, self.intercept_for_slope(i, m)?))
    }

    /// Truthful bid `(c, b)` for players whose segment is empty.
    pub fn fallback_strategy(&self, i: usize) -> Result<Strategy, RssError> {
        let cost = *self.costs.get(i).ok_or(RssError::BadPlayer(i))?;
        if self.flags[i] != RssFlag::Empty {
            return Err(RssError::NotEmpty(i));
        }
        Ok(Strategy::new(cost.c, cost.b))
    }

    /// Candidate strategies of player `i` on `n_pts` equispaced slopes in
    /// `[½c, c]`, ending at the truthful point. Players with an empty
    /// segment get the fallback only.
    pub fn candidates(&self, i: usize, n_pts: usize) -> Result<Vec<Strategy>, RssError> {
        if self.flags[i] == RssFlag::Empty {
            return Ok(vec![self.fallback_strategy(i)?]);
        }
        slope_grid(self.costs[i].c, n_pts).into_iter().map(|m| self.strategy_for_slope(i, m)).collect()
    }
}

fn classify(v: Option<f64>, b: f64) -> RssFlag {
    match v {
        None => RssFlag::Empty,
        Some(v) if (v - b).abs() <= DEGENERATE_REL_TOL * b.abs().max(1.0) => RssFlag::DegenerateUnique,
        Some(v) if v > b => RssFlag::ActiveSetNonempty,
        Some(_) => RssFlag::Empty,
    }
}

/// `m(l) = ½c (1 + (l − 1)/(n − 1))` for `l = 1..n`; a single point `c` when
/// `n < 2`.
pub fn slope_grid(c: f64, n_pts: usize) -> Vec<f64> {
    if n_pts < 2 {
        return vec![c];
    }
    (0..n_pts).map(|l| if l + 1 == n_pts { c } else { 0.5 * c * (1.0 + l as f64 / (n_pts - 1) as f64) }).collect()
}

/// Intercept solving player `i`'s worst-case stationarity condition without
/// the price-taking simplification, in the single-zone unconstrained market
/// with opponents at `(½c, b)`:
///
/// ```txt
///     x_i − K2_i ((2 m_i − c_i) x_i + a_i − b_i) = 0
/// ```
///
/// with `x_i` and `K2_i` from the closed-form clearing. Solved by bisection
/// on `a_i ∈ [b_i, v₋ᵢ]`, where `v₋ᵢ` is the price without player `i`.
pub fn exact_wcp_curve(costs: &[Cost], i: usize, m_i: f64, demand: f64) -> Result<f64, RssError> {
    let cost = *costs.get(i).ok_or(RssError::BadPlayer(i))?;
    if !(m_i >= 0.5 * cost.c) {
        return Err(RssError::SlopeOutOfRange { i, m: m_i, lo: 0.5 * cost.c, hi: f64::INFINITY });
    }
    let mut s: Vec<Strategy> = costs.iter().map(|c| Strategy::new(0.5 * c.c, c.b)).collect();
    let g = |s: &mut Vec<Strategy>, a: f64| {
        s[i] = Strategy::new(m_i, a);
        let sol = clear_simplified(s, demand);
        let x = sol.x[i];
        let total: f64 = sol.active.iter().map(|&j| 1.0 / s[j].m).sum();
        let inv_m = 1.0 / m_i;
        // Inactive players see the price of the others; K2 as if joining.
        let s_minus = if x > 0.0 { total - inv_m } else { total };
        let k2 = s_minus / (m_i * (s_minus + inv_m));
        x - k2 * ((2.0 * m_i - cost.c) * x + a - cost.b)
    };
    let lo = cost.b;
    // Price set by the others alone; beyond it player i is priced out.
    let others: Vec<Strategy> = s.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, t)| *t).collect();
    if others.is_empty() {
        return Err(RssError::NoRoot { i, lo, hi: lo });
    }
    let hi = clear_simplified(&others, demand).v;
    if !(hi > lo) {
        return Err(RssError::NoRoot { i, lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    let (ga, gb) = (g(&mut s, a), g(&mut s, b));
    if ga.signum() == gb.signum() {
        return Err(RssError::NoRoot { i, lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if g(&mut s, mid).signum() == ga.signum() {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}
