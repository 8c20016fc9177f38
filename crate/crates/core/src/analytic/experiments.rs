//! Synthetic single-zone experiments: price ratio of the intercept
//! equilibrium against truthful bidding, the profit landscape of one player,
//! and equilibrium price growth as slopes are scaled up.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{clear_simplified, profit, solve_a_plus, AnalyticError, Cost};
use crate::market::{self, assemble_polytope, MarketError, MarketInstance, Player, Strategy};

/// Six-player instance used for the landscape and price-growth experiments.
pub const SIX_PLAYER_C: [f64; 6] = [2.65, 1.5, 2.0, 1.8, 2.2, 2.1];
pub const SIX_PLAYER_B: [f64; 6] = [0.5, 2.0, 1.0, 1.1, 0.6, 1.0];
/// Demand for the six-player instance. At `d ≤ 2` the second player is
/// priced out at `(c, a⁺(c))`; `d = 3` keeps every player active.
pub const SIX_PLAYER_DEMAND: f64 = 3.0;

pub fn six_player_costs() -> Vec<Cost> {
    super::costs_from(&SIX_PLAYER_C, &SIX_PLAYER_B)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRatioConfig {
    pub n_samples: usize,
    pub n_players: usize,
    pub demand: f64,
    pub c_range: (f64, f64),
    pub b_range: (f64, f64),
    pub seed: u64,
}

impl Default for PriceRatioConfig {
    fn default() -> Self {
        PriceRatioConfig { n_samples: 10_000, n_players: 5, demand: 1.0, c_range: (1.0, 10.0), b_range: (0.5, 2.0), seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSample {
    /// Price under truthful bids.
    pub v0: f64,
    /// Price at `m = c`, `a = a⁺(c)`.
    pub v_star: f64,
    pub ratio: f64,
    /// Some player is inactive at `(c, a⁺)`.
    pub active_set_violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRatioResult {
    pub samples: Vec<RatioSample>,
    pub mean: f64,
    pub frac_above_one: f64,
}

pub fn price_ratio_experiment(cfg: &PriceRatioConfig) -> Result<PriceRatioResult, AnalyticError> {
    if cfg.n_players < 2 {
        return Err(AnalyticError::TooFewPlayers(cfg.n_players));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws: Vec<Vec<Cost>> = (0..cfg.n_samples)
        .map(|_| {
            (0..cfg.n_players)
                .map(|_| {
                    let c = rng.random_range(cfg.c_range.0..=cfg.c_range.1);
                    let b = rng.random_range(cfg.b_range.0..=cfg.b_range.1);
                    Cost::new(c, b)
                })
                .collect()
        })
        .collect();
    let samples = draws.par_iter().map(|costs| ratio_sample(costs, cfg.demand)).collect::<Result<Vec<_>, _>>()?;
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|s| s.ratio).sum::<f64>() / n;
    let frac_above_one = samples.iter().filter(|s| s.ratio > 1.0).count() as f64 / n;
    Ok(PriceRatioResult { samples, mean, frac_above_one })
}

fn ratio_sample(costs: &[Cost], demand: f64) -> Result<RatioSample, AnalyticError> {
    let truthful: Vec<Strategy> = costs.iter().map(|c| Strategy::new(c.c, c.b)).collect();
    let v0 = clear_simplified(&truthful, demand).v;
    let m: Vec<f64> = costs.iter().map(|c| c.c).collect();
    let a = solve_a_plus(costs, &m, demand)?;
    let eq: Vec<Strategy> = m.iter().zip(&a).map(|(&m, &a)| Strategy::new(m, a)).collect();
    let sol = clear_simplified(&eq, demand);
    Ok(RatioSample { v0, v_star: sol.v, ratio: sol.v / v0, active_set_violated: sol.active.len() != costs.len() })
}

/// Equal-width histogram `(lo, hi, count)` of `values` over their range.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts.into_iter().enumerate().map(|(k, n)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapePoint {
    pub m: f64,
    pub a: f64,
    pub x: f64,
    pub profit: f64,
}

/// Profit of `player` over a `(m, a)` grid while the others bid
/// `m_j = c_j`, `a_j = a⁺_j(c)`, with `a⁺` solved over all players.
pub fn profit_landscape(
    costs: &[Cost],
    demand: f64,
    player: usize,
    m_grid: &[f64],
    a_grid: &[f64],
) -> Result<Vec<LandscapePoint>, AnalyticError> {
    if player >= costs.len() {
        return Err(AnalyticError::Dimension { expected: costs.len(), got: player + 1 });
    }
    let m: Vec<f64> = costs.iter().map(|c| c.c).collect();
    let a = solve_a_plus(costs, &m, demand)?;
    let base: Vec<Strategy> = m.iter().zip(&a).map(|(&m, &a)| Strategy::new(m, a)).collect();
    let mut out = Vec::with_capacity(m_grid.len() * a_grid.len());
    for &mi in m_grid {
        for &ai in a_grid {
            let mut s = base.clone();
            s[player] = Strategy::new(mi, ai);
            let sol = clear_simplified(&s, demand);
            let x = sol.x[player];
            out.push(LandscapePoint { m: mi, a: ai, x, profit: profit(sol.v, x, costs[player]) });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrowth {
    pub k: Vec<f64>,
    /// Price at `(k c, a⁺(k c))`.
    pub unperturbed: Vec<f64>,
    /// Price when every player but the first scales its strategy by
    /// `1 − f_m`.
    pub perturbed: Vec<f64>,
    /// Demand-weighted mean zonal price of the same strategies cleared on a
    /// constrained instance.
    pub constrained: Option<Vec<f64>>,
}

pub fn price_growth_experiment(
    costs: &[Cost],
    demand: f64,
    k_grid: &[f64],
    f_m: f64,
    constrained: Option<&MarketInstance>,
) -> Result<PriceGrowth, GrowthError> {
    if let Some(inst) = constrained {
        if inst.n_players() != costs.len() {
            return Err(GrowthError::Analytic(AnalyticError::Dimension { expected: costs.len(), got: inst.n_players() }));
        }
    }
    let mut out = PriceGrowth {
        k: k_grid.to_vec(),
        unperturbed: Vec::with_capacity(k_grid.len()),
        perturbed: Vec::with_capacity(k_grid.len()),
        constrained: constrained.map(|_| Vec::with_capacity(k_grid.len())),
    };
    for &k in k_grid {
        let m: Vec<f64> = costs.iter().map(|c| k * c.c).collect();
        let a = solve_a_plus(costs, &m, demand)?;
        let eq: Vec<Strategy> = m.iter().zip(&a).map(|(&m, &a)| Strategy::new(m, a)).collect();
        out.unperturbed.push(clear_simplified(&eq, demand).v);
        let tilted: Vec<Strategy> =
            eq.iter().enumerate().map(|(i, s)| if i == 0 { *s } else { Strategy::new((1.0 - f_m) * s.m, (1.0 - f_m) * s.a) }).collect();
        out.perturbed.push(clear_simplified(&tilted, demand).v);
        if let (Some(inst), Some(series)) = (constrained, out.constrained.as_mut()) {
            let res = market::clear_market(inst, &eq)?;
            res.require_optimal()?;
            series.push(demand_weighted_price(inst, &res.prices()?));
        }
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum GrowthError {
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

pub fn demand_weighted_price(inst: &MarketInstance, prices: &[f64]) -> f64 {
    let d = inst.total_demand();
    inst.zonal_demand.iter().zip(prices).map(|(dz, v)| dz * v).sum::<f64>() / d
}

/// Three-zone variant of a six-player market: consecutive pairs of players
/// share a zone, demand is split evenly, capacities are finite and two
/// lines couple neighbouring zones.
pub fn constrained_six_player(costs: &[Cost], demand: f64) -> Result<MarketInstance, MarketError> {
    let n = costs.len();
    let zones = n.div_ceil(2);
    let players: Vec<Player> = costs.iter().enumerate().map(|(i, c)| Player::new(i / 2, c.c, c.b, 0.35 * demand)).collect();
    let zonal_demand = vec![demand / zones as f64; zones];
    let lines = zones.saturating_sub(1);
    let mut ptdf = DMatrix::zeros(lines, zones);
    for l in 0..lines {
        ptdf[(l, l)] = 0.5;
        ptdf[(l, l + 1)] = -0.5;
    }
    let margin = 0.05 * demand;
    let network = assemble_polytope(&ptdf, &vec![-margin; lines], &vec![margin; lines], &zonal_demand, 0.6)?;
    MarketInstance::new(players, zonal_demand, network)
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_players_give_single_bin() {
        let cfg = PriceRatioConfig { n_samples: 50, c_range: (3.0, 3.0), b_range: (1.0, 1.0), ..Default::default() };
        let r = price_ratio_experiment(&cfg).unwrap();
        let ratios: Vec<f64> = r.samples.iter().map(|s| s.ratio).collect();
        assert_eq!(histogram(&ratios, 20).len(), 1);
    }

    #[test]
    fn base_case_matches_equilibrium_price() {
        let costs = six_player_costs();
        let d = SIX_PLAYER_DEMAND;
        let g = price_growth_experiment(&costs, d, &[1.0], 0.0, None).unwrap();
        let m: Vec<f64> = costs.iter().map(|c| c.c).collect();
        let a = solve_a_plus(&costs, &m, d).unwrap();
        let s: Vec<Strategy> = m.iter().zip(&a).map(|(&m, &a)| Strategy::new(m, a)).collect();
        assert_eq!(g.unperturbed[0], clear_simplified(&s, d).v);
        assert_eq!(g.perturbed[0], g.unperturbed[0]);
    }

    #[test]
    fn linear_fit_of_exact_line() {
        let (s, i, r2) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
