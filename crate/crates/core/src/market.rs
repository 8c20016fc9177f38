//! One-hour zonal market clearing.
//!
//! Players submit linear asks `λ_i(x) = m_i x + a_i`. The clearing problem
//! minimises the integrated ask cost
//!
//! ```txt
//!     min  ½ xᵀ D_m x + aᵀx
//!     s.t. M_p E x ≤ b_p,  0 ≤ x ≤ Q,  1ᵀx = d
//! ```
//!
//! where `E` maps players to their zones, so `y = E x` is zonal production.
//! The price of zone `z` is the largest marginal ask among its players with
//! positive allocation.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::qp::{self, ConstraintId, Cqp, QpError, SolveStatus};

/// Allocations at or below `ACTIVITY_REL_EPS · d` count as inactive.
pub const ACTIVITY_REL_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("player {index}: {reason}")]
    InvalidPlayer { index: usize, reason: String },
    #[error("strategy of player {index}: slope m = {m} must be positive and finite")]
    InvalidStrategy { index: usize, m: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid network data: {0}")]
    Network(String),
    #[error("total demand {0} must be positive")]
    NonPositiveDemand(f64),
    #[error("zone {0} has no active player, its price is undefined")]
    UndefinedPrice(usize),
    #[error("clearing is infeasible: {constraint} violated by {violation:e}")]
    Infeasible { constraint: String, violation: f64 },
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// A producer with marginal cost `c x + b` and capacity `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Player {
    pub zone: usize,
    pub c: f64,
    pub b: f64,
    pub q: f64,
}

impl Player {
    pub fn new(zone: usize, c: f64, b: f64, q: f64) -> Self {
        Player { zone, c, b, q }
    }

    pub fn marginal_cost(&self, x: f64) -> f64 {
        self.c * x + self.b
    }

    pub fn truthful(&self) -> Strategy {
        Strategy { m: self.c, a: self.b }
    }
}

/// Linear ask `m x + a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub m: f64,
    pub a: f64,
}

impl Strategy {
    pub fn new(m: f64, a: f64) -> Self {
        Strategy { m, a }
    }

    pub fn ask(&self, x: f64) -> f64 {
        self.m * x + self.a
    }
}

pub type StrategyProfile = Vec<Strategy>;

pub fn truthful_profile(players: &[Player]) -> StrategyProfile {
    players.iter().map(Player::truthful).collect()
}

/// Bounds `lo_z ≤ y_z ≤ hi_z` on zonal production.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Network constraints `M_p y ≤ b_p` on zonal production, plus optional
/// zone boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPolytope {
    pub m_p: DMatrix<f64>,
    pub b_p: Vec<f64>,
    pub zone_box: Option<ZoneBox>,
}

impl NetworkPolytope {
    /// No network rows and no zone boxes: zones are a copper plate.
    pub fn unconstrained(n_zones: usize) -> Self {
        NetworkPolytope { m_p: DMatrix::zeros(0, n_zones), b_p: Vec::new(), zone_box: None }
    }

    pub fn n_zones(&self) -> usize {
        self.m_p.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.m_p.nrows() + self.zone_box.as_ref().map_or(0, |zb| 2 * zb.lo.len())
    }
}

/// Build the polytope of flow-based constraints `r ≤ PTDF (y − d^Z) ≤ R`
/// together with zone boxes `(1 − Δ) d_z ≤ y_z ≤ (1 + Δ) d_z`.
///
/// `ptdf` has one row per critical branch and one column per zone.
pub fn assemble_polytope(
    ptdf: &DMatrix<f64>,
    r: &[f64],
    big_r: &[f64],
    zonal_demand: &[f64],
    delta_max: f64,
) -> Result<NetworkPolytope, MarketError> {
    let (rows, zones) = ptdf.shape();
    if r.len() != rows || big_r.len() != rows {
        return Err(MarketError::Dimension(format!("ptdf has {rows} rows but margins have {} and {} entries", r.len(), big_r.len())));
    }
    if zonal_demand.len() != zones {
        return Err(MarketError::Dimension(format!("ptdf has {zones} zone columns but demand has {} entries", zonal_demand.len())));
    }
    if !(delta_max > 0.0 && delta_max < 1.0) {
        return Err(MarketError::Network(format!("delta_max = {delta_max} must lie in (0, 1)")));
    }
    for k in 0..rows {
        if !(r[k] <= big_r[k]) {
            return Err(MarketError::Network(format!("row {k}: lower margin {} exceeds upper {}", r[k], big_r[k])));
        }
    }
    let shift: Vec<f64> = (0..rows).map(|k| (0..zones).map(|z| ptdf[(k, z)] * zonal_demand[z]).sum()).collect();
    let mut m_p = DMatrix::zeros(2 * rows, zones);
    m_p.view_mut((0, 0), (rows, zones)).copy_from(&(-ptdf));
    m_p.view_mut((rows, 0), (rows, zones)).copy_from(ptdf);
    let mut b_p = Vec::with_capacity(2 * rows);
    b_p.extend((0..rows).map(|k| -r[k] - shift[k]));
    b_p.extend((0..rows).map(|k| big_r[k] + shift[k]));
    let zone_box = ZoneBox {
        lo: zonal_demand.iter().map(|d| (1.0 - delta_max) * d).collect(),
        hi: zonal_demand.iter().map(|d| (1.0 + delta_max) * d).collect(),
    };
    Ok(NetworkPolytope { m_p, b_p, zone_box: Some(zone_box) })
}

/// Everything needed to clear one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    pub players: Vec<Player>,
    pub zonal_demand: Vec<f64>,
    pub network: NetworkPolytope,
}

impl MarketInstance {
    pub fn new(players: Vec<Player>, zonal_demand: Vec<f64>, network: NetworkPolytope) -> Result<Self, MarketError> {
        let inst = MarketInstance { players, zonal_demand, network };
        inst.validate()?;
        Ok(inst)
    }

    /// Single zone, no network rows.
    pub fn single_zone(players: Vec<Player>, demand: f64) -> Result<Self, MarketError> {
        Self::new(players, vec![demand], NetworkPolytope::unconstrained(1))
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let nz = self.zonal_demand.len();
        if self.network.n_zones() != nz {
            return Err(MarketError::Dimension(format!("network has {} zone columns, demand has {nz} zones", self.network.n_zones())));
        }
        if self.network.b_p.len() != self.network.m_p.nrows() {
            return Err(MarketError::Dimension("network rhs length differs from row count".into()));
        }
        if let Some(zb) = &self.network.zone_box {
            if zb.lo.len() != nz || zb.hi.len() != nz {
                return Err(MarketError::Dimension("zone box length differs from zone count".into()));
            }
            if zb.lo.iter().chain(&zb.hi).any(|v| !v.is_finite()) {
                return Err(MarketError::Network("zone box bounds must be finite".into()));
            }
        }
        for (index, p) in self.players.iter().enumerate() {
            let bad = |reason: String| Err(MarketError::InvalidPlayer { index, reason });
            if p.zone >= nz {
                return bad(format!("zone {} out of range ({nz} zones)", p.zone));
            }
            if !(p.c > 0.0) || !p.c.is_finite() {
                return bad(format!("cost slope c = {} must be positive", p.c));
            }
            if !p.b.is_finite() {
                return bad(format!("cost intercept b = {} is not finite", p.b));
            }
            if !(p.q >= 0.0) {
                return bad(format!("capacity Q = {} must be nonnegative", p.q));
            }
        }
        let d = self.total_demand();
        if !(d > 0.0) {
            return Err(MarketError::NonPositiveDemand(d));
        }
        Ok(())
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn n_zones(&self) -> usize {
        self.zonal_demand.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.zonal_demand.iter().sum()
    }

    pub fn activity_eps(&self) -> f64 {
        ACTIVITY_REL_EPS * self.total_demand()
    }

    /// Zone incidence matrix `E` (zones × players).
    pub fn zone_map(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n_zones(), self.n_players());
        for (i, p) in self.players.iter().enumerate() {
            e[(p.zone, i)] = 1.0;
        }
        e
    }

    pub fn zonal_production(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_zones()];
        for (p, xi) in self.players.iter().zip(x) {
            y[p.zone] += xi;
        }
        y
    }

    /// Returns a copy where every player's costs are multiplied by `kappa`.
    pub fn with_scaled_costs(&self, kappa: f64) -> MarketInstance {
        let mut out = self.clone();
        for p in &mut out.players {
            p.c *= kappa;
            p.b *= kappa;
        }
        out
    }

    /// Describes constraint `c` of the problem built by [`build_swm`].
    pub fn describe_constraint(&self, c: ConstraintId) -> String {
        let net_rows = self.network.m_p.nrows();
        match c {
            ConstraintId::Equality => "demand balance".to_string(),
            ConstraintId::Row(k) if k < net_rows => format!("network row {k}"),
            ConstraintId::Row(k) => {
                let j = k - net_rows;
                let side = if j % 2 == 0 { "upper" } else { "lower" };
                format!("{side} production box of zone {}", j / 2)
            }
            ConstraintId::Lower(i) => format!("nonnegativity of player {i}"),
            ConstraintId::Upper(i) => format!("capacity of player {i}"),
        }
    }
}

fn check_strategies(instance: &MarketInstance, strategies: &[Strategy]) -> Result<(), MarketError> {
    if strategies.len() != instance.n_players() {
        return Err(MarketError::Dimension(format!("{} strategies for {} players", strategies.len(), instance.n_players())));
    }
    for (index, s) in strategies.iter().enumerate() {
        if !(s.m > 0.0) || !s.m.is_finite() {
            return Err(MarketError::InvalidStrategy { index, m: s.m });
        }
        if !s.a.is_finite() {
            return Err(MarketError::Dimension(format!("intercept of player {index} is not finite")));
        }
    }
    Ok(())
}

/// Assemble the clearing QP. Inequality rows are the network rows
/// `M_p E x ≤ b_p`, followed, when zone boxes are present, by the pair
/// `y_z ≤ hi_z`, `−y_z ≤ −lo_z` for each zone in order.
pub fn build_swm(instance: &MarketInstance, strategies: &[Strategy]) -> Result<Cqp, MarketError> {
    instance.validate()?;
    check_strategies(instance, strategies)?;
    let n = instance.n_players();
    let e = instance.zone_map();
    let net = &instance.network;
    let mut rows = &net.m_p * &e;
    let mut rhs = net.b_p.clone();
    if let Some(zb) = &net.zone_box {
        let nz = instance.n_zones();
        let base = rows.nrows();
        rows = rows.resize_vertically(base + 2 * nz, 0.0);
        for z in 0..nz {
            for i in 0..n {
                rows[(base + 2 * z, i)] = e[(z, i)];
                rows[(base + 2 * z + 1, i)] = -e[(z, i)];
            }
            rhs.push(zb.hi[z]);
            rhs.push(-zb.lo[z]);
        }
    }
    let qp = Cqp::new(strategies.iter().map(|s| s.m).collect(), strategies.iter().map(|s| s.a).collect())?
        .with_bounds(vec![0.0; n], instance.players.iter().map(|p| p.q).collect())?
        .with_inequalities(rows, rhs)?
        .with_equality(vec![1.0; n], instance.total_demand())?;
    Ok(qp)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClearingStatus {
    Optimal,
    Infeasible { constraint: String, violation: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingResult {
    pub x: Vec<f64>,
    /// Zonal production `E x`.
    pub y: Vec<f64>,
    /// Zonal prices; `None` where no player in the zone is active.
    pub v: Vec<Option<f64>>,
    /// Price-setting player per zone (lowest index among ties).
    pub price_setters: Vec<Option<usize>>,
    pub status: ClearingStatus,
    /// Integrated ask cost `½ xᵀ D_m x + aᵀx`.
    pub objective: f64,
    pub kkt_residual: f64,
    /// Final active set, usable as a hint for nearby clearings.
    pub active_set: Vec<ConstraintId>,
}

impl ClearingResult {
    pub fn is_optimal(&self) -> bool {
        self.status == ClearingStatus::Optimal
    }

    pub fn price(&self, zone: usize) -> Result<f64, MarketError> {
        self.v[zone].ok_or(MarketError::UndefinedPrice(zone))
    }

    /// Prices with undefined zones reported as an error.
    pub fn prices(&self) -> Result<Vec<f64>, MarketError> {
        (0..self.v.len()).map(|z| self.price(z)).collect()
    }

    /// Errors out unless the clearing is optimal.
    pub fn require_optimal(&self) -> Result<(), MarketError> {
        match &self.status {
            ClearingStatus::Optimal => Ok(()),
            ClearingStatus::Infeasible { constraint, violation } => {
                Err(MarketError::Infeasible { constraint: constraint.clone(), violation: *violation })
            }
        }
    }
}

pub fn clear_market(instance: &MarketInstance, strategies: &[Strategy]) -> Result<ClearingResult, MarketError> {
    clear_market_with_hint(instance, strategies, &[])
}

/// As [`clear_market`], passing `hint` to the QP solver.
pub fn clear_market_with_hint(
    instance: &MarketInstance,
    strategies: &[Strategy],
    hint: &[ConstraintId],
) -> Result<ClearingResult, MarketError> {
    let problem = build_swm(instance, strategies)?;
    let sol = qp::solve_cqp_with_hint(&problem, qp::DEFAULT_TOL, hint)?;
    let nz = instance.n_zones();
    if let SolveStatus::Infeasible { constraint, violation } = sol.status {
        return Ok(ClearingResult {
            y: instance.zonal_production(&sol.x),
            x: sol.x,
            v: vec![None; nz],
            price_setters: vec![None; nz],
            status: ClearingStatus::Infeasible { constraint: instance.describe_constraint(constraint), violation },
            objective: f64::NAN,
            kkt_residual: sol.kkt_residual,
            active_set: sol.active_set,
        });
    }
    let x: Vec<f64> = sol.x.iter().zip(&instance.players).map(|(xi, p)| xi.clamp(0.0, p.q)).collect();
    let price_setters: Vec<Option<usize>> = (0..nz).map(|z| price_setter(&x, instance, strategies, z)).collect();
    let v = price_setters.iter().map(|k| k.map(|k| strategies[k].ask(x[k]))).collect();
    Ok(ClearingResult {
        y: instance.zonal_production(&x),
        objective: problem.objective(&x),
        x,
        v,
        price_setters,
        status: ClearingStatus::Optimal,
        kkt_residual: sol.kkt_residual,
        active_set: sol.active_set,
    })
}

/// Active player of `zone` with the largest marginal ask at `x`.
pub fn price_setter(x: &[f64], instance: &MarketInstance, strategies: &[Strategy], zone: usize) -> Option<usize> {
    let eps = instance.activity_eps();
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in instance.players.iter().enumerate() {
        if p.zone != zone || x[k] <= eps {
            continue;
        }
        let ask = strategies[k].ask(x[k]);
        if best.is_none_or(|(_, b)| ask > b) {
            best = Some((k, ask));
        }
    }
    best.map(|(k, _)| k)
}

/// Zonal price: the largest marginal ask among active players of `zone`.
pub fn zonal_price(result: &ClearingResult, instance: &MarketInstance, strategies: &[Strategy], zone: usize) -> Result<f64, MarketError> {
    result.require_optimal()?;
    price_setter(&result.x, instance, strategies, zone).map(|k| strategies[k].ask(result.x[k])).ok_or(MarketError::UndefinedPrice(zone))
}

/// Profit `v x − ½ c x² − b x` of player `i` at its zone's price. Players
/// in a zone without a defined price produce nothing and earn zero.
pub fn player_profit(result: &ClearingResult, instance: &MarketInstance, i: usize) -> f64 {
    let p = &instance.players[i];
    let xi = result.x[i];
    match result.v[p.zone] {
        Some(v) => v * xi - 0.5 * p.c * xi * xi - p.b * xi,
        None => 0.0,
    }
}

pub fn all_profits(result: &ClearingResult, instance: &MarketInstance) -> Vec<f64> {
    (0..instance.n_players()).map(|i| player_profit(result, instance, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_player(a2: f64, d: f64, q: f64) -> (MarketInstance, StrategyProfile) {
        let players = vec![Player::new(0, 1.0, 0.0, q), Player::new(0, 1.0, 0.0, q)];
        let inst = MarketInstance::single_zone(players, d).unwrap();
        (inst, vec![Strategy::new(1.0, 0.0), Strategy::new(1.0, a2)])
    }

    #[test]
    fn symmetric_split() {
        let (inst, s) = two_player(0.0, 2.0, 5.0);
        let r = clear_market(&inst, &s).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.v[0].unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn expensive_intercept_stays_out() {
        let (inst, s) = two_player(2.0, 1.0, 1e6);
        let r = clear_market(&inst, &s).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.x[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.v[0].unwrap(), 1.0, epsilon = 1e-9);
        assert_eq!(r.price_setters[0], Some(0));
    }

    #[test]
    fn empty_polytope_has_no_rows() {
        let (inst, s) = two_player(0.0, 2.0, 5.0);
        let qp = build_swm(&inst, &s).unwrap();
        assert_eq!(qp.n_rows(), 0);
        assert_eq!(qp.equality(), Some((&[1.0, 1.0][..], 2.0)));
    }

    #[test]
    fn non_positive_slope_rejected() {
        let (inst, _) = two_player(0.0, 2.0, 5.0);
        let err = build_swm(&inst, &[Strategy::new(1.0, 0.0), Strategy::new(0.0, 0.0)]).unwrap_err();
        assert_eq!(err, MarketError::InvalidStrategy { index: 1, m: 0.0 });
    }

    #[test]
    fn price_of_zone_without_active_player_is_undefined() {
        let players = vec![Player::new(0, 1.0, 0.0, 10.0), Player::new(1, 1.0, 0.0, 0.0)];
        let inst = MarketInstance::new(players, vec![1.0, 1.0], NetworkPolytope::unconstrained(2)).unwrap();
        let s = truthful_profile(&inst.players);
        let r = clear_market(&inst, &s).unwrap();
        assert_eq!(zonal_price(&r, &inst, &s, 1), Err(MarketError::UndefinedPrice(1)));
        assert_abs_diff_eq!(zonal_price(&r, &inst, &s, 0).unwrap(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn price_is_max_active_ask() {
        let players = vec![Player::new(0, 2.0, 1.0, 10.0), Player::new(0, 1.0, 0.0, 0.3)];
        let inst = MarketInstance::single_zone(players, 0.8).unwrap();
        let s = vec![Strategy::new(2.0, 1.0), Strategy::new(1.0, 0.0)];
        let r = clear_market(&inst, &s).unwrap();
        // player 1 saturates at 0.3 with ask 0.3, player 0 serves 0.5 at ask 2.0
        assert_abs_diff_eq!(r.x[1], 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(r.v[0].unwrap(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn profit_direct_evaluation() {
        let players = vec![Player::new(0, 1.0, 0.5, 10.0)];
        let inst = MarketInstance::single_zone(players, 1.0).unwrap();
        let result = ClearingResult {
            x: vec![1.0],
            y: vec![1.0],
            v: vec![Some(2.0)],
            price_setters: vec![Some(0)],
            status: ClearingStatus::Optimal,
            objective: 0.0,
            kkt_residual: 0.0,
            active_set: vec![],
        };
        assert_abs_diff_eq!(player_profit(&result, &inst, 0), 1.0, epsilon = 1e-12);
        let idle = ClearingResult { x: vec![0.0], ..result };
        assert_eq!(player_profit(&idle, &inst, 0), 0.0);
    }

    #[test]
    fn zero_ptdf_polytope_is_margin_only() {
        let ptdf = DMatrix::zeros(2, 3);
        let p = assemble_polytope(&ptdf, &[-5.0, -6.0], &[5.0, 7.0], &[10.0, 20.0, 30.0], 0.5).unwrap();
        assert_eq!(p.b_p, vec![5.0, 6.0, 5.0, 7.0]);
    }

    #[test]
    fn polytope_rejects_inverted_margins() {
        let ptdf = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert!(assemble_polytope(&ptdf, &[1.0], &[0.0], &[1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn zone_box_from_delta() {
        let ptdf = DMatrix::zeros(0, 1);
        let p = assemble_polytope(&ptdf, &[], &[], &[100.0], 0.6).unwrap();
        let zb = p.zone_box.unwrap();
        assert_abs_diff_eq!(zb.lo[0], 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(zb.hi[0], 160.0, epsilon = 1e-12);
    }

    #[test]
    fn single_line_polytope_keeps_demand_interior() {
        let ptdf = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let p = assemble_polytope(&ptdf, &[-100.0], &[100.0], &[50.0, 50.0], 0.5).unwrap();
        let y = [50.0, 50.0];
        for k in 0..2 {
            let lhs = p.m_p[(k, 0)] * y[0] + p.m_p[(k, 1)] * y[1];
            assert_abs_diff_eq!(p.b_p[k] - lhs, 100.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn infeasible_demand_is_flagged() {
        let players = vec![Player::new(0, 1.0, 0.0, 1.0)];
        let inst = MarketInstance::single_zone(players, 2.0).unwrap();
        let r = clear_market(&inst, &truthful_profile(&inst.players)).unwrap();
        assert!(!r.is_optimal());
        assert!(r.v.iter().all(Option::is_none));
    }
}
