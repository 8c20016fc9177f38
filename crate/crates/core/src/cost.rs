//! Per-player cost structures from representative production costs.
//!
//! A player of type `θ` with representative cost `k` and capacity `Q` asks
//!
//! ```txt
//!     λ(x) = k (1 − n f/(1 − f)) + n k/((1 − f) Q) · x = b + c x
//! ```
//!
//! so that `λ(f Q) = k` and `λ(Q) = (1 + n) k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::Player;

/// Lower bound on constructed slopes; keeps the clearing strictly convex.
pub const C_MIN: f64 = 1e-6;

/// US dollars to euros for the coal series.
pub const USD_TO_EUR: f64 = 0.89;
/// Energy content of coal, MWh per ton.
pub const MWH_PER_TON: f64 = 20.0 / 11.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("capacity {0} must be positive")]
    NonPositiveCapacity(f64),
    #[error("n_theta = {0} must lie in [0, 1]")]
    BadSteepness(f64),
    #[error("f_theta = {0} must lie in (0, 1)")]
    BadAnchor(f64),
    #[error("representative cost {0} must be finite")]
    BadCost(f64),
    #[error("intercept {b} < 0 from k = {k}, n = {n}, f = {f}")]
    NegativeIntercept { k: f64, n: f64, f: f64, b: f64 },
    #[error("scale {value} for zone {zone} must be positive")]
    BadScale { zone: usize, value: f64 },
    #[error("{expected} zones but {got} scales")]
    ScaleDimension { expected: usize, got: usize },
    #[error("unknown plant type '{0}'")]
    UnknownType(String),
    #[error("no representative cost for {theta} in zone {zone} (series '{series}')")]
    MissingSeries { theta: PlantType, zone: String, series: String },
}

/// Production types. The split types are merged after thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantType {
    Gas,
    Coal,
    HardCoal,
    BrownCoal,
    Nuclear,
    Solar,
    Wind,
    WindOnshore,
    WindOffshore,
    HydroStorage,
    HydroPumpedStorage,
    HydroReservoir,
    HydroRunOfRiver,
}

impl PlantType {
    pub const ALL: [PlantType; 13] = [
        PlantType::Gas,
        PlantType::Coal,
        PlantType::HardCoal,
        PlantType::BrownCoal,
        PlantType::Nuclear,
        PlantType::Solar,
        PlantType::Wind,
        PlantType::WindOnshore,
        PlantType::WindOffshore,
        PlantType::HydroStorage,
        PlantType::HydroPumpedStorage,
        PlantType::HydroReservoir,
        PlantType::HydroRunOfRiver,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlantType::Gas => "gas",
            PlantType::Coal => "coal",
            PlantType::HardCoal => "hard_coal",
            PlantType::BrownCoal => "brown_coal",
            PlantType::Nuclear => "nuclear",
            PlantType::Solar => "solar",
            PlantType::Wind => "wind",
            PlantType::WindOnshore => "wind_onshore",
            PlantType::WindOffshore => "wind_offshore",
            PlantType::HydroStorage => "hydro_storage",
            PlantType::HydroPumpedStorage => "hydro_pumped_storage",
            PlantType::HydroReservoir => "hydro_reservoir",
            PlantType::HydroRunOfRiver => "hydro_run_of_river",
        }
    }

    /// Type a split type is folded into.
    pub fn merged(self) -> PlantType {
        match self {
            PlantType::HardCoal | PlantType::BrownCoal => PlantType::Coal,
            PlantType::WindOnshore | PlantType::WindOffshore => PlantType::Wind,
            PlantType::HydroPumpedStorage | PlantType::HydroReservoir => PlantType::HydroStorage,
            t => t,
        }
    }

    /// Available capacity follows a forecast series rather than the installed
    /// capacity.
    pub fn is_variable(self) -> bool {
        matches!(self.merged(), PlantType::Wind | PlantType::Solar)
    }
}

impl fmt::Display for PlantType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantType {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        PlantType::ALL.into_iter().find(|t| t.name() == key).ok_or_else(|| CostError::UnknownType(s.to_string()))
    }
}

/// Where a type's representative cost comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSource {
    /// €/MWh.
    Constant(f64),
    /// Name of a price series, looked up per zone first (`name:zone`), then
    /// globally.
    Series(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeParams {
    pub theta: PlantType,
    pub n_theta: f64,
    pub f_theta: f64,
    pub k_source: KSource,
}

impl TypeParams {
    pub fn new(theta: PlantType, n_theta: f64, f_theta: f64, k_source: KSource) -> Result<Self, CostError> {
        check_shape(n_theta, f_theta)?;
        Ok(TypeParams { theta, n_theta, f_theta, k_source })
    }

    /// Default parameters per merged type.
    pub fn default_for(theta: PlantType) -> TypeParams {
        let (n, k) = match theta.merged() {
            PlantType::Gas => (0.2, KSource::Series("gas".into())),
            PlantType::Coal => (0.4, KSource::Series("coal".into())),
            PlantType::Nuclear => (0.8, KSource::Constant(13.8)),
            PlantType::Wind | PlantType::Solar => (0.05, KSource::Constant(0.5)),
            PlantType::HydroStorage => (0.2, KSource::Series("baseload".into())),
            PlantType::HydroRunOfRiver => (0.1, KSource::Constant(8.45)),
            _ => unreachable!("merged types are covered above"),
        };
        TypeParams { theta, n_theta: n, f_theta: 0.5, k_source: k }
    }

    pub fn cost(&self, k: f64, q: f64) -> Result<(f64, f64), CostError> {
        cost_from_k(k, self.n_theta, self.f_theta, q)
    }
}

fn check_shape(n_theta: f64, f_theta: f64) -> Result<(), CostError> {
    if !(0.0..=1.0).contains(&n_theta) {
        return Err(CostError::BadSteepness(n_theta));
    }
    if !(f_theta > 0.0 && f_theta < 1.0) {
        return Err(CostError::BadAnchor(f_theta));
    }
    Ok(())
}

/// `(c, b)` of the linear ask through `(f Q, k)` and `(Q, (1 + n) k)`; `c` is
/// clamped to [`C_MIN`].
pub fn cost_from_k(k: f64, n_theta: f64, f_theta: f64, q: f64) -> Result<(f64, f64), CostError> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(CostError::NonPositiveCapacity(q));
    }
    check_shape(n_theta, f_theta)?;
    if !k.is_finite() {
        return Err(CostError::BadCost(k));
    }
    let b = k * (1.0 - n_theta * f_theta / (1.0 - f_theta));
    if b < 0.0 {
        return Err(CostError::NegativeIntercept { k, n: n_theta, f: f_theta, b });
    }
    let c = n_theta * k / ((1.0 - f_theta) * q);
    Ok((c.max(C_MIN), b))
}

/// Coal price in $/ton to €/MWh.
pub fn coal_usd_per_ton_to_eur_per_mwh(p: f64) -> f64 {
    p * USD_TO_EUR / MWH_PER_TON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSelection {
    pub zone: usize,
    /// Retained (merged) types with their capacities, largest first.
    pub retained: Vec<(PlantType, f64)>,
    /// Fraction of the zone's capacity covered after merging.
    pub phi: f64,
    /// Number of types kept by the threshold rule, before merging.
    pub n_star: usize,
}

/// Keep the largest types until they cover `threshold` of the zone's
/// capacity (and at least `min_players` of them), then merge split types.
/// Merging folds in every member of a retained merged type, retained or not.
pub fn select_players(zone: usize, capacities: &[(PlantType, f64)], threshold: f64, min_players: usize) -> PlayerSelection {
    if capacities.is_empty() {
        return PlayerSelection { zone, retained: Vec::new(), phi: 0.0, n_star: 0 };
    }
    let mut sorted = capacities.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: f64 = sorted.iter().map(|e| e.1).sum();
    let coverage = |n: usize| if total > 0.0 { sorted[..n].iter().map(|e| e.1).sum::<f64>() / total } else { 1.0 };
    let avail = sorted.len();
    let floor = min_players.min(avail).max(1);
    let n_star = (floor..=avail).find(|&n| coverage(n) >= threshold).unwrap_or(avail);

    let kept: Vec<PlantType> = sorted[..n_star].iter().map(|e| e.0.merged()).collect();
    let mut retained: Vec<(PlantType, f64)> = Vec::new();
    for &(t, cap) in &sorted {
        let m = t.merged();
        if !kept.contains(&m) {
            continue;
        }
        match retained.iter_mut().find(|e| e.0 == m) {
            Some(e) => e.1 += cap,
            None => retained.push((m, cap)),
        }
    }
    retained.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let covered: f64 = retained.iter().map(|e| e.1).sum();
    let phi = if total > 0.0 { covered / total } else { 1.0 };
    PlayerSelection { zone, retained, phi, n_star }
}

/// `c'_i = s^c_z c_i`, `b'_i = s^b_z b_i` by the player's zone.
pub fn apply_scales(players: &[Player], s_c: &[f64], s_b: &[f64]) -> Result<Vec<Player>, CostError> {
    if s_c.len() != s_b.len() {
        return Err(CostError::ScaleDimension { expected: s_c.len(), got: s_b.len() });
    }
    for (zone, &value) in s_c.iter().chain(s_b).enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(CostError::BadScale { zone: zone % s_c.len(), value });
        }
    }
    players
        .iter()
        .map(|p| {
            if p.zone >= s_c.len() {
                return Err(CostError::ScaleDimension { expected: p.zone + 1, got: s_c.len() });
            }
            Ok(Player { c: s_c[p.zone] * p.c, b: s_b[p.zone] * p.b, ..*p })
        })
        .collect()
}
