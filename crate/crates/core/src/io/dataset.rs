//! Hourly input data and per-hour market construction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::InputError;
use crate::cost::{coal_usd_per_ton_to_eur_per_mwh, select_players, KSource, PlantType, PlayerSelection, TypeParams};
use crate::market::{assemble_polytope, MarketInstance, NetworkPolytope, Player};

/// File locations of one dataset. Optional files may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPaths {
    pub dir: PathBuf,
    pub demand: String,
    pub capacity: String,
    pub fuel: String,
    pub renewables: String,
    pub network: String,
    pub prices: String,
}

impl Default for DatasetPaths {
    fn default() -> Self {
        DatasetPaths {
            dir: PathBuf::from("."),
            demand: "demand.csv".into(),
            capacity: "capacity.csv".into(),
            fuel: "fuel.csv".into(),
            renewables: "renewables.csv".into(),
            network: "network.csv".into(),
            prices: "prices.csv".into(),
        }
    }
}

impl DatasetPaths {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        DatasetPaths { dir: dir.into(), ..Default::default() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// One flow-based constraint `lo ≤ ptdf · (y − d) ≤ hi` for one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRow {
    pub line: String,
    pub ptdf: Vec<f64>,
    pub ram_lo: f64,
    pub ram_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourlyDataset {
    pub hours: Vec<NaiveDateTime>,
    pub zones: Vec<String>,
    /// `demand[t][z]`, MW.
    pub demand: Vec<Vec<f64>>,
    /// Installed capacity per `(zone, type)`, MW.
    pub capacities: Vec<(usize, PlantType, f64)>,
    /// Hourly price series in €/MWh, keyed `name` or `name:zone`.
    pub fuel: BTreeMap<String, Vec<f64>>,
    /// Available capacity forecasts per `(zone, type)`, MW.
    pub renewables: BTreeMap<(usize, PlantType), Vec<f64>>,
    /// Constraint rows per hour; empty when no network file is given.
    pub network: Vec<Vec<NetworkRow>>,
    /// Observed zonal prices, if a price file is present.
    pub prices: Option<Vec<Vec<Option<f64>>>>,
}

impl HourlyDataset {
    pub fn n_hours(&self) -> usize {
        self.hours.len()
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn zone_index(&self, name: &str) -> Option<usize> {
        self.zones.iter().position(|z| z == name)
    }

    pub fn hour_of_day(&self) -> Vec<u32> {
        self.hours.iter().map(|h| h.hour()).collect()
    }
}

pub const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M";

pub fn format_hour(t: &NaiveDateTime) -> String {
    t.format(TIME_FORMAT).to_string()
}

pub fn parse_hour(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    /// Records with their 1-based line numbers.
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table, InputError> {
    let mut rdr =
        csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path).map_err(|e| InputError::io(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| InputError::io(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| InputError::io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { path: path.to_path_buf(), header, rows })
}

impl Table {
    fn err(&self, line: usize, msg: impl Into<String>) -> InputError {
        InputError::Schema { path: self.path.clone(), line, msg: msg.into() }
    }

    fn column(&self, name: &str) -> Result<usize, InputError> {
        self.header.iter().position(|h| h == name).ok_or_else(|| self.err(1, format!("missing column '{name}'")))
    }

    fn number(&self, line: usize, field: &str, col: &str) -> Result<f64, InputError> {
        let v: f64 = field.parse().map_err(|_| self.err(line, format!("column '{col}': '{field}' is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("column '{col}': non-finite value")));
        }
        Ok(v)
    }

    fn optional_number(&self, line: usize, field: &str, col: &str) -> Result<Option<f64>, InputError> {
        if field.is_empty() {
            Ok(None)
        } else {
            self.number(line, field, col).map(Some)
        }
    }
}

/// Checks that `times` advance by exactly one hour.
fn check_contiguous(table: &Table, times: &[(usize, NaiveDateTime)]) -> Result<(), InputError> {
    let mut gaps = Vec::new();
    for w in times.windows(2) {
        let ((_, a), (line, b)) = (w[0], w[1]);
        if b <= a {
            return Err(table.err(line, format!("timestamp {} does not follow {}", format_hour(&b), format_hour(&a))));
        }
        let mut t = a + Duration::hours(1);
        while t < b {
            gaps.push(format_hour(&t));
            t += Duration::hours(1);
        }
    }
    if !gaps.is_empty() {
        return Err(InputError::MissingHours { path: table.path.clone(), hours: gaps });
    }
    Ok(())
}

fn hour_column(table: &Table) -> Result<Vec<(usize, NaiveDateTime)>, InputError> {
    table
        .rows
        .iter()
        .map(|(line, r)| {
            parse_hour(&r[0]).map(|t| (*line, t)).ok_or_else(|| table.err(*line, format!("'{}' is not an ISO-8601 hour", r[0])))
        })
        .collect()
}

/// Reads `hour,<zone>…` demand.
fn load_demand(path: &Path) -> Result<(Vec<NaiveDateTime>, Vec<String>, Vec<Vec<f64>>), InputError> {
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return Err(table.err(1, "expected an hour column and at least one zone column"));
    }
    let zones: Vec<String> = table.header[1..].to_vec();
    let times = hour_column(&table)?;
    if times.is_empty() {
        return Err(table.err(1, "no rows"));
    }
    check_contiguous(&table, &times)?;
    let mut demand = Vec::with_capacity(times.len());
    for (line, r) in &table.rows {
        let row = zones
            .iter()
            .enumerate()
            .map(|(z, name)| {
                let v = table.number(*line, &r[z + 1], name)?;
                if v < 0.0 {
                    return Err(table.err(*line, format!("negative demand in zone '{name}'")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        demand.push(row);
    }
    Ok((times.into_iter().map(|t| t.1).collect(), zones, demand))
}

fn load_capacities(path: &Path, zones: &[String]) -> Result<Vec<(usize, PlantType, f64)>, InputError> {
    let table = read_table(path)?;
    let (cz, ct, cc) = (table.column("zone")?, table.column("type")?, table.column("capacity_mw")?);
    let mut out: Vec<(usize, PlantType, f64)> = Vec::new();
    for (line, r) in &table.rows {
        let z = zones.iter().position(|n| *n == r[cz]).ok_or_else(|| table.err(*line, format!("unknown zone '{}'", r[cz])))?;
        let t: PlantType = r[ct].parse().map_err(|e: crate::cost::CostError| table.err(*line, e.to_string()))?;
        let cap = table.number(*line, &r[cc], "capacity_mw")?;
        if cap < 0.0 {
            return Err(table.err(*line, format!("negative capacity {cap}")));
        }
        if out.iter().any(|e| e.0 == z && e.1 == t) {
            return Err(table.err(*line, format!("duplicate entry for {} in '{}'", t, r[cz])));
        }
        out.push((z, t, cap));
    }
    Ok(out)
}

/// Reads price series, hourly or daily. Daily rows (a bare date) are held
/// constant over the day's hours. Coal columns are converted from $/ton.
fn load_fuel(path: &Path, hours: &[NaiveDateTime]) -> Result<BTreeMap<String, Vec<f64>>, InputError> {
    let table = read_table(path)?;
    let names: Vec<String> = table.header[1..].to_vec();
    let daily = table.rows.first().is_some_and(|(_, r)| parse_date(&r[0]).is_some());
    let mut by_time: BTreeMap<NaiveDateTime, Vec<f64>> = BTreeMap::new();
    let mut stamps = Vec::new();
    for (line, r) in &table.rows {
        let values = names.iter().enumerate().map(|(k, n)| table.number(*line, &r[k + 1], n)).collect::<Result<Vec<_>, _>>()?;
        if daily {
            let d = parse_date(&r[0]).ok_or_else(|| table.err(*line, format!("'{}' is not a date", r[0])))?;
            for h in 0..24 {
                let t = d.and_hms_opt(h, 0, 0).expect("valid hour");
                by_time.insert(t, values.clone());
            }
            stamps.push((*line, d.and_hms_opt(0, 0, 0).expect("midnight")));
        } else {
            let t = parse_hour(&r[0]).ok_or_else(|| table.err(*line, format!("'{}' is not an ISO-8601 hour", r[0])))?;
            by_time.insert(t, values);
            stamps.push((*line, t));
        }
    }
    for w in stamps.windows(2) {
        if w[1].1 <= w[0].1 {
            return Err(table.err(w[1].0, "timestamps must increase"));
        }
    }
    let mut out: BTreeMap<String, Vec<f64>> = names.iter().map(|n| (n.clone(), Vec::with_capacity(hours.len()))).collect();
    let mut missing = Vec::new();
    for t in hours {
        match by_time.get(t) {
            Some(v) => {
                for (k, n) in names.iter().enumerate() {
                    let x = if n == "coal" || n.starts_with("coal:") { coal_usd_per_ton_to_eur_per_mwh(v[k]) } else { v[k] };
                    out.get_mut(n).expect("column").push(x);
                }
            }
            None => missing.push(format_hour(t)),
        }
    }
    if !missing.is_empty() {
        return Err(InputError::MissingHours { path: table.path.clone(), hours: missing });
    }
    Ok(out)
}

fn split_key(key: &str) -> Option<(&str, &str)> {
    key.split_once(':')
}

fn check_hours(table: &Table, hours: &[NaiveDateTime], times: &[(usize, NaiveDateTime)]) -> Result<(), InputError> {
    if times.len() != hours.len() || times.iter().zip(hours).any(|(a, b)| a.1 != *b) {
        let first = times.iter().zip(hours).find(|(a, b)| a.1 != **b).map_or(times.len().min(hours.len()), |(a, _)| a.0);
        return Err(table.err(first, "hours do not match the demand file"));
    }
    Ok(())
}

/// Reads `hour,<zone>:<type>…` available capacity.
fn load_renewables(path: &Path, hours: &[NaiveDateTime], zones: &[String]) -> Result<BTreeMap<(usize, PlantType), Vec<f64>>, InputError> {
    let table = read_table(path)?;
    let times = hour_column(&table)?;
    check_hours(&table, hours, &times)?;
    let mut keys = Vec::new();
    for h in &table.header[1..] {
        let (z, t) = split_key(h).ok_or_else(|| table.err(1, format!("column '{h}' is not '<zone>:<type>'")))?;
        let zi = zones.iter().position(|n| n == z).ok_or_else(|| table.err(1, format!("unknown zone '{z}'")))?;
        let ty: PlantType = t.parse().map_err(|e: crate::cost::CostError| table.err(1, e.to_string()))?;
        keys.push((zi, ty));
    }
    let mut out: BTreeMap<(usize, PlantType), Vec<f64>> = keys.iter().map(|k| (*k, Vec::new())).collect();
    for (line, r) in &table.rows {
        for (k, key) in keys.iter().enumerate() {
            let v = table.number(*line, &r[k + 1], &table.header[k + 1])?;
            if v < 0.0 {
                return Err(table.err(*line, format!("negative capacity in '{}'", table.header[k + 1])));
            }
            out.get_mut(key).expect("key").push(v);
        }
    }
    Ok(out)
}

/// Reads `hour,line,<zone>…,ram_lo,ram_hi`, any number of lines per hour.
fn load_network(path: &Path, hours: &[NaiveDateTime], zones: &[String]) -> Result<Vec<Vec<NetworkRow>>, InputError> {
    let table = read_table(path)?;
    let cl = table.column("line")?;
    let zc: Vec<usize> = zones.iter().map(|z| table.column(z)).collect::<Result<_, _>>()?;
    let (lo, hi) = (table.column("ram_lo")?, table.column("ram_hi")?);
    let index: BTreeMap<NaiveDateTime, usize> = hours.iter().enumerate().map(|(t, h)| (*h, t)).collect();
    let mut out = vec![Vec::new(); hours.len()];
    for (line, r) in &table.rows {
        let t = parse_hour(&r[0]).ok_or_else(|| table.err(*line, format!("'{}' is not an ISO-8601 hour", r[0])))?;
        let &ti = index.get(&t).ok_or_else(|| table.err(*line, format!("hour {} is not in the demand file", r[0])))?;
        let ptdf = zc.iter().zip(zones).map(|(&c, z)| table.number(*line, &r[c], z)).collect::<Result<Vec<_>, _>>()?;
        let (ram_lo, ram_hi) = (table.number(*line, &r[lo], "ram_lo")?, table.number(*line, &r[hi], "ram_hi")?);
        if ram_lo > ram_hi {
            return Err(table.err(*line, "ram_lo exceeds ram_hi"));
        }
        out[ti].push(NetworkRow { line: r[cl].clone(), ptdf, ram_lo, ram_hi });
    }
    Ok(out)
}

/// Zonal prices, wide (`hour,<zone>…`) or long (`hour,zone,price,…`). Empty
/// cells are missing prices.
pub fn load_prices(path: &Path, hours: &[NaiveDateTime], zones: &[String]) -> Result<Vec<Vec<Option<f64>>>, InputError> {
    let table = read_table(path)?;
    let index: BTreeMap<NaiveDateTime, usize> = hours.iter().enumerate().map(|(t, h)| (*h, t)).collect();
    let mut out = vec![vec![None; zones.len()]; hours.len()];
    let mut seen = vec![vec![false; zones.len()]; hours.len()];
    let long = table.header.iter().any(|h| h == "zone") && table.header.iter().any(|h| h == "price");
    let locate = |line: usize, s: &str| -> Result<usize, InputError> {
        let t = parse_hour(s).ok_or_else(|| table.err(line, format!("'{s}' is not an ISO-8601 hour")))?;
        index.get(&t).copied().ok_or_else(|| table.err(line, format!("hour {s} is not in the demand file")))
    };
    if long {
        let (cz, cp) = (table.column("zone")?, table.column("price")?);
        for (line, r) in &table.rows {
            let t = locate(*line, &r[0])?;
            let z = zones.iter().position(|n| *n == r[cz]).ok_or_else(|| table.err(*line, format!("unknown zone '{}'", r[cz])))?;
            if seen[t][z] {
                return Err(table.err(*line, format!("duplicate price for {} in '{}'", r[0], r[cz])));
            }
            seen[t][z] = true;
            out[t][z] = table.optional_number(*line, &r[cp], "price")?;
        }
    } else {
        let cols: Vec<usize> = zones.iter().map(|z| table.column(z)).collect::<Result<_, _>>()?;
        for (line, r) in &table.rows {
            let t = locate(*line, &r[0])?;
            for (z, &c) in cols.iter().enumerate() {
                seen[t][z] = true;
                out[t][z] = table.optional_number(*line, &r[c], &zones[z])?;
            }
        }
    }
    let missing: Vec<String> = (0..hours.len()).filter(|&t| seen[t].iter().any(|s| !s)).map(|t| format_hour(&hours[t])).collect();
    if !missing.is_empty() {
        return Err(InputError::MissingHours { path: table.path.clone(), hours: missing });
    }
    Ok(out)
}

/// Hours and zones of a price file: its distinct hours, which must be
/// contiguous, and its zones in order of first appearance.
pub fn price_axes(path: &Path) -> Result<(Vec<NaiveDateTime>, Vec<String>), InputError> {
    let table = read_table(path)?;
    let long = table.header.iter().any(|h| h == "zone") && table.header.iter().any(|h| h == "price");
    let zones: Vec<String> = if long {
        let cz = table.column("zone")?;
        let mut zs: Vec<String> = Vec::new();
        for (_, r) in &table.rows {
            if !zs.contains(&r[cz]) {
                zs.push(r[cz].clone());
            }
        }
        zs
    } else {
        table.header[1..].to_vec()
    };
    if zones.is_empty() || table.rows.is_empty() {
        return Err(table.err(1, "no prices"));
    }
    let mut times = hour_column(&table)?;
    times.sort_by_key(|e| e.1);
    times.dedup_by_key(|e| e.1);
    check_contiguous(&table, &times)?;
    Ok((times.into_iter().map(|e| e.1).collect(), zones))
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<HourlyDataset, InputError> {
    let (hours, zones, demand) = load_demand(&paths.path(&paths.demand))?;
    let capacities = load_capacities(&paths.path(&paths.capacity), &zones)?;
    let fuel_path = paths.path(&paths.fuel);
    let fuel = if fuel_path.exists() { load_fuel(&fuel_path, &hours)? } else { BTreeMap::new() };
    let ren_path = paths.path(&paths.renewables);
    let renewables = if ren_path.exists() { load_renewables(&ren_path, &hours, &zones)? } else { BTreeMap::new() };
    let net_path = paths.path(&paths.network);
    let network = if net_path.exists() { load_network(&net_path, &hours, &zones)? } else { vec![Vec::new(); hours.len()] };
    let price_path = paths.path(&paths.prices);
    let prices = if price_path.exists() { Some(load_prices(&price_path, &hours, &zones)?) } else { None };
    Ok(HourlyDataset { hours, zones, demand, capacities, fuel, renewables, network, prices })
}

/// Settings for turning a dataset into per-hour markets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSettings {
    pub threshold: f64,
    pub min_players: usize,
    pub delta_max: f64,
    /// Per-type overrides of the default cost parameters.
    pub types: BTreeMap<PlantType, TypeOverride>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeOverride {
    pub n_theta: Option<f64>,
    pub f_theta: Option<f64>,
    /// Constant €/MWh.
    pub k: Option<f64>,
    /// Price series name.
    pub series: Option<String>,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings { threshold: 0.88, min_players: 5, delta_max: 0.6, types: BTreeMap::new() }
    }
}

impl BuildSettings {
    pub fn type_params(&self, theta: PlantType) -> Result<TypeParams, InputError> {
        let mut p = TypeParams::default_for(theta);
        if let Some(o) = self.types.get(&theta) {
            let k_source = match (&o.k, &o.series) {
                (Some(_), Some(_)) => {
                    return Err(InputError::Config(format!("type {theta}: give either k or series, not both")));
                }
                (Some(k), None) => KSource::Constant(*k),
                (None, Some(s)) => KSource::Series(s.clone()),
                (None, None) => p.k_source,
            };
            p = TypeParams::new(theta, o.n_theta.unwrap_or(p.n_theta), o.f_theta.unwrap_or(p.f_theta), k_source)
                .map_err(|e| InputError::Config(format!("type {theta}: {e}")))?;
        }
        Ok(p)
    }
}

/// One retained player: a merged type in a zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSpec {
    pub zone: usize,
    pub theta: PlantType,
    /// Installed capacity of the merged type, MW.
    pub installed: f64,
    /// Original types folded into this player.
    pub members: Vec<PlantType>,
}

/// Thresholded, merged player set of every zone.
pub fn player_specs(data: &HourlyDataset, settings: &BuildSettings) -> (Vec<PlayerSpec>, Vec<PlayerSelection>) {
    let mut specs = Vec::new();
    let mut selections = Vec::new();
    for z in 0..data.n_zones() {
        let caps: Vec<(PlantType, f64)> = data.capacities.iter().filter(|e| e.0 == z).map(|e| (e.1, e.2)).collect();
        let sel = select_players(z, &caps, settings.threshold, settings.min_players);
        for &(theta, installed) in sel.retained.iter().filter(|e| e.1 > 0.0) {
            let members = caps.iter().filter(|c| c.0.merged() == theta).map(|c| c.0).collect();
            specs.push(PlayerSpec { zone: z, theta, installed, members });
        }
        selections.push(sel);
    }
    (specs, selections)
}

fn k_value(data: &HourlyDataset, params: &TypeParams, zone: usize, t: usize) -> Result<f64, InputError> {
    match &params.k_source {
        KSource::Constant(k) => Ok(*k),
        KSource::Series(name) => {
            let zoned = format!("{name}:{}", data.zones[zone]);
            data.fuel.get(&zoned).or_else(|| data.fuel.get(name)).map(|s| s[t]).ok_or_else(|| {
                InputError::Config(format!("no price series '{zoned}' or '{name}' for {} in zone '{}'", params.theta, data.zones[zone]))
            })
        }
    }
}

/// Available capacity: the forecast sum over members for variable types
/// when any member has a forecast, else the installed capacity.
fn available(data: &HourlyDataset, spec: &PlayerSpec, t: usize) -> f64 {
    if spec.theta.is_variable() {
        let series: Vec<f64> = spec.members.iter().filter_map(|m| data.renewables.get(&(spec.zone, *m)).map(|s| s[t])).collect();
        if !series.is_empty() {
            return series.iter().sum();
        }
    }
    spec.installed
}

/// Market of hour `t`. A player with no available capacity keeps the cost
/// curve of its installed capacity and produces nothing.
pub fn build_hour(data: &HourlyDataset, specs: &[PlayerSpec], settings: &BuildSettings, t: usize) -> Result<MarketInstance, InputError> {
    let mut players = Vec::with_capacity(specs.len());
    for spec in specs {
        let params = settings.type_params(spec.theta)?;
        let k = k_value(data, &params, spec.zone, t)?;
        let q = available(data, spec, t);
        let basis = if q > 0.0 { q } else { spec.installed };
        let (c, b) = params
            .cost(k, basis)
            .map_err(|e| InputError::Config(format!("hour {}: {} in zone '{}': {e}", t, spec.theta, data.zones[spec.zone])))?;
        players.push(Player::new(spec.zone, c, b, q.max(0.0)));
    }
    let demand = data.demand[t].clone();
    let rows = &data.network[t];
    let network = if rows.is_empty() {
        NetworkPolytope::unconstrained(data.n_zones())
    } else {
        let ptdf = DMatrix::from_fn(rows.len(), data.n_zones(), |r, z| rows[r].ptdf[z]);
        let lo: Vec<f64> = rows.iter().map(|r| r.ram_lo).collect();
        let hi: Vec<f64> = rows.iter().map(|r| r.ram_hi).collect();
        assemble_polytope(&ptdf, &lo, &hi, &demand, settings.delta_max).map_err(|e| InputError::Config(format!("hour {t}: {e}")))?
    };
    MarketInstance::new(players, demand, network).map_err(|e| InputError::Config(format!("hour {t}: {e}")))
}

/// Markets for every hour together with the player set.
pub fn build_hours(data: &HourlyDataset, settings: &BuildSettings) -> Result<(Vec<PlayerSpec>, Vec<MarketInstance>), InputError> {
    let (specs, _) = player_specs(data, settings);
    let hours = (0..data.n_hours()).map(|t| build_hour(data, &specs, settings, t)).collect::<Result<_, _>>()?;
    Ok((specs, hours))
}
