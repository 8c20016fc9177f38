//! The five run modes and their result files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, Timelike};
use rayon::prelude::*;

use super::config::{Mode, RunConfig};
use super::dataset::{build_hours, format_hour, load_dataset, load_prices, price_axes, PlayerSpec};
use super::{fmt_opt, CsvOut, InputError, Provenance, RunError};
use crate::analytic::experiments::{
    constrained_six_player, histogram, price_growth_experiment, price_ratio_experiment, profit_landscape, six_player_costs,
    PriceRatioConfig, SIX_PLAYER_DEMAND,
};
use crate::analytic::solve_a_plus;
use crate::calibration::{fit_tb_scales, gt_ratio_adjust, CalibrationError, CalibrationProblem, Scales};
use crate::cost::apply_scales;
use crate::detection::{run_tdsd, DetectionError, State};
use crate::market::{clear_market, truthful_profile, ClearingResult, ClearingStatus, MarketInstance};
use crate::nash::{default_initial_profile, find_equilibrium, EquilibriumReport, GridConfig};
use crate::rss::RssContext;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: Mode,
    pub outputs: Vec<PathBuf>,
    pub n_hours: usize,
    /// Hours whose computation failed; their rows carry the reason.
    pub failed_hours: usize,
    pub notes: Vec<String>,
}

impl RunSummary {
    fn new(mode: Mode) -> Self {
        RunSummary { mode, outputs: Vec::new(), n_hours: 0, failed_hours: 0, notes: Vec::new() }
    }
}

pub fn run(mode: Mode, cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.validate(mode)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| InputError::io(&cfg.output_dir, e))?;
    let prov = Provenance { mode, config_hash: cfg.hash(mode), seed: cfg.seed };
    let mut summary = RunSummary::new(mode);
    match mode {
        Mode::Clear => run_clear(cfg, &prov, &mut summary)?,
        Mode::Nash => run_nash(cfg, &prov, &mut summary)?,
        Mode::Calibrate => run_calibrate(cfg, &prov, &mut summary)?,
        Mode::Detect => run_detect(cfg, &prov, &mut summary)?,
        Mode::Synthetic => run_synthetic(cfg, &prov, &mut summary)?,
    }
    if summary.n_hours > 0 && summary.failed_hours == summary.n_hours {
        return Err(RunError::Numerical(format!("all {} hours failed", summary.n_hours)));
    }
    Ok(summary)
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn f(v: f64) -> String {
    v.to_string()
}

fn status_text(status: &ClearingStatus) -> String {
    match status {
        ClearingStatus::Optimal => "optimal".into(),
        ClearingStatus::Infeasible { constraint, violation } => format!("infeasible: {constraint} violated by {violation:e}"),
    }
}

/// Reads `model,zone,s_c,s_b` rows; returns scales by model name.
pub fn load_scales(path: &Path, zones: &[String]) -> Result<BTreeMap<String, Scales>, InputError> {
    let mut rdr =
        csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path).map_err(|e| InputError::io(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| InputError::io(path, e))?.iter().map(str::to_string).collect();
    let schema = |line: usize, msg: String| InputError::Schema { path: path.to_path_buf(), line, msg };
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| schema(1, format!("missing column '{name}'")));
    let (cm, cz, cc, cb) = (col("model")?, col("zone")?, col("s_c")?, col("s_b")?);
    let mut partial: BTreeMap<String, Vec<Option<(f64, f64)>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| InputError::io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let z = zones.iter().position(|n| n == &rec[cz]).ok_or_else(|| schema(line, format!("unknown zone '{}'", &rec[cz])))?;
        let num = |c: usize| -> Result<f64, InputError> {
            rec[c]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| schema(line, format!("'{}' is not a positive scale", &rec[c])))
        };
        let entry = partial.entry(rec[cm].to_string()).or_insert_with(|| vec![None; zones.len()]);
        if entry[z].is_some() {
            return Err(schema(line, format!("duplicate scales for model '{}' in zone '{}'", &rec[cm], &rec[cz])));
        }
        entry[z] = Some((num(cc)?, num(cb)?));
    }
    partial
        .into_iter()
        .map(|(model, zs)| {
            let missing: Vec<&str> = zs.iter().zip(zones).filter(|(s, _)| s.is_none()).map(|(_, n)| n.as_str()).collect();
            if !missing.is_empty() {
                return Err(schema(0, format!("model '{model}' lacks zones {}", missing.join(", "))));
            }
            let (c, b) = zs.into_iter().map(Option::unwrap).unzip();
            Ok((model, Scales { c, b }))
        })
        .collect()
}

fn scaled(inst: &MarketInstance, s: Option<&Scales>) -> Result<MarketInstance, String> {
    match s {
        None => Ok(inst.clone()),
        Some(s) => {
            let players = apply_scales(&inst.players, &s.c, &s.b).map_err(|e| e.to_string())?;
            Ok(MarketInstance { players, ..inst.clone() })
        }
    }
}

/// Loads the dataset, builds every hour and picks the scales for `model`,
/// falling back to the truthful-model scales.
fn prepared(cfg: &RunConfig, model: &str) -> Result<(Data, Option<Scales>), RunError> {
    let data = load_dataset(&cfg.data)?;
    let (specs, hours) = build_hours(&data, &cfg.build)?;
    if specs.is_empty() {
        return Err(InputError::Config("no players: every zone has zero installed capacity".into()).into());
    }
    let scales = match &cfg.scales {
        None => None,
        Some(p) => {
            let mut all = load_scales(p, &data.zones)?;
            let s = all.remove(model).or_else(|| all.remove("tb"));
            if s.is_none() {
                return Err(InputError::Config(format!("{} has no '{model}' or 'tb' scales", p.display())).into());
            }
            s
        }
    };
    Ok((Data { times: data.hours.clone(), zones: data.zones.clone(), specs, hours, targets: data.prices }, scales))
}

struct Data {
    times: Vec<NaiveDateTime>,
    zones: Vec<String>,
    specs: Vec<PlayerSpec>,
    hours: Vec<MarketInstance>,
    targets: Option<Vec<Vec<Option<f64>>>>,
}

type HourOutcome<T> = Result<(MarketInstance, T), String>;

fn clear_truthful(inst: &MarketInstance, s: Option<&Scales>) -> HourOutcome<ClearingResult> {
    let inst = scaled(inst, s)?;
    let res = clear_market(&inst, &truthful_profile(&inst.players)).map_err(|e| e.to_string())?;
    Ok((inst, res))
}

fn solve_nash(inst: &MarketInstance, s: Option<&Scales>, grid: &GridConfig) -> HourOutcome<EquilibriumReport> {
    let inst = scaled(inst, s)?;
    let ctx = RssContext::new(&inst).map_err(|e| e.to_string())?;
    let init = default_initial_profile(&ctx);
    let rep = find_equilibrium(&inst, &ctx, &init, grid).map_err(|e| e.to_string())?;
    Ok((inst, rep))
}

fn run_clear(cfg: &RunConfig, prov: &Provenance, summary: &mut RunSummary) -> Result<(), RunError> {
    let (data, scales) = prepared(cfg, "tb")?;
    let results: Vec<HourOutcome<ClearingResult>> = data.hours.par_iter().map(|inst| clear_truthful(inst, scales.as_ref())).collect();
    let mut players = CsvOut::create(&out(cfg, "players.csv"), prov, &["hour", "player", "zone", "type", "c", "b", "q", "x"])?;
    let mut prices = CsvOut::create(&out(cfg, "prices_tb.csv"), prov, &["hour", "zone", "price", "price_setter", "status"])?;
    summary.n_hours = data.hours.len();
    for (t, res) in results.iter().enumerate() {
        let hour = format_hour(&data.times[t]);
        let ok = matches!(res, Ok((_, r)) if r.is_optimal());
        if !ok {
            summary.failed_hours += 1;
        }
        let (inst, status) = match res {
            Ok((inst, r)) => (inst, status_text(&r.status)),
            Err(e) => (&data.hours[t], format!("error: {e}")),
        };
        for (i, p) in inst.players.iter().enumerate() {
            let x = match res {
                Ok((_, r)) if ok => f(r.x[i]),
                _ => String::new(),
            };
            players.row([
                hour.clone(),
                i.to_string(),
                data.zones[p.zone].clone(),
                data.specs[i].theta.to_string(),
                f(p.c),
                f(p.b),
                f(p.q),
                x,
            ])?;
        }
        for (z, zone) in data.zones.iter().enumerate() {
            let (v, setter) = match res {
                Ok((_, r)) if ok => (fmt_opt(r.v[z]), r.price_setters[z].map_or_else(String::new, |i| i.to_string())),
                _ => (String::new(), String::new()),
            };
            prices.row([hour.clone(), zone.clone(), v, setter, status.clone()])?;
        }
    }
    summary.outputs.push(players.finish()?);
    summary.outputs.push(prices.finish()?);
    Ok(())
}

fn run_nash(cfg: &RunConfig, prov: &Provenance, summary: &mut RunSummary) -> Result<(), RunError> {
    let (data, scales) = prepared(cfg, "gt")?;
    let grid = cfg.grid.grid_config();
    let results: Vec<HourOutcome<EquilibriumReport>> = data.hours.par_iter().map(|inst| solve_nash(inst, scales.as_ref(), &grid)).collect();
    write_nash(cfg, prov, summary, &data, &results)
}

fn write_nash(
    cfg: &RunConfig,
    prov: &Provenance,
    summary: &mut RunSummary,
    data: &Data,
    results: &[HourOutcome<EquilibriumReport>],
) -> Result<(), RunError> {
    let mut prices = CsvOut::create(&out(cfg, "prices_gt.csv"), prov, &["hour", "zone", "price", "status"])?;
    let mut strategies =
        CsvOut::create(&out(cfg, "strategies_gt.csv"), prov, &["hour", "player", "zone", "type", "m", "a", "x", "profit"])?;
    let mut nash = CsvOut::create(&out(cfg, "nash_summary.csv"), prov, &["hour", "converged", "cycles", "max_gain", "status"])?;
    summary.n_hours = results.len();
    for (t, res) in results.iter().enumerate() {
        let hour = format_hour(&data.times[t]);
        match res {
            Ok((inst, rep)) => {
                let status = if rep.converged { "converged" } else { "cycle_cap" };
                for (z, zone) in data.zones.iter().enumerate() {
                    prices.row([hour.clone(), zone.clone(), fmt_opt(rep.clearing.v[z]), status.to_string()])?;
                }
                for (i, s) in rep.strategies.iter().enumerate() {
                    let zone = &data.zones[inst.players[i].zone];
                    let x = rep.clearing.x[i];
                    strategies.row([
                        hour.clone(),
                        i.to_string(),
                        zone.clone(),
                        data.specs[i].theta.to_string(),
                        f(s.m),
                        f(s.a),
                        f(x),
                        f(rep.profits[i]),
                    ])?;
                }
                let cycles = rep.cycles_used + rep.presolve_cycles;
                nash.row([hour, rep.converged.to_string(), cycles.to_string(), f(rep.audit.max_gain()), status.to_string()])?;
            }
            Err(e) => {
                summary.failed_hours += 1;
                let status = format!("error: {e}");
                for zone in &data.zones {
                    prices.row([hour.clone(), zone.clone(), String::new(), status.clone()])?;
                }
                nash.row([hour, "false".into(), String::new(), String::new(), status])?;
            }
        }
    }
    summary.outputs.push(prices.finish()?);
    summary.outputs.push(strategies.finish()?);
    summary.outputs.push(nash.finish()?);
    Ok(())
}

fn calibration_input(e: CalibrationError) -> RunError {
    match e {
        CalibrationError::AllHoursInfeasible { .. } | CalibrationError::Market { .. } => RunError::numerical(e),
        e => InputError::Config(e.to_string()).into(),
    }
}

fn run_calibrate(cfg: &RunConfig, prov: &Provenance, summary: &mut RunSummary) -> Result<(), RunError> {
    let (data, s0) = prepared(cfg, "tb")?;
    let targets = data
        .targets
        .clone()
        .ok_or_else(|| InputError::Config(format!("calibrate needs observed prices in {}", cfg.data.path(&cfg.data.prices).display())))?;
    let mut problem = CalibrationProblem::new(data.hours.clone(), targets.clone()).map_err(calibration_input)?;
    problem.settings = cfg.calibration.fit_settings();
    if let Some(s0) = s0 {
        problem.s0 = s0;
    }
    problem.validate().map_err(calibration_input)?;
    let fit = fit_tb_scales(&problem).map_err(|e| match e {
        CalibrationError::Settings(_) | CalibrationError::ScaleShape { .. } => calibration_input(e),
        e => RunError::numerical(e),
    })?;
    summary.n_hours = data.hours.len();
    summary.notes.push(format!("truthful fit: F = {}, stop = {:?}, {} iterations", fit.f, fit.stop, fit.trace.len() - 1));

    let mut gt_scales = None;
    if cfg.calibration.gt_ratio {
        let [lo, hi] = cfg.calibration.gt_hours.unwrap_or([0, data.hours.len()]);
        let hi = hi.min(data.hours.len());
        if lo >= hi {
            return Err(InputError::Config(format!("gt_hours start {lo} is past the last hour")).into());
        }
        let grid = cfg.grid.grid_config();
        let subset: Vec<usize> = (lo..hi).collect();
        let solved: Vec<Option<Vec<Option<f64>>>> =
            subset.par_iter().map(|&t| solve_nash(&data.hours[t], Some(&fit.scales), &grid).ok().map(|(_, rep)| rep.clearing.v)).collect();
        let mut gt_prices = vec![vec![None; data.zones.len()]; data.hours.len()];
        for (&t, v) in subset.iter().zip(solved) {
            if let Some(v) = v {
                gt_prices[t] = v;
            }
        }
        let s = gt_ratio_adjust(&gt_prices, &targets, &fit.scales, &subset).map_err(RunError::numerical)?;
        gt_scales = Some(s);
    }

    let mut scales = CsvOut::create(&out(cfg, "scales.csv"), prov, &["model", "zone", "s_c", "s_b"])?;
    for (model, s) in std::iter::once(("tb", &fit.scales)).chain(gt_scales.as_ref().map(|s| ("gt", s))) {
        for (z, zone) in data.zones.iter().enumerate() {
            scales.row([model.to_string(), zone.clone(), f(s.c[z]), f(s.b[z])])?;
        }
    }
    summary.outputs.push(scales.finish()?);

    let mut header = vec!["iter".to_string(), "f".into(), "grad_norm".into(), "step".into()];
    for zone in &data.zones {
        header.push(format!("s_c:{zone}"));
        header.push(format!("s_b:{zone}"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut trace = CsvOut::create(&out(cfg, "calibration_trace.csv"), prov, &header)?;
    for row in &fit.trace {
        let mut fields = vec![row.iter.to_string(), f(row.f), f(row.grad_norm), f(row.step)];
        fields.extend(row.scales.to_vec().into_iter().map(f));
        trace.row(fields)?;
    }
    summary.outputs.push(trace.finish()?);

    let mut setters = CsvOut::create(&out(cfg, "calibration_setters.csv"), prov, &["hour", "zone", "price_setter", "type"])?;
    for (t, row) in fit.price_setters.iter().enumerate() {
        for (z, zone) in data.zones.iter().enumerate() {
            let (i, ty) =
                row.get(z).copied().flatten().map_or((String::new(), String::new()), |i| (i.to_string(), data.specs[i].theta.to_string()));
            setters.row([format_hour(&data.times[t]), zone.clone(), i, ty])?;
        }
    }
    summary.outputs.push(setters.finish()?);
    Ok(())
}

fn detection_error(e: DetectionError) -> RunError {
    match e {
        DetectionError::Misaligned(_) | DetectionError::BadConfidence(_) => InputError::Config(e.to_string()).into(),
        e => RunError::numerical(e),
    }
}

fn run_detect(cfg: &RunConfig, prov: &Provenance, summary: &mut RunSummary) -> Result<(), RunError> {
    let d = &cfg.detection;
    let (Some(tb_path), Some(gt_path), Some(target_path)) = (&d.tb, &d.gt, &d.target) else {
        return Err(InputError::Config("detect needs tb, gt and target price files".into()).into());
    };
    let (times, zones) = price_axes(target_path)?;
    let target = load_prices(target_path, &times, &zones)?;
    let tb = load_prices(tb_path, &times, &zones)?;
    let gt = load_prices(gt_path, &times, &zones)?;
    let series = run_tdsd(&tb, &gt, &target, d.confidence).map_err(detection_error)?;
    summary.n_hours = times.len();

    let mut nulls = CsvOut::create(&out(cfg, "nulls.csv"), prov, &["zone", "model", "mean", "std", "ci_lo", "ci_hi"])?;
    for (zone, n) in zones.iter().zip(&series.nulls) {
        for (model, m) in [("tb", &n.tb), ("gt", &n.gt)] {
            nulls.row([zone.clone(), model.to_string(), f(m.mean), f(m.std), f(m.ci_lo), f(m.ci_hi)])?;
        }
    }
    summary.outputs.push(nulls.finish()?);

    let mut states = CsvOut::create(&out(cfg, "states.csv"), prov, &["hour", "zone", "e_tb", "e_gt", "region", "state"])?;
    for (t, time) in times.iter().enumerate() {
        for (z, zone) in zones.iter().enumerate() {
            let (e_tb, e_gt) = series.errors[t][z].map_or((String::new(), String::new()), |e| (f(e.e_tb), f(e.e_gt)));
            let (region, state) =
                series.labels[t][z].map_or((String::new(), String::new()), |l| (l.region.name().to_string(), l.state.name().to_string()));
            states.row([format_hour(time), zone.clone(), e_tb, e_gt, region, state])?;
        }
    }
    summary.outputs.push(states.finish()?);

    let mut agg = CsvOut::create(&out(cfg, "aggregate_states.csv"), prov, &["hour", "state"])?;
    for (time, s) in times.iter().zip(&series.aggregate) {
        if s.is_none() {
            summary.failed_hours += 1;
        }
        agg.row([format_hour(time), s.map_or_else(String::new, |s| s.name().to_string())])?;
    }
    summary.outputs.push(agg.finish()?);

    let hod: Vec<u32> = times.iter().map(|t| t.hour()).collect();
    let mut header = vec!["hour_of_day", "zone"];
    header.extend(State::ALL.iter().map(|s| s.name()));
    let mut profile = CsvOut::create(&out(cfg, "state_profile.csv"), prov, &header)?;
    let groups = zones.iter().enumerate().map(|(z, n)| (Some(z), n.as_str())).chain(std::iter::once((None, "all")));
    for (zone, name) in groups {
        for (h, counts) in series.hour_of_day_counts(&hod, zone).iter().enumerate() {
            let mut fields = vec![h.to_string(), name.to_string()];
            fields.extend(counts.iter().map(usize::to_string));
            profile.row(fields)?;
        }
    }
    summary.outputs.push(profile.finish()?);
    let s0 = series.aggregate.iter().filter(|s| **s == Some(State::S0)).count();
    summary.notes.push(format!("{s0} of {} hours in S0", times.len()));
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn run_synthetic(cfg: &RunConfig, prov: &Provenance, summary: &mut RunSummary) -> Result<(), RunError> {
    let syn = &cfg.synthetic;
    let costs = six_player_costs();
    if syn.figures.contains(&4) {
        let rc = PriceRatioConfig { n_samples: syn.samples, seed: cfg.seed, ..PriceRatioConfig::default() };
        let res = price_ratio_experiment(&rc).map_err(RunError::numerical)?;
        let mut ratios = CsvOut::create(&out(cfg, "fig4_ratios.csv"), prov, &["sample", "v0", "v_star", "ratio", "active_set_violated"])?;
        for (k, s) in res.samples.iter().enumerate() {
            ratios.row([k.to_string(), f(s.v0), f(s.v_star), f(s.ratio), s.active_set_violated.to_string()])?;
        }
        summary.outputs.push(ratios.finish()?);
        let values: Vec<f64> = res.samples.iter().map(|s| s.ratio).collect();
        let mut hist = CsvOut::create(&out(cfg, "fig4_histogram.csv"), prov, &["lo", "hi", "count"])?;
        for (lo, hi, n) in histogram(&values, syn.histogram_bins) {
            hist.row([f(lo), f(hi), n.to_string()])?;
        }
        summary.outputs.push(hist.finish()?);
        summary.notes.push(format!("price ratio: mean {}, share above one {}", res.mean, res.frac_above_one));
    }
    if syn.figures.contains(&5) {
        let m: Vec<f64> = costs.iter().map(|c| c.c).collect();
        let a_plus = solve_a_plus(&costs, &m, SIX_PLAYER_DEMAND).map_err(RunError::numerical)?;
        let (c0, a0) = (costs[0].c, a_plus[0]);
        let half = a0.abs().max(costs[0].b);
        let n = syn.landscape_points;
        let pts = profit_landscape(&costs, SIX_PLAYER_DEMAND, 0, &linspace(0.5 * c0, 1.5 * c0, n), &linspace(a0 - half, a0 + half, n))
            .map_err(RunError::numerical)?;
        let mut land = CsvOut::create(&out(cfg, "fig5_landscape.csv"), prov, &["m", "a", "x", "profit"])?;
        for p in pts {
            land.row([f(p.m), f(p.a), f(p.x), f(p.profit)])?;
        }
        summary.outputs.push(land.finish()?);
    }
    if syn.figures.contains(&6) {
        let k_grid: Vec<f64> = (0..19).map(|k| 1.0 + 0.5 * k as f64).collect();
        let inst = constrained_six_player(&costs, SIX_PLAYER_DEMAND).map_err(RunError::numerical)?;
        let g = price_growth_experiment(&costs, SIX_PLAYER_DEMAND, &k_grid, syn.f_m, Some(&inst)).map_err(RunError::numerical)?;
        let mut growth = CsvOut::create(&out(cfg, "fig6_price_growth.csv"), prov, &["k", "unperturbed", "perturbed", "constrained"])?;
        for (j, k) in g.k.iter().enumerate() {
            let con = g.constrained.as_ref().map(|c| c[j]);
            growth.row([f(*k), f(g.unperturbed[j]), f(g.perturbed[j]), fmt_opt(con)])?;
        }
        summary.outputs.push(growth.finish()?);
    }
    Ok(())
}
