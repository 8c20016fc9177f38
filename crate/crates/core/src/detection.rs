//! Two-dimensional state detection.
//!
//! For each zone the truthful-model and strategic-model price errors
//! `e = P − v` are tested against Gaussian nulls fitted to their own series.
//! Each error falls below, inside or above its confidence interval, which
//! places the point in one of nine regions:
//!
//! ```txt
//!              tb low   tb in   tb high
//!     gt high    R1      R2       R3
//!     gt in      R4      R5       R6
//!     gt low     R7      R8       R9
//! ```
//!
//! A low error means the model over-predicts the observed price.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("need at least 2 errors to fit a null, got {0}")]
    TooFewSamples(usize),
    #[error("error series has zero spread")]
    Degenerate,
    #[error("error series contains a non-finite value at {0}")]
    NonFinite(usize),
    #[error("confidence {0} must lie in [0, 1)")]
    BadConfidence(f64),
    #[error("no zone states to aggregate")]
    NothingToAggregate,
    #[error("series are misaligned: {0}")]
    Misaligned(String),
    #[error("zone {zone}, {model} errors: {source}")]
    Zone { zone: usize, model: &'static str, source: Box<DetectionError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub e_tb: f64,
    pub e_gt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub mean: f64,
    pub std: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Two-sided standard-normal quantile: `Φ⁻¹((1 + confidence)/2)`.
pub fn z_quantile(confidence: f64) -> Result<f64, DetectionError> {
    if !(0.0..1.0).contains(&confidence) {
        return Err(DetectionError::BadConfidence(confidence));
    }
    if confidence == 0.0 {
        return Ok(0.0);
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 * (1.0 + confidence)))
}

/// Gaussian null with the sample mean and the sample (n − 1) standard
/// deviation, and the symmetric interval of mass `confidence` about the mean.
pub fn fit_null(errors: &[f64], confidence: f64) -> Result<NullModel, DetectionError> {
    let z = z_quantile(confidence)?;
    if errors.len() < 2 {
        return Err(DetectionError::TooFewSamples(errors.len()));
    }
    if let Some(i) = errors.iter().position(|e| !e.is_finite()) {
        return Err(DetectionError::NonFinite(i));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(DetectionError::Degenerate);
    }
    Ok(NullModel { mean, std, ci_lo: mean - z * std, ci_hi: mean + z * std })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    In,
    High,
}

impl NullModel {
    pub fn band(&self, e: f64) -> Band {
        if e < self.ci_lo {
            Band::Low
        } else if e > self.ci_hi {
            Band::High
        } else {
            Band::In
        }
    }

    /// The null is rejected for `e`.
    pub fn rejects(&self, e: f64) -> bool {
        self.band(e) != Band::In
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
}

impl Region {
    pub const ALL: [Region; 9] =
        [Region::R1, Region::R2, Region::R3, Region::R4, Region::R5, Region::R6, Region::R7, Region::R8, Region::R9];

    pub fn from_bands(tb: Band, gt: Band) -> Region {
        use Band::*;
        match (tb, gt) {
            (Low, High) => Region::R1,
            (In, High) => Region::R2,
            (High, High) => Region::R3,
            (Low, In) => Region::R4,
            (In, In) => Region::R5,
            (High, In) => Region::R6,
            (Low, Low) => Region::R7,
            (In, Low) => Region::R8,
            (High, Low) => Region::R9,
        }
    }

    pub fn state(self) -> State {
        match self {
            Region::R5 => State::S0,
            Region::R4 | Region::R6 | Region::R3 => State::Gt,
            Region::R2 | Region::R8 => State::Tb,
            Region::R7 => State::Ea,
            Region::R1 | Region::R9 => State::Oa,
        }
    }

    pub fn name(self) -> &'static str {
        ["R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8", "R9"][self as usize]
    }
}

/// Market states in increasing aggregation precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum State {
    /// Neither null rejected.
    S0,
    /// Truthful bidding with high probability.
    Tb,
    /// Strategic bidding with high probability.
    Gt,
    /// Both models over-predict.
    Ea,
    /// Models disagree in opposite directions.
    Oa,
}

impl State {
    pub const ALL: [State; 5] = [State::S0, State::Tb, State::Gt, State::Ea, State::Oa];

    pub fn name(self) -> &'static str {
        match self {
            State::S0 => "S0",
            State::Tb => "S_TB",
            State::Gt => "S_GT",
            State::Ea => "S_EA",
            State::Oa => "S_OA",
        }
    }

    pub fn parse(s: &str) -> Option<State> {
        State::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLabel {
    pub region: Region,
    pub state: State,
}

pub fn classify_point(pair: ErrorPair, null_tb: &NullModel, null_gt: &NullModel) -> StateLabel {
    let region = Region::from_bands(null_tb.band(pair.e_tb), null_gt.band(pair.e_gt));
    StateLabel { region, state: region.state() }
}

/// Highest-precedence zone state: S_OA > S_EA > S_GT > S_TB > S0.
pub fn aggregate_states(zone_states: &[State]) -> Result<State, DetectionError> {
    zone_states.iter().copied().max().ok_or(DetectionError::NothingToAggregate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneNulls {
    pub tb: NullModel,
    pub gt: NullModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    pub nulls: Vec<ZoneNulls>,
    /// `errors[t][z]`, `None` where a price is missing.
    pub errors: Vec<Vec<Option<ErrorPair>>>,
    pub labels: Vec<Vec<Option<StateLabel>>>,
    /// `None` for hours with no labelled zone.
    pub aggregate: Vec<Option<State>>,
}

impl StateSeries {
    pub fn n_hours(&self) -> usize {
        self.labels.len()
    }

    /// Counts of each state (in [`State::ALL`] order) by hour of day, for
    /// zone `zone` or for the aggregate when `zone` is `None`.
    pub fn hour_of_day_counts(&self, hour_of_day: &[u32], zone: Option<usize>) -> Vec<[usize; 5]> {
        let mut out = vec![[0usize; 5]; 24];
        for (t, &h) in hour_of_day.iter().enumerate().take(self.n_hours()) {
            let s = match zone {
                Some(z) => self.labels[t][z].map(|l| l.state),
                None => self.aggregate[t],
            };
            if let Some(s) = s {
                out[h as usize % 24][s as usize] += 1;
            }
        }
        out
    }
}

type PriceTable = [Vec<Option<f64>>];

/// Fits per-zone nulls on the full error series, labels every `(t, z)` and
/// aggregates per hour. Tables are indexed `[t][z]`.
pub fn run_tdsd(
    tb_prices: &PriceTable,
    gt_prices: &PriceTable,
    target_prices: &PriceTable,
    confidence: f64,
) -> Result<StateSeries, DetectionError> {
    z_quantile(confidence)?;
    let n_t = target_prices.len();
    if tb_prices.len() != n_t || gt_prices.len() != n_t {
        return Err(DetectionError::Misaligned(format!(
            "{} target hours, {} truthful, {} strategic",
            n_t,
            tb_prices.len(),
            gt_prices.len()
        )));
    }
    let nz = target_prices.first().map_or(0, |r| r.len());
    for (t, ((p, a), b)) in target_prices.iter().zip(tb_prices).zip(gt_prices).enumerate() {
        if p.len() != nz || a.len() != nz || b.len() != nz {
            return Err(DetectionError::Misaligned(format!("hour {t} does not have {nz} zones in every series")));
        }
    }
    let errors: Vec<Vec<Option<ErrorPair>>> = (0..n_t)
        .map(|t| {
            (0..nz)
                .map(|z| match (target_prices[t][z], tb_prices[t][z], gt_prices[t][z]) {
                    (Some(p), Some(tb), Some(gt)) => Some(ErrorPair { e_tb: p - tb, e_gt: p - gt }),
                    _ => None,
                })
                .collect()
        })
        .collect();
    let nulls: Vec<ZoneNulls> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let pairs: Vec<ErrorPair> = errors.iter().filter_map(|row| row[z]).collect();
            let wrap = |model, e| DetectionError::Zone { zone: z, model, source: Box::new(e) };
            let tb: Vec<f64> = pairs.iter().map(|p| p.e_tb).collect();
            let gt: Vec<f64> = pairs.iter().map(|p| p.e_gt).collect();
            Ok(ZoneNulls {
                tb: fit_null(&tb, confidence).map_err(|e| wrap("truthful", e))?,
                gt: fit_null(&gt, confidence).map_err(|e| wrap("strategic", e))?,
            })
        })
        .collect::<Result<_, DetectionError>>()?;
    let labels: Vec<Vec<Option<StateLabel>>> =
        errors.iter().map(|row| row.iter().zip(&nulls).map(|(e, n)| e.map(|e| classify_point(e, &n.tb, &n.gt))).collect()).collect();
    let aggregate = labels
        .iter()
        .map(|row| {
            let states: Vec<State> = row.iter().flatten().map(|l| l.state).collect();
            aggregate_states(&states).ok()
        })
        .collect();
    Ok(StateSeries { nulls, errors, labels, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_values() {
        assert_relative_eq!(z_quantile(0.975).unwrap(), 2.241402727604947, epsilon = 1e-8);
        assert_relative_eq!(z_quantile(0.95).unwrap(), 1.959963984540054, epsilon = 1e-8);
        assert_eq!(z_quantile(0.0).unwrap(), 0.0);
        assert!(z_quantile(1.0).is_err());
    }

    #[test]
    fn constant_series_is_rejected() {
        assert_eq!(fit_null(&[3.0; 10], 0.975), Err(DetectionError::Degenerate));
        assert_eq!(fit_null(&[3.0], 0.975), Err(DetectionError::TooFewSamples(1)));
    }

    #[test]
    fn zero_confidence_collapses_interval() {
        let n = fit_null(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(n.ci_lo, n.mean);
        assert_eq!(n.ci_hi, n.mean);
    }

    #[test]
    fn region_layout() {
        let null = NullModel { mean: 0.0, std: 1.0, ci_lo: -2.0, ci_hi: 2.0 };
        let label = |tb, gt| classify_point(ErrorPair { e_tb: tb, e_gt: gt }, &null, &null);
        assert_eq!(label(0.0, 0.0), StateLabel { region: Region::R5, state: State::S0 });
        assert_eq!(label(3.0, 0.0), StateLabel { region: Region::R6, state: State::Gt });
        assert_eq!(label(3.0, 3.0), StateLabel { region: Region::R3, state: State::Gt });
        assert_eq!(label(-3.0, -3.0), StateLabel { region: Region::R7, state: State::Ea });
        assert_eq!(label(-3.0, 3.0).state, State::Oa);
        assert_eq!(label(3.0, -3.0).state, State::Oa);
        assert_eq!(label(0.0, 3.0).state, State::Tb);
        assert_eq!(label(-3.0, 0.0).region, Region::R4);
    }

    #[test]
    fn aggregation_precedence() {
        assert_eq!(aggregate_states(&[State::S0; 3]).unwrap(), State::S0);
        assert_eq!(aggregate_states(&[State::Gt, State::Oa, State::S0]).unwrap(), State::Oa);
        assert_eq!(aggregate_states(&[State::Tb, State::Gt]).unwrap(), State::Gt);
        assert_eq!(aggregate_states(&[State::Tb, State::S0]).unwrap(), State::Tb);
        assert!(aggregate_states(&[]).is_err());
    }

    #[test]
    fn state_names_round_trip() {
        for s in State::ALL {
            assert_eq!(State::parse(s.name()), Some(s));
        }
    }
}
