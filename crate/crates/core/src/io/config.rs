//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{BuildSettings, DatasetPaths};
use super::InputError;
use crate::calibration::FitSettings;
use crate::nash::{GridConfig, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Clear,
    Nash,
    Synthetic,
    Calibrate,
    Detect,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Clear, Mode::Nash, Mode::Synthetic, Mode::Calibrate, Mode::Detect];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Clear => "clear",
            Mode::Nash => "nash",
            Mode::Synthetic => "synthetic",
            Mode::Calibrate => "calibrate",
            Mode::Detect => "detect",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Jacobi,
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub n_pts: usize,
    pub max_cycles: usize,
    /// Slope-change tolerance of the fixed-point iteration.
    pub delta_ne: f64,
    pub schedule: ScheduleName,
    /// Grid size of an optional coarse warm-start run.
    pub presolve_n_pts: Option<usize>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { n_pts: 11, max_cycles: 50, delta_ne: 0.0, schedule: ScheduleName::Jacobi, presolve_n_pts: None }
    }
}

impl GridSettings {
    pub fn grid_config(&self) -> GridConfig {
        let schedule = match self.schedule {
            ScheduleName::Jacobi => Schedule::Jacobi,
            ScheduleName::GaussSeidel => Schedule::GaussSeidel,
        };
        let base = GridConfig { n_pts: self.n_pts, max_cycles: self.max_cycles, tol_ne: self.delta_ne, schedule, presolve: None };
        let presolve = self.presolve_n_pts.map(|n| Box::new(GridConfig { n_pts: n, ..base.clone() }));
        GridConfig { presolve, ..base }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub s_min: f64,
    /// Also derive strategic-model scales by the price-ratio adjustment.
    pub gt_ratio: bool,
    /// Half-open hour range `[start, end)` for the ratio; all hours if unset.
    pub gt_hours: Option<[usize; 2]>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        let f = FitSettings::default();
        CalibrationSettings { max_iter: f.max_iter, grad_tol: f.grad_tol, s_min: f.s_min, gt_ratio: false, gt_hours: None }
    }
}

impl CalibrationSettings {
    pub fn fit_settings(&self) -> FitSettings {
        FitSettings { max_iter: self.max_iter, grad_tol: self.grad_tol, s_min: self.s_min, ..FitSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSettings {
    pub confidence: f64,
    /// Truthful-model prices.
    pub tb: Option<PathBuf>,
    /// Strategic-model prices.
    pub gt: Option<PathBuf>,
    /// Observed prices.
    pub target: Option<PathBuf>,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        DetectionSettings { confidence: 0.975, tb: None, gt: None, target: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    /// Figures to produce, from {4, 5, 6}.
    pub figures: Vec<u8>,
    pub samples: usize,
    pub histogram_bins: usize,
    /// Grid points per axis of the profit landscape.
    pub landscape_points: usize,
    /// Opponent perturbation of the price-growth experiment.
    pub f_m: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        SyntheticSettings { figures: vec![4, 5, 6], samples: 10_000, histogram_bins: 50, landscape_points: 41, f_m: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Not part of the configuration hash.
    pub output_dir: PathBuf,
    pub data: DatasetPaths,
    pub build: BuildSettings,
    /// Cost scales applied in `clear` and `nash` (a `scales.csv` from
    /// `calibrate`).
    pub scales: Option<PathBuf>,
    pub grid: GridSettings,
    pub calibration: CalibrationSettings,
    pub detection: DetectionSettings,
    pub synthetic: SyntheticSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            output_dir: PathBuf::from("out"),
            data: DatasetPaths::default(),
            build: BuildSettings::default(),
            scales: None,
            grid: GridSettings::default(),
            calibration: CalibrationSettings::default(),
            detection: DetectionSettings::default(),
            synthetic: SyntheticSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, InputError> {
        toml::from_str(text).map_err(|e| InputError::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path).map_err(|e| InputError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            InputError::Config(msg) => InputError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.data.dir);
        for p in [&mut cfg.scales, &mut cfg.detection.tb, &mut cfg.detection.gt, &mut cfg.detection.target].into_iter().flatten() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self, mode: Mode) -> Result<(), InputError> {
        let bad = |m: String| Err(InputError::Config(m));
        if !(0.0..=1.0).contains(&self.build.threshold) {
            return bad(format!("threshold {} must lie in [0, 1]", self.build.threshold));
        }
        if !(self.build.delta_max > 0.0 && self.build.delta_max < 1.0) {
            return bad(format!("delta_max {} must lie in (0, 1)", self.build.delta_max));
        }
        self.grid.grid_config().validate().map_err(|e| InputError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.detection.confidence) {
            return bad(format!("confidence {} must lie in [0, 1)", self.detection.confidence));
        }
        if let Some([a, b]) = self.calibration.gt_hours {
            if a >= b {
                return bad(format!("gt_hours [{a}, {b}) is empty"));
            }
        }
        if mode == Mode::Synthetic {
            if let Some(f) = self.synthetic.figures.iter().find(|f| ![4, 5, 6].contains(*f)) {
                return bad(format!("unknown figure {f}; choose from 4, 5, 6"));
            }
            if self.synthetic.samples == 0 || self.synthetic.landscape_points < 2 || self.synthetic.histogram_bins == 0 {
                return bad("samples, histogram_bins and landscape_points must be positive (landscape at least 2)".into());
            }
        }
        if mode == Mode::Detect {
            for (name, p) in [("tb", &self.detection.tb), ("gt", &self.detection.gt), ("target", &self.detection.target)] {
                match p {
                    None => return bad(format!("detect needs the {name} price file")),
                    Some(p) if !p.exists() => return bad(format!("{name} price file {} does not exist", p.display())),
                    _ => {}
                }
            }
        }
        if matches!(mode, Mode::Clear | Mode::Nash | Mode::Calibrate) {
            let demand = self.data.path(&self.data.demand);
            if !demand.exists() {
                return bad(format!("demand file {} does not exist", demand.display()));
            }
            if let Some(s) = &self.scales {
                if !s.exists() {
                    return bad(format!("scales file {} does not exist", s.display()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the mode and the configuration without its output
    /// directory, hex encoded.
    pub fn hash(&self, mode: Mode) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serialises");
        let mut h = Sha256::new();
        h.update(mode.name().as_bytes());
        h.update(b"\n");
        h.update(json.as_bytes());
        hex::encode(h.finalize())
    }
}
