//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use zonal_market::io::config::ScheduleName;
use zonal_market::io::{run, InputError, Mode, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "zonal-market", version, about = "Zonal market clearing, strategic equilibria, calibration and detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clear every hour under truthful bids.
    Clear(Common),
    /// Approximate the strategic equilibrium of every hour.
    Nash(Common),
    /// Stylised single-zone experiments.
    Synthetic(Common),
    /// Fit zonal cost scales to observed prices.
    Calibrate(Common),
    /// Label hours as truthful or strategic from three price series.
    Detect(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Jacobi,
    GaussSeidel,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding the input CSV files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Cost scales file (`scales.csv` from `calibrate`).
    #[arg(long)]
    scales: Option<PathBuf>,
    /// Slope grid points per player.
    #[arg(long)]
    n_pts: Option<usize>,
    #[arg(long)]
    delta_ne: Option<f64>,
    #[arg(long)]
    max_cycles: Option<usize>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Derive strategic-model scales after the truthful fit.
    #[arg(long)]
    gt_ratio: bool,
    #[arg(long)]
    confidence: Option<f64>,
    /// Truthful-model prices.
    #[arg(long)]
    tb: Option<PathBuf>,
    /// Strategic-model prices.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Observed prices.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Figure to produce (4, 5 or 6); repeatable.
    #[arg(long = "figure")]
    figures: Vec<u8>,
    #[arg(long)]
    samples: Option<usize>,
}

impl Common {
    fn config(self) -> Result<RunConfig, InputError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.out {
            cfg.output_dir = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.data_dir {
            cfg.data.dir = v;
        }
        if let Some(v) = self.scales {
            cfg.scales = Some(v);
        }
        if let Some(v) = self.n_pts {
            cfg.grid.n_pts = v;
        }
        if let Some(v) = self.delta_ne {
            cfg.grid.delta_ne = v;
        }
        if let Some(v) = self.max_cycles {
            cfg.grid.max_cycles = v;
        }
        if let Some(v) = self.schedule {
            cfg.grid.schedule = match v {
                ScheduleArg::Jacobi => ScheduleName::Jacobi,
                ScheduleArg::GaussSeidel => ScheduleName::GaussSeidel,
            };
        }
        if self.gt_ratio {
            cfg.calibration.gt_ratio = true;
        }
        if let Some(v) = self.confidence {
            cfg.detection.confidence = v;
        }
        if let Some(v) = self.tb {
            cfg.detection.tb = Some(v);
        }
        if let Some(v) = self.gt {
            cfg.detection.gt = Some(v);
        }
        if let Some(v) = self.target {
            cfg.detection.target = Some(v);
        }
        if !self.figures.is_empty() {
            cfg.synthetic.figures = self.figures;
        }
        if let Some(v) = self.samples {
            cfg.synthetic.samples = v;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Clear(c) => (Mode::Clear, c),
        Command::Nash(c) => (Mode::Nash, c),
        Command::Synthetic(c) => (Mode::Synthetic, c),
        Command::Calibrate(c) => (Mode::Calibrate, c),
        Command::Detect(c) => (Mode::Detect, c),
    };
    let result = common.config().map_err(RunError::from).and_then(|cfg| run(mode, &cfg));
    match result {
        Ok(summary) => {
            for p in &summary.outputs {
                println!("wrote {}", p.display());
            }
            if summary.failed_hours > 0 {
                eprintln!("{} of {} hours failed; see the status columns", summary.failed_hours, summary.n_hours);
            }
            for n in &summary.notes {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
