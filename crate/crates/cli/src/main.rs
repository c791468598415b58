//! `trec-lab`: schedules, EMA coefficients, TREC prediction and fitting,
//! simulation and data placement from file-based configs.

mod commands;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "trec-lab", version, about = "Training re-evaluation curve toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Input and output paths are left out of the
/// config hash so it only depends on content.
#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Override the simulator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comparison grid size.
    #[arg(long, global = true, default_value_t = trec_core::trec::DEFAULT_GRID)]
    pub grid: usize,
    /// Moving-average window in optimizer steps.
    #[arg(long, global = true, default_value_t = trec_core::trec::DEFAULT_WINDOW)]
    pub window: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Learning rate at each step end.
    Schedule {
        #[serde(skip)]
        config: PathBuf,
    },
    /// Per-step EMA contribution coefficients and their summary.
    Ema {
        #[serde(skip)]
        config: PathBuf,
        /// Also report the mass of the final N steps.
        #[arg(long)]
        tail_steps: Option<usize>,
    },
    /// Predicted normalized TREC for a schedule.
    Predict(PredictArgs),
    /// TREC from a per-batch loss log.
    Trec {
        #[serde(skip)]
        log: PathBuf,
        /// Normalize to [0, 1] after smoothing.
        #[arg(long)]
        normalize: bool,
        /// Total training steps (default: the largest logged step).
        #[arg(long)]
        total_steps: Option<usize>,
    },
    /// Fit the exponent m to measured curves and emit fit records.
    Fit(FitArgs),
    /// Power law m = C TPP^mu1 tau^mu2 over fit records.
    FitPowerlaw {
        #[serde(skip)]
        records: PathBuf,
        #[arg(long, default_value_t = trec_core::predictor::DEFAULT_TAU_MIN)]
        tau_min: f64,
        #[arg(long, default_value_t = trec_core::predictor::DEFAULT_TAU_MAX)]
        tau_max: f64,
        /// Label stored with the fit.
        #[arg(long)]
        schedule_kind: Option<String>,
    },
    /// Run the quadratic training simulator.
    Simulate(SimulateArgs),
    /// Best window for high-quality data on a TREC.
    Place(PlaceArgs),
    /// Check a recipe's high-quality window against its predicted TREC.
    Audit(AuditArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Schedule config JSON.
    #[serde(skip)]
    pub config: PathBuf,
    /// Fixed exponent m.
    #[arg(long, conflicts_with = "powerlaw")]
    pub m: Option<f64>,
    /// Power-law fit JSON giving m from TPP and tau (needs --tpp).
    #[arg(long, requires = "tpp")]
    #[serde(skip)]
    pub powerlaw: Option<PathBuf>,
    /// Tokens per parameter.
    #[arg(long)]
    pub tpp: Option<f64>,
    /// Total experts of a mixture-of-experts model.
    #[arg(long, requires_all = ["active", "tpp"])]
    pub experts: Option<u32>,
    /// Experts active per token.
    #[arg(long, requires = "experts")]
    pub active: Option<u32>,
    #[arg(long, default_value_t = trec_core::predictor::DEFAULT_P)]
    pub p: f64,
    /// Also write predicted_trec.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Schedule config JSON, or a simulator config whose schedule is used.
    #[arg(long)]
    #[serde(skip)]
    pub config: PathBuf,
    /// Tokens per parameter recorded with each fit.
    #[arg(long)]
    pub tpp: f64,
    #[arg(long, default_value_t = trec_core::predictor::DEFAULT_P)]
    pub p: f64,
    /// Append to an existing fit_records.csv in the output directory.
    #[arg(long)]
    pub append: bool,
    /// Loss logs (`step,loss`) or curves (`t_hat,value`), detected by header.
    #[arg(required = true)]
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[serde(skip)]
    pub config: PathBuf,
    /// Sweep the high-quality segment over K windows plus a baseline.
    #[arg(long, value_name = "K", requires = "hq_offset")]
    pub placement_sweep: Option<usize>,
    /// Offset of the high-quality target from the general target.
    #[arg(long)]
    pub hq_offset: Option<f64>,
    /// Also write per-step rows to steps.csv.
    #[arg(long)]
    pub steps_csv: bool,
    /// Verify the closed-form update decomposition and print its max error.
    #[arg(long)]
    pub check_decomposition: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Measured,
    Predicted,
}

#[derive(Debug, Args, Serialize)]
pub struct PlaceArgs {
    /// Curve CSV (`t_hat,value`).
    #[serde(skip)]
    pub curve: PathBuf,
    /// Fraction of training given to high-quality data.
    #[arg(long)]
    pub hq_fraction: f64,
    /// Steps in the emitted curriculum (default: one per curve point).
    #[arg(long)]
    pub total_steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = CurveKind::Measured)]
    pub kind: CurveKind,
    /// Also write plan.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AuditArgs {
    #[serde(skip)]
    pub recipe: PathBuf,
    /// Power-law fit JSON.
    #[serde(skip)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = trec_core::placement::DEFAULT_AUDIT_MARGIN)]
    pub margin: f64,
    #[arg(long, default_value_t = trec_core::placement::DEFAULT_RETENTION_THRESHOLD)]
    pub retention_threshold: f64,
    #[arg(long, default_value_t = trec_core::predictor::DEFAULT_P)]
    pub p: f64,
    /// Also write audit.svg.
    #[arg(long)]
    pub svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trec-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
