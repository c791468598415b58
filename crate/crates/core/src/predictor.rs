//! TREC shape prediction from EMA coefficients.
//!
//! The predicted re-evaluation loss at training fraction `t̂` is
//! `1 − c(t̂)^p · t̂^m`, min-max normalized. `p` is fixed at 0.5; `m` models
//! minimizer drift and is either fit per run or taken from a power law
//! `m* = C · TPP^μ₁ · τ^μ₂` fit across runs.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ema::{continuous_coefficients, ema_coefficients, schedule_timescale, CoefficientCurve};
use crate::io::fmt_float;
use crate::schedule::{lr_array, ScheduleSpec};
use crate::trec::{
    log_r2, normalize, pearson_values, smooth, uniform_grid, Trec, TrecError, TrecKind, DEFAULT_GRID,
};

pub const DEFAULT_P: f64 = 0.5;
pub const M_SEARCH_MIN: f64 = 1e-2;
pub const M_SEARCH_MAX: f64 = 1e3;
pub const M_GRID_POINTS: usize = 64;
pub const M_REL_TOLERANCE: f64 = 1e-3;
/// Fits whose best correlation falls below this are flagged low quality.
pub const LOW_QUALITY_R: f64 = 0.5;
pub const DEFAULT_TAU_MIN: f64 = 0.001;
pub const DEFAULT_TAU_MAX: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("baseline-flat prediction: curve is constant, so its shape is undefined")]
    BaselineFlat,
    #[error("negative EMA coefficient {value} at t_hat = {t_hat}")]
    NegativeCoefficient { t_hat: f64, value: f64 },
    #[error("invalid prediction parameters: {0}")]
    InvalidParams(String),
    #[error("coefficient curve and target curve differ: {0}")]
    GridMismatch(String),
    #[error("degenerate target curve: {0}")]
    DegenerateTarget(TrecError),
    #[error("need at least 3 records after filtering, have {0}")]
    TooFewRecords(usize),
    #[error("degenerate fit: design matrix is rank deficient")]
    DegenerateFit,
    #[error("invalid fit record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionParams {
    pub p: f64,
    pub m: f64,
}

impl PredictionParams {
    pub fn new(m: f64) -> Self {
        PredictionParams { p: DEFAULT_P, m }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(PredictError::InvalidParams(format!(
                "p must be positive, got {}",
                self.p
            )));
        }
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(PredictError::InvalidParams(format!(
                "m must be positive, got {}",
                self.m
            )));
        }
        Ok(())
    }
}

/// Unnormalized `1 − c^p t̂^m` on the coefficient curve's grid.
pub fn predict_raw(c_curve: &CoefficientCurve, params: &PredictionParams) -> Result<Vec<f64>, PredictError> {
    params.validate()?;
    c_curve
        .points()
        .map(|(t, c)| {
            if !(c >= 0.0) {
                return Err(PredictError::NegativeCoefficient { t_hat: t, value: c });
            }
            Ok(1.0 - c.powf(params.p) * t.powf(params.m))
        })
        .collect()
}

/// Normalized predicted TREC.
pub fn predict_trec(c_curve: &CoefficientCurve, params: &PredictionParams) -> Result<Trec, PredictError> {
    let raw = predict_raw(c_curve, params)?;
    let curve = Trec::from_values(&c_curve.t_hat, &raw, TrecKind::Predicted)
        .map_err(|e| PredictError::Invalid(e.to_string()))?;
    normalize(&curve).map_err(|_| PredictError::BaselineFlat)
}

/// Result of fitting the training-fraction exponent to one curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MFit {
    pub m_star: f64,
    pub r_p: f64,
    /// The correlation profile over the search grid has more than one local
    /// maximum; the global one was refined.
    pub multimodal: bool,
    pub low_quality: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub p: f64,
    /// Smooth each candidate prediction over this many grid points before
    /// correlating, to match a smoothed target.
    pub smooth_window: Option<usize>,
    pub grid_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            p: DEFAULT_P,
            smooth_window: None,
            grid_points: M_GRID_POINTS,
        }
    }
}

/// Best `m` for a target curve on the same grid as `c_curve`.
pub fn fit_m(c_curve: &CoefficientCurve, true_curve: &Trec, p: f64) -> Result<MFit, PredictError> {
    fit_m_with(
        c_curve,
        true_curve,
        &FitOptions {
            p,
            ..FitOptions::default()
        },
    )
}

pub fn fit_m_with(
    c_curve: &CoefficientCurve,
    true_curve: &Trec,
    options: &FitOptions,
) -> Result<MFit, PredictError> {
    if c_curve.len() != true_curve.len() {
        return Err(PredictError::GridMismatch(format!(
            "{} coefficient points vs {} curve points",
            c_curve.len(),
            true_curve.len()
        )));
    }
    for (t, p) in c_curve.t_hat.iter().zip(&true_curve.points) {
        if (t - p.t_hat).abs() > 1e-9 {
            return Err(PredictError::GridMismatch(format!("t_hat {t} vs {}", p.t_hat)));
        }
    }
    if options.grid_points < 3 {
        return Err(PredictError::Invalid(
            "m search grid needs at least 3 points".into(),
        ));
    }
    let target = true_curve.values();
    if let Err(e) = pearson_values(&target, &target) {
        return Err(PredictError::DegenerateTarget(e));
    }
    if let Some(&bad) = c_curve.c.iter().find(|c| !(**c >= 0.0)) {
        return Err(PredictError::NegativeCoefficient {
            t_hat: f64::NAN,
            value: bad,
        });
    }
    let sqrt_c: Vec<f64> = c_curve.c.iter().map(|c| c.powf(options.p)).collect();
    let ln_t: Vec<f64> = c_curve.t_hat.iter().map(|t| t.ln()).collect();
    let score = |ln_m: f64| -> f64 {
        let m = ln_m.exp();
        let raw: Vec<f64> = sqrt_c
            .iter()
            .zip(&ln_t)
            .map(|(c, lt)| 1.0 - c * (m * lt).exp())
            .collect();
        let raw = match options.smooth_window {
            Some(w) if w > 1 => smooth_values(&raw, w),
            _ => raw,
        };
        pearson_values(&raw, &target).unwrap_or(f64::NEG_INFINITY)
    };

    let n = options.grid_points;
    let (lo, hi) = (M_SEARCH_MIN.ln(), M_SEARCH_MAX.ln());
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let profile: Vec<f64> = grid.iter().map(|&g| score(g)).collect();
    let best = profile
        .iter()
        .enumerate()
        .fold(0, |b, (i, &r)| if r > profile[b] { i } else { b });
    if profile[best] == f64::NEG_INFINITY {
        return Err(PredictError::BaselineFlat);
    }
    let multimodal = count_local_maxima(&profile) > 1;

    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(n - 1)];
    let (ln_m, r) = golden_max(&score, a, b, (1.0 + M_REL_TOLERANCE).ln());
    let (ln_m, r) = if r >= profile[best] {
        (ln_m, r)
    } else {
        (grid[best], profile[best])
    };
    Ok(MFit {
        m_star: ln_m.exp(),
        r_p: r,
        multimodal,
        low_quality: r < LOW_QUALITY_R,
    })
}

fn smooth_values(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let left = (window - 1) / 2;
    let right = window - 1 - left;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Strict interior maxima plus maxima at the grid ends, ignoring plateaus of
/// undefined correlation.
fn count_local_maxima(profile: &[f64]) -> usize {
    let n = profile.len();
    let tol = 1e-12;
    (0..n)
        .filter(|&i| {
            let v = profile[i];
            if v == f64::NEG_INFINITY {
                return false;
            }
            let left_ok = i == 0 || v > profile[i - 1] + tol;
            let right_ok = i == n - 1 || v > profile[i + 1] + tol;
            left_ok && right_ok
        })
        .count()
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// One run's fitted exponent with its regime coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub tpp: f64,
    pub tau: f64,
    pub m_star: f64,
    pub r_p: f64,
}

impl FitRecord {
    fn check(&self, index: usize) -> Result<(), PredictError> {
        for (name, v) in [("tpp", self.tpp), ("tau", self.tau), ("m_star", self.m_star)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PredictError::InvalidRecord {
                    index,
                    reason: format!("{name} must be positive, got {v}"),
                });
            }
        }
        if !(-1.0..=1.0).contains(&self.r_p) {
            return Err(PredictError::InvalidRecord {
                index,
                reason: format!("r_p must lie in [-1, 1], got {}", self.r_p),
            });
        }
        Ok(())
    }
}

/// Read `tpp,tau,m_star,r_p` CSV.
pub fn read_fit_records<R: Read>(input: R) -> Result<Vec<FitRecord>, crate::Error> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_fit_records<W: Write>(records: &[FitRecord], out: W) -> Result<(), crate::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tpp", "tau", "m_star", "r_p"])?;
    for r in records {
        w.write_record([
            fmt_float(r.tpp),
            fmt_float(r.tau),
            fmt_float(r.m_star),
            fmt_float(r.r_p),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFilters {
    pub tau_min: f64,
    pub tau_max: f64,
    /// Label attached to the resulting fit for schedule-specific laws.
    pub schedule_kind: Option<String>,
}

impl Default for FitFilters {
    fn default() -> Self {
        FitFilters {
            tau_min: DEFAULT_TAU_MIN,
            tau_max: DEFAULT_TAU_MAX,
            schedule_kind: None,
        }
    }
}

/// Coefficients of `m* = C · TPP^μ₁ · τ^μ₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    #[serde(rename = "C")]
    pub c: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Log-space R² on the fitted records; absent for hand-written laws.
    #[serde(default)]
    pub r2_log: Option<f64>,
    #[serde(default)]
    pub n_points: usize,
    #[serde(default)]
    pub schedule_kind: Option<String>,
}

impl PowerLawFit {
    pub fn new(c: f64, mu1: f64, mu2: f64) -> Self {
        PowerLawFit {
            c,
            mu1,
            mu2,
            r2_log: None,
            n_points: 0,
            schedule_kind: None,
        }
    }
}

/// A fit plus the records the filters excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawReport {
    pub fit: PowerLawFit,
    pub excluded: Vec<FitRecord>,
    pub filters: FitFilters,
}

pub fn fit_power_law(records: &[FitRecord], filters: &FitFilters) -> Result<PowerLawFit, PredictError> {
    fit_power_law_report(records, filters).map(|r| r.fit)
}

/// Ordinary least squares on `ln m* = ln C + μ₁ ln TPP + μ₂ ln τ` over the
/// records whose τ passes the filter.
pub fn fit_power_law_report(
    records: &[FitRecord],
    filters: &FitFilters,
) -> Result<PowerLawReport, PredictError> {
    for (i, r) in records.iter().enumerate() {
        r.check(i)?;
    }
    let (kept, excluded): (Vec<FitRecord>, Vec<FitRecord>) = records
        .iter()
        .partition(|r| r.tau >= filters.tau_min && r.tau <= filters.tau_max);
    let n = kept.len();
    if n < 3 {
        return Err(PredictError::TooFewRecords(n));
    }
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => kept[i].tpp.ln(),
        _ => kept[i].tau.ln(),
    });
    let y = DVector::from_iterator(n, kept.iter().map(|r| r.m_star.ln()));
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let rank_tol = smax * n.max(3) as f64 * f64::EPSILON * 1e3;
    if svd.singular_values.iter().any(|&s| s <= rank_tol) {
        return Err(PredictError::DegenerateFit);
    }
    let beta = svd.solve(&y, rank_tol).map_err(|_| PredictError::DegenerateFit)?;
    let mut fit = PowerLawFit {
        c: beta[0].exp(),
        mu1: beta[1],
        mu2: beta[2],
        r2_log: None,
        n_points: n,
        schedule_kind: filters.schedule_kind.clone(),
    };
    let truth: Vec<f64> = kept.iter().map(|r| r.m_star).collect();
    let pred: Vec<f64> = kept
        .iter()
        .map(|r| fit.c * r.tpp.powf(fit.mu1) * r.tau.powf(fit.mu2))
        .collect();
    fit.r2_log = Some(match log_r2(&truth, &pred) {
        Ok(r2) => r2,
        // All m* equal and reproduced: nothing left to explain.
        Err(TrecError::UndefinedCorrelation) => 1.0,
        Err(e) => return Err(PredictError::Invalid(e.to_string())),
    });
    Ok(PowerLawReport {
        fit,
        excluded,
        filters: filters.clone(),
    })
}

pub fn predict_m(fit: &PowerLawFit, tpp: f64, tau: f64) -> Result<f64, PredictError> {
    for (name, v) in [("tpp", tpp), ("tau", tau), ("C", fit.c)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(PredictError::Invalid(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(fit.c * tpp.powf(fit.mu1) * tau.powf(fit.mu2))
}

/// Tokens per parameter as seen by one expert under uniform routing: a model
/// with `experts` experts and `experts_per_token` active behaves like a dense
/// model trained at this reduced TPP.
pub fn effective_tpp(tpp: f64, experts: u32, experts_per_token: u32) -> Result<f64, PredictError> {
    if experts == 0 || experts_per_token == 0 || experts_per_token > experts {
        return Err(PredictError::Invalid(format!(
            "need 1 <= experts_per_token <= experts, got {experts_per_token} of {experts}"
        )));
    }
    if !(tpp.is_finite() && tpp > 0.0) {
        return Err(PredictError::Invalid(format!("tpp must be positive, got {tpp}")));
    }
    Ok(tpp * experts_per_token as f64 / experts as f64)
}

/// Where the exponent `m` comes from in a full prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum MSource {
    Fixed(f64),
    PowerLaw { fit: PowerLawFit, tpp: f64 },
}

/// A predicted curve and the quantities that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPrediction {
    pub curve: Trec,
    pub tau: f64,
    pub m: f64,
    pub p: f64,
    pub c_curve: CoefficientCurve,
}

/// Schedule → timescale → coefficients → `m` → normalized predicted TREC, on
/// the default 1000-point grid.
pub fn full_prediction(spec: &ScheduleSpec, tpp: f64, fit: &PowerLawFit) -> Result<Trec, crate::Error> {
    let source = MSource::PowerLaw {
        fit: fit.clone(),
        tpp,
    };
    Ok(predict_schedule(spec, &source, DEFAULT_P, DEFAULT_GRID)?.curve)
}

pub fn predict_schedule(
    spec: &ScheduleSpec,
    m_source: &MSource,
    p: f64,
    grid_size: usize,
) -> Result<FullPrediction, crate::Error> {
    let tau = schedule_timescale(spec)?.tau;
    let m = match m_source {
        MSource::Fixed(m) => *m,
        MSource::PowerLaw { fit, tpp } => predict_m(fit, *tpp, tau)?,
    };
    let lr = lr_array(spec)?;
    let coeffs = ema_coefficients(&lr, spec.weight_decay)?;
    let c_curve = continuous_coefficients(&coeffs, grid_size)?;
    let params = PredictionParams { p, m };
    let curve = predict_trec(&c_curve, &params)?;
    Ok(FullPrediction {
        curve,
        tau,
        m,
        p,
        c_curve,
    })
}

/// Accumulated drift proxy `∫_{t̂}^{1} η(s) h ds` at each step end, in units
/// of `h` times steps. Diagnostic only.
pub fn drift_integral(spec: &ScheduleSpec, curvature: f64) -> Result<Vec<f64>, crate::Error> {
    let lr = lr_array(spec)?;
    let mut out = vec![0.0; lr.len()];
    let mut acc = 0.0;
    for i in (0..lr.len()).rev() {
        out[i] = acc;
        acc += lr[i] * curvature;
    }
    Ok(out)
}

/// Predicted curve on the comparison grid, smoothed as a `window`-step
/// filter would smooth a `total_steps`-step run, and normalized.
pub fn predict_for_comparison(
    c_curve: &CoefficientCurve,
    params: &PredictionParams,
    smooth_window: usize,
) -> Result<Trec, PredictError> {
    let raw = predict_raw(c_curve, params)?;
    let curve = Trec::from_values(&c_curve.t_hat, &raw, TrecKind::Predicted)
        .map_err(|e| PredictError::Invalid(e.to_string()))?;
    let smoothed = smooth(&curve, smooth_window.max(1)).map_err(|e| PredictError::Invalid(e.to_string()))?;
    normalize(&smoothed).map_err(|_| PredictError::BaselineFlat)
}

/// Uniform comparison grid as a coefficient curve with `c ≡ 0`; a helper for
/// building synthetic inputs.
pub fn zero_curve(grid_size: usize) -> CoefficientCurve {
    let t_hat = uniform_grid(grid_size);
    let c = vec![0.0; t_hat.len()];
    CoefficientCurve { t_hat, c }
}
