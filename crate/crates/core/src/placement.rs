//! Where to put high-quality data: window search over a TREC, per-step
//! curricula, and audits of existing recipes.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ema::{ema_coefficients, schedule_timescale};
use crate::predictor::{predict_schedule, MSource, PowerLawFit, DEFAULT_P};
use crate::schedule::{boundary, lr_array, ScheduleSpec};
use crate::trec::{min_max, Trec, DEFAULT_GRID};

/// Window means closer than this (relative to the curve's range) are ties.
pub const TIE_TOLERANCE: f64 = 1e-9;
/// Default gap, in normalized curve units, above the best window's mean at
/// which a placement is called suboptimal. A toolkit convention.
pub const DEFAULT_AUDIT_MARGIN: f64 = 0.05;
/// Windows holding less than this share of EMA mass barely reach the final
/// weights.
pub const DEFAULT_RETENTION_THRESHOLD: f64 = 1e-4;
pub const RETENTION_FLAG: &str = "model retains little from this final data";
pub const SUBOPTIMAL_FLAG: &str = "suboptimal";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("number of segments must be between 1 and the curve length {len}, got {k}")]
    InvalidSegments { k: usize, len: usize },
    #[error("hq_fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("invalid window ({start}, {end}): need 0 <= start < end <= 1 and not the whole run")]
    InvalidWindow { start: f64, end: f64 },
    #[error("curve needs at least 2 points, has {0}")]
    CurveTooShort(usize),
    #[error("total_steps must be positive")]
    NoSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendLabel {
    General,
    Hq,
}

impl BlendLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlendLabel::General => "general",
            BlendLabel::Hq => "hq",
        }
    }
}

/// Mean curve value per contiguous `1/k` block. Block `i` covers indices
/// `[⌊i n / k⌋, ⌊(i+1) n / k⌋)`, so when `k` does not divide `n` block
/// sizes differ by at most one point.
pub fn segment_means(curve: &Trec, k: usize) -> Result<Vec<f64>, PlacementError> {
    let values = curve.values();
    let n = values.len();
    if k == 0 || k > n {
        return Err(PlacementError::InvalidSegments { k, len: n });
    }
    Ok((0..k)
        .map(|i| {
            let (lo, hi) = (i * n / k, (i + 1) * n / k);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedWindow {
    pub start_fraction: f64,
    pub end_fraction: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub start_fraction: f64,
    pub end_fraction: f64,
    pub expected_mean_trec: f64,
    /// More than one window reached the best mean; the latest was taken.
    pub tie: bool,
    /// Every candidate window, best first (later first among ties).
    pub segment_rank: Vec<RankedWindow>,
    /// Description of the curve the plan was computed from.
    pub source_curve: String,
}

impl PlacementPlan {
    /// A bare plan for a fixed window.
    pub fn window(start_fraction: f64, end_fraction: f64) -> Result<Self, PlacementError> {
        let plan = PlacementPlan {
            start_fraction,
            end_fraction,
            expected_mean_trec: f64::NAN,
            tie: false,
            segment_rank: Vec::new(),
            source_curve: String::new(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        let (s, e) = (self.start_fraction, self.end_fraction);
        if !(0.0 <= s && s < e && e <= 1.0) || (s == 0.0 && e == 1.0) {
            return Err(PlacementError::InvalidWindow { start: s, end: e });
        }
        Ok(())
    }
}

/// Means of all `n − w + 1` windows of `w` consecutive values.
fn window_means(values: &[f64], w: usize) -> Vec<f64> {
    const RESYNC: usize = 64;
    let n = values.len();
    let count = n - w + 1;
    let mut out = Vec::with_capacity(count);
    let mut sum = 0.0;
    for j in 0..count {
        if j % RESYNC == 0 {
            sum = values[j..j + w].iter().sum();
        } else {
            sum += values[j + w - 1] - values[j - 1];
        }
        out.push(sum / w as f64);
    }
    out
}

/// Lowest-mean contiguous window covering `hq_fraction` of a curve sampled
/// on a uniform grid. Ties go to the later window.
pub fn recommend(curve: &Trec, hq_fraction: f64) -> Result<PlacementPlan, PlacementError> {
    if !(hq_fraction > 0.0 && hq_fraction < 1.0) {
        return Err(PlacementError::InvalidFraction(hq_fraction));
    }
    let n = curve.len();
    if n < 2 {
        return Err(PlacementError::CurveTooShort(n));
    }
    let values = curve.values();
    let t_hat = curve.t_hat();
    let spacing = (t_hat[n - 1] - t_hat[0]) / (n - 1) as f64;
    let w = ((hq_fraction * n as f64).round() as usize).clamp(1, n);
    let means = window_means(&values, w);
    let (lo, hi) = min_max(&values).expect("non-empty");
    let tol = TIE_TOLERANCE * (hi - lo);

    let best_mean = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..means.len())
        .filter(|&j| means[j] <= best_mean + tol)
        .collect();
    let best = *tied.last().expect("at least one window");

    let window = |j: usize| RankedWindow {
        start_fraction: (t_hat[j] - spacing).max(0.0),
        end_fraction: t_hat[j + w - 1],
        mean: means[j],
    };
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (means[a], means[b]);
        if (ma - mb).abs() <= tol {
            b.cmp(&a)
        } else {
            ma.total_cmp(&mb)
        }
    });
    let best_window = window(best);
    Ok(PlacementPlan {
        start_fraction: best_window.start_fraction,
        end_fraction: best_window.end_fraction,
        expected_mean_trec: best_window.mean,
        tie: tied.len() > 1,
        segment_rank: order.into_iter().map(window).collect(),
        source_curve: format!(
            "{:?} curve, {} points, t_hat [{}, {}]",
            curve.kind,
            n,
            t_hat[0],
            t_hat[n - 1]
        ),
    })
}

/// One label per step: step `s` is HQ when `round(start·T) < s ≤ round(end·T)`.
pub fn emit_curriculum(plan: &PlacementPlan, total_steps: usize) -> Result<Vec<BlendLabel>, PlacementError> {
    plan.validate()?;
    if total_steps == 0 {
        return Err(PlacementError::NoSteps);
    }
    let lo = boundary(plan.start_fraction, total_steps);
    let hi = boundary(plan.end_fraction, total_steps);
    Ok((1..=total_steps)
        .map(|s| {
            if s > lo && s <= hi {
                BlendLabel::Hq
            } else {
                BlendLabel::General
            }
        })
        .collect())
}

pub fn write_curriculum_csv<W: Write>(labels: &[BlendLabel], out: W) -> Result<(), crate::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "label"])?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub margin: f64,
    pub retention_threshold: f64,
    pub grid_size: usize,
    pub p: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            margin: DEFAULT_AUDIT_MARGIN,
            retention_threshold: DEFAULT_RETENTION_THRESHOLD,
            grid_size: DEFAULT_GRID,
            p: DEFAULT_P,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schedule_kind: String,
    pub total_steps: usize,
    pub tau: f64,
    pub m: f64,
    pub hq_window: (f64, f64),
    /// Optimizer steps inside the window.
    pub window_steps: usize,
    /// Mean predicted (normalized) TREC over the window.
    pub window_mean: f64,
    /// 1 is best among all same-width windows on the grid.
    pub window_rank: usize,
    pub n_windows: usize,
    pub recommended: (f64, f64),
    pub recommended_mean: f64,
    /// Training fraction of the predicted TREC minimum.
    pub predicted_argmin: f64,
    /// The window holds the predicted minimum.
    pub contains_argmin: bool,
    /// Share of the final weights' EMA mass contributed by window steps.
    pub window_ema_mass: f64,
    pub suboptimal: bool,
    pub low_retention: bool,
    pub margin: f64,
    pub flags: Vec<String>,
    pub curve_t_hat: Vec<f64>,
    pub curve_value: Vec<f64>,
}

/// A published (or planned) training recipe: its schedule, data regime and
/// where the high-quality data sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub name: String,
    pub schedule: ScheduleSpec,
    pub tpp: f64,
    /// `(start_fraction, end_fraction)` of the HQ phase.
    pub hq_window: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Error)]
#[error("recipe field `{path}`: {message}")]
pub struct RecipeParseError {
    pub path: String,
    pub message: String,
}

pub fn parse_recipe(document: &str) -> Result<Recipe, RecipeParseError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    serde_path_to_error::deserialize(de).map_err(|e| RecipeParseError {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

impl Recipe {
    pub fn audit(&self, fit: &PowerLawFit, options: &AuditOptions) -> Result<AuditReport, crate::Error> {
        audit_recipe_with(&self.schedule, self.tpp, fit, self.hq_window, options)
    }
}

/// Compare a recipe's HQ window against the predicted TREC of its schedule.
pub fn audit_recipe(
    spec: &ScheduleSpec,
    tpp: f64,
    fit: &PowerLawFit,
    hq_window: (f64, f64),
) -> Result<AuditReport, crate::Error> {
    audit_recipe_with(spec, tpp, fit, hq_window, &AuditOptions::default())
}

pub fn audit_recipe_with(
    spec: &ScheduleSpec,
    tpp: f64,
    fit: &PowerLawFit,
    hq_window: (f64, f64),
    options: &AuditOptions,
) -> Result<AuditReport, crate::Error> {
    PlacementPlan::window(hq_window.0, hq_window.1)?;
    let source = MSource::PowerLaw {
        fit: fit.clone(),
        tpp,
    };
    let pred = predict_schedule(spec, &source, options.p, options.grid_size)?;
    let curve = &pred.curve;
    let values = curve.values();
    let n = values.len();

    // Grid point k/n (index k−1) lies in the window when
    // round(start·n) < k ≤ round(end·n).
    let lo = boundary(hq_window.0, n);
    let hi = boundary(hq_window.1, n);
    let (window_mean, w) = if hi > lo {
        (values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64, hi - lo)
    } else {
        // Narrower than a grid cell: interpolate at the window's midpoint.
        let mid = 0.5 * (hq_window.0 + hq_window.1) * n as f64;
        let i = (mid.floor() as usize).clamp(1, n) - 1;
        let j = (i + 1).min(n - 1);
        let frac = (mid - (i + 1) as f64).clamp(0.0, 1.0);
        (values[i] + (values[j] - values[i]) * frac, 1)
    };
    let means = window_means(&values, w);
    let (vlo, vhi) = min_max(&values).expect("non-empty");
    let tol = TIE_TOLERANCE * (vhi - vlo);
    let window_rank = 1 + means.iter().filter(|&&m| m < window_mean - tol).count();
    let plan = recommend(curve, w as f64 / n as f64)?;

    let t = spec.total_steps;
    let coeffs = ema_coefficients(&lr_array(spec)?, spec.weight_decay)?;
    let first = boundary(hq_window.0, t) + 1;
    let last = boundary(hq_window.1, t);
    let window_steps = last + 1 - first.min(last + 1);
    let window_ema_mass = if window_steps > 0 {
        coeffs.window_mass(first, last) / coeffs.data_mass()
    } else {
        0.0
    };

    let predicted_argmin = curve.argmin_t_hat();
    let contains_argmin = predicted_argmin > hq_window.0 && predicted_argmin <= hq_window.1;
    let suboptimal = window_mean > plan.expected_mean_trec + options.margin;
    let low_retention = window_ema_mass < options.retention_threshold;
    let mut flags = Vec::new();
    if suboptimal {
        flags.push(SUBOPTIMAL_FLAG.to_string());
    }
    if low_retention {
        flags.push(RETENTION_FLAG.to_string());
    }
    Ok(AuditReport {
        schedule_kind: spec.kind.name().to_string(),
        total_steps: t,
        tau: schedule_timescale(spec)?.tau,
        m: pred.m,
        hq_window,
        window_steps,
        window_mean,
        window_rank,
        n_windows: means.len(),
        recommended: (plan.start_fraction, plan.end_fraction),
        recommended_mean: plan.expected_mean_trec,
        predicted_argmin,
        contains_argmin,
        window_ema_mass,
        suboptimal,
        low_retention,
        margin: options.margin,
        flags,
        curve_t_hat: curve.t_hat(),
        curve_value: values,
    })
}
