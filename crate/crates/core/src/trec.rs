//! Training re-evaluation curves built from per-batch loss logs.
//!
//! Curves are compared by shape: smooth (centered window, truncated at the
//! ends) → resample onto a common training-fraction grid → min-max normalize
//! → Pearson correlation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::fmt_float;

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_GRID: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrecError {
    #[error("empty loss log")]
    Empty,
    #[error("duplicate step {0} in loss log")]
    DuplicateStep(usize),
    #[error("step {step} outside [1, {total_steps}]")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("loss at step {step} is not a finite non-negative number: {loss}")]
    InvalidLoss { step: usize, loss: f64 },
    #[error("smoothing window must be at least 1")]
    InvalidWindow,
    #[error("degenerate normalization: curve is flat")]
    DegenerateNormalization,
    #[error("undefined correlation: zero variance")]
    UndefinedCorrelation,
    #[error("curves are not on a common grid: {0}")]
    GridMismatch(String),
    #[error("log-space metric needs positive values, got {0}")]
    NonPositive(f64),
    #[error("{0}")]
    Invalid(String),
    #[error("malformed input: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub step: usize,
    pub loss: f64,
    /// Optional data-blend label (e.g. "general", "hq").
    pub tag: Option<String>,
}

impl LossEntry {
    pub fn new(step: usize, loss: f64) -> Self {
        LossEntry {
            step,
            loss,
            tag: None,
        }
    }

    pub fn tagged(step: usize, loss: f64, tag: impl Into<String>) -> Self {
        LossEntry {
            step,
            loss,
            tag: Some(tag.into()),
        }
    }
}

/// Per-batch losses. Entries are kept sorted by step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLog {
    entries: Vec<LossEntry>,
    total_steps: usize,
}

impl LossLog {
    pub fn new(mut entries: Vec<LossEntry>, total_steps: usize) -> Result<Self, TrecError> {
        entries.sort_by_key(|e| e.step);
        for w in entries.windows(2) {
            if w[0].step == w[1].step {
                return Err(TrecError::DuplicateStep(w[0].step));
            }
        }
        for e in &entries {
            if e.step == 0 || e.step > total_steps {
                return Err(TrecError::StepOutOfRange {
                    step: e.step,
                    total_steps,
                });
            }
            if !(e.loss.is_finite() && e.loss >= 0.0) {
                return Err(TrecError::InvalidLoss {
                    step: e.step,
                    loss: e.loss,
                });
            }
        }
        Ok(LossLog { entries, total_steps })
    }

    /// Log whose `T` is its largest step.
    pub fn infer_total(entries: Vec<LossEntry>) -> Result<Self, TrecError> {
        let total = entries.iter().map(|e| e.step).max().ok_or(TrecError::Empty)?;
        Self::new(entries, total)
    }

    pub fn entries(&self) -> &[LossEntry] {
        &self.entries
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.loss)
    }

    /// Read `step,loss[,tag]` CSV (header required). `total_steps` defaults to
    /// the largest step present.
    pub fn read_csv<R: Read>(input: R, total_steps: Option<usize>) -> Result<Self, TrecError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr
            .headers()
            .map_err(|e| TrecError::Format(e.to_string()))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(step_col), Some(loss_col)) = (col("step"), col("loss")) else {
            return Err(TrecError::Format(
                "loss log needs a header with `step` and `loss` columns".into(),
            ));
        };
        let tag_col = col("tag");
        let mut entries = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| TrecError::Format(e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let step: usize = field(step_col).parse().map_err(|_| {
                TrecError::Format(format!("row {}: bad step `{}`", line + 2, field(step_col)))
            })?;
            let loss: f64 = field(loss_col).parse().map_err(|_| {
                TrecError::Format(format!("row {}: bad loss `{}`", line + 2, field(loss_col)))
            })?;
            let tag = tag_col.map(field).filter(|t| !t.is_empty()).map(str::to_string);
            entries.push(LossEntry { step, loss, tag });
        }
        if entries.is_empty() {
            return Err(TrecError::Empty);
        }
        match total_steps {
            Some(t) => Self::new(entries, t),
            None => Self::infer_total(entries),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), crate::Error> {
        let tagged = self.entries.iter().any(|e| e.tag.is_some());
        let mut w = csv::Writer::from_writer(out);
        if tagged {
            w.write_record(["step", "loss", "tag"])?;
        } else {
            w.write_record(["step", "loss"])?;
        }
        for e in &self.entries {
            let mut rec = vec![e.step.to_string(), fmt_float(e.loss)];
            if tagged {
                rec.push(e.tag.clone().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrecKind {
    Measured,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrecPoint {
    pub t_hat: f64,
    pub value: f64,
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trec {
    pub points: Vec<TrecPoint>,
    pub smoothed_window: Option<usize>,
    pub normalized: bool,
    pub kind: TrecKind,
}

impl Trec {
    /// Untagged, unsmoothed, unnormalized curve. `t_hat` must be strictly
    /// increasing.
    pub fn from_values(t_hat: &[f64], values: &[f64], kind: TrecKind) -> Result<Self, TrecError> {
        if t_hat.len() != values.len() {
            return Err(TrecError::Invalid(format!(
                "{} t_hat values vs {} curve values",
                t_hat.len(),
                values.len()
            )));
        }
        if t_hat.is_empty() {
            return Err(TrecError::Empty);
        }
        if t_hat.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TrecError::Invalid("t_hat must be strictly increasing".into()));
        }
        Ok(Trec {
            points: t_hat
                .iter()
                .zip(values)
                .map(|(&t_hat, &value)| TrecPoint {
                    t_hat,
                    value,
                    tag: None,
                })
                .collect(),
            smoothed_window: None,
            normalized: false,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn t_hat(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t_hat).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    fn with_values(&self, values: Vec<f64>) -> Trec {
        Trec {
            points: self
                .points
                .iter()
                .zip(values)
                .map(|(p, value)| TrecPoint {
                    t_hat: p.t_hat,
                    value,
                    tag: p.tag.clone(),
                })
                .collect(),
            smoothed_window: self.smoothed_window,
            normalized: self.normalized,
            kind: self.kind,
        }
    }

    /// Index of the smallest value (earliest on ties).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if p.value < self.points[best].value {
                best = i;
            }
        }
        best
    }

    pub fn argmin_t_hat(&self) -> f64 {
        self.points[self.argmin()].t_hat
    }

    /// Mean value over points whose `t_hat` lies in `(start, end]`.
    pub fn window_mean(&self, start: f64, end: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.t_hat > start && p.t_hat <= end)
            .map(|p| p.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// `t_hat,value[,tag]` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), crate::Error> {
        let tagged = self.points.iter().any(|p| p.tag.is_some());
        let mut w = csv::Writer::from_writer(out);
        if tagged {
            w.write_record(["t_hat", "value", "tag"])?;
        } else {
            w.write_record(["t_hat", "value"])?;
        }
        for p in &self.points {
            let mut rec = vec![fmt_float(p.t_hat), fmt_float(p.value)];
            if tagged {
                rec.push(p.tag.clone().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, kind: TrecKind) -> Result<Self, TrecError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr
            .headers()
            .map_err(|e| TrecError::Format(e.to_string()))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(tc), Some(vc)) = (col("t_hat"), col("value")) else {
            return Err(TrecError::Format(
                "curve CSV needs a header with `t_hat` and `value` columns".into(),
            ));
        };
        let tag_col = col("tag");
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| TrecError::Format(e.to_string()))?;
            let num = |i: usize| -> Result<f64, TrecError> {
                let s = rec.get(i).unwrap_or("");
                s.parse()
                    .map_err(|_| TrecError::Format(format!("row {}: bad number `{s}`", line + 2)))
            };
            points.push(TrecPoint {
                t_hat: num(tc)?,
                value: num(vc)?,
                tag: tag_col
                    .and_then(|i| rec.get(i))
                    .filter(|t| !t.is_empty())
                    .map(str::to_string),
            });
        }
        if points.is_empty() {
            return Err(TrecError::Empty);
        }
        if points.windows(2).any(|w| !(w[1].t_hat > w[0].t_hat)) {
            return Err(TrecError::Invalid("t_hat must be strictly increasing".into()));
        }
        let lo = points.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
        Ok(Trec {
            points,
            smoothed_window: None,
            normalized: lo == 0.0 && hi == 1.0,
            kind,
        })
    }
}

pub fn build_trec(log: &LossLog) -> Result<Trec, TrecError> {
    if log.is_empty() {
        return Err(TrecError::Empty);
    }
    let t = log.total_steps as f64;
    Ok(Trec {
        points: log
            .entries
            .iter()
            .map(|e| TrecPoint {
                t_hat: e.step as f64 / t,
                value: e.loss,
                tag: e.tag.clone(),
            })
            .collect(),
        smoothed_window: None,
        normalized: false,
        kind: TrecKind::Measured,
    })
}

/// Centered moving average over `window` points, truncated at the ends. For
/// even windows the extra point is taken on the right.
pub fn smooth(curve: &Trec, window: usize) -> Result<Trec, TrecError> {
    if window == 0 {
        return Err(TrecError::InvalidWindow);
    }
    let values = curve.values();
    let n = values.len();
    let left = (window - 1) / 2;
    let right = window - 1 - left;
    let smoothed = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mut out = curve.with_values(smoothed);
    out.smoothed_window = Some(window);
    Ok(out)
}

pub fn normalize(curve: &Trec) -> Result<Trec, TrecError> {
    let values = curve.values();
    let (lo, hi) = min_max(&values).ok_or(TrecError::Empty)?;
    if !(hi > lo) {
        return Err(TrecError::DegenerateNormalization);
    }
    let span = hi - lo;
    let mut out = curve.with_values(values.iter().map(|v| (v - lo) / span).collect());
    out.normalized = true;
    Ok(out)
}

pub(crate) fn min_max(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    Some(
        values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            }),
    )
}

/// `t̂_k = k / grid_size` for `k = 1..=grid_size`: the common comparison grid.
pub fn uniform_grid(grid_size: usize) -> Vec<f64> {
    (1..=grid_size).map(|k| k as f64 / grid_size as f64).collect()
}

/// Linear interpolation onto a uniform grid spanning the curve's first and
/// last `t_hat`.
pub fn resample(curve: &Trec, grid_size: usize) -> Result<Trec, TrecError> {
    if curve.len() < 2 {
        return Err(TrecError::Invalid("resampling needs at least 2 points".into()));
    }
    if grid_size < 2 {
        return Err(TrecError::Invalid("grid_size must be at least 2".into()));
    }
    let first = curve.points[0].t_hat;
    let last = curve.points[curve.len() - 1].t_hat;
    let grid: Vec<f64> = (0..grid_size)
        .map(|k| {
            if k == grid_size - 1 {
                last
            } else {
                first + (last - first) * (k as f64 / (grid_size - 1) as f64)
            }
        })
        .collect();
    resample_onto(curve, &grid)
}

/// Linear interpolation at arbitrary increasing `grid` positions; positions
/// outside the curve's span take the nearest end value. Tags are dropped.
pub fn resample_onto(curve: &Trec, grid: &[f64]) -> Result<Trec, TrecError> {
    if curve.is_empty() {
        return Err(TrecError::Empty);
    }
    let xs = curve.t_hat();
    let ys = curve.values();
    let mut j = 0;
    let mut values = Vec::with_capacity(grid.len());
    for &x in grid {
        let v = if x <= xs[0] {
            ys[0]
        } else if x >= xs[xs.len() - 1] {
            ys[ys.len() - 1]
        } else {
            while xs[j + 1] < x {
                j += 1;
            }
            let (x0, x1) = (xs[j], xs[j + 1]);
            if x == x1 {
                ys[j + 1]
            } else {
                ys[j] + (ys[j + 1] - ys[j]) * ((x - x0) / (x1 - x0))
            }
        };
        values.push(v);
    }
    let mut out = Trec::from_values(grid, &values, curve.kind)?;
    out.smoothed_window = curve.smoothed_window;
    Ok(out)
}

/// Pearson correlation of two curves sampled on the same grid.
pub fn pearson(a: &Trec, b: &Trec) -> Result<f64, TrecError> {
    if a.len() != b.len() {
        return Err(TrecError::GridMismatch(format!(
            "{} vs {} points",
            a.len(),
            b.len()
        )));
    }
    for (p, q) in a.points.iter().zip(&b.points) {
        if (p.t_hat - q.t_hat).abs() > 1e-9 {
            return Err(TrecError::GridMismatch(format!(
                "t_hat {} vs {}",
                p.t_hat, q.t_hat
            )));
        }
    }
    pearson_values(&a.values(), &b.values())
}

pub fn pearson_values(a: &[f64], b: &[f64]) -> Result<f64, TrecError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(TrecError::GridMismatch(format!(
            "{} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(TrecError::UndefinedCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Coefficient of determination between `m` values in log space.
pub fn log_r2(true_m: &[f64], pred_m: &[f64]) -> Result<f64, TrecError> {
    if true_m.len() != pred_m.len() || true_m.len() < 2 {
        return Err(TrecError::Invalid(format!(
            "log R² needs equal lengths of at least 2, got {} and {}",
            true_m.len(),
            pred_m.len()
        )));
    }
    if let Some(&bad) = true_m.iter().chain(pred_m).find(|v| !(**v > 0.0)) {
        return Err(TrecError::NonPositive(bad));
    }
    let lt: Vec<f64> = true_m.iter().map(|v| v.ln()).collect();
    let mean = lt.iter().sum::<f64>() / lt.len() as f64;
    let ss_res: f64 = lt.iter().zip(pred_m).map(|(l, p)| (l - p.ln()).powi(2)).sum();
    let ss_tot: f64 = lt.iter().map(|l| (l - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(TrecError::UndefinedCorrelation);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// The shape-comparison protocol shared by measured and predicted curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonProtocol {
    /// Smoothing window in optimizer steps.
    pub window: usize,
    pub grid: usize,
}

impl Default for ComparisonProtocol {
    fn default() -> Self {
        ComparisonProtocol {
            window: DEFAULT_WINDOW,
            grid: DEFAULT_GRID,
        }
    }
}

impl ComparisonProtocol {
    /// Smoothing window in grid points for a run of `total_steps` steps.
    pub fn grid_window(&self, total_steps: usize) -> usize {
        ((self.window as f64 * self.grid as f64 / total_steps as f64).round() as usize).max(1)
    }

    /// Smooth at step resolution, resample onto `k / grid`, normalize.
    pub fn prepare_measured(&self, curve: &Trec) -> Result<Trec, TrecError> {
        let smoothed = smooth(curve, self.window)?;
        normalize(&resample_onto(&smoothed, &uniform_grid(self.grid))?)
    }

    /// A predicted curve on the `k / grid` grid gets the smoothing that a
    /// `window`-step filter applies to a `total_steps`-step run.
    pub fn prepare_predicted(&self, curve: &Trec, total_steps: usize) -> Result<Trec, TrecError> {
        let on_grid = resample_onto(curve, &uniform_grid(self.grid))?;
        normalize(&smooth(&on_grid, self.grid_window(total_steps))?)
    }
}
