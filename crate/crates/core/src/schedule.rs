//! Learning-rate schedules evaluated at optimizer step ends.
//!
//! Every schedule is a linear warmup from zero to `peak_lr` followed by a
//! kind-specific decay body. Steps are 1-based: `lr_at(spec, t)` is the rate
//! applied by update `t`, so `lr_array(spec)[T - 1]` is the last rate used.
//!
//! Phase boundaries are integer step indices obtained by rounding
//! `fraction * T`; the final boundary is always exactly `T`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::io::fmt_float;

/// Tolerance on fraction bookkeeping (WSD and Cyclic phase fractions).
pub const FRACTION_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("step {step} out of range [1, {total_steps}]")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("invalid schedule field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("schedule parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
}

impl ScheduleError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ScheduleError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Field path of the offending value, when there is one.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            ScheduleError::Invalid { field, .. } => Some(field),
            ScheduleError::Parse { path, .. } => Some(path),
            ScheduleError::StepOutOfRange { .. } => None,
        }
    }
}

/// One linear piece of a cyclic schedule. `start_lr` and `end_lr` are
/// absolute learning rates; the piece reaches `end_lr` on its last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CyclicSegment {
    pub fraction: f64,
    pub start_lr: f64,
    pub end_lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// Linear decay to zero.
    LinearD2Z,
    Cosine {
        floor_over_peak: f64,
    },
    /// Constant rate with one discrete drop at `drop_at_fraction` of training.
    Step {
        drop_at_fraction: f64,
        drop_factor: f64,
    },
    /// Linear decay from peak to `final_over_peak * peak` ("10x" is 0.1).
    FactorDecay {
        final_over_peak: f64,
    },
    /// Warmup, stable at peak, then linear decay to zero.
    Wsd {
        flat_fraction: f64,
        decay_fraction: f64,
    },
    Cyclic {
        segments: Vec<CyclicSegment>,
    },
    Constant,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::LinearD2Z => "LinearD2Z",
            ScheduleKind::Cosine { .. } => "Cosine",
            ScheduleKind::Step { .. } => "Step",
            ScheduleKind::FactorDecay { .. } => "FactorDecay",
            ScheduleKind::Wsd { .. } => "WSD",
            ScheduleKind::Cyclic { .. } => "Cyclic",
            ScheduleKind::Constant => "Constant",
        }
    }
}

/// Declarative LR / weight-decay schedule over `total_steps` optimizer steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub total_steps: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    /// Constant weight decay λ.
    pub weight_decay: f64,
}

impl ScheduleSpec {
    /// A spec with the default 10% warmup and no weight decay.
    pub fn new(kind: ScheduleKind, total_steps: usize, peak_lr: f64) -> Self {
        ScheduleSpec {
            kind,
            total_steps,
            peak_lr,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            weight_decay: 0.0,
        }
    }

    pub fn with_warmup(mut self, warmup_fraction: f64) -> Self {
        self.warmup_fraction = warmup_fraction;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let t = self.total_steps;
        if t == 0 {
            return Err(ScheduleError::invalid("total_steps", "must be positive"));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(ScheduleError::invalid(
                "peak_lr",
                "must be a positive finite number",
            ));
        }
        if !(self.warmup_fraction >= 0.0 && self.warmup_fraction < 1.0) {
            return Err(ScheduleError::invalid("warmup_fraction", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(ScheduleError::invalid(
                "weight_decay",
                "must be non-negative and finite",
            ));
        }
        let warmup = boundary(self.warmup_fraction, t);
        if warmup >= t {
            return Err(ScheduleError::invalid(
                "warmup_fraction",
                format!("warmup covers all {t} steps, leaving no decay body"),
            ));
        }
        let unit = |field: &str, v: f64, lo_open: bool| -> Result<(), ScheduleError> {
            let lo_ok = if lo_open { v > 0.0 } else { v >= 0.0 };
            if v.is_finite() && lo_ok && v <= 1.0 {
                Ok(())
            } else {
                let lo = if lo_open { "(0" } else { "[0" };
                Err(ScheduleError::invalid(field, format!("must lie in {lo}, 1]")))
            }
        };
        match &self.kind {
            ScheduleKind::LinearD2Z | ScheduleKind::Constant => {}
            ScheduleKind::Cosine { floor_over_peak } => {
                unit("params.floor_over_peak", *floor_over_peak, false)?
            }
            ScheduleKind::Step {
                drop_at_fraction,
                drop_factor,
            } => {
                if !(drop_at_fraction.is_finite() && *drop_at_fraction > 0.0 && *drop_at_fraction < 1.0) {
                    return Err(ScheduleError::invalid(
                        "params.drop_at_fraction",
                        "must lie in (0, 1)",
                    ));
                }
                unit("params.drop_factor", *drop_factor, true)?;
            }
            ScheduleKind::FactorDecay { final_over_peak } => {
                unit("params.final_over_peak", *final_over_peak, false)?
            }
            ScheduleKind::Wsd {
                flat_fraction,
                decay_fraction,
            } => {
                unit("params.flat_fraction", *flat_fraction, false)?;
                unit("params.decay_fraction", *decay_fraction, true)?;
                let total = self.warmup_fraction + flat_fraction + decay_fraction;
                if (total - 1.0).abs() > FRACTION_TOLERANCE {
                    return Err(ScheduleError::invalid(
                        "params",
                        format!("warmup + flat + decay fractions sum to {total}, expected 1"),
                    ));
                }
                if boundary(self.warmup_fraction + flat_fraction, t) >= t {
                    return Err(ScheduleError::invalid(
                        "params.decay_fraction",
                        "decay phase rounds to zero steps",
                    ));
                }
            }
            ScheduleKind::Cyclic { segments } => {
                if segments.is_empty() {
                    return Err(ScheduleError::invalid("params.segments", "must not be empty"));
                }
                let mut total = 0.0;
                for (i, seg) in segments.iter().enumerate() {
                    if !(seg.fraction.is_finite() && seg.fraction > 0.0) {
                        return Err(ScheduleError::invalid(
                            format!("params.segments[{i}].fraction"),
                            "must be positive",
                        ));
                    }
                    for (name, v) in [("start_lr", seg.start_lr), ("end_lr", seg.end_lr)] {
                        if !(v.is_finite() && v >= 0.0) {
                            return Err(ScheduleError::invalid(
                                format!("params.segments[{i}].{name}"),
                                "must be non-negative and finite",
                            ));
                        }
                    }
                    total += seg.fraction;
                }
                let expected = 1.0 - self.warmup_fraction;
                if (total - expected).abs() > FRACTION_TOLERANCE {
                    return Err(ScheduleError::invalid(
                        "params.segments",
                        format!("segment fractions sum to {total}, expected {expected}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Step indices delimiting the schedule's phases, from 0 to `T`.
    /// Consecutive differences are the phase lengths; they sum to `T`.
    pub fn phase_boundaries(&self) -> Vec<usize> {
        let t = self.total_steps;
        let warmup = boundary(self.warmup_fraction, t);
        let mut out = vec![0, warmup];
        match &self.kind {
            ScheduleKind::Step { drop_at_fraction, .. } => {
                out.push(boundary(*drop_at_fraction, t).max(warmup))
            }
            ScheduleKind::Wsd { flat_fraction, .. } => {
                out.push(boundary(self.warmup_fraction + flat_fraction, t))
            }
            ScheduleKind::Cyclic { segments } => {
                let mut acc = self.warmup_fraction;
                for seg in &segments[..segments.len() - 1] {
                    acc += seg.fraction;
                    out.push(boundary(acc, t).max(*out.last().unwrap()));
                }
            }
            _ => {}
        }
        out.push(t);
        out
    }

    /// Learning rate at `step` without range checks; `step = 0` is the
    /// pre-training point (zero when there is a warmup).
    pub(crate) fn eval(&self, step: usize, bounds: &[usize]) -> f64 {
        let t = self.total_steps;
        let peak = self.peak_lr;
        let warmup = bounds[1];
        if step <= warmup && warmup > 0 {
            return lerp(0.0, peak, step, warmup);
        }
        let body = step - warmup;
        let body_len = t - warmup;
        match &self.kind {
            ScheduleKind::LinearD2Z => lerp(peak, 0.0, body, body_len),
            ScheduleKind::Constant => peak,
            ScheduleKind::Cosine { floor_over_peak } => {
                let floor = peak * floor_over_peak;
                let u = body as f64 / body_len as f64;
                floor + (peak - floor) * 0.5 * (1.0 + (PI * u).cos())
            }
            ScheduleKind::FactorDecay { final_over_peak } => {
                lerp(peak, peak * final_over_peak, body, body_len)
            }
            ScheduleKind::Step { drop_factor, .. } => {
                if step <= bounds[2] {
                    peak
                } else {
                    peak * drop_factor
                }
            }
            ScheduleKind::Wsd { .. } => {
                let flat_end = bounds[2];
                if step <= flat_end {
                    peak
                } else {
                    lerp(peak, 0.0, step - flat_end, t - flat_end)
                }
            }
            ScheduleKind::Cyclic { segments } => {
                // bounds = [0, warmup, b_1, ..., b_{k-1}, T]
                let edges = &bounds[1..];
                let k = edges
                    .windows(2)
                    .position(|w| step > w[0] && step <= w[1])
                    .unwrap_or(segments.len() - 1);
                let (lo, hi) = (edges[k], edges[k + 1]);
                let seg = segments[k];
                lerp(seg.start_lr, seg.end_lr, step - lo, hi - lo)
            }
        }
    }
}

/// Every linear piece goes through this one helper so that schedules sharing
/// a tail produce bit-identical rates there.
#[inline]
fn lerp(from: f64, to: f64, pos: usize, len: usize) -> f64 {
    if len == 0 {
        return to;
    }
    from + (to - from) * (pos as f64 / len as f64)
}

#[inline]
pub(crate) fn boundary(fraction: f64, total_steps: usize) -> usize {
    let b = (fraction * total_steps as f64).round();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(total_steps)
    }
}

pub fn lr_at(spec: &ScheduleSpec, step: usize) -> Result<f64, ScheduleError> {
    spec.validate()?;
    if step == 0 || step > spec.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total_steps: spec.total_steps,
        });
    }
    Ok(spec.eval(step, &spec.phase_boundaries()))
}

/// Rates for steps `1..=T`.
pub fn lr_array(spec: &ScheduleSpec) -> Result<Vec<f64>, ScheduleError> {
    spec.validate()?;
    let bounds = spec.phase_boundaries();
    Ok((1..=spec.total_steps).map(|s| spec.eval(s, &bounds)).collect())
}

pub fn write_lr_csv<W: Write>(spec: &ScheduleSpec, out: W) -> Result<(), crate::Error> {
    let lrs = lr_array(spec)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "lr"])?;
    for (i, lr) in lrs.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_float(*lr)])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON document form:
// {"kind", "total_steps", "peak_lr", "warmup_fraction", "weight_decay", "params"}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    total_steps: u64,
    peak_lr: f64,
    #[serde(default = "default_warmup")]
    warmup_fraction: f64,
    #[serde(default)]
    weight_decay: f64,
    #[serde(default)]
    params: Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CosineParams {
    #[serde(default)]
    floor_over_peak: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepParams {
    drop_at_fraction: f64,
    drop_factor: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorParams {
    final_over_peak: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WsdParams {
    flat_fraction: f64,
    decay_fraction: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CyclicParams {
    segments: Vec<CyclicSegment>,
}

fn params<T: serde::de::DeserializeOwned>(map: Map<String, Value>) -> Result<T, ScheduleError> {
    serde_path_to_error::deserialize(Value::Object(map)).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." {
            "params".to_string()
        } else {
            format!("params.{inner}")
        };
        ScheduleError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

impl TryFrom<RawSpec> for ScheduleSpec {
    type Error = ScheduleError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        let kind = match raw.kind.as_str() {
            "LinearD2Z" => {
                params::<NoParams>(raw.params)?;
                ScheduleKind::LinearD2Z
            }
            "Constant" => {
                params::<NoParams>(raw.params)?;
                ScheduleKind::Constant
            }
            "Cosine" => {
                let p: CosineParams = params(raw.params)?;
                ScheduleKind::Cosine {
                    floor_over_peak: p.floor_over_peak,
                }
            }
            "Step" => {
                let p: StepParams = params(raw.params)?;
                ScheduleKind::Step {
                    drop_at_fraction: p.drop_at_fraction,
                    drop_factor: p.drop_factor,
                }
            }
            "FactorDecay" => {
                let p: FactorParams = params(raw.params)?;
                ScheduleKind::FactorDecay {
                    final_over_peak: p.final_over_peak,
                }
            }
            "WSD" => {
                let p: WsdParams = params(raw.params)?;
                ScheduleKind::Wsd {
                    flat_fraction: p.flat_fraction,
                    decay_fraction: p.decay_fraction,
                }
            }
            "Cyclic" => {
                let p: CyclicParams = params(raw.params)?;
                ScheduleKind::Cyclic { segments: p.segments }
            }
            other => {
                return Err(ScheduleError::Parse {
                    path: "kind".into(),
                    message: format!(
                        "unknown schedule kind `{other}` (expected one of LinearD2Z, Cosine, \
                         Step, FactorDecay, WSD, Cyclic, Constant)"
                    ),
                })
            }
        };
        let total_steps = usize::try_from(raw.total_steps).map_err(|_| ScheduleError::Parse {
            path: "total_steps".into(),
            message: "too large".into(),
        })?;
        let spec = ScheduleSpec {
            kind,
            total_steps,
            peak_lr: raw.peak_lr,
            warmup_fraction: raw.warmup_fraction,
            weight_decay: raw.weight_decay,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ScheduleSpec> for RawSpec {
    fn from(spec: ScheduleSpec) -> Self {
        let mut params = Map::new();
        let mut put = |k: &str, v: f64| {
            params.insert(k.to_string(), Value::from(v));
        };
        match &spec.kind {
            ScheduleKind::LinearD2Z | ScheduleKind::Constant => {}
            ScheduleKind::Cosine { floor_over_peak } => put("floor_over_peak", *floor_over_peak),
            ScheduleKind::Step {
                drop_at_fraction,
                drop_factor,
            } => {
                put("drop_at_fraction", *drop_at_fraction);
                put("drop_factor", *drop_factor);
            }
            ScheduleKind::FactorDecay { final_over_peak } => put("final_over_peak", *final_over_peak),
            ScheduleKind::Wsd {
                flat_fraction,
                decay_fraction,
            } => {
                put("flat_fraction", *flat_fraction);
                put("decay_fraction", *decay_fraction);
            }
            ScheduleKind::Cyclic { segments } => {
                params.insert(
                    "segments".into(),
                    serde_json::to_value(segments).expect("segments serialize"),
                );
            }
        }
        RawSpec {
            kind: spec.kind.name().to_string(),
            total_steps: spec.total_steps as u64,
            peak_lr: spec.peak_lr,
            warmup_fraction: spec.warmup_fraction,
            weight_decay: spec.weight_decay,
            params,
        }
    }
}

/// Parse a JSON schedule document. Errors carry the offending field path.
pub fn parse_schedule(document: &str) -> Result<ScheduleSpec, ScheduleError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let raw: RawSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScheduleError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    ScheduleSpec::try_from(raw)
}

pub fn to_json(spec: &ScheduleSpec) -> String {
    serde_json::to_string_pretty(spec).expect("schedule serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d2z(t: usize) -> ScheduleSpec {
        ScheduleSpec::new(ScheduleKind::LinearD2Z, t, 1.0)
    }

    #[test]
    fn linear_d2z_warmup_and_midpoint() {
        let s = d2z(100);
        assert_eq!(lr_at(&s, 10).unwrap(), 1.0);
        assert_eq!(lr_at(&s, 55).unwrap(), 0.5);
        assert_eq!(lr_at(&s, 100).unwrap(), 0.0);
    }

    #[test]
    fn warmup_starts_from_zero() {
        let s = d2z(100);
        let b = s.phase_boundaries();
        assert_eq!(s.eval(0, &b), 0.0);
        assert!((lr_at(&s, 1).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn step_drop_at_seventy_percent() {
        let s = ScheduleSpec::new(
            ScheduleKind::Step {
                drop_at_fraction: 0.7,
                drop_factor: 0.1,
            },
            100,
            1.0,
        );
        assert_eq!(lr_at(&s, 69).unwrap(), 1.0);
        assert_eq!(lr_at(&s, 70).unwrap(), 1.0);
        assert_eq!(lr_at(&s, 71).unwrap(), 0.1);
    }

    #[test]
    fn small_arrays() {
        let c = ScheduleSpec::new(ScheduleKind::Constant, 3, 2.0).with_warmup(0.0);
        assert_eq!(lr_array(&c).unwrap(), vec![2.0, 2.0, 2.0]);
        assert_eq!(
            lr_array(&d2z(4).with_warmup(0.0)).unwrap(),
            vec![0.75, 0.5, 0.25, 0.0]
        );
        let wsd = ScheduleSpec::new(
            ScheduleKind::Wsd {
                flat_fraction: 0.8,
                decay_fraction: 0.2,
            },
            10,
            1.0,
        )
        .with_warmup(0.0);
        let lrs = lr_array(&wsd).unwrap();
        assert_eq!(&lrs[8..], &[0.5, 0.0]);
        assert!(lrs[..8].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn out_of_range_steps() {
        let s = d2z(10);
        assert!(matches!(lr_at(&s, 0), Err(ScheduleError::StepOutOfRange { .. })));
        assert!(matches!(lr_at(&s, 11), Err(ScheduleError::StepOutOfRange { .. })));
    }

    #[test]
    fn cosine_and_factor_endpoints() {
        let cos = ScheduleSpec::new(ScheduleKind::Cosine { floor_over_peak: 0.0 }, 1000, 3e-4);
        assert!(lr_at(&cos, 1000).unwrap() <= 3e-4 * 1e-9);
        let fd = ScheduleSpec::new(ScheduleKind::FactorDecay { final_over_peak: 0.1 }, 1000, 1.0);
        assert!((lr_at(&fd, 1000).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let s = parse_schedule(r#"{"kind":"LinearD2Z","total_steps":100,"peak_lr":0.01}"#).unwrap();
        assert_eq!(s.warmup_fraction, 0.1);
        assert_eq!(s.weight_decay, 0.0);
        assert_eq!(s.kind, ScheduleKind::LinearD2Z);
    }

    #[test]
    fn negative_peak_names_field() {
        let err = parse_schedule(r#"{"kind":"LinearD2Z","total_steps":100,"peak_lr":-1.0}"#).unwrap_err();
        assert_eq!(err.field_path(), Some("peak_lr"));
        assert!(err.to_string().contains("peak_lr"));
    }

    #[test]
    fn parse_errors_carry_paths() {
        let err = parse_schedule(r#"{"kind":"Spiral","total_steps":10,"peak_lr":1.0}"#).unwrap_err();
        assert_eq!(err.field_path(), Some("kind"));
        let err = parse_schedule(
            r#"{"kind":"Step","total_steps":10,"peak_lr":1.0,"params":{"drop_at_fraction":0.5}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("drop_factor"), "{err}");
        let err = parse_schedule(r#"{"kind":"LinearD2Z","peak_lr":1.0}"#).unwrap_err();
        assert!(err.to_string().contains("total_steps"), "{err}");
        let err = parse_schedule(
            r#"{"kind":"Cyclic","total_steps":10,"peak_lr":1.0,"warmup_fraction":0.0,
                "params":{"segments":[{"fraction":1.0,"start_lr":1.0,"end_lr":-2.0}]}}"#,
        )
        .unwrap_err();
        assert_eq!(err.field_path(), Some("params.segments[0].end_lr"));
    }

    #[test]
    fn multi_phase_document_as_cyclic() {
        // warmup 2%, long stable phase, a "reasoning" phase held at a lower
        // rate, and a final anneal to zero.
        let doc = r#"{
            "kind": "Cyclic", "total_steps": 10000, "peak_lr": 1.5e-4,
            "warmup_fraction": 0.02, "weight_decay": 0.1,
            "params": {"segments": [
                {"fraction": 0.78, "start_lr": 1.5e-4, "end_lr": 1.5e-4},
                {"fraction": 0.15, "start_lr": 1.5e-4, "end_lr": 7.5e-6},
                {"fraction": 0.05, "start_lr": 7.5e-6, "end_lr": 0.0}
            ]}
        }"#;
        let s = parse_schedule(doc).unwrap();
        let ScheduleKind::Cyclic { segments } = &s.kind else {
            panic!("expected cyclic")
        };
        assert_eq!(segments.len(), 3);
        assert_eq!(s.phase_boundaries(), vec![0, 200, 8000, 9500, 10000]);
        let lrs = lr_array(&s).unwrap();
        assert_eq!(lrs[8000 - 1], 1.5e-4);
        assert!((lrs[9500 - 1] - 7.5e-6).abs() < 1e-18);
        assert_eq!(lrs[9999], 0.0);
    }

    #[test]
    fn cyclic_fractions_must_cover_post_warmup() {
        let s = ScheduleSpec::new(
            ScheduleKind::Cyclic {
                segments: vec![CyclicSegment {
                    fraction: 0.5,
                    start_lr: 1.0,
                    end_lr: 0.0,
                }],
            },
            100,
            1.0,
        );
        let err = s.validate().unwrap_err();
        assert_eq!(err.field_path(), Some("params.segments"));
    }

    #[test]
    fn warmup_swallowing_run_is_rejected() {
        let s = d2z(3).with_warmup(0.9);
        assert!(s.validate().is_err());
    }

    #[test]
    fn lr_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_lr_csv(&d2z(4).with_warmup(0.0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,lr");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("2,5.0000000000000000e-1"));
    }
}
