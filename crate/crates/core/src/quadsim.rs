//! Quadratic training simulator.
//!
//! Each batch `t` defines a separable quadratic loss
//! `½ Σ_d h_d (θ_d − target_{t,d})²`. Targets follow a slowly drifting global
//! path plus i.i.d. batch noise, so the minimizer moves during training and
//! the loss of the final parameters on every past batch (the TREC) is exact.
//!
//! Random numbers come from ChaCha8 with one stream per optimizer step and
//! Box–Muller normals (`chacha8-boxmuller-v1`), so any batch target can be
//! regenerated without replaying the run.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ema::{coefficients_from_alphas, ema_coefficients, EmaError};
use crate::schedule::{boundary, lr_array, ScheduleError, ScheduleSpec};
use crate::trec::{build_trec, ComparisonProtocol, LossEntry, LossLog, Trec, TrecError};

pub const RNG_ALGORITHM: &str = "chacha8-boxmuller-v1";
/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "TREC_LAB_THREADS";

const DRIFT_STREAM: u64 = u64::MAX;
const HQ_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Ema(#[from] EmaError),
    #[error(transparent)]
    Trec(#[from] TrecError),
    #[error("invalid simulator config `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unstable: {what} = {value} at step {step} (must be < 1)")]
    Unstable {
        what: &'static str,
        step: usize,
        value: f64,
    },
    #[error("decomposition check unavailable: {0}")]
    DecompositionUnavailable(&'static str),
    #[error("simulator config field `{path}`: {message}")]
    Parse { path: String, message: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "SGD")]
    Sgd,
    AdamW,
}

/// One curvature shared by all dimensions, or one per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Curvature {
    Uniform(f64),
    PerDim(Vec<f64>),
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature::Uniform(1.0)
    }
}

impl Curvature {
    fn resolve(&self, dims: usize) -> Vec<f64> {
        match self {
            Curvature::Uniform(h) => vec![*h; dims],
            Curvature::PerDim(h) => h.clone(),
        }
    }
}

/// Window of training where batches come from the high-quality distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HqSegment {
    pub start_fraction: f64,
    pub end_fraction: f64,
    /// Scale of the HQ distribution's offset from the general targets.
    pub hq_target_offset: f64,
}

impl HqSegment {
    /// Step `s` is HQ when `round(start·T) < s ≤ round(end·T)`.
    pub fn contains(&self, step: usize, total_steps: usize) -> bool {
        step > boundary(self.start_fraction, total_steps) && step <= boundary(self.end_fraction, total_steps)
    }
}

/// Linear curvature ramp `h(t̂) = h · (1 + (r − 1) t̂)`. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSchedule {
    pub final_over_initial: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_eps() -> f64 {
    1e-8
}
fn default_max_frequency() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub optimizer: Optimizer,
    pub dims: usize,
    /// Must equal `lr_schedule.total_steps` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub lr_schedule: ScheduleSpec,
    /// λ for AdamW. Ignored by SGD.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub curvature: Curvature,
    #[serde(default)]
    pub drift_amplitude: f64,
    #[serde(default)]
    pub batch_noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init_theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hq_segment: Option<HqSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_schedule: Option<CurvatureSchedule>,
    /// Highest drift frequency in cycles per run; the lowest is a quarter.
    #[serde(default = "default_max_frequency")]
    pub drift_max_frequency: f64,
    /// Keep per-step targets and updates (needed for the decomposition check).
    #[serde(default = "default_true")]
    pub record_history: bool,
}

impl SimConfig {
    /// Parse and validate a JSON config. Errors carry the offending field path.
    pub fn from_json(document: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(document);
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| SimError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn new(optimizer: Optimizer, dims: usize, lr_schedule: ScheduleSpec) -> Self {
        SimConfig {
            optimizer,
            dims,
            steps: None,
            weight_decay: lr_schedule.weight_decay,
            lr_schedule,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            curvature: Curvature::default(),
            drift_amplitude: 0.0,
            batch_noise_std: 0.0,
            seed: 0,
            init_theta: 0.0,
            hq_segment: None,
            curvature_schedule: None,
            drift_max_frequency: default_max_frequency(),
            record_history: true,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.lr_schedule.total_steps
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.lr_schedule.validate()?;
        if self.dims == 0 {
            return Err(invalid("dims", "must be at least 1"));
        }
        if let Some(s) = self.steps {
            if s != self.lr_schedule.total_steps {
                return Err(invalid(
                    "steps",
                    format!(
                        "{s} differs from lr_schedule.total_steps {}",
                        self.lr_schedule.total_steps
                    ),
                ));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(invalid("beta1", "must lie in [0, 1)"));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(invalid("beta2", "must lie in (0, 1)"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(invalid("epsilon", "must be non-negative"));
        }
        let h = self.curvature.resolve(self.dims);
        if h.len() != self.dims {
            return Err(invalid(
                "curvature",
                format!("{} values for {} dims", h.len(), self.dims),
            ));
        }
        if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("curvature", "every h must be positive"));
        }
        for (field, v) in [
            ("drift_amplitude", self.drift_amplitude),
            ("batch_noise_std", self.batch_noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        if !self.init_theta.is_finite() {
            return Err(invalid("init_theta", "must be finite"));
        }
        if !(self.drift_max_frequency.is_finite() && self.drift_max_frequency > 0.0) {
            return Err(invalid("drift_max_frequency", "must be positive"));
        }
        if let Some(seg) = &self.hq_segment {
            if !(0.0 <= seg.start_fraction
                && seg.start_fraction < seg.end_fraction
                && seg.end_fraction <= 1.0)
            {
                return Err(invalid(
                    "hq_segment",
                    "need 0 <= start_fraction < end_fraction <= 1",
                ));
            }
            if !seg.hq_target_offset.is_finite() {
                return Err(invalid("hq_segment", "hq_target_offset must be finite"));
            }
        }
        if let Some(cs) = &self.curvature_schedule {
            if !(cs.final_over_initial.is_finite() && cs.final_over_initial > 0.0) {
                return Err(invalid(
                    "curvature_schedule",
                    "final_over_initial must be positive",
                ));
            }
        }
        Ok(())
    }

    fn curvature_at(&self, base: &[f64], step: usize, out: &mut [f64]) {
        let scale = match &self.curvature_schedule {
            Some(cs) => {
                let t_hat = step as f64 / self.total_steps() as f64;
                1.0 + (cs.final_over_initial - 1.0) * t_hat
            }
            None => 1.0,
        };
        for (o, h) in out.iter_mut().zip(base) {
            *o = h * scale;
        }
    }
}

/// Smooth drift path. Coordinates are paired and each pair turns on a circle
/// at its own random frequency, so `|W(t)|` is constant and the distance
/// between two points of the path depends only on how far apart they are.
/// A trailing odd coordinate follows a cosine.
#[derive(Debug, Clone)]
struct DriftPath {
    /// Per pair: (angular frequency, phase).
    pairs: Vec<(f64, f64)>,
}

impl DriftPath {
    fn new(rng: &mut ChaCha8Rng, dims: usize, max_freq: f64) -> Self {
        let pairs = (0..dims.div_ceil(2))
            .map(|_| {
                let f = max_freq * (0.25 + 0.75 * uniform(rng));
                let phase = 2.0 * PI * uniform(rng);
                (2.0 * PI * f, phase)
            })
            .collect();
        DriftPath { pairs }
    }

    /// Unit RMS per coordinate.
    fn at(&self, dim: usize, t_hat: f64) -> f64 {
        let (w, phi) = self.pairs[dim / 2];
        let angle = w * t_hat + phi;
        let v = if dim.is_multiple_of(2) {
            angle.cos()
        } else {
            angle.sin()
        };
        std::f64::consts::SQRT_2 * v
    }

    fn fill(&self, t_hat: f64, scale: f64, out: &mut [f64]) {
        for (j, &(w, phi)) in self.pairs.iter().enumerate() {
            let (s, c) = (w * t_hat + phi).sin_cos();
            let k = 2 * j;
            out[k] += scale * std::f64::consts::SQRT_2 * c;
            if k + 1 < out.len() {
                out[k + 1] += scale * std::f64::consts::SQRT_2 * s;
            }
        }
    }
}

/// Uniform in `[0, 1)` with 53 random bits.
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let u1 = 1.0 - uniform(rng);
        let u2 = uniform(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        out[i] = r * c;
        if i + 1 < out.len() {
            out[i + 1] = r * s;
        }
        i += 2;
    }
}

/// Deterministic batch-target generator.
#[derive(Debug, Clone)]
struct Targets {
    base: ChaCha8Rng,
    drift: DriftPath,
    hq_path: DriftPath,
    amplitude: f64,
    noise: f64,
    hq: Option<HqSegment>,
    total_steps: usize,
}

impl Targets {
    fn new(cfg: &SimConfig) -> Self {
        let base = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut rng = base.clone();
        rng.set_stream(DRIFT_STREAM);
        let drift = DriftPath::new(&mut rng, cfg.dims, cfg.drift_max_frequency);
        let mut rng = base.clone();
        rng.set_stream(HQ_STREAM);
        let hq_path = DriftPath::new(&mut rng, cfg.dims, cfg.drift_max_frequency);
        Targets {
            base,
            drift,
            hq_path,
            amplitude: cfg.drift_amplitude,
            noise: cfg.batch_noise_std,
            hq: cfg.hq_segment,
            total_steps: cfg.total_steps(),
        }
    }

    fn is_hq(&self, step: usize) -> bool {
        self.hq.is_some_and(|s| s.contains(step, self.total_steps))
    }

    /// Targets of batch `step` (1-based).
    fn fill(&self, step: usize, out: &mut [f64]) {
        let t_hat = step as f64 / self.total_steps as f64;
        if self.noise > 0.0 {
            let mut rng = self.base.clone();
            rng.set_stream(step as u64);
            fill_normals(&mut rng, out);
            for v in out.iter_mut() {
                *v *= self.noise;
            }
        } else {
            out.fill(0.0);
        }
        let hq_offset = match self.hq {
            Some(seg) if self.is_hq(step) => Some(seg.hq_target_offset),
            _ => None,
        };
        self.drift.fill(t_hat, self.amplitude, out);
        if let Some(off) = hq_offset {
            self.hq_path.fill(t_hat, off, out);
        }
    }

    /// Minimizer of the HQ distribution at the end of training.
    fn hq_mean(&self, offset: f64, dims: usize) -> Vec<f64> {
        (0..dims)
            .map(|d| self.amplitude * self.drift.at(d, 1.0) + offset * self.hq_path.at(d, 1.0))
            .collect()
    }
}

/// A completed simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub config: SimConfig,
    pub lr: Vec<f64>,
    pub theta0: Vec<f64>,
    pub final_theta: Vec<f64>,
    /// Row-major `T × D`, when history was recorded.
    pub batch_targets: Option<Vec<f64>>,
    /// Row-major `T × D`: AdamW's `x_t = −m̂/(√v̂+ε)/λ`, or the SGD targets
    /// each step averages in. `None` without history or when `λ = 0`.
    pub updates: Option<Vec<f64>>,
    pub reeval_losses: LossLog,
    pub train_losses: LossLog,
}

impl SimRun {
    pub fn dims(&self) -> usize {
        self.config.dims
    }

    pub fn total_steps(&self) -> usize {
        self.lr.len()
    }

    /// Targets of batch `step` (1-based), from history or regenerated.
    pub fn target(&self, step: usize) -> Vec<f64> {
        let d = self.dims();
        match &self.batch_targets {
            Some(all) => all[(step - 1) * d..step * d].to_vec(),
            None => {
                let mut out = vec![0.0; d];
                Targets::new(&self.config).fill(step, &mut out);
                out
            }
        }
    }

    pub fn final_theta_norm(&self) -> f64 {
        self.final_theta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Curvatures of batch `step`'s surface.
    pub fn curvature(&self, step: usize) -> Vec<f64> {
        let base = self.config.curvature.resolve(self.dims());
        let mut h = vec![0.0; base.len()];
        self.config.curvature_at(&base, step, &mut h);
        h
    }

    /// Smoothing coefficient reported per step: `ηλ` for AdamW, `η h̄` for SGD.
    pub fn alpha(&self, step: usize) -> f64 {
        let eta = self.lr[step - 1];
        match self.config.optimizer {
            Optimizer::AdamW => eta * self.config.weight_decay,
            Optimizer::Sgd => {
                let h = self.curvature(step);
                eta * h.iter().sum::<f64>() / h.len() as f64
            }
        }
    }

    /// Loss at the final parameters on the HQ distribution's end-of-training
    /// minimizer for an HQ offset of `offset`.
    pub fn hq_eval_loss(&self, offset: f64) -> f64 {
        let mean = Targets::new(&self.config).hq_mean(offset, self.dims());
        let h = self.curvature(self.total_steps());
        half_sq(&self.final_theta, &mean, &h)
    }

    /// Max abs difference between the final parameters and their EMA
    /// reconstruction `c₀θ₀ + Σ c_i x_i`, relative to `‖θ_T‖∞`.
    pub fn decomposition_error(&self) -> Result<f64, SimError> {
        let (Some(updates), Some(_)) = (&self.updates, &self.batch_targets) else {
            return Err(SimError::DecompositionUnavailable(
                "no recorded history (record_history is off or λ = 0)",
            ));
        };
        let d = self.dims();
        let t = self.total_steps();
        let mut recon = vec![0.0; d];
        match self.config.optimizer {
            Optimizer::AdamW => {
                let coeffs = ema_coefficients(&self.lr, self.config.weight_decay)?;
                for (k, r) in recon.iter_mut().enumerate() {
                    let mut acc = coeffs.c0 * self.theta0[k];
                    for i in 0..t {
                        acc += coeffs.c[i] * updates[i * d + k];
                    }
                    *r = acc;
                }
            }
            Optimizer::Sgd => {
                let hs: Vec<Vec<f64>> = (1..=t).map(|s| self.curvature(s)).collect();
                for (k, r) in recon.iter_mut().enumerate() {
                    let alphas = (0..t).map(|i| self.lr[i] * hs[i][k]).collect();
                    let coeffs = coefficients_from_alphas(alphas);
                    let mut acc = coeffs.c0 * self.theta0[k];
                    for i in 0..t {
                        acc += coeffs.c[i] * updates[i * d + k];
                    }
                    *r = acc;
                }
            }
        }
        let scale = self
            .final_theta
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let err = recon
            .iter()
            .zip(&self.final_theta)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        Ok(err / scale)
    }

    pub fn summary(&self, hq_offset: Option<f64>) -> SimSummary {
        SimSummary {
            optimizer: self.config.optimizer,
            steps: self.total_steps(),
            dims: self.dims(),
            seed: self.config.seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            final_theta_norm: self.final_theta_norm(),
            trec_argmin_t_hat: simulated_trec(self).ok().map(|c| c.argmin_t_hat()),
            hq_eval_loss: hq_offset
                .or(self.config.hq_segment.map(|s| s.hq_target_offset))
                .map(|o| self.hq_eval_loss(o)),
            decomposition_max_rel_error: self.decomposition_error().ok(),
        }
    }

    /// Per-step rows `step, lr, alpha, train_loss, reeval_loss`.
    pub fn write_steps_csv<W: std::io::Write>(&self, out: W) -> Result<(), crate::Error> {
        use crate::io::fmt_float;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "lr", "alpha", "train_loss", "reeval_loss"])?;
        for (i, (tr, re)) in self
            .train_losses
            .entries()
            .iter()
            .zip(self.reeval_losses.entries())
            .enumerate()
        {
            let step = i + 1;
            w.write_record([
                step.to_string(),
                fmt_float(self.lr[i]),
                fmt_float(self.alpha(step)),
                fmt_float(tr.loss),
                fmt_float(re.loss),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub optimizer: Optimizer,
    pub steps: usize,
    pub dims: usize,
    pub seed: u64,
    pub rng_algorithm: String,
    pub final_theta_norm: f64,
    pub trec_argmin_t_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hq_eval_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition_max_rel_error: Option<f64>,
}

fn half_sq(theta: &[f64], target: &[f64], h: &[f64]) -> f64 {
    0.5 * theta
        .iter()
        .zip(target)
        .zip(h)
        .map(|((a, b), h)| h * (a - b) * (a - b))
        .sum::<f64>()
}

pub fn run_sgd(config: &SimConfig) -> Result<SimRun, SimError> {
    if config.optimizer != Optimizer::Sgd {
        return Err(invalid("optimizer", "run_sgd needs optimizer SGD"));
    }
    simulate(config)
}

pub fn run_adamw(config: &SimConfig) -> Result<SimRun, SimError> {
    if config.optimizer != Optimizer::AdamW {
        return Err(invalid("optimizer", "run_adamw needs optimizer AdamW"));
    }
    simulate(config)
}

/// Run whichever optimizer the config names.
pub fn simulate(config: &SimConfig) -> Result<SimRun, SimError> {
    config.validate()?;
    let lr = lr_array(&config.lr_schedule)?;
    let t_total = lr.len();
    let d = config.dims;
    let base_h = config.curvature.resolve(d);
    let lam = config.weight_decay;
    let mut h = vec![0.0; d];

    // Stability is checked before any work is done.
    for (i, &eta) in lr.iter().enumerate() {
        let step = i + 1;
        match config.optimizer {
            Optimizer::AdamW => {
                if eta * lam >= 1.0 {
                    return Err(SimError::Unstable {
                        what: "eta*lambda",
                        step,
                        value: eta * lam,
                    });
                }
            }
            Optimizer::Sgd => {
                config.curvature_at(&base_h, step, &mut h);
                let a = eta * h.iter().cloned().fold(0.0, f64::max);
                if a >= 1.0 {
                    return Err(SimError::Unstable {
                        what: "eta*h",
                        step,
                        value: a,
                    });
                }
            }
        }
    }

    let targets = Targets::new(config);
    let theta0 = vec![config.init_theta; d];
    let mut theta = theta0.clone();
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let keep_updates = config.record_history && !(config.optimizer == Optimizer::AdamW && lam == 0.0);
    let mut hist_targets = config.record_history.then(|| Vec::with_capacity(t_total * d));
    let mut hist_updates = keep_updates.then(|| Vec::with_capacity(t_total * d));
    let mut target = vec![0.0; d];
    let mut train = Vec::with_capacity(t_total);

    for (i, &eta) in lr.iter().enumerate() {
        let step = i + 1;
        targets.fill(step, &mut target);
        config.curvature_at(&base_h, step, &mut h);
        train.push(tagged_entry(step, half_sq(&theta, &target, &h), &targets, config));
        match config.optimizer {
            Optimizer::Sgd => {
                for k in 0..d {
                    let a = eta * h[k];
                    theta[k] = (1.0 - a) * theta[k] + a * target[k];
                }
                if let Some(u) = hist_updates.as_mut() {
                    u.extend_from_slice(&target);
                }
            }
            Optimizer::AdamW => {
                b1t *= config.beta1;
                b2t *= config.beta2;
                for k in 0..d {
                    let g = h[k] * (theta[k] - target[k]);
                    m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
                    v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
                    let m_hat = m[k] / (1.0 - b1t);
                    let v_hat = v[k] / (1.0 - b2t);
                    let dir = m_hat / (v_hat.sqrt() + config.epsilon);
                    if let Some(u) = hist_updates.as_mut() {
                        u.push(-dir / lam);
                    }
                    theta[k] -= eta * (dir + lam * theta[k]);
                }
            }
        }
        if let Some(tg) = hist_targets.as_mut() {
            tg.extend_from_slice(&target);
        }
    }

    let mut reeval = Vec::with_capacity(t_total);
    for step in 1..=t_total {
        match &hist_targets {
            Some(all) => target.copy_from_slice(&all[(step - 1) * d..step * d]),
            None => targets.fill(step, &mut target),
        }
        config.curvature_at(&base_h, step, &mut h);
        reeval.push(tagged_entry(step, half_sq(&theta, &target, &h), &targets, config));
    }

    Ok(SimRun {
        config: config.clone(),
        lr,
        theta0,
        final_theta: theta,
        batch_targets: hist_targets,
        updates: hist_updates,
        reeval_losses: LossLog::new(reeval, t_total)?,
        train_losses: LossLog::new(train, t_total)?,
    })
}

fn tagged_entry(step: usize, loss: f64, targets: &Targets, config: &SimConfig) -> LossEntry {
    match config.hq_segment {
        None => LossEntry::new(step, loss),
        Some(_) if targets.is_hq(step) => LossEntry::tagged(step, loss, "hq"),
        Some(_) => LossEntry::tagged(step, loss, "general"),
    }
}

/// The run's re-evaluation losses under the standard comparison protocol.
pub fn simulated_trec(run: &SimRun) -> Result<Trec, SimError> {
    simulated_trec_with(run, &ComparisonProtocol::default())
}

pub fn simulated_trec_with(run: &SimRun, protocol: &ComparisonProtocol) -> Result<Trec, SimError> {
    Ok(protocol.prepare_measured(&build_trec(&run.reeval_losses)?)?)
}

/// One placement of the HQ segment (`segment = None` is the no-HQ baseline).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// 1-based segment index.
    pub segment: Option<usize>,
    pub start_fraction: f64,
    pub end_fraction: f64,
    pub hq_eval_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementSweep {
    /// Baseline first, then segments in order.
    pub rows: Vec<SweepRow>,
    pub baseline_trec: Trec,
}

impl PlacementSweep {
    pub fn segments(&self) -> &[SweepRow] {
        &self.rows[1..]
    }

    pub fn baseline(&self) -> &SweepRow {
        &self.rows[0]
    }

    /// 1-based segment with the lowest HQ eval loss; the later one on ties.
    pub fn best_segment(&self) -> usize {
        let segs = self.segments();
        let mut best = 0;
        for (i, r) in segs.iter().enumerate() {
            if r.hq_eval_loss <= segs[best].hq_eval_loss {
                best = i;
            }
        }
        best + 1
    }

    pub fn baseline_argmin_t_hat(&self) -> f64 {
        self.baseline_trec.argmin_t_hat()
    }

    /// 1-based segment whose window `((i−1)/k, i/k]` holds the baseline TREC
    /// argmin.
    pub fn argmin_segment(&self) -> usize {
        let k = self.segments().len();
        segment_of(self.baseline_argmin_t_hat(), k)
    }
}

pub fn segment_of(t_hat: f64, k: usize) -> usize {
    ((t_hat * k as f64 - 1e-9).ceil() as usize).clamp(1, k)
}

/// Run a baseline plus one simulation per `1/k` window with the HQ segment
/// placed there. All runs share the base seed, so they differ only in where
/// HQ batches land.
pub fn placement_experiment(
    base: &SimConfig,
    segments: usize,
    hq_target_offset: f64,
) -> Result<PlacementSweep, SimError> {
    if base.hq_segment.is_some() {
        return Err(invalid("hq_segment", "must be unset for a placement sweep"));
    }
    if segments < 2 {
        return Err(invalid("segments", "need at least 2"));
    }
    base.validate()?;
    let mut cfgs = vec![None];
    cfgs.extend((1..=segments).map(Some));
    let job = |seg: &Option<usize>| -> Result<(SweepRow, Option<Trec>), SimError> {
        let mut cfg = base.clone();
        cfg.record_history = false;
        let (start, end) = match seg {
            Some(i) => ((i - 1) as f64 / segments as f64, *i as f64 / segments as f64),
            None => (0.0, 0.0),
        };
        if seg.is_some() {
            cfg.hq_segment = Some(HqSegment {
                start_fraction: start,
                end_fraction: end,
                hq_target_offset,
            });
        }
        let run = simulate(&cfg)?;
        let trec = if seg.is_none() {
            Some(simulated_trec(&run)?)
        } else {
            None
        };
        Ok((
            SweepRow {
                segment: *seg,
                start_fraction: start,
                end_fraction: end,
                hq_eval_loss: run.hq_eval_loss(hq_target_offset),
            },
            trec,
        ))
    };
    let results: Vec<Result<(SweepRow, Option<Trec>), SimError>> =
        with_sweep_pool(|| cfgs.par_iter().map(job).collect());
    let mut rows = Vec::with_capacity(results.len());
    let mut baseline_trec = None;
    for r in results {
        let (row, trec) = r?;
        if trec.is_some() {
            baseline_trec = trec;
        }
        rows.push(row);
    }
    Ok(PlacementSweep {
        rows,
        baseline_trec: baseline_trec.expect("baseline run is always present"),
    })
}

/// Run `f` on a pool capped by `TREC_LAB_THREADS` when set.
pub fn with_sweep_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    fn constant(t: usize, lr: f64) -> ScheduleSpec {
        ScheduleSpec::new(ScheduleKind::Constant, t, lr).with_warmup(0.0)
    }

    #[test]
    fn three_step_sgd_unroll() {
        // α = 0.5 every step, targets 1, 2, 3 and θ₀ = 0.
        let coeffs = coefficients_from_alphas(vec![0.5; 3]);
        assert_eq!(coeffs.c, vec![0.125, 0.25, 0.5]);
        assert_eq!(coeffs.c0, 0.125);
        let targets = [1.0, 2.0, 3.0];
        let mut theta = 0.0;
        for tg in targets {
            theta = 0.5 * theta + 0.5 * tg;
        }
        let unrolled: f64 = coeffs.c.iter().zip(targets).map(|(c, t)| c * t).sum();
        assert_eq!(theta, unrolled);
        assert_eq!(unrolled, 2.125);
    }

    #[test]
    fn sgd_converges_to_fixed_target() {
        let mut cfg = SimConfig::new(Optimizer::Sgd, 4, constant(200, 0.1));
        cfg.init_theta = 3.0;
        let run = run_sgd(&cfg).unwrap();
        assert!(run.final_theta.iter().all(|v| v.abs() < 1e-8));
        let losses: Vec<f64> = run.reeval_losses.losses().collect();
        assert!(losses.iter().all(|l| *l == losses[0]));
    }

    #[test]
    fn sgd_matches_unrolled_ema() {
        let spec = ScheduleSpec::new(ScheduleKind::LinearD2Z, 17, 0.6).with_warmup(0.2);
        let mut cfg = SimConfig::new(Optimizer::Sgd, 3, spec);
        cfg.curvature = Curvature::PerDim(vec![0.5, 1.0, 1.5]);
        cfg.batch_noise_std = 0.7;
        cfg.drift_amplitude = 1.3;
        cfg.init_theta = -0.4;
        cfg.seed = 11;
        let run = run_sgd(&cfg).unwrap();
        assert!(run.decomposition_error().unwrap() < 1e-12);
    }

    #[test]
    fn sgd_rejects_unstable_rates() {
        let mut cfg = SimConfig::new(Optimizer::Sgd, 1, constant(5, 0.6));
        cfg.curvature = Curvature::Uniform(2.0);
        assert!(matches!(run_sgd(&cfg), Err(SimError::Unstable { .. })));
    }

    #[test]
    fn quadratic_gradient() {
        // One AdamW step from θ = 0 with β₁ = 0: m̂ = g = −h τ*.
        let mut cfg = SimConfig::new(Optimizer::AdamW, 1, constant(1, 1e-3).with_weight_decay(0.1));
        cfg.weight_decay = 0.1;
        cfg.beta1 = 0.0;
        cfg.drift_amplitude = 1.0;
        cfg.curvature = Curvature::Uniform(2.0);
        let run = run_adamw(&cfg).unwrap();
        let tau_star = run.target(1)[0];
        let g = 2.0 * (0.0 - tau_star);
        assert_eq!(g, -2.0 * tau_star);
        // v̂ = g², so the normalized step is g / (|g| + ε).
        let x = run.updates.as_ref().unwrap()[0];
        assert!((x - (-(g / (g.abs() + 1e-8)) / 0.1)).abs() < 1e-12);
    }

    fn adamw_cfg(kind: ScheduleKind, beta1: f64) -> SimConfig {
        let spec = ScheduleSpec::new(kind, 1000, 2e-3).with_weight_decay(5.0);
        let mut cfg = SimConfig::new(Optimizer::AdamW, 16, spec);
        cfg.beta1 = beta1;
        cfg.drift_amplitude = 0.05;
        cfg.batch_noise_std = 0.1;
        cfg.init_theta = 0.02;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn adamw_decomposition_is_exact() {
        for beta1 in [0.0, 0.9] {
            let run = run_adamw(&adamw_cfg(ScheduleKind::LinearD2Z, beta1)).unwrap();
            assert!(run.decomposition_error().unwrap() < 1e-6);
        }
    }

    #[test]
    fn adam_limit_has_no_decomposition() {
        let mut cfg = adamw_cfg(ScheduleKind::LinearD2Z, 0.9);
        cfg.weight_decay = 0.0;
        cfg.lr_schedule.weight_decay = 0.0;
        let run = run_adamw(&cfg).unwrap();
        assert!(matches!(
            run.decomposition_error(),
            Err(SimError::DecompositionUnavailable(_))
        ));
    }

    #[test]
    fn reeval_losses_recompute_from_fields() {
        let run = run_adamw(&adamw_cfg(ScheduleKind::Cosine { floor_over_peak: 0.0 }, 0.9)).unwrap();
        for e in run.reeval_losses.entries().iter().step_by(97) {
            let tg = run.target(e.step);
            let expected: f64 = run
                .final_theta
                .iter()
                .zip(&tg)
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum();
            assert_eq!(e.loss, expected);
        }
    }

    #[test]
    fn regenerated_targets_match_history() {
        let run = run_adamw(&adamw_cfg(ScheduleKind::LinearD2Z, 0.9)).unwrap();
        let mut no_hist = run.config.clone();
        no_hist.record_history = false;
        let run2 = run_adamw(&no_hist).unwrap();
        assert_eq!(run.final_theta, run2.final_theta);
        assert_eq!(run.reeval_losses, run2.reeval_losses);
        assert_eq!(run.target(500), run2.target(500));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = adamw_cfg(ScheduleKind::LinearD2Z, 0.9);
        let a = run_adamw(&cfg).unwrap();
        let b = run_adamw(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 4;
        assert_ne!(run_adamw(&other).unwrap().final_theta, a.final_theta);
    }

    #[test]
    fn zero_momentum_run_gives_a_trec() {
        let run = run_adamw(&adamw_cfg(ScheduleKind::LinearD2Z, 0.0)).unwrap();
        let trec = simulated_trec(&run).unwrap();
        assert!(trec.normalized);
    }

    #[test]
    fn constant_target_trec_is_degenerate() {
        let cfg = SimConfig::new(Optimizer::Sgd, 2, constant(300, 0.05));
        let run = run_sgd(&cfg).unwrap();
        assert_eq!(
            simulated_trec(&run),
            Err(SimError::Trec(TrecError::DegenerateNormalization))
        );
    }

    #[test]
    fn zero_lr_suffix_ignores_its_targets() {
        let seg = |fraction, start_lr, end_lr| crate::schedule::CyclicSegment {
            fraction,
            start_lr,
            end_lr,
        };
        let spec = ScheduleSpec::new(
            ScheduleKind::Cyclic {
                segments: vec![seg(0.8, 2e-3, 1e-3), seg(0.2, 0.0, 0.0)],
            },
            500,
            2e-3,
        )
        .with_warmup(0.0)
        .with_weight_decay(5.0);
        let mut cfg = SimConfig::new(Optimizer::AdamW, 8, spec);
        cfg.drift_amplitude = 0.05;
        cfg.batch_noise_std = 0.1;
        let a = run_adamw(&cfg).unwrap();
        // Perturb the suffix targets through the HQ mechanism.
        cfg.hq_segment = Some(HqSegment {
            start_fraction: 0.8,
            end_fraction: 1.0,
            hq_target_offset: 10.0,
        });
        let b = run_adamw(&cfg).unwrap();
        assert_eq!(a.final_theta, b.final_theta);
    }

    #[test]
    fn hq_segment_bounds() {
        let seg = HqSegment {
            start_fraction: 0.4,
            end_fraction: 0.5,
            hq_target_offset: 1.0,
        };
        let hq: Vec<usize> = (1..=10).filter(|&s| seg.contains(s, 10)).collect();
        assert_eq!(hq, vec![5]);
    }

    #[test]
    fn zero_offset_placements_tie() {
        let mut cfg = adamw_cfg(ScheduleKind::LinearD2Z, 0.9);
        cfg.lr_schedule.total_steps = 400;
        let sweep = placement_experiment(&cfg, 4, 0.0).unwrap();
        assert_eq!(sweep.rows.len(), 5);
        let l0 = sweep.rows[0].hq_eval_loss;
        assert!(sweep.rows.iter().all(|r| r.hq_eval_loss == l0));
        // Ties resolve to the latest segment.
        assert_eq!(sweep.best_segment(), 4);
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let doc = r#"{"optimizer":"AdamW","dims":2,"lr_schedule":{"kind":"Constant","total_steps":10,"peak_lr":0.001},"weight_decay":0.1,"bogus":1}"#;
        assert!(serde_json::from_str::<SimConfig>(doc).is_err());
        let ok = doc.replace(",\"bogus\":1", "");
        let cfg: SimConfig = serde_json::from_str(&ok).unwrap();
        assert_eq!(cfg.beta2, 0.95);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn segment_lookup() {
        assert_eq!(segment_of(0.7, 10), 7);
        assert_eq!(segment_of(0.701, 10), 8);
        assert_eq!(segment_of(0.001, 10), 1);
        assert_eq!(segment_of(1.0, 10), 10);
    }
}
