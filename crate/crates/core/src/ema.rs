//! AdamW as an exponential moving average over weight updates.
//!
//! With smoothing `α_t = η_t λ`, the final parameters are
//! `θ_T = c₀ θ₀ + Σ_i c_i x_i` where
//! `c_i = α_i ∏_{j>i} (1 − α_j)` and `c₀ = ∏_j (1 − α_j)`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::fmt_float;
use crate::schedule::{lr_array, ScheduleSpec};

/// Below this value of `1 − α` the coefficients are computed in log space.
const LOG_ROUTE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmaError {
    /// λ = 0: AdamW reduces to Adam and the weight-decay timescale is infinite.
    #[error("timescale undefined (Adam limit, weight decay is zero)")]
    AdamLimit,
    #[error("EMA smoothing out of range at step {step}: alpha = {alpha}")]
    SmoothingOutOfRange { step: usize, alpha: f64 },
    #[error("invalid EMA input: {0}")]
    Invalid(String),
    #[error("normalization undefined: all coefficients are zero")]
    ZeroProfile,
}

/// Inputs of the AdamW timescale. `T = D / B` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimescaleParams {
    pub eta: f64,
    pub lam: f64,
    /// Tokens per optimizer step.
    pub batch_size: f64,
    /// Total training tokens.
    pub dataset_tokens: f64,
}

impl TimescaleParams {
    pub fn from_tokens(eta: f64, lam: f64, batch_size: f64, dataset_tokens: f64) -> Self {
        TimescaleParams {
            eta,
            lam,
            batch_size,
            dataset_tokens,
        }
    }

    /// Step-count form; equivalent to a batch of one token.
    pub fn from_steps(eta: f64, lam: f64, steps: f64) -> Self {
        Self::from_tokens(eta, lam, 1.0, steps)
    }

    pub fn steps(&self) -> f64 {
        self.dataset_tokens / self.batch_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timescale {
    /// Normalized timescale `1 / (η λ T)`: fraction of training averaged over.
    pub tau: f64,
    /// Iteration timescale `1 / (η λ)`.
    pub tau_iter: f64,
}

impl Timescale {
    /// Multi-epoch form `τ_iter / M` for `M` iterations per epoch. Reported
    /// only; single-epoch training is assumed everywhere else.
    pub fn tau_epoch(&self, iters_per_epoch: f64) -> f64 {
        self.tau_iter / iters_per_epoch
    }
}

pub fn timescale(params: &TimescaleParams) -> Result<Timescale, EmaError> {
    let TimescaleParams {
        eta,
        lam,
        batch_size,
        dataset_tokens,
    } = *params;
    for (name, v) in [
        ("eta", eta),
        ("batch_size", batch_size),
        ("dataset_tokens", dataset_tokens),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(EmaError::Invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if !(lam.is_finite() && lam >= 0.0) {
        return Err(EmaError::Invalid(format!("lam must be non-negative, got {lam}")));
    }
    if lam == 0.0 {
        return Err(EmaError::AdamLimit);
    }
    Ok(Timescale {
        tau: batch_size / (eta * lam * dataset_tokens),
        tau_iter: 1.0 / (eta * lam),
    })
}

/// Timescale of a schedule, using its peak learning rate.
pub fn schedule_timescale(spec: &ScheduleSpec) -> Result<Timescale, EmaError> {
    timescale(&TimescaleParams::from_steps(
        spec.peak_lr,
        spec.weight_decay,
        spec.total_steps as f64,
    ))
}

/// Per-step contribution of each update to the final weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaCoefficients {
    /// Weight of the initialization.
    pub c0: f64,
    /// `c[i]` is the weight of update `i + 1`.
    pub c: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `c0` weights the random init rather than data, so prediction and
    /// normalization paths leave it out.
    pub drop_c0_for_prediction: bool,
}

impl EmaCoefficients {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// `c0 + Σ c_i` with compensated summation; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        neumaier_sum(std::iter::once(self.c0).chain(self.c.iter().copied()))
    }

    /// Mass attributable to data, `Σ c_i`.
    pub fn data_mass(&self) -> f64 {
        neumaier_sum(self.c.iter().copied())
    }

    /// Mass of steps `first..=last` (1-based, inclusive).
    pub fn window_mass(&self, first: usize, last: usize) -> f64 {
        let lo = first.max(1) - 1;
        let hi = last.min(self.c.len());
        if lo >= hi {
            return 0.0;
        }
        neumaier_sum(self.c[lo..hi].iter().copied())
    }

    /// 1-based step with the largest coefficient (earliest on ties).
    pub fn argmax_step(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.c.iter().enumerate() {
            if v > self.c[best] {
                best = i;
            }
        }
        best + 1
    }

    /// `Σ c_i` over each tenth of training; step `i` lands in decile
    /// `⌊(i − 1) · 10 / T⌋`.
    pub fn mass_by_decile(&self) -> [f64; 10] {
        let t = self.c.len();
        let mut out = [0.0; 10];
        let mut comp = [0.0; 10];
        for (i, &v) in self.c.iter().enumerate() {
            let d = (i * 10 / t).min(9);
            neumaier_add(&mut out[d], &mut comp[d], v);
        }
        for (o, c) in out.iter_mut().zip(comp) {
            *o += c;
        }
        out
    }
}

fn neumaier_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for v in values {
        neumaier_add(&mut s, &mut c, v);
    }
    s + c
}

fn alphas(lr: &[f64], lam: f64) -> Result<Vec<f64>, EmaError> {
    if lr.is_empty() {
        return Err(EmaError::Invalid("empty learning-rate sequence".into()));
    }
    if !(lam.is_finite() && lam >= 0.0) {
        return Err(EmaError::Invalid(format!("lam must be non-negative, got {lam}")));
    }
    lr.iter()
        .enumerate()
        .map(|(i, &eta)| {
            let a = eta * lam;
            if !(eta.is_finite() && eta >= 0.0) {
                Err(EmaError::Invalid(format!(
                    "learning rate at step {} is {eta}",
                    i + 1
                )))
            } else if a >= 1.0 {
                Err(EmaError::SmoothingOutOfRange {
                    step: i + 1,
                    alpha: a,
                })
            } else {
                Ok(a)
            }
        })
        .collect()
}

/// EMA coefficients for a learning-rate sequence and weight decay `lam`.
pub fn ema_coefficients(lr: &[f64], lam: f64) -> Result<EmaCoefficients, EmaError> {
    let alphas = alphas(lr, lam)?;
    Ok(coefficients_from_alphas(alphas))
}

/// Coefficients for an arbitrary smoothing sequence with `0 ≤ α < 1`.
pub(crate) fn coefficients_from_alphas(alphas: Vec<f64>) -> EmaCoefficients {
    let mut c = vec![0.0; alphas.len()];
    let c0 = if alphas.iter().any(|&a| 1.0 - a < LOG_ROUTE_THRESHOLD) {
        let mut log_tail = 0.0_f64;
        for (ci, &a) in c.iter_mut().zip(&alphas).rev() {
            *ci = a * log_tail.exp();
            log_tail += (-a).ln_1p();
        }
        log_tail.exp()
    } else {
        // Backward running product P_{i} = P_{i+1} − c_i. For α ≤ 1/2 the
        // subtraction is exact, so c0 + Σ c_i telescopes to 1.
        let mut tail = 1.0;
        for (ci, &a) in c.iter_mut().zip(&alphas).rev() {
            *ci = a * tail;
            tail -= *ci;
        }
        tail
    };
    EmaCoefficients {
        c0,
        c,
        alphas,
        drop_c0_for_prediction: true,
    }
}

pub fn schedule_coefficients(spec: &ScheduleSpec) -> Result<EmaCoefficients, crate::Error> {
    let lr = lr_array(spec)?;
    Ok(ema_coefficients(&lr, spec.weight_decay)?)
}

/// EMA coefficients indexed by training fraction on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCurve {
    pub t_hat: Vec<f64>,
    pub c: Vec<f64>,
}

impl CoefficientCurve {
    pub fn len(&self) -> usize {
        self.t_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_hat.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.t_hat.iter().copied().zip(self.c.iter().copied())
    }

    pub fn from_points(points: &[(f64, f64)]) -> Self {
        CoefficientCurve {
            t_hat: points.iter().map(|p| p.0).collect(),
            c: points.iter().map(|p| p.1).collect(),
        }
    }
}

/// Resample `c_i` (at `t̂ = i/T`) onto the grid `t̂_k = k / grid_size`,
/// `k = 1..=grid_size`, by linear interpolation between steps. `c0` is not
/// part of the curve. Grid points before `1/T` take the first step's value.
pub fn continuous_coefficients(
    coeffs: &EmaCoefficients,
    grid_size: usize,
) -> Result<CoefficientCurve, EmaError> {
    if grid_size < 2 {
        return Err(EmaError::Invalid(format!(
            "grid_size must be at least 2, got {grid_size}"
        )));
    }
    if coeffs.c.is_empty() {
        return Err(EmaError::Invalid("no coefficients".into()));
    }
    let t = coeffs.c.len() as u128;
    let g = grid_size as u128;
    let mut t_hat = Vec::with_capacity(grid_size);
    let mut c = Vec::with_capacity(grid_size);
    for k in 1..=g {
        t_hat.push(k as f64 / grid_size as f64);
        // Position in steps: k T / G = whole + rem / G.
        let whole = (k * t / g) as usize;
        let rem = (k * t % g) as f64 / grid_size as f64;
        let v = if whole == 0 {
            coeffs.c[0]
        } else if whole >= coeffs.c.len() || rem == 0.0 {
            coeffs.c[whole.min(coeffs.c.len()) - 1]
        } else {
            let (a, b) = (coeffs.c[whole - 1], coeffs.c[whole]);
            a + (b - a) * rem
        };
        c.push(v);
    }
    Ok(CoefficientCurve { t_hat, c })
}

/// `c_i / max_i c_i`. As `λ → 0` this approaches the normalized LR schedule.
pub fn small_lambda_profile(lr: &[f64], lam: f64) -> Result<Vec<f64>, EmaError> {
    if !(lam > 0.0) {
        return Err(EmaError::Invalid(format!("lam must be positive, got {lam}")));
    }
    let coeffs = ema_coefficients(lr, lam)?;
    normalized_by_max(&coeffs.c)
}

fn normalized_by_max(values: &[f64]) -> Result<Vec<f64>, EmaError> {
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return Err(EmaError::ZeroProfile);
    }
    Ok(values.iter().map(|v| v / max).collect())
}

/// Coefficients for finite weight decay, or the normalized LR profile that
/// they converge to when `λ = 0` (plain Adam).
#[derive(Debug, Clone, PartialEq)]
pub enum EmaView {
    Decay(EmaCoefficients),
    AdamLimit { profile: Vec<f64> },
}

pub fn ema_view(lr: &[f64], lam: f64) -> Result<EmaView, EmaError> {
    if lam == 0.0 {
        alphas(lr, 0.0)?;
        Ok(EmaView::AdamLimit {
            profile: normalized_by_max(lr)?,
        })
    } else {
        Ok(EmaView::Decay(ema_coefficients(lr, lam)?))
    }
}

/// Summary emitted by `trec-lab ema`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaSummary {
    pub tau: Option<f64>,
    pub tau_iter: Option<f64>,
    pub c0: f64,
    pub argmax_step: usize,
    pub mass_by_decile: [f64; 10],
    /// `c0 + Σ c_i`; 1 up to rounding.
    pub total_mass: f64,
    /// Mass of the final `tail_steps` steps, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-step rows (`step, t_hat, alpha, c`) plus summary for a schedule.
pub fn summarize(
    spec: &ScheduleSpec,
    tail_steps: Option<usize>,
) -> Result<(Vec<[f64; 4]>, EmaSummary), crate::Error> {
    let lr = lr_array(spec)?;
    let t = lr.len();
    let t_hat = |i: usize| (i + 1) as f64 / t as f64;
    match ema_view(&lr, spec.weight_decay)? {
        EmaView::Decay(coeffs) => {
            let ts = schedule_timescale(spec)?;
            let rows = (0..t)
                .map(|i| [(i + 1) as f64, t_hat(i), coeffs.alphas[i], coeffs.c[i]])
                .collect();
            let tail_mass = tail_steps.map(|k| coeffs.window_mass(t.saturating_sub(k) + 1, t));
            let summary = EmaSummary {
                tau: Some(ts.tau),
                tau_iter: Some(ts.tau_iter),
                c0: coeffs.c0,
                argmax_step: coeffs.argmax_step(),
                mass_by_decile: coeffs.mass_by_decile(),
                total_mass: coeffs.total_mass(),
                tail_mass,
                tail_steps,
                note: None,
            };
            Ok((rows, summary))
        }
        EmaView::AdamLimit { profile } => {
            // Report the λ → 0 shape; masses are of the normalized profile.
            let total = neumaier_sum(profile.iter().copied());
            let as_mass: Vec<f64> = profile.iter().map(|p| p / total).collect();
            let pseudo = EmaCoefficients {
                c0: 0.0,
                c: as_mass,
                alphas: vec![0.0; t],
                drop_c0_for_prediction: true,
            };
            let rows = (0..t)
                .map(|i| [(i + 1) as f64, t_hat(i), 0.0, profile[i]])
                .collect();
            let tail_mass = tail_steps.map(|k| pseudo.window_mass(t.saturating_sub(k) + 1, t));
            let summary = EmaSummary {
                tau: None,
                tau_iter: None,
                c0: 0.0,
                argmax_step: pseudo.argmax_step(),
                mass_by_decile: pseudo.mass_by_decile(),
                total_mass: pseudo.total_mass(),
                tail_mass,
                tail_steps,
                note: Some(
                    "timescale undefined (Adam limit): coefficients are the normalized LR profile".into(),
                ),
            };
            Ok((rows, summary))
        }
    }
}

pub fn write_coefficients_csv<W: Write>(rows: &[[f64; 4]], out: W) -> Result<(), crate::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "t_hat", "alpha", "c"])?;
    for r in rows {
        w.write_record([
            (r[0] as u64).to_string(),
            fmt_float(r[1]),
            fmt_float(r[2]),
            fmt_float(r[3]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{ScheduleKind, ScheduleSpec};

    /// O(T²) evaluation of the defining product.
    fn product_oracle(alphas: &[f64]) -> (f64, Vec<f64>) {
        let t = alphas.len();
        let c = (0..t)
            .map(|i| {
                let mut p = alphas[i];
                for a in &alphas[i + 1..] {
                    p *= 1.0 - a;
                }
                p
            })
            .collect();
        let c0 = alphas.iter().map(|a| 1.0 - a).product();
        (c0, c)
    }

    #[test]
    fn timescale_examples() {
        let ts = timescale(&TimescaleParams::from_steps(1.0, 0.01, 100.0)).unwrap();
        assert!((ts.tau - 1.0).abs() < 1e-12);
        assert!((ts.tau_iter - 100.0).abs() < 1e-9);
        let p = TimescaleParams::from_tokens(0.5, 0.02, 1e6, 1e8);
        assert!((p.steps() - 100.0).abs() < 1e-9);
        assert!((timescale(&p).unwrap().tau - 1.0).abs() < 1e-12);
        let full = timescale(&TimescaleParams::from_steps(0.3, 0.04, 500.0)).unwrap();
        let half = timescale(&TimescaleParams::from_steps(0.3, 0.02, 500.0)).unwrap();
        assert!((half.tau - 2.0 * full.tau).abs() < 1e-12);
        assert!((full.tau_epoch(50.0) - full.tau_iter / 50.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_decay_is_adam_limit() {
        let err = timescale(&TimescaleParams::from_steps(1.0, 0.0, 10.0)).unwrap_err();
        assert_eq!(err, EmaError::AdamLimit);
        assert!(err.to_string().contains("timescale undefined"));
        assert!(matches!(
            timescale(&TimescaleParams::from_steps(-1.0, 0.1, 10.0)),
            Err(EmaError::Invalid(_))
        ));
    }

    #[test]
    fn two_step_unroll() {
        let e = ema_coefficients(&[0.5, 0.5], 1.0).unwrap();
        assert_eq!(e.c0, 0.25);
        assert_eq!(e.c, vec![0.25, 0.5]);
    }

    #[test]
    fn constant_alpha_is_geometric() {
        let a = 0.1;
        let e = ema_coefficients(&[1.0; 5], a).unwrap();
        for (i, &c) in e.c.iter().enumerate() {
            let expected = a * (1.0 - a).powi((5 - (i + 1)) as i32);
            assert!((c - expected).abs() < 1e-16, "{i}: {c} vs {expected}");
        }
    }

    #[test]
    fn matches_product_oracle_on_d2z() {
        let spec = ScheduleSpec::new(ScheduleKind::LinearD2Z, 1000, 1.0);
        let lr = lr_array(&spec).unwrap();
        let e = ema_coefficients(&lr, 0.001).unwrap();
        let alphas: Vec<f64> = lr.iter().map(|l| l * 0.001).collect();
        let (c0, c) = product_oracle(&alphas);
        let max_diff = e.c.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-14, "max diff {max_diff}");
        assert!((e.c0 - c0).abs() < 1e-14);
    }

    #[test]
    fn alpha_of_one_is_rejected() {
        let err = ema_coefficients(&[0.1, 2.0, 0.1], 0.5).unwrap_err();
        assert_eq!(err, EmaError::SmoothingOutOfRange { step: 2, alpha: 1.0 });
        assert!(err.to_string().contains("out of range at step 2"));
    }

    #[test]
    fn zero_alpha_gives_zero_coefficient() {
        let e = ema_coefficients(&[0.3, 0.0, 0.2, 0.0], 1.0).unwrap();
        assert_eq!(e.c[1], 0.0);
        assert_eq!(e.c[3], 0.0);
        assert!(e.c[2] > 0.0);
    }

    #[test]
    fn near_one_alpha_uses_log_route() {
        let a = 1.0 - 1e-13;
        let e = ema_coefficients(&[0.2, a, 0.3], 1.0).unwrap();
        let (c0, c) = product_oracle(&e.alphas);
        for (x, y) in e.c.iter().zip(&c) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((e.c0 - c0).abs() < 1e-20);
        assert!((e.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_equal_to_steps_is_identity() {
        let e = ema_coefficients(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.5).unwrap();
        let curve = continuous_coefficients(&e, 5).unwrap();
        assert_eq!(curve.c, e.c);
        assert_eq!(curve.t_hat, vec![0.2, 0.4, 0.6, 0.8, 1.0]);
    }

    #[test]
    fn constant_coefficients_survive_any_grid() {
        let e = EmaCoefficients {
            c0: 0.0,
            c: vec![0.25; 37],
            alphas: vec![0.0; 37],
            drop_c0_for_prediction: true,
        };
        for g in [2, 10, 37, 100, 1000] {
            let curve = continuous_coefficients(&e, g).unwrap();
            assert_eq!(curve.len(), g);
            assert!(curve.c.iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn linear_coefficients_resample_exactly() {
        // c_i = a + b i: interpolation must reproduce the line at t̂ = k/G, and
        // on a divisor grid each value equals the mean of its two neighbours.
        let t = 1000;
        let line = |x: f64| 1e-3 + 2e-6 * x;
        let e = EmaCoefficients {
            c0: 0.0,
            c: (1..=t).map(|i| line(i as f64)).collect(),
            alphas: vec![0.0; t],
            drop_c0_for_prediction: true,
        };
        let curve = continuous_coefficients(&e, 250).unwrap();
        for (k, &v) in curve.c.iter().enumerate() {
            let step = 4 * (k + 1);
            if step < t {
                let avg = 0.5 * (e.c[step - 2] + e.c[step]);
                assert!((v - avg).abs() < 1e-6);
            }
            assert!((v - line(step as f64)).abs() < 1e-15);
        }
        let odd = continuous_coefficients(&e, 300).unwrap();
        for (&th, &v) in odd.t_hat.iter().zip(&odd.c) {
            assert!((v - line(th * t as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn small_grid_rejected() {
        let e = ema_coefficients(&[0.1; 4], 0.1).unwrap();
        assert!(continuous_coefficients(&e, 1).is_err());
    }

    #[test]
    fn small_lambda_approaches_lr_shape() {
        for kind in [
            ScheduleKind::LinearD2Z,
            ScheduleKind::FactorDecay { final_over_peak: 0.1 },
        ] {
            let lr = lr_array(&ScheduleSpec::new(kind, 1000, 1.0)).unwrap();
            let profile = small_lambda_profile(&lr, 1e-8).unwrap();
            let max_lr = lr.iter().copied().fold(0.0, f64::max);
            let dev = profile
                .iter()
                .zip(&lr)
                .map(|(p, l)| (p - l / max_lr).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-5, "deviation {dev}");
        }
    }

    #[test]
    fn large_lambda_concentrates_on_last_nonzero_step() {
        // Flat rate with a zero-LR suffix; α = 0.999 wherever η > 0.
        let mut lr = vec![1.0; 197];
        lr.extend([0.0; 3]);
        let profile = small_lambda_profile(&lr, 0.999).unwrap();
        assert_eq!(profile[196], 1.0);
        assert!(profile[..196].iter().all(|&p| p < 1e-2));
        assert!(profile[197..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn all_zero_lr_profile_errors() {
        assert_eq!(small_lambda_profile(&[0.0; 5], 0.1), Err(EmaError::ZeroProfile));
    }

    #[test]
    fn decile_masses_sum_to_data_mass() {
        let spec = ScheduleSpec::new(ScheduleKind::LinearD2Z, 997, 0.5).with_weight_decay(0.01);
        let e = schedule_coefficients(&spec).unwrap();
        let total: f64 = e.mass_by_decile().iter().sum();
        assert!((total - e.data_mass()).abs() < 1e-14);
        assert!((e.window_mass(1, 997) - e.data_mass()).abs() < 1e-15);
    }

    #[test]
    fn adam_limit_summary_is_flagged() {
        let spec = ScheduleSpec::new(ScheduleKind::LinearD2Z, 50, 0.1);
        let (rows, summary) = summarize(&spec, None).unwrap();
        assert!(summary.tau.is_none());
        assert!(summary.note.unwrap().contains("timescale undefined"));
        assert_eq!(rows.len(), 50);
        assert!((summary.total_mass - 1.0).abs() < 1e-12);
    }
}
