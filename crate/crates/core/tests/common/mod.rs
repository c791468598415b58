//! Shared builders and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use trec_core::schedule::CyclicSegment;
use trec_core::{ScheduleKind, ScheduleSpec};

pub fn config_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(rel)
}

/// Compensated sum, written out here so tests do not lean on the crate's own.
pub fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `c0 = Π(1 − α_j)` and `c_i = α_i Π_{j>i}(1 − α_j)` by a plain backward
/// product.
pub fn direct_coefficients(alphas: &[f64]) -> (f64, Vec<f64>) {
    let mut c = vec![0.0; alphas.len()];
    let mut tail = 1.0;
    for i in (0..alphas.len()).rev() {
        c[i] = alphas[i] * tail;
        tail *= 1.0 - alphas[i];
    }
    (tail, c)
}

/// Pearson correlation from the textbook two-pass formula.
pub fn pearson_direct(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

pub const KIND_COUNT: usize = 7;

/// The seven schedule families with the parameters used across the tests.
/// Cyclic rates are absolute, so they scale with `peak`.
pub fn kind(index: usize, peak: f64) -> ScheduleKind {
    match index {
        0 => ScheduleKind::LinearD2Z,
        1 => ScheduleKind::Cosine { floor_over_peak: 0.0 },
        2 => ScheduleKind::Step {
            drop_at_fraction: 0.7,
            drop_factor: 0.1,
        },
        3 => ScheduleKind::FactorDecay { final_over_peak: 0.1 },
        4 => ScheduleKind::Wsd {
            flat_fraction: 0.7,
            decay_fraction: 0.2,
        },
        5 => ScheduleKind::Constant,
        6 => ScheduleKind::Cyclic {
            segments: vec![
                CyclicSegment {
                    fraction: 0.45,
                    start_lr: peak,
                    end_lr: 0.3 * peak,
                },
                CyclicSegment {
                    fraction: 0.45,
                    start_lr: peak,
                    end_lr: 0.0,
                },
            ],
        },
        _ => unreachable!("seven kinds"),
    }
}

/// A random valid schedule of the given family. `T` is log-uniform in
/// `t_range` and `λ·η_max` log-uniform in `alpha_range`.
pub fn random_spec(
    rng: &mut impl Rng,
    kind_index: usize,
    t_range: (usize, usize),
    alpha_range: (f64, f64),
) -> ScheduleSpec {
    loop {
        let t = log_uniform(rng, t_range.0 as f64, t_range.1 as f64).round() as usize;
        let peak = log_uniform(rng, 1e-5, 1e-1);
        let alpha = log_uniform(rng, alpha_range.0, alpha_range.1);
        let warmup = if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..0.3)
        };
        let kind = match kind_index {
            0 => ScheduleKind::LinearD2Z,
            1 => ScheduleKind::Cosine {
                floor_over_peak: if rng.random_bool(0.5) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                },
            },
            2 => ScheduleKind::Step {
                drop_at_fraction: rng.random_range(0.05..0.95),
                drop_factor: rng.random_range(0.01..1.0),
            },
            3 => ScheduleKind::FactorDecay {
                final_over_peak: rng.random_range(0.0..1.0),
            },
            4 => {
                let rest = 1.0 - warmup;
                let decay = rest * rng.random_range(0.05..1.0);
                ScheduleKind::Wsd {
                    flat_fraction: rest - decay,
                    decay_fraction: decay,
                }
            }
            5 => ScheduleKind::Constant,
            _ => {
                let n = rng.random_range(1..=4);
                let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                let mut segments: Vec<CyclicSegment> = weights
                    .iter()
                    .map(|w| CyclicSegment {
                        fraction: (1.0 - warmup) * w / total,
                        start_lr: peak * rng.random_range(0.0..1.0),
                        end_lr: peak * rng.random_range(0.0..1.0),
                    })
                    .collect();
                let head: f64 = segments[..n - 1].iter().map(|s| s.fraction).sum();
                segments[n - 1].fraction = (1.0 - warmup) - head;
                ScheduleKind::Cyclic { segments }
            }
        };
        let spec = ScheduleSpec::new(kind, t, peak)
            .with_warmup(warmup)
            .with_weight_decay(alpha / peak);
        if spec.validate().is_ok() {
            return spec;
        }
    }
}

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}
