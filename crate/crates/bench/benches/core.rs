use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use trec_core::predictor::{fit_m, predict_trec, PredictionParams};
use trec_core::{
    continuous_coefficients, ema_coefficients, lr_array, run_adamw, Optimizer, ScheduleKind, ScheduleSpec,
    SimConfig,
};

fn bench_ema(c: &mut Criterion) {
    let spec = ScheduleSpec::new(ScheduleKind::Cosine { floor_over_peak: 0.0 }, 100_000, 1e-3);
    let lr = lr_array(&spec).unwrap();
    c.bench_function("ema_coefficients T=1e5", |b| {
        b.iter(|| ema_coefficients(black_box(&lr), 0.1).unwrap())
    });
}

fn bench_fit_m(c: &mut Criterion) {
    let spec = ScheduleSpec::new(ScheduleKind::LinearD2Z, 2000, 1e-3);
    let coeffs = ema_coefficients(&lr_array(&spec).unwrap(), 5.0).unwrap();
    let curve = continuous_coefficients(&coeffs, 1000).unwrap();
    let target = predict_trec(&curve, &PredictionParams::new(3.0)).unwrap();
    c.bench_function("fit_m grid=1000", |b| {
        b.iter(|| fit_m(black_box(&curve), black_box(&target), 0.5).unwrap())
    });
}

fn bench_adamw(c: &mut Criterion) {
    let spec = ScheduleSpec::new(ScheduleKind::LinearD2Z, 2000, 5e-4).with_weight_decay(10.0);
    let mut cfg = SimConfig::new(Optimizer::AdamW, 64, spec);
    cfg.drift_amplitude = 0.05;
    cfg.batch_noise_std = 0.1;
    cfg.record_history = false;
    c.bench_function("run_adamw T=2000 D=64", |b| {
        b.iter(|| run_adamw(black_box(&cfg)).unwrap())
    });
}

criterion_group!(benches, bench_ema, bench_fit_m, bench_adamw);
criterion_main!(benches);
