use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ddfl_core::estimator::{build_z_matrices, estimate_beta, EstimatorState};
use ddfl_core::numerics::DEFAULT_RANK_TOL;
use ddfl_core::simloop::{
    ExcitationSettings, FeedbackSpec, InitialState, NoiseConfig, PlantConfig,
};
use ddfl_core::{
    build_extended_model, make_vdp_demo, rk4_hold_step, run_experiment, ExcitationConfig,
    ExperimentConfig, FullState, RunMode, SignalWindow,
};

fn case2() -> ExperimentConfig {
    ExperimentConfig {
        plant: PlantConfig {
            kind: "vdp-demo".into(),
            coupling: 0,
            perturbation_gain: 0.0,
        },
        sampling_time: 0.02,
        horizon: 15.0,
        initial_state: InitialState {
            eta: vec![1.0, 0.0],
            xi: vec![2.5, 0.0],
        },
        l: 8,
        m: 3,
        feedback: FeedbackSpec::Gain(vec![-20.0, -10.0]),
        excitation: ExcitationSettings {
            amplitude: 1.0,
            seed: 1,
        },
        substeps: None,
        noise: NoiseConfig::default(),
        rank_tol: DEFAULT_RANK_TOL,
        mode: RunMode::ClosedLoop,
        transient_cut: 0.4,
        tail_fraction: 0.2,
    }
}

fn integrator(c: &mut Criterion) {
    let plant = make_vdp_demo(true, 0.3);
    let x = FullState::new(vec![1.0, 0.0], vec![2.5, 0.0], 0.0).packed();
    c.bench_function("rk4 sample step (200 substeps)", |b| {
        b.iter(|| {
            rk4_hold_step(
                |s, u, _, out| plant.derivative_into(s, u, out),
                black_box(&x),
                0.1,
                0.0,
                0.02,
                200,
            )
            .unwrap()
        })
    });
}

fn estimation(c: &mut Criterion) {
    let u = ExcitationConfig {
        length_l: 8,
        amplitude: 1.0,
        seed: 1,
    }
    .batch(2);
    // sampled double integrator with drift 0.7 and gain 2
    let t = 0.02;
    let (mut p, mut v) = (0.3, -0.1);
    let mut y = Vec::with_capacity(u.len());
    for &uk in &u {
        y.push(p);
        let a = 0.7 + 2.0 * uk;
        p += t * v + 0.5 * t * t * a;
        v += t * a;
    }
    let ys = SignalWindow::scalar(&y, 0).unwrap();
    let us = SignalWindow::scalar(&u, 0).unwrap();
    c.bench_function("identify beta (l = 8)", |b| {
        b.iter(|| {
            let (z0, z1) = build_z_matrices(&ys, &us, 2, 8).unwrap();
            estimate_beta(&z0, &z1, 2, 0.02).unwrap()
        })
    });

    let model = build_extended_model(2, 0.02).unwrap();
    let mut est = EstimatorState::new(model, 2.0, 3).unwrap();
    for (k, (&yk, &uk)) in y.iter().zip(&u).enumerate() {
        est.push_sample(yk, if k == 0 { 0.0 } else { uk });
    }
    c.bench_function("reconstruct extended state (m = 3)", |b| {
        b.iter(|| est.reconstruct(black_box(10)).unwrap())
    });
}

fn full_run(c: &mut Criterion) {
    let cfg = case2();
    let mut group = c.benchmark_group("closed loop");
    group.sample_size(10);
    group.bench_function("case2, 15 s horizon", |b| {
        b.iter(|| run_experiment(black_box(&cfg)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, integrator, estimation, full_run);
criterion_main!(benches);
