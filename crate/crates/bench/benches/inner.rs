use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gfra_bench::fixture;
use gfra_core::baselines::{gammse_estimate, lmmse_estimate, omp_estimate};
use gfra_core::bmp::{self, Observation};
use gfra_core::{em, HyperEstimate, InnerOptions, MessageState, PriorMoments};
use std::hint::black_box;

fn inner(c: &mut Criterion) {
    let mut g = c.benchmark_group("inner");
    for (k, l) in [(100, 40), (500, 200)] {
        let sc = fixture(k, l, 10.0);
        let cfg = &sc.config;
        let prior = PriorMoments::from_hyper(
            &sc.profiles,
            &[HyperEstimate::initial(&cfg.impairment)],
            cfg.em_variant,
        );
        let obs = Observation::new(&sc.received, &sc.pilots, cfg.noise_var()).unwrap();
        let l0 = cfg.prior_llr();
        let fresh = MessageState::from_prior(&prior, l, l0);
        g.bench_with_input(BenchmarkId::new("sn_update", k), &k, |b, _| {
            let mut state = fresh.clone();
            b.iter(|| bmp::sn_update(&obs, black_box(&mut state)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("run_inner_10", k), &k, |b, _| {
            b.iter(|| {
                let mut state = fresh.clone();
                bmp::run_inner(
                    &obs,
                    &prior,
                    l0,
                    10,
                    InnerOptions::default(),
                    &mut state,
                    None,
                    &mut |_, _| {},
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn full(c: &mut Criterion) {
    let sc = fixture(500, 200, 10.0);
    let cfg = &sc.config;
    let mut g = c.benchmark_group("estimators");
    g.sample_size(10);
    g.bench_function("brmpem", |b| {
        b.iter(|| em::run(&sc.received, &sc.pilots, cfg, &sc.profiles, &cfg.impairment).unwrap())
    });
    let active = sc.realization.active_count();
    g.bench_function("omp", |b| {
        b.iter(|| omp_estimate(&sc.received, &sc.pilots, active).unwrap())
    });
    let real = &sc.realization;
    g.bench_function("gammse", |b| {
        b.iter(|| {
            gammse_estimate(
                &sc.received,
                &sc.pilots,
                &real.activity,
                &real.impairments,
                &sc.profiles,
                cfg.noise_var(),
                cfg.em_variant,
            )
            .unwrap()
        })
    });
    let prior = PriorMoments::from_hyper(
        &sc.profiles,
        &[HyperEstimate::initial(&cfg.impairment)],
        cfg.em_variant,
    );
    g.bench_function("lmmse", |b| {
        b.iter(|| {
            lmmse_estimate(&sc.received, &sc.pilots, &prior, cfg.p_a, cfg.noise_var()).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, inner, full);
criterion_main!(benches);
