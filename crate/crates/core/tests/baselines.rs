use gfra_core::baselines::{
    exact_posterior_oracle, gammse_estimate, lmmse_estimate, ls_estimate, omp_estimate,
};
use gfra_core::harness::draw_trial;
use gfra_core::rng::{stream, Role};
use gfra_core::{em, metrics, DeviceProfile, PriorMoments, ScenarioConfig, C64};
use rand::seq::SliceRandom;

fn sq_err(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

#[test]
fn lmmse_is_no_worse_than_ls() {
    let cfg = ScenarioConfig {
        k: 12,
        l: 24,
        p_a: 0.3,
        snr_db: 5.0,
        ..ScenarioConfig::default()
    };
    let (mut ls, mut lmmse) = (0.0, 0.0);
    for t in 0..1000 {
        let sc = draw_trial(&cfg, 3, t).unwrap().scenario;
        let truth = sc.realization.masked_channel();
        let priors = PriorMoments::from_impairments(
            &sc.profiles,
            &sc.realization.impairments,
            cfg.em_variant,
        );
        ls += sq_err(&ls_estimate(&sc.received, &sc.pilots).unwrap(), &truth);
        let x =
            lmmse_estimate(&sc.received, &sc.pilots, &priors, cfg.p_a, cfg.noise_var()).unwrap();
        lmmse += sq_err(&x, &truth);
    }
    assert!(lmmse <= ls, "lmmse {lmmse} vs ls {ls}");
}

#[test]
fn omp_trails_brmpem_at_high_snr() {
    // OMP is near exact when it picks the right columns; its mean error is
    // driven by the trials where it does not.
    let cfg = ScenarioConfig {
        snr_db: 40.0,
        n_out: 2,
        ..ScenarioConfig::default()
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for t in 0..10 {
        let sc = draw_trial(&cfg, 4, t).unwrap().scenario;
        let truth = sc.realization.masked_channel();
        let r = em::run(
            &sc.received,
            &sc.pilots,
            &cfg,
            &sc.profiles,
            &cfg.impairment,
        )
        .unwrap();
        let (_, omp) =
            omp_estimate(&sc.received, &sc.pilots, sc.realization.active_count()).unwrap();
        a.push(metrics::nmse(&r.h_hat, &truth).unwrap());
        b.push(metrics::nmse(&omp, &truth).unwrap());
    }
    let (a, b) = (metrics::mean(&a), metrics::mean(&b));
    assert!(b > 10.0 * a, "omp {b} vs brmpem {a}");
}

#[test]
fn gammse_error_falls_a_decade_per_ten_db() {
    let mut points = Vec::new();
    for snr_db in [20.0, 30.0, 40.0] {
        let cfg = ScenarioConfig {
            k: 100,
            l: 60,
            snr_db,
            ..ScenarioConfig::default()
        };
        let mut nmse = Vec::new();
        for t in 0..40 {
            let sc = draw_trial(&cfg, 6, t).unwrap().scenario;
            let real = &sc.realization;
            let x = gammse_estimate(
                &sc.received,
                &sc.pilots,
                &real.activity,
                &real.impairments,
                &sc.profiles,
                cfg.noise_var(),
                cfg.em_variant,
            )
            .unwrap();
            nmse.push(metrics::nmse(&x, &real.masked_channel()).unwrap());
        }
        points.push(metrics::mean(&nmse).log10());
    }
    for w in points.windows(2) {
        let slope = w[1] - w[0];
        assert!(
            (-1.15..=-0.85).contains(&slope),
            "decades per 10 dB: {slope}"
        );
    }
}

#[test]
fn baselines_commute_with_device_permutation() {
    let cfg = ScenarioConfig {
        k: 8,
        l: 10,
        p_a: 0.3,
        snr_db: 15.0,
        ..ScenarioConfig::default()
    };
    for t in 0..20 {
        let sc = draw_trial(&cfg, 8, t).unwrap().scenario;
        let mut perm: Vec<usize> = (0..cfg.k).collect();
        perm.shuffle(&mut stream(t, Role::Devices));
        let pilots = sc.pilots.permute_columns(&perm);
        let profiles: Vec<DeviceProfile> = perm.iter().map(|&j| sc.profiles[j]).collect();
        let pri = PriorMoments::from_impairments(
            &sc.profiles,
            &sc.realization.impairments,
            cfg.em_variant,
        );
        let pri_p =
            PriorMoments::from_impairments(&profiles, &sc.realization.impairments, cfg.em_variant);
        let y = &sc.received;
        let nv = cfg.noise_var();

        let close = |a: &[C64], b: &[C64]| {
            let scale = a.iter().map(|x| x.norm()).fold(1.0, f64::max);
            perm.iter()
                .enumerate()
                .all(|(i, &j)| (b[i] - a[j]).norm() <= 1e-9 * scale)
        };
        assert!(close(
            &ls_estimate(y, &sc.pilots).unwrap(),
            &ls_estimate(y, &pilots).unwrap()
        ));
        assert!(close(
            &lmmse_estimate(y, &sc.pilots, &pri, cfg.p_a, nv).unwrap(),
            &lmmse_estimate(y, &pilots, &pri_p, cfg.p_a, nv).unwrap()
        ));
        let a = exact_posterior_oracle(y, &sc.pilots, &pri, cfg.p_a, nv).unwrap();
        let b = exact_posterior_oracle(y, &pilots, &pri_p, cfg.p_a, nv).unwrap();
        assert!(close(&a.mmse_estimate, &b.mmse_estimate));
        assert!((a.log_evidence - b.log_evidence).abs() <= 1e-9 * a.log_evidence.abs().max(1.0));
        for (i, &j) in perm.iter().enumerate() {
            assert!((a.support_probs[j] - b.support_probs[i]).abs() <= 1e-9);
        }
    }
}
