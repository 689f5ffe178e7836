//! Property checks shared by the invariant tests and the acceptance run.
//!
//! Each check returns a one-line summary on success and the failing case on
//! error. Runners are seeded so that every run explores the same cases.

#![allow(dead_code)]

use std::cell::Cell;
use std::f64::consts::PI;

use gfra_core::bmp::{self, Observation};
use gfra_core::em::{self, EmStatistics};
use gfra_core::model::generate_pilots;
use gfra_core::rng::{stream, Role};
use gfra_core::{
    DecisionState, DeviceProfile, InnerOptions, MessageState, PilotMatrix, PriorMoments, Scenario,
    ScenarioConfig, C64,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub type Check = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn finish<T>(result: Result<(), proptest::test_runner::TestError<T>>, ok: String) -> Check
where
    T: std::fmt::Debug,
{
    result.map(|_| ok).map_err(|e| e.to_string())
}

/// A small random system: scenario plus a few stress knobs.
#[derive(Debug, Clone)]
pub struct Small {
    pub scenario: Scenario,
    pub noise_var: f64,
    pub iterations: usize,
    pub full_message_approx: bool,
}

pub fn small_system() -> impl Strategy<Value = Small> {
    (
        1usize..=10,
        1usize..=12,
        0.05f64..0.95,
        prop_oneof![Just(f64::NAN), -10.0f64..60.0],
        any::<u64>(),
        10usize..=40,
        any::<bool>(),
        prop_oneof![3 => Just(1.0), 1 => 1e-3f64..1e3],
        0usize..3,
    )
        .prop_map(
            |(k, l, p_a, snr, seed, iterations, approx, y_scale, zeroed)| {
                let cfg = ScenarioConfig {
                    k,
                    l,
                    p_a,
                    snr_db: if snr.is_nan() { 40.0 } else { snr },
                    seed,
                    ..ScenarioConfig::default()
                };
                let mut scenario = Scenario::generate(&cfg).expect("valid config");
                // Silence a few pilot entries to exercise the degenerate-pilot path.
                if zeroed > 0 {
                    let mut entries = scenario.pilots.entries().to_vec();
                    let n = entries.len();
                    for i in 0..zeroed.min(n) {
                        entries[(i * 7 + seed as usize) % n] = C64::new(0.0, 0.0);
                    }
                    scenario.pilots = PilotMatrix::from_row_major(l, k, entries).unwrap();
                }
                scenario.received.iter_mut().for_each(|y| *y *= y_scale);
                Small {
                    noise_var: if snr.is_nan() { 0.0 } else { cfg.noise_var() },
                    scenario,
                    iterations,
                    full_message_approx: approx,
                }
            },
        )
}

fn priors_of(sc: &Scenario) -> PriorMoments {
    PriorMoments::from_impairments(
        &sc.profiles,
        &sc.realization.impairments,
        sc.config.em_variant,
    )
}

/// Every message and decision variance stays strictly positive (and not
/// NaN) through every iteration. Returns the number of iterations checked.
pub fn variance_positivity(cases: u32) -> Check {
    let iterations = Cell::new(0usize);
    let result = runner(cases).run(&small_system(), |s| {
        let sc = &s.scenario;
        let prior = priors_of(sc);
        let l0 = sc.config.prior_llr();
        let obs = Observation::new(&sc.received, &sc.pilots, s.noise_var).unwrap();
        let opts = InnerOptions {
            full_message_approx: s.full_message_approx,
            damping: 0.0,
        };
        let mut state = MessageState::from_prior(&prior, sc.config.l, l0);
        for t in 0..s.iterations {
            bmp::sn_update(&obs, &mut state).unwrap();
            let d = bmp::decide(&state, &prior, l0, None);
            bmp::vn_update(&mut state, &prior, l0, opts).unwrap();
            for v in state.variances().chain(d.v_dec.iter().copied()) {
                prop_assert!(v > 0.0, "variance {v} at iteration {t}");
            }
            for l in state.llrs().chain(d.llr_dec.iter().copied()) {
                prop_assert!(!l.is_nan(), "NaN llr at iteration {t}");
            }
            prop_assert!(d
                .mu_dec
                .iter()
                .all(|m| m.re.is_finite() && m.im.is_finite()));
        }
        iterations.set(iterations.get() + s.iterations);
        Ok(())
    });
    let iterations = iterations.get();
    finish(result, format!("{cases} systems, {iterations} iterations")).and_then(|msg| {
        if iterations >= 10_000 || cases < 256 {
            Ok(msg)
        } else {
            Err(format!("only {iterations} iterations"))
        }
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Extrinsic VN messages plus the excluded SN message reproduce the full
/// belief: precisions, information (mean times precision) and LLRs add up.
pub fn extrinsic_consistency(cases: u32) -> Check {
    let edges = Cell::new(0usize);
    let result = runner(cases).run(&small_system(), |s| {
        let sc = &s.scenario;
        let prior = priors_of(sc);
        let l0 = sc.config.prior_llr();
        let obs = Observation::new(&sc.received, &sc.pilots, s.noise_var).unwrap();
        let mut state = MessageState::from_prior(&prior, sc.config.l, l0);
        for _ in 0..s.iterations.min(5) {
            bmp::sn_update(&obs, &mut state).unwrap();
            bmp::vn_update(&mut state, &prior, l0, InnerOptions::default()).unwrap();
        }
        bmp::sn_update(&obs, &mut state).unwrap();
        bmp::vn_update(&mut state, &prior, l0, InnerOptions::default()).unwrap();
        let full = bmp::full_messages(&state, &prior, l0);
        for k in 0..sc.config.k {
            // Floors and clamps break the identity by design.
            if full.v[k] <= 1.0001 * bmp::VARIANCE_FLOOR || full.llr[k].abs() >= bmp::LLR_CLAMP {
                continue;
            }
            for l in 0..sc.config.l {
                let (vn_mu, vn_v, vn_llr) = state.vn(k, l);
                let (sn_mu, sn_v, sn_llr) = state.sn(l, k);
                let at_prior = 1.0 / vn_v <= (1.0 + 1e-9) / prior.v_pri[k];
                if at_prior
                    || vn_v <= 1.0001 * bmp::VARIANCE_FLOOR
                    || vn_llr.abs() >= bmp::LLR_CLAMP
                {
                    continue;
                }
                let sn_w = if sn_v.is_infinite() { 0.0 } else { 1.0 / sn_v };
                let lhs = 1.0 / vn_v + sn_w;
                prop_assert!(
                    rel_close(lhs, 1.0 / full.v[k], 1e-9),
                    "precision {lhs} vs {}",
                    1.0 / full.v[k]
                );
                let info = vn_mu / vn_v + sn_mu * sn_w;
                let target = full.mu[k] / full.v[k];
                prop_assert!(
                    (info - target).norm() <= 1e-8 * (target.norm() + (sn_mu * sn_w).norm() + 1.0),
                    "information {info} vs {target}"
                );
                prop_assert!(
                    (vn_llr + sn_llr - full.llr[k]).abs()
                        <= 1e-9 * (1.0 + sn_llr.abs() + full.llr[k].abs())
                );
                edges.set(edges.get() + 1);
            }
        }
        Ok(())
    });
    finish(result, format!("{cases} systems, {} edges", edges.get()))
}

/// Permuting device indices permutes every output of BR-MP-EM.
pub fn permutation_equivariance(cases: u32) -> Check {
    let strategy = (small_system(), any::<u64>());
    let result = runner(cases).run(&strategy, |(s, perm_seed)| {
        let sc = &s.scenario;
        let k = sc.config.k;
        let mut perm: Vec<usize> = (0..k).collect();
        {
            use rand::seq::SliceRandom;
            perm.shuffle(&mut stream(perm_seed, Role::Devices));
        }
        let cfg = ScenarioConfig {
            n_in: 5,
            n_out: 2,
            ..sc.config.clone()
        };
        let y = &sc.received;
        let a = em::run(y, &sc.pilots, &cfg, &sc.profiles, &cfg.impairment).unwrap();
        let pilots = sc.pilots.permute_columns(&perm);
        let profiles: Vec<DeviceProfile> = perm.iter().map(|&j| sc.profiles[j]).collect();
        let b = em::run(y, &pilots, &cfg, &profiles, &cfg.impairment).unwrap();
        let scale = a.h_hat.iter().map(|h| h.norm_sqr()).sum::<f64>().sqrt() + 1e-12;
        for (i, &j) in perm.iter().enumerate() {
            prop_assert_eq!(b.active_hat[i], a.active_hat[j], "device {} -> {}", j, i);
            prop_assert!((b.h_hat[i] - a.h_hat[j]).norm() <= 1e-7 * scale);
        }
        for (x, z) in a.hyper_hat.iter().zip(&b.hyper_hat) {
            prop_assert!((x.gain() - z.gain()).norm() <= 1e-7 * x.gain().norm().max(1.0));
        }
        Ok(())
    });
    finish(result, format!("{cases} systems"))
}

fn decision_from(mu: Vec<C64>, v: Vec<f64>) -> DecisionState {
    let k = mu.len();
    DecisionState {
        mu_dec_prev: mu.clone(),
        mu_dec: mu,
        v_dec: v,
        llr_dec: vec![1.0; k],
        delta_k: vec![0.0; k],
        active_hat: vec![true; k],
    }
}

fn em_inputs() -> impl Strategy<Value = (Vec<DeviceProfile>, Vec<C64>, Vec<f64>)> {
    prop::collection::vec(
        (
            0.3f64..1.2,
            -PI..PI,
            0.05f64..0.5,
            0.01f64..3.0,
            -PI..PI,
            1e-4f64..0.5,
        ),
        1..30,
    )
    .prop_map(|rows| {
        let mut profiles = Vec::new();
        let mut mu = Vec::new();
        let mut v = Vec::new();
        for (h_los, phi_los, v_ray, amp, phase, var) in rows {
            profiles.push(DeviceProfile::new(h_los, phi_los, v_ray, 0).unwrap());
            mu.push(C64::from_polar(amp, phase));
            v.push(var);
        }
        (profiles, mu, v)
    })
}

fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Rotating every channel estimate by `theta` rotates the phase estimate by
/// `theta`; scaling means by `s` and variances by `s^2` scales the amplitude
/// estimate by `s`.
pub fn em_equivariance(cases: u32) -> Check {
    let strategy = (em_inputs(), -PI..PI, 0.05f64..20.0);
    let result = runner(cases).run(&strategy, |((profiles, mu, v), theta, s)| {
        let set: Vec<usize> = (0..profiles.len()).collect();
        let base = em::em_update(&decision_from(mu.clone(), v.clone()), &profiles, &set).unwrap();
        let rot = C64::from_polar(1.0, theta);
        let rotated = em::em_update(
            &decision_from(mu.iter().map(|m| m * rot).collect(), v.clone()),
            &profiles,
            &set,
        )
        .unwrap();
        prop_assert!((rotated.h_r_hat - base.h_r_hat).abs() <= 1e-12 * base.h_r_hat.max(1.0));
        prop_assert!(wrap(rotated.phi_delta_hat - base.phi_delta_hat - theta).abs() <= 1e-9);
        let scaled = em::em_update(
            &decision_from(
                mu.iter().map(|m| m * s).collect(),
                v.iter().map(|x| x * s * s).collect(),
            ),
            &profiles,
            &set,
        )
        .unwrap();
        prop_assert!(
            (scaled.h_r_hat - s * base.h_r_hat).abs() <= 1e-12 * (s * base.h_r_hat).max(1.0)
        );
        prop_assert!(wrap(scaled.phi_delta_hat - base.phi_delta_hat).abs() <= 1e-9);
        Ok(())
    });
    finish(result, format!("{cases} inputs"))
}

/// `l -> p -> l` is the identity over the clamp range, up to the
/// conditioning of `1 - p` near `p = 1`.
pub fn llr_round_trip(cases: u32) -> Check {
    let result = runner(cases).run(&(-bmp::LLR_CLAMP..=bmp::LLR_CLAMP), |l| {
        let back = bmp::prob_to_llr(bmp::llr_to_prob(l));
        let tol = 1e-12 + 4.0 * f64::EPSILON * (1.0 + l.abs().exp());
        prop_assert!((back - l).abs() <= tol, "{l} -> {back}");
        prop_assert!(back.abs() <= bmp::LLR_CLAMP);
        Ok(())
    });
    // Beyond the clamp everything saturates.
    let saturates = bmp::prob_to_llr(bmp::llr_to_prob(1e3)) == bmp::LLR_CLAMP
        && bmp::prob_to_llr(bmp::llr_to_prob(-1e3)) == -bmp::LLR_CLAMP;
    finish(result, format!("{cases} values")).and_then(|m| {
        if saturates {
            Ok(m)
        } else {
            Err("LLRs beyond the clamp do not saturate".into())
        }
    })
}

/// Positive root of `h^2 + h |M| - N = 0` on random statistics.
pub fn em_root_residual(samples: usize) -> Check {
    use rand::Rng;
    let mut rng = stream(2024, Role::Impairment);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let m = C64::from_polar(rng.random_range(0.0..10.0), rng.random_range(-PI..PI));
        let n = rng.random_range(1e-6..10.0);
        let stats = EmStatistics {
            m_stat: m,
            n_stat: n,
            set_size: 1,
        };
        let est = em::hyper_from_statistics(&stats).ok_or("no estimate")?;
        let h = est.h_r_hat;
        let residual = (h * h + h * m.norm() - n).abs();
        worst = worst.max(residual);
        if h.is_nan() || h <= 0.0 || residual > 1e-10 {
            return Err(format!("M = {m}, N = {n}: h = {h}, residual {residual:e}"));
        }
    }
    Ok(format!("{samples} inputs, worst residual {worst:.1e}"))
}

/// Expected complete-data log-likelihood of the impairment, averaged over
/// the set. Written out independently of the closed form.
pub fn em_objective(profiles: &[DeviceProfile], mu: &[C64], v: &[f64], h: f64, phi: f64) -> f64 {
    let c = C64::from_polar(h, phi);
    let n = mu.len() as f64;
    profiles
        .iter()
        .zip(mu)
        .zip(v)
        .map(|((p, &m), &var)| {
            let los = C64::from_polar(p.h_los, p.phi_los);
            let spread = h * h * p.v_ray;
            -(PI * spread).ln() - (var + (m - c * los).norm_sqr()) / spread
        })
        .sum::<f64>()
        / n
}

/// The closed-form update is a stationary point and a local maximum of the
/// EM objective.
pub fn em_stationarity(cases: u32) -> Check {
    let result = runner(cases).run(&em_inputs(), |(profiles, mu, v)| {
        let set: Vec<usize> = (0..profiles.len()).collect();
        let est = em::em_update(&decision_from(mu.clone(), v.clone()), &profiles, &set).unwrap();
        let (h, phi) = (est.h_r_hat, est.phi_delta_hat);
        let q = |h: f64, phi: f64| em_objective(&profiles, &mu, &v, h, phi);
        let q0 = q(h, phi);
        let eps = 1e-5 * h;
        let dh = (q(h + eps, phi) - q(h - eps, phi)) / (2.0 * eps);
        let dphi = (q(h, phi + 1e-5) - q(h, phi - 1e-5)) / 2e-5;
        let scale = 1.0 + q0.abs() / h;
        prop_assert!(dh.abs() <= 1e-5 * scale, "dQ/dh = {dh}");
        prop_assert!(dphi.abs() <= 1e-5 * scale, "dQ/dphi = {dphi}");
        for (a, b) in [(1.05, 0.0), (0.95, 0.0), (1.0, 0.05), (1.0, -0.05)] {
            prop_assert!(q(h * a, phi + b) <= q0 + 1e-12 * q0.abs());
        }
        Ok(())
    });
    finish(result, format!("{cases} inputs"))
}

/// Noiseless single active device: the decision converges to the channel.
pub fn single_user_fixed_point(seed: u64) -> Result<f64, String> {
    let pilots = generate_pilots(1, 8, &mut stream(seed, Role::Pilots));
    let profile = DeviceProfile::new(0.8, 0.7, 0.2, 0).unwrap();
    let h = C64::new(0.35, -0.9);
    let y = pilots.apply(&[h]).unwrap();
    let obs = Observation::new(&y, &pilots, 0.0).unwrap();
    let prior = PriorMoments::new(vec![profile.los()], vec![profile.v_ray]).unwrap();
    let l0 = bmp::prior_llr(0.5);
    let mut state = MessageState::from_prior(&prior, 8, l0);
    let d = bmp::run_inner(
        &obs,
        &prior,
        l0,
        10,
        InnerOptions::default(),
        &mut state,
        None,
        &mut |_, _| {},
    )
    .map_err(|e| e.to_string())?;
    if !d.active_hat[0] {
        return Err("device not detected".into());
    }
    Ok((d.mu_dec[0] - h).norm() / h.norm())
}
