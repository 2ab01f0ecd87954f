use dendrofet_core::ferrodomain::{
    loop_area, sample_activation_fields, switching_time_constant, zero_voltage_charges, FerroCap, FerroGeometry, Polarity,
    SwitchingParams, TriangleWave,
};
use dendrofet_core::units::mv_per_cm_to_v_per_m;
use proptest::prelude::*;

fn single_domain(ea: f64, seed: u64) -> FerroCap {
    FerroCap::from_activation_fields(FerroGeometry::default(), &[ea], seed).unwrap()
}

/// Step count until a single domain under constant field flips.
fn flip_step(cap: &mut FerroCap, v_fe: f64, params: &SwitchingParams, cap_steps: usize) -> Option<usize> {
    (1..=cap_steps).find(|_| cap.step(v_fe, params) == 1)
}

#[test]
fn single_domain_switching_times_are_weibull() {
    let geometry = FerroGeometry::default();
    let ea = 3.0;
    let e_fe = 1.9;
    let v_fe = mv_per_cm_to_v_per_m(e_fe) * geometry.thickness * 1e-9;
    let base = SwitchingParams::default();
    let tau = switching_time_constant(e_fe, ea, &base);
    let params = base.with_dt(tau / 1000.0);
    let n = 10_000;
    let mut times: Vec<f64> = (0..n)
        .map(|s| {
            let mut cap = single_domain(ea, s as u64);
            flip_step(&mut cap, v_fe, &params, 100_000).expect("domain flips within 100 tau") as f64 * params.dt
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let cdf = |t: f64| 1.0 - (-(t / tau).powf(params.beta)).exp();
    let mut ks: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let f = cdf(t);
        ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
    }
    assert!(ks < 0.02, "KS distance {ks}");
}

#[test]
fn long_strong_field_saturates_every_domain() {
    let params = SwitchingParams::default();
    let mut cap = FerroCap::new(FerroGeometry::default(), &params, 1000, 5).unwrap();
    cap.saturate(Polarity::Up);
    for _ in 0..100 {
        // 5 MV/cm puts tau below 1 us even for the far E_a tail.
        cap.step(-5.0, &params);
    }
    assert_eq!(cap.up_count(), 0);
    assert_eq!(cap.polarization(), -28.0);
}

#[test]
fn constant_field_ensemble_is_monotone() {
    let params = SwitchingParams::default();
    let seeds = 100;
    let steps = 60;
    let mut mean = vec![0.0; steps];
    for s in 0..seeds {
        let mut cap = FerroCap::new(FerroGeometry::default(), &params, 200, s).unwrap();
        cap.saturate(Polarity::Down);
        for m in mean.iter_mut() {
            cap.step(1.8, &params);
            *m += cap.up_count() as f64 / 200.0 / seeds as f64;
        }
    }
    assert!(mean.windows(2).all(|w| w[1] >= w[0]));
    assert!(mean[steps - 1] > mean[0]);
}

fn table_capacitor(seed: u64, ps: f64) -> FerroCap {
    let geometry = FerroGeometry { saturation_polarization: ps, ..FerroGeometry::default() };
    let mut cap = FerroCap::new(geometry, &SwitchingParams::default(), 1000, seed).unwrap();
    cap.saturate(Polarity::Down);
    cap
}

#[test]
fn hysteresis_loop_of_the_reference_capacitor() {
    let params = SwitchingParams::default();
    let wave = TriangleWave { amplitude: 2.5, period: 40e-6, cycles: 1 }.sample(1e-7).unwrap();
    let mut cap = table_capacitor(3, 28.0);
    let first = cap.hysteresis_sweep(&wave, &params).unwrap();
    let second = cap.hysteresis_sweep(&wave, &params).unwrap();
    let area = loop_area(&second);
    assert!(area > 0.0, "loop area {area}");
    let qs = cap.saturation_charge();
    for q in zero_voltage_charges(&second) {
        assert!(q.abs() > 0.0 && q.abs() < qs, "remanent charge {q} vs {qs}");
    }
    let peak = second.iter().map(|p| p.charge).fold(f64::NEG_INFINITY, f64::max);
    assert!(peak <= qs + cap.capacitance() * 2.5 + 1e-18);
    // Steady state: the third loop stays within sampling noise of the second.
    let third = cap.hysteresis_sweep(&wave, &params).unwrap();
    let diff = second.iter().zip(&third).map(|(a, b)| (a.charge - b.charge).abs()).fold(0.0, f64::max);
    assert!(diff < 0.15 * qs, "loop drift {diff} vs {qs}");
    assert!(!first.is_empty());
}

#[test]
fn polarization_free_capacitor_has_no_loop() {
    let params = SwitchingParams::default();
    let wave = TriangleWave { amplitude: 2.5, period: 40e-6, cycles: 1 }.sample(1e-7).unwrap();
    let mut cap = table_capacitor(3, 0.0);
    let points = cap.hysteresis_sweep(&wave, &params).unwrap();
    let scale = cap.capacitance() * 2.5 * 2.5;
    assert!(loop_area(&points).abs() <= 1e-9 * scale);
}

#[test]
fn activation_field_mean() {
    let fields = sample_activation_fields(&SwitchingParams::default(), 100_000, 17).unwrap();
    let mean = fields.iter().sum::<f64>() / fields.len() as f64;
    assert!((mean - 3.0).abs() < 0.02, "mean {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn polarization_stays_bounded(seed in 0u64..1000, pulses in prop::collection::vec(-4.0f64..4.0, 1..40)) {
        let params = SwitchingParams::default();
        let mut cap = FerroCap::new(FerroGeometry::default(), &params, 64, seed).unwrap();
        for v in pulses {
            cap.step(v, &params);
            prop_assert!(cap.polarization().abs() <= 28.0);
        }
    }

    #[test]
    fn zero_field_is_identity(seed in 0u64..1000, pulses in prop::collection::vec(-4.0f64..4.0, 0..10)) {
        let params = SwitchingParams::default();
        let mut cap = FerroCap::new(FerroGeometry::default(), &params, 64, seed).unwrap();
        for v in pulses {
            cap.step(v, &params);
        }
        let before = cap.domains().to_vec();
        cap.step(0.0, &params);
        prop_assert_eq!(before, cap.domains().to_vec());
    }

    #[test]
    fn same_seed_same_trajectory(seed in 0u64..1000, pulses in prop::collection::vec(-4.0f64..4.0, 1..20)) {
        let params = SwitchingParams::default();
        let mut a = FerroCap::new(FerroGeometry::default(), &params, 64, seed).unwrap();
        let mut b = a.clone();
        for v in pulses {
            prop_assert_eq!(a.step(v, &params), b.step(v, &params));
        }
        prop_assert_eq!(a.domains(), b.domains());
    }
}
