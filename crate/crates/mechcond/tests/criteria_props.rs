use mechcond::criteria::*;
use mechcond::model::{thermal_occupancy, Damping};
use proptest::prelude::*;

fn inp(c: f64, n: u32) -> RegimeInput {
    RegimeInput { c, q: 1e4, n_th: 1e3, eta: 1.0, n, damping: Damping::Structural }
}

#[test]
fn device_thermal_squeezing_number() {
    let omega = AngularRate::from_hz(244e3);
    let n_th = thermal_occupancy(omega.0, 295.0);
    let r = thermal_squeezing_s(AngularRate::from_hz(0.74e3), n_th, AngularRate::from_hz(0.69e3), omega).unwrap();
    assert!((r.s / 3.5e3 - 1.0).abs() < 0.1, "{}", r.s);
    assert!(r.satisfied);
    let zero = thermal_squeezing_s(AngularRate(0.0), n_th, AngularRate(1.0), AngularRate(1.0)).unwrap();
    assert!(zero.s == 0.0 && !zero.satisfied);
    let one = thermal_squeezing_s(AngularRate(1.0 / 16.0), 1.0, AngularRate(1.0), AngularRate(1.0)).unwrap();
    assert!(one.s == 1.0 && !one.satisfied);
}

#[test]
fn boundaries_are_strict() {
    let mut i = inp(0.0, 1);
    assert!(!rwa_breakdown(&i).unwrap());
    i.n_th = 10.0;
    i.c = 10.0;
    assert!(!ground_state_condition(&i).unwrap());
    i.n = 2;
    i.c = i.n_th * i.n_th * i.q / 4.0;
    assert!(!entanglement_condition(&i).unwrap());
    i.c *= 1.0 + 1e-12;
    assert!(entanglement_condition(&i).unwrap());
    i.n = 3;
    assert!(entanglement_condition(&i).is_err());
}

#[test]
fn device_regime_predicates() {
    let omega = 2.0 * std::f64::consts::PI * 244e3;
    let i = RegimeInput {
        c: 0.74 / 0.69,
        q: 244.0 / 0.69,
        n_th: thermal_occupancy(omega, 295.0),
        eta: 0.3,
        n: 1,
        damping: Damping::Structural,
    };
    assert!(rwa_breakdown(&i).unwrap());
    assert!(!ground_state_condition(&i).unwrap());
}

#[test]
fn structural_threshold_arithmetic() {
    let mut i = RegimeInput { c: 0.0, q: 1e4, n_th: 1e6 - 0.5, eta: 1.0, n: 1, damping: Damping::Structural };
    let t = quantum_squeezing_threshold(&i).unwrap();
    assert!((t.c_required / 10f64.powf(4.5) - 1.0).abs() < 1e-12);
    i.n = 10;
    let t10 = quantum_squeezing_threshold(&i).unwrap();
    assert!((t10.c_required * 10.0 / t.c_required - 1.0).abs() < 1e-12);
    i.damping = Damping::Viscous;
    assert!(quantum_squeezing_threshold(&i).unwrap().provenance.is_some());
}

#[test]
fn purity_limits() {
    let mut i = inp(0.0, 1);
    assert_eq!(purity(&i).unwrap(), 0.0);
    i.n_th = 0.0;
    i.eta = 0.25;
    i.c = 1e9;
    assert!((purity(&i).unwrap() - 0.5).abs() < 1e-6);
}

#[test]
fn asymptote_scales_with_mode_count() {
    let a = asymptotic_collective_variance(&RegimeInput { n_th: 1e12, ..inp(10.0, 1) }).unwrap();
    let b = asymptotic_collective_variance(&RegimeInput { n_th: 1e12, ..inp(10.0, 2) }).unwrap();
    assert!((a / b / 2f64.powf(0.75) - 1.0).abs() < 1e-6);
}

#[test]
fn entanglement_threshold_from_product_criterion() {
    // V_q from the asymptote times V_p = n_th + 1/2 below 1/4.
    let (q, n_th, n) = (1e3, 1e2, 2u32);
    let c_stated = n_th * n_th * q / (2.0 * n as f64);
    let f = |c: f64| {
        let i = RegimeInput { c, q, n_th, eta: 1.0, n, damping: Damping::Viscous };
        asymptotic_collective_variance(&i).unwrap() * (n_th + 0.5) - 0.25
    };
    let (mut lo, mut hi) = (1.0f64, 1e15f64);
    for _ in 0..200 {
        let m = (lo * hi).sqrt();
        if f(m) > 0.0 {
            lo = m
        } else {
            hi = m
        }
    }
    let ratio = lo / c_stated;
    assert!(ratio > 0.1 && ratio < 10.0, "{ratio}");
}

#[test]
fn zipper_device_photon_chain() {
    let ch = photon_chain(&CavityDevice::zipper(), 160.0).unwrap();
    assert!((ch.mu.hz() / 18.432e6 - 1.0).abs() < 1e-3);
    assert!(ch.threshold_photons > 80.0 && ch.threshold_photons < 320.0, "{}", ch.threshold_photons);
    assert_eq!(ch.threshold.satisfied, ch.threshold_photons <= 160.0);
}

proptest! {
    #[test]
    fn predicates_monotone_in_c_and_n(c in 0.0f64..1e9, k in 1.0f64..10.0, n in 1u32..6, n_th in 0.0f64..1e7, q in 1.5f64..1e5, eta in 0.01f64..1.0) {
        for damping in [Damping::Viscous, Damping::Structural] {
            let a = RegimeInput { c, q, n_th, eta, n, damping };
            let b = RegimeInput { c: c * k, ..a };
            let m = RegimeInput { n: n + 1, ..a };
            for other in [b, m] {
                prop_assert!(!ground_state_condition(&a).unwrap() || ground_state_condition(&other).unwrap());
                prop_assert!(!quantum_squeezing_threshold(&a).unwrap().satisfied || quantum_squeezing_threshold(&other).unwrap().satisfied);
            }
            prop_assert!(!rwa_breakdown(&a).unwrap() || rwa_breakdown(&b).unwrap());
            prop_assert!(purity(&b).unwrap() >= purity(&a).unwrap());
        }
    }
}
