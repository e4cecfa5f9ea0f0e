use mechcond::condition::{model_report, thermal_scales};
use mechcond::model::{MeasurementModel, ModeModel};
use mechcond::specfact::{anticausal_vec, causal_vec, spectral_factorize, SplitRule};
use mechcond::{FrequencyGrid, SampledSpectrum, C64};
use proptest::prelude::*;

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| C64::new(a, b)), n)
}

proptest! {
    #[test]
    fn causal_split_is_a_partition(x in complex_vec(1024), continuous in any::<bool>()) {
        let grid = FrequencyGrid::new(1024, 0.1).unwrap();
        let rule = if continuous { SplitRule::Continuous } else { SplitRule::Sampled };
        let c = causal_vec(&x, &grid, rule);
        let a = anticausal_vec(&x, &grid, rule);
        for k in 0..1024 {
            prop_assert!((c[k] + a[k] - x[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn factor_reproduces_smooth_spectra(coef in prop::collection::vec(-0.4..0.4f64, 1..5), level in -3.0..3.0f64) {
        let grid = FrequencyGrid::new(1024, 0.05).unwrap();
        let dt = grid.dt();
        let s = SampledSpectrum::from_fn(grid, |w| {
            let l: f64 = coef.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * w * dt).cos()).sum();
            (level + 2.0 * l).exp()
        });
        let f = spectral_factorize(&s).unwrap();
        prop_assert!(f.residual < 1e-10, "residual {}", f.residual);
        prop_assert!(f.anticausal_fraction < 1e-10, "anticausal {}", f.anticausal_fraction);
        prop_assert_eq!(f.floored_bins, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conditioning_is_physical(
        q in 5.0..60.0f64,
        c in 0.1..50.0f64,
        n_th in 0.0..200.0f64,
        eta in 0.1..1.0f64,
    ) {
        let gamma = 1.0 / q;
        let mode = ModeModel::viscous(1.0, gamma, c * gamma, n_th);
        let meas = MeasurementModel::new(eta, vec![mode]);
        let grid = meas.default_grid(4.0).unwrap();
        let rep = model_report(&meas, &[0], &grid, SplitRule::Sampled).unwrap();
        let (q_th, p_th) = thermal_scales(&meas, &[0], &grid).unwrap();
        prop_assert!(rep.v_dq_dq > 0.0 && rep.v_dq_dq <= q_th * q_th * (1.0 + 1e-6));
        prop_assert!(rep.v_dp_dp > 0.0 && rep.v_dp_dp <= p_th * p_th * (1.0 + 1e-6));
        prop_assert!(rep.purity > 0.0 && rep.purity <= 1.0 + 1e-3, "purity {}", rep.purity);
        prop_assert!(rep.v_rel_qq >= 0.0 && rep.v_rel_pp >= 0.0);
    }
}
