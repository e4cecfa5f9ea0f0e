use mechcond::condition::{
    apply_filters, conditional_spectra, conditional_variances, conversion_factors, infer_conditional_from_relative,
    model_conditioning, model_report,
};
use mechcond::model::{MeasurementModel, ModeModel};
use mechcond::specfact::SplitRule;
use mechcond::wiener::{synthesize_filters, ViscousClosedForm, WienerFilterSet};
use mechcond::C64;

fn viscous(c: f64, n_th: f64) -> ModeModel {
    let gamma = 1e-2;
    ModeModel::viscous(1.0, gamma, c * gamma, n_th)
}

#[test]
fn relative_covariance_matches_closed_form() {
    for c in [0.5, 5.0] {
        let m = viscous(c, 100.0);
        let meas = MeasurementModel::new(0.5, vec![m.clone()]);
        let grid = meas.grid_with(16.0, 16.0).unwrap();
        let mc = model_conditioning(&meas, &[0], &grid, SplitRule::Continuous).unwrap();
        let cf = ViscousClosedForm::new(&m, 0.5).unwrap();
        let (vq, vp) = (cf.relative_variance_q(), cf.relative_variance_p());
        eprintln!("C={c} q {} vs {vq}  p {} vs {vp}", mc.relative.v_qq, mc.relative.v_pp);
        assert!((mc.relative.v_qq / vq - 1.0).abs() < 2e-3);
        assert!((mc.relative.v_pp / vp - 1.0).abs() < 2e-3);
        assert!(mc.relative.c_qp.abs() < 1e-3 * (vq * vp).sqrt());
    }
}

#[test]
fn prediction_and_retrodiction_are_mirror_images() {
    let m = viscous(3.0, 50.0);
    let meas = MeasurementModel::new(0.4, vec![m]);
    let grid = meas.grid_with(8.0, 16.0).unwrap();
    let mc = model_conditioning(&meas, &[0], &grid, SplitRule::Continuous).unwrap();
    let (a, b) = (mc.variances.pred, mc.variances.retro);
    let scale = (a.v_qq * a.v_pp).sqrt();
    assert!((a.v_qq / b.v_qq - 1.0).abs() < 1e-6);
    assert!((a.v_pp / b.v_pp - 1.0).abs() < 1e-6);
    assert!((a.c_qp + b.c_qp).abs() < 1e-6 * scale);
}

#[test]
fn zero_filter_leaves_thermal_variance() {
    let m = viscous(1.0, 20.0);
    let meas = MeasurementModel::new(1.0, vec![m.clone()]);
    let grid = meas.grid_with(16.0, 16.0).unwrap();
    let mut f = synthesize_filters(&meas, &[0], &grid).unwrap();
    for s in [&mut f.h_q_causal, &mut f.h_p_causal, &mut f.h_q_anticausal, &mut f.h_p_anticausal] {
        s.values.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    }
    f.rule = SplitRule::Continuous;
    let v = conditional_variances(&conditional_spectra(&meas, &f, &[0]).unwrap()).unwrap();
    let n_tot = m.n_th + m.cooperativity() + 0.5;
    assert!((v.pred.v_qq / n_tot - 1.0).abs() < 5e-3, "{} vs {n_tot}", v.pred.v_qq);
}

#[test]
fn report_passes_richardson_check() {
    let meas = MeasurementModel::new(0.5, vec![viscous(2.0, 10.0)]);
    let grid = meas.grid_with(8.0, 16.0).unwrap();
    let r = model_report(&meas, &[0], &grid, SplitRule::Continuous).unwrap();
    assert!(r.quadrature_ok, "{:?}", r.richardson_rel_diff);
    assert!(r.purity > 0.0 && r.purity <= 1.0);
    let json = r.to_json();
    assert!(json.contains("\"V_dq_dq\"") && json.contains("\"F_p\""));
}

#[test]
fn closure_identity() {
    let (f_q, _) = conversion_factors(
        &mechcond::condition::Covariance { v_qq: 3.6e5, v_pp: 1.0, c_qp: 0.0 },
        &mechcond::condition::Covariance { v_qq: 2.43e5, v_pp: 1.0, c_qp: 0.0 },
    )
    .unwrap();
    let back = infer_conditional_from_relative(3.6e5, f_q).unwrap();
    assert!((back - 2.43e5).abs() < 1e-9 * 2.43e5);
    assert!(infer_conditional_from_relative(1.0, 1.0).is_err());
    let v = infer_conditional_from_relative(2.0 * 1.8e5, 0.26).unwrap();
    assert!((v / 2.4e5 - 1.0).abs() < 0.02);
}

fn filters() -> WienerFilterSet {
    let meas = MeasurementModel::new(0.5, vec![viscous(2.0, 10.0)]);
    let grid = meas.grid_with(8.0, 4.0).unwrap();
    synthesize_filters(&meas, &[0], &grid).unwrap()
}

#[test]
fn zero_record_gives_zero_estimates() {
    let f = filters();
    let y = vec![0.0; 1 << 16];
    let t = apply_filters(&f, &y, f.grid.dt()).unwrap();
    assert!(t.q_pred.iter().chain(&t.p_retro).all(|&v| v == 0.0));
    assert!(t.valid_start >= t.impulse_length && t.valid_end + t.impulse_length <= y.len());
}

#[test]
fn causality_of_applied_filters() {
    let f = filters();
    let n = 1 << 16;
    let mut y = vec![0.0; n];
    let k = n / 2;
    y[k] = 1.0;
    let t = apply_filters(&f, &y, f.grid.dt()).unwrap();
    let peak = t.q_pred.iter().chain(&t.q_retro).fold(0.0f64, |a, v| a.max(v.abs()));
    let eps = 1e-12 * peak;
    assert!(t.q_pred[..k].iter().all(|v| v.abs() < eps));
    assert!(t.q_pred[k].abs() > eps);
    assert!(t.q_retro[k..].iter().all(|v| v.abs() < eps));
    assert!(t.q_retro[k - 1].abs() > eps);
    let bad = apply_filters(&f, &y, 1.5 * f.grid.dt());
    assert!(bad.is_err());
    assert!(apply_filters(&f, &y[..16], f.grid.dt()).is_err());
}
