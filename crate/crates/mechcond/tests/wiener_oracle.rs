use mechcond::model::{MeasurementModel, ModeModel};
use mechcond::specfact::SplitRule;
use mechcond::wiener::{analytic_viscous_filters, relative_l2, synthesize_filters_with};

fn mode(c: f64) -> ModeModel {
    let (omega, q) = (1.0, 1e3);
    let gamma = omega / q;
    ModeModel::viscous(omega, gamma, c * gamma, 1e3)
}

#[test]
fn numerical_filters_match_closed_form() {
    for c in [0.1, 1.0, 10.0, 100.0] {
        let m = mode(c);
        let meas = MeasurementModel::new(0.3, vec![m.clone()]);
        let grid = meas.grid_with(16.0, 16.0).unwrap();
        let num = synthesize_filters_with(&meas, &[0], &grid, SplitRule::Continuous).unwrap();
        let ana = analytic_viscous_filters(&m, 0.3, &grid).unwrap();
        let eq = relative_l2(&num.h_q_causal, &ana.h_q_causal);
        let ep = relative_l2(&num.h_p_causal, &ana.h_p_causal);
        let eqa = relative_l2(&num.h_q_anticausal, &ana.h_q_anticausal);
        let epa = relative_l2(&num.h_p_anticausal, &ana.h_p_anticausal);
        eprintln!("C={c} n={} q {eq:.2e} p {ep:.2e} qa {eqa:.2e} pa {epa:.2e}", grid.n_points);
        for e in [eq, ep, eqa, epa] {
            assert!(e <= 1e-3, "C = {c}: relative L2 {e:e}");
        }
    }
}
