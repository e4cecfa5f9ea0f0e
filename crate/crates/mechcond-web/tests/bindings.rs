use mechcond_web::{condition_json, criteria_json, spectra_json};
use serde_json::Value;

const TWO_MODE: &str = include_str!("../../mechcond/fixtures/two_mode.json");

#[test]
fn spectra_has_one_curve_per_mode() {
    let v: Value = serde_json::from_str(&spectra_json(TWO_MODE, 200).unwrap()).unwrap();
    assert_eq!(v["f_hz"].as_array().unwrap().len(), 200);
    assert_eq!(v["modes"].as_array().unwrap().len(), 2);
    let s_yy = v["s_yy"].as_array().unwrap();
    assert!(s_yy.iter().all(|x| x.as_f64().unwrap() >= 0.5));
}

#[test]
fn condition_reports_and_plots_filters() {
    let v: Value = serde_json::from_str(&condition_json(TWO_MODE, "1", 4.0).unwrap()).unwrap();
    let rep = &v["report"];
    assert!(rep["V_dq_dq"].as_f64().unwrap() > 0.0);
    let n = v["f_hz"].as_array().unwrap().len();
    assert!(n > 10);
    assert_eq!(v["h_q_causal"].as_array().unwrap().len(), n);
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(condition_json(TWO_MODE, "3", 4.0).is_err());
    assert!(condition_json(TWO_MODE, "", 4.0).is_err());
    assert!(spectra_json("{", 10).is_err());
    assert!(criteria_json(r#"{"C":1,"Q":10,"n_th":1,"eta":2,"N":1,"damping":"viscous"}"#).is_err());
}

#[test]
fn criteria_round_trip() {
    let out = criteria_json(r#"{"C":1e3,"Q":1e3,"n_th":1e6,"eta":1,"N":2,"damping":"viscous"}"#).unwrap();
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["n_tot"].as_f64().unwrap() > 1e6);
    assert!(v["entanglement"].is_boolean());
}
