//! Browser bindings. Every entry point takes and returns JSON strings so the
//! page needs no generated type glue.

use mechcond::condition::model_report;
use mechcond::criteria::{criteria_report, RegimeInput};
use mechcond::model::{CollectiveModel, MeasurementModel, ModelConfig, Scratch};
use mechcond::specfact::SplitRule;
use mechcond::wiener::FilterKind;
use serde_json::json;
use std::f64::consts::TAU;
use wasm_bindgen::prelude::*;

const MAX_PLOT_POINTS: usize = 4000;

fn load(config: &str) -> Result<MeasurementModel, String> {
    let cfg = ModelConfig::from_json(config).map_err(|e| e.to_string())?;
    MeasurementModel::from_config(&cfg).map_err(|e| e.to_string())
}

fn parse_subset(s: &str, modes: usize) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let k: usize = tok.parse().map_err(|_| format!("bad mode index {tok:?}"))?;
        if k == 0 || k > modes {
            return Err(format!("mode {k} outside 1..={modes}"));
        }
        out.push(k - 1);
    }
    if out.is_empty() {
        return Err("empty subset".into());
    }
    Ok(out)
}

fn plot_band(meas: &MeasurementModel) -> (f64, f64) {
    let fs: Vec<f64> = meas.signal_modes.iter().map(|m| m.omega / TAU).collect();
    let lo = fs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = fs.iter().cloned().fold(0.0, f64::max);
    (0.5 * lo, 1.5 * hi)
}

/// Photocurrent PSD and the thermal position PSD of each mode on a linear
/// axis around the resonances.
pub fn spectra_json(config: &str, points: usize) -> Result<String, String> {
    let meas = load(config)?;
    let points = points.clamp(16, MAX_PLOT_POINTS);
    let (lo, hi) = plot_band(&meas);
    let f: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let all: Vec<usize> = (0..meas.signal_modes.len()).collect();
    let model = CollectiveModel::new(&meas, &all).map_err(|e| e.to_string())?;
    let mut scratch = Scratch::default();
    let s_yy: Vec<f64> = f.iter().map(|&x| model.at(TAU * x, &mut scratch).s_yy).collect();
    let modes: Vec<_> = meas
        .signal_modes
        .iter()
        .map(|m| {
            json!({
                "label": m.label,
                "s_qq": f.iter().map(|&x| m.thermal_position_psd(TAU * x)).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({ "f_hz": f, "s_yy": s_yy, "modes": modes }).to_string())
}

/// Conditioning report for a 1-based, comma-separated subset together with
/// the causal and anticausal position filter magnitudes.
pub fn condition_json(config: &str, subset: &str, bins_per_width: f64) -> Result<String, String> {
    let meas = load(config)?;
    let subset = parse_subset(subset, meas.signal_modes.len())?;
    let grid = meas.default_grid(bins_per_width.clamp(2.0, 32.0)).map_err(|e| e.to_string())?;
    let rep = model_report(&meas, &subset, &grid, SplitRule::Sampled).map_err(|e| e.to_string())?;
    let filters = mechcond::wiener::synthesize_filters(&meas, &subset, &grid).map_err(|e| e.to_string())?;
    let (_, hi) = plot_band(&meas);
    let top = grid.bin_of(TAU * hi).min(grid.len() / 2);
    let stride = (top / MAX_PLOT_POINTS).max(1);
    let bins: Vec<usize> = (1..top).step_by(stride).collect();
    let mag = |kind: FilterKind| -> Vec<f64> {
        let h = filters.get(kind);
        bins.iter().map(|&k| h.values[k].norm()).collect()
    };
    Ok(json!({
        "report": rep,
        "f_hz": bins.iter().map(|&k| grid.omega(k) / TAU).collect::<Vec<_>>(),
        "h_q_causal": mag(FilterKind::QCausal),
        "h_q_anticausal": mag(FilterKind::QAnticausal),
    })
    .to_string())
}

/// Regime criteria for `{"C", "Q", "n_th", "eta", "N", "damping"}`.
pub fn criteria_json(input: &str) -> Result<String, String> {
    let inp: RegimeInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let rep = criteria_report(&inp).map_err(|e| e.to_string())?;
    serde_json::to_string(&rep).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn spectra(config: &str, points: usize) -> Result<String, JsValue> {
    spectra_json(config, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn condition(config: &str, subset: &str, bins_per_width: f64) -> Result<String, JsValue> {
    condition_json(config, subset, bins_per_width).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn criteria(input: &str) -> Result<String, JsValue> {
    criteria_json(input).map_err(|e| JsValue::from_str(&e))
}
