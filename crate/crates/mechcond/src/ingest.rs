//! Trace loading, Welch spectra and least-squares fits of the measurement
//! model to a photocurrent spectrum.

use std::io::{BufRead, Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::binio::{read_framed, write_framed, TRACE_MAGIC};
use crate::error::{invalid, Error, Result};
use crate::grid::{to_freq_in_place, FrequencyGrid, C64};
use crate::model::{CollectiveModel, MeasurementModel, ModelConfig, NoiseComponent, Scratch};
use crate::spectrum::SampledSpectrum;

pub const MIN_TRACE_LEN: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub samples: Vec<f64>,
    /// Sample period (s).
    pub dt: f64,
    /// Factor converting recorded units to normalized photocurrent.
    pub calibration: f64,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    dt: f64,
    #[serde(default = "one")]
    calibration: f64,
    #[serde(default)]
    units: String,
    #[serde(default)]
    channel: String,
    #[serde(default)]
    metadata: serde_json::Value,
}

fn one() -> f64 {
    1.0
}

impl TraceFile {
    pub fn new(samples: Vec<f64>, dt: f64) -> Self {
        Self { samples, dt, calibration: 1.0, metadata: serde_json::Value::Null }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt = {} must be positive", self.dt));
        }
        if !(self.calibration.is_finite() && self.calibration != 0.0) {
            return invalid("calibration must be finite and non-zero");
        }
        if self.samples.len() < MIN_TRACE_LEN {
            return Err(Error::TraceTooShort { len: self.samples.len(), need: MIN_TRACE_LEN });
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return invalid(format!("sample {i} is not finite"));
        }
        Ok(())
    }

    /// Samples in normalized photocurrent units.
    pub fn calibrated(&self) -> Vec<f64> {
        self.samples.iter().map(|v| v * self.calibration).collect()
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let s = |k: &str| self.metadata.get(k).and_then(|v| v.as_str()).unwrap_or_default().to_string();
        let h = TraceHeader {
            dt: self.dt,
            calibration: self.calibration,
            units: s("units"),
            channel: s("channel"),
            metadata: self.metadata.clone(),
        };
        write_framed(w, &TRACE_MAGIC, &h, &self.samples)
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let (h, samples): (TraceHeader, Vec<f64>) = read_framed(r, &TRACE_MAGIC)?;
        let mut metadata = h.metadata;
        if metadata.is_null() && !(h.units.is_empty() && h.channel.is_empty()) {
            metadata = serde_json::json!({ "units": h.units, "channel": h.channel });
        }
        let t = Self { samples, dt: h.dt, calibration: h.calibration, metadata };
        t.validate()?;
        Ok(t)
    }

    /// `t_s,y` CSV; `dt` is taken from the first two time stamps.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut t = Vec::new();
        let mut y = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                continue;
            }
            let mut it = line.split(',');
            let mut next = || -> Result<f64> {
                it.next()
                    .ok_or_else(|| Error::Format(format!("line {}: expected t_s,y", i + 1)))?
                    .trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))
            };
            t.push(next()?);
            y.push(next()?);
        }
        if t.len() < 2 {
            return Err(Error::TraceTooShort { len: t.len(), need: MIN_TRACE_LEN });
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        let tr = Self::new(y, dt);
        tr.validate()?;
        Ok(tr)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_s,y")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(w, "{:e},{:e}", i as f64 * self.dt, v)?;
        }
        Ok(())
    }

    /// Load either format, recognized by the binary magic.
    pub fn load(bytes: &[u8]) -> Result<Self> {
        if crate::binio::has_magic(bytes, &TRACE_MAGIC) {
            Self::read_binary(bytes)
        } else {
            Self::read_csv(bytes)
        }
    }
}

/// Hann-windowed Welch estimate on the grid of `segment_length` points.
/// White input of variance σ² gives the flat level σ²·dt, so the estimate
/// integrates (`Σ S dω/2π`) to the mean square of the record.
pub fn welch_psd(trace: &TraceFile, segment_length: usize, overlap_fraction: f64) -> Result<SampledSpectrum> {
    trace.validate()?;
    let n = segment_length;
    if n > trace.samples.len() {
        return invalid(format!("segment length {n} exceeds the trace length {}", trace.samples.len()));
    }
    if !(0.0..=0.9).contains(&overlap_fraction) {
        return invalid(format!("overlap {overlap_fraction} must lie in [0, 0.9]"));
    }
    let grid = FrequencyGrid::with_dt(n, trace.dt)?;
    let win: Vec<f64> = (0..n).map(|i| (std::f64::consts::PI * i as f64 / n as f64).sin().powi(2)).collect();
    let wpow: f64 = win.iter().map(|w| w * w).sum();
    let step = ((n as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let x = trace.calibrated();
    let mut acc = vec![0.0; n / 2 + 1];
    let mut count = 0usize;
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= x.len() {
        for (b, (v, w)) in buf.iter_mut().zip(x[start..start + n].iter().zip(&win)) {
            *b = C64::new(v * w, 0.0);
        }
        to_freq_in_place(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = trace.dt / (wpow * count as f64);
    let vals: Vec<f64> = (0..n).map(|k| acc[if k <= n / 2 { k } else { n - k }] * scale).collect();
    SampledSpectrum::from_real(grid, &vals)
}

/// Segments averaged by [`welch_psd`].
pub fn welch_segments(len: usize, segment_length: usize, overlap_fraction: f64) -> usize {
    let step = ((segment_length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    if segment_length > len {
        0
    } else {
        (len - segment_length) / step + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedPeak {
    /// Angular frequency (rad/s).
    pub omega: f64,
    pub height: f64,
    /// Full width at half maximum (rad/s), from linear interpolation.
    pub fwhm: f64,
    /// Height over the local median, in dB.
    pub prominence_db: f64,
}

/// Local maxima on the positive-frequency side standing `threshold_db`
/// above the median of a window of `±window` bins. Maxima more than 12
/// decades below the largest bin are rounding noise and are skipped.
pub fn detect_peaks(psd: &SampledSpectrum, threshold_db: f64, window: usize) -> Vec<DetectedPeak> {
    let g = psd.grid;
    let s: Vec<f64> = psd.values[..g.n_points / 2].iter().map(|v| v.re).collect();
    let floor = 1e-12 * s.iter().copied().fold(0.0, f64::max);
    let mut out = Vec::new();
    let mut med = Vec::with_capacity(2 * window + 1);
    for k in 1..s.len().saturating_sub(1) {
        if !(s[k] > s[k - 1] && s[k] >= s[k + 1] && s[k] > floor) {
            continue;
        }
        med.clear();
        med.extend_from_slice(&s[k.saturating_sub(window)..(k + window + 1).min(s.len())]);
        med.sort_by(f64::total_cmp);
        let m = med[med.len() / 2];
        let db = 10.0 * (s[k] / m).log10();
        if db < threshold_db {
            continue;
        }
        let half = 0.5 * (s[k] + m);
        let edge = |dir: isize| -> f64 {
            let mut j = k as isize;
            while j + dir >= 0 && ((j + dir) as usize) < s.len() && s[(j + dir) as usize] > half {
                j += dir;
            }
            let (a, b) = (j as usize, (j + dir).clamp(0, s.len() as isize - 1) as usize);
            if a == b || s[a] == s[b] {
                return a as f64;
            }
            a as f64 + dir as f64 * (s[a] - half) / (s[a] - s[b])
        };
        let fwhm = (edge(1) - edge(-1)).max(1.0) * g.d_omega;
        out.push(DetectedPeak { omega: k as f64 * g.d_omega, height: s[k], fwhm, prominence_db: db });
    }
    out
}

/// Angular-frequency band `[lo, hi]` (rad/s, positive side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn contains(&self, w: f64) -> bool {
        w >= self.lo && w <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitOptions {
    /// Bands excluded from the objective.
    pub mask: Vec<Band>,
    /// Fit only inside this band when set.
    pub band: Option<Band>,
    /// Iteration cap; 500 when zero.
    pub max_iterations: usize,
    /// Snap initial mode frequencies and widths to detected peaks.
    pub detect_peaks: bool,
    /// Independent averages behind each bin; removes the bias of the
    /// logarithm of an averaged periodogram when set.
    pub averages: Option<usize>,
}

/// `E[ln Ŝ] − ln S` for a mean of `k` independent exponential periodogram
/// values, `ψ(k) − ln k`.
pub fn log_average_bias(k: usize) -> f64 {
    let k = k as f64;
    -1.0 / (2.0 * k) - 1.0 / (12.0 * k * k) + 1.0 / (120.0 * k.powi(4))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: MeasurementModel,
    pub parameters: Vec<FitParameter>,
    /// RMS of the natural-log residual over the fitted bins.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fitted_bins: usize,
    pub notes: Vec<String>,
}

/// Which model number a fit parameter controls (all as logarithms).
#[derive(Debug, Clone, Copy)]
enum Slot {
    ModeOmega(usize),
    ModeGamma(usize),
    ModeMu(usize),
    Noise(usize, u8),
}

fn slots(meas: &MeasurementModel) -> Vec<(Slot, String)> {
    let mut v = Vec::new();
    for (j, m) in meas.signal_modes.iter().enumerate() {
        v.push((Slot::ModeOmega(j), format!("{}.omega", m.label)));
        v.push((Slot::ModeGamma(j), format!("{}.gamma", m.label)));
        if m.mu > 0.0 {
            v.push((Slot::ModeMu(j), format!("{}.mu", m.label)));
        }
    }
    for (i, c) in meas.noise_components.iter().enumerate() {
        match c {
            NoiseComponent::ShotFloor { .. } => v.push((Slot::Noise(i, 0), format!("noise{i}.level"))),
            NoiseComponent::LorentzianPeak { .. } => {
                v.push((Slot::Noise(i, 0), format!("noise{i}.center")));
                v.push((Slot::Noise(i, 1), format!("noise{i}.width")));
                v.push((Slot::Noise(i, 2), format!("noise{i}.height")));
            }
            NoiseComponent::StructuralPeak { mode } => {
                v.push((Slot::Noise(i, 0), format!("noise{i}.omega")));
                v.push((Slot::Noise(i, 1), format!("noise{i}.gamma")));
                if mode.mu > 0.0 {
                    v.push((Slot::Noise(i, 2), format!("noise{i}.mu")));
                }
            }
            NoiseComponent::TabulatedCurve { .. } => {}
        }
    }
    v
}

fn slot_mut(meas: &mut MeasurementModel, s: Slot) -> &mut f64 {
    match s {
        Slot::ModeOmega(j) => &mut meas.signal_modes[j].omega,
        Slot::ModeGamma(j) => &mut meas.signal_modes[j].gamma,
        Slot::ModeMu(j) => &mut meas.signal_modes[j].mu,
        Slot::Noise(i, k) => match &mut meas.noise_components[i] {
            NoiseComponent::ShotFloor { level } => level,
            NoiseComponent::LorentzianPeak { center, width, height } => match k {
                0 => center,
                1 => width,
                _ => height,
            },
            NoiseComponent::StructuralPeak { mode } => match k {
                0 => &mut mode.omega,
                1 => &mut mode.gamma,
                _ => &mut mode.mu,
            },
            NoiseComponent::TabulatedCurve { .. } => unreachable!("tabulated curves have no parameters"),
        },
    }
}

fn with_params(template: &MeasurementModel, slots: &[(Slot, String)], x: &[f64]) -> MeasurementModel {
    let mut m = template.clone();
    for ((s, _), v) in slots.iter().zip(x) {
        *slot_mut(&mut m, *s) = v.exp();
    }
    m
}

/// `ln S_YY` of `meas` at each of `omegas`, or `None` if the model is
/// invalid there.
fn log_model(meas: &MeasurementModel, omegas: &[f64]) -> Option<Vec<f64>> {
    if meas.validate().is_err() {
        return None;
    }
    let cm = CollectiveModel::new(meas, &[0]).ok()?;
    let mut sc = Scratch::default();
    omegas
        .iter()
        .map(|&w| {
            let s = cm.at(w, &mut sc).s_yy;
            (s > 0.0 && s.is_finite()).then(|| s.ln())
        })
        .collect()
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Levenberg–Marquardt fit of `template` to `psd` on `ln S`, with uniform
/// weights and all rates parameterized by their logarithms. Mode `n_th`,
/// `ω_c`, `η` and tabulated curves stay fixed.
pub fn fit_psd(psd: &SampledSpectrum, template: &MeasurementModel, opts: &FitOptions) -> Result<FitResult> {
    if template.signal_modes.is_empty() {
        return invalid("fit template has no modes");
    }
    template.validate()?;
    let g = psd.grid;
    let mut omegas = Vec::new();
    let mut data = Vec::new();
    for k in 1..g.n_points / 2 {
        let w = g.omega(k);
        if opts.mask.iter().any(|b| b.contains(w)) || opts.band.is_some_and(|b| !b.contains(w)) {
            continue;
        }
        let v = psd.values[k].re;
        if v > 0.0 && v.is_finite() {
            omegas.push(w);
            data.push(v.ln());
        }
    }
    if let Some(k) = opts.averages.filter(|&k| k > 0) {
        let b = log_average_bias(k);
        data.iter_mut().for_each(|v| *v -= b);
    }
    let mut start = template.clone();
    if opts.detect_peaks {
        let peaks = detect_peaks(psd, 6.0, 64);
        for m in &mut start.signal_modes {
            let near = peaks
                .iter()
                .filter(|p| (p.omega - m.omega).abs() < 10.0 * m.gamma.max(g.d_omega))
                .max_by(|a, b| a.height.total_cmp(&b.height));
            if let Some(p) = near {
                m.omega = p.omega;
                if p.fwhm > 2.0 * g.d_omega {
                    m.gamma = p.fwhm;
                }
            }
        }
    }
    let slots = slots(&start);
    let p = slots.len();
    if omegas.len() <= p {
        return invalid(format!("{} fitted bins for {p} parameters", omegas.len()));
    }
    let residual_of = |x: &[f64]| -> Option<Vec<f64>> {
        let m = log_model(&with_params(&start, &slots, x), &omegas)?;
        Some(m.iter().zip(&data).map(|(a, b)| a - b).collect())
    };
    let mut x: Vec<f64> = slots.iter().map(|(s, _)| slot_mut(&mut start.clone(), *s).ln()).collect();
    let mut r = residual_of(&x).ok_or_else(|| Error::InvalidParameter("template spectrum is not positive".into()))?;
    let mut c = cost(&r);
    let max_it = if opts.max_iterations == 0 { 500 } else { opts.max_iterations };
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = DMatrix::<f64>::zeros(omegas.len(), p);
    let jacobian = |x: &[f64], r: &[f64], jac: &mut DMatrix<f64>| -> bool {
        for i in 0..p {
            let mut xp = x.to_vec();
            let h = 1e-6;
            xp[i] += h;
            let Some(rp) = residual_of(&xp) else { return false };
            for (k, (a, b)) in rp.iter().zip(r).enumerate() {
                jac[(k, i)] = (a - b) / h;
            }
        }
        true
    };
    if !jacobian(&x, &r, &mut jac) {
        return invalid("model is not differentiable at the template parameters");
    }
    while iterations < max_it {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        let mut a = jtj.clone();
        for i in 0..p {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let step = a.cholesky().map(|ch| ch.solve(&(-&grad)));
        let accepted = step.as_ref().and_then(|d| {
            let xn: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
            let rn = residual_of(&xn)?;
            let cn = cost(&rn);
            (cn < c).then_some((xn, rn, cn))
        });
        match accepted {
            Some((xn, rn, cn)) => {
                let small = step.as_ref().map(|d| d.amax()).unwrap_or(0.0) < 1e-10;
                let rel = (c - cn) / c.max(f64::MIN_POSITIVE);
                x = xn;
                r = rn;
                c = cn;
                lambda = (lambda / 3.0).max(1e-12);
                if !jacobian(&x, &r, &mut jac) {
                    break;
                }
                if rel < 1e-12 || small {
                    converged = true;
                    break;
                }
            }
            None => {
                lambda *= 4.0;
                if lambda > 1e12 {
                    converged = grad.amax() < 1e-6 * (1.0 + c);
                    break;
                }
            }
        }
    }
    let model = with_params(&start, &slots, &x);
    let m = omegas.len();
    let s2 = 2.0 * c / (m - p) as f64;
    let cov = (jac.transpose() * &jac).try_inverse();
    let parameters = slots
        .iter()
        .enumerate()
        .map(|(i, (_, name))| {
            let v = x[i].exp();
            let se = cov.as_ref().map(|c| v * (s2 * c[(i, i)]).max(0.0).sqrt()).unwrap_or(f64::NAN);
            FitParameter { name: name.clone(), value: v, std_error: se }
        })
        .collect();
    let mut notes = vec!["uniform weights in log space; per-bin Welch statistics are not used".to_string()];
    if !converged {
        notes.push(format!("no convergence after {iterations} iterations; best parameters returned"));
    }
    Ok(FitResult {
        model,
        parameters,
        residual: (2.0 * c / m as f64).sqrt(),
        iterations,
        converged,
        fitted_bins: m,
        notes,
    })
}

/// The fitted model as a config file.
pub fn model_export(fit: &FitResult) -> String {
    ModelConfig::from_model(&fit.model).to_json()
}
