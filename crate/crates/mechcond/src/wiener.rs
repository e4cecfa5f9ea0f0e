//! Causal and anti-causal Wiener filters for a collective mode.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::binio::{self, FILTER_MAGIC};
use crate::error::{invalid, Error, Result};
use crate::grid::{to_time, FrequencyGrid, C64};
use crate::model::{CollectiveSpectra, Damping, MeasurementModel, ModeModel, NoiseComponent, SHOT_FLOOR};
use crate::specfact::{anticausal_vec, causal_vec, log_factor_vec, SplitRule};
use crate::spectrum::SampledSpectrum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerFilterSet {
    pub h_q_causal: SampledSpectrum,
    pub h_p_causal: SampledSpectrum,
    pub h_q_anticausal: SampledSpectrum,
    pub h_p_anticausal: SampledSpectrum,
    pub subset: Vec<usize>,
    pub rule: SplitRule,
    pub model_hash: String,
    pub grid: FrequencyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    QCausal,
    PCausal,
    QAnticausal,
    PAnticausal,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] =
        [FilterKind::QCausal, FilterKind::PCausal, FilterKind::QAnticausal, FilterKind::PAnticausal];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::QCausal => "h_q_causal",
            FilterKind::PCausal => "h_p_causal",
            FilterKind::QAnticausal => "h_q_anticausal",
            FilterKind::PAnticausal => "h_p_anticausal",
        }
    }

    pub fn is_causal(self) -> bool {
        matches!(self, FilterKind::QCausal | FilterKind::PCausal)
    }
}

impl WienerFilterSet {
    pub fn get(&self, kind: FilterKind) -> &SampledSpectrum {
        match kind {
            FilterKind::QCausal => &self.h_q_causal,
            FilterKind::PCausal => &self.h_p_causal,
            FilterKind::QAnticausal => &self.h_q_anticausal,
            FilterKind::PAnticausal => &self.h_p_anticausal,
        }
    }

    /// Full complex responses, framed binary.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let header = FilterHeader {
            subset: self.subset.clone(),
            rule: self.rule,
            model_hash: self.model_hash.clone(),
            grid: self.grid,
            filters: FilterKind::ALL.iter().map(|k| k.name().to_string()).collect(),
        };
        let mut payload = Vec::with_capacity(8 * self.grid.n_points);
        for k in FilterKind::ALL {
            for v in &self.get(k).values {
                payload.push(v.re);
                payload.push(v.im);
            }
        }
        binio::write_framed(w, &FILTER_MAGIC, &header, &payload)
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let (h, p): (FilterHeader, Vec<f64>) = binio::read_framed(r, &FILTER_MAGIC)?;
        let n = h.grid.n_points;
        if p.len() != 8 * n {
            return Err(Error::Format(format!("filter payload has {} values, expected {}", p.len(), 8 * n)));
        }
        let grid = FrequencyGrid::new(n, h.grid.d_omega)?;
        let take = |i: usize| {
            let vals = p[2 * n * i..2 * n * (i + 1)].chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect();
            SampledSpectrum { grid, values: vals, hermitian: true }
        };
        Ok(Self {
            h_q_causal: take(0),
            h_p_causal: take(1),
            h_q_anticausal: take(2),
            h_p_anticausal: take(3),
            subset: h.subset,
            rule: h.rule,
            model_hash: h.model_hash,
            grid,
        })
    }

    /// Lag-domain taps `dt·h(t_n)` of one filter, in FFT lag order.
    pub fn taps(&self, kind: FilterKind) -> Vec<C64> {
        to_time(&self.get(kind).values)
    }
}

#[derive(Serialize, Deserialize)]
struct FilterHeader {
    subset: Vec<usize>,
    rule: SplitRule,
    model_hash: String,
    grid: FrequencyGrid,
    filters: Vec<String>,
}

/// CSV of `omega_rad_s,abs_h,arg_h`, ascending ω.
pub fn write_filter_csv<W: Write>(h: &SampledSpectrum, mut w: W) -> Result<()> {
    writeln!(w, "omega_rad_s,abs_h,arg_h")?;
    let n = h.grid.n_points;
    for j in 0..n {
        let k = (j + n / 2) % n;
        let v = h.values[k];
        writeln!(w, "{:e},{:e},{:e}", h.grid.omega(k), v.norm(), v.arg())?;
    }
    Ok(())
}

/// Reads a filter CSV back into a complex response.
pub fn read_filter_csv<R: BufRead>(r: R) -> Result<SampledSpectrum> {
    let polar = SampledSpectrum::read_csv(r)?;
    Ok(polar.map(|_, v| C64::from_polar(v.re, v.im)))
}

/// Minimum-phase factor of `S_YY` and the four optimal filters.
pub(crate) struct Design {
    pub m: Vec<C64>,
    pub filters: WienerFilterSet,
}

pub(crate) fn design(
    meas: &MeasurementModel,
    subset: &[usize],
    grid: &FrequencyGrid,
    rule: SplitRule,
    spectra: &CollectiveSpectra,
) -> Result<Design> {
    let (logm, _) = log_factor_vec(&spectra.s_yy, grid, rule)?;
    let m: Vec<C64> = logm.into_iter().map(|v| v.exp()).collect();
    let over_mc = |s: &[C64]| -> Vec<C64> { s.iter().zip(&m).map(|(a, b)| a / b.conj()).collect() };
    let over_m = |s: &[C64]| -> Vec<C64> { s.iter().zip(&m).map(|(a, b)| a / b).collect() };
    let causal = |s: &[C64]| -> Vec<C64> {
        causal_vec(&over_mc(s), grid, rule).into_iter().zip(&m).map(|(a, b)| a / b).collect()
    };
    let anticausal = |s: &[C64]| -> Vec<C64> {
        anticausal_vec(&over_m(s), grid, rule).into_iter().zip(&m).map(|(a, b)| a / b.conj()).collect()
    };
    let wrap = |v: Vec<C64>| SampledSpectrum { grid: *grid, values: v, hermitian: true };
    let filters = WienerFilterSet {
        h_q_causal: wrap(causal(&spectra.s_qy)),
        h_p_causal: wrap(causal(&spectra.s_py)),
        h_q_anticausal: wrap(anticausal(&spectra.s_qy)),
        h_p_anticausal: wrap(anticausal(&spectra.s_py)),
        subset: subset.to_vec(),
        rule,
        model_hash: meas.hash(),
        grid: *grid,
    };
    Ok(Design { m, filters })
}

/// Optimal filters for sampled records (lag 0 counted as the present).
pub fn synthesize_filters(meas: &MeasurementModel, subset: &[usize], grid: &FrequencyGrid) -> Result<WienerFilterSet> {
    synthesize_filters_with(meas, subset, grid, SplitRule::Sampled)
}

/// `H⃗ = (1/M)[S_·Y/M*]₊`, `H⃖ = (1/M*)[S_·Y/M]₋` under `rule`.
pub fn synthesize_filters_with(
    meas: &MeasurementModel,
    subset: &[usize],
    grid: &FrequencyGrid,
    rule: SplitRule,
) -> Result<WienerFilterSet> {
    meas.check_grid(grid)?;
    let spectra = CollectiveSpectra::compute(meas, subset, grid)?;
    Ok(design(meas, subset, grid, rule, &spectra)?.filters)
}

/// Closed-form single viscous mode under shot-noise-limited detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscousClosedForm {
    pub omega: f64,
    pub gamma: f64,
    pub omega_mod: f64,
    pub gamma_mod: f64,
    pub a: f64,
    pub b: f64,
    pub n_tot: f64,
    pub cooperativity: f64,
}

impl ViscousClosedForm {
    pub fn new(mode: &ModeModel, eta: f64) -> Result<Self> {
        mode.validate()?;
        if mode.damping != Damping::Viscous {
            return invalid("closed-form filters exist only for viscous damping");
        }
        let (o, g) = (mode.omega, mode.gamma);
        let c = mode.cooperativity();
        let n_tot = mode.n_th + c + 0.5;
        let o2 = o * o;
        let omega_mod = (16.0 * eta * g * g * c * n_tot * o2 + o2 * o2).powf(0.25);
        let op2 = omega_mod * omega_mod;
        let gamma_mod = (-2.0 * o2 + g * g + 2.0 * op2).sqrt();
        let a = 8.0 * (eta * g.powi(3) * c).sqrt() * n_tot * o2 / (o2 + op2);
        let b = (g + gamma_mod) / (op2 - o2 + g * g + g * gamma_mod);
        Ok(Self { omega: o, gamma: g, omega_mod, gamma_mod, a, b, n_tot, cooperativity: c })
    }

    /// `χ′(ω) = 1/(Ω′² − ω² − iΓ′ω)`.
    pub fn chi_mod(&self, w: f64) -> C64 {
        C64::new(1.0, 0.0) / C64::new(self.omega_mod * self.omega_mod - w * w, -self.gamma_mod * w)
    }

    pub fn h_q(&self, w: f64) -> C64 {
        self.a * C64::new(1.0, -self.b * w) * self.chi_mod(w)
    }

    pub fn h_p(&self, w: f64) -> C64 {
        let (o, op) = (self.omega, self.omega_mod);
        let k = C64::new(o * o, w * (op * op - o * o) / (self.gamma_mod + self.gamma));
        -(self.a * self.b / o) * k * self.chi_mod(w)
    }

    /// `V_ΔqΔq = A²B²/(Γ+Γ′)·(1 + 2ΓΓ′/(Ω²+Ω′²))`.
    pub fn relative_variance_q(&self) -> f64 {
        let (o, g, op, gp) = (self.omega, self.gamma, self.omega_mod, self.gamma_mod);
        self.a * self.a * self.b * self.b / (g + gp) * (1.0 + 2.0 * g * gp / (o * o + op * op))
    }

    /// `V_ΔpΔp`; twice the bracketed expression, which is what direct
    /// integration of the filter responses gives.
    pub fn relative_variance_p(&self) -> f64 {
        let (o, g, op, gp) = (self.omega, self.gamma, self.omega_mod, self.gamma_mod);
        let (o2, op2) = (o * o, op * op);
        let bracket = g * o2 / 2.0 + gp * op2 / 2.0 + g * gp * (g - gp) * (op2 - o2) / (2.0 * (o2 + op2));
        2.0 * self.a * self.a * self.b * self.b / ((g + gp).powi(2) * o2) * bracket
    }
}

/// Closed-form filters of a single viscous mode sampled on `grid`.
/// Anti-causal responses are `H⃖_q = conj(H⃗_q)`, `H⃖_p = −conj(H⃗_p)`.
pub fn analytic_viscous_filters(mode: &ModeModel, eta: f64, grid: &FrequencyGrid) -> Result<WienerFilterSet> {
    let cf = ViscousClosedForm::new(mode, eta)?;
    let hq: Vec<C64> = (0..grid.n_points).map(|k| cf.h_q(grid.omega(k))).collect();
    let hp: Vec<C64> = (0..grid.n_points).map(|k| cf.h_p(grid.omega(k))).collect();
    let wrap = |v: Vec<C64>| SampledSpectrum { grid: *grid, values: v, hermitian: true };
    let meas = MeasurementModel::new(eta, vec![mode.clone()]);
    Ok(WienerFilterSet {
        h_q_anticausal: wrap(hq.iter().map(|v| v.conj()).collect()),
        h_p_anticausal: wrap(hp.iter().map(|v| -v.conj()).collect()),
        h_q_causal: wrap(hq),
        h_p_causal: wrap(hp),
        subset: vec![0],
        rule: SplitRule::Continuous,
        model_hash: meas.hash(),
        grid: *grid,
    })
}

/// Is `meas` a single viscous mode with only the standard shot floor?
pub fn is_closed_form_case(meas: &MeasurementModel) -> bool {
    meas.signal_modes.len() == 1
        && meas.signal_modes[0].damping == Damping::Viscous
        && meas.noise_components == [NoiseComponent::ShotFloor { level: SHOT_FLOOR }]
}

/// `‖a − b‖₂ / ‖b‖₂` over the grid.
pub fn relative_l2(a: &SampledSpectrum, b: &SampledSpectrum) -> f64 {
    let num: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.values.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    /// Largest wrong-side lag energy fraction over the four filters.
    pub causality_leakage: f64,
    /// Notch frequencies of `|H⃗_q|` (rad/s, positive side).
    pub notches: Vec<f64>,
    /// Frequency of the largest `|H⃗_q|` (rad/s).
    pub passband_center: f64,
}

/// Causality leakage, notches and passband center of a filter set.
pub fn filter_quality(filters: &WienerFilterSet, _meas: &MeasurementModel) -> FilterDiagnostics {
    let mut leak: f64 = 0.0;
    for k in FilterKind::ALL {
        let h = &filters.get(k).values;
        let f = crate::specfact::anticausal_energy_fraction(h);
        let wrong = if k.is_causal() {
            f
        } else if h.iter().any(|v| v.norm() > 0.0) {
            1.0 - f
        } else {
            0.0
        };
        leak = leak.max(wrong);
    }
    let g = filters.grid;
    let half = g.n_points / 2;
    let mag: Vec<f64> = filters.h_q_causal.values[..half].iter().map(|v| v.norm()).collect();
    let (imax, hmax) = mag.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let mut notches = Vec::new();
    if hmax > 0.0 {
        let win = 64usize;
        for i in 1..half - 1 {
            let v = mag[i];
            if !(v < mag[i - 1] && v <= mag[i + 1] && v < 1e-2 * hmax) {
                continue;
            }
            let left = mag[i.saturating_sub(win)..i].iter().copied().fold(0.0, f64::max);
            let right = mag[i + 1..(i + 1 + win).min(half)].iter().copied().fold(0.0, f64::max);
            if left > 3.0 * v && right > 3.0 * v {
                notches.push(g.omega(i));
            }
        }
    }
    FilterDiagnostics { causality_leakage: leak, notches, passband_center: g.omega(imax) }
}
