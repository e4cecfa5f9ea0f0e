//! Conditional and relative statistics of filtered photocurrent records.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{to_freq_in_place, to_time_in_place, FrequencyGrid, C64};
use crate::model::{CollectiveSpectra, MeasurementModel};
use crate::specfact::{log_factor_vec, SplitRule};
use crate::spectrum::SampledSpectrum;
use crate::wiener::{design, FilterKind, WienerFilterSet};

/// Tap energy beyond the impulse length, relative to the total.
pub const TAP_TAIL: f64 = 1e-6;

/// Predictions and retrodictions of the collective quadratures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTraces {
    pub q_pred: Vec<f64>,
    pub p_pred: Vec<f64>,
    pub q_retro: Vec<f64>,
    pub p_retro: Vec<f64>,
    pub valid_start: usize,
    pub valid_end: usize,
    pub dt: f64,
    pub impulse_length: usize,
}

impl EstimateTraces {
    pub fn valid(&self) -> std::ops::Range<usize> {
        self.valid_start..self.valid_end
    }

    pub fn delta_q(&self) -> Vec<f64> {
        self.valid().map(|i| self.q_pred[i] - self.q_retro[i]).collect()
    }

    pub fn delta_p(&self) -> Vec<f64> {
        self.valid().map(|i| self.p_pred[i] - self.p_retro[i]).collect()
    }
}

/// Number of taps holding all but [`TAP_TAIL`] of the energy on the
/// filter's own side.
fn impulse_length(taps: &[C64], causal: bool, tail_fraction: f64) -> usize {
    let n = taps.len();
    let side: Vec<f64> = if causal {
        taps[..n / 2].iter().map(|v| v.re * v.re).collect()
    } else {
        (1..=n / 2).map(|m| taps[n - m].re.powi(2)).collect()
    };
    let total: f64 = side.iter().sum();
    if total == 0.0 {
        return 1;
    }
    let mut tail = 0.0;
    for (i, e) in side.iter().enumerate().rev() {
        tail += e;
        if tail > tail_fraction * total {
            return i + 1;
        }
    }
    1
}

/// `q̂⃗ = H⃗ ⊛ Y` and `q̂⃖ = H⃖ ⊛ Y` by zero-padded FFT convolution.
///
/// Causal filters use lags `0..L` (present and past samples), anti-causal
/// filters lags `−L..−1` (future samples only). One impulse length `L` is
/// excluded at each end of the record. Taps are truncated where all but
/// [`TAP_TAIL`] of their energy is kept.
pub fn apply_filters(filters: &WienerFilterSet, y: &[f64], dt: f64) -> Result<EstimateTraces> {
    apply_filters_with(filters, y, dt, TAP_TAIL)
}

pub fn apply_filters_with(filters: &WienerFilterSet, y: &[f64], dt: f64, tail_fraction: f64) -> Result<EstimateTraces> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return invalid(format!("tap tail fraction {tail_fraction} must lie in (0, 1)"));
    }
    let grid = filters.grid;
    if ((dt - grid.dt()) / grid.dt()).abs() > 1e-9 {
        return Err(Error::SamplePeriodMismatch { data: dt, grid: grid.dt() });
    }
    let taps: Vec<Vec<C64>> = FilterKind::ALL.iter().map(|&k| filters.taps(k)).collect();
    let l = FilterKind::ALL
        .iter()
        .zip(&taps)
        .map(|(k, t)| impulse_length(t, k.is_causal(), tail_fraction))
        .max()
        .unwrap_or(1);
    let len = y.len();
    if len < 4 * l {
        return Err(Error::TraceTooShort { len, need: 4 * l });
    }
    let f = (len + l + 1).next_power_of_two();
    let mut yf: Vec<C64> = y.iter().map(|&v| C64::new(v, 0.0)).collect();
    yf.resize(f, C64::new(0.0, 0.0));
    to_time_in_place(&mut yf);
    let n = grid.n_points;
    let run = |a: &[C64], b: &[C64], causal: bool| -> (Vec<f64>, Vec<f64>) {
        let mut k = vec![C64::new(0.0, 0.0); f];
        if causal {
            for m in 0..l.min(n / 2) {
                k[m] = C64::new(a[m].re, b[m].re);
            }
        } else {
            for m in 1..=l.min(n / 2) {
                k[f - m] = C64::new(a[n - m].re, b[n - m].re);
            }
        }
        to_time_in_place(&mut k);
        for (kv, yv) in k.iter_mut().zip(&yf) {
            *kv *= yv * f as f64;
        }
        to_freq_in_place(&mut k);
        (k[..len].iter().map(|v| v.re).collect(), k[..len].iter().map(|v| v.im).collect())
    };
    let (q_pred, p_pred) = run(&taps[0], &taps[1], true);
    let (q_retro, p_retro) = run(&taps[2], &taps[3], false);
    Ok(EstimateTraces { q_pred, p_pred, q_retro, p_retro, valid_start: l, valid_end: len - l, dt, impulse_length: l })
}

/// Conditional error spectra for one estimator pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorSpectra {
    pub s_dq_dq: SampledSpectrum,
    pub s_dp_dp: SampledSpectrum,
    pub s_dq_dp: SampledSpectrum,
    /// Add the `1/ω²` tail beyond the grid when integrating.
    pub tail: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalSpectra {
    pub pred: ErrorSpectra,
    pub retro: ErrorSpectra,
}

fn error_spectra(sp: &CollectiveSpectra, m: &[C64], hq: &[C64], hp: &[C64], tail: bool) -> ErrorSpectra {
    let n = m.len();
    let (mut dq, mut dp, mut dqp) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let mk = m[k];
        let syy = sp.s_yy[k];
        let rq = sp.s_qy[k] / mk.conj() - hq[k] * mk;
        let rp = sp.s_py[k] / mk.conj() - hp[k] * mk;
        dq.push(C64::new(sp.schur_qq[k] / syy + rq.norm_sqr(), 0.0));
        dp.push(C64::new(sp.schur_pp[k] / syy + rp.norm_sqr(), 0.0));
        dqp.push(sp.schur_qp[k] / syy + rq * rp.conj());
    }
    let g = sp.grid;
    ErrorSpectra {
        s_dq_dq: SampledSpectrum { grid: g, values: dq, hermitian: true },
        s_dp_dp: SampledSpectrum { grid: g, values: dp, hermitian: true },
        s_dq_dp: SampledSpectrum { grid: g, values: dqp, hermitian: false },
        tail,
    }
}

/// `S_δq̂δq̂ = S_qq + |H|²S_YY − 2Re{H* S_qY}` and its momentum and cross
/// counterparts, evaluated as `Schur/S_YY + |S_qY/M* − H M|²` so that
/// nearly optimal filters do not lose precision to cancellation.
pub fn conditional_spectra(
    meas: &MeasurementModel,
    filters: &WienerFilterSet,
    subset: &[usize],
) -> Result<ConditionalSpectra> {
    let grid = filters.grid;
    let sp = CollectiveSpectra::compute(meas, subset, &grid)?;
    let (logm, _) = log_factor_vec(&sp.s_yy, &grid, filters.rule)?;
    let m: Vec<C64> = logm.into_iter().map(|v| v.exp()).collect();
    Ok(spectra_from(&sp, &m, filters))
}

fn spectra_from(sp: &CollectiveSpectra, m: &[C64], filters: &WienerFilterSet) -> ConditionalSpectra {
    let tail = filters.rule == SplitRule::Continuous;
    ConditionalSpectra {
        pred: error_spectra(sp, m, &filters.h_q_causal.values, &filters.h_p_causal.values, tail),
        retro: error_spectra(sp, m, &filters.h_q_anticausal.values, &filters.h_p_anticausal.values, tail),
    }
}

/// `Σ f dω/2π` plus, when `tail` is set, `∫ f` beyond the grid edges
/// extrapolated as `1/ω²` from the two edge bins.
pub fn integrate_spectrum(f: &[f64], grid: &FrequencyGrid, tail: bool) -> f64 {
    let dw = grid.d_omega;
    let band: f64 = f.iter().sum::<f64>() * dw / TAU;
    if !tail {
        return band;
    }
    let n = grid.n_points;
    let wm = grid.omega_max();
    let neg = f[n / 2] * wm * wm / (wm + 0.5 * dw);
    let pos = f[n / 2 - 1] * (wm - dw).powi(2) / (wm - 0.5 * dw);
    band + (neg + pos) / TAU
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Covariance {
    pub v_qq: f64,
    pub v_pp: f64,
    pub c_qp: f64,
}

impl Covariance {
    /// `V_qq V_pp − C_qp²`.
    pub fn determinant(&self) -> f64 {
        self.v_qq * self.v_pp - self.c_qp * self.c_qp
    }

    /// Purity `1/(2√det)` of a Gaussian state with vacuum variance 1/2.
    pub fn purity(&self) -> f64 {
        0.5 / self.determinant().max(0.0).sqrt()
    }
}

fn variances_of(e: &ErrorSpectra) -> Result<Covariance> {
    let g = e.s_dq_dq.grid;
    let cov = Covariance {
        v_qq: integrate_spectrum(&e.s_dq_dq.re(), &g, e.tail),
        v_pp: integrate_spectrum(&e.s_dp_dp.re(), &g, e.tail),
        c_qp: integrate_spectrum(&e.s_dq_dp.re(), &g, e.tail),
    };
    for v in [cov.v_qq, cov.v_pp] {
        if !(v >= 0.0) {
            return Err(Error::NegativeVariance(v));
        }
    }
    if cov.determinant() < -1e-9 * cov.v_qq * cov.v_pp {
        return Err(Error::NegativeVariance(cov.determinant()));
    }
    Ok(cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalVariances {
    pub pred: Covariance,
    pub retro: Covariance,
}

/// `V = ∫ S dω/2π` for each error spectrum.
pub fn conditional_variances(spectra: &ConditionalSpectra) -> Result<ConditionalVariances> {
    Ok(ConditionalVariances { pred: variances_of(&spectra.pred)?, retro: variances_of(&spectra.retro)? })
}

/// Model value of the relative-estimate covariance,
/// `∫ (H⃗ − H⃖)_a (H⃗ − H⃖)_b* S_YY dω/2π`.
pub fn model_relative_covariance(filters: &WienerFilterSet, s_yy: &[f64]) -> Covariance {
    let g = filters.grid;
    let n = g.n_points;
    let (mut fq, mut fp, mut fc) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (k, &s) in s_yy.iter().enumerate().take(n) {
        let dq = filters.h_q_causal.values[k] - filters.h_q_anticausal.values[k];
        let dp = filters.h_p_causal.values[k] - filters.h_p_anticausal.values[k];
        fq.push(dq.norm_sqr() * s);
        fp.push(dp.norm_sqr() * s);
        fc.push((dq * dp.conj()).re * s);
    }
    let tail = filters.rule == SplitRule::Continuous;
    Covariance {
        v_qq: integrate_spectrum(&fq, &g, tail),
        v_pp: integrate_spectrum(&fp, &g, tail),
        c_qp: integrate_spectrum(&fc, &g, tail),
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}

/// Sample covariance of `(q, p)` pairs.
pub fn sample_covariance(q: &[f64], p: &[f64]) -> Covariance {
    Covariance { v_qq: covariance(q, q), v_pp: covariance(p, p), c_qp: covariance(q, p) }
}

/// Sample statistics of `Δq = q̂⃗ − q̂⃖`, `Δp = p̂⃗ − p̂⃖` over the valid range.
pub fn relative_estimate_stats(traces: &EstimateTraces) -> Result<Covariance> {
    if traces.valid_end <= traces.valid_start + 1 {
        return invalid("valid range of the estimate traces is empty");
    }
    Ok(sample_covariance(&traces.delta_q(), &traces.delta_p()))
}

/// `F = 1 − V_Δ/(2V_δ)` for each quadrature.
pub fn conversion_factors(relative: &Covariance, conditional: &Covariance) -> Result<(f64, f64)> {
    if conditional.v_qq == 0.0 || conditional.v_pp == 0.0 {
        return invalid("conditional variance is zero");
    }
    Ok((1.0 - relative.v_qq / (2.0 * conditional.v_qq), 1.0 - relative.v_pp / (2.0 * conditional.v_pp)))
}

/// `V_δ = V_Δ/(2(1 − F))`.
pub fn infer_conditional_from_relative(v_relative: f64, f: f64) -> Result<f64> {
    if !(f < 1.0) {
        return invalid(format!("conversion factor {f} must be below 1"));
    }
    Ok(v_relative / (2.0 * (1.0 - f)))
}

/// Pearson correlations of the relative estimates of two collective modes
/// over the samples valid for both.
pub fn collective_correlations(a: &EstimateTraces, b: &EstimateTraces) -> Result<(f64, f64)> {
    if a.q_pred.len() != b.q_pred.len() || a.dt != b.dt {
        return invalid("estimate traces do not share a time base");
    }
    let r = a.valid_start.max(b.valid_start)..a.valid_end.min(b.valid_end);
    if r.len() < 2 {
        return invalid("estimate traces share no valid samples");
    }
    let delta = |t: &EstimateTraces, q: bool| -> Vec<f64> {
        let (x, y) = if q { (&t.q_pred, &t.q_retro) } else { (&t.p_pred, &t.p_retro) };
        r.clone().map(|i| x[i] - y[i]).collect()
    };
    let rho = |x: &[f64], y: &[f64]| -> Result<f64> {
        let d = (covariance(x, x) * covariance(y, y)).sqrt();
        if d == 0.0 {
            return invalid("zero-variance relative estimate");
        }
        Ok(covariance(x, y) / d)
    };
    Ok((rho(&delta(a, true), &delta(b, true))?, rho(&delta(a, false), &delta(b, false))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Simulated,
    Analytic,
    InferredFromData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub subset: Vec<usize>,
    pub provenance: Provenance,
    #[serde(rename = "V_dq_dq")]
    pub v_dq_dq: f64,
    #[serde(rename = "V_dp_dp")]
    pub v_dp_dp: f64,
    #[serde(rename = "C_dq_dp")]
    pub c_dq_dp: f64,
    #[serde(rename = "V_Dq_Dq")]
    pub v_rel_qq: f64,
    #[serde(rename = "V_Dp_Dp")]
    pub v_rel_pp: f64,
    #[serde(rename = "C_Dq_Dp")]
    pub c_rel_qp: f64,
    #[serde(rename = "F_q")]
    pub f_q: f64,
    #[serde(rename = "F_p")]
    pub f_p: f64,
    pub purity: f64,
    /// `V_δp/V_δq`.
    pub squeezing_ratio: f64,
    /// `V_Δp/V_Δq`.
    pub relative_squeezing_ratio: f64,
    /// Retrodiction covariance, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retro: Option<Covariance>,
    /// Standard errors of the Monte Carlo means, in field order
    /// `V_dq_dq, V_dp_dp, C_dq_dp, V_Dq_Dq, V_Dp_Dp, C_Dq_Dp, F_q, F_p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_errors: Option<[f64; 8]>,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub grid: FrequencyGrid,
    pub rule: SplitRule,
    pub model_hash: String,
    /// Relative change of `V_dq_dq` at half grid resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub richardson_rel_diff: Option<f64>,
    /// False when the half-resolution check exceeds 0.5%.
    pub quadrature_ok: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ConditioningReport {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        subset: &[usize],
        provenance: Provenance,
        cond: Covariance,
        rel: Covariance,
        retro: Option<Covariance>,
        grid: FrequencyGrid,
        rule: SplitRule,
        model_hash: String,
    ) -> Self {
        let f_q = 1.0 - rel.v_qq / (2.0 * cond.v_qq);
        let f_p = 1.0 - rel.v_pp / (2.0 * cond.v_pp);
        Self {
            subset: subset.to_vec(),
            provenance,
            v_dq_dq: cond.v_qq,
            v_dp_dp: cond.v_pp,
            c_dq_dp: cond.c_qp,
            v_rel_qq: rel.v_qq,
            v_rel_pp: rel.v_pp,
            c_rel_qp: rel.c_qp,
            f_q,
            f_p,
            purity: cond.purity(),
            squeezing_ratio: cond.v_pp / cond.v_qq,
            relative_squeezing_ratio: rel.v_pp / rel.v_qq,
            retro,
            standard_errors: None,
            trials: 0,
            seed: None,
            grid,
            rule,
            model_hash,
            richardson_rel_diff: None,
            quadrature_ok: true,
            notes: Vec::new(),
        }
    }

    pub fn conditional(&self) -> Covariance {
        Covariance { v_qq: self.v_dq_dq, v_pp: self.v_dp_dp, c_qp: self.c_dq_dp }
    }

    pub fn relative(&self) -> Covariance {
        Covariance { v_qq: self.v_rel_qq, v_pp: self.v_rel_pp, c_qp: self.c_rel_qp }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Spectral (model) evaluation of the optimal filters for `subset`.
#[derive(Debug, Clone)]
pub struct ModelConditioning {
    pub filters: WienerFilterSet,
    pub variances: ConditionalVariances,
    pub relative: Covariance,
}

pub fn model_conditioning(
    meas: &MeasurementModel,
    subset: &[usize],
    grid: &FrequencyGrid,
    rule: SplitRule,
) -> Result<ModelConditioning> {
    meas.check_grid(grid)?;
    let sp = CollectiveSpectra::compute(meas, subset, grid)?;
    let d = design(meas, subset, grid, rule, &sp)?;
    let variances = conditional_variances(&spectra_from(&sp, &d.m, &d.filters))?;
    let relative = model_relative_covariance(&d.filters, &sp.s_yy);
    Ok(ModelConditioning { filters: d.filters, variances, relative })
}

/// Model report with the half-resolution quadrature check.
pub fn model_report(
    meas: &MeasurementModel,
    subset: &[usize],
    grid: &FrequencyGrid,
    rule: SplitRule,
) -> Result<ConditioningReport> {
    let full = model_conditioning(meas, subset, grid, rule)?;
    let mut rep = ConditioningReport::assemble(
        subset,
        Provenance::Analytic,
        full.variances.pred,
        full.relative,
        Some(full.variances.retro),
        *grid,
        rule,
        meas.hash(),
    );
    let half = model_conditioning(meas, subset, &grid.halved()?, rule)?;
    let d = ((half.variances.pred.v_qq - full.variances.pred.v_qq) / full.variances.pred.v_qq).abs();
    rep.richardson_rel_diff = Some(d);
    rep.quadrature_ok = d <= 5e-3;
    if !rep.quadrature_ok {
        rep.notes.push(format!("half-resolution V_dq_dq differs by {:.3}%", 100.0 * d));
    }
    Ok(rep)
}

/// Filter grid on a record's time base resolving the narrowest linewidth
/// of `meas` by `bins_per_width` bins.
pub fn record_grid(meas: &MeasurementModel, dt: f64, bins_per_width: f64) -> Result<FrequencyGrid> {
    let dw = meas.narrowest_width() / bins_per_width;
    let n = (2.0 * PI / (dt * dw)).ceil();
    if !(n < (1u64 << 30) as f64) {
        return Err(Error::Grid(format!("filter grid of {n:e} points requested")));
    }
    FrequencyGrid::with_dt((n as usize).next_power_of_two().max(crate::grid::MIN_POINTS), dt)
}

/// Unconditional standard deviations `(q_th, p_th)` of the collective
/// coordinate, including backaction heating.
pub fn thermal_scales(meas: &MeasurementModel, subset: &[usize], grid: &FrequencyGrid) -> Result<(f64, f64)> {
    let sp = CollectiveSpectra::compute(meas, subset, grid)?;
    Ok((integrate_spectrum(&sp.s_qq, grid, true).sqrt(), integrate_spectrum(&sp.s_pp, grid, true).sqrt()))
}

/// `q,p` CSV of every `stride`-th pair, scaled by `(q_th, p_th)`.
pub fn write_phase_space_csv<W: Write>(
    q: &[f64],
    p: &[f64],
    (q_th, p_th): (f64, f64),
    stride: usize,
    mut w: W,
) -> Result<()> {
    writeln!(w, "q,p")?;
    for (a, b) in q.iter().zip(p).step_by(stride.max(1)) {
        writeln!(w, "{:e},{:e}", a / q_th, b / p_th)?;
    }
    Ok(())
}
