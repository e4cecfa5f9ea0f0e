//! Causal/anti-causal splitting and minimum-phase spectral factorization.
//!
//! Two splitting rules are provided. [`SplitRule::Sampled`] is the exact
//! orthogonal projection for records sampled on the grid's time base: lag 0
//! belongs to the causal part, lags `n ≥ N/2` to the anti-causal part.
//! [`SplitRule::Continuous`] approximates the split of the underlying
//! continuous-time function: lag 0 is shared equally and the truncation of
//! the jump, kink and curvature at `t = 0` is corrected analytically, so
//! causal and anti-causal results are mirror images and converge to the
//! continuous-time filters as the grid is refined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{to_freq_in_place, to_time_in_place, FrequencyGrid, C64};
use crate::spectrum::SampledSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    #[default]
    Sampled,
    Continuous,
}

/// Bins below `FLOOR_EPS·max(s)` are lifted before the logarithm.
pub const FLOOR_EPS: f64 = 1e-30;

/// Transforms of the one-sided ramp terms `θ(t)`, `tθ(t)`, `t²θ(t)/2`
/// minus their sampled counterparts, at θ = ω·dt.
#[inline]
fn jump_corrections(w: f64, dt: f64) -> (C64, C64, C64) {
    let th = w * dt;
    if th.abs() < 0.05 {
        let t2 = th * th;
        let f0 = dt * th * (2520.0 + t2 * (42.0 + t2)) / 30240.0;
        let f1 = dt * dt * (100800.0 + t2 * (5040.0 + t2 * (200.0 + 7.0 * t2))) / 1_209_600.0;
        let f2 = -dt * dt * dt * th * (5040.0 + t2 * (400.0 + 21.0 * t2)) / 1_209_600.0;
        return (C64::new(0.0, f0), C64::new(f1, 0.0), C64::new(0.0, f2));
    }
    jump_corrections_exact(w, dt)
}

fn jump_corrections_exact(w: f64, dt: f64) -> (C64, C64, C64) {
    let th = w * dt;
    let x = 0.5 * th;
    let f0 = 1.0 / w - 0.5 * dt / x.tan();
    let s = x.sin();
    let f1 = -1.0 / (w * w) + dt * dt / (4.0 * s * s);
    let z = C64::from_polar(1.0, th);
    let one = C64::new(1.0, 0.0);
    let f2 = C64::new(0.0, -1.0 / (w * w * w)) - 0.5 * dt * dt * dt * z * (one + z) / (one - z).powi(3);
    (C64::new(0.0, f0), C64::new(f1, 0.0), f2)
}

fn causal_sampled_vec(x: &[C64]) -> Vec<C64> {
    let n = x.len();
    let mut g = x.to_vec();
    to_time_in_place(&mut g);
    for v in &mut g[n / 2..] {
        *v = C64::new(0.0, 0.0);
    }
    to_freq_in_place(&mut g);
    g
}

fn anticausal_sampled_vec(x: &[C64]) -> Vec<C64> {
    let n = x.len();
    let mut g = x.to_vec();
    to_time_in_place(&mut g);
    for v in &mut g[..n / 2] {
        *v = C64::new(0.0, 0.0);
    }
    to_freq_in_place(&mut g);
    g
}

fn causal_continuous_vec(x: &[C64], grid: &FrequencyGrid) -> Vec<C64> {
    let n = x.len();
    let dt = grid.dt();
    let mut g = x.to_vec();
    to_time_in_place(&mut g);
    let g0 = g[0] / dt;
    let (gp, gm) = (g[1] / dt, g[n - 1] / dt);
    let d1 = (gp - gm) / (2.0 * dt);
    let d2 = (gp - 2.0 * g0 + gm) / (dt * dt);
    g[0] *= 0.5;
    for v in &mut g[n / 2..] {
        *v = C64::new(0.0, 0.0);
    }
    to_freq_in_place(&mut g);
    for (k, v) in g.iter_mut().enumerate() {
        let w = grid.omega(k);
        if w != 0.0 {
            let (f0, f1, f2) = jump_corrections(w, dt);
            *v += g0 * f0 + d1 * f1 + d2 * f2;
        } else {
            *v += d1 * (dt * dt / 12.0);
        }
    }
    g
}

/// Causal part of raw grid samples under `rule`.
pub fn causal_vec(x: &[C64], grid: &FrequencyGrid, rule: SplitRule) -> Vec<C64> {
    match rule {
        SplitRule::Sampled => causal_sampled_vec(x),
        SplitRule::Continuous => causal_continuous_vec(x, grid),
    }
}

/// Anti-causal part of raw grid samples under `rule`.
pub fn anticausal_vec(x: &[C64], grid: &FrequencyGrid, rule: SplitRule) -> Vec<C64> {
    match rule {
        SplitRule::Sampled => anticausal_sampled_vec(x),
        SplitRule::Continuous => {
            let c = causal_continuous_vec(x, grid);
            x.iter().zip(c).map(|(a, b)| a - b).collect()
        }
    }
}

/// `[x]₊`: the part of `x` whose lag-domain samples sit at lags ≥ 0.
pub fn causal_part(x: &SampledSpectrum) -> SampledSpectrum {
    causal_part_with(x, SplitRule::Sampled)
}

/// `[x]₋`: the part of `x` at strictly negative lags.
pub fn anticausal_part(x: &SampledSpectrum) -> SampledSpectrum {
    anticausal_part_with(x, SplitRule::Sampled)
}

pub fn causal_part_with(x: &SampledSpectrum, rule: SplitRule) -> SampledSpectrum {
    SampledSpectrum { grid: x.grid, values: causal_vec(&x.values, &x.grid, rule), hermitian: x.hermitian }
}

pub fn anticausal_part_with(x: &SampledSpectrum, rule: SplitRule) -> SampledSpectrum {
    SampledSpectrum { grid: x.grid, values: anticausal_vec(&x.values, &x.grid, rule), hermitian: x.hermitian }
}

/// Fraction of lag-domain energy at strictly negative lags.
pub fn anticausal_energy_fraction(x: &[C64]) -> f64 {
    let n = x.len();
    let mut g = x.to_vec();
    to_time_in_place(&mut g);
    let total: f64 = g.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    g[n / 2..].iter().map(|v| v.norm_sqr()).sum::<f64>() / total
}

/// Fraction of lag-domain energy at lags ≥ 0.
pub fn causal_energy_fraction(x: &[C64]) -> f64 {
    let total: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        0.0
    } else {
        1.0 - anticausal_energy_fraction(x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralFactor {
    /// Minimum-phase factor `M` with `|M|² = source`.
    pub m: SampledSpectrum,
    pub source: SampledSpectrum,
    /// `max |(|M|² − s)/s|`.
    pub residual: f64,
    /// Lag-domain energy of `M` at negative lags over total.
    pub anticausal_fraction: f64,
    pub rule: SplitRule,
    /// Bins lifted to the positivity floor.
    pub floored_bins: usize,
}

/// Minimum-phase factor of a real, even, strictly positive spectrum.
pub fn spectral_factorize(s: &SampledSpectrum) -> Result<SpectralFactor> {
    spectral_factorize_with(s, SplitRule::Sampled)
}

/// Logarithm of the minimum-phase factor of `s` (raw samples).
pub fn log_factor_vec(s: &[f64], grid: &FrequencyGrid, rule: SplitRule) -> Result<(Vec<C64>, usize)> {
    let mut bad = 0usize;
    let mut first = None;
    let mut max = 0.0f64;
    for (k, &v) in s.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            bad += 1;
            first.get_or_insert(k);
        } else {
            max = max.max(v);
        }
    }
    if bad > 0 {
        return Err(Error::NonPositiveSpectrum { count: bad, first_omega: grid.omega(first.unwrap()) });
    }
    let floor = FLOOR_EPS * max;
    let mut floored = 0;
    let l: Vec<f64> = s
        .iter()
        .map(|&v| {
            if v < floor {
                floored += 1;
                0.5 * floor.ln()
            } else {
                0.5 * v.ln()
            }
        })
        .collect();
    let n = l.len();
    let mut logm = match rule {
        SplitRule::Sampled => {
            let mut c: Vec<C64> = l.iter().map(|&v| C64::new(v, 0.0)).collect();
            to_time_in_place(&mut c);
            for v in &mut c[1..n / 2] {
                *v *= 2.0;
            }
            for v in &mut c[n / 2 + 1..] {
                *v = C64::new(0.0, 0.0);
            }
            to_freq_in_place(&mut c);
            c
        }
        SplitRule::Continuous => {
            let linf = l[n / 2];
            let y: Vec<C64> = l.iter().map(|&v| C64::new(v - linf, 0.0)).collect();
            causal_continuous_vec(&y, grid).into_iter().map(|v| C64::new(linf, 0.0) + 2.0 * v).collect()
        }
    };
    for (v, &lk) in logm.iter_mut().zip(&l) {
        v.re = lk;
    }
    Ok((logm, floored))
}

pub fn spectral_factorize_with(s: &SampledSpectrum, rule: SplitRule) -> Result<SpectralFactor> {
    let re = s.re();
    let (logm, floored) = log_factor_vec(&re, &s.grid, rule)?;
    let m: Vec<C64> = logm.into_iter().map(|v| v.exp()).collect();
    let residual = m.iter().zip(&re).map(|(mk, &sk)| ((mk.norm_sqr() - sk) / sk).abs()).fold(0.0, f64::max);
    let anticausal_fraction = anticausal_energy_fraction(&m);
    Ok(SpectralFactor {
        m: SampledSpectrum { grid: s.grid, values: m, hermitian: true },
        source: s.clone(),
        residual,
        anticausal_fraction,
        rule,
        floored_bins: floored,
    })
}
