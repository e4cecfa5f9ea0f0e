use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const MIN_POINTS: usize = 1 << 10;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Two-sided uniform angular-frequency grid in FFT bin order.
///
/// Bin `k < n/2` holds `k·dω`, bin `k ≥ n/2` holds `(k−n)·dω`, so the
/// most negative frequency `−n·dω/2` sits at `k = n/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub n_points: usize,
    pub d_omega: f64,
}

impl FrequencyGrid {
    pub fn new(n_points: usize, d_omega: f64) -> Result<Self> {
        if !n_points.is_power_of_two() || n_points < MIN_POINTS {
            return Err(Error::Grid(format!("n_points = {n_points} must be a power of two >= {MIN_POINTS}")));
        }
        if !(d_omega.is_finite() && d_omega > 0.0) {
            return Err(Error::Grid(format!("d_omega = {d_omega} must be positive")));
        }
        Ok(Self { n_points, d_omega })
    }

    /// Grid with `n_points` bins reaching `±omega_max`.
    pub fn with_omega_max(n_points: usize, omega_max: f64) -> Result<Self> {
        Self::new(n_points, 2.0 * omega_max / n_points as f64)
    }

    /// Grid whose time-domain sample period is `dt`.
    pub fn with_dt(n_points: usize, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Grid(format!("dt = {dt} must be positive")));
        }
        Self::new(n_points, 2.0 * PI / (n_points as f64 * dt))
    }

    /// Smallest grid reaching `omega_max` with `d_omega <= max_spacing`.
    pub fn covering(omega_max: f64, max_spacing: f64) -> Result<Self> {
        let need = (2.0 * omega_max / max_spacing).ceil().max(MIN_POINTS as f64);
        if !need.is_finite() || need > (1u64 << 30) as f64 {
            return Err(Error::Grid(format!(
                "grid of {need:e} points requested (omega_max = {omega_max:e}, spacing = {max_spacing:e})"
            )));
        }
        Self::with_omega_max((need as usize).next_power_of_two(), omega_max)
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn omega_max(&self) -> f64 {
        0.5 * self.n_points as f64 * self.d_omega
    }

    /// Sample period of the conjugate time grid.
    pub fn dt(&self) -> f64 {
        2.0 * PI / (self.n_points as f64 * self.d_omega)
    }

    /// Duration of the periodic time window.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.d_omega
    }

    #[inline]
    pub fn omega(&self, k: usize) -> f64 {
        let n = self.n_points;
        if k < n / 2 {
            k as f64 * self.d_omega
        } else {
            (k as f64 - n as f64) * self.d_omega
        }
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.omega(k)).collect()
    }

    /// Bin holding `−omega(k)`.
    #[inline]
    pub fn mirror(&self, k: usize) -> usize {
        (self.n_points - k) % self.n_points
    }

    /// Nearest bin to a (possibly negative) angular frequency.
    pub fn bin_of(&self, omega: f64) -> usize {
        let n = self.n_points as i64;
        let k = (omega / self.d_omega).round() as i64;
        k.rem_euclid(n) as usize
    }

    /// Same span with half the points; keeps every other bin.
    pub fn halved(&self) -> Result<Self> {
        Self::new(self.n_points / 2, 2.0 * self.d_omega)
    }
}

fn fft_in_place(buf: &mut [C64], inverse: bool) {
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        }
    });
    plan.process(buf);
}

/// Frequency samples to lag samples: `x_n = (1/N) Σ_k X_k e^{−iω_k t_n}`.
///
/// Positive lags occupy `n < N/2`. Times `dt` gives the impulse-response
/// taps of a filter with response `X`.
pub fn to_time_in_place(buf: &mut [C64]) {
    fft_in_place(buf, false);
    let s = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= s;
    }
}

/// Inverse of [`to_time_in_place`]: `X_k = Σ_n x_n e^{+iω_k t_n}`.
pub fn to_freq_in_place(buf: &mut [C64]) {
    fft_in_place(buf, true);
}

pub fn to_time(x: &[C64]) -> Vec<C64> {
    let mut b = x.to_vec();
    to_time_in_place(&mut b);
    b
}

pub fn to_freq(x: &[C64]) -> Vec<C64> {
    let mut b = x.to_vec();
    to_freq_in_place(&mut b);
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_layout() {
        let g = FrequencyGrid::new(1024, 0.5).unwrap();
        assert_eq!(g.omega(0), 0.0);
        assert_eq!(g.omega(1), 0.5);
        assert_eq!(g.omega(512), -256.0);
        assert_eq!(g.omega(1023), -0.5);
        assert_eq!(g.mirror(1), 1023);
        assert_eq!(g.mirror(0), 0);
        assert_eq!(g.bin_of(-0.5), 1023);
        assert!((g.dt() * g.omega_max() - PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(FrequencyGrid::new(1000, 1.0).is_err());
        assert!(FrequencyGrid::new(512, 1.0).is_err());
        assert!(FrequencyGrid::new(1024, 0.0).is_err());
    }

    #[test]
    fn derivative_is_minus_i_omega() {
        // x(t) = exp(-t^2/2s^2) sampled; derivative spectrum = -iω X
        let g = FrequencyGrid::with_omega_max(4096, 40.0).unwrap();
        let dt = g.dt();
        let n = g.n_points;
        let s = 0.7;
        let lag = |i: usize| if i < n / 2 { i as f64 } else { i as f64 - n as f64 } * dt;
        let x: Vec<C64> = (0..n).map(|i| C64::new((-lag(i).powi(2) / (2.0 * s * s)).exp(), 0.0)).collect();
        let dx: Vec<C64> =
            (0..n).map(|i| C64::new(-lag(i) / (s * s) * (-lag(i).powi(2) / (2.0 * s * s)).exp(), 0.0)).collect();
        let xf = to_freq(&x);
        let dxf = to_freq(&dx);
        for k in 0..n {
            let want = C64::new(0.0, -g.omega(k)) * xf[k];
            assert!((dxf[k] - want).norm() < 1e-6 * xf[0].norm(), "bin {k}");
        }
    }

    #[test]
    fn round_trip() {
        let x: Vec<C64> = (0..1024).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let y = to_freq(&to_time(&x));
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
