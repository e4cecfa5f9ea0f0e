use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FrequencyGrid, C64};

/// Complex samples on a [`FrequencyGrid`], stored in FFT bin order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<C64>,
    /// `values(−ω) = conj(values(ω))`.
    pub hermitian: bool,
}

impl SampledSpectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<C64>, hermitian: bool) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(Error::Grid(format!("{} values for a grid of {} points", values.len(), grid.n_points)));
        }
        Ok(Self { grid, values, hermitian })
    }

    /// Real-valued spectrum from a function of ω.
    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_points).map(|k| C64::new(f(grid.omega(k)), 0.0)).collect();
        Self { grid, values, hermitian: true }
    }

    pub fn from_real(grid: FrequencyGrid, re: &[f64]) -> Result<Self> {
        Self::new(grid, re.iter().map(|&v| C64::new(v, 0.0)).collect(), true)
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self { grid, values: vec![C64::new(0.0, 0.0); grid.n_points], hermitian: true }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Rectangle rule over the periodic grid, `Σ_k Re X_k · dω/2π`.
    pub fn integrate(&self) -> f64 {
        self.values.iter().map(|v| v.re).sum::<f64>() * self.grid.d_omega / (2.0 * PI)
    }

    pub fn map(&self, f: impl Fn(f64, C64) -> C64) -> Self {
        let values = self.values.iter().enumerate().map(|(k, &v)| f(self.grid.omega(k), v)).collect();
        Self { grid: self.grid, values, hermitian: false }
    }

    /// True when every value is real, non-negative and even in ω.
    pub fn is_auto_spectrum(&self, rel_tol: f64) -> bool {
        let scale = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        self.values.iter().enumerate().all(|(k, v)| {
            let m = self.values[self.grid.mirror(k)];
            v.re >= 0.0
                && v.im.abs() <= rel_tol * scale
                && (v.re - m.re).abs() <= rel_tol * scale.max(f64::MIN_POSITIVE)
        })
    }

    /// CSV with header `omega_rad_s,value_re,value_im`, ascending ω.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega_rad_s,value_re,value_im")?;
        let n = self.grid.n_points;
        for j in 0..n {
            let k = (j + n / 2) % n;
            let v = self.values[k];
            writeln!(w, "{:e},{:e},{:e}", self.grid.omega(k), v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut omega = Vec::new();
        let mut vals = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("omega")) {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 2 {
                return Err(Error::Format(format!("line {}: expected omega,re[,im]", i + 1)));
            }
            let p = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))
            };
            omega.push(p(f[0])?);
            let im = if f.len() > 2 { p(f[2])? } else { 0.0 };
            vals.push(C64::new(p(f[1])?, im));
        }
        let n = omega.len();
        if n < 2 {
            return Err(Error::Format("spectrum CSV has fewer than two rows".into()));
        }
        let dw = (omega[n - 1] - omega[0]) / (n - 1) as f64;
        let grid = FrequencyGrid::new(n, dw)?;
        let mut values = vec![C64::new(0.0, 0.0); n];
        for (w, v) in omega.iter().zip(vals) {
            let k = grid.bin_of(*w);
            if (grid.omega(k) - w).abs() > 1e-6 * dw {
                return Err(Error::Format(format!("omega {w} is off the uniform grid")));
            }
            values[k] = v;
        }
        let hermitian = (0..n).all(|k| {
            let m = values[grid.mirror(k)].conj();
            (values[k] - m).norm() <= 1e-12 * values[k].norm().max(1e-300)
        });
        Ok(Self { grid, values, hermitian })
    }
}
