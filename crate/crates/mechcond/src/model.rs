//! Mechanical modes, measurement noise and the spectra they produce.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::grid::{FrequencyGrid, C64};
use crate::quad;
use crate::spectrum::SampledSpectrum;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const DEFAULT_TEMPERATURE_K: f64 = 295.0;
pub const DEFAULT_ROLL_OFF_HZ: f64 = 10e3;
pub const SHOT_FLOOR: f64 = 0.5;

/// Mean phonon number `k_B T / ħΩ` of a mode at temperature `t_kelvin`.
pub fn thermal_occupancy(omega: f64, t_kelvin: f64) -> f64 {
    K_B * t_kelvin / (HBAR * omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    Viscous,
    Structural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumConvention {
    /// `p_j = q̇_j / Ω_j`.
    #[default]
    Canonical,
    /// `S_pY = −iω S_qY`, no frequency normalization.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackactionMode {
    /// One white force, scaled by `√μ_j`, drives every mode.
    #[default]
    CorrelatedAcrossModes,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeModel {
    pub omega: f64,
    pub gamma: f64,
    pub mu: f64,
    pub n_th: f64,
    pub damping: Damping,
    pub omega_c: f64,
    pub label: String,
}

impl ModeModel {
    pub fn viscous(omega: f64, gamma: f64, mu: f64, n_th: f64) -> Self {
        Self { omega, gamma, mu, n_th, damping: Damping::Viscous, omega_c: 0.0, label: String::new() }
    }

    pub fn structural(omega: f64, gamma: f64, mu: f64, n_th: f64, omega_c: f64) -> Self {
        Self { omega, gamma, mu, n_th, damping: Damping::Structural, omega_c, label: String::new() }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.gamma, self.mu, self.n_th].iter().all(|v| v.is_finite());
        if !finite {
            return invalid(format!("mode '{}' has non-finite parameters", self.label));
        }
        if self.omega <= 0.0 || self.gamma <= 0.0 {
            return invalid(format!("mode '{}': omega and gamma must be positive", self.label));
        }
        if self.mu < 0.0 || self.n_th < 0.0 {
            return invalid(format!("mode '{}': mu and n_th must be non-negative", self.label));
        }
        if self.damping == Damping::Structural && !(self.omega_c > 0.0 && self.omega_c.is_finite()) {
            return invalid(format!("mode '{}': structural damping needs omega_c > 0", self.label));
        }
        if self.q() <= 1.0 {
            return invalid(format!("mode '{}': Q = {} must exceed 1", self.label, self.q()));
        }
        Ok(())
    }

    pub fn q(&self) -> f64 {
        self.omega / self.gamma
    }

    pub fn cooperativity(&self) -> f64 {
        self.mu / self.gamma
    }

    /// `φ(ω)/ω`, finite at ω = 0.
    #[inline]
    pub fn phi_over_omega(&self, w: f64) -> f64 {
        match self.damping {
            Damping::Viscous => self.gamma / (self.omega * self.omega),
            Damping::Structural => 1.0 / (self.q() * w.hypot(self.omega_c)),
        }
    }

    #[inline]
    pub fn loss_angle(&self, w: f64) -> f64 {
        w * self.phi_over_omega(w)
    }

    /// `χ(ω) = Ω / (Ω² − ω² − iΩ²φ(ω))`.
    #[inline]
    pub fn susceptibility(&self, w: f64) -> C64 {
        let o2 = self.omega * self.omega;
        C64::new(self.omega, 0.0) / C64::new(o2 - w * w, -o2 * self.loss_angle(w))
    }

    /// Thermal force PSD `2(n_th + 1/2)Ω²φ(ω)/ω`.
    #[inline]
    pub fn thermal_force_psd(&self, w: f64) -> f64 {
        2.0 * (self.n_th + 0.5) * self.omega * self.omega * self.phi_over_omega(w)
    }

    /// Thermal position PSD at one frequency.
    #[inline]
    pub fn thermal_position_psd(&self, w: f64) -> f64 {
        self.susceptibility(w).norm_sqr() * self.thermal_force_psd(w)
    }

    /// `∫ S_qq dω/2π` by adaptive quadrature (thermal part only).
    pub fn occupancy(&self) -> f64 {
        let f = |w: f64| self.thermal_position_psd(w);
        let o = self.omega;
        let g = self.gamma;
        let mut breaks = vec![0.0];
        if self.damping == Damping::Structural {
            let mut b = self.omega_c.min(0.5 * o);
            breaks.push(b);
            while b * 2.0 < o - 50.0 * g {
                b *= 2.0;
                breaks.push(b);
            }
        }
        for k in [-50.0, -5.0, -1.0, 0.0, 1.0, 5.0, 50.0] {
            let b = o + k * g;
            if b > *breaks.last().unwrap() {
                breaks.push(b);
            }
        }
        breaks.push(4.0 * o.max(breaks.last().copied().unwrap_or(0.0)));
        2.0 * quad::integrate_pieces(f, &breaks, true, 1e-10) / TAU
    }
}

/// Loss angle of `mode` at angular frequency `omega`.
pub fn loss_angle(mode: &ModeModel, omega: f64) -> f64 {
    mode.loss_angle(omega)
}

/// Thermal position PSD of one mode, including the zero-point term.
pub fn position_psd(mode: &ModeModel, grid: &FrequencyGrid) -> Result<SampledSpectrum> {
    mode.validate()?;
    Ok(SampledSpectrum::from_fn(*grid, |w| mode.thermal_position_psd(w)))
}

/// `S_pp = (ω/Ω)² S_qq`.
pub fn momentum_psd(mode: &ModeModel, grid: &FrequencyGrid) -> Result<SampledSpectrum> {
    mode.validate()?;
    Ok(SampledSpectrum::from_fn(*grid, |w| {
        let r = w / mode.omega;
        r * r * mode.thermal_position_psd(w)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseComponent {
    ShotFloor {
        level: f64,
    },
    /// Mirrored Lorentzian of full width `width` and peak value `height`.
    LorentzianPeak {
        center: f64,
        width: f64,
        height: f64,
    },
    /// Peak shaped like a detected mechanical mode, `4ημ S_qq`.
    StructuralPeak {
        mode: ModeModel,
    },
    /// Linear interpolation in |ω|, zero outside the table.
    TabulatedCurve {
        omega: Vec<f64>,
        psd: Vec<f64>,
    },
}

impl NoiseComponent {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseComponent::ShotFloor { level } => {
                if !(*level > 0.0 && level.is_finite()) {
                    return invalid("shot floor level must be positive");
                }
            }
            NoiseComponent::LorentzianPeak { center, width, height } => {
                if !(*center >= 0.0 && *width > 0.0 && *height >= 0.0) {
                    return invalid("Lorentzian peak needs center >= 0, width > 0, height >= 0");
                }
            }
            NoiseComponent::StructuralPeak { mode } => mode.validate()?,
            NoiseComponent::TabulatedCurve { omega, psd } => {
                if omega.len() != psd.len() || omega.len() < 2 {
                    return invalid("tabulated curve needs matching omega/psd arrays of length >= 2");
                }
                if omega.windows(2).any(|w| w[1] <= w[0]) || psd.iter().any(|v| !(*v >= 0.0)) {
                    return invalid("tabulated curve omega must increase and psd be non-negative");
                }
            }
        }
        Ok(())
    }

    pub fn psd(&self, w: f64, eta: f64) -> f64 {
        match self {
            NoiseComponent::ShotFloor { level } => *level,
            NoiseComponent::LorentzianPeak { center, width, height } => {
                let h2 = 0.25 * width * width;
                height * h2 * (1.0 / ((w - center).powi(2) + h2) + 1.0 / ((w + center).powi(2) + h2))
            }
            NoiseComponent::StructuralPeak { mode } => 4.0 * eta * mode.mu * mode.thermal_position_psd(w),
            NoiseComponent::TabulatedCurve { omega, psd } => {
                let a = w.abs();
                if a < omega[0] || a > omega[omega.len() - 1] {
                    return 0.0;
                }
                let i = omega.partition_point(|&o| o <= a).clamp(1, omega.len() - 1);
                let t = (a - omega[i - 1]) / (omega[i] - omega[i - 1]);
                psd[i - 1] + t * (psd[i] - psd[i - 1])
            }
        }
    }

    /// Center frequency of peaked components.
    pub fn center(&self) -> Option<f64> {
        match self {
            NoiseComponent::LorentzianPeak { center, .. } => Some(*center),
            NoiseComponent::StructuralPeak { mode } => Some(mode.omega),
            _ => None,
        }
    }

    /// Narrowest spectral width the component contains.
    pub fn width(&self) -> Option<f64> {
        match self {
            NoiseComponent::LorentzianPeak { width, .. } => Some(*width),
            NoiseComponent::StructuralPeak { mode } => Some(mode.gamma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub eta: f64,
    pub signal_modes: Vec<ModeModel>,
    pub noise_components: Vec<NoiseComponent>,
    #[serde(default)]
    pub momentum_convention: MomentumConvention,
    #[serde(default)]
    pub backaction: BackactionMode,
}

impl MeasurementModel {
    /// Modes plus a shot floor of 1/2.
    pub fn new(eta: f64, signal_modes: Vec<ModeModel>) -> Self {
        Self {
            eta,
            signal_modes,
            noise_components: vec![NoiseComponent::ShotFloor { level: SHOT_FLOOR }],
            momentum_convention: MomentumConvention::Canonical,
            backaction: BackactionMode::CorrelatedAcrossModes,
        }
    }

    pub fn with_noise(mut self, c: NoiseComponent) -> Self {
        self.noise_components.push(c);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return invalid(format!("eta = {} must lie in (0, 1]", self.eta));
        }
        if self.signal_modes.is_empty() {
            return invalid("measurement model has no signal modes");
        }
        for m in &self.signal_modes {
            m.validate()?;
        }
        for c in &self.noise_components {
            c.validate()?;
        }
        Ok(())
    }

    pub fn has_shot_floor(&self) -> bool {
        self.noise_components.iter().any(|c| matches!(c, NoiseComponent::ShotFloor { level } if *level > 0.0))
    }

    pub fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        for &i in subset {
            if i >= self.signal_modes.len() {
                return Err(Error::ModeIndex(i));
            }
        }
        Ok(())
    }

    /// `μ^(N) = Σ_{j∈subset} μ_j`.
    pub fn collective_rate(&self, subset: &[usize]) -> f64 {
        subset.iter().map(|&i| self.signal_modes[i].mu).sum()
    }

    /// Weights `√μ_j/√μ^(N)` of the collective coordinate; equal weights
    /// when the subset is not measured at all.
    pub fn collective_weights(&self, subset: &[usize]) -> Vec<f64> {
        let mu = self.collective_rate(subset);
        subset
            .iter()
            .map(|&i| if mu > 0.0 { (self.signal_modes[i].mu / mu).sqrt() } else { 1.0 / (subset.len() as f64).sqrt() })
            .collect()
    }

    /// Momentum factor `p_j(ω)/q_j(ω)` for mode `j`.
    #[inline]
    pub fn momentum_factor(&self, j: usize, w: f64) -> C64 {
        match self.momentum_convention {
            MomentumConvention::Canonical => C64::new(0.0, -w / self.signal_modes[j].omega),
            MomentumConvention::Literal => C64::new(0.0, -w),
        }
    }

    pub fn noise_psd(&self, w: f64) -> f64 {
        self.noise_components.iter().map(|c| c.psd(w, self.eta)).sum()
    }

    /// Largest effective resonance `Ω′` implied by the measurement.
    pub fn max_modified_frequency(&self) -> f64 {
        let mu_tot: f64 = self.signal_modes.iter().map(|m| m.mu).sum();
        self.signal_modes
            .iter()
            .map(|m| {
                let c = mu_tot / m.gamma;
                let n_tot = m.n_th + c + 0.5;
                let o2 = m.omega * m.omega;
                (16.0 * self.eta * m.gamma * m.gamma * c * n_tot * o2 + o2 * o2).powf(0.25)
            })
            .fold(0.0, f64::max)
    }

    /// Narrowest feature width in the model.
    pub fn narrowest_width(&self) -> f64 {
        let modes = self.signal_modes.iter().map(|m| m.gamma);
        let noise = self.noise_components.iter().filter_map(|c| c.width());
        modes.chain(noise).fold(f64::INFINITY, f64::min)
    }

    /// Grid reaching `8·max(Ω_j, Ω′)` with `bins_per_width` bins across the
    /// narrowest feature.
    pub fn default_grid(&self, bins_per_width: f64) -> Result<FrequencyGrid> {
        self.grid_with(8.0, bins_per_width)
    }

    /// Grid reaching `reach·max(Ω_j, Ω′)` with `bins_per_width` bins across
    /// the narrowest feature.
    pub fn grid_with(&self, reach: f64, bins_per_width: f64) -> Result<FrequencyGrid> {
        self.validate()?;
        let peaks = self.noise_components.iter().filter_map(|c| c.center());
        let top = self.signal_modes.iter().map(|m| m.omega).chain(peaks).fold(self.max_modified_frequency(), f64::max);
        FrequencyGrid::covering(reach * top, self.narrowest_width() / bins_per_width)
    }

    /// Error unless the grid reaches eight times every resonance.
    pub fn check_grid(&self, grid: &FrequencyGrid) -> Result<()> {
        let top = self.signal_modes.iter().map(|m| m.omega).fold(0.0, f64::max);
        if grid.omega_max() < 8.0 * top * (1.0 - 1e-9) {
            return Err(Error::Grid(format!(
                "grid reaches {:e} rad/s, below 8x the highest resonance {:e} rad/s",
                grid.omega_max(),
                top
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("model serializes");
        hex(&Sha256::digest(s.as_bytes()))
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let default_t = cfg.temperature_k.unwrap_or(DEFAULT_TEMPERATURE_K);
        let modes = cfg.modes.iter().enumerate().map(|(i, m)| m.to_mode(default_t, i)).collect::<Result<Vec<_>>>()?;
        let mut noise = Vec::with_capacity(cfg.noise.len());
        for (i, n) in cfg.noise.iter().enumerate() {
            noise.push(match n {
                NoiseConfig::ShotFloor { level } => NoiseComponent::ShotFloor { level: *level },
                NoiseConfig::LorentzianPeak { center_hz, width_hz, height } => {
                    NoiseComponent::LorentzianPeak { center: TAU * center_hz, width: TAU * width_hz, height: *height }
                }
                NoiseConfig::StructuralPeak(m) => NoiseComponent::StructuralPeak { mode: m.to_mode(default_t, i)? },
                NoiseConfig::TabulatedCurve { f_hz, psd } => {
                    NoiseComponent::TabulatedCurve { omega: f_hz.iter().map(|f| TAU * f).collect(), psd: psd.clone() }
                }
            });
        }
        let meas = Self {
            eta: cfg.eta,
            signal_modes: modes,
            noise_components: noise,
            momentum_convention: cfg.momentum_convention,
            backaction: cfg.backaction,
        };
        meas.validate()?;
        Ok(meas)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn default_damping() -> Damping {
    Damping::Structural
}

fn default_shot_level() -> f64 {
    SHOT_FLOOR
}

/// One mode as written in a config file, frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub f_hz: f64,
    pub gamma_hz: f64,
    pub mu_hz: f64,
    #[serde(default = "default_damping")]
    pub damping: Damping,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_c_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_th: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
}

impl ModeConfig {
    fn to_mode(&self, default_t: f64, index: usize) -> Result<ModeModel> {
        let omega = TAU * self.f_hz;
        let n_th = match self.n_th {
            Some(n) => n,
            None => thermal_occupancy(omega, self.temperature_k.unwrap_or(default_t)),
        };
        let label = if self.label.is_empty() { format!("mode{}", index + 1) } else { self.label.clone() };
        let m = ModeModel {
            omega,
            gamma: TAU * self.gamma_hz,
            mu: TAU * self.mu_hz,
            n_th,
            damping: self.damping,
            omega_c: match self.damping {
                Damping::Structural => TAU * self.f_c_hz.unwrap_or(DEFAULT_ROLL_OFF_HZ),
                Damping::Viscous => 0.0,
            },
            label,
        };
        m.validate()?;
        Ok(m)
    }

    /// Config entry for a mode, with `n_th` written explicitly.
    pub fn from_mode(m: &ModeModel) -> Self {
        Self {
            label: m.label.clone(),
            f_hz: m.omega / TAU,
            gamma_hz: m.gamma / TAU,
            mu_hz: m.mu / TAU,
            damping: m.damping,
            f_c_hz: (m.damping == Damping::Structural).then(|| m.omega_c / TAU),
            n_th: Some(m.n_th),
            temperature_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseConfig {
    ShotFloor {
        #[serde(default = "default_shot_level")]
        level: f64,
    },
    LorentzianPeak {
        center_hz: f64,
        width_hz: f64,
        height: f64,
    },
    StructuralPeak(ModeConfig),
    TabulatedCurve {
        f_hz: Vec<f64>,
        psd: Vec<f64>,
    },
}

/// On-disk measurement model. Frequencies are in Hz (`f/2π` for rates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    #[serde(default)]
    pub momentum_convention: MomentumConvention,
    #[serde(default)]
    pub backaction: BackactionMode,
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub noise: Vec<NoiseConfig>,
    /// Device constants such as `kappa_hz` or `g0_hz`; carried, not used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl ModelConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn from_model(meas: &MeasurementModel) -> Self {
        let noise = meas
            .noise_components
            .iter()
            .map(|c| match c {
                NoiseComponent::ShotFloor { level } => NoiseConfig::ShotFloor { level: *level },
                NoiseComponent::LorentzianPeak { center, width, height } => {
                    NoiseConfig::LorentzianPeak { center_hz: center / TAU, width_hz: width / TAU, height: *height }
                }
                NoiseComponent::StructuralPeak { mode } => NoiseConfig::StructuralPeak(ModeConfig::from_mode(mode)),
                NoiseComponent::TabulatedCurve { omega, psd } => {
                    NoiseConfig::TabulatedCurve { f_hz: omega.iter().map(|w| w / TAU).collect(), psd: psd.clone() }
                }
            })
            .collect();
        Self {
            eta: meas.eta,
            temperature_k: None,
            momentum_convention: meas.momentum_convention,
            backaction: meas.backaction,
            modes: meas.signal_modes.iter().map(ModeConfig::from_mode).collect(),
            noise,
            metadata: None,
        }
    }
}

/// One independent noise source at a single frequency: its PSD and its
/// responses in the collective position, the collective momentum and the
/// photocurrent.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Source {
    psd: f64,
    q: C64,
    p: C64,
    y: C64,
}

/// Second-order statistics of the collective mode and the photocurrent at
/// one frequency. `schur_*` hold `S_ab S_YY − S_aY S_bY*` computed without
/// cancellation.
#[derive(Debug, Clone, Copy, Default)]
pub struct BinStatistics {
    pub s_yy: f64,
    pub s_qq: f64,
    pub s_pp: f64,
    pub s_qp: C64,
    pub s_qy: C64,
    pub s_py: C64,
    pub schur_qq: f64,
    pub schur_pp: f64,
    pub schur_qp: C64,
}

/// Reusable buffer for [`CollectiveModel::at`].
#[derive(Debug, Default)]
pub struct Scratch(Vec<Source>);

/// Per-frequency evaluator for a measurement model and conditioned subset.
pub struct CollectiveModel<'a> {
    meas: &'a MeasurementModel,
    in_subset: Vec<Option<f64>>,
    backaction: bool,
}

impl<'a> CollectiveModel<'a> {
    pub fn new(meas: &'a MeasurementModel, subset: &[usize]) -> Result<Self> {
        meas.validate()?;
        meas.check_subset(subset)?;
        let weights = meas.collective_weights(subset);
        let mut in_subset = vec![None; meas.signal_modes.len()];
        for (&i, &w) in subset.iter().zip(&weights) {
            in_subset[i] = Some(w);
        }
        Ok(Self { meas, in_subset, backaction: meas.backaction == BackactionMode::CorrelatedAcrossModes })
    }

    fn sources(&self, w: f64, active: &mut Vec<Source>, inactive_yy: &mut f64) {
        let meas = self.meas;
        active.clear();
        *inactive_yy = 0.0;
        let mut ba = Source { psd: 2.0, q: C64::default(), p: C64::default(), y: C64::default() };
        let mut ba_active = false;
        for (j, m) in meas.signal_modes.iter().enumerate() {
            let chi = m.susceptibility(w);
            let gy = 2.0 * (meas.eta * m.mu).sqrt();
            let f = m.thermal_force_psd(w);
            if self.backaction && m.mu > 0.0 {
                let s = m.mu.sqrt();
                ba.y += gy * s * chi;
                if let Some(wt) = self.in_subset[j] {
                    ba.q += wt * s * chi;
                    ba.p += wt * s * chi * meas.momentum_factor(j, w);
                    ba_active = true;
                }
            }
            match self.in_subset[j] {
                Some(wt) => {
                    active.push(Source { psd: f, q: wt * chi, p: wt * chi * meas.momentum_factor(j, w), y: gy * chi })
                }
                None => *inactive_yy += f * gy * gy * chi.norm_sqr(),
            }
        }
        if ba_active {
            active.push(ba);
        } else {
            *inactive_yy += ba.psd * ba.y.norm_sqr();
        }
        *inactive_yy += meas.noise_psd(w);
    }

    pub fn at(&self, w: f64, scratch: &mut Scratch) -> BinStatistics {
        let mut iyy = 0.0;
        let scratch = &mut scratch.0;
        self.sources(w, scratch, &mut iyy);
        let mut st = BinStatistics { s_yy: iyy, ..Default::default() };
        for s in scratch.iter() {
            st.s_yy += s.psd * s.y.norm_sqr();
            st.s_qq += s.psd * s.q.norm_sqr();
            st.s_pp += s.psd * s.p.norm_sqr();
            st.s_qp += s.psd * s.q * s.p.conj();
            st.s_qy += s.psd * s.q * s.y.conj();
            st.s_py += s.psd * s.p * s.y.conj();
        }
        st.schur_qq = st.s_qq * iyy;
        st.schur_pp = st.s_pp * iyy;
        st.schur_qp = st.s_qp * iyy;
        for (a, sa) in scratch.iter().enumerate() {
            for sb in &scratch[a + 1..] {
                let pp = sa.psd * sb.psd;
                let dq = sa.q * sb.y - sb.q * sa.y;
                let dp = sa.p * sb.y - sb.p * sa.y;
                st.schur_qq += pp * dq.norm_sqr();
                st.schur_pp += pp * dp.norm_sqr();
                st.schur_qp += pp * dq * dp.conj();
            }
        }
        st
    }
}

/// Grid-sampled collective statistics.
#[derive(Debug, Clone)]
pub struct CollectiveSpectra {
    pub grid: FrequencyGrid,
    pub s_yy: Vec<f64>,
    pub s_qq: Vec<f64>,
    pub s_pp: Vec<f64>,
    pub s_qp: Vec<C64>,
    pub s_qy: Vec<C64>,
    pub s_py: Vec<C64>,
    pub schur_qq: Vec<f64>,
    pub schur_pp: Vec<f64>,
    pub schur_qp: Vec<C64>,
}

impl CollectiveSpectra {
    pub fn compute(meas: &MeasurementModel, subset: &[usize], grid: &FrequencyGrid) -> Result<Self> {
        let cm = CollectiveModel::new(meas, subset)?;
        if !meas.has_shot_floor() {
            return Err(Error::NoShotFloor);
        }
        let n = grid.n_points;
        let mut out = Self {
            grid: *grid,
            s_yy: Vec::with_capacity(n),
            s_qq: Vec::with_capacity(n),
            s_pp: Vec::with_capacity(n),
            s_qp: Vec::with_capacity(n),
            s_qy: Vec::with_capacity(n),
            s_py: Vec::with_capacity(n),
            schur_qq: Vec::with_capacity(n),
            schur_pp: Vec::with_capacity(n),
            schur_qp: Vec::with_capacity(n),
        };
        let mut scratch = Scratch::default();
        for k in 0..n {
            let st = cm.at(grid.omega(k), &mut scratch);
            out.s_yy.push(st.s_yy);
            out.s_qq.push(st.s_qq);
            out.s_pp.push(st.s_pp);
            out.s_qp.push(st.s_qp);
            out.s_qy.push(st.s_qy);
            out.s_py.push(st.s_py);
            out.schur_qq.push(st.schur_qq);
            out.schur_pp.push(st.schur_pp);
            out.schur_qp.push(st.schur_qp);
        }
        Ok(out)
    }
}

/// Position-only statistics for large single-quadrature sweeps.
pub(crate) fn position_statistics(
    meas: &MeasurementModel,
    subset: &[usize],
    grid: &FrequencyGrid,
) -> Result<(Vec<f64>, Vec<C64>, Vec<f64>)> {
    let cm = CollectiveModel::new(meas, subset)?;
    if !meas.has_shot_floor() {
        return Err(Error::NoShotFloor);
    }
    let n = grid.n_points;
    let (mut yy, mut qy, mut sc) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut scratch = Scratch::default();
    for k in 0..n {
        let st = cm.at(grid.omega(k), &mut scratch);
        yy.push(st.s_yy);
        qy.push(st.s_qy);
        sc.push(st.schur_qq);
    }
    Ok((yy, qy, sc))
}

/// Photocurrent PSD `S_YY`: detected motion of every mode, correlated
/// backaction and all noise components.
pub fn photocurrent_psd(meas: &MeasurementModel, grid: &FrequencyGrid) -> Result<SampledSpectrum> {
    meas.validate()?;
    if !meas.has_shot_floor() {
        return Err(Error::NoShotFloor);
    }
    let cm = CollectiveModel::new(meas, &[0])?;
    let mut scratch = Scratch::default();
    let vals: Vec<f64> = (0..grid.n_points).map(|k| cm.at(grid.omega(k), &mut scratch).s_yy).collect();
    SampledSpectrum::from_real(*grid, &vals)
}

/// Cross-spectra `(S_qY, S_pY)` of the collective coordinate of `subset`.
pub fn collective_cross_spectra(
    meas: &MeasurementModel,
    subset: &[usize],
    grid: &FrequencyGrid,
) -> Result<(SampledSpectrum, SampledSpectrum)> {
    let cm = CollectiveModel::new(meas, subset)?;
    let mut scratch = Scratch::default();
    let (mut qy, mut py) = (Vec::with_capacity(grid.n_points), Vec::with_capacity(grid.n_points));
    for k in 0..grid.n_points {
        let st = cm.at(grid.omega(k), &mut scratch);
        qy.push(st.s_qy);
        py.push(st.s_py);
    }
    Ok((SampledSpectrum::new(*grid, qy, true)?, SampledSpectrum::new(*grid, py, true)?))
}

/// Interval of roll-off frequencies keeping equipartition within tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollOffRange {
    pub omega_c_lo: f64,
    pub omega_c_hi: f64,
    pub scan_lo: f64,
    pub scan_hi: f64,
}

/// Relative occupancy error `|∫S_qq dω/2π − (n_th+½)|/(n_th+½)`.
pub fn equipartition_error(mode: &ModeModel) -> f64 {
    let target = mode.n_th + 0.5;
    (mode.occupancy() - target).abs() / target
}

/// Contiguous range of `ω_c` in `[Ω·10⁻⁶, Ω]` satisfying equipartition to
/// `tolerance`; the widest such run when several exist.
pub fn calibrate_omega_c(mode: &ModeModel, tolerance: f64) -> Result<RollOffRange> {
    if mode.damping != Damping::Structural {
        return invalid("roll-off calibration applies to structural modes only");
    }
    if !(tolerance > 0.0 && tolerance <= 1.0) {
        return invalid(format!("tolerance {tolerance} must lie in (0, 1]"));
    }
    let (scan_lo, scan_hi) = (mode.omega * 1e-6, mode.omega);
    let err_at = |wc: f64| {
        let mut m = mode.clone();
        m.omega_c = wc;
        equipartition_error(&m)
    };
    let steps = 96;
    let xs: Vec<f64> = (0..=steps).map(|i| scan_lo * (scan_hi / scan_lo).powf(i as f64 / steps as f64)).collect();
    let ok: Vec<bool> = xs.iter().map(|&x| err_at(x) <= tolerance).collect();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < ok.len() {
        if ok[i] {
            let s = i;
            while i + 1 < ok.len() && ok[i + 1] {
                i += 1;
            }
            if best.is_none_or(|(a, b)| i - s > b - a) {
                best = Some((s, i));
            }
        }
        i += 1;
    }
    let (a, b) = best.ok_or(Error::NoAdmissibleRollOff(tolerance))?;
    let refine = |good: f64, bad: f64| {
        let (mut g, mut x) = (good, bad);
        for _ in 0..40 {
            let m = (g * x).sqrt();
            if err_at(m) <= tolerance {
                g = m;
            } else {
                x = m;
            }
        }
        g
    };
    let lo = if a == 0 { xs[0] } else { refine(xs[a], xs[a - 1]) };
    let hi = if b == steps { xs[steps] } else { refine(xs[b], xs[b + 1]) };
    Ok(RollOffRange { omega_c_lo: lo, omega_c_hi: hi, scan_lo, scan_hi })
}

/// `2π` helper for callers writing in Hz.
pub fn hz(f: f64) -> f64 {
    TAU * f
}
