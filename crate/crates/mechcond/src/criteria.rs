//! Closed-form regime thresholds for conditioning `N` identical modes.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{thermal_occupancy, Damping, DEFAULT_TEMPERATURE_K};

/// Angular rate in rad/s. Rates enter the criteria only through this type
/// so that frequencies in Hz cannot be passed by accident.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngularRate(pub f64);

impl AngularRate {
    pub fn from_hz(f: f64) -> Self {
        Self(TAU * f)
    }

    pub fn hz(self) -> f64 {
        self.0 / TAU
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeInput {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub n_th: f64,
    pub eta: f64,
    #[serde(rename = "N")]
    pub n: u32,
    pub damping: Damping,
}

impl RegimeInput {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("C", self.c), ("n_th", self.n_th)] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return invalid(format!("Q = {} must be positive", self.q));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return invalid(format!("eta = {} must lie in (0, 1]", self.eta));
        }
        if self.n == 0 {
            return invalid("N must be at least 1");
        }
        Ok(())
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }

    /// `n_tot = n_th + N·C + 1/2`.
    pub fn n_tot(&self) -> f64 {
        self.n_th + self.nf() * self.c + 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalSqueezing {
    #[serde(rename = "S")]
    pub s: f64,
    pub satisfied: bool,
}

/// `S = 16 μ n_tot Γ/Ω²`; thermal squeezing requires `S > 1`.
pub fn thermal_squeezing_s(
    mu: AngularRate,
    n_tot: f64,
    gamma: AngularRate,
    omega: AngularRate,
) -> Result<ThermalSqueezing> {
    if !(mu.0 >= 0.0 && n_tot >= 0.0 && gamma.0 > 0.0 && omega.0 > 0.0) {
        return invalid("thermal squeezing criterion needs mu, n_tot >= 0 and gamma, omega > 0");
    }
    let s = 16.0 * mu.0 * n_tot * gamma.0 / (omega.0 * omega.0);
    Ok(ThermalSqueezing { s, satisfied: s > 1.0 })
}

/// `C > Q²/(N η n_tot)`.
pub fn rwa_breakdown(inp: &RegimeInput) -> Result<bool> {
    inp.validate()?;
    Ok(inp.c > inp.q * inp.q / (inp.nf() * inp.eta * inp.n_tot()))
}

/// `V ≈ [Q² n_tot/(64 (ηNC)³)]^{1/4}`.
pub fn asymptotic_collective_variance(inp: &RegimeInput) -> Result<f64> {
    inp.validate()?;
    let x = inp.eta * inp.nf() * inp.c;
    if x == 0.0 {
        return invalid("asymptotic variance diverges at C = 0");
    }
    Ok((inp.q * inp.q * inp.n_tot() / (64.0 * x * x * x)).powf(0.25))
}

/// `𝒫 = √(ηNC/n_tot)`.
pub fn purity(inp: &RegimeInput) -> Result<f64> {
    inp.validate()?;
    Ok((inp.eta * inp.nf() * inp.c / inp.n_tot()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub c_required: f64,
    pub satisfied: bool,
    pub formula: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

/// Cooperativity needed for `V_δq < 1/2`, with `n_tot` evaluated at the
/// input `C`.
///
/// Structural: `C > n_tot^{1/4} Q^{3/4}/(ηN)`. Viscous: `C > (Q² n_tot/4)^{1/3}/(ηN)`,
/// the point where the asymptotic variance reaches 1/2.
pub fn quantum_squeezing_threshold(inp: &RegimeInput) -> Result<Threshold> {
    inp.validate()?;
    let (nt, q, en) = (inp.n_tot(), inp.q, inp.eta * inp.nf());
    let t = match inp.damping {
        Damping::Structural => Threshold {
            c_required: nt.powf(0.25) * q.powf(0.75) / en,
            satisfied: false,
            formula: "C > n_tot^(1/4) Q^(3/4) / (eta N)".into(),
            provenance: None,
        },
        Damping::Viscous => Threshold {
            c_required: (q * q * nt / 4.0).cbrt() / en,
            satisfied: false,
            formula: "C > (Q^2 n_tot / 4)^(1/3) / (eta N)".into(),
            provenance: Some(
                "single-mode viscous threshold from the deep-regime asymptotic variance reaching 1/2".into(),
            ),
        },
    };
    Ok(Threshold { satisfied: inp.c > t.c_required, ..t })
}

/// `C > n_th/N`.
pub fn ground_state_condition(inp: &RegimeInput) -> Result<bool> {
    inp.validate()?;
    Ok(inp.c > inp.n_th / inp.nf())
}

/// `C > n_th² Q/(2N)`, defined for an even number of modes.
pub fn entanglement_condition(inp: &RegimeInput) -> Result<bool> {
    inp.validate()?;
    if !inp.n.is_multiple_of(2) {
        return invalid(format!("entanglement criterion needs an even mode count, got N = {}", inp.n));
    }
    Ok(inp.c > inp.n_th * inp.n_th * inp.q / (2.0 * inp.nf()))
}

/// Every predicate and threshold for one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub input: RegimeInput,
    pub n_tot: f64,
    pub rwa_breakdown: bool,
    pub asymptotic_variance: Option<f64>,
    pub purity: f64,
    pub quantum_squeezing: Threshold,
    pub ground_state: bool,
    /// `None` for odd `N`.
    pub entanglement: Option<bool>,
}

pub fn criteria_report(inp: &RegimeInput) -> Result<CriteriaReport> {
    inp.validate()?;
    Ok(CriteriaReport {
        input: *inp,
        n_tot: inp.n_tot(),
        rwa_breakdown: rwa_breakdown(inp)?,
        asymptotic_variance: asymptotic_collective_variance(inp).ok(),
        purity: purity(inp)?,
        quantum_squeezing: quantum_squeezing_threshold(inp)?,
        ground_state: ground_state_condition(inp)?,
        entanglement: entanglement_condition(inp).ok(),
    })
}

/// Optomechanical device in the unresolved-sideband regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityDevice {
    pub omega: AngularRate,
    pub gamma: AngularRate,
    pub g0: AngularRate,
    pub kappa: AngularRate,
    pub eta: f64,
    pub temperature_k: f64,
    pub damping: Damping,
    pub modes: u32,
}

impl CavityDevice {
    /// Zipper-cavity parameters: Ω/2π = 3 MHz, Γ/2π = 100 Hz,
    /// g₀/2π = 24 MHz, κ/2π = 20 GHz, η = 0.5, room temperature.
    pub fn zipper() -> Self {
        Self {
            omega: AngularRate::from_hz(3e6),
            gamma: AngularRate::from_hz(100.0),
            g0: AngularRate::from_hz(24e6),
            kappa: AngularRate::from_hz(20e9),
            eta: 0.5,
            temperature_k: DEFAULT_TEMPERATURE_K,
            damping: Damping::Structural,
            modes: 1,
        }
    }

    /// `μ = 4 g₀² n_cav/κ`.
    pub fn measurement_rate(&self, n_cav: f64) -> AngularRate {
        AngularRate(4.0 * self.g0.0 * self.g0.0 * n_cav / self.kappa.0)
    }

    pub fn regime(&self, n_cav: f64) -> RegimeInput {
        RegimeInput {
            c: self.measurement_rate(n_cav).0 / self.gamma.0,
            q: self.omega.0 / self.gamma.0,
            n_th: thermal_occupancy(self.omega.0, self.temperature_k),
            eta: self.eta,
            n: self.modes,
            damping: self.damping,
        }
    }
}

/// Photon number to cooperativity chain and squeezing verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonChain {
    pub device: CavityDevice,
    pub n_cav: f64,
    pub g: AngularRate,
    pub mu: AngularRate,
    pub regime: RegimeInput,
    pub n_tot: f64,
    pub threshold: Threshold,
    /// Smallest intracavity photon number meeting the threshold.
    pub threshold_photons: f64,
    pub formulas: Vec<String>,
}

pub fn photon_chain(device: &CavityDevice, n_cav: f64) -> Result<PhotonChain> {
    if !(n_cav >= 0.0 && n_cav.is_finite()) {
        return invalid(format!("photon number {n_cav} must be non-negative"));
    }
    let regime = device.regime(n_cav);
    let threshold = quantum_squeezing_threshold(&regime)?;
    let satisfied = |n: f64| -> Result<bool> { Ok(quantum_squeezing_threshold(&device.regime(n))?.satisfied) };
    let (mut lo, mut hi) = (0.0, 1.0);
    while !satisfied(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return invalid("squeezing threshold not reached below 1e15 photons");
        }
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if satisfied(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(PhotonChain {
        device: *device,
        n_cav,
        g: AngularRate(device.g0.0 * n_cav.sqrt()),
        mu: device.measurement_rate(n_cav),
        n_tot: regime.n_tot(),
        regime,
        threshold,
        threshold_photons: hi,
        formulas: vec![
            "g = g0 sqrt(n_cav)".into(),
            "mu = 4 g^2 / kappa".into(),
            "C = mu / Gamma".into(),
            "Q = Omega / Gamma".into(),
            "n_th = k_B T / (hbar Omega)".into(),
            "n_tot = n_th + N C + 1/2".into(),
        ],
    })
}
