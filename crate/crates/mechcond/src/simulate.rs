//! Frequency-domain synthesis of measurement records and Monte Carlo
//! evaluation of the conditioning pipeline.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{read_framed, write_framed, BUNDLE_MAGIC};
use crate::condition::{
    apply_filters, model_conditioning, record_grid, relative_estimate_stats, sample_covariance, ConditioningReport,
    Covariance, Provenance,
};
use crate::error::{invalid, Error, Result};
use crate::grid::{to_freq_in_place, to_time_in_place, FrequencyGrid, C64};
use crate::model::{position_statistics, BackactionMode, Damping, MeasurementModel, ModeModel};
use crate::specfact::{anticausal_vec, log_factor_vec, SplitRule};
use crate::wiener::{synthesize_filters, WienerFilterSet};

/// Role of a random stream; combined with the mode index into the ChaCha
/// stream id so that streams never shift when modes are added.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Role {
    Thermal = 1,
    Backaction = 2,
    Noise = 3,
}

fn stream_id(role: Role, index: usize) -> u64 {
    ((role as u64) << 32) | index as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub meas: MeasurementModel,
    /// Record length (s).
    pub duration: f64,
    /// Sample period (s).
    pub dt: f64,
    pub seed: u64,
    pub backaction_mode: BackactionMode,
    /// Keep the per-mode force realizations in the bundle.
    #[serde(default)]
    pub record_forces: bool,
}

impl SimulationSpec {
    pub fn new(meas: MeasurementModel, duration: f64, dt: f64, seed: u64) -> Self {
        let backaction_mode = meas.backaction;
        Self { meas, duration, dt, seed, backaction_mode, record_forces: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.meas.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt = {} must be positive", self.dt));
        }
        if !(self.duration >= 16.0 * self.dt && self.duration.is_finite()) {
            return invalid(format!("duration = {} is shorter than 16 samples", self.duration));
        }
        let top = self.meas.signal_modes.iter().map(|m| m.omega).fold(0.0, f64::max);
        if top >= PI / self.dt {
            return Err(Error::Grid(format!(
                "resonance {top:e} rad/s lies above the Nyquist frequency {:e} rad/s",
                PI / self.dt
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Length of the synthesis buffer: at least twice the record.
    pub fn synthesis_points(&self) -> usize {
        (2 * self.n_samples()).next_power_of_two().max(crate::grid::MIN_POINTS)
    }

    /// Shortest record for stationary statistics, `100/min Γ_j`.
    pub fn stationary_duration(&self) -> f64 {
        100.0 / self.meas.signal_modes.iter().map(|m| m.gamma).fold(f64::INFINITY, f64::min)
    }

    pub fn model(&self) -> MeasurementModel {
        let mut m = self.meas.clone();
        m.backaction = self.backaction_mode;
        m
    }

    /// Filter grid on the record's time base resolving every linewidth by
    /// `bins_per_width` bins.
    pub fn filter_grid(&self, bins_per_width: f64) -> Result<FrequencyGrid> {
        record_grid(&self.meas, self.dt, bins_per_width)
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        format!("{:x}", Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeForces {
    pub thermal: Vec<Vec<f64>>,
    pub backaction: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub y: Vec<f64>,
    pub q_true: Vec<Vec<f64>>,
    pub p_true: Vec<Vec<f64>>,
    pub forces: Option<ModeForces>,
    pub dt: f64,
    pub seed: u64,
    pub spec_hash: String,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    spec: SimulationSpec,
    seed: u64,
    dt: f64,
    spec_hash: String,
    len: usize,
    columns: Vec<String>,
}

impl TrajectoryBundle {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Collective coordinate `Σ w_j q_j` over `subset`.
    pub fn collective(&self, meas: &MeasurementModel, subset: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        meas.check_subset(subset)?;
        let w = meas.collective_weights(subset);
        let mut q = vec![0.0; self.len()];
        let mut p = vec![0.0; self.len()];
        for (&j, &wj) in subset.iter().zip(&w) {
            for (a, b) in q.iter_mut().zip(&self.q_true[j]) {
                *a += wj * b;
            }
            for (a, b) in p.iter_mut().zip(&self.p_true[j]) {
                *a += wj * b;
            }
        }
        Ok((q, p))
    }

    fn columns(&self) -> Vec<(String, &[f64])> {
        let mut cols: Vec<(String, &[f64])> = vec![("y".into(), &self.y)];
        for (j, (q, p)) in self.q_true.iter().zip(&self.p_true).enumerate() {
            cols.push((format!("q_{j}"), q));
            cols.push((format!("p_{j}"), p));
        }
        if let Some(f) = &self.forces {
            for (j, v) in f.thermal.iter().enumerate() {
                cols.push((format!("f_th_{j}"), v));
            }
            for (j, v) in f.backaction.iter().enumerate() {
                cols.push((format!("f_ba_{j}"), v));
            }
        }
        cols
    }

    /// Binary form: header with the spec and column names, then the
    /// columns one after another.
    pub fn write_binary<W: Write>(&self, spec: &SimulationSpec, w: W) -> Result<()> {
        let cols = self.columns();
        let header = BundleHeader {
            spec: spec.clone(),
            seed: self.seed,
            dt: self.dt,
            spec_hash: self.spec_hash.clone(),
            len: self.len(),
            columns: cols.iter().map(|c| c.0.clone()).collect(),
        };
        let payload: Vec<f64> = cols.iter().flat_map(|c| c.1.iter().copied()).collect();
        write_framed(w, &BUNDLE_MAGIC, &header, &payload)
    }

    pub fn read_binary<R: Read>(r: R) -> Result<(SimulationSpec, Self)> {
        let (h, payload): (BundleHeader, Vec<f64>) = read_framed(r, &BUNDLE_MAGIC)?;
        if payload.len() != h.len * h.columns.len() {
            return Err(Error::Format(format!(
                "payload holds {} values, header promises {} columns of {}",
                payload.len(),
                h.columns.len(),
                h.len
            )));
        }
        let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (name, chunk) in h.columns.iter().zip(payload.chunks_exact(h.len.max(1))) {
            cols.insert(name, chunk.to_vec());
        }
        let modes = h.spec.meas.signal_modes.len();
        let mut take =
            |name: String| cols.remove(name.as_str()).ok_or_else(|| Error::Format(format!("missing column {name}")));
        let y = take("y".into())?;
        let q_true = (0..modes).map(|j| take(format!("q_{j}"))).collect::<Result<Vec<_>>>()?;
        let p_true = (0..modes).map(|j| take(format!("p_{j}"))).collect::<Result<Vec<_>>>()?;
        let forces = if h.columns.iter().any(|c| c.starts_with("f_th_")) {
            Some(ModeForces {
                thermal: (0..modes).map(|j| take(format!("f_th_{j}"))).collect::<Result<_>>()?,
                backaction: (0..modes).map(|j| take(format!("f_ba_{j}"))).collect::<Result<_>>()?,
            })
        } else {
            None
        };
        let b = Self { y, q_true, p_true, forces, dt: h.dt, seed: h.seed, spec_hash: h.spec_hash };
        Ok((h.spec, b))
    }

    /// CSV with a `t_s` column followed by every series.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols = self.columns();
        let names: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        writeln!(w, "t_s,{}", names.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            line.push_str(&format!("{:e}", i as f64 * self.dt));
            for c in &cols {
                line.push_str(&format!(",{:e}", c.1[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// White noise of unit two-sided PSD, transformed to the frequency domain.
fn white_spectrum(seed: u64, stream: u64, n: usize, dt: f64) -> Vec<C64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let s = 1.0 / dt.sqrt();
    let mut w: Vec<C64> = (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            C64::new(s * x, 0.0)
        })
        .collect();
    to_freq_in_place(&mut w);
    w
}

fn to_real(mut x: Vec<C64>, keep: usize) -> Vec<f64> {
    to_time_in_place(&mut x);
    x.truncate(keep);
    x.into_iter().map(|v| v.re).collect()
}

/// Draw one record: independent thermal forces per mode shaped by their
/// damping law, one white backaction force shared by every mode with
/// amplitude `√μ_j`, the photocurrent `Y = Σ 2√(ημ_j) q_j + noise`, and
/// the true coordinates. The buffer is twice the record length and the
/// second half is discarded.
pub fn synthesize(spec: &SimulationSpec) -> Result<TrajectoryBundle> {
    spec.validate()?;
    let meas = spec.model();
    let n = spec.synthesis_points();
    let keep = spec.n_samples();
    let grid = FrequencyGrid::with_dt(n, spec.dt)?;
    let omegas = grid.omegas();
    let ba_on = meas.backaction == BackactionMode::CorrelatedAcrossModes;
    let ba = if ba_on && meas.signal_modes.iter().any(|m| m.mu > 0.0) {
        Some(white_spectrum(spec.seed, stream_id(Role::Backaction, 0), n, spec.dt))
    } else {
        None
    };
    let mut yf = vec![C64::new(0.0, 0.0); n];
    let mut q_true = Vec::with_capacity(meas.signal_modes.len());
    let mut p_true = Vec::with_capacity(meas.signal_modes.len());
    let mut forces = spec.record_forces.then(|| ModeForces { thermal: vec![], backaction: vec![] });
    for (j, m) in meas.signal_modes.iter().enumerate() {
        let mut f = white_spectrum(spec.seed, stream_id(Role::Thermal, j), n, spec.dt);
        for (v, &w) in f.iter_mut().zip(&omegas) {
            *v *= m.thermal_force_psd(w).sqrt();
        }
        let s_ba = SQRT_2 * m.mu.sqrt();
        if let Some(fr) = forces.as_mut() {
            fr.thermal.push(to_real(f.clone(), keep));
            fr.backaction.push(match &ba {
                Some(b) if m.mu > 0.0 => to_real(b.iter().map(|v| v * s_ba).collect(), keep),
                _ => vec![0.0; keep],
            });
        }
        if let (Some(b), true) = (&ba, m.mu > 0.0) {
            for (v, bv) in f.iter_mut().zip(b) {
                *v += s_ba * bv;
            }
        }
        let gy = 2.0 * (meas.eta * m.mu).sqrt();
        let mut pf = Vec::with_capacity(n);
        for ((v, &w), yv) in f.iter_mut().zip(&omegas).zip(yf.iter_mut()) {
            *v *= m.susceptibility(w);
            *yv += gy * *v;
            pf.push(*v * meas.momentum_factor(j, w));
        }
        q_true.push(to_real(f, keep));
        p_true.push(to_real(pf, keep));
    }
    for (i, c) in meas.noise_components.iter().enumerate() {
        let nf = white_spectrum(spec.seed, stream_id(Role::Noise, i), n, spec.dt);
        for ((yv, v), &w) in yf.iter_mut().zip(&nf).zip(&omegas) {
            *yv += c.psd(w, meas.eta).sqrt() * v;
        }
    }
    Ok(TrajectoryBundle {
        y: to_real(yf, keep),
        q_true,
        p_true,
        forces,
        dt: spec.dt,
        seed: spec.seed,
        spec_hash: spec.hash(),
    })
}

/// Statistics of one Monte Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStatistics {
    pub seed: u64,
    pub conditional: Covariance,
    pub retro: Covariance,
    pub relative: Covariance,
}

/// Run one trial with precomputed filters.
pub fn run_trial(spec: &SimulationSpec, filters: &WienerFilterSet, subset: &[usize]) -> Result<TrialStatistics> {
    let b = synthesize(spec)?;
    let t = apply_filters(filters, &b.y, b.dt)?;
    let (q, p) = b.collective(&spec.meas, subset)?;
    let r = t.valid();
    let dq: Vec<f64> = r.clone().map(|i| q[i] - t.q_pred[i]).collect();
    let dp: Vec<f64> = r.clone().map(|i| p[i] - t.p_pred[i]).collect();
    let rq: Vec<f64> = r.clone().map(|i| q[i] - t.q_retro[i]).collect();
    let rp: Vec<f64> = r.map(|i| p[i] - t.p_retro[i]).collect();
    Ok(TrialStatistics {
        seed: spec.seed,
        conditional: sample_covariance(&dq, &dp),
        retro: sample_covariance(&rq, &rp),
        relative: relative_estimate_stats(&t)?,
    })
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, f64::NAN);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Seeds of the trials of a Monte Carlo run starting at `seed`.
pub fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|t| seed.wrapping_add(t)).collect()
}

/// Monte Carlo conditioning report for `subset`: synthesize, filter with
/// the sampled-record Wiener filters, and compare with the true collective
/// coordinate. Trials run in parallel and are merged in seed order.
pub fn monte_carlo_report(spec: &SimulationSpec, subset: &[usize], trials: usize) -> Result<ConditioningReport> {
    let grid = spec.filter_grid(16.0)?;
    monte_carlo_report_on(spec, subset, trials, &grid)
}

pub fn monte_carlo_report_on(
    spec: &SimulationSpec,
    subset: &[usize],
    trials: usize,
    grid: &FrequencyGrid,
) -> Result<ConditioningReport> {
    if trials == 0 {
        return invalid("at least one trial is required");
    }
    spec.validate()?;
    let meas = spec.model();
    let filters = synthesize_filters(&meas, subset, grid)?;
    let stats: Vec<TrialStatistics> = trial_seeds(spec.seed, trials)
        .into_par_iter()
        .map(|s| {
            let mut sp = spec.clone();
            sp.seed = s;
            run_trial(&sp, &filters, subset)
        })
        .collect::<Result<_>>()?;
    Ok(merge_trials(spec, subset, &stats, *grid, meas.hash()))
}

pub fn merge_trials(
    spec: &SimulationSpec,
    subset: &[usize],
    stats: &[TrialStatistics],
    grid: FrequencyGrid,
    model_hash: String,
) -> ConditioningReport {
    let col = |f: &dyn Fn(&TrialStatistics) -> f64| mean_se(&stats.iter().map(f).collect::<Vec<_>>());
    let fields: [&dyn Fn(&TrialStatistics) -> f64; 8] = [
        &|s| s.conditional.v_qq,
        &|s| s.conditional.v_pp,
        &|s| s.conditional.c_qp,
        &|s| s.relative.v_qq,
        &|s| s.relative.v_pp,
        &|s| s.relative.c_qp,
        &|s| 1.0 - s.relative.v_qq / (2.0 * s.conditional.v_qq),
        &|s| 1.0 - s.relative.v_pp / (2.0 * s.conditional.v_pp),
    ];
    let ms: Vec<(f64, f64)> = fields.iter().map(|f| col(*f)).collect();
    let cond = Covariance { v_qq: ms[0].0, v_pp: ms[1].0, c_qp: ms[2].0 };
    let rel = Covariance { v_qq: ms[3].0, v_pp: ms[4].0, c_qp: ms[5].0 };
    let retro =
        Covariance { v_qq: col(&|s| s.retro.v_qq).0, v_pp: col(&|s| s.retro.v_pp).0, c_qp: col(&|s| s.retro.c_qp).0 };
    let mut rep = ConditioningReport::assemble(
        subset,
        Provenance::Simulated,
        cond,
        rel,
        Some(retro),
        grid,
        SplitRule::Sampled,
        model_hash,
    );
    let mut se = [0.0; 8];
    for (s, m) in se.iter_mut().zip(&ms) {
        *s = m.1;
    }
    rep.standard_errors = Some(se);
    rep.trials = stats.len();
    rep.seed = Some(spec.seed);
    if spec.backaction_mode == BackactionMode::CorrelatedAcrossModes
        && spec.meas.signal_modes.iter().any(|m| m.damping == Damping::Structural && m.mu > 0.0)
    {
        rep.notes.push("backaction injected as a flat force on structurally damped modes".into());
    }
    rep
}

/// Single-mode stand-in for `n` identical modes: `μ → nμ`.
pub fn collective_equivalent(base: &ModeModel, c: f64, n_th: f64, n: usize) -> ModeModel {
    let mut m = base.clone();
    m.n_th = n_th;
    m.mu = n as f64 * c * m.gamma;
    m
}

/// Causal conditional position variance of a single mode, evaluated on
/// the continuous-time split with only position statistics held in memory.
pub fn conditional_position_variance(mode: &ModeModel, eta: f64, grid: &FrequencyGrid) -> Result<f64> {
    let meas = MeasurementModel::new(eta, vec![mode.clone()]);
    meas.check_grid(grid)?;
    let (s_yy, s_qy, schur) = position_statistics(&meas, &[0], grid)?;
    let rule = SplitRule::Continuous;
    let (logm, _) = log_factor_vec(&s_yy, grid, rule)?;
    let x: Vec<C64> = s_qy.iter().zip(&logm).map(|(s, l)| s / l.conj().exp()).collect();
    drop(s_qy);
    drop(logm);
    let a = anticausal_vec(&x, grid, rule);
    drop(x);
    let f: Vec<f64> = a.iter().zip(&schur).zip(&s_yy).map(|((a, sc), yy)| sc / yy + a.norm_sqr()).collect();
    let v = crate::condition::integrate_spectrum(&f, grid, true);
    if !(v >= 0.0) {
        return Err(Error::NegativeVariance(v));
    }
    Ok(v)
}

/// Grid for sweep cells: reach `8·Ω′`, spacing `Γ/bins_per_width`.
pub fn sweep_grid(mode: &ModeModel, eta: f64, bins_per_width: f64) -> Result<FrequencyGrid> {
    MeasurementModel::new(eta, vec![mode.clone()]).grid_with(8.0, bins_per_width)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cooperativity: f64,
    pub n_th: f64,
    pub v_dq_dq: f64,
    pub squeezed: bool,
}

/// Conditional position variance over a `(C, n_th)` grid for `n`
/// identical modes, using the substitution `C → nC`.
pub fn sweep_regimes(
    base: &ModeModel,
    eta: f64,
    c_grid: &[f64],
    n_th_grid: &[f64],
    n: usize,
    bins_per_width: f64,
) -> Result<Vec<SweepCell>> {
    if n == 0 {
        return invalid("mode count must be at least 1");
    }
    let cells: Vec<(f64, f64)> = n_th_grid.iter().flat_map(|&t| c_grid.iter().map(move |&c| (c, t))).collect();
    cells
        .into_par_iter()
        .map(|(c, t)| {
            if !(c >= 0.0 && c.is_finite() && t >= 0.0 && t.is_finite()) {
                return invalid(format!("sweep cell (C = {c}, n_th = {t}) is not finite and non-negative"));
            }
            let m = collective_equivalent(base, c, t, n);
            let grid = sweep_grid(&m, eta, bins_per_width)?;
            let v = conditional_position_variance(&m, eta, &grid)?;
            Ok(SweepCell { cooperativity: c, n_th: t, v_dq_dq: v, squeezed: v < 0.5 })
        })
        .collect()
}

/// Cooperativity at which the conditional position variance of `n`
/// identical modes crosses 1/2, found by bisection in `log C` within
/// `[c_lo, c_hi]` to relative precision `rel_tol`.
pub fn squeezing_boundary(
    base: &ModeModel,
    eta: f64,
    n_th: f64,
    n: usize,
    (c_lo, c_hi): (f64, f64),
    rel_tol: f64,
    bins_per_width: f64,
) -> Result<f64> {
    let v = |c: f64| -> Result<f64> {
        let m = collective_equivalent(base, c, n_th, n);
        conditional_position_variance(&m, eta, &sweep_grid(&m, eta, bins_per_width)?)
    };
    let (mut lo, mut hi) = (c_lo, c_hi);
    let (mut v_lo, mut v_hi) = (v(lo)?.ln() - 0.5f64.ln(), v(hi)?.ln() - 0.5f64.ln());
    if v_lo <= 0.0 || v_hi >= 0.0 {
        return invalid(format!("squeezing boundary not bracketed by C in [{c_lo:e}, {c_hi:e}]"));
    }
    let mut iterations = 0;
    while hi / lo > 1.0 + rel_tol {
        iterations += 1;
        if iterations > 200 {
            return Err(Error::NoConvergence { iterations, residual: hi / lo - 1.0 });
        }
        // Regula falsi in log C, guarded toward bisection.
        let (a, b) = (lo.ln(), hi.ln());
        let t = (v_lo / (v_lo - v_hi)).clamp(0.1, 0.9);
        let mid = (a + t * (b - a)).exp();
        let vm = v(mid)?.ln() - 0.5f64.ln();
        if vm > 0.0 {
            lo = mid;
            v_lo = vm;
        } else {
            hi = mid;
            v_hi = vm;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Model-based conditioning of the collective coordinate for a chain of
/// nested subsets `{0}, {0,1}, …`.
pub fn nested_subset_variances(
    meas: &MeasurementModel,
    grid: &FrequencyGrid,
    rule: SplitRule,
) -> Result<Vec<(usize, Covariance)>> {
    (1..=meas.signal_modes.len())
        .map(|k| {
            let subset: Vec<usize> = (0..k).collect();
            Ok((k, model_conditioning(meas, &subset, grid, rule)?.variances.pred))
        })
        .collect()
}
