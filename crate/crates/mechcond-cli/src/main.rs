use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mechcond::binio::BUNDLE_MAGIC;
use mechcond::condition::{
    apply_filters, infer_conditional_from_relative, model_report, record_grid, relative_estimate_stats,
    sample_covariance, thermal_scales, write_phase_space_csv, ConditioningReport, Covariance, Provenance,
};
use mechcond::criteria::{criteria_report, photon_chain, quantum_squeezing_threshold, CavityDevice, RegimeInput};
use mechcond::ingest::{fit_psd, model_export, welch_psd, welch_segments, Band, FitOptions, TraceFile};
use mechcond::model::{photocurrent_psd, BackactionMode, Damping, MeasurementModel, ModelConfig};
use mechcond::simulate::{sweep_regimes, synthesize, SimulationSpec, TrajectoryBundle};
use mechcond::specfact::spectral_factorize;
use mechcond::wiener::{synthesize_filters, write_filter_csv, FilterKind};
use mechcond::{FrequencyGrid, SampledSpectrum};

const FACTOR_RESIDUAL_MAX: f64 = 1e-6;
const FACTOR_ANTICAUSAL_MAX: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "mechcond", version, about = "Conditional state estimation for mechanical resonators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a measurement record with the true mode trajectories.
    Simulate(SimulateArgs),
    /// Condition a record on its optimal filters and report covariances.
    Condition(ConditionArgs),
    /// Conditional position variance over a cooperativity/occupancy grid.
    Sweep(SweepArgs),
    /// Fit a measurement model to the PSD of a record.
    Fit(FitArgs),
    /// Minimum-phase factor of a tabulated spectrum.
    Factorize(FactorizeArgs),
    /// Closed-form regime predicates.
    Criteria(CriteriaArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Record length in seconds; defaults to 100/min Γ.
    #[arg(long)]
    duration: Option<f64>,
    /// Sample period in seconds; defaults to π/(8 Ω_max).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    record_forces: bool,
    #[arg(long)]
    no_backaction: bool,
    /// Also write the bundle as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct ConditionArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trace file (binary or CSV) or a simulated bundle.
    #[arg(long)]
    trace: PathBuf,
    /// One-based mode indices, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    subset: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Filter grid length; chosen from the narrowest linewidth when absent.
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, default_value_t = 16.0)]
    bins_per_width: f64,
    /// Largest number of rows per phase-space CSV.
    #[arg(long, default_value_t = 100_000)]
    max_points: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Model whose first mode is the template.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cooperativities as lo:hi:count, log spaced.
    #[arg(long, default_value = "1e2:1e6:9")]
    c_range: String,
    /// Thermal occupancies as lo:hi:count, log spaced.
    #[arg(long, default_value = "1e5:1e7:3")]
    n_range: String,
    #[arg(long, default_value_t = 1)]
    modes: u32,
    #[arg(long, default_value_t = 8.0)]
    bins_per_width: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Starting model.
    #[arg(long)]
    config: PathBuf,
    /// Trace file or simulated bundle.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1 << 14)]
    segment: usize,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Excluded band in Hz as lo:hi; repeatable.
    #[arg(long)]
    mask: Vec<String>,
    /// Fitted band in Hz as lo:hi.
    #[arg(long)]
    band: Option<String>,
    #[arg(long)]
    detect_peaks: bool,
    #[arg(long)]
    bias_correction: bool,
}

#[derive(Args)]
struct FactorizeArgs {
    /// Spectrum CSV (`omega,re,im`).
    #[arg(long, conflicts_with = "config")]
    psd: Option<PathBuf>,
    /// Factor the photocurrent PSD of this model instead.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 16.0)]
    bins_per_width: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CriteriaArgs {
    /// Regime JSON with keys C, Q, n_th, eta, N, damping.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    n_th: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    modes: u32,
    #[arg(long, default_value = "structural")]
    damping: String,
    /// Evaluate the zipper-cavity chain at this intracavity photon number.
    #[arg(long)]
    zipper_photons: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config: Option<PathBuf>,
    seeds: Vec<u64>,
    out_dir: PathBuf,
    version: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    threads: usize,
    flags_ok: bool,
}

struct Run {
    manifest: RunManifest,
}

impl Run {
    fn new(command: &str, out: &Path, config: Option<&Path>) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut run = Self {
            manifest: RunManifest {
                command: command.into(),
                args: std::env::args().collect(),
                config: config.map(Path::to_path_buf),
                seeds: Vec::new(),
                out_dir: out.to_path_buf(),
                version: env!("CARGO_PKG_VERSION").into(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                threads: rayon::current_num_threads(),
                flags_ok: true,
            },
        };
        if let Some(c) = config {
            run.input(c)?;
        }
        Ok(run)
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest.inputs.insert(path.display().to_string(), format!("{:x}", Sha256::digest(&bytes)));
        Ok(bytes)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.manifest.out_dir.join(name);
        self.manifest.outputs.push(name.into());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        Ok(w.flush()?)
    }

    fn finish(mut self) -> Result<bool> {
        let ok = self.manifest.flags_ok;
        let json = serde_json::to_string_pretty(&self.manifest)? + "\n";
        self.write("manifest.json", &json)?;
        Ok(ok)
    }
}

fn load_model(path: &Path) -> Result<MeasurementModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ModelConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(MeasurementModel::from_config(&cfg)?)
}

fn subset_from_one_based(raw: &[usize], meas: &MeasurementModel) -> Result<Vec<usize>> {
    if raw.is_empty() {
        bail!("--subset needs at least one mode");
    }
    let subset =
        raw.iter().map(|&i| i.checked_sub(1).context("mode indices are one-based")).collect::<Result<Vec<_>>>()?;
    meas.check_subset(&subset)?;
    Ok(subset)
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').with_context(|| format!("expected lo:hi, got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn log_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else { bail!("expected lo:hi:count, got {s:?}") };
    let (lo, hi, n): (f64, f64, usize) = (lo.parse()?, hi.parse()?, n.parse()?);
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        bail!("range {s:?} needs 0 < lo <= hi and count >= 1");
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect())
}

fn band_hz(s: &str) -> Result<Band> {
    let (lo, hi) = parse_pair(s)?;
    Ok(Band { lo: std::f64::consts::TAU * lo, hi: std::f64::consts::TAU * hi })
}

fn simulate(a: SimulateArgs) -> Result<bool> {
    let mut run = Run::new("simulate", &a.out, Some(&a.config))?;
    let meas = load_model(&a.config)?;
    let top = meas.signal_modes.iter().map(|m| m.omega).fold(0.0, f64::max);
    let dt = a.dt.unwrap_or(std::f64::consts::PI / (8.0 * top));
    let mut spec = SimulationSpec::new(meas, 1.0, dt, a.seed);
    spec.duration = a.duration.unwrap_or_else(|| spec.stationary_duration());
    spec.record_forces = a.record_forces;
    if a.no_backaction {
        spec.backaction_mode = BackactionMode::Off;
    }
    spec.validate()?;
    let bundle = synthesize(&spec)?;
    run.manifest.seeds.push(a.seed);
    let mut w = run.create("bundle.bin")?;
    bundle.write_binary(&spec, &mut w)?;
    w.flush()?;
    if a.csv {
        let mut w = run.create("bundle.csv")?;
        bundle.write_csv(&mut w)?;
        w.flush()?;
    }
    run.write("spec.json", &(serde_json::to_string_pretty(&spec)? + "\n"))?;
    run.finish()
}

enum Record {
    Simulated(Box<TrajectoryBundle>),
    Measured(TraceFile),
}

fn load_record(bytes: &[u8]) -> Result<Record> {
    if bytes.starts_with(&BUNDLE_MAGIC) {
        let (_, bundle) = TrajectoryBundle::read_binary(bytes)?;
        Ok(Record::Simulated(Box::new(bundle)))
    } else {
        let t = TraceFile::load(bytes)?;
        t.validate()?;
        Ok(Record::Measured(t))
    }
}

fn condition(a: ConditionArgs) -> Result<bool> {
    let mut run = Run::new("condition", &a.out, Some(&a.config))?;
    let meas = load_model(&a.config)?;
    let subset = subset_from_one_based(&a.subset, &meas)?;
    let record = load_record(&run.input(&a.trace)?)?;
    let (y, dt) = match &record {
        Record::Simulated(b) => (b.y.clone(), b.dt),
        Record::Measured(t) => (t.calibrated(), t.dt),
    };
    let grid = match a.grid_points {
        Some(n) => FrequencyGrid::with_dt(n, dt)?,
        None => record_grid(&meas, dt, a.bins_per_width)?,
    };
    let filters = synthesize_filters(&meas, &subset, &grid)?;
    let traces = apply_filters(&filters, &y, dt)?;
    let rel = relative_estimate_stats(&traces)?;
    let model = model_report(&meas, &subset, &grid, mechcond::specfact::SplitRule::Sampled)?;
    let truth = match &record {
        Record::Simulated(b) => {
            run.manifest.seeds.push(b.seed);
            Some(b.collective(&meas, &subset)?)
        }
        Record::Measured(_) => None,
    };
    let (cond, retro, provenance) = match &truth {
        Some((q, p)) => {
            let r = traces.valid();
            let dq: Vec<f64> = r.clone().map(|i| q[i] - traces.q_pred[i]).collect();
            let dp: Vec<f64> = r.clone().map(|i| p[i] - traces.p_pred[i]).collect();
            let rq: Vec<f64> = r.clone().map(|i| q[i] - traces.q_retro[i]).collect();
            let rp: Vec<f64> = r.map(|i| p[i] - traces.p_retro[i]).collect();
            (sample_covariance(&dq, &dp), sample_covariance(&rq, &rp), Provenance::Simulated)
        }
        None => {
            let cond = Covariance {
                v_qq: infer_conditional_from_relative(rel.v_qq, model.f_q)?,
                v_pp: infer_conditional_from_relative(rel.v_pp, model.f_p)?,
                c_qp: model.c_dq_dp,
            };
            (cond, cond, Provenance::InferredFromData)
        }
    };
    let mut rep = ConditioningReport {
        provenance,
        v_dq_dq: cond.v_qq,
        v_dp_dp: cond.v_pp,
        c_dq_dp: cond.c_qp,
        v_rel_qq: rel.v_qq,
        v_rel_pp: rel.v_pp,
        c_rel_qp: rel.c_qp,
        purity: cond.purity(),
        squeezing_ratio: cond.v_pp / cond.v_qq,
        relative_squeezing_ratio: rel.v_pp / rel.v_qq,
        retro: Some(retro),
        trials: 1,
        ..model.clone()
    };
    match provenance {
        Provenance::Simulated => {
            rep.f_q = 1.0 - rel.v_qq / (2.0 * cond.v_qq);
            rep.f_p = 1.0 - rel.v_pp / (2.0 * cond.v_pp);
        }
        _ => rep.notes.push("conditional covariance inferred with model conversion factors".into()),
    }
    run.manifest.flags_ok &= rep.quadrature_ok;
    run.write("report.json", &rep.to_json())?;
    run.write("model_report.json", &model.to_json())?;

    let scales = thermal_scales(&meas, &subset, &grid)?;
    let valid = traces.valid();
    let stride = valid.len().div_ceil(a.max_points.max(1));
    let phase = |run: &mut Run, name: &str, q: &[f64], p: &[f64]| -> Result<()> {
        let mut w = run.create(name)?;
        write_phase_space_csv(q, p, scales, stride, &mut w)?;
        Ok(w.flush()?)
    };
    let v = valid.clone();
    phase(&mut run, "phase_pred.csv", &traces.q_pred[v.clone()], &traces.p_pred[v.clone()])?;
    phase(&mut run, "phase_retro.csv", &traces.q_retro[v.clone()], &traces.p_retro[v])?;
    phase(&mut run, "phase_relative.csv", &traces.delta_q(), &traces.delta_p())?;
    for kind in FilterKind::ALL {
        let mut w = run.create(&format!("filter_{}.csv", kind.name()))?;
        write_filter_csv(filters.get(kind), &mut w)?;
        w.flush()?;
    }
    run.finish()
}

#[derive(Serialize)]
struct SweepRow {
    cooperativity: f64,
    n_th: f64,
    modes: u32,
    v_dq_dq: f64,
    squeezed: bool,
    threshold_c: f64,
    threshold_satisfied: bool,
}

fn sweep(a: SweepArgs) -> Result<bool> {
    let mut run = Run::new("sweep", &a.out, Some(&a.config))?;
    let meas = load_model(&a.config)?;
    let base = meas.signal_modes.first().context("config has no modes")?;
    let (c_grid, n_grid) = (log_range(&a.c_range)?, log_range(&a.n_range)?);
    let cells = sweep_regimes(base, meas.eta, &c_grid, &n_grid, a.modes as usize, a.bins_per_width)?;
    let mut w = run.create("sweep.csv")?;
    writeln!(w, "cooperativity,n_th,modes,v_dq_dq,squeezed,threshold_c,threshold_satisfied")?;
    let mut rows = Vec::new();
    for c in cells {
        let th = quantum_squeezing_threshold(&RegimeInput {
            c: c.cooperativity,
            q: base.q(),
            n_th: c.n_th,
            eta: meas.eta,
            n: a.modes,
            damping: base.damping,
        })?;
        let row = SweepRow {
            cooperativity: c.cooperativity,
            n_th: c.n_th,
            modes: a.modes,
            v_dq_dq: c.v_dq_dq,
            squeezed: c.squeezed,
            threshold_c: th.c_required,
            threshold_satisfied: th.satisfied,
        };
        writeln!(
            w,
            "{:e},{:e},{},{:e},{},{:e},{}",
            row.cooperativity, row.n_th, row.modes, row.v_dq_dq, row.squeezed, row.threshold_c, row.threshold_satisfied
        )?;
        rows.push(row);
    }
    w.flush()?;
    run.write("sweep.json", &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    run.finish()
}

fn fit(a: FitArgs) -> Result<bool> {
    let mut run = Run::new("fit", &a.out, Some(&a.config))?;
    let template = load_model(&a.config)?;
    let trace = match load_record(&run.input(&a.trace)?)? {
        Record::Simulated(b) => TraceFile::new(b.y, b.dt),
        Record::Measured(t) => t,
    };
    let psd = welch_psd(&trace, a.segment, a.overlap)?;
    let opts = FitOptions {
        mask: a.mask.iter().map(|s| band_hz(s)).collect::<Result<_>>()?,
        band: a.band.as_deref().map(band_hz).transpose()?,
        max_iterations: 0,
        detect_peaks: a.detect_peaks,
        averages: a.bias_correction.then(|| welch_segments(trace.samples.len(), a.segment, a.overlap)),
    };
    let res = fit_psd(&psd, &template, &opts)?;
    run.manifest.flags_ok &= res.converged;
    let mut w = run.create("psd.csv")?;
    psd.write_csv(&mut w)?;
    w.flush()?;
    run.write("fit.json", &(serde_json::to_string_pretty(&res)? + "\n"))?;
    run.write("model.json", &model_export(&res))?;
    run.finish()
}

#[derive(Serialize)]
struct FactorSummary {
    residual: f64,
    anticausal_fraction: f64,
    floored_bins: usize,
    points: usize,
    residual_ok: bool,
    causality_ok: bool,
}

fn factorize(a: FactorizeArgs) -> Result<bool> {
    let mut run = Run::new("factorize", &a.out, a.config.as_deref())?;
    let s = match (&a.psd, &a.config) {
        (Some(p), _) => {
            let bytes = run.input(p)?;
            SampledSpectrum::read_csv(BufReader::new(&bytes[..]))?
        }
        (None, Some(c)) => {
            let meas = load_model(c)?;
            photocurrent_psd(&meas, &meas.default_grid(a.bins_per_width)?)?
        }
        (None, None) => bail!("one of --psd or --config is required"),
    };
    let f = spectral_factorize(&s)?;
    let summary = FactorSummary {
        residual: f.residual,
        anticausal_fraction: f.anticausal_fraction,
        floored_bins: f.floored_bins,
        points: s.len(),
        residual_ok: f.residual <= FACTOR_RESIDUAL_MAX,
        causality_ok: f.anticausal_fraction <= FACTOR_ANTICAUSAL_MAX,
    };
    run.manifest.flags_ok &= summary.residual_ok && summary.causality_ok;
    let mut w = run.create("factor.csv")?;
    f.m.write_csv(&mut w)?;
    w.flush()?;
    run.write("factor.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    run.finish()
}

fn criteria(a: CriteriaArgs) -> Result<bool> {
    let damping: Damping = serde_json::from_value(serde_json::Value::String(a.damping.clone()))
        .with_context(|| format!("unknown damping {:?}", a.damping))?;
    let mut out = serde_json::Map::new();
    let regime = match (&a.input, a.c, a.q, a.n_th) {
        (Some(p), ..) => Some(serde_json::from_slice::<RegimeInput>(&fs::read(p)?)?),
        (None, Some(c), Some(q), Some(n_th)) => Some(RegimeInput { c, q, n_th, eta: a.eta, n: a.modes, damping }),
        (None, None, None, None) => None,
        _ => bail!("--c, --q and --n-th must be given together"),
    };
    if let Some(r) = regime {
        out.insert("regime".into(), serde_json::to_value(criteria_report(&r)?)?);
    }
    if let Some(n) = a.zipper_photons {
        out.insert("zipper".into(), serde_json::to_value(photon_chain(&CavityDevice::zipper(), n)?)?);
    }
    if out.is_empty() {
        bail!("nothing to evaluate: give a regime or --zipper-photons");
    }
    let json = serde_json::to_string_pretty(&out)? + "\n";
    print!("{json}");
    if let Some(dir) = &a.out {
        let mut run = Run::new("criteria", dir, None)?;
        if let Some(p) = &a.input {
            run.input(p)?;
        }
        run.write("criteria.json", &json)?;
        return run.finish();
    }
    Ok(true)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MECHCOND_THREADS") {
        let n: usize = v.parse().with_context(|| format!("MECHCOND_THREADS = {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Condition(a) => condition(a),
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::Factorize(a) => factorize(a),
        Command::Criteria(a) => criteria(a),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("mechcond: outputs written, but a quality check failed (see manifest.json)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("mechcond: {e:#}");
            ExitCode::FAILURE
        }
    }
}
