//! Experiment orchestration: TOML configs, propagation-of-chaos rate sweeps,
//! initial-data rates, report emission and the runners behind the CLI.
//!
//! Every runner is a pure function of `(config, seed)`; outputs are written
//! in a fixed order with shortest round-trip float formatting, so identical
//! inputs give byte-identical files.

use crate::density_fourier::{invert_density, moment_estimate_check, GridParams, MomentCheck};
use crate::error::{invalid, Error, Result};
use crate::functionals::{sampled_lipschitz_d1, BuiltinFunctional, Functional, Profile};
use crate::ito_check::{ito_residual, Coefficient, ItoExperiment, ItoReport};
use crate::kolmogorov::{
    flow_constancy, generator_gap, pde_residual, Backend, Constancy, GeneratorGap, GeneratorQuadrature, PdeOptions, PdeReport,
    Semigroup,
};
use crate::linflow::MatrixFlow;
use crate::measures::EmpiricalMeasure;
use crate::mckv_sim::{simulate_euler, simulate_exact, truncation_gap, GapEstimate, InitialLaw, OUModel, SimOptions, TruncMode};
use crate::quad;
use crate::rng::{derive_seed, purpose, stream};
use crate::stable_noise::StableSpec;
use crate::stats::{self, LineFit};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Labels separating the top-level streams of the runners.
mod tag {
    pub const SWEEP: u64 = 0x5357;
    pub const INITIAL_RATE: u64 = 0x4952;
    pub const TRUNCATION: u64 = 0x5447;
    pub const SIMULATE: u64 = 0x534d;
    pub const PDE: u64 = 0x5044;
    pub const GAP: u64 = 0x4750;
    pub const ITO: u64 = 0x4954;
}

/// Harness default model: `A = -0.5`, `A' = 0.3`, `B = 1`, `T = 1`, `μ₀ = δ₀`,
/// symmetric 1.5-stable driver with Gaussian surrogate below 0.05, moment
/// order 1.
pub fn default_model() -> OUModel {
    let noise = StableSpec::symmetric_1d(1.5, 0.05, f64::INFINITY).expect("valid default noise");
    let flow = MatrixFlow::scalar(-0.5, 0.3, 1.0).expect("valid default flow");
    OUModel::new(flow, noise, InitialLaw::Point { x: vec![0.0] }, 1.0, 1.0).expect("valid default model")
}

/// Pure symmetric 1.5-stable motion started at zero: `A = A' = 0`, `B = 1`.
pub fn pure_stable_model() -> OUModel {
    let noise = StableSpec::symmetric_1d(1.5, 0.01, f64::INFINITY).expect("valid noise");
    OUModel::scalar(0.0, 0.0, 1.0, noise, InitialLaw::Point { x: vec![0.0] }, 1.0).expect("valid model")
}

fn default_functional() -> BuiltinFunctional {
    BuiltinFunctional::Linear { profile: Profile::Sqrt1p { scale: 1.0 } }
}

fn yes() -> bool {
    true
}

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Root seed used when the CLI does not pass one.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_model")]
    pub model: OUModel,
    #[serde(default = "default_functional")]
    pub functional: BuiltinFunctional,
    /// Require the functional to be in the unit-Lipschitz class.
    #[serde(default = "yes")]
    pub class_c: bool,
    /// Prefix for every output file name.
    #[serde(default)]
    pub output_prefix: String,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub initial_rate: Option<InitialRateConfig>,
    #[serde(default)]
    pub truncation: Option<TruncationConfig>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub ito: Option<ItoExperiment>,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub generator_gap: GapConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: 0,
            model: default_model(),
            functional: default_functional(),
            class_c: true,
            output_prefix: String::new(),
            sweep: SweepConfig::default(),
            initial_rate: None,
            truncation: None,
            simulate: SimulateConfig::default(),
            density: DensityConfig::default(),
            ito: None,
            pde: PdeConfig::default(),
            generator_gap: GapConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        self.functional.validate(self.model.dim())?;
        self.sweep.validate()?;
        if self.class_c {
            check_class_c(&self.functional, self.model.dim(), self.seed)?;
        }
        Ok(())
    }

    fn file(&self, out: &Path, name: &str) -> PathBuf {
        out.join(format!("{}{name}", self.output_prefix))
    }
}

/// Declared and sampled Lipschitz constant of `v ↦ δu/δm(μ)(v)` at most one.
pub fn check_class_c(u: &BuiltinFunctional, dim: usize, seed: u64) -> Result<f64> {
    let declared = u.lipschitz_d1().ok_or_else(|| Error::InvalidExperiment(format!("{} has no finite Lipschitz constant", u.name())))?;
    let mut rng = stream(seed, &[tag::SWEEP, purpose::AUX]);
    let atoms: Vec<f64> = (0..8 * dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mu = EmpiricalMeasure::uniform(dim, atoms)?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..2000)
        .map(|k| {
            let scale = 10f64.powi(k % 4 - 2);
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
            (x, y)
        })
        .collect();
    let sampled = sampled_lipschitz_d1(u, &mu, &pairs);
    if declared > 1.0 || sampled > 1.0 + 1e-9 {
        return Err(Error::InvalidExperiment(format!(
            "{} is outside the unit-Lipschitz class (declared {declared}, sampled {sampled})",
            u.name()
        )));
    }
    Ok(sampled)
}

// ---------------------------------------------------------------------------
// Rate sweep

/// How `u(μ_T)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Density quadrature, cross-checked by Monte Carlo.
    Both,
    Density,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    /// Limit-law draws of the Monte-Carlo reference.
    pub reference_samples: usize,
    pub reference: ReferenceMode,
    pub grid: GridParams,
    pub common_random_numbers: bool,
    pub trunc_at_n: bool,
    /// Grid steps of the exact solver (Gaussian parts only; jumps are exact).
    pub micro_steps: usize,
    pub bootstrap_resamples: usize,
    /// Points with error / noise below this are dropped from the fits.
    pub min_signal_to_noise: f64,
    /// Slack on the one-sided slope tests.
    pub slope_slack: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![16, 32, 64, 128, 256, 512, 1024],
            replications: 2000,
            reference_samples: 2_000_000,
            reference: ReferenceMode::Both,
            grid: GridParams::default(),
            common_random_numbers: true,
            trunc_at_n: true,
            micro_steps: 2,
            bootstrap_resamples: 1000,
            min_signal_to_noise: 3.0,
            slope_slack: 0.15,
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be positive and strictly increasing".into()));
        }
        if self.replications < 2 || self.micro_steps == 0 || self.bootstrap_resamples == 0 {
            return Err(Error::Config("need replications >= 2, micro_steps >= 1 and bootstrap resamples".into()));
        }
        Ok(())
    }
}

/// Reference value `u(μ_T)` from the backends that were run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub density: Option<f64>,
    pub density_tolerance: Option<f64>,
    pub monte_carlo: Option<f64>,
    pub monte_carlo_std_error: Option<f64>,
    /// Value used by the sweep.
    pub value: f64,
    /// Error allowance of `value`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    /// `|mean u(μ̄^N_T) - u(μ_T)|`.
    pub weak: f64,
    pub weak_std_error: f64,
    pub weak_lo: f64,
    pub weak_hi: f64,
    /// `mean |u(μ̄^N_T) - u(μ_T)|`.
    pub strong: f64,
    pub strong_std_error: f64,
    pub strong_lo: f64,
    pub strong_hi: f64,
    pub weak_signal_to_noise: f64,
    pub weak_in_fit: bool,
    pub strong_in_fit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_std_error: f64,
    pub intercept: f64,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl SlopeFit {
    fn from_line(fit: LineFit, points: usize) -> Self {
        let half = 1.96 * fit.slope_se;
        Self { slope: fit.slope, slope_std_error: fit.slope_se, intercept: fit.intercept, lo: fit.slope - half, hi: fit.slope + half, points }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub alpha: f64,
    pub replications: usize,
    pub reference: ReferenceSummary,
    pub rows: Vec<RateRow>,
    pub weak_fit: Option<SlopeFit>,
    pub strong_fit: Option<SlopeFit>,
    /// `-(α - 1)`.
    pub weak_theory: f64,
    /// `-(1 - 1/α)`; the logarithmic factor is absorbed in the slack.
    pub strong_theory: f64,
    pub slope_slack: f64,
    /// Weak error below strong error plus three CI half-widths at every `N`.
    pub jensen_consistent: bool,
    pub weak_pass: bool,
    pub strong_pass: bool,
    pub pass: bool,
}

/// `u(μ_T)` from the density backend and/or limit-law samples.
pub fn reference_value(model: &OUModel, u: &BuiltinFunctional, cfg: &SweepConfig, seed: u64) -> Result<ReferenceSummary> {
    let t = model.horizon;
    let trunc = model.noise.trunc();
    let want_density = matches!(cfg.reference, ReferenceMode::Both | ReferenceMode::Density);
    let want_mc = matches!(cfg.reference, ReferenceMode::Both | ReferenceMode::MonteCarlo);
    let point = match &model.mu0 {
        InitialLaw::Point { x } => Some(x.clone()),
        _ => None,
    };
    let density_ok = model.dim() == 1 && matches!(u, BuiltinFunctional::Linear { .. }) && point.is_some();
    if want_density && !density_ok && cfg.reference == ReferenceMode::Density {
        return invalid("the density reference needs d = 1, a linear functional and a point initial law");
    }
    let density = if want_density && density_ok {
        let sg = Semigroup::new(model, trunc, u.clone(), Backend::Density { grid: cfg.grid })?;
        let mu = EmpiricalMeasure::dirac(point.as_deref().expect("point law"))?;
        Some(sg.phi(t, &mu)?)
    } else {
        None
    };
    let mc = if want_mc || density.is_none() {
        let m = cfg.reference_samples.max(2);
        let law = crate::mckv_sim::sample_limit_law(model, trunc, m, derive_seed(seed, &[tag::SWEEP, purpose::REFERENCE]))?;
        let values: Vec<f64> = law.atoms().chunks(law.dim()).map(|x| u.flat_d1(&law, x)).collect();
        Some((u.eval(&law), stats::std_error(&values)))
    } else {
        None
    };
    if let (Some(d), Some((v, se))) = (&density, &mc) {
        let allowed = 4.0 * se + d.tolerance;
        if (d.value - v).abs() > allowed {
            return Err(Error::ReferenceInconsistency(format!(
                "density reference {} and Monte-Carlo reference {v} differ by more than {allowed}",
                d.value
            )));
        }
    }
    let (value, tolerance) = match (&density, &mc) {
        (Some(d), _) => (d.value, d.tolerance),
        (None, Some((v, se))) => (*v, 2.0 * se),
        (None, None) => unreachable!("at least one backend runs"),
    };
    Ok(ReferenceSummary {
        density: density.map(|d| d.value),
        density_tolerance: density.map(|d| d.tolerance),
        monte_carlo: mc.map(|m| m.0),
        monte_carlo_std_error: mc.map(|m| m.1),
        value,
        tolerance,
    })
}

/// `u(μ̄^N_T)` for each replication.
pub fn sweep_values(model: &OUModel, u: &BuiltinFunctional, cfg: &SweepConfig, n: usize, seed: u64) -> Result<Vec<f64>> {
    let root = if cfg.common_random_numbers { derive_seed(seed, &[tag::SWEEP]) } else { derive_seed(seed, &[tag::SWEEP, n as u64]) };
    let trunc = if cfg.trunc_at_n { TruncMode::ParticleCount } else { TruncMode::Spec };
    (0..cfg.replications as u64)
        .map(|rep| {
            let opts = SimOptions { micro_steps: cfg.micro_steps, trunc, record: false, replication: rep };
            let path = simulate_exact(model, n, &opts, root)?;
            Ok(u.eval(&path.terminal_measure()))
        })
        .collect()
}

fn fit_errors(rows: &[RateRow], pick: impl Fn(&RateRow) -> Option<(f64, f64)>) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| pick(r).map(|(e, se)| ((r.n as f64).ln(), e.ln(), (e / se.max(1e-300)).powi(2))))
        .collect();
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
    stats::weighted_line_fit(&x, &y, &w).map(|f| SlopeFit::from_line(f, pts.len()))
}

/// Weak and strong propagation-of-chaos errors over the `N` grid.
pub fn run_sweep(config: &ExperimentConfig, seed: u64) -> Result<RateReport> {
    config.validate()?;
    let model = &config.model;
    model.check_chaos_regime()?;
    let cfg = &config.sweep;
    let u = &config.functional;
    let alpha = model.noise.alpha();
    let reference = reference_value(model, u, cfg, seed)?;
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let values = sweep_values(model, u, cfg, n, seed)?;
        let weak_signed = stats::mean(&values) - reference.value;
        let weak_se = stats::std_error(&values);
        let half = 1.96 * weak_se + reference.tolerance;
        let weak = weak_signed.abs();
        let dev: Vec<f64> = values.iter().map(|v| (v - reference.value).abs()).collect();
        let strong = stats::mean(&dev);
        let strong_se = stats::std_error(&dev);
        let mut rng = stream(seed, &[tag::SWEEP, n as u64, purpose::BOOTSTRAP]);
        let ci = stats::bootstrap_mean(&dev, cfg.bootstrap_resamples, 0.95, &mut rng);
        let snr = if weak_se > 0.0 { weak / weak_se } else { f64::MAX };
        rows.push(RateRow {
            n,
            weak,
            weak_std_error: weak_se,
            weak_lo: (weak - half).max(0.0),
            weak_hi: weak + half,
            strong,
            strong_std_error: strong_se,
            strong_lo: (ci.lo - reference.tolerance).max(0.0),
            strong_hi: ci.hi + reference.tolerance,
            weak_signal_to_noise: snr,
            weak_in_fit: weak > 0.0 && snr >= cfg.min_signal_to_noise,
            strong_in_fit: strong > 0.0,
        });
    }
    let weak_fit = fit_errors(&rows, |r| r.weak_in_fit.then_some((r.weak, r.weak_std_error)));
    let strong_fit = fit_errors(&rows, |r| r.strong_in_fit.then_some((r.strong, r.strong_std_error)));
    let weak_theory = -(alpha - 1.0);
    let strong_theory = -(1.0 - 1.0 / alpha);
    let jensen_consistent = rows.iter().all(|r| r.weak <= r.strong + 3.0 * ((r.weak_hi - r.weak) + (r.strong_hi - r.strong)));
    let weak_pass = weak_fit.is_some_and(|f| f.points >= 2 && f.slope <= weak_theory + cfg.slope_slack);
    let strong_pass = strong_fit.is_some_and(|f| f.points >= 2 && f.slope <= strong_theory + cfg.slope_slack);
    Ok(RateReport {
        alpha,
        replications: cfg.replications,
        reference,
        rows,
        weak_fit,
        strong_fit,
        weak_theory,
        strong_theory,
        slope_slack: cfg.slope_slack,
        jensen_consistent,
        weak_pass,
        strong_pass,
        pass: weak_pass && strong_pass && jensen_consistent,
    })
}

// ---------------------------------------------------------------------------
// Initial data and truncation rates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialRateConfig {
    pub law: InitialLaw,
    /// Highest finite moment order of the law; absent when all exist.
    #[serde(default)]
    pub moment_order: Option<f64>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    #[serde(default = "default_rate_slack")]
    pub slack: f64,
}

fn default_rate_slack() -> f64 {
    0.1
}

impl Default for InitialRateConfig {
    fn default() -> Self {
        Self {
            law: InitialLaw::Uniform { lo: vec![0.0], hi: vec![1.0] },
            moment_order: None,
            n_grid: vec![32, 64, 128, 256, 512, 1024, 2048, 4096],
            replications: 500,
            slack: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialRate {
    pub n: Vec<usize>,
    pub mean_w1: Vec<f64>,
    pub std_error: Vec<f64>,
    pub fit: Option<SlopeFit>,
    /// `-min(1/2, 1 - 1/q)`.
    pub expected: f64,
    pub pass: bool,
}

/// `E W₁(μ̄^N₀, μ₀)` over the `N` grid and its log-log slope (`d = 1`).
pub fn initial_data_rate(cfg: &InitialRateConfig, seed: u64) -> Result<InitialRate> {
    if cfg.law.dim() != 1 {
        return invalid("initial-data rates are computed in one dimension");
    }
    cfg.law.validate()?;
    if cfg.replications < 2 || cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) || cfg.n_grid[0] == 0 {
        return invalid("need two replications and a strictly increasing positive N grid");
    }
    let expected = match cfg.moment_order {
        Some(q) if q <= 1.0 => return invalid("moment order must exceed one"),
        Some(q) => -(0.5f64).min(1.0 - 1.0 / q),
        None => -0.5,
    };
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for &n in &cfg.n_grid {
        let mut w = Vec::with_capacity(cfg.replications);
        for rep in 0..cfg.replications as u64 {
            let mut rng = stream(seed, &[tag::INITIAL_RATE, n as u64, rep, purpose::INITIAL]);
            let mut xs = vec![0.0; n];
            for x in xs.iter_mut() {
                let mut v = [0.0];
                cfg.law.sample(&mut rng, &mut v);
                *x = v[0];
            }
            w.push(cfg.law.w1_to_sample(&xs)?);
        }
        means.push(stats::mean(&w));
        ses.push(stats::std_error(&w));
    }
    let fit = if means.iter().all(|&m| m > 0.0) {
        let x: Vec<f64> = cfg.n_grid.iter().map(|&n| (n as f64).ln()).collect();
        let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
        stats::weighted_line_fit(&x, &y, &vec![1.0; x.len()]).map(|f| SlopeFit::from_line(f, x.len()))
    } else {
        None
    };
    let all_zero = means.iter().all(|&m| m == 0.0);
    let pass = all_zero || fit.is_some_and(|f| (f.slope - expected).abs() <= cfg.slack);
    Ok(InitialRate { n: cfg.n_grid.clone(), mean_w1: means, std_error: ses, fit, expected, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    /// Truncation levels; the particle count equals the level.
    pub levels: Vec<usize>,
    pub replications: usize,
    pub slack: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self { levels: vec![8, 16, 32, 64, 128, 256, 512], replications: 400, slack: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRate {
    pub gaps: Vec<GapEstimate>,
    pub fit: Option<SlopeFit>,
    /// `-(α - 1)`.
    pub expected: f64,
    pub pass: bool,
}

/// `E W₁(μ̄^N, μ̄^N_trunc)` against the truncation level.
pub fn truncation_rate(model: &OUModel, cfg: &TruncationConfig, seed: u64) -> Result<TruncationRate> {
    let gaps = truncation_gap(model, &cfg.levels, cfg.replications, derive_seed(seed, &[tag::TRUNCATION]))?;
    let x: Vec<f64> = gaps.iter().map(|g| g.level).collect();
    let y: Vec<f64> = gaps.iter().map(|g| g.mean).collect();
    let fit = if y.iter().all(|&v| v > 0.0) { stats::loglog_fit(&x, &y).map(|f| SlopeFit::from_line(f, x.len())) } else { None };
    let expected = -(model.noise.alpha() - 1.0);
    let pass = fit.is_some_and(|f| f.slope <= expected + cfg.slack);
    Ok(TruncationRate { gaps, fit, expected, pass })
}

// ---------------------------------------------------------------------------
// Reports

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// CSV with an explicit header, so empty tables still carry one.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))).collect()
}

const RATE_HEADER: [&str; 12] = [
    "n",
    "weak",
    "weak_std_error",
    "weak_lo",
    "weak_hi",
    "strong",
    "strong_std_error",
    "strong_lo",
    "strong_hi",
    "weak_signal_to_noise",
    "weak_in_fit",
    "strong_in_fit",
];

/// Output files of [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub dat: PathBuf,
}

/// Write `<stem>.csv` (per-`N` table), `<stem>.json` (full report) and
/// `<stem>.dat` (whitespace table for gnuplot) into `dir`.
pub fn emit_report(report: &RateReport, dir: &Path, stem: &str) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = ReportFiles {
        csv: dir.join(format!("{stem}.csv")),
        json: dir.join(format!("{stem}.json")),
        dat: dir.join(format!("{stem}.dat")),
    };
    write_csv(&files.csv, &RATE_HEADER, &report.rows)?;
    write_json(&files.json, report)?;
    let mut dat = String::from("# n weak weak_lo weak_hi strong strong_lo strong_hi\n");
    for r in &report.rows {
        dat.push_str(&format!("{} {} {} {} {} {} {}\n", r.n, r.weak, r.weak_lo, r.weak_hi, r.strong, r.strong_lo, r.strong_hi));
    }
    let mut f = fs::File::create(&files.dat).map_err(io_err(&files.dat))?;
    f.write_all(dat.as_bytes()).map_err(io_err(&files.dat))?;
    Ok(files)
}

/// Inverse of [`emit_report`].
pub fn read_report(files: &ReportFiles) -> Result<RateReport> {
    let report: RateReport = read_json(&files.json)?;
    let rows: Vec<RateRow> = read_csv(&files.csv)?;
    if rows != report.rows {
        return Err(Error::Config(format!("{} and {} disagree", files.csv.display(), files.json.display())));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Command blocks

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exact,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub n: usize,
    pub replications: usize,
    pub solver: Solver,
    pub micro_steps: usize,
    pub trunc_at_n: bool,
    /// Write every grid state of replication 0.
    pub record_first: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n: 200, replications: 10_000, solver: Solver::Exact, micro_steps: 2, trunc_at_n: false, record_first: false }
    }
}

/// Particle-average statistics against `e^{T(A+A')} m₀` plus the compensator
/// drift of a truncated driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub n: usize,
    pub replications: usize,
    pub expected_mean: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Largest `|mean - expected| / std_error` over coordinates.
    pub max_z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AverageRow {
    replication: u64,
    coordinate: usize,
    average: f64,
}

/// Expected particle average at the horizon: `e^{T(A+A')} m₀` plus the
/// response to the compensator drift when the driver is truncated.
pub fn expected_average(model: &OUModel, level: f64) -> Result<Vec<f64>> {
    let d = model.dim();
    let t = model.horizon;
    let m0 = model.mu0.mean()?;
    let p = model.flow.propagators(t)?;
    let c = model.compensator(level)?;
    let j = crate::mckv_sim::exp_integral(&model.flow.a_total(), t)? * &model.flow.b;
    Ok((0..d)
        .map(|r| (0..d).map(|k| p.exp_total[(r, k)] * m0[k] + j[(r, k)] * c[k]).sum())
        .collect())
}

pub fn run_simulate(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<SimulateSummary> {
    let model = &config.model;
    let cfg = &config.simulate;
    if cfg.replications < 2 {
        return invalid("need at least two replications");
    }
    let d = model.dim();
    let root = derive_seed(seed, &[tag::SIMULATE]);
    let trunc = if cfg.trunc_at_n { TruncMode::ParticleCount } else { TruncMode::Spec };
    let level = trunc.level(&model.noise, cfg.n);
    let mut rows = Vec::with_capacity(cfg.replications * d);
    let mut per_coord = vec![Vec::with_capacity(cfg.replications); d];
    for rep in 0..cfg.replications as u64 {
        let opts = SimOptions { micro_steps: cfg.micro_steps, trunc, record: cfg.record_first && rep == 0, replication: rep };
        let path = match cfg.solver {
            Solver::Exact => simulate_exact(model, cfg.n, &opts, root)?,
            Solver::Euler => simulate_euler(model, cfg.n, &opts, root)?,
        };
        if opts.record {
            path.write_snapshots_csv(&config.file(out, "simulate_paths.csv"))?;
        }
        for (k, v) in path.empirical_mean().into_iter().enumerate() {
            per_coord[k].push(v);
            rows.push(AverageRow { replication: rep, coordinate: k, average: v });
        }
    }
    write_csv(&config.file(out, "simulate.csv"), &["replication", "coordinate", "average"], &rows)?;
    let expected = expected_average(model, level)?;
    let mean: Vec<f64> = per_coord.iter().map(|v| stats::mean(v)).collect();
    let se: Vec<f64> = per_coord.iter().map(|v| stats::std_error(v)).collect();
    let max_z = (0..d).map(|k| (mean[k] - expected[k]).abs() / se[k].max(1e-300)).fold(0.0, f64::max);
    let summary = SimulateSummary { n: cfg.n, replications: cfg.replications, expected_mean: expected, mean, std_error: se, max_z, pass: max_z <= 3.0 };
    write_json(&config.file(out, "simulate.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// Model for this command; the top-level model when absent.
    pub model: Option<OUModel>,
    pub times: Vec<f64>,
    pub grid: GridParams,
    /// `(γ, derivative order)` pairs for the moment-exponent fits.
    pub moments: Vec<(f64, usize)>,
    pub moment_times: Vec<f64>,
    pub mass_tolerance: f64,
    pub similarity_tolerance: f64,
    pub slope_tolerance: f64,
    /// Keep every `stride`-th grid point in the CSV files.
    pub csv_stride: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            model: Some(pure_stable_model()),
            times: vec![0.25, 1.0, 4.0],
            grid: GridParams::default(),
            moments: vec![(1.0, 0), (0.0, 1), (0.0, 2)],
            moment_times: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            mass_tolerance: 1e-6,
            similarity_tolerance: 1e-4,
            slope_tolerance: 0.05,
            csv_stride: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTime {
    pub t: f64,
    pub extent: f64,
    pub points: usize,
    pub mass: f64,
    pub min_value: f64,
    /// Sup-norm distance to `t^{-1/α} p(1, t^{-1/α} x)` (self-similar models).
    pub similarity_deviation: Option<f64>,
    /// Sup-norm of `p(t, x) - p(t, -x)` (self-similar models).
    pub symmetry_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub self_similar: bool,
    pub times: Vec<DensityTime>,
    pub moments: Vec<MomentCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DensityRow {
    x: f64,
    p: f64,
    dp: f64,
    d2p: f64,
}

pub fn run_density(config: &ExperimentConfig, out: &Path) -> Result<DensitySummary> {
    let cfg = &config.density;
    let model = cfg.model.as_ref().unwrap_or(&config.model);
    let trunc = model.noise.trunc();
    let alpha = model.noise.alpha();
    let self_similar = model.flow.as_scalar().is_some_and(|(a, ap, _)| a == 0.0 && ap == 0.0) && trunc.is_infinite() && model.noise.is_symmetric();
    let horizon = cfg.times.iter().chain(&cfg.moment_times).fold(model.horizon, |m, &t| m.max(t));
    let mut model = model.clone();
    model.horizon = horizon;
    let base = if self_similar { Some(invert_density(&model, trunc, 1.0, &cfg.grid)?) } else { None };
    let mut times = Vec::new();
    let mut pass = true;
    for (k, &t) in cfg.times.iter().enumerate() {
        let grid = invert_density(&model, trunc, t, &cfg.grid)?;
        let dev = base.as_ref().map(|b| {
            let s = t.powf(-1.0 / alpha);
            (0..grid.len()).map(|j| (grid.values[j] - s * b.eval(s * grid.x(j), 0)).abs()).fold(0.0, f64::max)
        });
        // The grid is periodic with `x(n - j) = -x(j)`.
        let n = grid.len();
        let asym = self_similar.then(|| (1..n).map(|j| (grid.values[j] - grid.values[n - j]).abs()).fold(0.0, f64::max));
        pass &= asym.is_none_or(|d| d <= cfg.similarity_tolerance);
        pass &= (grid.mass() - 1.0).abs() <= cfg.mass_tolerance;
        pass &= dev.is_none_or(|d| d <= cfg.similarity_tolerance);
        let rows: Vec<DensityRow> = (0..grid.len())
            .step_by(cfg.csv_stride.max(1))
            .map(|j| DensityRow { x: grid.x(j), p: grid.values[j], dp: grid.d1[j], d2p: grid.d2[j] })
            .collect();
        write_csv(&config.file(out, &format!("density_{k}.csv")), &["x", "p", "dp", "d2p"], &rows)?;
        times.push(DensityTime {
            t,
            extent: grid.extent,
            points: grid.len(),
            mass: grid.mass(),
            min_value: grid.min_value(),
            similarity_deviation: dev,
            symmetry_deviation: asym,
        });
    }
    let mut moments = Vec::new();
    for &(gamma, order) in &cfg.moments {
        let check = moment_estimate_check(&model, trunc, &cfg.moment_times, gamma, order, &cfg.grid)?;
        // Outside the self-similar case the bound only constrains small times,
        // so only the boundedness of `value / t^expected` is checked.
        pass &= if self_similar {
            (check.slope - check.expected).abs() <= cfg.slope_tolerance
        } else {
            check.ratio_max.is_finite() && check.ratio_min > 0.0
        };
        moments.push(check);
    }
    let summary = DensitySummary { self_similar, times, moments, pass };
    write_json(&config.file(out, "density.json"), &summary)?;
    Ok(summary)
}

/// Itô experiment used when the config has no `[ito]` block: sub-critical
/// SmoothedPower functional, stable driver truncated at 20.
pub fn default_ito_experiment() -> ItoExperiment {
    ItoExperiment {
        noise: StableSpec::symmetric_1d(1.5, 0.05, 20.0).expect("valid driver"),
        drift: Coefficient::Constant { value: 0.3 },
        sigma: Coefficient::Constant { value: 1.0 },
        mu0: InitialLaw::Uniform { lo: vec![-1.0], hi: vec![1.0] },
        functional: BuiltinFunctional::SmoothedPower { beta: 1.2, eps: 0.5 },
        horizon: 1.0,
        paths: 100_000,
        nodes: 64,
        table_spacing: 0.0025,
        quad: GeneratorQuadrature::default(),
        outer_radius: 1e3,
        correlated: false,
    }
}

pub fn run_ito(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<ItoReport> {
    let exp = config.ito.clone().unwrap_or_else(default_ito_experiment);
    let report = ito_residual(&exp, derive_seed(seed, &[tag::ITO]))?;
    write_json(&config.file(out, "ito.json"), &report)?;
    Ok(report)
}

/// Weighted atoms of a one-dimensional measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub atoms: Vec<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl MeasureSpec {
    pub fn measure(&self) -> Result<EmpiricalMeasure> {
        match &self.weights {
            Some(w) => EmpiricalMeasure::weighted(1, self.atoms.clone(), w.clone()),
            None => EmpiricalMeasure::uniform(1, self.atoms.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    pub trunc: f64,
    pub times: Vec<f64>,
    pub measures: Vec<MeasureSpec>,
    pub grid: GridParams,
    pub options: PdeOptions,
    pub constancy_points: usize,
    pub constancy_samples: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        let m = |atoms: &[f64], weights: Option<&[f64]>| MeasureSpec { atoms: atoms.to_vec(), weights: weights.map(|w| w.to_vec()) };
        Self {
            trunc: 5.0,
            times: vec![0.2, 0.35, 0.5, 0.65, 0.8],
            measures: vec![
                m(&[0.0], None),
                m(&[-1.5, 0.4, 1.1], None),
                m(&[-0.7, 0.2, 0.9, 1.8, -1.9], Some(&[1.0, 0.6, 1.4, 0.8, 1.2])),
                m(&[0.5, 0.8], Some(&[0.3, 0.7])),
            ],
            grid: GridParams::default(),
            options: PdeOptions::default(),
            constancy_points: 16,
            constancy_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSummary {
    pub trunc: f64,
    pub max_residual: f64,
    pub max_tolerance: f64,
    pub residual_pass: bool,
    pub constancy: Constancy,
    pub pass: bool,
}

pub fn run_pde(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<(PdeReport, PdeSummary)> {
    let cfg = &config.pde;
    let sg = Semigroup::new(&config.model, cfg.trunc, config.functional.clone(), Backend::Density { grid: cfg.grid })?;
    let measures = cfg.measures.iter().map(MeasureSpec::measure).collect::<Result<Vec<_>>>()?;
    let report = pde_residual(&sg, &cfg.times, &measures, &cfg.options)?;
    write_csv(
        &config.file(out, "pde.csv"),
        &["t", "measure", "phi", "time_derivative", "generator", "residual", "tolerance", "pass"],
        &report.points,
    )?;
    let mu = measures.first().ok_or_else(|| Error::Config("pde needs at least one measure".into()))?;
    let constancy = flow_constancy(&sg, mu, cfg.constancy_points, cfg.constancy_samples, derive_seed(seed, &[tag::PDE]))?;
    let summary = PdeSummary {
        trunc: cfg.trunc,
        max_residual: report.max_residual,
        max_tolerance: report.max_tolerance,
        residual_pass: report.pass,
        pass: report.pass && constancy.pass,
        constancy,
    };
    write_json(&config.file(out, "pde.json"), &summary)?;
    Ok((report, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapConfig {
    pub trunc: f64,
    pub n_grid: Vec<usize>,
    pub functional: BuiltinFunctional,
    /// Law of the particle positions.
    pub atoms: InitialLaw,
    pub quad: GeneratorQuadrature,
    pub slope_tolerance: f64,
    pub oracle_tolerance: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            trunc: 5.0,
            n_grid: vec![8, 16, 32, 64, 128, 256],
            functional: BuiltinFunctional::Quadratic { psi: Profile::Sqrt1p { scale: 1.0 } },
            atoms: InitialLaw::Uniform { lo: vec![-1.0], hi: vec![1.0] },
            quad: GeneratorQuadrature::default(),
            slope_tolerance: 0.2,
            oracle_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub gaps: Vec<GeneratorGap>,
    pub fit: Option<SlopeFit>,
    pub single: GeneratorGap,
    pub single_oracle: f64,
    pub oracle_pass: bool,
    pub slope_pass: bool,
    pub pass: bool,
}

/// One-particle gap by brute-force quadrature in `log r`:
/// `½ ∫ [δ²u(v+h, v+h) - 2δ²u(v+h, v) + δ²u(v, v)] dν` with `h = Bθr`,
/// divided by the particle count.
pub fn single_particle_gap_oracle(model: &OUModel, trunc: f64, u: &dyn Functional, x: &EmpiricalMeasure) -> Result<f64> {
    let (_, _, b) = model.flow.as_scalar().ok_or_else(|| Error::InvalidArgument("oracle is one-dimensional".into()))?;
    let alpha = model.noise.alpha();
    let v = x.atom(0)[0];
    let d2 = |p: f64, q: f64| u.flat_d2(x, &[p], &[q]).ok_or_else(|| Error::UnsupportedFunctional(u.name()));
    d2(v, v)?;
    let mut total = 0.0;
    for (theta, w) in model.noise.spectral().atoms() {
        let bt = b * theta[0];
        let f = |s: f64| {
            let h = bt * s.exp();
            let val = d2(v + h, v + h).unwrap_or(f64::NAN) - 2.0 * d2(v + h, v).unwrap_or(f64::NAN) + d2(v, v).unwrap_or(f64::NAN);
            0.5 * val * (-alpha * s).exp()
        };
        let top = trunc.ln();
        let low = top.min(0.0);
        total += w * (quad::adaptive(f, -60.0, low, 1e-15, 1e-13) + quad::adaptive(f, low, top, 1e-15, 1e-13));
    }
    Ok(total / x.len() as f64)
}

fn sample_atoms(law: &InitialLaw, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    let mut rng = stream(seed, &[tag::GAP, n as u64, purpose::INITIAL]);
    let d = law.dim();
    let mut atoms = vec![0.0; n * d];
    for row in atoms.chunks_mut(d) {
        law.sample(&mut rng, row);
    }
    EmpiricalMeasure::uniform(d, atoms)
}

pub fn run_generator_gap(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<GapSummary> {
    let cfg = &config.generator_gap;
    let model = &config.model;
    let u = &cfg.functional;
    u.validate(model.dim())?;
    let gaps = cfg
        .n_grid
        .iter()
        .map(|&n| generator_gap(model, cfg.trunc, u, &sample_atoms(&cfg.atoms, n, seed)?, &cfg.quad))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = gaps.iter().map(|g| g.n as f64).collect();
    let y: Vec<f64> = gaps.iter().map(|g| g.gap.abs()).collect();
    let fit = if y.iter().all(|&v| v > 0.0) { stats::loglog_fit(&x, &y).map(|f| SlopeFit::from_line(f, x.len())) } else { None };
    let one = sample_atoms(&cfg.atoms, 1, seed)?;
    let single = generator_gap(model, cfg.trunc, u, &one, &cfg.quad)?;
    let single_oracle = single_particle_gap_oracle(model, cfg.trunc, u, &one)?;
    let oracle_pass = (single.gap - single_oracle).abs() <= cfg.oracle_tolerance;
    let slope_pass = fit.is_some_and(|f| (f.slope + 1.0).abs() <= cfg.slope_tolerance);
    write_csv(
        &config.file(out, "generator_gap.csv"),
        &["n", "particle", "particle_tolerance", "measure", "measure_tolerance", "gap", "tolerance"],
        &gaps.iter().map(|g| (g.n, g.particle.value, g.particle.tolerance, g.measure.value, g.measure.tolerance, g.gap, g.tolerance)).collect::<Vec<_>>(),
    )?;
    let summary = GapSummary { gaps, fit, single, single_oracle, oracle_pass, slope_pass, pass: oracle_pass && slope_pass };
    write_json(&config.file(out, "generator_gap.json"), &summary)?;
    Ok(summary)
}

/// Everything `rate-fit` produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFitSummary {
    pub sweep: RateReport,
    pub initial_rate: Option<InitialRate>,
    pub truncation: Option<TruncationRate>,
    pub pass: bool,
}

pub fn run_rate_fit(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<RateFitSummary> {
    let sweep = run_sweep(config, seed)?;
    let stem = format!("{}rates", config.output_prefix);
    emit_report(&sweep, out, &stem)?;
    let initial_rate = config.initial_rate.as_ref().map(|c| initial_data_rate(c, seed)).transpose()?;
    let truncation = config.truncation.as_ref().map(|c| truncation_rate(&config.model, c, seed)).transpose()?;
    let pass = sweep.pass && initial_rate.as_ref().is_none_or(|r| r.pass) && truncation.as_ref().is_none_or(|r| r.pass);
    let summary = RateFitSummary { sweep, initial_rate, truncation, pass };
    write_json(&config.file(out, "rate_fit.json"), &summary)?;
    Ok(summary)
}

/// CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    RateFit,
    Density,
    ItoCheck,
    PdeResidual,
    GeneratorGap,
}

/// Run one command, writing its outputs into `out`; returns the pass flag.
pub fn run_command(cmd: Command, config: &ExperimentConfig, seed: u64, out: &Path) -> Result<bool> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    Ok(match cmd {
        Command::Simulate => run_simulate(config, seed, out)?.pass,
        Command::RateFit => run_rate_fit(config, seed, out)?.pass,
        Command::Density => run_density(config, out)?.pass,
        Command::ItoCheck => run_ito(config, seed, out)?.pass,
        Command::PdeResidual => run_pde(config, seed, out)?.1.pass,
        Command::GeneratorGap => run_generator_gap(config, seed, out)?.pass,
    })
}
