//! Simulation of the mean-field stable OU equation
//! `dX = (A X + A' E X) dt + B dZ` and of its N-particle system, where `E X`
//! is replaced by the empirical mean.
//!
//! The exact solver uses linearity. Writing `S` for the empirical mean,
//!
//! ```text
//! X^i_{t+h} = e^{hA} X^i_t + K_h S_t + ∫ e^{(t+h-r)A} B dZ^i_r + (1/N) Σ_j ∫ K_{t+h-r} B dZ^j_r
//! ```
//!
//! over one step. Jumps are transported by closed-form propagators at their
//! own times, and the Brownian surrogate of the small jumps enters through the
//! joint Gaussian law of `(ΔW, ∫e^{uA}B dW, ∫K_u B dW)`, so the result is exact
//! in law for any micro-grid. The jump-adapted Euler scheme shares the jump
//! streams and, when the grids coincide, the Brownian increments.
//!
//! Every particle owns three random streams derived from
//! `(seed, replication, particle, purpose)`, so the first `N` particles of a
//! `2N` system see the same initial values, jumps and Gaussian draws as the
//! `N` system (common random numbers). Jumps are always drawn on
//! `[eps, ∞)` and then filtered below the truncation level, which couples
//! runs at different levels.

use crate::error::{invalid, Error, Result};
use crate::linflow::{MatrixFlow, DEFAULT_DET_TOL};
use crate::measures::{w1_1d, w1_exact, EmpiricalMeasure};
use crate::quad;
use crate::rng::{purpose, stream};
use crate::stable_noise::{JumpEventStream, StableSpec};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::gamma::gamma;
use std::io::Write;
use std::path::Path;

/// Initial-law families with closed-form moments and quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Point { x: Vec<f64> },
    /// Product of uniforms on `[lo_k, hi_k]`.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    /// Independent coordinates `N(mean_k, sd^2)`.
    Gaussian { mean: Vec<f64>, sd: f64 },
    /// Independent symmetric Lomax coordinates:
    /// `P(|X_k| > x) = (scale / (scale + x))^index`.
    SymmetricPareto {
        scale: f64,
        index: f64,
        #[serde(default = "one")]
        dim: usize,
    },
}

fn one() -> usize {
    1
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { x } => x.len(),
            InitialLaw::Uniform { lo, .. } => lo.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::SymmetricPareto { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            InitialLaw::Point { x } if x.is_empty() || !finite(x) => invalid("point mass needs a finite location"),
            InitialLaw::Uniform { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() || !finite(lo) || !finite(hi) {
                    return invalid("uniform bounds must be finite vectors of equal length");
                }
                if lo.iter().zip(hi).any(|(a, b)| a >= b) {
                    return invalid("uniform needs lo < hi in every coordinate");
                }
                Ok(())
            }
            InitialLaw::Gaussian { mean, sd } if mean.is_empty() || !finite(mean) || !(*sd > 0.0 && sd.is_finite()) => {
                invalid("gaussian needs a finite mean and positive sd")
            }
            InitialLaw::SymmetricPareto { scale, index, dim } if !(*scale > 0.0 && *index > 0.0 && *dim > 0) => {
                invalid("pareto needs positive scale, index and dim")
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialLaw::Point { x } => out.copy_from_slice(x),
            InitialLaw::Uniform { lo, hi } => {
                for ((o, a), b) in out.iter_mut().zip(lo).zip(hi) {
                    *o = a + (b - a) * rng.gen::<f64>();
                }
            }
            InitialLaw::Gaussian { mean, sd } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    *o = m + sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            InitialLaw::SymmetricPareto { scale, index, .. } => {
                for o in out.iter_mut() {
                    let u: f64 = rng.gen();
                    let mag = scale * ((1.0 - u).powf(-1.0 / index) - 1.0);
                    *o = if rng.gen::<bool>() { mag } else { -mag };
                }
            }
        }
    }

    pub fn mean(&self) -> Result<Vec<f64>> {
        Ok(match self {
            InitialLaw::Point { x } => x.clone(),
            InitialLaw::Uniform { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::SymmetricPareto { index, dim, .. } => {
                if *index <= 1.0 {
                    return invalid("pareto law with index <= 1 has no mean");
                }
                vec![0.0; *dim]
            }
        })
    }

    /// True when `E|X|^beta < ∞`.
    pub fn has_moment(&self, beta: f64) -> bool {
        match self {
            InitialLaw::SymmetricPareto { index, .. } => beta < *index,
            _ => true,
        }
    }

    /// `E|X|^beta` in dimension one (no root applied).
    pub fn abs_moment_1d(&self, beta: f64) -> Result<f64> {
        if self.dim() != 1 {
            return invalid("closed-form moments are one-dimensional");
        }
        Ok(match self {
            InitialLaw::Point { x } => x[0].abs().powf(beta),
            InitialLaw::Uniform { lo, hi } => {
                let prim = |x: f64| x.signum() * x.abs().powf(beta + 1.0) / (beta + 1.0);
                (prim(hi[0]) - prim(lo[0])) / (hi[0] - lo[0])
            }
            InitialLaw::Gaussian { mean, sd } => {
                if mean[0] == 0.0 {
                    sd.powf(beta) * 2f64.powf(0.5 * beta) * gamma(0.5 * (beta + 1.0)) / std::f64::consts::PI.sqrt()
                } else {
                    let n = std_normal();
                    let f = |z: f64| (mean[0] + sd * z).abs().powf(beta) * n.pdf(z);
                    let kink = (-mean[0] / sd).clamp(-40.0, 40.0);
                    quad::adaptive(f, -40.0, kink, 1e-14, 1e-12) + quad::adaptive(f, kink, 40.0, 1e-14, 1e-12)
                }
            }
            InitialLaw::SymmetricPareto { scale, index, .. } => {
                if beta >= *index {
                    return Ok(f64::INFINITY);
                }
                scale.powf(beta) * gamma(beta + 1.0) * gamma(index - beta) / gamma(*index)
            }
        })
    }

    /// CDF in dimension one.
    pub fn cdf_1d(&self, x: f64) -> f64 {
        match self {
            InitialLaw::Point { x: p } => {
                if x >= p[0] {
                    1.0
                } else {
                    0.0
                }
            }
            InitialLaw::Uniform { lo, hi } => ((x - lo[0]) / (hi[0] - lo[0])).clamp(0.0, 1.0),
            InitialLaw::Gaussian { mean, sd } => std_normal().cdf((x - mean[0]) / sd),
            InitialLaw::SymmetricPareto { scale, index, .. } => {
                let tail = 0.5 * (scale / (scale + x.abs())).powf(*index);
                if x < 0.0 {
                    tail
                } else {
                    1.0 - tail
                }
            }
        }
    }

    /// Quantile function in dimension one.
    pub fn quantile_1d(&self, u: f64) -> f64 {
        match self {
            InitialLaw::Point { x } => x[0],
            InitialLaw::Uniform { lo, hi } => lo[0] + (hi[0] - lo[0]) * u,
            InitialLaw::Gaussian { mean, sd } => mean[0] + sd * std_normal().inverse_cdf(u),
            InitialLaw::SymmetricPareto { scale, index, .. } => {
                let side = |p: f64| scale * ((2.0 * p).powf(-1.0 / index) - 1.0);
                if u <= 0.5 {
                    -side(u)
                } else {
                    side(1.0 - u)
                }
            }
        }
    }

    /// `∫_0^u Q(p) dp` in dimension one.
    pub fn integrated_quantile_1d(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            InitialLaw::Point { x } => x[0] * u,
            InitialLaw::Uniform { lo, hi } => lo[0] * u + 0.5 * (hi[0] - lo[0]) * u * u,
            InitialLaw::Gaussian { mean, sd } => {
                let n = std_normal();
                let phi = if u <= 0.0 || u >= 1.0 { 0.0 } else { n.pdf(n.inverse_cdf(u)) };
                mean[0] * u - sd * phi
            }
            InitialLaw::SymmetricPareto { scale, index, .. } => {
                let e = 1.0 - 1.0 / index;
                let lower = |p: f64| -scale * (2.0 * p).powf(e) / (2.0 * e) + scale * p;
                if u <= 0.5 {
                    lower(u)
                } else {
                    // Symmetry: ∫_0^u Q = ∫_0^{1-u} Q since the total integral vanishes.
                    lower(1.0 - u)
                }
            }
        }
    }

    /// Exact `W_1` between the equally weighted sample `xs` and the law, d = 1.
    pub fn w1_to_sample(&self, xs: &[f64]) -> Result<f64> {
        if self.dim() != 1 {
            return invalid("exact distance to the law is one-dimensional");
        }
        if let InitialLaw::SymmetricPareto { index, .. } = self {
            if *index <= 1.0 {
                return invalid("W1 needs a finite first moment");
            }
        }
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let iq = |u: f64| self.integrated_quantile_1d(u);
        let mut total = 0.0;
        for (k, &x) in sorted.iter().enumerate() {
            let (a, b) = (k as f64 / n, (k + 1) as f64 / n);
            let m = self.cdf_1d(x).clamp(a, b);
            total += x * (m - a) - (iq(m) - iq(a)) + (iq(b) - iq(m)) - x * (b - m);
        }
        Ok(total.max(0.0))
    }
}

/// The OU model: linear flow, driving noise, initial law, horizon and the
/// moment order used by the distance estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OUModelRepr", into = "OUModelRepr")]
pub struct OUModel {
    pub flow: MatrixFlow,
    pub noise: StableSpec,
    pub mu0: InitialLaw,
    pub horizon: f64,
    pub beta: f64,
}

/// Serialized form: matrices as lists of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OUModelRepr {
    pub a: Vec<Vec<f64>>,
    pub a_prime: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub noise: StableSpec,
    pub mu0: InitialLaw,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default = "unit")]
    pub beta: f64,
}

fn unit() -> f64 {
    1.0
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{name} must be a nonempty square list of rows")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl TryFrom<OUModelRepr> for OUModel {
    type Error = Error;
    fn try_from(r: OUModelRepr) -> Result<Self> {
        let flow = MatrixFlow::new(
            rows_to_matrix("a", &r.a)?,
            rows_to_matrix("a_prime", &r.a_prime)?,
            rows_to_matrix("b", &r.b)?,
            DEFAULT_DET_TOL,
        )?;
        OUModel::new(flow, r.noise, r.mu0, r.horizon, r.beta)
    }
}

impl From<OUModel> for OUModelRepr {
    fn from(m: OUModel) -> Self {
        OUModelRepr {
            a: matrix_to_rows(&m.flow.a),
            a_prime: matrix_to_rows(&m.flow.a_prime),
            b: matrix_to_rows(&m.flow.b),
            noise: m.noise,
            mu0: m.mu0,
            horizon: m.horizon,
            beta: m.beta,
        }
    }
}

impl OUModel {
    pub fn new(flow: MatrixFlow, noise: StableSpec, mu0: InitialLaw, horizon: f64, beta: f64) -> Result<Self> {
        let d = flow.dim();
        if noise.dim() != d || mu0.dim() != d {
            return invalid(format!("flow, noise and initial law must share dimension {d}"));
        }
        mu0.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid("horizon must be positive");
        }
        if !(beta > 0.0 && beta < 2.0) {
            return invalid("moment order must lie in (0, 2)");
        }
        if !mu0.has_moment(beta) {
            return invalid(format!("initial law has no moment of order {beta}"));
        }
        Ok(Self { flow, noise, mu0, horizon, beta })
    }

    /// One-dimensional model with a symmetric driver of unit spectral weight.
    pub fn scalar(a: f64, a_prime: f64, b: f64, noise: StableSpec, mu0: InitialLaw, horizon: f64) -> Result<Self> {
        let beta = 1f64.min(0.5 * noise.alpha());
        Self::new(MatrixFlow::scalar(a, a_prime, b)?, noise, mu0, horizon, beta)
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    /// Regime required by the propagation-of-chaos experiments.
    pub fn check_chaos_regime(&self) -> Result<()> {
        let alpha = self.noise.alpha();
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::InvalidExperiment(format!("alpha must lie in (1, 2), got {alpha}")));
        }
        if !(self.beta >= 1.0 && self.beta < alpha) {
            return Err(Error::InvalidExperiment(format!("beta must lie in [1, alpha), got {}", self.beta)));
        }
        Ok(())
    }

    /// Empirical check that a pilot sample of the initial law has a finite
    /// `beta`-moment.
    pub fn pilot_moment(&self, seed: u64, size: usize) -> Result<f64> {
        let d = self.dim();
        let mut rng = stream(seed, &[u64::MAX, purpose::INITIAL]);
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..size {
            self.mu0.sample(&mut rng, &mut x);
            acc += x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(self.beta);
        }
        let m = acc / size.max(1) as f64;
        if !m.is_finite() {
            return invalid("pilot beta-moment is not finite");
        }
        Ok(m)
    }

    /// Compensator drift of the jumps on `[eps, level)`.
    pub fn compensator(&self, level: f64) -> Result<Vec<f64>> {
        self.noise.with_trunc(level.max(self.noise.eps()))?.full_compensator_drift()
    }
}

/// How the big-jump truncation level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncMode {
    /// Level equal to the particle count.
    ParticleCount,
    /// Level taken from the noise spec.
    Spec,
    Level(f64),
}

impl TruncMode {
    pub fn level(&self, spec: &StableSpec, n: usize) -> f64 {
        match *self {
            TruncMode::ParticleCount => n as f64,
            TruncMode::Spec => spec.trunc(),
            TruncMode::Level(l) => l,
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Steps of the uniform grid used for Gaussian draws and snapshots.
    pub micro_steps: usize,
    pub trunc: TruncMode,
    /// Keep every grid state.
    pub record: bool,
    pub replication: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { micro_steps: 64, trunc: TruncMode::Spec, record: false, replication: 0 }
    }
}

impl SimOptions {
    pub fn with_trunc_at_n(trunc_at_n: bool) -> Self {
        Self { trunc: if trunc_at_n { TruncMode::ParticleCount } else { TruncMode::Spec }, ..Self::default() }
    }
}

/// States of all particles at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    /// Row-major `N x d`.
    pub states: Vec<f64>,
    /// Independent recursion for the empirical mean (exact solver only).
    pub mean_recursion: Option<Vec<f64>>,
}

/// Where a path's randomness came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub root: u64,
    pub replication: u64,
}

/// Output of a particle simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlePath {
    pub dim: usize,
    pub n: usize,
    pub level: f64,
    /// Row-major `N x d` terminal states.
    pub terminal: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub seed: SeedRecord,
}

impl ParticlePath {
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.terminal[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.dim, self.terminal.clone()).expect("finite states")
    }

    pub fn empirical_mean(&self) -> Vec<f64> {
        mean_rows(&self.terminal, self.dim)
    }

    /// Largest gap between the particle average and the mean recursion over
    /// the recorded snapshots.
    pub fn mean_recursion_residual(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for s in &self.snapshots {
            let rec = s.mean_recursion.as_ref()?;
            let avg = mean_rows(&s.states, self.dim);
            let gap = avg.iter().zip(rec).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = Some(worst.map_or(gap, |w| w.max(gap)));
        }
        worst
    }

    /// CSV rows `replication,time,particle,dim,value` for every snapshot, or
    /// the terminal state when nothing was recorded.
    pub fn write_snapshots_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "replication,time,particle,dim,value").map_err(io)?;
        let terminal = [Snapshot { time: f64::NAN, states: self.terminal.clone(), mean_recursion: None }];
        let snaps: &[Snapshot] = if self.snapshots.is_empty() { &terminal } else { &self.snapshots };
        for s in snaps {
            for (i, row) in s.states.chunks(self.dim).enumerate() {
                for (k, v) in row.iter().enumerate() {
                    writeln!(w, "{},{},{},{},{}", self.seed.replication, s.time, i, k, v).map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn mean_rows(x: &[f64], d: usize) -> Vec<f64> {
    let n = x.len() / d;
    let mut m = vec![0.0; d];
    for row in x.chunks(d) {
        for (a, b) in m.iter_mut().zip(row) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= n as f64);
    m
}

/// `out += scale * M v` for a row-major `d x d` matrix.
#[inline]
fn gemv_add(m: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let d = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * d..(r + 1) * d];
        *o += scale * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

/// `∫_0^t e^{uM} du` as the upper-right block of `exp(t [[M, I], [0, 0]])`.
pub fn exp_integral(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d == 1 {
        let a = m[(0, 0)];
        let v = if (a * t).abs() < 1e-300 { t } else { (a * t).exp_m1() / a };
        return Ok(DMatrix::from_element(1, 1, v));
    }
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(m);
    block.view_mut((0, d), (d, d)).fill_with_identity();
    Ok(crate::linflow::expm(&(block * t))?.view((0, d), (d, d)).into_owned())
}

/// Lower-triangular factor of a symmetric PSD matrix; columns with a
/// vanishing pivot are zeroed so singular covariances are allowed.
pub fn semidefinite_cholesky(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let scale = (0..n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = q[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= tol {
            continue;
        }
        let piv = diag.sqrt();
        l[(j, j)] = piv;
        for i in j + 1..n {
            let mut s = q[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / piv;
        }
    }
    l
}

/// Propagators applied to a jump: `(e^{uA}Bz, K_u Bz, e^{u(A+A')}Bz)`.
struct Transport {
    d: usize,
    flow: MatrixFlow,
    b: Vec<f64>,
    scalar: Option<(f64, f64, f64)>,
}

impl Transport {
    fn new(flow: &MatrixFlow) -> Self {
        Self { d: flow.dim(), flow: flow.clone(), b: flat(&flow.b), scalar: flow.as_scalar() }
    }

    fn apply(&self, u: f64, z: &[f64], own: &mut [f64], kernel: &mut [f64], total: &mut [f64]) -> Result<()> {
        if let Some((a, ap, b)) = self.scalar {
            let ea = (u * a).exp();
            let bz = b * z[0];
            own[0] = ea * bz;
            kernel[0] = ea * (u * ap).exp_m1() * bz;
            total[0] = (u * (a + ap)).exp() * bz;
            return Ok(());
        }
        let mut bz = vec![0.0; self.d];
        gemv_add(&self.b, z, 1.0, &mut bz);
        let p = self.flow.propagators(u)?;
        for (out, m) in [(own, &p.exp_a), (kernel, &p.kernel), (total, &p.exp_total)] {
            out.iter_mut().for_each(|v| *v = 0.0);
            gemv_add(&flat(m), &bz, 1.0, out);
        }
        Ok(())
    }
}

/// Per-step linear operators of the exact solver.
struct StepOps {
    exp_a: Vec<f64>,
    kernel: Vec<f64>,
    exp_total: Vec<f64>,
    /// `∫_0^h e^{u(A+A')} du B c`.
    drift: Vec<f64>,
    /// Factor of the joint covariance of `(ΔW, ∫e^{uA}B dW, ∫K_u B dW)`.
    chol: Vec<f64>,
}

fn joint_gaussian_factor(flow: &MatrixFlow, sigma: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let d = flow.dim();
    let mut err = None;
    let q = quad::adaptive(
        |u| match flow.propagators(u) {
            Ok(p) => {
                let mut m = DMatrix::zeros(3 * d, d);
                m.view_mut((0, 0), (d, d)).fill_with_identity();
                m.view_mut((d, 0), (d, d)).copy_from(&(&p.exp_a * &flow.b));
                m.view_mut((2 * d, 0), (d, d)).copy_from(&(&p.kernel * &flow.b));
                &m * sigma * m.transpose()
            }
            Err(e) => {
                err.get_or_insert(e);
                DMatrix::zeros(3 * d, 3 * d)
            }
        },
        0.0,
        h,
        1e-15,
        1e-12,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let q = (&q + q.transpose()) * 0.5;
    Ok(semidefinite_cholesky(&q))
}

impl StepOps {
    fn new(flow: &MatrixFlow, sigma: &DMatrix<f64>, drift_rate: &[f64], h: f64) -> Result<Self> {
        let p = flow.propagators(h)?;
        let j = exp_integral(&flow.a_total(), h)? * &flow.b;
        let mut drift = vec![0.0; flow.dim()];
        gemv_add(&flat(&j), drift_rate, 1.0, &mut drift);
        Ok(Self {
            exp_a: flat(&p.exp_a),
            kernel: flat(&p.kernel),
            exp_total: flat(&p.exp_total),
            drift,
            chol: flat(&joint_gaussian_factor(flow, sigma, h)?),
        })
    }
}

/// Jumps of one particle on `(0, horizon]` with `|z| ∈ [eps, level)`.
pub fn particle_jumps(model: &OUModel, root: u64, rep: u64, particle: u64, level: f64) -> JumpEventStream {
    let spec = &model.noise;
    let d = model.dim();
    let mut rng = stream(root, &[rep, particle, purpose::JUMPS]);
    let mut s = JumpEventStream::empty(d, Vec::new(), None);
    spec.extend_stream(spec.eps(), f64::INFINITY, 0.0, model.horizon, &mut rng, &mut s);
    if level.is_finite() {
        s.filter_below(level)
    } else {
        s
    }
}

fn initial_states(model: &OUModel, labels: &[u64], root: u64, rep: u64) -> Vec<f64> {
    let d = model.dim();
    let mut x = vec![0.0; labels.len() * d];
    for (row, &l) in x.chunks_mut(d).zip(labels) {
        model.mu0.sample(&mut stream(root, &[rep, l, purpose::INITIAL]), row);
    }
    x
}

fn gauss_streams(labels: &[u64], root: u64, rep: u64) -> Vec<ChaCha8Rng> {
    labels.iter().map(|&l| stream(root, &[rep, l, purpose::GAUSS])).collect()
}

fn check_run(n: usize, steps: usize, level: f64, model: &OUModel) -> Result<()> {
    if n == 0 {
        return invalid("need at least one particle");
    }
    if steps == 0 {
        return invalid("need at least one step");
    }
    if level.is_nan() || level <= 0.0 {
        return invalid("truncation level must be positive");
    }
    if level < model.noise.eps() {
        return invalid("truncation level below the small-jump cutoff");
    }
    Ok(())
}

/// Exact event-driven simulation with default options.
pub fn simulate_particles_exact(model: &OUModel, n: usize, trunc_at_n: bool, seed: u64) -> Result<ParticlePath> {
    simulate_exact(model, n, &SimOptions::with_trunc_at_n(trunc_at_n), seed)
}

pub fn simulate_exact(model: &OUModel, n: usize, opts: &SimOptions, seed: u64) -> Result<ParticlePath> {
    let labels: Vec<u64> = (0..n as u64).collect();
    simulate_exact_labeled(model, &labels, opts, seed)
}

/// Exact solver where particle `i` draws from the streams of `labels[i]`.
pub fn simulate_exact_labeled(model: &OUModel, labels: &[u64], opts: &SimOptions, seed: u64) -> Result<ParticlePath> {
    let n = labels.len();
    let level = opts.trunc.level(&model.noise, n);
    check_run(n, opts.micro_steps, level, model)?;
    let d = model.dim();
    let rep = opts.replication;
    let h = model.horizon / opts.micro_steps as f64;
    let c = model.compensator(level)?;
    let ops = StepOps::new(&model.flow, &model.noise.small_jump_cov(), &c, h)?;
    let transport = Transport::new(&model.flow);
    let jumps: Vec<JumpEventStream> = labels.iter().map(|&l| particle_jumps(model, seed, rep, l, level)).collect();
    let mut cursor = vec![0usize; n];
    let mut gauss = gauss_streams(labels, seed, rep);

    let mut x = initial_states(model, labels, seed, rep);
    let mut s = mean_rows(&x, d);
    let mut s_rec = s.clone();
    let mut snapshots = Vec::new();
    if opts.record {
        snapshots.push(Snapshot { time: 0.0, states: x.clone(), mean_recursion: Some(s_rec.clone()) });
    }

    let inv_n = 1.0 / n as f64;
    let mut xi = vec![0.0; 3 * d];
    let mut ghj = vec![0.0; 3 * d];
    let (mut own, mut kern, mut tot) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut next = vec![0.0; n * d];
    let mut shared = vec![0.0; d];
    let mut rec_noise = vec![0.0; d];
    for k in 0..opts.micro_steps {
        let t1 = if k + 1 == opts.micro_steps { model.horizon } else { (k + 1) as f64 * h };
        shared.iter_mut().for_each(|v| *v = 0.0);
        rec_noise.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let xi_row = &x[i * d..(i + 1) * d];
            let out = &mut next[i * d..(i + 1) * d];
            out.copy_from_slice(&ops.drift);
            gemv_add(&ops.exp_a, xi_row, 1.0, out);
            gemv_add(&ops.kernel, &s, 1.0, out);
            for v in xi.iter_mut() {
                *v = gauss[i].sample(StandardNormal);
            }
            ghj.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..3 * d {
                let row = &ops.chol[r * 3 * d..(r + 1) * 3 * d];
                ghj[r] = row[..=r].iter().zip(&xi[..=r]).map(|(a, b)| a * b).sum();
            }
            for q in 0..d {
                out[q] += ghj[d + q];
                shared[q] += ghj[2 * d + q];
                rec_noise[q] += ghj[d + q] + ghj[2 * d + q];
            }
            let js = &jumps[i];
            while cursor[i] < js.len() && js.times[cursor[i]] <= t1 {
                let e = cursor[i];
                transport.apply(t1 - js.times[e], js.mark(e), &mut own, &mut kern, &mut tot)?;
                for q in 0..d {
                    out[q] += own[q];
                    shared[q] += kern[q];
                    rec_noise[q] += tot[q];
                }
                cursor[i] += 1;
            }
        }
        for row in next.chunks_mut(d) {
            for q in 0..d {
                row[q] += inv_n * shared[q];
            }
        }
        std::mem::swap(&mut x, &mut next);
        let mut rec = ops.drift.clone();
        gemv_add(&ops.exp_total, &s_rec, 1.0, &mut rec);
        for q in 0..d {
            rec[q] += inv_n * rec_noise[q];
        }
        s_rec = rec;
        s = mean_rows(&x, d);
        if opts.record {
            snapshots.push(Snapshot { time: t1, states: x.clone(), mean_recursion: Some(s_rec.clone()) });
        }
    }
    Ok(ParticlePath { dim: d, n, level, terminal: x, snapshots, seed: SeedRecord { root: seed, replication: rep } })
}

/// Jump-adapted Euler scheme with default options.
pub fn simulate_particles_euler(model: &OUModel, n: usize, steps: usize, trunc_at_n: bool, seed: u64) -> Result<ParticlePath> {
    let opts = SimOptions { micro_steps: steps, ..SimOptions::with_trunc_at_n(trunc_at_n) };
    simulate_euler(model, n, &opts, seed)
}

/// Euler scheme on the uniform grid refined by every jump time. The drift
/// `A x + A' S + B c` is frozen on each sub-interval; Brownian increments are
/// added at the end of each grid step and use the same normals as the exact
/// solver on the same grid.
pub fn simulate_euler(model: &OUModel, n: usize, opts: &SimOptions, seed: u64) -> Result<ParticlePath> {
    let level = opts.trunc.level(&model.noise, n);
    check_run(n, opts.micro_steps, level, model)?;
    let d = model.dim();
    let rep = opts.replication;
    let steps = opts.micro_steps;
    let h = model.horizon / steps as f64;
    let c = model.compensator(level)?;
    let a = flat(&model.flow.a);
    let ap = flat(&model.flow.a_prime);
    let b = flat(&model.flow.b);
    let mut bc = vec![0.0; d];
    gemv_add(&b, &c, 1.0, &mut bc);
    let sigma = model.noise.small_jump_cov();
    let root = flat(&semidefinite_cholesky(&(&sigma * h)));

    let jumps: Vec<JumpEventStream> = (0..n).map(|i| particle_jumps(model, seed, rep, i as u64, level)).collect();
    let mut events: Vec<(f64, usize, usize)> =
        jumps.iter().enumerate().flat_map(|(i, js)| (0..js.len()).map(move |e| (js.times[e], i, e))).collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    let labels: Vec<u64> = (0..n as u64).collect();
    let mut gauss = gauss_streams(&labels, seed, rep);

    let mut x = initial_states(model, &labels, seed, rep);
    let mut snapshots = Vec::new();
    if opts.record {
        snapshots.push(Snapshot { time: 0.0, states: x.clone(), mean_recursion: None });
    }
    let mut drift = vec![0.0; d];
    let mut advance = |x: &mut [f64], dt: f64| {
        if dt <= 0.0 {
            return;
        }
        let s = mean_rows(x, d);
        let mut common = bc.clone();
        gemv_add(&ap, &s, 1.0, &mut common);
        for row in x.chunks_mut(d) {
            drift.copy_from_slice(&common);
            gemv_add(&a, row, 1.0, &mut drift);
            for q in 0..d {
                row[q] += dt * drift[q];
            }
        }
    };
    let mut ev = 0usize;
    let mut t = 0.0;
    let mut xi = vec![0.0; 3 * d];
    let mut bz = vec![0.0; d];
    for k in 0..steps {
        let t1 = if k + 1 == steps { model.horizon } else { (k + 1) as f64 * h };
        while ev < events.len() && events[ev].0 <= t1 {
            let (tau, i, e) = events[ev];
            advance(&mut x, tau - t);
            t = tau;
            bz.iter_mut().for_each(|v| *v = 0.0);
            gemv_add(&b, jumps[i].mark(e), 1.0, &mut bz);
            for q in 0..d {
                x[i * d + q] += bz[q];
            }
            ev += 1;
        }
        advance(&mut x, t1 - t);
        t = t1;
        for (i, row) in x.chunks_mut(d).enumerate() {
            for v in xi.iter_mut() {
                *v = gauss[i].sample(StandardNormal);
            }
            let mut dw = vec![0.0; d];
            for r in 0..d {
                dw[r] = (0..=r).map(|c| root[r * d + c] * xi[c]).sum();
            }
            gemv_add(&b, &dw, 1.0, row);
        }
        if opts.record {
            snapshots.push(Snapshot { time: t1, states: x.clone(), mean_recursion: None });
        }
    }
    Ok(ParticlePath { dim: d, n, level, terminal: x, snapshots, seed: SeedRecord { root: seed, replication: rep } })
}

/// Draws of the mean-field law at the horizon from
/// `e^{TA} ξ + K_T m_0 + Y_T`, with `Y_T = ∫ e^{(T-s)A} B dZ_s` for the noise
/// truncated at `trunc_level`.
pub fn sample_limit_law(model: &OUModel, trunc_level: f64, m: usize, seed: u64) -> Result<EmpiricalMeasure> {
    let sampler = LimitLawSampler::new(model, trunc_level)?;
    sampler.sample(m, seed)
}

/// Precomputed pieces of the limit-law decomposition at the horizon.
#[derive(Debug, Clone)]
pub struct LimitLawSampler {
    model: OUModel,
    level: f64,
    exp_a: Vec<f64>,
    shift: Vec<f64>,
    chol: Vec<f64>,
}

impl LimitLawSampler {
    pub fn new(model: &OUModel, trunc_level: f64) -> Result<Self> {
        check_run(1, 1, trunc_level, model)?;
        let d = model.dim();
        let t = model.horizon;
        let flow = &model.flow;
        let p = flow.propagators(t)?;
        let m0 = model.mu0.mean()?;
        let c = model.compensator(trunc_level)?;
        let mut shift = vec![0.0; d];
        gemv_add(&flat(&p.kernel), &m0, 1.0, &mut shift);
        let drift_op = exp_integral(&flow.a, t)? * &flow.b;
        gemv_add(&flat(&drift_op), &c, 1.0, &mut shift);
        let sigma = model.noise.small_jump_cov();
        let mut err = None;
        let cov = quad::adaptive(
            |u| match crate::linflow::expm(&(&flow.a * u)) {
                Ok(e) => {
                    let eb = e * &flow.b;
                    &eb * &sigma * eb.transpose()
                }
                Err(e) => {
                    err.get_or_insert(e);
                    DMatrix::zeros(d, d)
                }
            },
            0.0,
            t,
            1e-15,
            1e-12,
        );
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Self {
            model: model.clone(),
            level: trunc_level,
            exp_a: flat(&p.exp_a),
            shift,
            chol: flat(&semidefinite_cholesky(&((&cov + cov.transpose()) * 0.5))),
        })
    }

    /// Sample `j` uses streams labelled `(seed, j, purpose)`.
    pub fn draw(&self, seed: u64, j: u64, out: &mut [f64]) -> Result<()> {
        let d = self.model.dim();
        let mut xi0 = vec![0.0; d];
        self.model.mu0.sample(&mut stream(seed, &[j, purpose::INITIAL]), &mut xi0);
        out.copy_from_slice(&self.shift);
        gemv_add(&self.exp_a, &xi0, 1.0, out);
        let mut g = stream(seed, &[j, purpose::GAUSS]);
        let normals: Vec<f64> = (0..d).map(|_| g.sample(StandardNormal)).collect();
        for r in 0..d {
            out[r] += (0..=r).map(|c| self.chol[r * d + c] * normals[c]).sum::<f64>();
        }
        let spec = &self.model.noise;
        let mut rng = stream(seed, &[j, purpose::JUMPS]);
        let mut s = JumpEventStream::empty(d, Vec::new(), None);
        spec.extend_stream(spec.eps(), self.level, 0.0, self.model.horizon, &mut rng, &mut s);
        let transport = Transport::new(&self.model.flow);
        let (mut own, mut kern, mut tot) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for e in 0..s.len() {
            transport.apply(self.model.horizon - s.times[e], s.mark(e), &mut own, &mut kern, &mut tot)?;
            for q in 0..d {
                out[q] += own[q];
            }
        }
        Ok(())
    }

    pub fn sample(&self, m: usize, seed: u64) -> Result<EmpiricalMeasure> {
        if m == 0 {
            return invalid("need at least one sample");
        }
        let d = self.model.dim();
        let mut atoms = vec![0.0; m * d];
        for (j, row) in atoms.chunks_mut(d).enumerate() {
            self.draw(seed, j as u64, row)?;
        }
        EmpiricalMeasure::uniform(d, atoms)
    }
}

/// Estimate of `E W_1` between an untruncated particle system and the one
/// truncated at `level`, driven by the same noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub level: f64,
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Probability that at least one jump above the level occurs.
    pub prob_big: f64,
}

/// Truncation gaps with the particle count equal to the level.
pub fn truncation_gap(model: &OUModel, levels: &[usize], m: usize, seed: u64) -> Result<Vec<GapEstimate>> {
    levels.iter().map(|&l| truncation_gap_at(model, l, l as f64, m, seed)).collect()
}

/// `E W_1(mu^N_T, mu^N_{level,T})` for `n` particles.
///
/// The two systems differ by a linear response to the jumps above the level
/// plus the compensator of those jumps. The estimator conditions on at least
/// one such jump (zero-truncated Poisson count, uniform owners and times) and
/// weights by its probability; with no big jump the two measures differ by a
/// deterministic translation.
pub fn truncation_gap_at(model: &OUModel, n: usize, level: f64, m: usize, seed: u64) -> Result<GapEstimate> {
    if m == 0 {
        return invalid("need at least one replication");
    }
    if level.is_infinite() {
        return Ok(GapEstimate { level, n, mean: 0.0, std_error: 0.0, prob_big: 0.0 });
    }
    let d = model.dim();
    let t = model.horizon;
    let spec = &model.noise;
    let rate = n as f64 * t * spec.annulus_mass(level.max(spec.eps()), f64::INFINITY)?;
    let prob_big = -(-rate).exp_m1();
    let full = model.compensator(f64::INFINITY)?;
    let trunc = model.compensator(level)?;
    let c_big: Vec<f64> = full.iter().zip(&trunc).map(|(a, b)| a - b).collect();
    let mut translation = vec![0.0; d];
    gemv_add(&flat(&(exp_integral(&model.flow.a_total(), t)? * &model.flow.b)), &c_big, 1.0, &mut translation);
    let shift_norm = translation.iter().map(|v| v * v).sum::<f64>().sqrt();

    let transport = Transport::new(&model.flow);
    let opts = SimOptions { micro_steps: 1, trunc: TruncMode::Level(level), record: false, replication: 0 };
    let mut values = Vec::with_capacity(m);
    let (mut own, mut kern, mut tot) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut mark = vec![0.0; d];
    for rep in 0..m as u64 {
        let path = simulate_exact(model, n, &SimOptions { replication: rep, ..opts }, seed)?;
        let mut rng = stream(seed, &[rep, n as u64, purpose::AUX]);
        let count = zero_truncated_poisson(rate, &mut rng);
        let mut shifted = path.terminal.clone();
        let mut common = translation.clone();
        for _ in 0..count {
            let owner = rng.gen_range(0..n);
            let tau = t * rng.gen::<f64>();
            spec.sample_mark(level.max(spec.eps()), f64::INFINITY, &mut rng, &mut mark);
            transport.apply(t - tau, &mark, &mut own, &mut kern, &mut tot)?;
            for q in 0..d {
                shifted[owner * d + q] += own[q];
                common[q] += kern[q] / n as f64;
            }
        }
        for row in shifted.chunks_mut(d) {
            for q in 0..d {
                row[q] += common[q];
            }
        }
        let a = EmpiricalMeasure::uniform(d, path.terminal)?;
        let b = EmpiricalMeasure::uniform(d, shifted)?;
        values.push(if d == 1 { w1_1d(&a, &b)? } else { w1_exact(&a, &b)? });
    }
    let cond_mean = crate::stats::mean(&values);
    let cond_se = crate::stats::std_error(&values);
    Ok(GapEstimate {
        level,
        n,
        mean: prob_big * cond_mean + (1.0 - prob_big) * shift_norm,
        std_error: prob_big * cond_se,
        prob_big,
    })
}

/// Poisson(`rate`) conditioned on being at least one, by inversion.
fn zero_truncated_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> usize {
    if rate <= 0.0 {
        return 1;
    }
    let norm = -(-rate).exp_m1();
    let u: f64 = rng.gen::<f64>() * norm;
    let mut p = (-rate).exp() * rate;
    let mut acc = p;
    let mut k = 1usize;
    while acc < u && k < 10_000 {
        k += 1;
        p *= rate / k as f64;
        acc += p;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_handles_singular_blocks() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 2.0]);
        let l = semidefinite_cholesky(&q);
        assert!((&l * l.transpose() - q).amax() < 1e-14);
    }

    #[test]
    fn exp_integral_matches_scalar_formula() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.0]);
        let j = exp_integral(&m, 2.0).unwrap();
        assert!((j[(0, 0)] - (0.6f64.exp() - 1.0) / 0.3).abs() < 1e-12);
        assert!((j[(1, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_truncated_poisson_is_positive() {
        let mut rng = stream(1, &[2]);
        let draws: Vec<usize> = (0..2000).map(|_| zero_truncated_poisson(0.01, &mut rng)).collect();
        assert!(draws.iter().all(|&k| k >= 1));
        let mean = draws.iter().sum::<usize>() as f64 / 2000.0;
        assert!((mean - 0.01 / (1.0 - (-0.01f64).exp())).abs() < 0.02);
    }
}
