//! α-stable Lévy noise with a discrete spectral measure.
//!
//! The Lévy measure is `ν(dz) = Σ_i w_i δ_{θ_i}(dθ) r^{-1-α} dr` in polar
//! coordinates `z = r θ`. Paths are built from three pieces:
//!
//! * jumps with `|z| ∈ [eps, trunc)`, sampled as a compound Poisson process;
//! * the compensator drift of those jumps, exposed separately for the
//!   `[eps, 1)` and `[1, trunc)` bands so callers can form either the
//!   compensated or the uncompensated big-jump integral;
//! * a Brownian surrogate with covariance `Σ_eps = ∫_{|z|<eps} z zᵀ dν` for the
//!   compensated small jumps.

use crate::error::{invalid, Error, Result};
use crate::quad::{gl, levy_power_integral};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

const UNIT_TOL: f64 = 1e-12;

/// Discrete measure on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    dim: usize,
    dirs: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectralMeasure {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return invalid("spectral measure needs at least one atom");
        };
        let dim = first.0.len();
        if dim == 0 {
            return invalid("directions must be nonempty vectors");
        }
        let mut dirs = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (theta, w) in atoms {
            if theta.len() != dim {
                return invalid("all directions must share one dimension");
            }
            let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return invalid(format!("direction {theta:?} is not a unit vector"));
            }
            if !(w > 0.0 && w.is_finite()) {
                return invalid(format!("weight {w} must be positive"));
            }
            dirs.extend_from_slice(&theta);
            weights.push(w);
        }
        Ok(Self { dim, dirs, weights })
    }

    /// The pair `(+1, w/2), (-1, w/2)` in dimension one.
    pub fn symmetric_1d(total_weight: f64) -> Result<Self> {
        Self::new(vec![(vec![1.0], 0.5 * total_weight), (vec![-1.0], 0.5 * total_weight)])
    }

    /// `±e_k` with weight `w/(2d)` each.
    pub fn isotropic_axes(dim: usize, total_weight: f64) -> Result<Self> {
        let w = total_weight / (2 * dim) as f64;
        let mut atoms = Vec::new();
        for k in 0..dim {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; dim];
                e[k] = s;
                atoms.push((e, w));
            }
        }
        Self::new(atoms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.dirs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.direction(i), self.weights[i]))
    }

    /// `Σ_i w_i θ_i θ_iᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (theta, w) in self.atoms() {
            for r in 0..self.dim {
                for c in 0..self.dim {
                    m[(r, c)] += w * theta[r] * theta[c];
                }
            }
        }
        m
    }

    /// Smallest eigenvalue of the second-moment matrix (the non-degeneracy η).
    pub fn nondegeneracy(&self) -> f64 {
        SymmetricEigen::new(self.second_moment()).eigenvalues.min()
    }

    /// True when atoms pair up as `±θ` with equal weights.
    pub fn is_symmetric(&self) -> bool {
        let mut used = vec![false; self.len()];
        for i in 0..self.len() {
            if used[i] {
                continue;
            }
            let partner = (0..self.len()).find(|&j| {
                !used[j]
                    && j != i
                    && (self.weights[i] - self.weights[j]).abs() <= 1e-12 * self.weights[i]
                    && self.direction(i).iter().zip(self.direction(j)).all(|(a, b)| (a + b).abs() <= 1e-12)
            });
            match partner {
                Some(j) => {
                    used[i] = true;
                    used[j] = true;
                }
                None => return false,
            }
        }
        true
    }
}

/// Radial kernels `Fc(X) = ∫_0^X (1 - cos u) u^{-1-α} du` and
/// `Fs(X) = ∫_0^X (u - sin u) u^{-1-α} du`.
///
/// Power series for `X ≤ 1`, a cumulative Gauss-Legendre table on `[1, 32]`
/// and an integration-by-parts asymptotic expansion beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialKernels {
    alpha: f64,
    cum_c: Vec<f64>,
    cum_s: Vec<f64>,
    fc_inf: f64,
    fs_tail_const: f64,
}

const SERIES_MAX: f64 = 1.0;
const TABLE_MAX: f64 = 32.0;
const CELL: f64 = 0.25;

impl RadialKernels {
    pub fn new(alpha: f64) -> Self {
        let cells = ((TABLE_MAX - SERIES_MAX) / CELL).round() as usize;
        let mut cum_c = Vec::with_capacity(cells + 1);
        let mut cum_s = Vec::with_capacity(cells + 1);
        let (mut c, mut s) = (series_c(alpha, SERIES_MAX), series_s(alpha, SERIES_MAX));
        cum_c.push(c);
        cum_s.push(s);
        for k in 0..cells {
            let a = SERIES_MAX + k as f64 * CELL;
            let (dc, ds) = gl_cell(alpha, a, a + CELL);
            c += dc;
            s += ds;
            cum_c.push(c);
            cum_s.push(s);
        }
        let tail = osc_tail(alpha, TABLE_MAX);
        let fc_end = *cum_c.last().unwrap();
        let fs_end = *cum_s.last().unwrap();
        // Fc(inf) = Fc(Y) + Y^{-α}/α - Re I(Y); Fs(X) = Fs(Y) + ∫_Y^X u^{-α} du - Im I(Y) + Im I(X).
        let fc_inf = fc_end + TABLE_MAX.powf(-alpha) / alpha - tail.re;
        let fs_tail_const = fs_end - tail.im;
        Self { alpha, cum_c, cum_s, fc_inf, fs_tail_const }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn fc(&self, x: f64) -> f64 {
        let a = self.alpha;
        if x <= 0.0 {
            0.0
        } else if x <= SERIES_MAX {
            series_c(a, x)
        } else if x <= TABLE_MAX {
            let (k, lo) = self.cell(x);
            self.cum_c[k] + gl_cell(a, lo, x).0
        } else if x.is_infinite() {
            self.fc_inf
        } else {
            self.fc_inf - x.powf(-a) / a + osc_tail(a, x).re
        }
    }

    /// `Fs(X)`; infinite for `X = ∞` when `α ≤ 1`.
    pub fn fs(&self, x: f64) -> f64 {
        let a = self.alpha;
        if x <= 0.0 {
            0.0
        } else if x <= SERIES_MAX {
            series_s(a, x)
        } else if x <= TABLE_MAX {
            let (k, lo) = self.cell(x);
            self.cum_s[k] + gl_cell(a, lo, x).1
        } else {
            let power = levy_power_integral(a, 1.0, TABLE_MAX, x);
            let osc = if x.is_infinite() { 0.0 } else { osc_tail(a, x).im };
            self.fs_tail_const + power + osc
        }
    }

    fn cell(&self, x: f64) -> (usize, f64) {
        let k = (((x - SERIES_MAX) / CELL).floor() as usize).min(self.cum_c.len() - 1);
        (k, SERIES_MAX + k as f64 * CELL)
    }
}

fn series_c(alpha: f64, x: f64) -> f64 {
    let x2 = x * x;
    let mut pow = x2;
    let mut fact = 2.0;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..40 {
        let term = sign * pow / (fact * (2.0 * k as f64 - alpha));
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        pow *= x2;
        fact *= (2 * k + 1) as f64 * (2 * k + 2) as f64;
        sign = -sign;
    }
    sum * x.powf(-alpha)
}

fn series_s(alpha: f64, x: f64) -> f64 {
    let x2 = x * x;
    let mut pow = x2 * x;
    let mut fact = 6.0;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..40 {
        let term = sign * pow / (fact * (2.0 * k as f64 + 1.0 - alpha));
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        pow *= x2;
        fact *= (2 * k + 2) as f64 * (2 * k + 3) as f64;
        sign = -sign;
    }
    sum * x.powf(-alpha)
}

fn gl_cell(alpha: f64, a: f64, b: f64) -> (f64, f64) {
    let (mut c, mut s) = (0.0, 0.0);
    for (u, w) in gl(10).mapped(a, b) {
        let g = w * u.powf(-1.0 - alpha);
        c += g * (1.0 - u.cos());
        s += g * (u - u.sin());
    }
    (c, s)
}

/// `∫_Y^∞ e^{iu} u^{-1-α} du = e^{iY} Σ_k i^{k+1} g^{(k)}(Y)` (asymptotic, `Y ≥ 32`).
fn osc_tail(alpha: f64, y: f64) -> Complex64 {
    let mut deriv = y.powf(-1.0 - alpha);
    let mut ik = Complex64::new(0.0, 1.0);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        if deriv.abs() > prev || deriv.abs() < 1e-30 {
            break;
        }
        sum += ik * deriv;
        prev = deriv.abs();
        deriv *= -(k as f64 + 1.0 + alpha) / y;
        ik *= Complex64::new(0.0, 1.0);
    }
    Complex64::from_polar(1.0, y) * sum
}

/// Driving noise: stability index, spectral measure, small-jump cutoff and
/// big-jump truncation level (`f64::INFINITY` for none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StableSpecRepr", into = "StableSpecRepr")]
pub struct StableSpec {
    alpha: f64,
    spectral: SpectralMeasure,
    eps: f64,
    trunc: f64,
    symmetric: bool,
    kernels: RadialKernels,
}

/// Serialized form of [`StableSpec`]; `trunc` omitted means no truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableSpecRepr {
    pub alpha: f64,
    pub directions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunc: Option<f64>,
}

fn default_eps() -> f64 {
    1e-2
}

impl TryFrom<StableSpecRepr> for StableSpec {
    type Error = Error;
    fn try_from(r: StableSpecRepr) -> Result<Self> {
        if r.directions.len() != r.weights.len() {
            return invalid("directions and weights must have equal length");
        }
        let spectral = SpectralMeasure::new(r.directions.into_iter().zip(r.weights).collect())?;
        StableSpec::new(r.alpha, spectral, r.eps, r.trunc.unwrap_or(f64::INFINITY))
    }
}

impl From<StableSpec> for StableSpecRepr {
    fn from(s: StableSpec) -> Self {
        let d = s.spectral.dim();
        StableSpecRepr {
            alpha: s.alpha,
            directions: s.spectral.dirs.chunks(d).map(|c| c.to_vec()).collect(),
            weights: s.spectral.weights.clone(),
            eps: s.eps,
            trunc: s.trunc.is_finite().then_some(s.trunc),
        }
    }
}

impl StableSpec {
    /// `eps == trunc` is accepted and describes a driver without jumps.
    pub fn new(alpha: f64, spectral: SpectralMeasure, eps: f64, trunc: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return invalid(format!("alpha must lie in (0, 2), got {alpha}"));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return invalid(format!("eps must be positive, got {eps}"));
        }
        if trunc.is_nan() || trunc < eps {
            return invalid(format!("trunc {trunc} must be at least eps {eps}"));
        }
        let symmetric = spectral.is_symmetric();
        Ok(Self { alpha, spectral, eps, trunc, symmetric, kernels: RadialKernels::new(alpha) })
    }

    /// Symmetric one-dimensional driver with unit total weight.
    pub fn symmetric_1d(alpha: f64, eps: f64, trunc: f64) -> Result<Self> {
        Self::new(alpha, SpectralMeasure::symmetric_1d(1.0)?, eps, trunc)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn trunc(&self) -> f64 {
        self.trunc
    }

    pub fn dim(&self) -> usize {
        self.spectral.dim()
    }

    pub fn spectral(&self) -> &SpectralMeasure {
        &self.spectral
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn kernels(&self) -> &RadialKernels {
        &self.kernels
    }

    /// Same driver with another truncation level.
    pub fn with_trunc(&self, trunc: f64) -> Result<Self> {
        if trunc.is_nan() || trunc < self.eps {
            return invalid(format!("trunc {trunc} must be at least eps {}", self.eps));
        }
        Ok(Self { trunc, ..self.clone() })
    }

    /// Same driver with another small-jump cutoff.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.alpha, self.spectral.clone(), eps, self.trunc.max(eps))
    }

    /// `ν({r0 ≤ |z| < r1})`.
    pub fn annulus_mass(&self, r0: f64, r1: f64) -> Result<f64> {
        levy_annulus_mass(self, r0, r1)
    }

    /// `∫_{r0 ≤ |z| < r1} z dν`, or `None` when the integral diverges.
    pub fn first_moment(&self, r0: f64, r1: f64) -> Option<Vec<f64>> {
        let d = self.dim();
        if self.symmetric || r1 <= r0 {
            return Some(vec![0.0; d]);
        }
        let radial = levy_power_integral(self.alpha, 1.0, r0, r1);
        if !radial.is_finite() {
            return None;
        }
        let mut m = vec![0.0; d];
        for (theta, w) in self.spectral.atoms() {
            for k in 0..d {
                m[k] += w * theta[k] * radial;
            }
        }
        Some(m)
    }

    /// Compensator drift rates `(-∫_{[eps,1)} z dν, -∫_{[1,trunc)} z dν)`.
    pub fn compensator_drifts(&self) -> (Vec<f64>, Option<Vec<f64>>) {
        let split = 1f64.clamp(self.eps, self.trunc);
        let neg = |v: Vec<f64>| v.into_iter().map(|x| -x).collect::<Vec<_>>();
        let small = neg(self.first_moment(self.eps, split).expect("bounded band"));
        let big = self.first_moment(split, self.trunc).map(neg);
        (small, big)
    }

    /// Drift of the fully compensated jump part on `[eps, trunc)`.
    pub fn full_compensator_drift(&self) -> Result<Vec<f64>> {
        let (small, big) = self.compensator_drifts();
        match big {
            Some(big) => Ok(small.iter().zip(&big).map(|(a, b)| a + b).collect()),
            None => invalid("compensated big jumps diverge for alpha <= 1 without truncation"),
        }
    }

    /// `ψ_δ(λ) = ∫_{|z|<δ} (e^{i⟨λ,z⟩} - 1 - i⟨λ,z⟩) dν(z)`.
    pub fn truncated_symbol(&self, lambda: &[f64], delta: f64) -> Result<Complex64> {
        truncated_symbol(self, lambda, delta)
    }

    /// `Σ_eps`, the covariance rate of the Brownian small-jump surrogate.
    pub fn small_jump_cov(&self) -> DMatrix<f64> {
        small_jump_gaussian_cov(self)
    }

    /// `eps^{1 - α/2}`: surrogate validity indicator, small is good.
    pub fn surrogate_validity_ratio(&self) -> f64 {
        self.eps.powf(1.0 - 0.5 * self.alpha)
    }

    /// Draw one mark `z = r θ` with `|z| ∈ [r0, r1)`.
    pub fn sample_mark<R: Rng + ?Sized>(&self, r0: f64, r1: f64, rng: &mut R, out: &mut [f64]) {
        let total = self.spectral.total_weight();
        let mut pick = rng.gen::<f64>() * total;
        let mut idx = self.spectral.len() - 1;
        for (i, &w) in self.spectral.weights.iter().enumerate() {
            if pick < w {
                idx = i;
                break;
            }
            pick -= w;
        }
        let r = sample_radius(self.alpha, r0, r1, rng.gen::<f64>());
        for (o, t) in out.iter_mut().zip(self.spectral.direction(idx)) {
            *o = r * t;
        }
    }

    /// Append jumps with radii in `[r0, r1)` on `(start, start + horizon]` to `stream`.
    pub fn extend_stream<R: Rng + ?Sized>(
        &self,
        r0: f64,
        r1: f64,
        start: f64,
        horizon: f64,
        rng: &mut R,
        stream: &mut JumpEventStream,
    ) {
        let rate = levy_annulus_mass(self, r0, r1).unwrap_or(0.0);
        if rate <= 0.0 || horizon <= 0.0 {
            return;
        }
        let d = self.dim();
        let end = start + horizon;
        let mut t = start;
        let mut mark = vec![0.0; d];
        loop {
            let gap: f64 = Exp1.sample(rng);
            t += gap / rate;
            if t > end {
                break;
            }
            self.sample_mark(r0, r1, rng, &mut mark);
            stream.times.push(t);
            stream.marks.extend_from_slice(&mark);
        }
    }

    /// Compound-Poisson jumps with `|z| ∈ [eps, trunc)` on `(0, horizon]`.
    pub fn sample_jump_stream<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> JumpEventStream {
        let (small, big) = self.compensator_drifts();
        let mut s = JumpEventStream::empty(self.dim(), small, big);
        self.extend_stream(self.eps, self.trunc, 0.0, horizon, rng, &mut s);
        s
    }

    /// One draw of `Z_t`: jumps on `[eps, trunc)`, full compensator drift and
    /// the Gaussian surrogate.
    pub fn sample_increment<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<Vec<f64>> {
        let drift = self.full_compensator_drift()?;
        let d = self.dim();
        let root = psd_sqrt(&(self.small_jump_cov() * t));
        let mut z: Vec<f64> = drift.iter().map(|c| c * t).collect();
        let normals: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for r in 0..d {
            for c in 0..d {
                z[r] += root[(r, c)] * normals[c];
            }
        }
        let rate = levy_annulus_mass(self, self.eps, self.trunc)?;
        if rate > 0.0 {
            let count = rand_distr::Poisson::new(rate * t).map(|p| p.sample(rng) as usize).unwrap_or(0);
            let mut mark = vec![0.0; d];
            for _ in 0..count {
                self.sample_mark(self.eps, self.trunc, rng, &mut mark);
                for k in 0..d {
                    z[k] += mark[k];
                }
            }
        }
        Ok(z)
    }
}

/// Inverse CDF of the density `∝ r^{-1-α}` on `[r0, r1)`.
#[inline]
pub fn sample_radius(alpha: f64, r0: f64, r1: f64, u: f64) -> f64 {
    let a = r0.powf(-alpha);
    let b = if r1.is_finite() { r1.powf(-alpha) } else { 0.0 };
    (a - u * (a - b)).powf(-1.0 / alpha)
}

/// Symmetric PSD square root via the eigen-decomposition; negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.transpose()
}

/// Jumps on a horizon, sorted by time, plus compensator drift rates.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEventStream {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major marks, `dim` entries per event.
    pub marks: Vec<f64>,
    /// `-∫_{eps ≤ |z| < 1} z dν` per unit time.
    pub small_drift: Vec<f64>,
    /// `-∫_{1 ≤ |z| < trunc} z dν` per unit time, `None` if divergent.
    pub big_drift: Option<Vec<f64>>,
}

impl JumpEventStream {
    pub fn empty(dim: usize, small_drift: Vec<f64>, big_drift: Option<Vec<f64>>) -> Self {
        Self { dim, times: Vec::new(), marks: Vec::new(), small_drift, big_drift }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mark(&self, i: usize) -> &[f64] {
        &self.marks[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mark_norm(&self, i: usize) -> f64 {
        self.mark(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Events with `|z| < level` (drift fields are left to the caller).
    pub fn filter_below(&self, level: f64) -> Self {
        let mut out = Self::empty(self.dim, self.small_drift.clone(), self.big_drift.clone());
        for i in 0..self.len() {
            if self.mark_norm(i) < level {
                out.times.push(self.times[i]);
                out.marks.extend_from_slice(self.mark(i));
            }
        }
        out
    }
}

/// `(Σ w_i)(r0^{-α} - r1^{-α})/α`.
pub fn levy_annulus_mass(spec: &StableSpec, r0: f64, r1: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return invalid(format!("inner radius must be positive, got {r0}"));
    }
    if r1 <= r0 {
        return Ok(0.0);
    }
    let a = spec.alpha;
    let outer = if r1.is_finite() { r1.powf(-a) } else { 0.0 };
    Ok(spec.spectral.total_weight() * (r0.powf(-a) - outer) / a)
}

pub fn truncated_symbol(spec: &StableSpec, lambda: &[f64], delta: f64) -> Result<Complex64> {
    if !(delta > 0.0) {
        return invalid(format!("cutoff must be positive, got {delta}"));
    }
    if lambda.len() != spec.dim() {
        return invalid("frequency has the wrong dimension");
    }
    let k = &spec.kernels;
    let a = spec.alpha;
    let need_imag = !spec.symmetric;
    if need_imag && delta.is_infinite() && a <= 1.0 {
        return invalid("untruncated compensated symbol diverges for alpha <= 1 unless symmetric");
    }
    let mut re = 0.0;
    let mut im = 0.0;
    for (theta, w) in spec.spectral.atoms() {
        let proj: f64 = theta.iter().zip(lambda).map(|(t, l)| t * l).sum();
        let m = proj.abs();
        if m == 0.0 {
            continue;
        }
        let scale = w * m.powf(a);
        re -= scale * k.fc(m * delta);
        if need_imag {
            im -= proj.signum() * scale * k.fs(m * delta);
        }
    }
    Ok(Complex64::new(re, im))
}

pub fn small_jump_gaussian_cov(spec: &StableSpec) -> DMatrix<f64> {
    spec.spectral.second_moment() * (spec.eps.powf(2.0 - spec.alpha) / (2.0 - spec.alpha))
}

/// Chambers-Mallows-Stuck draws of a symmetric α-stable law with
/// characteristic function `exp(-|scale λ|^α)`.
pub fn sample_stable_oracle_1d<R: Rng + ?Sized>(alpha: f64, scale: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return invalid(format!("alpha must lie in (0, 2], got {alpha}"));
    }
    if !(scale > 0.0) {
        return invalid("scale must be positive");
    }
    Ok((0..n)
        .map(|_| {
            let v = PI * (rng.gen::<f64>() - 0.5);
            let w: f64 = Exp1.sample(rng);
            let x = if (alpha - 1.0).abs() < 1e-12 {
                v.tan()
            } else {
                (alpha * v).sin() / v.cos().powf(1.0 / alpha)
                    * ((v * (1.0 - alpha)).cos() / w).powf((1.0 - alpha) / alpha)
            };
            scale * x
        })
        .collect())
}

/// CMS scale matching a symmetric driver: `ψ_∞(λ) = -(Σw) Fc(∞) |λ|^α`.
pub fn symmetric_scale_1d(spec: &StableSpec) -> f64 {
    (spec.spectral.total_weight() * spec.kernels.fc(f64::INFINITY)).powf(1.0 / spec.alpha)
}

/// Closed form `∫_0^∞ (1 - cos u) u^{-1-α} du`, used for cross-checks.
pub fn fc_infinity_closed_form(alpha: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-12 {
        FRAC_PI_2
    } else {
        -statrs::function::gamma::gamma(-alpha) * (FRAC_PI_2 * alpha).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_continuous_across_regimes() {
        for &a in &[0.5, 1.0, 1.5, 1.9] {
            let k = RadialKernels::new(a);
            for &x in &[SERIES_MAX, TABLE_MAX] {
                let lo = k.fc(x * (1.0 - 1e-12));
                let hi = k.fc(x * (1.0 + 1e-12));
                assert!((lo - hi).abs() < 1e-10, "fc jump at {x} for alpha {a}");
                let lo = k.fs(x * (1.0 - 1e-12));
                let hi = k.fs(x * (1.0 + 1e-12));
                assert!((lo - hi).abs() < 1e-10, "fs jump at {x} for alpha {a}");
            }
        }
    }

    #[test]
    fn radius_inverse_cdf_endpoints() {
        assert!((sample_radius(1.5, 0.1, 3.0, 0.0) - 0.1).abs() < 1e-14);
        assert!((sample_radius(1.5, 0.1, 3.0, 1.0) - 3.0).abs() < 1e-12);
        assert!(sample_radius(0.7, 1.0, f64::INFINITY, 0.999).is_finite());
    }

    #[test]
    fn asymmetric_measure_detected() {
        let m = SpectralMeasure::new(vec![(vec![1.0], 0.7), (vec![-1.0], 0.3)]).unwrap();
        assert!(!m.is_symmetric());
        assert!(SpectralMeasure::isotropic_axes(3, 1.0).unwrap().is_symmetric());
    }
}
