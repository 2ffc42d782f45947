//! Monte-Carlo check of Itô's formula along the flow of marginal laws of a
//! one-dimensional jump process
//!
//! ```text
//! X_t = X_0 + ∫ b_s ds + ∫∫_{|z|<1} σ_s z Ñ(ds, dz) + ∫∫_{|z|≥1} σ_s z N(ds, dz)
//! ```
//!
//! with deterministic `b` and `σ`. The two sides compared are
//! `u(μ_t) - u(μ_0)` and
//!
//! ```text
//! ∫_0^t E[ ∂_v D_s(X_s) b_s + ∫ (D_s(X_s + σ_s z) - D_s(X_s) - ∂_v D_s(X_s) σ_s z 1_{|z|<1}) ν(dz) ] ds
//! ```
//!
//! where `D_s = δu/δm(μ_s)`. Both sides use independent path ensembles unless
//! `correlated` is set.

use crate::error::{invalid, Error, Result};
use crate::functionals::{BuiltinFunctional, Functional};
use crate::kolmogorov::{levy_radial_integral, GeneratorQuadrature};
use crate::measures::EmpiricalMeasure;
use crate::mckv_sim::InitialLaw;
use crate::quad::{self, RadialRule};
use crate::rng::{purpose, stream};
use crate::stable_noise::StableSpec;
use crate::stats;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Deterministic coefficient `s ↦ c(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    Sine {
        amp: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Coefficient {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Linear { intercept, slope } => intercept + slope * s,
            Coefficient::Sine { amp, freq, phase } => amp * (freq * s + phase).sin(),
        }
    }

    /// `∫_{s0}^{s1} c(s) ds`.
    pub fn integral(&self, s0: f64, s1: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value * (s1 - s0),
            Coefficient::Linear { intercept, slope } => intercept * (s1 - s0) + 0.5 * slope * (s1 * s1 - s0 * s0),
            Coefficient::Sine { amp, freq, phase } => {
                if freq == 0.0 {
                    amp * phase.sin() * (s1 - s0)
                } else {
                    amp * ((freq * s0 + phase).cos() - (freq * s1 + phase).cos()) / freq
                }
            }
        }
    }

    /// `∫_{s0}^{s1} c(s)² ds`.
    pub fn square_integral(&self, s0: f64, s1: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value * value * (s1 - s0),
            Coefficient::Linear { intercept, slope } => {
                if slope == 0.0 {
                    intercept * intercept * (s1 - s0)
                } else {
                    let cube = |s: f64| (intercept + slope * s).powi(3);
                    (cube(s1) - cube(s0)) / (3.0 * slope)
                }
            }
            Coefficient::Sine { amp, freq, phase } => {
                if freq == 0.0 {
                    return (amp * phase.sin()).powi(2) * (s1 - s0);
                }
                let w = |s: f64| (2.0 * (freq * s + phase)).sin();
                amp * amp * (0.5 * (s1 - s0) - (w(s1) - w(s0)) / (4.0 * freq))
            }
        }
    }

    /// `sup_{[0,t]} |c|`.
    pub fn sup_abs(&self, t: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value.abs(),
            Coefficient::Linear { intercept, slope } => intercept.abs().max((intercept + slope * t).abs()),
            Coefficient::Sine { amp, .. } => amp.abs(),
        }
    }

    /// `∫_0^t |c(s)|^p ds` by Gauss-Legendre panels.
    pub fn power_integral(&self, p: f64, t: f64) -> f64 {
        let panels = 64;
        let h = t / panels as f64;
        (0..panels)
            .map(|k| quad::gl(8).integrate(k as f64 * h, (k + 1) as f64 * h, |s| self.value(s).abs().powf(p)))
            .sum()
    }
}

/// Which corollary of the Itô formula applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `α > 1`.
    SubCritical,
    /// `α = 1`.
    Critical,
    /// `α < 1`.
    SuperCritical,
}

/// Check the growth order `β` and the Hölder exponent `γ` of `∂_v δu/δm`
/// against the regime of `α`.
pub fn check_regime(alpha: f64, u: &dyn Functional) -> Result<Regime> {
    let beta = u.growth_order();
    let gamma = u.grad_holder_exponent();
    let fail = |msg: String| Err(Error::InvalidExperiment(msg));
    if alpha > 1.0 {
        if beta >= alpha {
            return fail(format!("growth order {beta} must be below alpha = {alpha}"));
        }
        if !(gamma > alpha - 1.0 && gamma <= 1.0) {
            return fail(format!("Hölder exponent {gamma} must lie in (alpha - 1, 1]"));
        }
        Ok(Regime::SubCritical)
    } else if alpha < 1.0 {
        if beta >= alpha {
            return fail(format!("growth order {beta} must be below alpha = {alpha}"));
        }
        Ok(Regime::SuperCritical)
    } else {
        if beta >= 1.0 {
            return fail(format!("growth order {beta} must be below 1"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return fail(format!("Hölder exponent {gamma} must lie in (0, 1]"));
        }
        Ok(Regime::Critical)
    }
}

/// One Itô-formula experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItoExperiment {
    /// Driver; its `trunc` bounds the jumps, its `eps` sets the Gaussian
    /// surrogate used by the path simulation.
    pub noise: StableSpec,
    pub drift: Coefficient,
    pub sigma: Coefficient,
    pub mu0: InitialLaw,
    pub functional: BuiltinFunctional,
    pub horizon: f64,
    pub paths: usize,
    /// Midpoint nodes of the time quadrature; must be even.
    pub nodes: usize,
    #[serde(default = "default_spacing")]
    pub table_spacing: f64,
    #[serde(default)]
    pub quad: GeneratorQuadrature,
    /// Largest jump radius integrated when the driver is untruncated.
    #[serde(default = "default_outer")]
    pub outer_radius: f64,
    #[serde(default)]
    pub correlated: bool,
}

fn default_spacing() -> f64 {
    0.0025
}

fn default_outer() -> f64 {
    1e3
}

/// Finite values of the integrability conditions on drift and jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrability {
    /// `∫ |b_s|^{β∨1} ds`.
    pub drift: f64,
    /// `∫∫_{|z|<1} |σ_s z|^{1+γ} dν ds`.
    pub small_jumps: f64,
    /// `∫∫_{|z|≥1} |σ_s z|^β dν ds`.
    pub big_jumps: f64,
}

/// `∫_{r0}^{r1} r^{p-1-α} dr` allowing `r0 = 0`.
fn radial_power(alpha: f64, p: f64, r0: f64, r1: f64) -> f64 {
    if r1 <= r0 {
        return 0.0;
    }
    if r0 == 0.0 {
        return if p > alpha { r1.powf(p - alpha) / (p - alpha) } else { f64::INFINITY };
    }
    quad::levy_power_integral(alpha, p, r0, r1)
}

/// Scalar view of `δu/δm(μ)` with two `v`-derivatives.
struct Flat<'a> {
    u: &'a dyn Functional,
    mu: &'a EmpiricalMeasure,
}

impl Flat<'_> {
    fn d0(&self, v: f64) -> f64 {
        self.u.flat_d1(self.mu, &[v])
    }
    fn d1(&self, v: f64) -> f64 {
        self.u.grad_d1(self.mu, &[v])[0]
    }
    fn d2(&self, v: f64) -> Result<f64> {
        self.u
            .hess_d1(self.mu, &[v])
            .map(|h| h[(0, 0)])
            .ok_or_else(|| Error::UnsupportedFunctional(format!("{} lacks a second derivative", self.u.name())))
    }
}

/// Cubic Lagrange table of `x ↦ J(x)` on a uniform grid.
#[derive(Debug, Clone)]
struct Table {
    lo: f64,
    h: f64,
    values: Vec<f64>,
}

impl Table {
    fn eval(&self, x: f64) -> Option<f64> {
        let pos = (x - self.lo) / self.h;
        let n = self.values.len();
        if !(pos >= 1.0) || pos >= (n - 2) as f64 {
            return None;
        }
        let j = pos.floor() as usize;
        let s = pos - j as f64;
        let v = &self.values[j - 1..j + 3];
        let (a, b, c, d) = ((s) * (s - 1.0) * (s - 2.0), (s + 1.0) * (s - 1.0) * (s - 2.0), (s + 1.0) * s * (s - 2.0), (s + 1.0) * s * (s - 1.0));
        Some(-a / 6.0 * v[0] + b / 2.0 * v[1] - c / 2.0 * v[2] + d / 6.0 * v[3])
    }
}

/// Report of [`ito_residual`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub regime: Regime,
    pub integrability: Integrability,
    pub lhs: f64,
    pub lhs_std_error: f64,
    pub rhs: f64,
    pub rhs_std_error: f64,
    /// RHS with half the time nodes.
    pub rhs_coarse: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub tolerance_parts: ToleranceParts,
    /// Estimated `C` in `|D(x+h) - D(x) - D'(x)h| ≤ C|h|^{1+γ}` on sampled points.
    pub holder_constant: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceParts {
    /// `3 sqrt(se_lhs² + se_rhs²)`.
    pub monte_carlo: f64,
    /// Richardson estimate of the midpoint-rule error.
    pub time_quadrature: f64,
    /// Change of the jump integral under radial refinement.
    pub radial: f64,
    /// Time integral of the mean table interpolation error over sampled paths.
    pub table: f64,
    /// Time integral of the mean generator error from the Gaussian
    /// replacement of jumps below `eps`, over sampled paths.
    pub surrogate: f64,
    /// Jumps beyond the outer radius of an untruncated driver.
    pub tail: f64,
}

impl ItoExperiment {
    pub fn validate(&self) -> Result<Regime> {
        if self.noise.dim() != 1 || self.mu0.dim() != 1 {
            return invalid("Itô checks are one-dimensional");
        }
        self.mu0.validate()?;
        self.functional.validate(1)?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return invalid("horizon must be non-negative");
        }
        if self.paths < 2 {
            return invalid("need at least two paths");
        }
        if self.nodes < 2 || !self.nodes.is_multiple_of(2) {
            return invalid("node count must be even and at least two");
        }
        if !(self.table_spacing > 0.0) || !(self.outer_radius > 1.0) {
            return invalid("table spacing and outer radius must be positive");
        }
        check_regime(self.noise.alpha(), &self.functional)
    }

    fn jump_cutoff(&self) -> f64 {
        self.noise.trunc().min(self.outer_radius)
    }

    pub fn integrability(&self) -> Result<Integrability> {
        let alpha = self.noise.alpha();
        let beta = self.functional.growth_order();
        let gamma = self.functional.grad_holder_exponent();
        let t = self.horizon;
        let w = self.noise.spectral().total_weight();
        let drift = self.drift.power_integral(beta.max(1.0), t);
        let small = w * self.sigma.power_integral(1.0 + gamma, t) * radial_power(alpha, 1.0 + gamma, 0.0, 1f64.min(self.noise.trunc()));
        let big = w * self.sigma.power_integral(beta, t) * radial_power(alpha, beta, 1.0, self.noise.trunc().max(1.0));
        let out = Integrability { drift, small_jumps: small, big_jumps: big };
        if !(drift.is_finite() && small.is_finite() && big.is_finite()) {
            return Err(Error::InvalidExperiment(format!("integrability conditions fail: {out:?}")));
        }
        Ok(out)
    }

    /// `X` at the sorted `times` for path `k` of ensemble `tag`.
    fn path(&self, seed: u64, k: u64, tag: u64, times: &[f64], out: &mut [f64]) {
        let mut x = [0.0];
        self.mu0.sample(&mut stream(seed, &[k, purpose::INITIAL, tag]), &mut x);
        let mut x = x[0];
        let jumps = self.noise.sample_jump_stream(self.horizon, &mut stream(seed, &[k, purpose::JUMPS, tag]));
        let mut gauss = stream(seed, &[k, purpose::GAUSS, tag]);
        let var_rate = self.noise.small_jump_cov()[(0, 0)];
        let small_drift = jumps.small_drift[0];
        let mut prev = 0.0;
        let mut e = 0;
        for (slot, &s) in out.iter_mut().zip(times) {
            while e < jumps.len() && jumps.times[e] <= s {
                x += self.sigma.value(jumps.times[e]) * jumps.mark(e)[0];
                e += 1;
            }
            x += self.drift.integral(prev, s) + small_drift * self.sigma.integral(prev, s);
            let var = var_rate * self.sigma.square_integral(prev, s);
            if var > 0.0 {
                let z: f64 = gauss.sample(StandardNormal);
                x += var.sqrt() * z;
            }
            prev = s;
            *slot = x;
        }
    }

    /// `∫ (D(x + σz) - D(x) - D'(x) σz 1_{|z|<1}) dν(z)`.
    fn jump_integral(&self, flat: &Flat, sigma: f64, x: f64, quad: &GeneratorQuadrature) -> Result<f64> {
        let (d0, d1, d2) = (flat.d0(x), flat.d1(x), flat.d2(x)?);
        levy_radial_integral(
            &self.noise,
            self.jump_cutoff(),
            quad,
            |th, r| {
                let h = sigma * th * r;
                let comp = if r < 1.0 { d1 * h } else { 0.0 };
                Ok(flat.d0(x + h) - d0 - comp)
            },
            |th| Ok(0.5 * d2 * (sigma * th).powi(2)),
        )
    }

    /// `∫_{|z|<eps} (D(x + σz) - D(x) - D'(x) σz - D''(x) (σz)²/2) dν(z)`: the
    /// generator error from replacing the smallest jumps by a Brownian term.
    fn surrogate_error(&self, flat: &Flat, sigma: f64, x: f64) -> Result<f64> {
        let eps = self.noise.eps();
        let (d0, d1, d2) = (flat.d0(x), flat.d1(x), flat.d2(x)?);
        let rule = RadialRule::new(self.noise.alpha(), eps * 1e-4, eps, self.quad.panels_per_octave, self.quad.order);
        let mut total = 0.0;
        for (theta, w) in self.noise.spectral().atoms() {
            for (&r, &wr) in rule.nodes.iter().zip(&rule.weights) {
                let h = sigma * theta[0] * r;
                total += w * wr * (flat.d0(x + h) - d0 - d1 * h - 0.5 * d2 * h * h);
            }
        }
        Ok(total)
    }
}

/// `u(μ_t) - u(μ_0)` with its standard error, from the ensemble `tag`.
fn lhs_ensemble(exp: &ItoExperiment, seed: u64, tag: u64) -> Result<(f64, f64, EmpiricalMeasure)> {
    let m = exp.paths;
    let mut x0 = vec![0.0; m];
    let mut xt = vec![0.0; m];
    let times = [0.0, exp.horizon];
    let mut buf = [0.0; 2];
    for k in 0..m {
        exp.path(seed, k as u64, tag, &times, &mut buf);
        x0[k] = buf[0];
        xt[k] = buf[1];
    }
    let mu0 = EmpiricalMeasure::uniform(1, x0)?;
    let mut mut_ = EmpiricalMeasure::uniform(1, xt)?;
    let u = &exp.functional;
    let value = u.eval(&mut_) - u.eval(&mu0);
    let diffs: Vec<f64> = (0..m).map(|k| u.flat_d1(&mut_, mut_.atom(k)) - u.flat_d1(&mu0, mu0.atom(k))).collect();
    let se = stats::std_error(&diffs);
    if exp.horizon == 0.0 {
        mut_ = mu0;
        return Ok((0.0, 0.0, mut_));
    }
    Ok((value, se, mut_))
}

/// Monte-Carlo estimate of `u(μ_t) - u(μ_0)` and its standard error.
pub fn ito_lhs(exp: &ItoExperiment, seed: u64) -> Result<(f64, f64)> {
    exp.validate()?;
    let (v, se, _) = lhs_ensemble(exp, seed, 0)?;
    Ok((v, se))
}

/// Time nodes: midpoints of the fine grid, then of the coarse grid.
fn node_times(t: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let fine: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * t / n as f64).collect();
    let coarse: Vec<f64> = (0..n / 2).map(|j| (j as f64 + 0.5) * 2.0 * t / n as f64).collect();
    (fine, coarse)
}

/// RHS pieces shared by [`ito_rhs`] and [`ito_residual`].
struct RhsOut {
    fine: f64,
    fine_se: f64,
    coarse: f64,
    radial: f64,
    table: f64,
    surrogate: f64,
    holder: f64,
}

fn rhs_ensemble(exp: &ItoExperiment, seed: u64, tag: u64) -> Result<RhsOut> {
    let t = exp.horizon;
    let m = exp.paths;
    if t == 0.0 {
        return Ok(RhsOut { fine: 0.0, fine_se: 0.0, coarse: 0.0, radial: 0.0, table: 0.0, surrogate: 0.0, holder: 0.0 });
    }
    let (fine_t, coarse_t) = node_times(t, exp.nodes);
    // Merged sorted node list with a flag for the grid each node belongs to.
    let mut all: Vec<(f64, bool)> = fine_t.iter().map(|&s| (s, true)).chain(coarse_t.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let times: Vec<f64> = all.iter().map(|a| a.0).collect();
    let k_nodes = times.len();
    let mut states = vec![0.0; m * k_nodes];
    for (k, row) in states.chunks_mut(k_nodes).enumerate() {
        exp.path(seed, k as u64, tag, &times, row);
    }
    let u = &exp.functional;
    let (hf, hc) = (t / exp.nodes as f64, 2.0 * t / exp.nodes as f64);
    let mut fine_sum = vec![0.0; m];
    let mut coarse_sum = vec![0.0; m];
    let mut radial: f64 = 0.0;
    let mut table_err = 0.0;
    let mut holder: f64 = 0.0;
    let mut surrogate = 0.0;
    let refined = exp.quad.refined();
    let mut tables: HashMap<u64, Table> = HashMap::new();
    let gamma = u.grad_holder_exponent();
    for (j, &(s, is_fine)) in all.iter().enumerate() {
        let column: Vec<f64> = (0..m).map(|k| states[k * k_nodes + j]).collect();
        let law;
        let anchor;
        let mu: &EmpiricalMeasure = if u.measure_independent() {
            anchor = EmpiricalMeasure::dirac(&[0.0])?;
            &anchor
        } else {
            law = EmpiricalMeasure::uniform(1, column.clone())?;
            &law
        };
        let flat = Flat { u, mu };
        let sigma = exp.sigma.value(s);
        let b = exp.drift.value(s);
        let weight = if is_fine { hf } else { hc };
        if is_fine && exp.noise.eps() > 0.0 {
            let stride = (m / 64).max(1);
            let errs = column.iter().step_by(stride).map(|&x| exp.surrogate_error(&flat, sigma, x).map(f64::abs)).collect::<Result<Vec<_>>>()?;
            surrogate += weight * stats::mean(&errs);
        }
        // Sampled quadrature checks on a few ensemble points.
        for &x in column.iter().step_by((m / 8).max(1)) {
            let a = exp.jump_integral(&flat, sigma, x, &exp.quad)?;
            let r = exp.jump_integral(&flat, sigma, x, &refined)?;
            radial = radial.max((a - r).abs());
            for h in [0.1, -0.3, 0.7] {
                let hh = sigma * h;
                if hh != 0.0 {
                    let rem = (flat.d0(x + hh) - flat.d0(x) - flat.d1(x) * hh).abs();
                    holder = holder.max(rem / hh.abs().powf(1.0 + gamma));
                }
            }
        }
        let table = if u.measure_independent() {
            let key = sigma.to_bits();
            if !tables.contains_key(&key) {
                let mut sorted = column.clone();
                sorted.sort_by(f64::total_cmp);
                let lo = stats::quantile_sorted(&sorted, 0.002) - 1.0;
                let hi = stats::quantile_sorted(&sorted, 0.998) + 1.0;
                let h = exp.table_spacing;
                let n = ((hi - lo) / h).ceil() as usize + 4;
                let start = lo - h;
                let values = (0..n).map(|i| exp.jump_integral(&flat, sigma, start + i as f64 * h, &exp.quad)).collect::<Result<Vec<_>>>()?;
                let tab = Table { lo: start, h, values };
                tables.insert(key, tab);
            }
            tables.get(&key)
        } else {
            None
        };
        if let (Some(tab), true) = (table, is_fine) {
            let errs = column
                .iter()
                .step_by((m / 64).max(1))
                .map(|&x| match tab.eval(x) {
                    Some(v) => Ok((v - exp.jump_integral(&flat, sigma, x, &exp.quad)?).abs()),
                    None => Ok(0.0),
                })
                .collect::<Result<Vec<f64>>>()?;
            table_err += weight * stats::mean(&errs);
        }
        for (k, &x) in column.iter().enumerate() {
            let jump = match table.and_then(|tab| tab.eval(x)) {
                Some(v) => v,
                None => exp.jump_integral(&flat, sigma, x, &exp.quad)?,
            };
            let val = weight * (flat.d1(x) * b + jump);
            if is_fine {
                fine_sum[k] += val;
            } else {
                coarse_sum[k] += val;
            }
        }
    }
    Ok(RhsOut {
        fine: stats::mean(&fine_sum),
        fine_se: stats::std_error(&fine_sum),
        coarse: stats::mean(&coarse_sum),
        radial: radial * t,
        table: table_err,
        surrogate,
        holder,
    })
}

/// Time-quadrature estimate of the right-hand side and its standard error.
pub fn ito_rhs(exp: &ItoExperiment, seed: u64) -> Result<(f64, f64)> {
    exp.validate()?;
    exp.integrability()?;
    let out = rhs_ensemble(exp, seed, if exp.correlated { 0 } else { 1 })?;
    Ok((out.fine, out.fine_se))
}

/// Compare both sides of the Itô formula.
pub fn ito_residual(exp: &ItoExperiment, seed: u64) -> Result<ItoReport> {
    let regime = exp.validate()?;
    let integrability = exp.integrability()?;
    let (lhs, lhs_se, terminal) = lhs_ensemble(exp, seed, 0)?;
    let rhs = rhs_ensemble(exp, seed, if exp.correlated { 0 } else { 1 })?;
    let t = exp.horizon;
    let alpha = exp.noise.alpha();
    let w = exp.noise.spectral().total_weight();
    let u = &exp.functional;
    let flat = Flat { u, mu: &terminal };
    let tail = if exp.noise.trunc() > exp.outer_radius && t > 0.0 {
        let r = exp.outer_radius;
        let beta = u.growth_order();
        let sig = exp.sigma.sup_abs(t);
        let size: Vec<f64> = terminal.atoms().iter().map(|&x| flat.d0(x).abs().max(x.abs().powf(beta))).collect();
        let c = 2f64.powf((beta - 1.0).max(0.0));
        t * w * ((1.0 + c) * stats::mean(&size) * r.powf(-alpha) / alpha + c * sig.powf(beta) * r.powf(beta - alpha) / (alpha - beta))
    } else {
        0.0
    };
    let parts = ToleranceParts {
        monte_carlo: 3.0 * (lhs_se * lhs_se + rhs.fine_se * rhs.fine_se).sqrt(),
        time_quadrature: (rhs.fine - rhs.coarse).abs() / 3.0,
        radial: rhs.radial,
        table: rhs.table,
        surrogate: rhs.surrogate,
        tail,
    };
    let tolerance = parts.monte_carlo + parts.time_quadrature + parts.radial + parts.table + parts.surrogate + parts.tail;
    let residual = (lhs - rhs.fine).abs();
    Ok(ItoReport {
        regime,
        integrability,
        lhs,
        lhs_std_error: lhs_se,
        rhs: rhs.fine,
        rhs_std_error: rhs.fine_se,
        rhs_coarse: rhs.coarse,
        residual,
        tolerance,
        tolerance_parts: parts,
        holder_constant: rhs.holder,
        pass: residual <= tolerance,
    })
}
