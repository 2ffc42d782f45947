//! Semigroup, measure generator and backward Kolmogorov checks for the
//! one-dimensional OU mean-field model.
//!
//! With `Y_t` the OU noise integral, the law at time `t` started from `μ` is
//! `q(μ, t, ·) = ∫ p(t, · - e^{tA}x - K_t M(μ)) dμ(x)`, and for a functional
//! `u` the semigroup is `φ(t, μ) = u(q(μ, t, ·))`. It solves
//! `∂_t φ(t, μ) = ℒ φ(t, ·)(μ)` with
//!
//! ```text
//! ℒF(μ) = ∫ [ ∂_v D(v) (Av + A'M(μ))
//!           + ∫_{|z|<δ} (D(v + Bz) - D(v) - ∂_v D(v) Bz) ν(dz) ] dμ(v),
//! ```
//!
//! where `D = δF/δm(μ)`. The jump compensator runs over the whole truncated
//! ball, matching the fully compensated driver used by the simulators.

use crate::density_fourier::{flow_shifts, invert_density, DensityGrid, GridParams};
use crate::error::{invalid, Error, Result};
use crate::functionals::{empirical_projection_grad, empirical_projection_hess, BuiltinFunctional, Functional, Profile};
use crate::measures::EmpiricalMeasure;
use crate::mckv_sim::{InitialLaw, LimitLawSampler, OUModel};
use crate::quad::RadialRule;
use crate::rng::{purpose, stream};
use crate::stable_noise::StableSpec;
use crate::stats;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Relative accuracy attributed to one density-backend expectation.
pub const DENSITY_REL_TOL: f64 = 1e-9;

/// How `φ(t, μ)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Quadrature against the flow density; linear `u`, d = 1.
    Density {
        #[serde(default)]
        grid: GridParams,
    },
    /// Empirical law of `samples` draws from the flow.
    MonteCarlo { samples: usize, seed: u64 },
}

/// A value with the error bar attached by the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub tolerance: f64,
}

/// Radial rule for the `ν`-integrals of the generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorQuadrature {
    /// Below this radius the integrand is replaced by its second-order Taylor term.
    pub r_min: f64,
    pub panels_per_octave: usize,
    pub order: usize,
    /// Allowed relative change under one refinement.
    pub rel_tol: f64,
}

impl Default for GeneratorQuadrature {
    fn default() -> Self {
        Self { r_min: 1e-3, panels_per_octave: 2, order: 8, rel_tol: 1e-6 }
    }
}

impl GeneratorQuadrature {
    pub fn refined(&self) -> Self {
        Self { r_min: self.r_min / 4.0, panels_per_octave: 2 * self.panels_per_octave, ..*self }
    }
}

/// Scalar model data used by the generators.
#[derive(Debug, Clone, Copy)]
struct Scalar {
    a: f64,
    a_prime: f64,
    b: f64,
}

fn scalar(model: &OUModel) -> Result<Scalar> {
    match model.flow.as_scalar() {
        Some((a, a_prime, b)) => Ok(Scalar { a, a_prime, b }),
        None => invalid("generators are implemented in dimension one"),
    }
}

/// `Σ_atoms w ∫_{r_min}^{hi} g(θ, r) r^{-1-α} dr + Σ_atoms w c2(θ) r_min^{2-α}/(2-α)`,
/// where `c2(θ)` is the coefficient of `r²` in `g` at the origin. One-dimensional
/// drivers; panels are split at `r = 1`.
pub fn levy_radial_integral(
    spec: &StableSpec,
    hi: f64,
    quad: &GeneratorQuadrature,
    mut g: impl FnMut(f64, f64) -> Result<f64>,
    mut c2: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    if spec.dim() != 1 {
        return invalid("radial integrals are one-dimensional");
    }
    let alpha = spec.alpha();
    let split = 1f64.min(hi).max(quad.r_min);
    let small = RadialRule::new(alpha, quad.r_min, split, quad.panels_per_octave, quad.order);
    let big = RadialRule::new(alpha, split, hi.max(split), quad.panels_per_octave, quad.order);
    let mut total = 0.0;
    for (theta, w) in spec.spectral().atoms() {
        let th = theta[0];
        for rule in [&small, &big] {
            for (&r, &wr) in rule.nodes.iter().zip(&rule.weights) {
                total += w * wr * g(th, r)?;
            }
        }
        total += w * c2(th)? * quad.r_min.powf(2.0 - alpha) / (2.0 - alpha);
    }
    Ok(total)
}

fn check_trunc(trunc: f64) -> Result<()> {
    if !(trunc > 0.0 && trunc.is_finite()) {
        return invalid(format!("generators need a finite truncation level, got {trunc}"));
    }
    Ok(())
}

/// `ℒF(μ)` from the flat derivative `D`, its slope and curvature in `v`.
pub fn generator_from_flat<D, G, H>(
    model: &OUModel,
    trunc: f64,
    mu: &EmpiricalMeasure,
    quad: &GeneratorQuadrature,
    mut flat: D,
    mut slope: G,
    mut curvature: H,
) -> Result<f64>
where
    D: FnMut(f64) -> Result<f64>,
    G: FnMut(f64) -> Result<f64>,
    H: FnMut(f64) -> Result<f64>,
{
    check_trunc(trunc)?;
    let s = scalar(model)?;
    let m = mu.mean()[0];
    let mut total = 0.0;
    for (v, w) in mu.iter() {
        let v = v[0];
        let d0 = flat(v)?;
        let d1 = slope(v)?;
        let d2 = curvature(v)?;
        let jumps = levy_radial_integral(
            &model.noise,
            trunc,
            quad,
            |th, r| {
                let h = s.b * th * r;
                Ok(flat(v + h)? - d0 - d1 * h)
            },
            |th| Ok(0.5 * d2 * (s.b * th).powi(2)),
        )?;
        total += w * (d1 * (s.a * v + s.a_prime * m) + jumps);
    }
    Ok(total)
}

/// Value plus the change under one quadrature refinement.
fn self_consistent(quad: &GeneratorQuadrature, mut f: impl FnMut(&GeneratorQuadrature) -> Result<f64>) -> Result<Estimate> {
    let coarse = f(quad)?;
    let fine = f(&quad.refined())?;
    let tolerance = (fine - coarse).abs();
    if tolerance > quad.rel_tol * fine.abs().max(1.0) {
        return Err(Error::Tolerance(format!("generator quadrature moved by {tolerance:e} under refinement")));
    }
    Ok(Estimate { value: fine, tolerance })
}

/// `ℒu(μ)` for a functional with first and second `v`-derivatives of its
/// flat derivative.
pub fn measure_generator_of(
    model: &OUModel,
    trunc: f64,
    u: &dyn Functional,
    mu: &EmpiricalMeasure,
    quad: &GeneratorQuadrature,
) -> Result<Estimate> {
    let unsupported = || Error::UnsupportedFunctional(format!("{} lacks a second derivative", u.name()));
    self_consistent(quad, |q| {
        generator_from_flat(
            model,
            trunc,
            mu,
            q,
            |v| Ok(u.flat_d1(mu, &[v])),
            |v| Ok(u.grad_d1(mu, &[v])[0]),
            |v| Ok(u.hess_d1(mu, &[v]).ok_or_else(unsupported)?[(0, 0)]),
        )
    })
}

/// Particle generator `L u^N(x)` with the empirical projection
/// `u^N(x) = u(μ^N_x)` and one independent jump per particle.
pub fn particle_generator(
    model: &OUModel,
    trunc: f64,
    u: &dyn Functional,
    x: &EmpiricalMeasure,
    quad: &GeneratorQuadrature,
) -> Result<Estimate> {
    check_trunc(trunc)?;
    let s = scalar(model)?;
    let m = x.mean()[0];
    self_consistent(quad, |q| {
        let mut total = 0.0;
        for i in 0..x.len() {
            let xi = x.atom(i)[0];
            let g = empirical_projection_grad(u, x, i)?[0];
            let h2 = empirical_projection_hess(u, x, i, i)?[(0, 0)];
            let jumps = levy_radial_integral(
                &model.noise,
                trunc,
                q,
                |th, r| {
                    let h = s.b * th * r;
                    Ok(u.move_delta(x, i, &[xi + h]) - g * h)
                },
                |th| Ok(0.5 * h2 * (s.b * th).powi(2)),
            )?;
            total += g * (s.a * xi + s.a_prime * m) + jumps;
        }
        Ok(total)
    })
}

/// Result of [`generator_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorGap {
    pub n: usize,
    pub particle: Estimate,
    pub measure: Estimate,
    /// `L u^N(x) - ℒu(μ^N_x)`.
    pub gap: f64,
    pub tolerance: f64,
}

/// Compare the particle generator on `u^N` with the measure generator on `u`
/// at the empirical measure of `x`.
pub fn generator_gap(
    model: &OUModel,
    trunc: f64,
    u: &dyn Functional,
    x: &EmpiricalMeasure,
    quad: &GeneratorQuadrature,
) -> Result<GeneratorGap> {
    if u.flat_d2(x, x.atom(0), x.atom(0)).is_none() {
        return Err(Error::UnsupportedFunctional(format!("{} has no second flat derivative", u.name())));
    }
    let particle = particle_generator(model, trunc, u, x, quad)?;
    let measure = measure_generator_of(model, trunc, u, x, quad)?;
    Ok(GeneratorGap {
        n: x.len(),
        particle,
        measure,
        gap: particle.value - measure.value,
        tolerance: particle.tolerance + measure.tolerance,
    })
}

/// `φ(t, μ) = u(law of X_t started from μ)` for the OU model.
#[derive(Debug)]
pub struct Semigroup {
    model: OUModel,
    trunc: f64,
    u: BuiltinFunctional,
    backend: Backend,
    grids: Mutex<HashMap<u64, Arc<DensityGrid>>>,
}

impl Clone for Semigroup {
    fn clone(&self) -> Self {
        Self::new(&self.model, self.trunc, self.u.clone(), self.backend).expect("validated on construction")
    }
}

impl Semigroup {
    pub fn new(model: &OUModel, trunc: f64, u: BuiltinFunctional, backend: Backend) -> Result<Self> {
        u.validate(model.dim())?;
        if !(trunc > 0.0) {
            return invalid(format!("truncation level must be positive, got {trunc}"));
        }
        match backend {
            Backend::Density { .. } => {
                if model.dim() != 1 {
                    return invalid("the density backend is one-dimensional");
                }
                if !matches!(u, BuiltinFunctional::Linear { .. }) {
                    return Err(Error::UnsupportedFunctional("the density backend evaluates linear functionals".into()));
                }
            }
            Backend::MonteCarlo { samples, .. } => {
                if samples < 2 {
                    return invalid("need at least two samples");
                }
            }
        }
        Ok(Self { model: model.clone(), trunc, u, backend, grids: Mutex::new(HashMap::new()) })
    }

    pub fn model(&self) -> &OUModel {
        &self.model
    }

    pub fn trunc(&self) -> f64 {
        self.trunc
    }

    pub fn functional(&self) -> &BuiltinFunctional {
        &self.u
    }

    pub fn horizon(&self) -> f64 {
        self.model.horizon
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon() * (1.0 + 1e-12)) {
            return invalid(format!("time {t} outside [0, {}]", self.horizon()));
        }
        Ok(())
    }

    fn profile(&self) -> Result<&Profile> {
        match &self.u {
            BuiltinFunctional::Linear { profile } => Ok(profile),
            other => Err(Error::UnsupportedFunctional(format!("{} is not linear", other.name()))),
        }
    }

    /// Density grid of `Y_t`, cached by time.
    pub fn grid(&self, t: f64) -> Result<Arc<DensityGrid>> {
        let Backend::Density { grid: params } = &self.backend else {
            return invalid("grids belong to the density backend");
        };
        let key = t.to_bits();
        if let Some(g) = self.grids.lock().expect("grid cache").get(&key) {
            return Ok(g.clone());
        }
        let g = Arc::new(invert_density(&self.model, self.trunc, t, params)?);
        self.grids.lock().expect("grid cache").insert(key, g.clone());
        Ok(g)
    }

    /// `E f(c + Y_t)` on the density grid.
    fn expect(&self, t: f64, f: impl Fn(f64) -> f64, c: f64) -> Result<f64> {
        Ok(self.grid(t)?.expectation(f, c))
    }

    pub fn phi(&self, t: f64, mu: &EmpiricalMeasure) -> Result<Estimate> {
        self.check_time(t)?;
        if t == 0.0 {
            return Ok(Estimate { value: self.u.eval(mu), tolerance: 0.0 });
        }
        match self.backend {
            Backend::Density { .. } => {
                let p = self.profile()?;
                let shifts = flow_shifts(&self.model, t, mu)?;
                let mut value = 0.0;
                let mut scale = 0.0;
                for (s, w) in shifts.iter().zip(mu.weights()) {
                    let e = self.expect(t, |y| p.value(&[y]), *s)?;
                    value += w * e;
                    scale += w * e.abs();
                }
                Ok(Estimate { value, tolerance: DENSITY_REL_TOL * (1.0 + scale) })
            }
            Backend::MonteCarlo { samples, seed } => {
                let law = self.sample_flow(t, mu, samples, seed)?;
                let value = self.u.eval(&law);
                let d: Vec<f64> = law.atoms().chunks(law.dim()).map(|x| self.u.flat_d1(&law, x)).collect();
                Ok(Estimate { value, tolerance: 3.0 * stats::std_error(&d) })
            }
        }
    }

    /// `m` draws of `X_t` started from `μ`: `e^{tA}x + K_t M(μ) + Y_t` with
    /// `x` drawn from `μ`.
    pub fn sample_flow(&self, t: f64, mu: &EmpiricalMeasure, m: usize, seed: u64) -> Result<EmpiricalMeasure> {
        self.check_time(t)?;
        let d = self.model.dim();
        if mu.dim() != d {
            return invalid("measure has the wrong dimension");
        }
        let p = self.model.flow.propagators(t.max(f64::MIN_POSITIVE))?;
        let mean = nalgebra::DVector::from_vec(mu.mean());
        let drift = &p.kernel * mean;
        let cum: Vec<f64> = mu
            .weights()
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let sampler = if t > 0.0 {
            let mut base = self.model.clone();
            base.mu0 = InitialLaw::Point { x: vec![0.0; d] };
            base.horizon = t;
            Some(LimitLawSampler::new(&base, self.trunc)?)
        } else {
            None
        };
        let mut out = vec![0.0; m * d];
        for (j, row) in out.chunks_mut(d).enumerate() {
            let pick: f64 = stream(seed, &[j as u64, purpose::AUX]).gen();
            let i = cum.partition_point(|&c| c <= pick * cum[cum.len() - 1]).min(mu.len() - 1);
            let x = nalgebra::DVector::from_column_slice(mu.atom(i));
            let base = &p.exp_a * x + &drift;
            if let Some(s) = &sampler {
                s.draw(seed, j as u64, row)?;
            }
            for q in 0..d {
                row[q] += base[q];
            }
        }
        EmpiricalMeasure::uniform(d, out)
    }

    /// Pieces of the closed-form flat derivative for linear `u`:
    /// `(e^{tA}, K_t, M(μ), Σ_x w E φ₀'(shift_x + Y_t))`.
    fn linear_parts(&self, t: f64, mu: &EmpiricalMeasure) -> Result<(f64, f64, f64, f64)> {
        let p = self.profile()?;
        let props = self.model.flow.propagators(t)?;
        let (ea, k) = (props.exp_a[(0, 0)], props.kernel[(0, 0)]);
        let shifts = flow_shifts(&self.model, t, mu)?;
        let mut slope = 0.0;
        for (s, w) in shifts.iter().zip(mu.weights()) {
            slope += w * self.expect(t, |y| p.grad(&[y])[0], *s)?;
        }
        Ok((ea, k, mu.mean()[0], slope))
    }

    fn require_density(&self) -> Result<()> {
        match self.backend {
            Backend::Density { .. } => Ok(()),
            Backend::MonteCarlo { .. } => Err(Error::UnsupportedFunctional(
                "closed-form flat derivatives need the density backend".into(),
            )),
        }
    }

    /// `δφ(t, ·)/δm(μ)(v) = E φ₀(e^{tA}v + K_t M(μ) + Y_t) + K_t v Σ_x w E φ₀'(shift_x + Y_t)`.
    pub fn flat_derivative_phi(&self, t: f64, mu: &EmpiricalMeasure, v: f64) -> Result<f64> {
        self.check_time(t)?;
        self.require_density()?;
        if t == 0.0 {
            return Ok(self.u.flat_d1(mu, &[v]));
        }
        let p = self.profile()?;
        let (ea, k, m, slope) = self.linear_parts(t, mu)?;
        Ok(self.expect(t, |y| p.value(&[y]), ea * v + k * m)? + k * v * slope)
    }

    /// [`Semigroup::flat_derivative_phi`] at several points.
    pub fn flat_derivative_phi_many(&self, t: f64, mu: &EmpiricalMeasure, vs: &[f64]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        self.require_density()?;
        if t == 0.0 {
            return Ok(vs.iter().map(|&v| self.u.flat_d1(mu, &[v])).collect());
        }
        let p = self.profile()?;
        let (ea, k, m, slope) = self.linear_parts(t, mu)?;
        vs.iter().map(|&v| Ok(self.expect(t, |y| p.value(&[y]), ea * v + k * m)? + k * v * slope)).collect()
    }

    /// `∂_v` of [`Semigroup::flat_derivative_phi`].
    pub fn flat_derivative_phi_grad(&self, t: f64, mu: &EmpiricalMeasure, v: f64) -> Result<f64> {
        self.check_time(t)?;
        self.require_density()?;
        if t == 0.0 {
            return Ok(self.u.grad_d1(mu, &[v])[0]);
        }
        let p = self.profile()?;
        let (ea, k, m, slope) = self.linear_parts(t, mu)?;
        Ok(ea * self.expect(t, |y| p.grad(&[y])[0], ea * v + k * m)? + k * slope)
    }

    /// Directional derivative of `φ(t, ·)` towards `δ_v`, centered so that
    /// `∫ D dμ = 0`: Richardson-extrapolated difference along
    /// `(1 - h)μ + h δ_v`.
    pub fn flat_derivative_phi_fd(&self, t: f64, mu: &EmpiricalMeasure, v: f64, h: f64) -> Result<f64> {
        if !(h > 0.0 && h < 0.5) {
            return invalid("step must lie in (0, 1/2)");
        }
        let dirac = EmpiricalMeasure::dirac(&[v])?;
        let base = self.phi(t, mu)?.value;
        let step = |h: f64| -> Result<f64> {
            let mixed = EmpiricalMeasure::mixture(1.0 - h, mu, &dirac)?;
            Ok((self.phi(t, &mixed)?.value - base) / h)
        };
        let (d1, d2) = (step(h)?, step(h / 2.0)?);
        Ok(2.0 * d2 - d1)
    }

    /// `ℒφ(s, ·)(μ)`.
    pub fn measure_generator(&self, s: f64, mu: &EmpiricalMeasure, quad: &GeneratorQuadrature) -> Result<Estimate> {
        self.check_time(s)?;
        if s == 0.0 {
            return measure_generator_of(&self.model, self.trunc, &self.u, mu, quad);
        }
        self.require_density()?;
        let p = self.profile()?;
        let (ea, k, m, slope) = self.linear_parts(s, mu)?;
        let c = k * m;
        let flat = |v: f64| Ok(self.expect(s, |y| p.value(&[y]), ea * v + c)? + k * v * slope);
        let grad = |v: f64| Ok(ea * self.expect(s, |y| p.grad(&[y])[0], ea * v + c)? + k * slope);
        let curv = |v: f64| Ok(ea * ea * self.expect(s, |y| p.hess(&[y])[(0, 0)], ea * v + c)?);
        let est = self_consistent(quad, |q| generator_from_flat(&self.model, self.trunc, mu, q, flat, grad, curv))?;
        Ok(Estimate { value: est.value, tolerance: est.tolerance + DENSITY_REL_TOL * (1.0 + est.value.abs()) })
    }
}

/// Settings for [`pde_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeOptions {
    /// Step of the centered time difference.
    pub h: f64,
    pub quad: GeneratorQuadrature,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self { h: 0.02, quad: GeneratorQuadrature::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdePoint {
    /// Forward time `t`; the semigroup is evaluated at `T - t`.
    pub t: f64,
    pub measure: usize,
    pub phi: f64,
    pub time_derivative: f64,
    pub generator: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeReport {
    pub points: Vec<PdePoint>,
    pub max_residual: f64,
    pub max_tolerance: f64,
    pub pass: bool,
}

/// `|∂_s φ(s, μ) - ℒφ(s, ·)(μ)|` at `s = T - t` over the grid of times and
/// measures. The time derivative uses steps `h` and `h/2`; their difference
/// bounds the truncation error of the finer one, which is reported.
pub fn pde_residual(sg: &Semigroup, times: &[f64], measures: &[EmpiricalMeasure], opts: &PdeOptions) -> Result<PdeReport> {
    let horizon = sg.horizon();
    let mut points = Vec::new();
    for &t in times {
        let s = horizon - t;
        if !(s > opts.h && s + opts.h <= horizon * (1.0 + 1e-12)) {
            return invalid(format!("time {t} leaves no room for the step {}", opts.h));
        }
        for (idx, mu) in measures.iter().enumerate() {
            let phi = |s: f64| sg.phi(s, mu);
            let centered = |h: f64| -> Result<(f64, f64)> {
                let (a, b) = (phi(s + h)?, phi(s - h)?);
                Ok(((a.value - b.value) / (2.0 * h), (a.tolerance + b.tolerance) / (2.0 * h)))
            };
            let (coarse, _) = centered(opts.h)?;
            let (fine, noise) = centered(opts.h / 2.0)?;
            let gen = sg.measure_generator(s, mu, &opts.quad)?;
            let residual = (fine - gen.value).abs();
            let tolerance = (fine - coarse).abs() + noise + gen.tolerance + 1e-10;
            points.push(PdePoint {
                t,
                measure: idx,
                phi: phi(s)?.value,
                time_derivative: fine,
                generator: gen.value,
                residual,
                tolerance,
                pass: residual <= tolerance,
            });
        }
    }
    let max_residual = points.iter().map(|p| p.residual).fold(0.0, f64::max);
    let max_tolerance = points.iter().map(|p| p.tolerance).fold(0.0, f64::max);
    let pass = points.iter().all(|p| p.pass);
    Ok(PdeReport { points, max_residual, max_tolerance, pass })
}

/// `s ↦ φ(T - s, μ_s)` along the exact flow, with `μ_s` represented by
/// flow samples sharing random numbers across `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constancy {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub tolerances: Vec<f64>,
    /// Largest deviation from `φ(T, μ)`.
    pub max_deviation: f64,
    pub total_variation: f64,
    pub pass: bool,
}

pub fn flow_constancy(sg: &Semigroup, mu: &EmpiricalMeasure, points: usize, samples: usize, seed: u64) -> Result<Constancy> {
    if points < 2 {
        return invalid("need at least two time points");
    }
    let horizon = sg.horizon();
    let reference = sg.phi(horizon, mu)?;
    let times: Vec<f64> = (0..points).map(|k| horizon * k as f64 / (points - 1) as f64).collect();
    let mut values = Vec::with_capacity(points);
    let mut tolerances = Vec::with_capacity(points);
    for &s in &times {
        if s == 0.0 {
            values.push(reference.value);
            tolerances.push(reference.tolerance);
            continue;
        }
        let law = sg.sample_flow(s, mu, samples, seed)?;
        let rest = horizon - s;
        let est = sg.phi(rest, &law)?;
        // Sampling error of the linear statistic through the flat derivative.
        let d = match sg.backend {
            Backend::Density { .. } => sg.flat_derivative_phi_many(rest, &law, law.atoms())?,
            Backend::MonteCarlo { .. } => law.atoms().iter().map(|&x| sg.u.flat_d1(&law, &[x])).collect(),
        };
        values.push(est.value);
        tolerances.push(est.tolerance + 4.0 * stats::std_error(&d));
    }
    let max_deviation = values.iter().map(|v| (v - reference.value).abs()).fold(0.0, f64::max);
    let total_variation = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let pass = values.iter().zip(&tolerances).all(|(v, tol)| (v - reference.value).abs() <= tol + reference.tolerance);
    Ok(Constancy { times, values, tolerances, max_deviation, total_variation, pass })
}
