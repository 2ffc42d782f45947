//! Characteristic functions and FFT densities of the stable OU marginal
//! `Y_t = ∫_0^t e^{(t-s)A} B dZ_s`.
//!
//! `E e^{i⟨λ, Y_t⟩} = exp(∫_0^t ψ(Bᵀ e^{sAᵀ} λ) ds)` where `ψ` is the symbol
//! of the (possibly truncated) compensated driver. In dimension one the
//! density is recovered on a periodic grid `x_j = -L + j Δx` by
//!
//! ```text
//! p_j = (1/2L) Σ_k (-1)^k χ(kπ/L) e^{-2πikj/n},
//! ```
//!
//! which is exact for the periodisation `Σ_m p(x + 2mL)` up to the frequency
//! cutoff. Heavy tails make the periodisation visible in moments, so
//! [`DensityGrid::expectation`] removes the folded tails and adds the missing
//! ones using the asymptotic `p(x) ~ c_± |x|^{-1-α}`.

use crate::error::{invalid, Error, Result};
use crate::linflow::expm;
use crate::measures::EmpiricalMeasure;
use crate::mckv_sim::OUModel;
use crate::quad;
use crate::stable_noise::StableSpec;
use crate::stats::loglog_fit;
use nalgebra::DVector;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `λ ↦ E e^{i⟨λ, Y_t⟩}` for the OU marginal at time `t`.
#[derive(Debug, Clone)]
pub struct CharFunction {
    model: OUModel,
    spec: StableSpec,
    level: f64,
    t: f64,
}

impl CharFunction {
    pub fn new(model: &OUModel, trunc: f64, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return invalid(format!("time must be positive, got {t}"));
        }
        let spec = model.noise.with_trunc(trunc.max(model.noise.eps()))?;
        if trunc.is_infinite() && !spec.is_symmetric() && spec.alpha() <= 1.0 {
            return invalid("untruncated asymmetric driver needs alpha > 1");
        }
        Ok(Self { model: model.clone(), spec, level: trunc, t })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn symbol(&self, lambda: &[f64]) -> Complex64 {
        self.spec.truncated_symbol(lambda, self.level).expect("validated driver")
    }

    /// `log χ(λ) = ∫_0^t ψ(Bᵀ e^{sAᵀ} λ) ds`.
    pub fn log_value(&self, lambda: &[f64]) -> Result<Complex64> {
        if lambda.len() != self.dim() {
            return invalid("frequency has the wrong dimension");
        }
        if lambda.iter().all(|&l| l == 0.0) {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let t = self.t;
        let alpha = self.alpha();
        if let Some((a, _, b)) = self.model.flow.as_scalar() {
            let base = self.symbol(&[b * lambda[0]]);
            if a == 0.0 {
                return Ok(base * t);
            }
            if self.level.is_infinite() {
                // ψ(cλ) = c^α ψ(λ) for c > 0.
                return Ok(base * ((alpha * a * t).exp_m1() / (alpha * a)));
            }
            let scale = base.norm().max(1e-300) * t;
            return Ok(quad::adaptive(|s| self.symbol(&[b * (s * a).exp() * lambda[0]]), 0.0, t, 1e-13 * scale, 1e-11));
        }
        let lam = DVector::from_column_slice(lambda);
        let flow = &self.model.flow;
        let mut err = None;
        let scale = self.symbol(lambda).norm().max(1e-300) * t;
        let v = quad::adaptive(
            |s| match expm(&(flow.a.transpose() * s)) {
                Ok(e) => {
                    let q = flow.b.transpose() * e * &lam;
                    self.symbol(q.as_slice())
                }
                Err(e) => {
                    err.get_or_insert(e);
                    Complex64::new(0.0, 0.0)
                }
            },
            0.0,
            t,
            1e-13 * scale,
            1e-11,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    pub fn value(&self, lambda: &[f64]) -> Result<Complex64> {
        Ok(self.log_value(lambda)?.exp())
    }

    /// `∫_0^t |b e^{sa}|^α ds` in dimension one.
    pub fn effective_time(&self) -> Result<f64> {
        let Some((a, _, b)) = self.model.flow.as_scalar() else {
            return invalid("effective time is one-dimensional");
        };
        let alpha = self.alpha();
        let growth = if a == 0.0 { self.t } else { (alpha * a * self.t).exp_m1() / (alpha * a) };
        Ok(b.abs().powf(alpha) * growth)
    }

    /// Constants `c_±` with `p(x) ~ c_± |x|^{-1-α}` as `x → ±∞`; zero for a
    /// truncated driver, whose tails are lighter than any power.
    pub fn tail_constants(&self) -> Result<(f64, f64)> {
        let Some((_, _, b)) = self.model.flow.as_scalar() else {
            return invalid("tail constants are one-dimensional");
        };
        if self.level.is_finite() {
            return Ok((0.0, 0.0));
        }
        let te = self.effective_time()?;
        let (mut plus, mut minus) = (0.0, 0.0);
        for (theta, w) in self.spec.spectral().atoms() {
            if theta[0] * b > 0.0 {
                plus += w;
            } else {
                minus += w;
            }
        }
        Ok((plus * te, minus * te))
    }

    /// Smallest `|λ|` beyond which `|χ| < tol` along the axis, d = 1.
    pub fn decay_cutoff(&self, tol: f64) -> Result<f64> {
        let target = tol.ln();
        let below = |l: f64| -> Result<bool> { Ok(self.log_value(&[l])?.re < target) };
        let mut hi = 1.0;
        let mut guard = 0;
        while !below(hi)? {
            hi *= 2.0;
            guard += 1;
            if guard > 60 {
                return Err(Error::Capacity("characteristic function does not decay".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if below(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Largest `η` with `|χ(λ)| ≤ exp(-t η min(|λ|^α, |λ|²))` on the given
    /// frequencies, d = 1.
    pub fn fitted_decay_rate(&self, lambdas: &[f64]) -> Result<f64> {
        let alpha = self.alpha();
        let mut eta = f64::INFINITY;
        for &l in lambdas {
            let m = l.abs();
            if m == 0.0 {
                continue;
            }
            let rate = -self.log_value(&[l])?.re / (self.t * m.powf(alpha).min(m * m));
            eta = eta.min(rate);
        }
        Ok(eta)
    }
}

/// `E e^{i⟨λ, Y_t⟩}` for the driver truncated at `trunc`.
pub fn char_function(model: &OUModel, trunc: f64, t: f64, lambda: &[f64]) -> Result<Complex64> {
    CharFunction::new(model, trunc, t)?.value(lambda)
}

/// Grid selection for [`invert_density`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    /// Half-width `L`; chosen from the tail quantile when absent.
    pub extent: Option<f64>,
    /// Number of points (a power of two); chosen from the decay when absent.
    pub points: Option<usize>,
    pub extent_factor: f64,
    pub tail_level: f64,
    /// Largest admissible density on the outer percent of the grid.
    pub boundary_tol: f64,
    /// `|χ|` below which frequencies are dropped.
    pub cutoff: f64,
    pub max_points: usize,
    /// Grid points per Nyquist point of the frequency cutoff.
    pub oversample: usize,
    /// Extent doublings tried before reporting a small grid.
    pub retries: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            extent: None,
            points: None,
            extent_factor: 4.0,
            tail_level: 1e-4,
            boundary_tol: 1e-8,
            cutoff: 1e-17,
            max_points: 1 << 22,
            oversample: 4,
            retries: 3,
        }
    }
}

/// Density of `Y_t` on a periodic grid with its first two derivatives.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub t: f64,
    pub extent: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// `χ(kπ/L)` up to the frequency cutoff.
    spectrum: Vec<Complex64>,
    alpha: f64,
    tails: (f64, f64),
}

impl DensityGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.extent + j as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.x(j)).collect()
    }

    pub fn derivative(&self, order: usize) -> &[f64] {
        match order {
            0 => &self.values,
            1 => &self.d1,
            2 => &self.d2,
            _ => panic!("derivatives up to order two are stored"),
        }
    }

    /// Tail constants used by the moment corrections.
    pub fn tail_constants(&self) -> (f64, f64) {
        self.tails
    }

    /// Riemann sum of `p`, which is the trapezoid rule on the periodic grid.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `|p|` on the outer percent of the grid at either end.
    pub fn boundary_density(&self) -> f64 {
        let k = (self.len() / 100).max(1);
        self.values[..k].iter().chain(&self.values[self.len() - k..]).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Band-limited interpolant of `∂^order p` at any `x`.
    pub fn eval(&self, x: f64, order: u32) -> f64 {
        let dl = PI / self.extent;
        let mut acc = if order == 0 { self.spectrum[0].re } else { 0.0 };
        let mut sum = Complex64::new(0.0, 0.0);
        for (k, &c) in self.spectrum.iter().enumerate().skip(1) {
            let lam = k as f64 * dl;
            let factor = Complex64::new(0.0, -lam).powu(order);
            sum += c * factor * Complex64::from_polar(1.0, -lam * x);
        }
        acc += 2.0 * sum.re;
        acc / (2.0 * self.extent)
    }

    /// Cubic Hermite interpolation of `p` from the value and slope grids;
    /// `None` outside the grid.
    pub fn interp(&self, x: f64) -> Option<f64> {
        self.hermite(x, &self.values, &self.d1)
    }

    /// Cubic Hermite interpolation of `p'` from the first and second derivatives.
    pub fn interp_d1(&self, x: f64) -> Option<f64> {
        self.hermite(x, &self.d1, &self.d2)
    }

    fn hermite(&self, x: f64, f: &[f64], df: &[f64]) -> Option<f64> {
        let pos = (x + self.extent) / self.dx;
        if !(pos >= 0.0) || pos > (self.len() - 1) as f64 {
            return None;
        }
        let j = (pos.floor() as usize).min(self.len() - 2);
        let s = pos - j as f64;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        Some(h00 * f[j] + h10 * self.dx * df[j] + h01 * f[j + 1] + h11 * self.dx * df[j + 1])
    }

    /// Quintic Hermite interpolant of `p` on cell `j` at local coordinate `s`,
    /// wrapping periodically at the right end.
    fn quintic(&self, j: usize, s: f64) -> f64 {
        let k = (j + 1) % self.len();
        let (s2, s3) = (s * s, s * s * s);
        let (s4, s5) = (s3 * s, s3 * s2);
        let h = self.dx;
        let basis = [
            1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
            s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
            0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5),
            10.0 * s3 - 15.0 * s4 + 6.0 * s5,
            -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
            0.5 * (s3 - 2.0 * s4 + s5),
        ];
        basis[0] * self.values[j]
            + basis[1] * h * self.d1[j]
            + basis[2] * h * h * self.d2[j]
            + basis[3] * self.values[k]
            + basis[4] * h * self.d1[k]
            + basis[5] * h * h * self.d2[k]
    }

    /// `E f(Y_t + shift)` with corrections for the folded and missing tails.
    /// `f` must grow slower than `|x|^α` and may be non-smooth at 0 only.
    pub fn expectation(&self, f: impl Fn(f64) -> f64, shift: f64) -> f64 {
        let kink = -shift;
        let dx = self.dx;
        let mut grid = 0.0;
        let light = self.tails == (0.0, 0.0);
        let floor = 1e-14 * self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..self.len() {
            // Light tails: cells where the density is below rounding carry nothing.
            if light && self.values[j].abs() < floor && self.values[(j + 1) % self.len()].abs() < floor {
                continue;
            }
            let x0 = self.x(j);
            let g = |x: f64| f(x + shift) * self.quintic(j, (x - x0) / dx);
            grid += if kink > x0 && kink < x0 + dx {
                quad::gl(24).integrate(x0, kink, g) + quad::gl(24).integrate(kink, x0 + dx, g)
            } else {
                quad::gl(4).integrate(x0, x0 + dx, g)
            };
        }
        let (cp, cm) = self.tails;
        if cp == 0.0 && cm == 0.0 {
            return grid;
        }
        let l = self.extent;
        let a = self.alpha;
        // Periodic copies of the tails that landed inside the grid.
        const COPIES: usize = 64;
        let extra = |x: f64| {
            let mut s = 0.0;
            for m in 1..COPIES {
                let shift = 2.0 * m as f64 * l;
                s += cp * (x + shift).powf(-1.0 - a) + cm * (shift - x).powf(-1.0 - a);
            }
            let start = 2.0 * (COPIES as f64 - 0.5) * l;
            s + (cp * (x + start).powf(-a) + cm * (start - x).powf(-a)) / (2.0 * l * a)
        };
        let g = |x: f64| f(x + shift) * extra(x);
        let scale = grid.abs().max(1e-300);
        let folded = quad::adaptive(g, -l, 0.0, 1e-14 * scale, 1e-10) + quad::adaptive(g, 0.0, l, 1e-14 * scale, 1e-10);
        // Missing tails, in the variable x = L e^v.
        let vmax = 700.0 / (a + 1.0);
        let tail = quad::adaptive(
            |v: f64| {
                let x = l * v.exp();
                x.powf(-a) * (cp * f(x + shift) + cm * f(-x + shift))
            },
            0.0,
            vmax,
            1e-14 * scale,
            1e-10,
        );
        grid - folded + tail
    }

    /// `∫ |x|^γ |∂^order p(x)| dx`.
    pub fn abs_moment(&self, gamma: f64, order: usize) -> f64 {
        if order == 0 {
            return self.expectation(|x| x.abs().powf(gamma), 0.0);
        }
        // Derivative tails decay like |x|^{-1-α-order}: negligible at grid scale.
        self.derivative(order)
            .iter()
            .enumerate()
            .map(|(j, p)| self.x(j).abs().powf(gamma) * p.abs())
            .sum::<f64>()
            * self.dx
    }
}

fn inverse_fft(spectrum: &[Complex64], n: usize, extent: f64, order: u32, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let dl = PI / extent;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, slot) in buf.iter_mut().enumerate() {
        let kk = if k < n / 2 { k as i64 } else { k as i64 - n as i64 };
        if kk == -(n as i64) / 2 {
            continue;
        }
        let chi = match spectrum.get(kk.unsigned_abs() as usize) {
            Some(c) if kk >= 0 => *c,
            Some(c) => c.conj(),
            None => continue,
        };
        let sign = if kk % 2 == 0 { 1.0 } else { -1.0 };
        let factor = Complex64::new(0.0, -(kk as f64) * dl).powu(order);
        *slot = chi * factor * (sign / (2.0 * extent));
    }
    planner.plan_fft_forward(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Heuristic half-width: `factor * (tail quantile at tail_level)`.
fn default_extent(cf: &CharFunction, params: &GridParams) -> Result<f64> {
    let alpha = cf.alpha();
    let te = cf.effective_time()?;
    let w = cf.spec.spectral().total_weight();
    let core = (te * w * cf.spec.kernels().fc(f64::INFINITY)).powf(1.0 / alpha);
    let mut q = (te * w / (alpha * params.tail_level)).powf(1.0 / alpha);
    if cf.level.is_finite() {
        let (a, _, b) = cf.model.flow.as_scalar().expect("one-dimensional");
        let reach = cf.level * b.abs() * (a * cf.t).exp().max(1.0);
        q = q.min(2.0 * reach);
    }
    Ok(params.extent_factor * q.max(10.0 * core))
}

/// FFT inversion of the characteristic function of `Y_t`, d = 1.
pub fn invert_density(model: &OUModel, trunc: f64, t: f64, params: &GridParams) -> Result<DensityGrid> {
    if model.dim() != 1 {
        return invalid("density inversion is implemented in dimension one");
    }
    let cf = CharFunction::new(model, trunc, t)?;
    let mut extent = match params.extent {
        Some(l) if l > 0.0 => l,
        Some(l) => return invalid(format!("extent must be positive, got {l}")),
        None => default_extent(&cf, params)?,
    };
    let lmax = cf.decay_cutoff(params.cutoff)?;
    let tails = cf.tail_constants()?;
    let mut planner = FftPlanner::new();
    let mut attempt = 0;
    loop {
        let dl = PI / extent;
        let kmax = (lmax / dl).ceil() as usize;
        let n = match params.points {
            Some(n) if n.is_power_of_two() && n >= 8 => n,
            Some(n) => return invalid(format!("grid size {n} must be a power of two >= 8")),
            None => (2 * params.oversample.max(1) * kmax).next_power_of_two().max(256),
        };
        if n > params.max_points {
            return Err(Error::Capacity(format!("grid of {n} points exceeds {}", params.max_points)));
        }
        let spectrum = (0..=kmax.min(n / 2 - 1)).map(|k| cf.value(&[k as f64 * dl])).collect::<Result<Vec<_>>>()?;
        let grid = DensityGrid {
            t,
            extent,
            dx: 2.0 * extent / n as f64,
            values: inverse_fft(&spectrum, n, extent, 0, &mut planner),
            d1: inverse_fft(&spectrum, n, extent, 1, &mut planner),
            d2: inverse_fft(&spectrum, n, extent, 2, &mut planner),
            spectrum,
            alpha: cf.alpha(),
            tails,
        };
        let boundary = grid.boundary_density();
        if boundary <= params.boundary_tol {
            return Ok(grid);
        }
        if params.extent.is_some() || attempt >= params.retries {
            return Err(Error::GridTooSmall {
                message: format!("boundary density {boundary:e} exceeds {:e}", params.boundary_tol),
                suggested_extent: 2.0 * extent,
            });
        }
        attempt += 1;
        extent *= 2.0;
    }
}

/// Centered time difference `(p(t+h) - p(t-h)) / 2h` on the grid of `base`.
pub fn density_time_derivative(model: &OUModel, trunc: f64, base: &DensityGrid, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h < base.t) {
        return invalid("time step must lie in (0, t)");
    }
    let params = GridParams { extent: Some(base.extent), points: Some(base.len()), boundary_tol: f64::INFINITY, ..GridParams::default() };
    let plus = invert_density(model, trunc, base.t + h, &params)?;
    let minus = invert_density(model, trunc, base.t - h, &params)?;
    Ok(plus.values.iter().zip(&minus.values).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Scaling check of `∫ |x|^γ |∂^order p(t, x)| dx` over `times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub gamma: f64,
    pub order: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    /// `(γ - order) / α`.
    pub expected: f64,
    /// Range of `value / t^expected` over the grid.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// One-sided check: slope at least `expected - 0.05` and finite ratios.
    pub pass: bool,
}

pub fn moment_estimate_check(
    model: &OUModel,
    trunc: f64,
    times: &[f64],
    gamma: f64,
    order: usize,
    params: &GridParams,
) -> Result<MomentCheck> {
    let alpha = model.noise.alpha();
    if !(gamma >= 0.0 && gamma < alpha) {
        return invalid(format!("moment order {gamma} must lie in [0, alpha = {alpha})"));
    }
    if order > 2 {
        return invalid("derivative order must be at most two");
    }
    if times.len() < 2 || times.iter().any(|&t| !(t > 0.0)) {
        return invalid("need at least two positive times");
    }
    let values = times
        .iter()
        .map(|&t| Ok(invert_density(model, trunc, t, params)?.abs_moment(gamma, order)))
        .collect::<Result<Vec<f64>>>()?;
    let fit = loglog_fit(times, &values).ok_or_else(|| Error::InvalidArgument("degenerate time grid".into()))?;
    let expected = (gamma - order as f64) / alpha;
    let ratios: Vec<f64> = times.iter().zip(&values).map(|(t, v)| v / t.powf(expected)).collect();
    let ratio_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_max = ratios.iter().copied().fold(0.0, f64::max);
    let pass = fit.slope >= expected - 0.05 && ratio_max.is_finite() && ratio_min > 0.0;
    Ok(MomentCheck { gamma, order, times: times.to_vec(), values, slope: fit.slope, expected, ratio_min, ratio_max, pass })
}

/// Atom shifts `e^{tA} x + K_t M(μ)` of the flow density.
pub fn flow_shifts(model: &OUModel, t: f64, mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    if model.dim() != 1 || mu.dim() != 1 {
        return invalid("flow density is one-dimensional");
    }
    let p = model.flow.propagators(t)?;
    let (ea, k) = (p.exp_a[(0, 0)], p.kernel[(0, 0)]);
    let m = mu.mean()[0];
    Ok(mu.atoms().iter().map(|x| ea * x + k * m).collect())
}

/// `q(μ, t, y) = ∫ p(t, y - e^{tA}x - K_t M(μ)) dμ(x)` at each `y`.
pub fn flow_density(
    model: &OUModel,
    trunc: f64,
    t: f64,
    mu: &EmpiricalMeasure,
    ys: &[f64],
    params: &GridParams,
) -> Result<Vec<f64>> {
    let grid = invert_density(model, trunc, t, params)?;
    flow_density_on(&grid, model, mu, ys)
}

/// [`flow_density`] for a precomputed grid at the right time.
pub fn flow_density_on(grid: &DensityGrid, model: &OUModel, mu: &EmpiricalMeasure, ys: &[f64]) -> Result<Vec<f64>> {
    let shifts = flow_shifts(model, grid.t, mu)?;
    ys.iter()
        .map(|&y| {
            shifts.iter().zip(mu.weights()).try_fold(0.0, |acc, (s, w)| match grid.interp(y - s) {
                Some(p) => Ok(acc + w * p),
                None => Err(Error::GridTooSmall {
                    message: format!("point {y} shifted by {s} leaves the grid"),
                    suggested_extent: 2.0 * (grid.extent + s.abs()),
                }),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mckv_sim::InitialLaw;

    #[test]
    fn cauchy_density_is_recovered() {
        let noise = StableSpec::symmetric_1d(1.0, 0.01, f64::INFINITY).unwrap();
        let model = OUModel::scalar(0.0, 0.0, 1.0, noise, InitialLaw::Point { x: vec![0.0] }, 1.0).unwrap();
        let grid = invert_density(&model, f64::INFINITY, 1.0, &GridParams { boundary_tol: 1e-6, ..GridParams::default() }).unwrap();
        // ψ(λ) = -(π/2)|λ|, a Cauchy law with scale π/2.
        let g = PI / 2.0;
        for x in [0.0, 0.7, -2.0, 5.0] {
            let exact = g / (PI * (g * g + x * x));
            assert!((grid.eval(x, 0) - exact).abs() < 1e-9);
        }
    }
}
