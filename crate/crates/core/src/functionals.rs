//! Measure functionals with flat derivatives, the built-in test functionals
//! and the derivative formulas of the empirical projection
//! `u^N(x_1, ..., x_N) = u((1/N) sum_k delta_{x_k})`.
//!
//! The smoothing cutoff `chi_eps` used by [`BuiltinFunctional::SmoothedPower`]
//! is the quintic smoothstep `s(t) = 6t^5 - 15t^4 + 10t^3` in
//! `t = (|x| - eps) / eps`, clamped to `[0, 1]`: it vanishes on `|x| <= eps`,
//! equals one on `|x| >= 2 eps` and is `C^2` everywhere.

use crate::error::{invalid, Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::quad;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A measure functional `u` together with its flat derivatives.
///
/// `flat_d1(mu, v)` is `du/dm(mu)(v)`, `grad_d1` its gradient in `v`,
/// `hess_d1` the Hessian in `v`. Second-order flat derivatives are optional.
pub trait Functional: Send + Sync {
    fn eval(&self, mu: &EmpiricalMeasure) -> f64;
    fn flat_d1(&self, mu: &EmpiricalMeasure, v: &[f64]) -> f64;
    fn grad_d1(&self, mu: &EmpiricalMeasure, v: &[f64]) -> Vec<f64>;

    fn hess_d1(&self, _mu: &EmpiricalMeasure, _v: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn flat_d2(&self, _mu: &EmpiricalMeasure, _v: &[f64], _w: &[f64]) -> Option<f64> {
        None
    }

    /// `d_w d_v d^2u/dm^2(mu)(v, w)`, row index over `v`, column over `w`.
    fn cross_grad_d2(&self, _mu: &EmpiricalMeasure, _v: &[f64], _w: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Lipschitz constant of `v -> du/dm(mu)(v)`, when finite.
    fn lipschitz_d1(&self) -> Option<f64>;

    /// Lipschitz constant of `d^2u/dm^2(mu)(., .)` in each argument.
    fn lipschitz_d2(&self) -> Option<f64>;

    /// Exponent `beta` with `|du/dm(mu)(v)| <= C (1 + |v|^beta)`.
    fn growth_order(&self) -> f64;

    /// Holder exponent of `v -> d_v du/dm(mu)(v)`.
    fn grad_holder_exponent(&self) -> f64 {
        1.0
    }

    /// True when the flat derivative does not depend on the measure.
    fn measure_independent(&self) -> bool {
        false
    }

    /// `u(mu') - u(mu)` where `mu'` moves atom `i` to `y`.
    fn move_delta(&self, mu: &EmpiricalMeasure, i: usize, y: &[f64]) -> f64 {
        let moved = mu.with_atom(i, y);
        self.eval(&moved) - self.eval(mu)
    }

    fn name(&self) -> String;
}

/// Scalar profiles used to build the built-in functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `c`.
    Constant { value: f64 },
    /// `s (sqrt(1 + |x|^2 / s^2) - 1)`; 1-Lipschitz, smooth, linear growth.
    Sqrt1p { scale: f64 },
    /// `amp * sin(w . x)`.
    Sine { amp: f64, freq: Vec<f64> },
    /// `amp * cos(w . x)`.
    Cosine { amp: f64, freq: Vec<f64> },
    /// `w . x`.
    Affine { slope: Vec<f64> },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl Profile {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Profile::Constant { value } if !value.is_finite() => invalid("constant must be finite"),
            Profile::Sqrt1p { scale } if !(*scale > 0.0 && scale.is_finite()) => invalid("scale must be positive"),
            Profile::Sine { freq, amp } | Profile::Cosine { freq, amp } if freq.len() != dim || !amp.is_finite() => {
                invalid(format!("frequency must have length {dim}"))
            }
            Profile::Affine { slope } if slope.len() != dim => invalid(format!("slope must have length {dim}")),
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Sqrt1p { scale } => {
                let r2 = dot(x, x) / (scale * scale);
                // s (sqrt(1 + r2) - 1) without cancellation.
                scale * r2 / ((1.0 + r2).sqrt() + 1.0)
            }
            Profile::Sine { amp, freq } => amp * dot(freq, x).sin(),
            Profile::Cosine { amp, freq } => amp * dot(freq, x).cos(),
            Profile::Affine { slope } => dot(slope, x),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Profile::Constant { .. } => vec![0.0; x.len()],
            Profile::Sqrt1p { scale } => {
                let q = (1.0 + dot(x, x) / (scale * scale)).sqrt();
                x.iter().map(|v| v / (scale * q)).collect()
            }
            Profile::Sine { amp, freq } => {
                let c = amp * dot(freq, x).cos();
                freq.iter().map(|w| c * w).collect()
            }
            Profile::Cosine { amp, freq } => {
                let s = -amp * dot(freq, x).sin();
                freq.iter().map(|w| s * w).collect()
            }
            Profile::Affine { slope } => slope.clone(),
        }
    }

    pub fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        match self {
            Profile::Constant { .. } | Profile::Affine { .. } => DMatrix::zeros(d, d),
            Profile::Sqrt1p { scale } => {
                let q = (1.0 + dot(x, x) / (scale * scale)).sqrt();
                DMatrix::from_fn(d, d, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    delta / (scale * q) - x[i] * x[j] / (scale.powi(3) * q.powi(3))
                })
            }
            Profile::Sine { amp, freq } => {
                let s = -amp * dot(freq, x).sin();
                DMatrix::from_fn(d, d, |i, j| s * freq[i] * freq[j])
            }
            Profile::Cosine { amp, freq } => {
                let c = -amp * dot(freq, x).cos();
                DMatrix::from_fn(d, d, |i, j| c * freq[i] * freq[j])
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Profile::Constant { .. } => 0.0,
            Profile::Sqrt1p { .. } => 1.0,
            Profile::Sine { amp, freq } | Profile::Cosine { amp, freq } => amp.abs() * norm(freq),
            Profile::Affine { slope } => norm(slope),
        }
    }

    /// Sup norm of the Hessian.
    pub fn hess_bound(&self) -> f64 {
        match self {
            Profile::Constant { .. } | Profile::Affine { .. } => 0.0,
            Profile::Sqrt1p { scale } => 1.0 / scale,
            Profile::Sine { amp, freq } | Profile::Cosine { amp, freq } => amp.abs() * dot(freq, freq),
        }
    }

    pub fn growth_order(&self) -> f64 {
        match self {
            Profile::Constant { .. } | Profile::Sine { .. } | Profile::Cosine { .. } => 0.0,
            Profile::Sqrt1p { .. } | Profile::Affine { .. } => 1.0,
        }
    }

    pub fn is_odd(&self) -> bool {
        matches!(self, Profile::Sine { .. } | Profile::Affine { .. })
    }
}

/// Quintic smoothstep cutoff and its first two derivatives in `r = |x|`.
pub fn cutoff(eps: f64, r: f64) -> (f64, f64, f64) {
    if r <= eps {
        return (0.0, 0.0, 0.0);
    }
    if r >= 2.0 * eps {
        return (1.0, 0.0, 0.0);
    }
    let t = (r - eps) / eps;
    let s = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    (s, ds / eps, dds / (eps * eps))
}

/// Built-in functionals selectable by name in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinFunctional {
    /// `u(mu) = int phi dmu`.
    Linear { profile: Profile },
    /// `u(mu) = int |x|^beta chi_eps(|x|) dmu`.
    SmoothedPower { beta: f64, eps: f64 },
    /// `u(mu) = int int psi(x - y) dmu(x) dmu(y)`.
    Quadratic { psi: Profile },
}

impl BuiltinFunctional {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            BuiltinFunctional::Linear { profile } => profile.validate(dim),
            BuiltinFunctional::Quadratic { psi } => psi.validate(dim),
            BuiltinFunctional::SmoothedPower { beta, eps } => {
                if !(*beta > 0.0 && beta.is_finite()) {
                    return invalid("power must be positive");
                }
                if !(*eps > 0.0 && eps.is_finite()) {
                    return invalid("cutoff must be positive");
                }
                Ok(())
            }
        }
    }

    /// Radial profile `f(r) = r^beta chi(r)` with `f'` and `f''`.
    fn radial(beta: f64, eps: f64, r: f64) -> (f64, f64, f64) {
        let (c, dc, ddc) = cutoff(eps, r);
        if c == 0.0 && dc == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let p = r.powf(beta);
        let p1 = beta * r.powf(beta - 1.0);
        let p2 = beta * (beta - 1.0) * r.powf(beta - 2.0);
        (p * c, p1 * c + p * dc, p2 * c + 2.0 * p1 * dc + p * ddc)
    }

    fn delta_linear(&self, v: &[f64]) -> f64 {
        match self {
            BuiltinFunctional::Linear { profile } => profile.value(v),
            BuiltinFunctional::SmoothedPower { beta, eps } => Self::radial(*beta, *eps, norm(v)).0,
            BuiltinFunctional::Quadratic { .. } => unreachable!(),
        }
    }

    fn sym_psi(psi: &Profile, v: &[f64], w: &[f64]) -> f64 {
        let diff: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
        let neg: Vec<f64> = diff.iter().map(|x| -x).collect();
        psi.value(&diff) + psi.value(&neg)
    }
}

impl Functional for BuiltinFunctional {
    fn eval(&self, mu: &EmpiricalMeasure) -> f64 {
        match self {
            BuiltinFunctional::Quadratic { psi } => {
                let n = mu.len();
                let mut diff = vec![0.0; mu.dim()];
                let mut total = 0.0;
                for i in 0..n {
                    let xi = mu.atom(i);
                    let mut row = 0.0;
                    for j in 0..n {
                        for ((d, a), b) in diff.iter_mut().zip(xi).zip(mu.atom(j)) {
                            *d = a - b;
                        }
                        row += mu.weight(j) * psi.value(&diff);
                    }
                    total += mu.weight(i) * row;
                }
                total
            }
            _ => mu.iter().map(|(x, w)| w * self.delta_linear(x)).sum(),
        }
    }

    fn flat_d1(&self, mu: &EmpiricalMeasure, v: &[f64]) -> f64 {
        match self {
            BuiltinFunctional::Quadratic { psi } => mu.iter().map(|(y, w)| w * Self::sym_psi(psi, v, y)).sum(),
            _ => self.delta_linear(v),
        }
    }

    fn grad_d1(&self, mu: &EmpiricalMeasure, v: &[f64]) -> Vec<f64> {
        match self {
            BuiltinFunctional::Linear { profile } => profile.grad(v),
            BuiltinFunctional::SmoothedPower { beta, eps } => {
                let r = norm(v);
                let (_, f1, _) = Self::radial(*beta, *eps, r);
                if f1 == 0.0 {
                    return vec![0.0; v.len()];
                }
                v.iter().map(|x| f1 * x / r).collect()
            }
            BuiltinFunctional::Quadratic { psi } => {
                let mut out = vec![0.0; v.len()];
                let mut diff = vec![0.0; v.len()];
                for (y, w) in mu.iter() {
                    for ((d, a), b) in diff.iter_mut().zip(v).zip(y) {
                        *d = a - b;
                    }
                    let g1 = psi.grad(&diff);
                    diff.iter_mut().for_each(|d| *d = -*d);
                    let g2 = psi.grad(&diff);
                    for k in 0..v.len() {
                        out[k] += w * (g1[k] - g2[k]);
                    }
                }
                out
            }
        }
    }

    fn hess_d1(&self, mu: &EmpiricalMeasure, v: &[f64]) -> Option<DMatrix<f64>> {
        let d = v.len();
        Some(match self {
            BuiltinFunctional::Linear { profile } => profile.hess(v),
            BuiltinFunctional::SmoothedPower { beta, eps } => {
                let r = norm(v);
                let (_, f1, f2) = Self::radial(*beta, *eps, r);
                if f1 == 0.0 && f2 == 0.0 {
                    return Some(DMatrix::zeros(d, d));
                }
                DMatrix::from_fn(d, d, |i, j| {
                    let uu = v[i] * v[j] / (r * r);
                    let delta = if i == j { 1.0 } else { 0.0 };
                    f2 * uu + f1 / r * (delta - uu)
                })
            }
            BuiltinFunctional::Quadratic { psi } => {
                let mut out = DMatrix::zeros(d, d);
                for (y, w) in mu.iter() {
                    let diff: Vec<f64> = v.iter().zip(y).map(|(a, b)| a - b).collect();
                    let neg: Vec<f64> = diff.iter().map(|x| -x).collect();
                    out += (psi.hess(&diff) + psi.hess(&neg)) * w;
                }
                out
            }
        })
    }

    fn flat_d2(&self, _mu: &EmpiricalMeasure, v: &[f64], w: &[f64]) -> Option<f64> {
        match self {
            BuiltinFunctional::Quadratic { psi } => Some(Self::sym_psi(psi, v, w)),
            _ => Some(0.0),
        }
    }

    fn cross_grad_d2(&self, _mu: &EmpiricalMeasure, v: &[f64], w: &[f64]) -> Option<DMatrix<f64>> {
        let d = v.len();
        match self {
            BuiltinFunctional::Quadratic { psi } => {
                let diff: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
                let neg: Vec<f64> = diff.iter().map(|x| -x).collect();
                Some(-(psi.hess(&diff) + psi.hess(&neg)))
            }
            _ => Some(DMatrix::zeros(d, d)),
        }
    }

    fn lipschitz_d1(&self) -> Option<f64> {
        match self {
            BuiltinFunctional::Linear { profile } => Some(profile.lipschitz()),
            BuiltinFunctional::SmoothedPower { .. } => None,
            BuiltinFunctional::Quadratic { psi } => Some(2.0 * psi.lipschitz()),
        }
    }

    fn lipschitz_d2(&self) -> Option<f64> {
        match self {
            BuiltinFunctional::Quadratic { psi } => Some(2.0 * psi.lipschitz()),
            _ => Some(0.0),
        }
    }

    fn growth_order(&self) -> f64 {
        match self {
            BuiltinFunctional::Linear { profile } => profile.growth_order(),
            BuiltinFunctional::SmoothedPower { beta, .. } => *beta,
            BuiltinFunctional::Quadratic { psi } => psi.growth_order(),
        }
    }

    fn grad_holder_exponent(&self) -> f64 {
        match self {
            BuiltinFunctional::SmoothedPower { beta, .. } if *beta < 1.0 => *beta,
            _ => 1.0,
        }
    }

    fn measure_independent(&self) -> bool {
        !matches!(self, BuiltinFunctional::Quadratic { .. })
    }

    fn move_delta(&self, mu: &EmpiricalMeasure, i: usize, y: &[f64]) -> f64 {
        let x = mu.atom(i);
        let wi = mu.weight(i);
        match self {
            BuiltinFunctional::Quadratic { psi } => {
                // Rows and columns of the double sum that touch atom i.
                let mut acc = 0.0;
                for (j, (z, wj)) in mu.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    acc += wj * (Self::sym_psi(psi, y, z) - Self::sym_psi(psi, x, z));
                }
                wi * acc
            }
            _ => wi * (self.delta_linear(y) - self.delta_linear(x)),
        }
    }

    fn name(&self) -> String {
        match self {
            BuiltinFunctional::Linear { .. } => "linear".into(),
            BuiltinFunctional::SmoothedPower { .. } => "smoothed_power".into(),
            BuiltinFunctional::Quadratic { .. } => "quadratic".into(),
        }
    }
}

/// `|u(mu) - u(nu) - int_0^1 int du/dm(t mu + (1-t) nu) d(mu - nu) dt|` with
/// a `t_nodes`-point Gauss-Legendre rule in `t`.
pub fn flat_derivative_identity_residual(
    u: &dyn Functional,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    t_nodes: usize,
) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return invalid("measures live in different dimensions");
    }
    if t_nodes == 0 {
        return invalid("need at least one quadrature node");
    }
    let mut integral = 0.0;
    for (t, wt) in quad::gl(t_nodes).mapped(0.0, 1.0) {
        let m = EmpiricalMeasure::mixture(t, mu, nu)?;
        let plus: f64 = mu.iter().map(|(v, w)| w * u.flat_d1(&m, v)).sum();
        let minus: f64 = nu.iter().map(|(v, w)| w * u.flat_d1(&m, v)).sum();
        integral += wt * (plus - minus);
    }
    Ok((u.eval(mu) - u.eval(nu) - integral).abs())
}

fn check_projection(x: &EmpiricalMeasure, idx: &[usize]) -> Result<()> {
    if !x.is_uniform() {
        return invalid("empirical projection needs equally weighted atoms");
    }
    if let Some(&i) = idx.iter().find(|&&i| i >= x.len()) {
        return invalid(format!("particle index {i} out of range for {} particles", x.len()));
    }
    Ok(())
}

/// `d_{x_i} u^N(x) = (1/N) d_v du/dm(mu_x)(x_i)`.
pub fn empirical_projection_grad(u: &dyn Functional, x: &EmpiricalMeasure, i: usize) -> Result<Vec<f64>> {
    check_projection(x, &[i])?;
    let n = x.len() as f64;
    Ok(u.grad_d1(x, x.atom(i)).into_iter().map(|g| g / n).collect())
}

/// `d_{x_j} d_{x_i} u^N(x)`: the cross term `(1/N^2) d_w d_v d^2u/dm^2` plus
/// `(1/N) d_v^2 du/dm(x_i)` on the diagonal.
pub fn empirical_projection_hess(u: &dyn Functional, x: &EmpiricalMeasure, i: usize, j: usize) -> Result<DMatrix<f64>> {
    check_projection(x, &[i, j])?;
    let n = x.len() as f64;
    let unsupported = || Error::UnsupportedFunctional(format!("{} lacks second derivatives", u.name()));
    let mut h = u.cross_grad_d2(x, x.atom(i), x.atom(j)).ok_or_else(unsupported)? / (n * n);
    if i == j {
        h += u.hess_d1(x, x.atom(i)).ok_or_else(unsupported)? / n;
    }
    Ok(h)
}

/// Largest observed `|du/dm(mu)(x) - du/dm(mu)(y)| / |x - y|` over the pairs.
pub fn sampled_lipschitz_d1(u: &dyn Functional, mu: &EmpiricalMeasure, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    pairs
        .iter()
        .filter_map(|(x, y)| {
            let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (dist > 0.0).then(|| (u.flat_d1(mu, x) - u.flat_d1(mu, y)).abs() / dist)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_is_c2_at_the_knots() {
        let eps = 0.3;
        for r in [eps, 2.0 * eps] {
            let (a, da, dda) = cutoff(eps, r - 1e-9);
            let (b, db, ddb) = cutoff(eps, r + 1e-9);
            assert!((a - b).abs() < 1e-7 && (da - db).abs() < 1e-6 && (dda - ddb).abs() < 1e-4);
        }
    }

    #[test]
    fn move_delta_matches_reevaluation() {
        let mu = EmpiricalMeasure::uniform(1, vec![0.1, -0.7, 1.3, 2.0]).unwrap();
        let u = BuiltinFunctional::Quadratic { psi: Profile::Cosine { amp: 0.5, freq: vec![1.0] } };
        let moved = mu.with_atom(2, &[0.4]);
        let direct = u.eval(&moved) - u.eval(&mu);
        assert!((u.move_delta(&mu, 2, &[0.4]) - direct).abs() < 1e-14);
    }
}
