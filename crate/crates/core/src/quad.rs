//! Gauss-Legendre quadrature, an adaptive bisection driver and radial rules
//! for integrals against `r^{-1-alpha} dr`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::ops::{Add, Mul};
use std::sync::OnceLock;

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        if n == 1 {
            return Self { nodes: vec![0.0], weights: vec![2.0] };
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Iterate `(x, w)` mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

const MAX_CACHED: usize = 64;

/// Shared rule of order `n` (`1..=64`).
pub fn gl(n: usize) -> &'static GaussLegendre {
    static CACHE: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    assert!((1..=MAX_CACHED).contains(&n), "gauss-legendre order {n} not cached");
    &CACHE.get_or_init(|| (1..=MAX_CACHED).map(GaussLegendre::new).collect())[n - 1]
}

/// Values that can be integrated: a vector space with a size measure.
pub trait Integrand: Clone + Add<Output = Self> + Mul<f64, Output = Self> {
    fn size(&self) -> f64;
}

impl Integrand for f64 {
    fn size(&self) -> f64 {
        self.abs()
    }
}

impl Integrand for Complex64 {
    fn size(&self) -> f64 {
        self.norm()
    }
}

impl Integrand for DMatrix<f64> {
    fn size(&self) -> f64 {
        self.amax()
    }
}

impl Integrand for DVector<f64> {
    fn size(&self) -> f64 {
        self.amax()
    }
}

fn gl_panel<T: Integrand, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64, n: usize) -> T {
    let mut it = gl(n).mapped(a, b);
    let (x0, w0) = it.next().unwrap();
    let mut acc = f(x0) * w0;
    for (x, w) in it {
        acc = acc + f(x) * w;
    }
    acc
}

/// Adaptive Gauss-Legendre integration by interval bisection.
///
/// A panel is accepted when the order-`n` rule on the whole panel agrees with
/// the sum over its two halves to within `abs_tol + rel_tol * |value|`.
pub fn adaptive<T: Integrand, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> T {
    const ORDER: usize = 15;
    const MAX_DEPTH: u32 = 30;
    const MAX_PANELS: usize = 4096;
    let whole = gl_panel(&mut f, a, b, ORDER);
    let mut stack = vec![(a, b, whole, 0u32)];
    let mut total: Option<T> = None;
    let mut panels = 0usize;
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(&mut f, lo, mid, ORDER);
        let right = gl_panel(&mut f, mid, hi, ORDER);
        panels += 1;
        let refined = left.clone() + right.clone();
        let diff = (refined.clone() + est * -1.0).size();
        let width_frac = ((hi - lo) / (b - a)).abs();
        let tol = (abs_tol + rel_tol * refined.size()) * width_frac.sqrt();
        if diff <= tol || depth >= MAX_DEPTH || panels >= MAX_PANELS {
            total = Some(match total {
                None => refined,
                Some(t) => t + refined,
            });
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    total.expect("at least one panel")
}

/// Quadrature nodes for `\int_{r_lo}^{r_hi} g(r) r^{-1-alpha} dr`.
///
/// Panels are geometric (`panels_per_octave` per factor of two) with an
/// order-`order` Gauss-Legendre rule on each; returned weights already include
/// the factor `r^{-1-alpha}`.
#[derive(Debug, Clone)]
pub struct RadialRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RadialRule {
    pub fn new(alpha: f64, r_lo: f64, r_hi: f64, panels_per_octave: usize, order: usize) -> Self {
        assert!(r_lo > 0.0 && r_hi >= r_lo && r_hi.is_finite());
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        if r_hi > r_lo {
            let octaves = (r_hi / r_lo).log2();
            let panels = ((octaves * panels_per_octave as f64).ceil() as usize).max(1);
            let ratio = (r_hi / r_lo).powf(1.0 / panels as f64);
            let rule = gl(order);
            let mut a = r_lo;
            for k in 0..panels {
                let b = if k + 1 == panels { r_hi } else { a * ratio };
                for (r, w) in rule.mapped(a, b) {
                    nodes.push(r);
                    weights.push(w * r.powf(-1.0 - alpha));
                }
                a = b;
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&r, &w)| w * g(r)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `\int_0^{r} s^{2} s^{-1-alpha} ds`, the second-moment mass of a Lévy ball.
pub fn levy_second_moment(alpha: f64, r: f64) -> f64 {
    r.powf(2.0 - alpha) / (2.0 - alpha)
}

/// `\int_{r0}^{r1} s^{p} s^{-1-alpha} ds` for `0 < r0 <= r1 <= inf`, handling
/// the logarithmic case `p == alpha`. Returns `inf` when divergent.
pub fn levy_power_integral(alpha: f64, p: f64, r0: f64, r1: f64) -> f64 {
    let e = p - alpha;
    if r1 <= r0 {
        return 0.0;
    }
    if e.abs() < 1e-14 {
        return if r1.is_finite() { (r1 / r0).ln() } else { f64::INFINITY };
    }
    if r1.is_infinite() {
        return if e < 0.0 { -r0.powf(e) / e } else { f64::INFINITY };
    }
    (r1.powf(e) - r0.powf(e)) / e
}
