//! Linear-flow algebra for the mean-field OU equation
//! `dX = (A X + A' E X) dt + B dZ`.
//!
//! The particle decomposition used throughout the crate is
//! `X_t = e^{tA} X_0 + K_t E X_0 + Y_t` with the coupling kernel
//! `K_t = \int_0^t e^{(t-s)A} A' e^{s(A+A')} ds`.
//!
//! `K_t` is the upper-right block of `exp(t [[A, A'], [0, A+A']])`, which is
//! how [`coupling_kernel`] computes it; [`coupling_kernel_quadrature`] is an
//! independent adaptive Gauss-Legendre route kept as a cross-check.

use crate::error::{invalid, Result};
use crate::quad;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Drift, mean-field drift and noise loading of the OU model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFlow {
    pub a: DMatrix<f64>,
    pub a_prime: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Default lower bound on `|det B|`.
pub const DEFAULT_DET_TOL: f64 = 1e-10;

impl MatrixFlow {
    pub fn new(a: DMatrix<f64>, a_prime: DMatrix<f64>, b: DMatrix<f64>, det_tol: f64) -> Result<Self> {
        let d = a.nrows();
        if d == 0 {
            return invalid("dimension must be at least 1");
        }
        for (name, m) in [("A", &a), ("A'", &a_prime), ("B", &b)] {
            if m.nrows() != d || m.ncols() != d {
                return invalid(format!("{name} must be {d}x{d}"));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return invalid(format!("{name} has non-finite entries"));
            }
        }
        if b.determinant().abs() < det_tol {
            return invalid("B is not invertible within tolerance");
        }
        Ok(Self { a, a_prime, b })
    }

    /// Scalar model in dimension one.
    pub fn scalar(a: f64, a_prime: f64, b: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, a_prime),
            DMatrix::from_element(1, 1, b),
            DEFAULT_DET_TOL,
        )
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a_total(&self) -> DMatrix<f64> {
        &self.a + &self.a_prime
    }

    /// `(A, A', B)` as scalars when `d == 1`.
    pub fn as_scalar(&self) -> Option<(f64, f64, f64)> {
        (self.dim() == 1).then(|| (self.a[(0, 0)], self.a_prime[(0, 0)], self.b[(0, 0)]))
    }

    /// `e^{tA}`, `K_t` and `e^{t(A+A')}` in one block exponential.
    pub fn propagators(&self, t: f64) -> Result<Propagators> {
        if t < 0.0 || !t.is_finite() {
            return invalid(format!("time must be finite and nonnegative, got {t}"));
        }
        if let Some((a, ap, _)) = self.as_scalar() {
            let ea = (t * a).exp();
            return Ok(Propagators {
                exp_a: DMatrix::from_element(1, 1, ea),
                kernel: DMatrix::from_element(1, 1, ea * (t * ap).exp_m1()),
                exp_total: DMatrix::from_element(1, 1, (t * (a + ap)).exp()),
            });
        }
        let d = self.dim();
        let mut block = DMatrix::zeros(2 * d, 2 * d);
        block.view_mut((0, 0), (d, d)).copy_from(&self.a);
        block.view_mut((0, d), (d, d)).copy_from(&self.a_prime);
        block.view_mut((d, d), (d, d)).copy_from(&self.a_total());
        let e = expm(&(block * t))?;
        Ok(Propagators {
            exp_a: e.view((0, 0), (d, d)).into_owned(),
            kernel: e.view((0, d), (d, d)).into_owned(),
            exp_total: e.view((d, d), (d, d)).into_owned(),
        })
    }
}

/// The three linear propagators at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagators {
    pub exp_a: DMatrix<f64>,
    pub kernel: DMatrix<f64>,
    pub exp_total: DMatrix<f64>,
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return invalid("expm needs a square matrix");
    }
    if m.iter().any(|x| !x.is_finite()) {
        return invalid("expm input has non-finite entries");
    }
    if m.nrows() == 1 {
        return Ok(DMatrix::from_element(1, 1, m[(0, 0)].exp()));
    }
    Ok(m.exp())
}

/// `K_t` via the block-exponential identity.
pub fn coupling_kernel(flow: &MatrixFlow, t: f64) -> Result<DMatrix<f64>> {
    Ok(flow.propagators(t)?.kernel)
}

/// `K_t` by adaptive Gauss-Legendre quadrature of its defining integral.
pub fn coupling_kernel_quadrature(flow: &MatrixFlow, t: f64, tol: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return invalid("time must be nonnegative");
    }
    let d = flow.dim();
    if t == 0.0 {
        return Ok(DMatrix::zeros(d, d));
    }
    let total = flow.a_total();
    let mut err = None;
    let k = quad::adaptive(
        |s| match (expm(&(&flow.a * (t - s))), expm(&(&total * s))) {
            (Ok(l), Ok(r)) => l * &flow.a_prime * r,
            (Err(e), _) | (_, Err(e)) => {
                err.get_or_insert(e);
                DMatrix::zeros(d, d)
            }
        },
        0.0,
        t,
        tol,
        tol,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(k),
    }
}

/// `E X_t = e^{t(A+A')} m0`.
pub fn mean_flow(flow: &MatrixFlow, m0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if t < 0.0 {
        return invalid("time must be nonnegative");
    }
    if m0.len() != flow.dim() {
        return invalid("initial mean has the wrong dimension");
    }
    Ok(flow.propagators(t)?.exp_total * m0)
}

/// Propagators precomputed on a time grid. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FlowCache {
    times: Vec<f64>,
    entries: Vec<Propagators>,
}

impl FlowCache {
    pub fn new(flow: &MatrixFlow, times: &[f64]) -> Result<Self> {
        if times.windows(2).any(|w| w[1] < w[0]) {
            return invalid("flow cache times must be sorted");
        }
        let entries = times.iter().map(|&t| flow.propagators(t)).collect::<Result<Vec<_>>>()?;
        Ok(Self { times: times.to_vec(), entries })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn get(&self, idx: usize) -> &Propagators {
        &self.entries[idx]
    }

    /// Entry for time `t` if it is on the grid.
    pub fn lookup(&self, t: f64) -> Option<&Propagators> {
        self.times
            .binary_search_by(|x| x.total_cmp(&t))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}
