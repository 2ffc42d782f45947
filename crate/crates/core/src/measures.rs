//! Empirical measures and exact Wasserstein distances.
//!
//! * [`w1_1d`]: the `L¹` distance between CDFs, exact in dimension one.
//! * [`w_beta`]: exact optimal transport with cost `|x - y|^β`, via a
//!   shortest-augmenting-path assignment solver for uniform weights with
//!   equal atom counts, and successive shortest paths on the transportation
//!   network otherwise.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Largest atom count for the assignment solver.
pub const MAX_ASSIGNMENT: usize = 2048;
/// Largest atom count per side for the general-weight flow solver.
pub const MAX_FLOW: usize = 512;

/// Weighted atoms in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

/// `(Σ w |x|^β)^{1/β}` for `β ≥ 1`, `Σ w |x|^β` below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureMoment {
    pub beta: f64,
    pub value: f64,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        if atoms.len() != dim * weights.len() {
            return invalid("atom buffer does not match weight count");
        }
        if weights.is_empty() {
            return invalid("measure needs at least one atom");
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return invalid("weights must be finite and nonnegative");
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return invalid("atoms must be finite");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 + 4.0 * weights.len() as f64 * f64::EPSILON {
            return invalid(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self { dim, atoms, weights })
    }

    /// Uniform weights `1/N`.
    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 || atoms.is_empty() || !atoms.len().is_multiple_of(dim) {
            return invalid("atom buffer must hold a positive multiple of dim values");
        }
        let n = atoms.len() / dim;
        Self::new(dim, atoms, vec![1.0 / n as f64; n])
    }

    /// Weights are normalised to sum to one.
    pub fn weighted(dim: usize, atoms: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return invalid("weights must have positive total");
        }
        Self::new(dim, atoms, raw.into_iter().map(|w| w / total).collect())
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::uniform(point.len(), point.to_vec())
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

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-15)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.atoms.chunks(self.dim).zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (mk, xk) in m.iter_mut().zip(x) {
                *mk += w * xk;
            }
        }
        m
    }

    pub fn moment(&self, beta: f64) -> Result<MeasureMoment> {
        if !(beta > 0.0) {
            return invalid("moment order must be positive");
        }
        let raw: f64 = self.iter().map(|(x, w)| w * norm(x).powf(beta)).sum();
        let value = if beta >= 1.0 { raw.powf(1.0 / beta) } else { raw };
        Ok(MeasureMoment { beta, value })
    }

    /// Push forward by `x -> x + c`.
    pub fn translate(&self, c: &[f64]) -> Self {
        let mut atoms = self.atoms.clone();
        for chunk in atoms.chunks_mut(self.dim) {
            for (x, ck) in chunk.iter_mut().zip(c) {
                *x += ck;
            }
        }
        Self { atoms, ..self.clone() }
    }

    /// Push forward by an affine map applied atomwise.
    pub fn map_atoms(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut atoms = vec![0.0; self.atoms.len()];
        for (src, dst) in self.atoms.chunks(self.dim).zip(atoms.chunks_mut(self.dim)) {
            f(src, dst);
        }
        Self { atoms, ..self.clone() }
    }

    /// Copy with atom `i` moved to `y`.
    pub fn with_atom(&self, i: usize, y: &[f64]) -> Self {
        let mut out = self.clone();
        out.atoms[i * self.dim..(i + 1) * self.dim].copy_from_slice(y);
        out
    }

    /// `t μ + (1 - t) ν` as a single atom list.
    pub fn mixture(t: f64, mu: &Self, nu: &Self) -> Result<Self> {
        if mu.dim != nu.dim {
            return invalid("mixture of measures in different dimensions");
        }
        if !(0.0..=1.0).contains(&t) {
            return invalid("mixture weight must lie in [0, 1]");
        }
        let mut atoms = mu.atoms.clone();
        atoms.extend_from_slice(&nu.atoms);
        let mut weights: Vec<f64> = mu.weights.iter().map(|w| t * w).collect();
        weights.extend(nu.weights.iter().map(|w| (1.0 - t) * w));
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { dim: mu.dim, atoms, weights })
    }

    /// CSV with columns `x0..x{d-1},weight`, one atom per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (x, wt) in self.iter() {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{wt:e}"));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let cols = r.headers().map_err(|e| csv_err(path, e))?.len();
        if cols < 2 {
            return Err(Error::Config(format!("{}: need at least one coordinate and a weight", path.display())));
        }
        let dim = cols - 1;
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            atoms.extend_from_slice(&vals[..dim]);
            weights.push(vals[dim]);
        }
        Self::weighted(dim, atoms, weights)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Exact one-dimensional `W₁ = ∫ |F_μ - F_ν| dx`.
pub fn w1_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim != 1 || nu.dim != 1 {
        return invalid("w1_1d needs one-dimensional measures");
    }
    // (position, signed weight): +w for μ, -w for ν. Stable sort keeps index order on ties.
    let mut events: Vec<(f64, f64)> = mu
        .atoms
        .iter()
        .zip(&mu.weights)
        .map(|(&x, &w)| (x, w))
        .chain(nu.atoms.iter().zip(&nu.weights).map(|(&x, &w)| (x, -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        total += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

/// Exact `W₁` with Euclidean ground cost.
pub fn w1_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    transport_cost(mu, nu, 1.0)
}

/// Exact `W_β`, with the `1/β` root applied only when `β ≥ 1`.
pub fn w_beta(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 2.0) {
        return invalid(format!("beta must lie in (0, 2], got {beta}"));
    }
    let cost = transport_cost(mu, nu, beta)?;
    Ok(if beta >= 1.0 { cost.max(0.0).powf(1.0 / beta) } else { cost })
}

/// Optimal value of `Σ π_ij |x_i - y_j|^β`.
fn transport_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, beta: f64) -> Result<f64> {
    if mu.dim != nu.dim {
        return invalid("measures live in different dimensions");
    }
    let cost = |i: usize, j: usize| dist(mu.atom(i), nu.atom(j)).powf(beta);
    let (n, m) = (mu.len(), nu.len());
    if n == m && mu.is_uniform() && nu.is_uniform() {
        if n > MAX_ASSIGNMENT {
            return Err(Error::Capacity(format!("assignment limited to {MAX_ASSIGNMENT} atoms, got {n}")));
        }
        let c: Vec<f64> = (0..n * n).map(|k| cost(k / n, k % n)).collect();
        let perm = linear_assignment(n, &c);
        return Ok(perm.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum::<f64>() / n as f64);
    }
    if n > MAX_FLOW || m > MAX_FLOW {
        return Err(Error::Capacity(format!("general-weight transport limited to {MAX_FLOW} atoms per side")));
    }
    let c: Vec<f64> = (0..n * m).map(|k| cost(k / m, k % m)).collect();
    Ok(transportation(&mu.weights, &nu.weights, &c))
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix.
///
/// Shortest augmenting paths with row and column potentials; returns the
/// column assigned to each row.
pub fn linear_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = free); column 0 is the virtual root.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Transportation problem between supplies `a` and demands `b` (equal
/// totals) on dense costs.
///
/// Successive shortest paths from a super source to a super sink, with
/// Dijkstra on potential-reduced costs over the dense residual network.
pub fn transportation(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    const TINY: f64 = 1e-15;
    const NIL: usize = usize::MAX;
    let (n, m) = (a.len(), b.len());
    let (src, snk) = (n + m, n + m + 1);
    let nodes = n + m + 2;
    let mut sent = vec![0.0; n];
    let mut received = vec![0.0; m];
    let mut flow = vec![0.0; n * m];
    let mut pot = vec![0.0; nodes];
    let mut dist = vec![0.0; nodes];
    let mut prev = vec![NIL; nodes];
    let mut done = vec![false; nodes];
    let total: f64 = a.iter().sum();
    let mut shipped = 0.0;
    while total - shipped > 1e-13 {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = NIL);
        done.iter_mut().for_each(|d| *d = false);
        dist[src] = 0.0;
        loop {
            let mut u = NIL;
            let mut du = f64::INFINITY;
            for k in 0..nodes {
                if !done[k] && dist[k] < du {
                    du = dist[k];
                    u = k;
                }
            }
            if u == NIL {
                break;
            }
            done[u] = true;
            let relax = |v: usize, c: f64, dist: &mut [f64], prev: &mut [usize]| {
                let nd = du + (c + pot[u] - pot[v]).max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };
            if u == src {
                for i in 0..n {
                    if a[i] - sent[i] > TINY {
                        relax(i, 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u == snk {
                for j in 0..m {
                    if received[j] > TINY {
                        relax(n + j, 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u < n {
                for j in 0..m {
                    relax(n + j, cost[u * m + j], &mut dist, &mut prev);
                }
                if sent[u] > TINY {
                    relax(src, 0.0, &mut dist, &mut prev);
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[i * m + j] > TINY {
                        relax(i, -cost[i * m + j], &mut dist, &mut prev);
                    }
                }
                if b[j] - received[j] > TINY {
                    relax(snk, 0.0, &mut dist, &mut prev);
                }
            }
        }
        if !dist[snk].is_finite() {
            break;
        }
        for k in 0..nodes {
            if dist[k].is_finite() {
                pot[k] += dist[k];
            }
        }
        // Bottleneck capacity along the path.
        let mut push = f64::INFINITY;
        let mut v = snk;
        while prev[v] != NIL {
            let u = prev[v];
            let cap = match (u, v) {
                (u, v) if u == src => a[v] - sent[v],
                (u, v) if v == snk => b[u - n] - received[u - n],
                (u, v) if u < n && v >= n => f64::INFINITY,
                (u, v) if u >= n && v < n => flow[v * m + (u - n)],
                (u, _) if u < n => sent[u],
                (u, _) => received[u - n],
            };
            push = push.min(cap);
            v = u;
        }
        let mut v = snk;
        while prev[v] != NIL {
            let u = prev[v];
            if u == src {
                sent[v] += push;
            } else if v == snk {
                received[u - n] += push;
            } else if v == src {
                sent[u] -= push;
            } else if u == snk {
                received[v - n] -= push;
            } else if u < n {
                flow[u * m + (v - n)] += push;
            } else {
                flow[v * m + (u - n)] -= push;
            }
            v = u;
        }
        shipped += push;
    }
    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_small_brute_force() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let perm = linear_assignment(3, &c);
        let val: f64 = perm.iter().enumerate().map(|(i, &j)| c[i * 3 + j]).sum();
        assert_eq!(val, 5.0);
    }

    #[test]
    fn transportation_splits_mass() {
        // Supplies 0.5/0.5 at costs favouring a split into three sinks.
        let a = [0.5, 0.5];
        let b = [0.25, 0.25, 0.5];
        let c = [0.0, 1.0, 2.0, 2.0, 1.0, 0.0];
        let v = transportation(&a, &b, &c);
        assert!((v - 0.25).abs() < 1e-14, "{v}");
    }
}
