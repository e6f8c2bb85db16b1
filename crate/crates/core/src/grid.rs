//! Uniform time grid, the derivative-trajectory variable, state reconstruction,
//! and trapezoidal quadrature.
//!
//! The derivative trajectory `z(t) = dx/dt` is represented by its samples on a
//! uniform grid; the state is recovered by cumulative trapezoid integration from
//! the initial point, so the left boundary condition holds by construction.
//! Trapezoid keeps both the reconstruction and every time integral second-order
//! accurate, and it makes the discretized functionals exactly differentiable in
//! the node samples.

use crate::error::{Error, Result};

/// Uniform grid on `[0, T]` with trapezoid quadrature weights.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    dt: f64,
    horizon: f64,
}

impl TimeGrid {
    /// Build a uniform grid with `n_nodes >= 2` nodes covering `[0, horizon]`.
    pub fn new(n_nodes: usize, horizon: f64) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::Validation {
                field: "grid_nodes".into(),
                message: format!("need at least 2 nodes, got {}", n_nodes),
            });
        }
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::Validation {
                field: "T".into(),
                message: format!("horizon must be positive and finite, got {}", horizon),
            });
        }
        let dt = horizon / (n_nodes - 1) as f64;
        let nodes = (0..n_nodes).map(|k| k as f64 * dt).collect();
        let mut weights = vec![dt; n_nodes];
        weights[0] = dt / 2.0;
        weights[n_nodes - 1] = dt / 2.0;
        Ok(TimeGrid { nodes, weights, dt, horizon })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Trapezoid weight of node `k`; the weights sum to the horizon.
    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// Trapezoid quadrature of per-node samples over `[0, T]`.
    pub fn quadrature(&self, samples: &[f64]) -> Result<f64> {
        if samples.len() != self.len() {
            return Err(Error::Dimension {
                what: "quadrature samples".into(),
                expected: self.len(),
                got: samples.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(samples)
            .map(|(w, s)| w * s)
            .sum())
    }

    /// Reverse cumulative weighted sums: `out[q] = sum_{k >= q} w_k * samples[k]`.
    ///
    /// Together with the forward partial sums these split the full quadrature:
    /// `out[q] + sum_{k < q} w_k * samples[k]` equals `quadrature(samples)` for
    /// every `q`. The gradient assembly builds its tail integrals from these.
    pub fn reverse_weighted_sums(&self, samples: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        for k in (0..n).rev() {
            acc += self.weights[k] * samples[k];
            out[k] = acc;
        }
        out
    }
}

/// Per-node samples of an `n`-dimensional trajectory, stored row-major
/// (`n_nodes` rows of `n_coords` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    n_coords: usize,
    values: Vec<f64>,
}

impl SampledTrajectory {
    pub fn zeros(n_nodes: usize, n_coords: usize) -> Self {
        SampledTrajectory { n_coords, values: vec![0.0; n_nodes * n_coords] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_coords = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_coords);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != n_coords {
                return Err(Error::Dimension {
                    what: format!("trajectory row {}", k),
                    expected: n_coords,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(SampledTrajectory { n_coords, values })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len().checked_div(self.n_coords).unwrap_or(0)
    }

    pub fn n_coords(&self) -> usize {
        self.n_coords
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_coords..(k + 1) * self.n_coords]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_coords..(k + 1) * self.n_coords]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_coords + i]
    }

    pub fn set(&mut self, k: usize, i: usize, v: f64) {
        self.values[k * self.n_coords + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Samples of one coordinate across all nodes.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| self.get(k, i)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Derivative samples `z[k][i]` — the descent variable.
pub type DerivativeGrid = SampledTrajectory;

/// State samples `x[k][i]` with `x[0] = x0`.
pub type StateGrid = SampledTrajectory;

/// Reconstruct the state from derivative samples by cumulative trapezoid:
/// `x[k+1] = x[k] + dt * (z[k] + z[k+1]) / 2`, `x[0] = x0`.
pub fn build_state(grid: &TimeGrid, z: &DerivativeGrid, x0: &[f64]) -> Result<StateGrid> {
    let n = x0.len();
    if z.n_coords() != n {
        return Err(Error::Dimension { what: "z coordinates".into(), expected: n, got: z.n_coords() });
    }
    if z.n_nodes() != grid.len() {
        return Err(Error::Dimension { what: "z nodes".into(), expected: grid.len(), got: z.n_nodes() });
    }
    let half_dt = grid.dt() / 2.0;
    let mut x = SampledTrajectory::zeros(grid.len(), n);
    x.row_mut(0).copy_from_slice(x0);
    for k in 0..grid.len() - 1 {
        for i in 0..n {
            let step = half_dt * (z.get(k, i) + z.get(k + 1, i));
            let v = x.get(k, i) + step;
            x.set(k + 1, i, v);
        }
    }
    Ok(x)
}
