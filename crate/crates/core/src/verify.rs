//! Independent closed-loop check of solver output.
//!
//! For the relay problem the surface equations are solved for the controlled
//! coordinates (the leading block of the surface coefficient matrix must be
//! invertible) and the remaining smooth system is integrated; for the smooth
//! control laws the full closed loop is integrated directly. The resulting
//! trajectory is scanned for inclusion residuals, surface residuals, and
//! endpoint misses — none of which reuse the solver's descent path.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{SampledTrajectory, StateGrid, TimeGrid};
use crate::kernel::inclusion_distance;
use crate::ode::{integrate_over_nodes, IntegrationMethod};
use crate::controls::ControlContext;
use crate::problem::{l1_norm, ControlKind, ProblemSpec};

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    /// `|x_j(T) - target_j|` keyed by 1-based coordinate index.
    pub endpoint_errors: BTreeMap<usize, f64>,
    /// Max over nodes of the summed per-channel inclusion distances of the
    /// finite-differenced closed-loop trajectory.
    pub max_inclusion_residual: f64,
    /// Max over nodes of `|s(x(t), p)|_inf` (relay problems only).
    pub max_surface_residual: Option<f64>,
    pub integrator: IntegrationMethod,
    /// Pointwise agreement with the solver trajectory on the constrained
    /// coordinates, when a solver trajectory is supplied.
    pub crosscheck: Option<CrossCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub threshold: f64,
    pub max_error: f64,
    /// Max pointwise gap per constrained coordinate (1-based).
    pub coordinate_errors: BTreeMap<usize, f64>,
    pub passed: bool,
}

/// Partially pivoted LU solve for the small surface head block.
struct LuFactor {
    lu: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl LuFactor {
    fn new(mut a: Vec<Vec<f64>>) -> Option<Self> {
        let n = a.len();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (pivot, max) = (col..n)
                .map(|r| (r, a[r][col].abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1))?;
            if max < 1e-12 {
                return None;
            }
            a.swap(col, pivot);
            perm.swap(col, pivot);
            for r in col + 1..n {
                let factor = a[r][col] / a[col][col];
                a[r][col] = factor;
                for c in col + 1..n {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
        Some(LuFactor { lu: a, perm })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for r in 1..n {
            for c in 0..r {
                y[r] -= self.lu[r][c] * y[c];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                y[r] -= self.lu[r][c] * y[c];
            }
            y[r] /= self.lu[r][r];
        }
        y
    }
}

/// Integrate the closed loop defined by the surface parameters `p` and sample
/// it onto the solver grid.
///
/// Relay problems are reduced first: with `s(x, p) = W x - beta = 0`, the
/// controlled coordinates are eliminated through the leading `m x m` block of
/// `W` and only the uncontrolled coordinates are integrated.
pub fn integrate_closed_loop(
    spec: &ProblemSpec,
    p: &[f64],
    grid: &TimeGrid,
    method: &IntegrationMethod,
) -> Result<StateGrid> {
    match spec.control_kind {
        ControlKind::Relay => integrate_reduced_relay(spec, p, grid, method),
        _ => integrate_smooth_loop(spec, p, grid, method),
    }
}

fn integrate_reduced_relay(
    spec: &ProblemSpec,
    p: &[f64],
    grid: &TimeGrid,
    method: &IntegrationMethod,
) -> Result<StateGrid> {
    let (n, m) = (spec.n, spec.m);
    let w = spec.surface.jacobian_x(p)?;
    // beta = -s(0, p)
    let beta: Vec<f64> = spec.surface.evaluate(&vec![0.0; n], p)?.iter().map(|v| -v).collect();
    let head_block: Vec<Vec<f64>> = (0..m).map(|i| w[i][..m].to_vec()).collect();
    let factor = LuFactor::new(head_block).ok_or_else(|| Error::SurfaceNotReducible {
        message: format!("leading {m}x{m} surface coefficient block is singular at these parameters"),
    })?;

    // x_head(y) = W1^{-1} (beta - W2 y)
    let head_of = |tail: &[f64]| -> Vec<f64> {
        let rhs: Vec<f64> = (0..m)
            .map(|i| {
                let coupling: f64 = (m..n).map(|j| w[i][j] * tail[j - m]).sum();
                beta[i] - coupling
            })
            .collect();
        factor.solve(&rhs)
    };

    let mut x_full = vec![0.0; n];
    let tail0 = &spec.x0[m..];
    let rows = integrate_over_nodes(
        |_t, tail, dtail| {
            x_full[..m].copy_from_slice(&head_of(tail));
            x_full[m..].copy_from_slice(tail);
            for (i, slot) in dtail.iter_mut().enumerate() {
                *slot = spec.row_dot(m + i, &x_full);
            }
        },
        tail0,
        grid.nodes(),
        method,
    )?;

    let mut x = SampledTrajectory::zeros(grid.len(), n);
    for (k, tail) in rows.iter().enumerate() {
        let head = head_of(tail);
        x.row_mut(k)[..m].copy_from_slice(&head);
        x.row_mut(k)[m..].copy_from_slice(tail);
    }
    Ok(x)
}

fn integrate_smooth_loop(
    spec: &ProblemSpec,
    p: &[f64],
    grid: &TimeGrid,
    method: &IntegrationMethod,
) -> Result<StateGrid> {
    let controls = ControlContext::new(spec)?;
    let surface = &spec.surface;
    let mut failure = None;
    let rows = integrate_over_nodes(
        |_t, x, dx| {
            let abs_x = l1_norm(x);
            let s = match surface.evaluate(x, p) {
                Ok(s) => s,
                Err(e) => {
                    failure.get_or_insert(e);
                    dx.fill(0.0);
                    return;
                }
            };
            for (i, slot) in dx.iter_mut().enumerate() {
                let mut v = spec.row_dot(i, x);
                if i < spec.m {
                    match controls.eval(i, abs_x, s[i]) {
                        Ok(u) => v += u.value,
                        Err(e) => {
                            failure.get_or_insert(e);
                        }
                    }
                }
                *slot = v;
            }
        },
        &spec.x0,
        grid.nodes(),
        method,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut x = SampledTrajectory::zeros(grid.len(), spec.n);
    for (k, row) in rows.iter().enumerate() {
        x.row_mut(k).copy_from_slice(row);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct ResidualScan {
    pub max_inclusion_residual: f64,
    pub max_surface_residual: Option<f64>,
}

/// Scan a trajectory for inclusion and surface residuals. The derivative is
/// reconstructed by forward differences (the last node copies its left
/// neighbour, matching the right-derivative convention).
pub fn inclusion_residual(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    x: &StateGrid,
    p: &[f64],
) -> Result<ResidualScan> {
    let n_nodes = grid.len();
    if x.n_nodes() != n_nodes {
        return Err(Error::Dimension { what: "trajectory nodes".into(), expected: n_nodes, got: x.n_nodes() });
    }
    let dt = grid.dt();
    let mut max_inclusion: f64 = 0.0;
    let mut max_surface: f64 = 0.0;
    for k in 0..n_nodes {
        let xk = x.row(k);
        let (from, to) = if k + 1 < n_nodes { (k, k + 1) } else { (k - 1, k) };
        let mut sum = 0.0;
        for i in 0..spec.n {
            let z_i = (x.get(to, i) - x.get(from, i)) / dt;
            sum += inclusion_distance(spec, i, xk, z_i)?;
        }
        max_inclusion = max_inclusion.max(sum);
        if spec.control_kind == ControlKind::Relay {
            let s = spec.surface.evaluate(xk, p)?;
            let s_inf = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            max_surface = max_surface.max(s_inf);
        }
    }
    Ok(ResidualScan {
        max_inclusion_residual: max_inclusion,
        max_surface_residual: (spec.control_kind == ControlKind::Relay).then_some(max_surface),
    })
}

/// Full verification pass: integrate the closed loop, scan residuals, measure
/// endpoint misses, and (when the solver trajectory is supplied) compare the
/// two trajectories pointwise on the constrained coordinates against
/// `max(5e-3, 10 sqrt(2 tol_i / T))`.
pub fn verify_solution(
    spec: &ProblemSpec,
    p: &[f64],
    grid: &TimeGrid,
    method: &IntegrationMethod,
    solver_x: Option<&StateGrid>,
    tol_i: f64,
) -> Result<(VerifyReport, StateGrid)> {
    let x = integrate_closed_loop(spec, p, grid, method)?;
    let scan = inclusion_residual(spec, grid, &x, p)?;
    let last = grid.len() - 1;
    let endpoint_errors: BTreeMap<usize, f64> = spec
        .endpoint_targets()
        .into_iter()
        .map(|(j, target)| (j + 1, (x.get(last, j) - target).abs()))
        .collect();

    let crosscheck = solver_x.map(|solved| {
        let threshold = (10.0 * (2.0 * tol_i / spec.horizon).sqrt()).max(5e-3);
        let mut coordinate_errors = BTreeMap::new();
        let mut max_error: f64 = 0.0;
        for (j, _) in spec.endpoint_targets() {
            let gap = (0..grid.len())
                .map(|k| (solved.get(k, j) - x.get(k, j)).abs())
                .fold(0.0f64, f64::max);
            coordinate_errors.insert(j + 1, gap);
            max_error = max_error.max(gap);
        }
        CrossCheck { threshold, max_error, coordinate_errors, passed: max_error <= threshold }
    });

    Ok((
        VerifyReport {
            endpoint_errors,
            max_inclusion_residual: scan.max_inclusion_residual,
            max_surface_residual: scan.max_surface_residual,
            integrator: *method,
            crosscheck,
        },
        x,
    ))
}
