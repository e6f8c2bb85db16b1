//! Steepest descent over the product of the derivative grid and the surface
//! parameters.
//!
//! The derivative samples are fast variables and the surface parameters slow
//! ones, so each outer cycle takes one z-only step followed by several
//! parameter-only steps, every step sized by Armijo backtracking. Trial steps
//! grow from the previously accepted step of the same phase, which lets the
//! two phases settle on very different scales. The loop is single-threaded
//! and deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{evaluate_for, FunctionalBreakdown};
use crate::gradients::{gradient_for, GradientBundle};
use crate::grid::{build_state, DerivativeGrid, TimeGrid};
use crate::problem::ProblemSpec;

const STEP_FLOOR: f64 = 1e-14;
const STEP_GROWTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    pub max_outer_iters: usize,
    /// Stop when the objective total falls to or below this value.
    pub tol_i: f64,
    /// Stop when the gradient bundle norm falls to or below this value.
    pub tol_grad: f64,
    /// Initial trial step of the z phase.
    pub z_step_init: f64,
    /// Initial trial step of the parameter phase; `z_step_init / 10` when
    /// omitted.
    pub p_step_init: Option<f64>,
    /// Backtracking factor in (0, 1).
    pub backtrack: f64,
    /// Sufficient-decrease constant in (0, 1).
    pub armijo: f64,
    /// Parameter-only steps per outer cycle.
    pub slow_inner_iters: usize,
    /// Outer cycles at the start that move only the trajectory. Parameters
    /// fitted against a far-from-feasible trajectory chase its transients, so
    /// the alternation begins once the fast variable has settled.
    pub warmup_fast_iters: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            max_outer_iters: 500,
            tol_i: 1e-6,
            tol_grad: 1e-9,
            z_step_init: 1.0,
            p_step_init: None,
            backtrack: 0.5,
            armijo: 1e-4,
            slow_inner_iters: 3,
            warmup_fast_iters: 0,
        }
    }
}

impl DescentConfig {
    pub fn p_step(&self) -> f64 {
        self.p_step_init.unwrap_or(self.z_step_init / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("descent.tol_i", self.tol_i),
            ("descent.tol_grad", self.tol_grad),
            ("descent.z_step_init", self.z_step_init),
            ("descent.p_step_init", self.p_step()),
        ];
        for (field, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Validation { field: field.into(), message: format!("must be positive, got {}", v) });
            }
        }
        for (field, v) in [("descent.backtrack", self.backtrack), ("descent.armijo", self.armijo)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation { field: field.into(), message: format!("must lie in (0, 1), got {}", v) });
            }
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Validation { field: "descent.max_outer_iters".into(), message: "must be positive".into() });
        }
        if self.slow_inner_iters == 0 {
            return Err(Error::Validation { field: "descent.slow_inner_iters".into(), message: "must be positive".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TolI,
    TolGrad,
    MaxIters,
    Stalled,
}

/// One accepted descent step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub phase: Phase,
    pub phi: f64,
    pub chi: f64,
    pub omega: Option<f64>,
    pub total: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub initial_breakdown: FunctionalBreakdown,
    pub final_breakdown: FunctionalBreakdown,
    pub final_grad_norm: f64,
    pub params: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Nodes of the final trajectory where some coordinate is exactly zero —
    /// the isolated-zeros assumption behind the gradient formula cannot be
    /// certified there.
    pub kink_nodes: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    #[serde(skip_serializing)]
    pub final_z: DerivativeGrid,
}

#[derive(Debug, Clone, Copy)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub value: f64,
    pub stalled: bool,
}

/// Armijo backtracking along a fixed descent direction. `trial(alpha)`
/// evaluates the objective at displacement `alpha`; `slope` is the
/// directional derivative at 0 (negative for a descent direction). Nonfinite
/// trial values are treated as rejections. Returns a zero step with the
/// stalled flag when no step down to the floor decreases the objective.
pub fn line_search<F>(
    mut trial: F,
    f0: f64,
    slope: f64,
    init_step: f64,
    config: &DescentConfig,
) -> Result<LineSearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !f0.is_finite() {
        return Err(Error::Nonfinite { context: "line search start".into() });
    }
    if slope >= 0.0 {
        return Ok(LineSearchOutcome { step: 0.0, value: f0, stalled: true });
    }
    let mut alpha = init_step;
    while alpha >= STEP_FLOOR {
        match trial(alpha) {
            Ok(v) if v.is_finite() && v <= f0 + config.armijo * alpha * slope => {
                return Ok(LineSearchOutcome { step: alpha, value: v, stalled: false });
            }
            Ok(_) => {}
            Err(Error::Nonfinite { .. }) => {}
            Err(e) => return Err(e),
        }
        alpha *= config.backtrack;
    }
    Ok(LineSearchOutcome { step: 0.0, value: f0, stalled: true })
}

/// Fast/slow alternating steepest descent from `(z0, p0)`.
pub fn solve(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z0: DerivativeGrid,
    p0: Vec<f64>,
    config: &DescentConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let mut z = z0;
    let mut p = p0;
    let mut breakdown = evaluate_for(spec, grid, &z, &p)?;
    if !breakdown.total.is_finite() {
        return Err(Error::Nonfinite { context: "objective at the initial point".into() });
    }
    let initial_breakdown = breakdown;
    let mut iterations = Vec::new();
    let mut fast_step = config.z_step_init;
    let mut slow_step = config.p_step();
    let mut gradient = gradient_for(spec, grid, &z, &p)?;

    let finish = |z: DerivativeGrid,
                  p: Vec<f64>,
                  breakdown: FunctionalBreakdown,
                  gradient: &GradientBundle,
                  iterations: Vec<IterationRecord>,
                  outer_iters: usize,
                  converged: bool,
                  reason: StopReason|
     -> Result<SolveReport> {
        let kink_nodes = find_kink_nodes(spec, grid, &z)?;
        Ok(SolveReport {
            initial_breakdown,
            final_breakdown: breakdown,
            final_grad_norm: gradient.norm,
            params: p,
            outer_iters,
            converged,
            reason,
            kink_nodes,
            iterations,
            final_z: z,
        })
    };

    if breakdown.total <= config.tol_i {
        return finish(z, p, breakdown, &gradient, iterations, 0, true, StopReason::TolI);
    }

    let mut warmup_remaining = config.warmup_fast_iters;
    for outer in 1..=config.max_outer_iters {
        let mut cycle_moved = false;

        // fast phase: z only, parameters frozen
        gradient = gradient_for(spec, grid, &z, &p)?;
        if gradient.norm <= config.tol_grad {
            return finish(z, p, breakdown, &gradient, iterations, outer - 1, true, StopReason::TolGrad);
        }
        let slope = -gradient.z_norm_sq;
        let outcome = line_search(
            |alpha| {
                let z_try = displace_z(&z, &gradient, alpha);
                evaluate_for(spec, grid, &z_try, &p).map(|b| b.total)
            },
            breakdown.total,
            slope,
            fast_step,
            config,
        )?;
        if !outcome.stalled {
            z = displace_z(&z, &gradient, outcome.step);
            breakdown = evaluate_for(spec, grid, &z, &p)?;
            fast_step = (outcome.step * STEP_GROWTH).max(STEP_FLOOR);
            cycle_moved = true;
            iterations.push(record(outer, Phase::Fast, &breakdown, gradient.norm, outcome.step));
            if breakdown.total <= config.tol_i {
                return finish(z, p, breakdown, &gradient, iterations, outer, true, StopReason::TolI);
            }
        } else {
            // a stalled trajectory ends the warmup; the parameters take over
            warmup_remaining = 0;
        }
        let in_warmup = warmup_remaining > 0;
        warmup_remaining = warmup_remaining.saturating_sub(1);

        // slow phases: parameters only, trajectory frozen
        if !p.is_empty() && !in_warmup {
            for _ in 0..config.slow_inner_iters {
                gradient = gradient_for(spec, grid, &z, &p)?;
                if gradient.norm <= config.tol_grad {
                    return finish(z, p, breakdown, &gradient, iterations, outer, true, StopReason::TolGrad);
                }
                let slope = -gradient.p_norm_sq;
                let outcome = line_search(
                    |alpha| {
                        let p_try = displace_p(&p, &gradient, alpha);
                        evaluate_for(spec, grid, &z, &p_try).map(|b| b.total)
                    },
                    breakdown.total,
                    slope,
                    slow_step,
                    config,
                )?;
                if outcome.stalled {
                    break;
                }
                p = displace_p(&p, &gradient, outcome.step);
                breakdown = evaluate_for(spec, grid, &z, &p)?;
                // slow steps stay small: regrow only up to the configured scale,
                // so the parameters track the trajectory instead of chasing it
                slow_step = (outcome.step * STEP_GROWTH).min(config.p_step()).max(STEP_FLOOR);
                cycle_moved = true;
                iterations.push(record(outer, Phase::Slow, &breakdown, gradient.norm, outcome.step));
                if breakdown.total <= config.tol_i {
                    return finish(z, p, breakdown, &gradient, iterations, outer, true, StopReason::TolI);
                }
            }
        }

        if !cycle_moved {
            gradient = gradient_for(spec, grid, &z, &p)?;
            return finish(z, p, breakdown, &gradient, iterations, outer, false, StopReason::Stalled);
        }
    }

    gradient = gradient_for(spec, grid, &z, &p)?;
    let outer = config.max_outer_iters;
    finish(z, p, breakdown, &gradient, iterations, outer, false, StopReason::MaxIters)
}

fn record(iter: usize, phase: Phase, b: &FunctionalBreakdown, grad_norm: f64, step: f64) -> IterationRecord {
    IterationRecord {
        iter,
        phase,
        phi: b.phi,
        chi: b.chi,
        omega: b.omega,
        total: b.total,
        grad_norm,
        step,
    }
}

fn displace_z(z: &DerivativeGrid, g: &GradientBundle, alpha: f64) -> DerivativeGrid {
    let mut out = z.clone();
    for (o, gv) in out.as_mut_slice().iter_mut().zip(g.z_part.as_slice()) {
        *o -= alpha * gv;
    }
    out
}

fn displace_p(p: &[f64], g: &GradientBundle, alpha: f64) -> Vec<f64> {
    p.iter().zip(&g.p_part).map(|(pv, gv)| pv - alpha * gv).collect()
}

fn find_kink_nodes(spec: &ProblemSpec, grid: &TimeGrid, z: &DerivativeGrid) -> Result<Vec<usize>> {
    let x = build_state(grid, z, &spec.x0)?;
    Ok((0..grid.len())
        .filter(|&k| x.row(k).contains(&0.0))
        .collect())
}
