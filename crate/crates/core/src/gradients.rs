//! Analytic gradients of the discretized objectives, plus an independent
//! finite-difference oracle.
//!
//! The implemented gradients are the exact derivatives of the discrete
//! functionals, arranged in the shape of the continuous formulas: a direct
//! per-node term, tail integrals carrying the state sensitivity (assembled
//! from reverse cumulative weighted sums), the endpoint residual, and a
//! finite-dimensional parameter part. Exactness makes the finite-difference
//! checks tight and the line search reliable; under grid refinement the
//! samples converge to the continuous gradients.
//!
//! State sensitivity: `x[k] = x0 + sum_j a_kj z[j]` with cumulative-trapezoid
//! coefficients `a_kj` (`dt/2` for `j = 0` and `j = k`, `dt` between, zero for
//! `j > k`). For a per-node integrand `F` the z-sample of its weighted sum is
//! `tail_q = (1/w_q) sum_k a_kq w_k F(k)`, which works out to `U_1` at the
//! first node and `(dt/2) F(q) + U_{q+1}` elsewhere, where `U` are the
//! reverse cumulative weighted sums.

use crate::controls::ControlContext;
use crate::error::{Error, Result};
use crate::grid::{build_state, DerivativeGrid, SampledTrajectory, TimeGrid};
use crate::problem::{l1_norm, sign, ControlKind, ProblemSpec};

/// Gradient samples in the derivative variable (already divided by the node
/// weights, i.e. L2 representers) together with the finite-dimensional
/// parameter part.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub z_part: SampledTrajectory,
    pub p_part: Vec<f64>,
    /// Squared L2 norm of the z-part: `integral |g_z|^2`.
    pub z_norm_sq: f64,
    /// Squared Euclidean norm of the parameter part.
    pub p_norm_sq: f64,
    /// Combined norm: `sqrt(integral |g_z|^2 + |g_p|^2)`.
    pub norm: f64,
}

impl GradientBundle {
    pub fn new(grid: &TimeGrid, z_part: SampledTrajectory, p_part: Vec<f64>) -> Result<Self> {
        let samples: Vec<f64> = (0..z_part.n_nodes())
            .map(|k| z_part.row(k).iter().map(|v| v * v).sum())
            .collect();
        let z_norm_sq = grid.quadrature(&samples)?;
        let p_norm_sq: f64 = p_part.iter().map(|v| v * v).sum();
        let norm = (z_norm_sq + p_norm_sq).sqrt();
        Ok(GradientBundle { z_part, p_part, z_norm_sq, p_norm_sq, norm })
    }

    pub fn is_finite(&self) -> bool {
        self.norm.is_finite()
    }
}

/// `tail_q(F)`: exact z-sensitivity weighting of a state-dependent per-node
/// integrand, as derived in the module docs.
fn exact_tails(grid: &TimeGrid, samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let u = grid.reverse_weighted_sums(samples);
    let half_dt = grid.dt() / 2.0;
    (0..n)
        .map(|q| {
            if q == 0 {
                u[1]
            } else if q + 1 < n {
                half_dt * samples[q] + u[q + 1]
            } else {
                half_dt * samples[q]
            }
        })
        .collect()
}

/// Endpoint residuals `x0_j + integral z_j - target_j` over constrained
/// coordinates, as `(coordinate, residual)` pairs.
fn endpoint_residuals(spec: &ProblemSpec, grid: &TimeGrid, z: &DerivativeGrid) -> Result<Vec<(usize, f64)>> {
    spec.endpoint_targets()
        .into_iter()
        .map(|(j, target)| Ok((j, spec.x0[j] + grid.quadrature(&z.coordinate(j))? - target)))
        .collect()
}

/// Gradient of the relay-problem objective.
pub fn gradient(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<GradientBundle> {
    let n_nodes = grid.len();
    let n = spec.n;
    let x = build_state(grid, z, &spec.x0)?;
    let jac_x = spec.surface.jacobian_x(p)?;
    let param_dim = spec.surface.param_dim();

    // per-node quantities and the tail integrand, one column per coordinate
    let mut direct = SampledTrajectory::zeros(n_nodes, n);
    let mut tail_integrand = SampledTrajectory::zeros(n_nodes, n);
    let mut p_accum = vec![0.0; param_dim];
    for k in 0..n_nodes {
        let xk = x.row(k);
        let abs_x = l1_norm(xk);
        let s = spec.surface.evaluate(xk, p)?;
        let jac_p = spec.surface.jacobian_p(xk)?;

        // h_i and h_i * psi_i per channel; gain-weighted distance sum for the
        // |x| kink part
        let mut gain_weighted = 0.0;
        let mut h_psi = vec![0.0; n];
        for i in 0..n {
            let gap = z.get(k, i) - spec.row_dot(i, xk);
            let h = if i < spec.m {
                (gap.abs() - spec.gain_upper[i] * abs_x).max(0.0)
            } else {
                gap.abs()
            };
            if h > 0.0 {
                h_psi[i] = h * sign(gap);
                if i < spec.m {
                    gain_weighted += h * spec.gain_upper[i];
                }
            }
            direct.set(k, i, h_psi[i]);
        }
        for r in 0..n {
            let mut f = 0.0;
            for i in 0..n {
                f -= h_psi[i] * spec.a[i][r];
            }
            f -= gain_weighted * sign(xk[r]);
            for i in 0..spec.m {
                f += s[i] * jac_x[i][r];
            }
            tail_integrand.set(k, r, f);
        }
        let w = grid.weight(k);
        for i in 0..spec.m {
            for (d, acc) in p_accum.iter_mut().enumerate() {
                *acc += w * s[i] * jac_p[i][d];
            }
        }
    }

    assemble(spec, grid, z, direct, tail_integrand, p_accum)
}

/// Gradient of the smooth-control objective.
pub fn gradient_smooth(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<GradientBundle> {
    if !spec.control_kind.is_smooth() {
        return Err(Error::ControlKind {
            expected: "u1 or u2".into(),
            got: spec.control_kind.as_str().into(),
        });
    }
    let controls = ControlContext::new(spec)?;
    let n_nodes = grid.len();
    let n = spec.n;
    let x = build_state(grid, z, &spec.x0)?;
    let jac_x = spec.surface.jacobian_x(p)?;
    let param_dim = spec.surface.param_dim();

    let mut direct = SampledTrajectory::zeros(n_nodes, n);
    let mut tail_integrand = SampledTrajectory::zeros(n_nodes, n);
    let mut p_accum = vec![0.0; param_dim];
    let mut residual = vec![0.0; n];
    let mut d_s = vec![0.0; spec.m];
    let mut d_abs_x = vec![0.0; spec.m];
    for k in 0..n_nodes {
        let xk = x.row(k);
        let abs_x = l1_norm(xk);
        let s = spec.surface.evaluate(xk, p)?;
        let jac_p = spec.surface.jacobian_p(xk)?;

        for i in 0..n {
            let mut r = z.get(k, i) - spec.row_dot(i, xk);
            if i < spec.m {
                let u = controls.eval(i, abs_x, s[i])?;
                r -= u.value;
                d_s[i] = u.d_s;
                d_abs_x[i] = u.d_abs_x;
            }
            residual[i] = r;
            direct.set(k, i, r);
        }
        for r in 0..n {
            let mut f = 0.0;
            for i in 0..n {
                f -= residual[i] * spec.a[i][r];
            }
            for i in 0..spec.m {
                let du_dx = d_abs_x[i] * sign(xk[r]) + d_s[i] * jac_x[i][r];
                f -= residual[i] * du_dx;
            }
            tail_integrand.set(k, r, f);
        }
        let w = grid.weight(k);
        for i in 0..spec.m {
            for (d, acc) in p_accum.iter_mut().enumerate() {
                *acc -= w * residual[i] * d_s[i] * jac_p[i][d];
            }
        }
    }

    assemble(spec, grid, z, direct, tail_integrand, p_accum)
}

/// Dispatch on the problem's control kind.
pub fn gradient_for(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<GradientBundle> {
    match spec.control_kind {
        ControlKind::Relay => gradient(spec, grid, z, p),
        _ => gradient_smooth(spec, grid, z, p),
    }
}

fn assemble(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    direct: SampledTrajectory,
    tail_integrand: SampledTrajectory,
    p_part: Vec<f64>,
) -> Result<GradientBundle> {
    let n_nodes = grid.len();
    let n = spec.n;
    let mut g_z = direct;
    for r in 0..n {
        let tails = exact_tails(grid, &tail_integrand.coordinate(r));
        for (k, t) in tails.iter().enumerate() {
            let v = g_z.get(k, r) + t;
            g_z.set(k, r, v);
        }
    }
    for (j, resid) in endpoint_residuals(spec, grid, z)? {
        for k in 0..n_nodes {
            let v = g_z.get(k, j) + resid;
            g_z.set(k, j, v);
        }
    }
    GradientBundle::new(grid, g_z, p_part)
}

/// Central-difference gradient of a discretized functional: every `z[k][i]`
/// (divided by the node weight) and every parameter, with per-coordinate
/// steps `step * max(1, |value|)`.
pub fn numeric_gradient<F>(
    mut f: F,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
    step: f64,
) -> Result<GradientBundle>
where
    F: FnMut(&DerivativeGrid, &[f64]) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Validation { field: "step".into(), message: format!("must be positive, got {}", step) });
    }
    let mut z_work = z.clone();
    let mut g_z = SampledTrajectory::zeros(z.n_nodes(), z.n_coords());
    for k in 0..z.n_nodes() {
        for i in 0..z.n_coords() {
            let base = z.get(k, i);
            let h = step * base.abs().max(1.0);
            z_work.set(k, i, base + h);
            let plus = f(&z_work, p)?;
            z_work.set(k, i, base - h);
            let minus = f(&z_work, p)?;
            z_work.set(k, i, base);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Nonfinite { context: format!("numeric gradient at node {}, coordinate {}", k, i) });
            }
            g_z.set(k, i, (plus - minus) / (2.0 * h) / grid.weight(k));
        }
    }
    let mut p_work = p.to_vec();
    let mut g_p = vec![0.0; p.len()];
    for (d, slot) in g_p.iter_mut().enumerate() {
        let base = p[d];
        let h = step * base.abs().max(1.0);
        p_work[d] = base + h;
        let plus = f(z, &p_work)?;
        p_work[d] = base - h;
        let minus = f(z, &p_work)?;
        p_work[d] = base;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Nonfinite { context: format!("numeric gradient in parameter {}", d) });
        }
        *slot = (plus - minus) / (2.0 * h);
    }
    GradientBundle::new(grid, g_z, g_p)
}

/// Distance of a point `(z, p)` from the nearest gradient kink: the hinge
/// boundaries of the controlled channels, coordinate zeros of the trajectory,
/// the surface zeros, and (for the square-root law) the blend seams. Points
/// with a comfortable margin are safe for central-difference checks.
pub fn kink_margin(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<f64> {
    let x = build_state(grid, z, &spec.x0)?;
    let mut margin = f64::INFINITY;
    let seams = match spec.control_kind {
        ControlKind::SqrtCubic => Some(spec.u2_params()?.1),
        _ => None,
    };
    for k in 0..grid.len() {
        let xk = x.row(k);
        let abs_x = l1_norm(xk);
        for &v in xk {
            margin = margin.min(v.abs());
        }
        for i in 0..spec.m {
            let gap = (z.get(k, i) - spec.row_dot(i, xk)).abs();
            if spec.control_kind == ControlKind::Relay {
                margin = margin.min((gap - spec.gain_upper[i] * abs_x).abs());
            }
        }
        if spec.control_kind.is_smooth() {
            let s = spec.surface.evaluate(xk, p)?;
            for &si in &s {
                margin = margin.min(si.abs());
                if let Some(delta) = seams {
                    margin = margin.min((si.abs() - delta).abs());
                }
            }
        }
    }
    Ok(margin)
}

/// Draw a random point of the decision space that keeps a margin of at least
/// `min_margin` from every gradient kink. Deterministic in the seed.
pub fn sample_smooth_point(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    seed: u64,
    min_margin: f64,
) -> Result<(DerivativeGrid, Vec<f64>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let z_scale = 4.0;
    for _attempt in 0..200 {
        let mut z = DerivativeGrid::zeros(grid.len(), spec.n);
        for v in z.as_mut_slice() {
            *v = rng.gen_range(-z_scale..z_scale);
        }
        let p: Vec<f64> = spec
            .initial_params
            .iter()
            .map(|&v| v + rng.gen_range(-0.15..0.15))
            .collect();
        if kink_margin(spec, grid, &z, &p)? >= min_margin {
            return Ok((z, p));
        }
    }
    Err(Error::Validation {
        field: "sample_smooth_point".into(),
        message: format!("no point with kink margin {} found in 200 draws", min_margin),
    })
}

/// Scale-aware disagreement between two bundles: infinity-norm difference of
/// each part divided by `max(1, infinity-norm of the reference part)`.
/// Returns `(z_part, p_part)`.
pub fn bundle_disagreement(a: &GradientBundle, b: &GradientBundle) -> (f64, f64) {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff_inf = |x: &[f64], y: &[f64]| {
        x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    };
    let z_scale = inf(b.z_part.as_slice()).max(1.0);
    let z_err = diff_inf(a.z_part.as_slice(), b.z_part.as_slice()) / z_scale;
    let p_scale = inf(&b.p_part).max(1.0);
    let p_err = if a.p_part.is_empty() { 0.0 } else { diff_inf(&a.p_part, &b.p_part) / p_scale };
    (z_err, p_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{evaluate, evaluate_smooth};
    use crate::problem::test_fixtures::{example1, example2};
    use approx::assert_abs_diff_eq;

    fn smooth_z(grid: &TimeGrid, n: usize, scale: f64) -> DerivativeGrid {
        let mut z = DerivativeGrid::zeros(grid.len(), n);
        for k in 0..grid.len() {
            let t = grid.node(k);
            for i in 0..n {
                z.set(k, i, scale * ((1.7 * t + i as f64).sin() + 0.3));
            }
        }
        z
    }

    #[test]
    fn zero_bundle_at_exact_solution() {
        let mut spec = example1();
        spec.x0 = vec![0.0, 0.0, 0.0];
        let grid = TimeGrid::new(31, spec.horizon).unwrap();
        let z = DerivativeGrid::zeros(31, 3);
        // surface through the origin: s = x1 + p1 x2 - p2 with p2 = 0
        let g = gradient(&spec, &grid, &z, &[1.0, 0.0]).unwrap();
        assert_eq!(g.norm, 0.0);
        assert!(g.z_part.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.p_part.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_fd_at_example1_initial_point() {
        let spec = example1();
        let grid = TimeGrid::new(61, spec.horizon).unwrap();
        let z = DerivativeGrid::zeros(61, 3);
        let p = [1.0, 1.0];
        let analytic = gradient(&spec, &grid, &z, &p).unwrap();
        let fd = numeric_gradient(
            |z, p| evaluate(&spec, &grid, z, p).map(|b| b.total),
            &grid,
            &z,
            &p,
            1e-6,
        )
        .unwrap();
        let (ez, ep) = bundle_disagreement(&analytic, &fd);
        assert!(ez <= 1e-6, "z-part disagreement {}", ez);
        assert!(ep <= 1e-8, "p-part disagreement {}", ep);
    }

    #[test]
    fn matches_fd_at_random_smooth_point() {
        let spec = example1();
        let grid = TimeGrid::new(41, spec.horizon).unwrap();
        let z = smooth_z(&grid, 3, 3.0);
        let p = [0.7, 1.3];
        let analytic = gradient(&spec, &grid, &z, &p).unwrap();
        let fd = numeric_gradient(
            |z, p| evaluate(&spec, &grid, z, p).map(|b| b.total),
            &grid,
            &z,
            &p,
            1e-6,
        )
        .unwrap();
        let (ez, ep) = bundle_disagreement(&analytic, &fd);
        assert!(ez <= 1e-6, "z-part disagreement {}", ez);
        assert!(ep <= 1e-8, "p-part disagreement {}", ep);
    }

    #[test]
    fn smooth_gradient_matches_fd_at_example2_initial_point() {
        let spec = example2();
        let grid = TimeGrid::new(61, spec.horizon).unwrap();
        let z = DerivativeGrid::zeros(61, 3);
        let p = spec.initial_params.clone();
        let analytic = gradient_smooth(&spec, &grid, &z, &p).unwrap();
        let fd = numeric_gradient(
            |z, p| evaluate_smooth(&spec, &grid, z, p).map(|b| b.total),
            &grid,
            &z,
            &p,
            1e-6,
        )
        .unwrap();
        let (ez, ep) = bundle_disagreement(&analytic, &fd);
        assert!(ez <= 1e-6, "z-part disagreement {}", ez);
        assert!(ep <= 1e-8, "p-part disagreement {}", ep);
    }

    #[test]
    fn smooth_gradient_zero_at_equilibrium() {
        // A = 0 with the surface through x0 makes the zero trajectory exact
        let json = crate::problem::test_fixtures::example2_json()
            .replace("[[1, -3, 1], [5, 1, -1], [5, -1, 1]]", "[[0,0,0],[0,0,0],[0,0,0]]")
            .replace("{\"1\": 0.55, \"2\": 2.5, \"3\": 2.95}", "{\"1\": 2.0, \"2\": -2.0, \"3\": 2.0}")
            .replace("[0.18, 0.2, 0.12, 0.51]", "[0.5, 0.5, 1.0, -1.0]");
        let spec = crate::problem::ProblemSpec::from_json(&json).unwrap();
        let grid = TimeGrid::new(31, spec.horizon).unwrap();
        let z = DerivativeGrid::zeros(31, 3);
        let g = gradient_smooth(&spec, &grid, &z, &spec.initial_params).unwrap();
        assert_eq!(g.norm, 0.0);
    }

    #[test]
    fn smooth_gradient_rejects_relay_problem() {
        let spec = example1();
        let grid = TimeGrid::new(11, spec.horizon).unwrap();
        let z = DerivativeGrid::zeros(11, 3);
        assert!(gradient_smooth(&spec, &grid, &z, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn functional_decreases_along_negative_gradient() {
        let spec = example1();
        let grid = TimeGrid::new(61, spec.horizon).unwrap();
        let z = DerivativeGrid::zeros(61, 3);
        let p = [1.0, 1.0];
        let g = gradient(&spec, &grid, &z, &p).unwrap();
        let f0 = evaluate(&spec, &grid, &z, &p).unwrap().total;
        let mut step = 0.5;
        let mut decreased = false;
        for _ in 0..30 {
            let mut z_try = z.clone();
            for k in 0..61 {
                for i in 0..3 {
                    z_try.set(k, i, z.get(k, i) - step * g.z_part.get(k, i));
                }
            }
            let p_try: Vec<f64> = p.iter().zip(&g.p_part).map(|(pv, gv)| pv - step * gv).collect();
            let f1 = evaluate(&spec, &grid, &z_try, &p_try).unwrap().total;
            if f1 < f0 {
                decreased = true;
                break;
            }
            step *= 0.5;
        }
        assert!(decreased, "no decrease along the negative gradient");
    }

    #[test]
    fn fd_oracle_exact_on_quadratic_functional() {
        // f = 1/2 integral |z|^2: the L2 gradient sample is z itself
        let grid = TimeGrid::new(21, 1.0).unwrap();
        let z = smooth_z(&grid, 2, 1.0);
        let f = |z: &DerivativeGrid, _p: &[f64]| {
            let samples: Vec<f64> = (0..z.n_nodes())
                .map(|k| z.row(k).iter().map(|v| v * v).sum())
                .collect();
            Ok(0.5 * grid.quadrature(&samples)?)
        };
        let fd = numeric_gradient(f, &grid, &z, &[], 1e-6).unwrap();
        for k in 0..21 {
            for i in 0..2 {
                assert_abs_diff_eq!(fd.z_part.get(k, i), z.get(k, i), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn fd_oracle_rejects_bad_step() {
        let grid = TimeGrid::new(5, 1.0).unwrap();
        let z = DerivativeGrid::zeros(5, 1);
        let r = numeric_gradient(|_, _| Ok(0.0), &grid, &z, &[], 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn bundle_norm_combines_both_parts() {
        let grid = TimeGrid::new(3, 1.0).unwrap();
        let mut z_part = SampledTrajectory::zeros(3, 1);
        for k in 0..3 {
            z_part.set(k, 0, 2.0);
        }
        let b = GradientBundle::new(&grid, z_part, vec![3.0]).unwrap();
        // integral of 4 over [0,1] is 4; plus 9 = 13
        assert_abs_diff_eq!(b.norm, 13.0f64.sqrt(), epsilon = 1e-12);
    }
}
