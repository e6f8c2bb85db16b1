//! Residual functionals on discretized trajectories.
//!
//! The solver minimizes a sum of nonnegative terms: the inclusion term
//! (squared distance of the derivative samples from the admissible
//! intervals), the endpoint term (squared misses of the right-endpoint
//! targets), and — for the relay problem — the surface term (squared surface
//! values along the trajectory). For the smooth control laws the inclusion
//! term is replaced by the squared signed residual against the closed-loop
//! field and the surface term disappears.
//!
//! Integrands are sampled on the same grid as the derivative variable, so the
//! analytic gradients are exact derivatives of these discrete values.

use serde::{Deserialize, Serialize};

use crate::controls::ControlContext;
use crate::error::{Error, Result};
use crate::grid::{build_state, DerivativeGrid, TimeGrid};
use crate::kernel::inclusion_distance;
use crate::problem::{l1_norm, ControlKind, ProblemSpec};

/// Per-term values of the objective. `omega` is absent for the smooth
/// control laws. `total` is always the sum of the present parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBreakdown {
    pub phi: f64,
    pub chi: f64,
    pub omega: Option<f64>,
    pub total: f64,
}

impl FunctionalBreakdown {
    fn new(phi: f64, chi: f64, omega: Option<f64>) -> Self {
        FunctionalBreakdown { phi, chi, omega, total: phi + chi + omega.unwrap_or(0.0) }
    }
}

/// Inclusion term: half the time integral of the summed squared distances
/// from `z_i(t)` to the admissible interval of channel `i`.
pub fn inclusion_term(spec: &ProblemSpec, grid: &TimeGrid, z: &DerivativeGrid) -> Result<f64> {
    let x = build_state(grid, z, &spec.x0)?;
    let mut samples = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let xk = x.row(k);
        let mut sum = 0.0;
        for i in 0..spec.n {
            let h = inclusion_distance(spec, i, xk, z.get(k, i))?;
            sum += h * h;
        }
        samples.push(sum);
    }
    Ok(0.5 * grid.quadrature(&samples)?)
}

/// Endpoint term: half the summed squared misses
/// `(x0_j + integral of z_j - target_j)^2` over the constrained coordinates.
pub fn endpoint_term(spec: &ProblemSpec, grid: &TimeGrid, z: &DerivativeGrid) -> Result<f64> {
    let mut sum = 0.0;
    for (j, target) in spec.endpoint_targets() {
        let miss = spec.x0[j] + grid.quadrature(&z.coordinate(j))? - target;
        sum += miss * miss;
    }
    Ok(0.5 * sum)
}

/// Surface term: half the time integral of `|s(x(t), p)|^2`.
pub fn surface_term(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<f64> {
    let x = build_state(grid, z, &spec.x0)?;
    let mut samples = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let s = spec.surface.evaluate(x.row(k), p)?;
        samples.push(s.iter().map(|v| v * v).sum());
    }
    Ok(0.5 * grid.quadrature(&samples)?)
}

/// Relay-problem objective: inclusion + endpoint + surface terms.
pub fn evaluate(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<FunctionalBreakdown> {
    let phi = inclusion_term(spec, grid, z)?;
    let chi = endpoint_term(spec, grid, z)?;
    let omega = surface_term(spec, grid, z, p)?;
    Ok(FunctionalBreakdown::new(phi, chi, Some(omega)))
}

/// Smooth-control objective: squared signed residual against the closed-loop
/// field on the controlled channels, plus the endpoint term.
pub fn evaluate_smooth(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<FunctionalBreakdown> {
    if !spec.control_kind.is_smooth() {
        return Err(Error::ControlKind {
            expected: "u1 or u2".into(),
            got: spec.control_kind.as_str().into(),
        });
    }
    let controls = ControlContext::new(spec)?;
    let x = build_state(grid, z, &spec.x0)?;
    let mut samples = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let xk = x.row(k);
        let abs_x = l1_norm(xk);
        let s = spec.surface.evaluate(xk, p)?;
        let mut sum = 0.0;
        for i in 0..spec.n {
            let mut residual = z.get(k, i) - spec.row_dot(i, xk);
            if i < spec.m {
                residual -= controls.eval(i, abs_x, s[i])?.value;
            }
            sum += residual * residual;
        }
        samples.push(sum);
    }
    let phi = 0.5 * grid.quadrature(&samples)?;
    let chi = endpoint_term(spec, grid, z)?;
    Ok(FunctionalBreakdown::new(phi, chi, None))
}

/// Dispatch on the problem's control kind.
pub fn evaluate_for(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    z: &DerivativeGrid,
    p: &[f64],
) -> Result<FunctionalBreakdown> {
    match spec.control_kind {
        ControlKind::Relay => evaluate(spec, grid, z, p),
        _ => evaluate_smooth(spec, grid, z, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::support_value;
    use crate::problem::test_fixtures::{example1, example2};
    use approx::assert_abs_diff_eq;

    fn zero_z(spec: &ProblemSpec) -> (TimeGrid, DerivativeGrid) {
        let grid = TimeGrid::new(spec.grid_nodes, spec.horizon).unwrap();
        (grid, DerivativeGrid::zeros(spec.grid_nodes, spec.n))
    }

    #[test]
    fn example1_initial_breakdown_is_37() {
        let spec = example1();
        let (grid, z) = zero_z(&spec);
        let b = evaluate(&spec, &grid, &z, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(b.phi, 32.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.chi, 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.omega.unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.total, 37.0, epsilon = 1e-12);
    }

    #[test]
    fn inclusion_term_zero_when_derivative_matches_center() {
        let mut spec = example1();
        spec.x0 = vec![0.0, 0.0, 0.0];
        let (grid, z) = zero_z(&spec);
        assert_eq!(inclusion_term(&spec, &grid, &z).unwrap(), 0.0);
    }

    #[test]
    fn endpoint_term_zero_when_target_met() {
        let mut spec = example1();
        spec.endpoint = [(1usize, -3.0)].into_iter().collect();
        let (grid, z) = zero_z(&spec);
        assert_eq!(endpoint_term(&spec, &grid, &z).unwrap(), 0.0);
    }

    #[test]
    fn surface_term_constant_offset() {
        let spec = example1();
        let (grid, z) = zero_z(&spec);
        // s = -3 + 4 - 2 = -1 constant over a unit horizon
        let omega = surface_term(&spec, &grid, &z, &[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(omega, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn example2_endpoint_term() {
        let spec = example2();
        let (grid, z) = zero_z(&spec);
        assert_abs_diff_eq!(endpoint_term(&spec, &grid, &z).unwrap(), 11.62750, epsilon = 1e-10);
    }

    #[test]
    fn example2_initial_total() {
        let spec = example2();
        let (grid, z) = zero_z(&spec);
        let b = evaluate_smooth(&spec, &grid, &z, &spec.initial_params).unwrap();
        assert!(b.omega.is_none());
        let rel = (b.total - 1591.75905).abs() / 1591.75905;
        assert!(rel <= 1e-4, "total {} (relative error {})", b.total, rel);
    }

    #[test]
    fn smooth_objective_rejects_relay_problem() {
        let spec = example1();
        let (grid, z) = zero_z(&spec);
        assert!(evaluate_smooth(&spec, &grid, &z, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn smooth_objective_zero_on_equilibrium() {
        // A = 0 and s(x0, p) = 0 make x0 an equilibrium of the closed loop,
        // so z = 0 with endpoint targets at x0 gives a zero objective.
        let json = crate::problem::test_fixtures::example2_json()
            .replace("[[1, -3, 1], [5, 1, -1], [5, -1, 1]]", "[[0,0,0],[0,0,0],[0,0,0]]")
            .replace("{\"1\": 0.55, \"2\": 2.5, \"3\": 2.95}", "{\"1\": 2.0, \"2\": -2.0, \"3\": 2.0}")
            .replace("[0.18, 0.2, 0.12, 0.51]", "[0.5, 0.5, 1.0, -1.0]");
        let spec = ProblemSpec::from_json(&json).unwrap();
        let (grid, z) = zero_z(&spec);
        let b = evaluate_smooth(&spec, &grid, &z, &spec.initial_params).unwrap();
        assert_eq!(b.total, 0.0);
    }

    /// Independent route for the inclusion term: distances recomputed by
    /// brute-force maximization over the two unit directions.
    fn inclusion_term_brute_force(spec: &ProblemSpec, grid: &TimeGrid, z: &DerivativeGrid) -> f64 {
        let x = build_state(grid, z, &spec.x0).unwrap();
        let samples: Vec<f64> = (0..grid.len())
            .map(|k| {
                (0..spec.n)
                    .map(|i| {
                        let h = [-1.0, 1.0]
                            .iter()
                            .map(|&psi| {
                                z.get(k, i) * psi - support_value(spec, i, x.row(k), psi).unwrap()
                            })
                            .fold(0.0f64, f64::max);
                        h * h
                    })
                    .sum()
            })
            .collect();
        0.5 * grid.quadrature(&samples).unwrap()
    }

    #[test]
    fn inclusion_term_matches_brute_force_route() {
        let spec = example1();
        let grid = TimeGrid::new(101, spec.horizon).unwrap();
        let mut z = DerivativeGrid::zeros(101, 3);
        for k in 0..101 {
            let t = grid.node(k);
            z.set(k, 0, 20.0 * (3.0 * t).sin());
            z.set(k, 1, -15.0 * t);
            z.set(k, 2, 18.0 * (2.0 * t).cos());
        }
        let direct = inclusion_term(&spec, &grid, &z).unwrap();
        let brute = inclusion_term_brute_force(&spec, &grid, &z);
        assert_eq!(direct, brute);
        assert!(direct > 0.0);
    }

    #[test]
    fn grid_refinement_is_second_order() {
        let spec = example1();
        let value_at = |n: usize| {
            let grid = TimeGrid::new(n, spec.horizon).unwrap();
            let mut z = DerivativeGrid::zeros(n, 3);
            for k in 0..n {
                let t = grid.node(k);
                z.set(k, 0, (2.0 * t).sin());
                z.set(k, 1, t * t);
                z.set(k, 2, (1.5 * t).cos());
            }
            evaluate(&spec, &grid, &z, &[1.0, 1.0]).unwrap().total
        };
        let coarse = (value_at(101) - value_at(801)).abs();
        let fine = (value_at(201) - value_at(801)).abs();
        assert!(coarse / fine > 3.0, "coarse {} fine {}", coarse, fine);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            // every part is nonnegative and re-evaluation is bit-identical
            #[test]
            fn parts_nonnegative_and_pure(
                seed in proptest::collection::vec(-10.0f64..10.0, 3 * 21),
                p in proptest::collection::vec(-2.0f64..2.0, 2),
            ) {
                let spec = example1();
                let grid = TimeGrid::new(21, spec.horizon).unwrap();
                let mut z = DerivativeGrid::zeros(21, 3);
                z.as_mut_slice().copy_from_slice(&seed);
                let b1 = evaluate(&spec, &grid, &z, &p).unwrap();
                let b2 = evaluate(&spec, &grid, &z, &p).unwrap();
                prop_assert_eq!(b1, b2);
                prop_assert!(b1.phi >= 0.0);
                prop_assert!(b1.chi >= 0.0);
                prop_assert!(b1.omega.unwrap() >= 0.0);
                prop_assert!((b1.total - (b1.phi + b1.chi + b1.omega.unwrap())).abs() == 0.0);
            }

            // phi = 0 exactly when the distance vanishes at every node
            #[test]
            fn inclusion_term_zero_iff_pointwise_zero(
                seed in proptest::collection::vec(-8.0f64..8.0, 3 * 21),
            ) {
                let spec = example1();
                let grid = TimeGrid::new(21, spec.horizon).unwrap();
                let mut z = DerivativeGrid::zeros(21, 3);
                z.as_mut_slice().copy_from_slice(&seed);
                let phi = inclusion_term(&spec, &grid, &z).unwrap();
                let x = build_state(&grid, &z, &spec.x0).unwrap();
                let mut all_zero = true;
                for k in 0..21 {
                    for i in 0..3 {
                        if inclusion_distance(&spec, i, x.row(k), z.get(k, i)).unwrap() != 0.0 {
                            all_zero = false;
                        }
                    }
                }
                prop_assert_eq!(phi == 0.0, all_zero);
            }
        }
    }
}
