//! Pointwise machinery of the differential inclusion.
//!
//! Per channel the admissible derivative set is an interval: center `A_i x`,
//! radius `gain_upper_i * |x|` for controlled channels and zero otherwise.
//! The support function turns membership into scalar inequalities over the
//! two unit directions; `inclusion_distance` is the distance from a candidate
//! derivative to the interval, and `maximizing_direction` is the direction
//! achieving it. All functions here are pure.

use crate::error::{Error, Result};
use crate::problem::{l1_norm, sign, ProblemSpec};

/// Channel classification: the first `m` coordinates carry the control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelKind {
    /// 0-based channel index.
    pub index: usize,
    /// Whether the channel's derivative set has nonzero radius.
    pub controlled: bool,
}

impl ChannelKind {
    pub fn new(spec: &ProblemSpec, index: usize) -> Result<Self> {
        if index >= spec.n {
            return Err(Error::IndexOutOfRange { what: "channel".into(), index, len: spec.n });
        }
        Ok(ChannelKind { index, controlled: index < spec.m })
    }
}

/// Support function of channel `i`'s derivative set in direction `psi`:
/// `psi * (A_i x) + gain_upper_i * |x| * |psi|` when controlled, else
/// `psi * (A_i x)`.
pub fn support_value(spec: &ProblemSpec, i: usize, x: &[f64], psi: f64) -> Result<f64> {
    let channel = ChannelKind::new(spec, i)?;
    let center = psi * spec.row_dot(i, x);
    if channel.controlled {
        Ok(center + spec.gain_upper[i] * l1_norm(x) * psi.abs())
    } else {
        Ok(center)
    }
}

/// Distance from `z_i` to the admissible interval of channel `i`:
/// `max(0, |z_i - A_i x| - gain_upper_i |x|)` when controlled, else
/// `|z_i - A_i x|`. Zero exactly when the inclusion holds at this point.
pub fn inclusion_distance(spec: &ProblemSpec, i: usize, x: &[f64], z_i: f64) -> Result<f64> {
    let channel = ChannelKind::new(spec, i)?;
    let gap = (z_i - spec.row_dot(i, x)).abs();
    if channel.controlled {
        Ok((gap - spec.gain_upper[i] * l1_norm(x)).max(0.0))
    } else {
        Ok(gap)
    }
}

/// The unit direction achieving the positive maximum of
/// `z_i psi - support_value(i, x, psi)`: `sign(z_i - A_i x)` whenever the
/// distance is positive, and the fixed `+1` otherwise.
pub fn maximizing_direction(spec: &ProblemSpec, i: usize, x: &[f64], z_i: f64) -> Result<f64> {
    let h = inclusion_distance(spec, i, x, z_i)?;
    if h > 0.0 {
        Ok(sign(z_i - spec.row_dot(i, x)))
    } else {
        Ok(1.0)
    }
}

/// One interval component of the distance superdifferential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Interval { lower: v, upper: v }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Superdifferential of `inclusion_distance` in `(x, z_i)` at a point.
///
/// The x-part is interval-valued only where some `x_j = 0`; everywhere else
/// each component degenerates to the smooth-branch gradient. The z-slot is
/// always the single coefficient `psi_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSuperdiff {
    /// Per state coordinate: bounds of the x-part component.
    pub x_part: Vec<Interval>,
    /// Coefficient of the z-slot.
    pub z_coeff: f64,
}

/// Pointwise superdifferential of the distance function of channel `i`.
///
/// For a controlled channel the x-part of component `j` is
/// `-psi* A_ij - gain_upper_i sign(x_j) |psi*|` when `x_j != 0` and the full
/// interval `[-psi* A_ij - g, -psi* A_ij + g]` with `g = gain_upper_i |psi*|`
/// at `x_j = 0`. Uncontrolled channels give the singleton gradient
/// `-psi* A_i`.
pub fn distance_superdifferential(
    spec: &ProblemSpec,
    i: usize,
    x: &[f64],
    z_i: f64,
) -> Result<DistanceSuperdiff> {
    let channel = ChannelKind::new(spec, i)?;
    let psi = maximizing_direction(spec, i, x, z_i)?;
    let x_part = (0..spec.n)
        .map(|j| {
            let smooth = -psi * spec.a[i][j];
            if !channel.controlled {
                return Interval::point(smooth);
            }
            let g = spec.gain_upper[i] * psi.abs();
            if x[j] != 0.0 {
                Interval::point(smooth - g * sign(x[j]))
            } else {
                Interval { lower: smooth - g, upper: smooth + g }
            }
        })
        .collect();
    Ok(DistanceSuperdiff { x_part, z_coeff: psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::test_fixtures::example1;
    use approx::assert_abs_diff_eq;

    #[test]
    fn support_value_controlled_channel() {
        let spec = example1();
        // A_1 is the zero row, |x| = 13
        let v = support_value(&spec, 0, &[-3.0, 4.0, 6.0], 1.0).unwrap();
        assert_abs_diff_eq!(v, 13.0);
    }

    #[test]
    fn support_value_origin_is_zero() {
        let spec = example1();
        for i in 0..3 {
            assert_eq!(support_value(&spec, i, &[0.0; 3], -1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn support_value_uncontrolled_channel() {
        let spec = example1();
        // A_2 x = x1 - x2 = -7
        let v = support_value(&spec, 1, &[-3.0, 4.0, 6.0], -1.0).unwrap();
        assert_abs_diff_eq!(v, 7.0);
    }

    #[test]
    fn support_value_index_out_of_range() {
        let spec = example1();
        assert!(support_value(&spec, 3, &[0.0; 3], 1.0).is_err());
    }

    #[test]
    fn distance_at_initial_point() {
        let spec = example1();
        let x = [-3.0, 4.0, 6.0];
        assert_eq!(inclusion_distance(&spec, 0, &x, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(inclusion_distance(&spec, 1, &x, 0.0).unwrap(), 7.0);
        assert_abs_diff_eq!(inclusion_distance(&spec, 2, &x, 0.0).unwrap(), 4.0);
    }

    #[test]
    fn distance_zero_when_matching_center() {
        let spec = example1();
        let x = [1.0, 2.0, -1.0];
        for i in 0..3 {
            let z = spec.row_dot(i, &x);
            assert_eq!(inclusion_distance(&spec, i, &x, z).unwrap(), 0.0);
        }
    }

    #[test]
    fn distance_outside_interval() {
        let spec = example1();
        // interval [-1, 1]: distance from 2 is 1
        let v = inclusion_distance(&spec, 0, &[1.0, 0.0, 0.0], 2.0).unwrap();
        assert_abs_diff_eq!(v, 1.0);
    }

    #[test]
    fn direction_sign_of_violation() {
        let spec = example1();
        let x = [-3.0, 4.0, 6.0];
        assert_eq!(maximizing_direction(&spec, 1, &x, 0.0).unwrap(), 1.0);
        assert_eq!(maximizing_direction(&spec, 2, &x, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn direction_defaults_to_plus_one_inside() {
        let spec = example1();
        assert_eq!(maximizing_direction(&spec, 0, &[-3.0, 4.0, 6.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn superdiff_positive_coordinate_is_degenerate() {
        let spec = example1();
        // h = 20 - 10 > 0, psi* = +1 at x = (0, 4, 6), z = 20
        let sd = distance_superdifferential(&spec, 0, &[0.0, 4.0, 6.0], 20.0).unwrap();
        assert_eq!(sd.z_coeff, 1.0);
        assert_eq!(sd.x_part[0], Interval { lower: -1.0, upper: 1.0 });
        assert_eq!(sd.x_part[1], Interval::point(-1.0));
        assert_eq!(sd.x_part[2], Interval::point(-1.0));
    }

    #[test]
    fn superdiff_negative_coordinate_flips_sign() {
        let spec = example1();
        let sd = distance_superdifferential(&spec, 0, &[-2.0, 0.0, 1.0], 20.0).unwrap();
        assert_eq!(sd.x_part[0], Interval::point(1.0));
        assert_eq!(sd.x_part[1], Interval { lower: -1.0, upper: 1.0 });
        assert_eq!(sd.x_part[2], Interval::point(-1.0));
    }

    #[test]
    fn superdiff_uncontrolled_is_singleton_gradient() {
        let spec = example1();
        // channel 2: A_2 = (1, -1, 0), z - A_2 x = 7 > 0
        let sd = distance_superdifferential(&spec, 1, &[-3.0, 4.0, 6.0], 0.0).unwrap();
        assert_eq!(sd.z_coeff, 1.0);
        assert_eq!(sd.x_part[0], Interval::point(-1.0));
        assert_eq!(sd.x_part[1], Interval::point(1.0));
        assert_eq!(sd.x_part[2], Interval::point(0.0));
    }

    /// Away from coordinate zeros every component is degenerate and equals
    /// the central-difference gradient of the distance.
    #[test]
    fn superdiff_matches_fd_on_smooth_branch() {
        let spec = example1();
        let points = [([1.5, -2.0, 3.0], 25.0), ([-0.5, 0.75, -1.25], -14.0), ([2.0, 2.0, 2.0], 30.0)];
        let eps = 1e-6;
        for (x, z) in points {
            let h0 = inclusion_distance(&spec, 0, &x, z).unwrap();
            assert!(h0 > 0.0, "test point must violate the inclusion");
            let sd = distance_superdifferential(&spec, 0, &x, z).unwrap();
            for j in 0..3 {
                assert!(sd.x_part[j].is_degenerate());
                let mut xp = x;
                let mut xm = x;
                xp[j] += eps;
                xm[j] -= eps;
                let fd = (inclusion_distance(&spec, 0, &xp, z).unwrap()
                    - inclusion_distance(&spec, 0, &xm, z).unwrap())
                    / (2.0 * eps);
                let analytic = sd.x_part[j].lower;
                assert!(
                    (fd - analytic).abs() <= 1e-7 * (1.0 + analytic.abs()),
                    "coordinate {}: fd {} vs analytic {}",
                    j,
                    fd,
                    analytic
                );
            }
            // z-slot as well
            let fdz = (inclusion_distance(&spec, 0, &x, z + eps).unwrap()
                - inclusion_distance(&spec, 0, &x, z - eps).unwrap())
                / (2.0 * eps);
            assert_abs_diff_eq!(fdz, sd.z_coeff, epsilon = 1e-7);
        }
    }

    /// Directional derivative of the distance along `±e_j` at `x_j = 0`
    /// equals the minimum of the pairing over the interval component.
    #[test]
    fn superdiff_one_sided_consistency_at_zero() {
        let spec = example1();
        let x = [0.0, 4.0, 6.0];
        let z = 20.0;
        let sd = distance_superdifferential(&spec, 0, &x, z).unwrap();
        let h0 = inclusion_distance(&spec, 0, &x, z).unwrap();
        let eps = 1e-7;
        for dir in [1.0, -1.0] {
            let mut xp = x;
            xp[0] += dir * eps;
            let hp = inclusion_distance(&spec, 0, &xp, z).unwrap();
            let deriv = (hp - h0) / eps;
            let pairing_min = (sd.x_part[0].lower * dir).min(sd.x_part[0].upper * dir);
            assert_abs_diff_eq!(deriv, pairing_min, epsilon = 1e-6);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Closed-form distance equals the explicit maximum over the two unit
        /// directions, exactly.
        #[test]
        fn closed_form_matches_brute_force_seeded() {
            let spec = example1();
            let mut state = 0x2545F4914F6CDD1Du64;
            let mut next = move || {
                // xorshift; uniform in [-8, 8]
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 16.0 - 8.0
            };
            for trial in 0..10_000 {
                let i = trial % 3;
                let x = [next(), next(), next()];
                let z = next() * 3.0;
                let closed = inclusion_distance(&spec, i, &x, z).unwrap();
                let brute = [-1.0, 1.0]
                    .iter()
                    .map(|&psi| z * psi - support_value(&spec, i, &x, psi).unwrap())
                    .fold(0.0f64, f64::max);
                assert_eq!(closed, brute, "i = {}, x = {:?}, z = {}", i, x, z);
            }
        }

        proptest! {
            // h = 0 iff z lies inside the admissible interval
            #[test]
            fn zero_distance_iff_membership(
                x in proptest::collection::vec(-6.0f64..6.0, 3),
                z in -30.0f64..30.0,
            ) {
                let spec = example1();
                for i in 0..3 {
                    let h = inclusion_distance(&spec, i, &x, z).unwrap();
                    let center = spec.row_dot(i, &x);
                    let radius = if i < spec.m { spec.gain_upper[i] * l1_norm(&x) } else { 0.0 };
                    let inside = center - radius <= z && z <= center + radius;
                    prop_assert_eq!(h == 0.0, inside);
                }
            }

            // the maximizer direction actually attains the distance
            #[test]
            fn direction_attains_the_maximum(
                x in proptest::collection::vec(-6.0f64..6.0, 3),
                z in -30.0f64..30.0,
            ) {
                let spec = example1();
                for i in 0..3 {
                    let h = inclusion_distance(&spec, i, &x, z).unwrap();
                    if h > 0.0 {
                        let psi = maximizing_direction(&spec, i, &x, z).unwrap();
                        let attained = z * psi - support_value(&spec, i, &x, psi).unwrap();
                        prop_assert!((attained - h).abs() <= 1e-12 * h.max(1.0));
                    }
                }
            }
        }
    }
}
