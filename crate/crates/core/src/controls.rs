//! The three feedback laws and their exact partial derivatives.
//!
//! Every law scales `alpha_i |x|` by a scalar shape function of the surface
//! value `s_i`. The relay shape is `-sign(s)`; the exponentially weighted
//! shape is `-s exp(-|s|)` (using `sign(s)(-s) = -|s|`, which keeps the
//! expression continuous through `s = 0`); the square-root shape is
//! `-k sqrt(|s|) sign(s)` outside `[-delta, delta]` with a cubic blend inside
//! chosen so value and slope match at the seams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{l1_norm, sign, ControlKind, ProblemSpec};

/// A control value with the partials needed by the gradient assembly:
/// `d_s` is the derivative in the surface value, `d_abs_x` the derivative in
/// `|x|` (chained through `sign(x_j)` per coordinate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEval {
    pub value: f64,
    pub d_s: f64,
    pub d_abs_x: f64,
}

/// Cubic blend coefficients of the square-root law:
/// `u = -alpha |x| (e s^3 + f s)` on `[-delta, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicCoeffs {
    pub e: f64,
    pub f: f64,
}

impl CubicCoeffs {
    /// Unique coefficients matching the outer branch `k sqrt(s)` in value and
    /// slope at `s = delta` (odd symmetry covers `-delta`):
    /// `e = -k / (4 delta^{5/2})`, `f = 5k / (4 sqrt(delta))`.
    pub fn derive(k: f64, delta: f64) -> Result<Self> {
        if k <= 0.0 || !k.is_finite() {
            return Err(Error::Validation { field: "u2_k".into(), message: format!("must be positive, got {}", k) });
        }
        if delta <= 0.0 || !delta.is_finite() {
            return Err(Error::Validation {
                field: "u2_delta".into(),
                message: format!("must be positive, got {}", delta),
            });
        }
        let sqrt_d = delta.sqrt();
        Ok(CubicCoeffs {
            e: -k / (4.0 * delta * delta * sqrt_d),
            f: 5.0 * k / (4.0 * sqrt_d),
        })
    }
}

/// Relay law `u_i = -alpha_i |x| sign(s_i)`, with `sign(0) = 0`.
pub fn relay_control(spec: &ProblemSpec, i: usize, x: &[f64], s_i: f64) -> Result<f64> {
    check_channel(spec, i)?;
    Ok(-spec.alpha[i] * l1_norm(x) * sign(s_i))
}

/// Exponentially weighted law `u_i = -alpha_i |x| s_i exp(-|s_i|)`.
///
/// `d_s = -alpha_i |x| (1 - |s_i|) exp(-|s_i|)` is continuous at `s = 0`.
pub fn exp_control(spec: &ProblemSpec, i: usize, x: &[f64], s_i: f64) -> Result<ControlEval> {
    check_channel(spec, i)?;
    Ok(exp_shape(spec.alpha[i], l1_norm(x), s_i))
}

/// Square-root law with the cubic blend on the closed interval
/// `[-delta, delta]`; one-sided value and slope agree at the seams by
/// construction of the coefficients.
pub fn sqrt_control(spec: &ProblemSpec, i: usize, x: &[f64], s_i: f64) -> Result<ControlEval> {
    check_channel(spec, i)?;
    let (k, delta) = spec.u2_params()?;
    let coeffs = CubicCoeffs::derive(k, delta)?;
    Ok(sqrt_shape(spec.alpha[i], l1_norm(x), s_i, k, delta, &coeffs))
}

fn check_channel(spec: &ProblemSpec, i: usize) -> Result<()> {
    if i >= spec.m {
        return Err(Error::IndexOutOfRange { what: "controlled channel".into(), index: i, len: spec.m });
    }
    Ok(())
}

pub(crate) fn exp_shape(alpha: f64, abs_x: f64, s: f64) -> ControlEval {
    let damp = (-s.abs()).exp();
    ControlEval {
        value: -alpha * abs_x * s * damp,
        d_s: -alpha * abs_x * (1.0 - s.abs()) * damp,
        d_abs_x: -alpha * s * damp,
    }
}

pub(crate) fn sqrt_shape(
    alpha: f64,
    abs_x: f64,
    s: f64,
    k: f64,
    delta: f64,
    coeffs: &CubicCoeffs,
) -> ControlEval {
    let (q, dq) = if s.abs() <= delta {
        (
            -(coeffs.e * s * s * s + coeffs.f * s),
            -(3.0 * coeffs.e * s * s + coeffs.f),
        )
    } else if s > 0.0 {
        (-k * s.sqrt(), -k / (2.0 * s.sqrt()))
    } else {
        ((-s).sqrt() * k, -k / (2.0 * (-s).sqrt()))
    };
    ControlEval {
        value: alpha * abs_x * q,
        d_s: alpha * abs_x * dq,
        d_abs_x: alpha * q,
    }
}

/// Per-evaluation control context: the law, gains, and (for the square-root
/// law) the precomputed blend coefficients.
#[derive(Debug, Clone)]
pub(crate) struct ControlContext {
    kind: ControlKind,
    alpha: Vec<f64>,
    sqrt_params: Option<(f64, f64, CubicCoeffs)>,
}

impl ControlContext {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        let sqrt_params = match spec.control_kind {
            ControlKind::SqrtCubic => {
                let (k, delta) = spec.u2_params()?;
                Some((k, delta, CubicCoeffs::derive(k, delta)?))
            }
            _ => None,
        };
        Ok(ControlContext { kind: spec.control_kind, alpha: spec.alpha.clone(), sqrt_params })
    }

    /// Smooth-law evaluation for channel `i`; the relay kind has no smooth
    /// evaluation and is rejected.
    pub fn eval(&self, i: usize, abs_x: f64, s: f64) -> Result<ControlEval> {
        match self.kind {
            ControlKind::ExpWeighted => Ok(exp_shape(self.alpha[i], abs_x, s)),
            ControlKind::SqrtCubic => {
                let (k, delta, coeffs) = self.sqrt_params.as_ref().expect("validated");
                Ok(sqrt_shape(self.alpha[i], abs_x, s, *k, *delta, coeffs))
            }
            ControlKind::Relay => Err(Error::ControlKind {
                expected: "u1 or u2".into(),
                got: "relay".into(),
            }),
        }
    }
}
