//! Problem instance and the parametric switching-surface family.
//!
//! A problem couples linear dynamics `dx/dt = A x + B u` (with `B` acting on
//! the first `m` coordinates only), boundary data, a control law, and a family
//! of affine switching surfaces `s_i(x, p) = sum_j w_ij(p) x_j - beta_i(p)`
//! whose entries are either fixed constants or references to free parameter
//! slots. Jacobians in `x` and in the parameters are exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descent::DescentConfig;
use crate::error::{Error, Result};

pub const DEFAULT_GRID_NODES: usize = 2001;
pub const DEFAULT_U2_DELTA: f64 = 0.01;

/// Which feedback law drives the controlled channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlKind {
    /// Discontinuous relay `u_i = -alpha_i |x| sign(s_i)`; motion on the
    /// surface is solved through the differential inclusion.
    #[serde(rename = "relay")]
    Relay,
    /// Smooth exponentially weighted law `u_i = -alpha_i |x| s_i exp(-|s_i|)`.
    #[serde(rename = "u1")]
    ExpWeighted,
    /// Piecewise square-root law with a cubic blend on `[-delta, delta]`.
    #[serde(rename = "u2")]
    SqrtCubic,
}

impl ControlKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlKind::Relay => "relay",
            ControlKind::ExpWeighted => "u1",
            ControlKind::SqrtCubic => "u2",
        }
    }

    /// True for the smooth feedback laws solved without the inclusion residual.
    pub fn is_smooth(self) -> bool {
        !matches!(self, ControlKind::Relay)
    }
}

/// One surface entry: a fixed constant or a reference to a free parameter
/// slot (1-based in problem files).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Fixed(f64),
    Free { param: usize },
}

impl Coefficient {
    /// 0-based parameter slot, if free.
    pub fn slot(self) -> Option<usize> {
        match self {
            Coefficient::Fixed(_) => None,
            Coefficient::Free { param } => Some(param - 1),
        }
    }

    fn value(self, p: &[f64]) -> f64 {
        match self {
            Coefficient::Fixed(v) => v,
            Coefficient::Free { param } => p[param - 1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub coeffs: Vec<Coefficient>,
    pub offset: Coefficient,
}

/// Affine surface family `s(x, p) = W(p) x - beta(p)` with a fixed/free mask
/// per entry. Each free slot may be referenced by several entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceFamily {
    pub rows: Vec<SurfaceRow>,
    #[serde(skip)]
    param_dim: usize,
}

impl SurfaceFamily {
    pub fn new(rows: Vec<SurfaceRow>) -> Result<Self> {
        let mut family = SurfaceFamily { rows, param_dim: 0 };
        family.validate(None)?;
        Ok(family)
    }

    /// Number of free parameter slots (the highest referenced slot index).
    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn m_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, |r| r.coeffs.len())
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_dim {
            return Err(Error::ParamLength { expected: self.param_dim, got: p.len() });
        }
        Ok(())
    }

    /// `s_i(x, p) = sum_j w_ij(p) x_j - beta_i(p)`.
    pub fn evaluate(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.check_params(p)?;
        if x.len() != self.n_cols() {
            return Err(Error::Dimension { what: "surface x".into(), expected: self.n_cols(), got: x.len() });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| {
                let wx: f64 = row.coeffs.iter().zip(x).map(|(c, xj)| c.value(p) * xj).sum();
                wx - row.offset.value(p)
            })
            .collect())
    }

    /// Exact Jacobian `ds_i/dx_j = w_ij(p)`, shape `m x n`.
    pub fn jacobian_x(&self, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_params(p)?;
        Ok(self
            .rows
            .iter()
            .map(|row| row.coeffs.iter().map(|c| c.value(p)).collect())
            .collect())
    }

    /// Exact Jacobian `ds_i/dp_k`, shape `m x param_dim`. A free coefficient
    /// at column `j` contributes `x_j` to its slot; a free offset contributes
    /// `-1`.
    pub fn jacobian_p(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.n_cols() {
            return Err(Error::Dimension { what: "surface x".into(), expected: self.n_cols(), got: x.len() });
        }
        let mut jac = vec![vec![0.0; self.param_dim]; self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for (j, c) in row.coeffs.iter().enumerate() {
                if let Some(k) = c.slot() {
                    jac[i][k] += x[j];
                }
            }
            if let Some(k) = row.offset.slot() {
                jac[i][k] -= 1.0;
            }
        }
        Ok(jac)
    }

    fn validate(&mut self, expected_shape: Option<(usize, usize)>) -> Result<()> {
        if let Some((m, n)) = expected_shape {
            if self.rows.len() != m {
                return Err(Error::Validation {
                    field: "surface.rows".into(),
                    message: format!("expected {} rows (one per controlled channel), got {}", m, self.rows.len()),
                });
            }
            for (i, row) in self.rows.iter().enumerate() {
                if row.coeffs.len() != n {
                    return Err(Error::Validation {
                        field: format!("surface.rows[{}].coeffs", i),
                        message: format!("expected {} coefficients, got {}", n, row.coeffs.len()),
                    });
                }
            }
        }
        let mut max_slot = None;
        let mut seen = Vec::new();
        let mut visit = |c: Coefficient, field: String| -> Result<()> {
            match c {
                Coefficient::Fixed(v) if !v.is_finite() => {
                    Err(Error::Validation { field, message: format!("nonfinite constant {}", v) })
                }
                Coefficient::Fixed(_) => Ok(()),
                Coefficient::Free { param } => {
                    if param == 0 {
                        return Err(Error::Validation {
                            field,
                            message: "parameter slots are 1-based; 0 is not a valid slot".into(),
                        });
                    }
                    max_slot = Some(max_slot.map_or(param, |m: usize| m.max(param)));
                    seen.push(param);
                    Ok(())
                }
            }
        };
        for (i, row) in self.rows.iter().enumerate() {
            for (j, &c) in row.coeffs.iter().enumerate() {
                visit(c, format!("surface.rows[{}].coeffs[{}]", i, j))?;
            }
            visit(row.offset, format!("surface.rows[{}].offset", i))?;
        }
        self.param_dim = max_slot.unwrap_or(0);
        for slot in 1..=self.param_dim {
            if !seen.contains(&slot) {
                return Err(Error::Validation {
                    field: "surface".into(),
                    message: format!("parameter slot {} is never referenced (slots must cover 1..={})", slot, self.param_dim),
                });
            }
        }
        Ok(())
    }
}

/// A full validated problem instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// State dimension.
    pub n: usize,
    /// Controlled-channel count, `1 <= m <= n`.
    pub m: usize,
    /// Row-major dynamics matrix; row `i` drives `dx_i/dt`.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    /// Upper gain bounds (the interval radius of the inclusion).
    pub gain_upper: Vec<f64>,
    /// Lower gain bounds; recorded for the derivation, unused by the solver.
    pub gain_lower: Vec<f64>,
    /// Fixed gains of the smooth control laws.
    pub alpha: Vec<f64>,
    /// Time horizon `T > 0`.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Initial state.
    pub x0: Vec<f64>,
    /// Right-endpoint targets keyed by 1-based coordinate index.
    pub endpoint: BTreeMap<usize, f64>,
    pub control_kind: ControlKind,
    /// Blend half-width for the `u2` law; defaults to 0.01 when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2_delta: Option<f64>,
    /// Square-root scale for the `u2` law; required for `control_kind = "u2"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2_k: Option<f64>,
    pub surface: SurfaceFamily,
    #[serde(default = "default_grid_nodes")]
    pub grid_nodes: usize,
    /// Initial values of the free surface parameters, one per slot.
    pub initial_params: Vec<f64>,
    #[serde(default)]
    pub descent: DescentConfig,
}

fn default_grid_nodes() -> usize {
    DEFAULT_GRID_NODES
}

impl ProblemSpec {
    /// Parse and validate a problem file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut spec: ProblemSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut spec: ProblemSpec = serde_json::from_str(text)
            .map_err(|e| Error::Parse { path: "<inline>".into(), message: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&mut self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation { field: "n".into(), message: "state dimension must be positive".into() });
        }
        if self.m == 0 || self.m > self.n {
            return Err(Error::Validation {
                field: "m".into(),
                message: format!("need 1 <= m <= n, got m = {} with n = {}", self.m, self.n),
            });
        }
        if self.a.len() != self.n {
            return Err(Error::Dimension { what: "A rows".into(), expected: self.n, got: self.a.len() });
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != self.n {
                return Err(Error::Dimension { what: format!("A[{}]", i), expected: self.n, got: row.len() });
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation { field: format!("A[{}]", i), message: format!("nonfinite entry {}", v) });
            }
        }
        for (name, vec) in [
            ("gain_upper", &self.gain_upper),
            ("gain_lower", &self.gain_lower),
            ("alpha", &self.alpha),
        ] {
            if vec.len() != self.m {
                return Err(Error::Dimension { what: name.into(), expected: self.m, got: vec.len() });
            }
            for (i, &v) in vec.iter().enumerate() {
                if v <= 0.0 || !v.is_finite() {
                    return Err(Error::Validation {
                        field: format!("{}[{}]", name, i),
                        message: format!("gains must be strictly positive, got {}", v),
                    });
                }
            }
        }
        for i in 0..self.m {
            if self.gain_lower[i] > self.gain_upper[i] {
                return Err(Error::Validation {
                    field: format!("gain_lower[{}]", i),
                    message: format!("lower gain {} exceeds upper gain {}", self.gain_lower[i], self.gain_upper[i]),
                });
            }
        }
        if self.horizon <= 0.0 || !self.horizon.is_finite() {
            return Err(Error::Validation {
                field: "T".into(),
                message: format!("horizon must be positive and finite, got {}", self.horizon),
            });
        }
        if self.x0.len() != self.n {
            return Err(Error::Dimension { what: "x0".into(), expected: self.n, got: self.x0.len() });
        }
        if let Some(v) = self.x0.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation { field: "x0".into(), message: format!("nonfinite entry {}", v) });
        }
        for (&idx, &target) in &self.endpoint {
            if idx == 0 || idx > self.n {
                return Err(Error::Validation {
                    field: format!("endpoint.{}", idx),
                    message: format!("coordinate index must be in 1..={}", self.n),
                });
            }
            if !target.is_finite() {
                return Err(Error::Validation {
                    field: format!("endpoint.{}", idx),
                    message: format!("nonfinite target {}", target),
                });
            }
        }
        if self.control_kind == ControlKind::SqrtCubic {
            let k = self.u2_k.ok_or_else(|| Error::Validation {
                field: "u2_k".into(),
                message: "required for control_kind \"u2\"".into(),
            })?;
            if k <= 0.0 || !k.is_finite() {
                return Err(Error::Validation { field: "u2_k".into(), message: format!("must be positive, got {}", k) });
            }
            let delta = self.u2_delta.unwrap_or(DEFAULT_U2_DELTA);
            if delta <= 0.0 || !delta.is_finite() {
                return Err(Error::Validation {
                    field: "u2_delta".into(),
                    message: format!("must be positive, got {}", delta),
                });
            }
        }
        self.surface.validate(Some((self.m, self.n)))?;
        if self.initial_params.len() != self.surface.param_dim() {
            return Err(Error::Dimension {
                what: "initial_params".into(),
                expected: self.surface.param_dim(),
                got: self.initial_params.len(),
            });
        }
        if let Some(v) = self.initial_params.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation { field: "initial_params".into(), message: format!("nonfinite entry {}", v) });
        }
        if self.grid_nodes < 2 {
            return Err(Error::Validation {
                field: "grid_nodes".into(),
                message: format!("need at least 2 nodes, got {}", self.grid_nodes),
            });
        }
        self.descent.validate()?;
        Ok(())
    }

    /// Row product `A_i . x`.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.a[i].iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Endpoint targets as 0-based `(coordinate, target)` pairs, ascending.
    pub fn endpoint_targets(&self) -> Vec<(usize, f64)> {
        self.endpoint.iter().map(|(&i, &t)| (i - 1, t)).collect()
    }

    /// Resolved `(k, delta)` of the `u2` law.
    pub fn u2_params(&self) -> Result<(f64, f64)> {
        match self.control_kind {
            ControlKind::SqrtCubic => Ok((
                self.u2_k.expect("validated"),
                self.u2_delta.unwrap_or(DEFAULT_U2_DELTA),
            )),
            other => Err(Error::ControlKind { expected: "u2".into(), got: other.as_str().into() }),
        }
    }
}

/// `|x| = sum_i |x_i|` — the norm used by every gain term.
pub fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Componentwise sign with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;

    /// n = 3, m = 1 relay problem: surface `x1 + c1 x2 - c2`, horizon 1,
    /// endpoint `x1(1) = 0`, start (-3, 4, 6).
    pub fn example1_json() -> &'static str {
        r#"{
            "n": 3, "m": 1,
            "A": [[0, 0, 0], [1, -1, 0], [0, 1, 0]],
            "gain_upper": [1.0], "gain_lower": [1.0], "alpha": [1.0],
            "T": 1.0,
            "x0": [-3.0, 4.0, 6.0],
            "endpoint": {"1": 0.0},
            "control_kind": "relay",
            "surface": {"rows": [{"coeffs": [1.0, {"param": 1}, 0.0], "offset": {"param": 2}}]},
            "grid_nodes": 201,
            "initial_params": [1.0, 1.0]
        }"#
    }

    /// n = 3, m = 2 smooth-control problem with two decoupled surfaces
    /// `c11 x1 - b1`, `c22 x2 - b2`, horizon 0.2, all endpoints pinned.
    pub fn example2_json() -> &'static str {
        r#"{
            "n": 3, "m": 2,
            "A": [[1, -3, 1], [5, 1, -1], [5, -1, 1]],
            "gain_upper": [50.0, 50.0], "gain_lower": [50.0, 50.0], "alpha": [50.0, 50.0],
            "T": 0.2,
            "x0": [2.0, -2.0, 2.0],
            "endpoint": {"1": 0.55, "2": 2.5, "3": 2.95},
            "control_kind": "u1",
            "surface": {"rows": [
                {"coeffs": [{"param": 1}, 0.0, 0.0], "offset": {"param": 3}},
                {"coeffs": [0.0, {"param": 2}, 0.0], "offset": {"param": 4}}
            ]},
            "grid_nodes": 201,
            "initial_params": [0.18, 0.2, 0.12, 0.51]
        }"#
    }

    pub fn example1() -> ProblemSpec {
        ProblemSpec::from_json(example1_json()).unwrap()
    }

    pub fn example2() -> ProblemSpec {
        ProblemSpec::from_json(example2_json()).unwrap()
    }
}
