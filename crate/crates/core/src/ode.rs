//! Explicit Runge-Kutta integrators used by the closed-loop verification:
//! adaptive Dormand-Prince 5(4) with embedded error control, and a classical
//! fixed-step fourth-order method as a fallback for stiff cases.

use serde::Serialize;

use crate::error::{Error, Result};

const MIN_STEP_FRACTION: f64 = 1e-14;
const MAX_STEPS_PER_INTERVAL: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum IntegrationMethod {
    Rk45 { atol: f64, rtol: f64 },
    Rk4 { step: f64 },
}

impl IntegrationMethod {
    pub fn default_adaptive() -> Self {
        IntegrationMethod::Rk45 { atol: 1e-9, rtol: 1e-9 }
    }

    /// Fixed-step fallback sized for the horizon.
    pub fn default_fixed(horizon: f64) -> Self {
        IntegrationMethod::Rk4 { step: 1e-4 * horizon }
    }
}

/// Integrate `dy/dt = f(t, y)` exactly onto the given strictly increasing
/// node times; the first node carries the initial state. Adaptive steps are
/// clamped at node boundaries, so sampled values need no dense interpolation.
pub fn integrate_over_nodes<F>(
    mut deriv: F,
    y0: &[f64],
    nodes: &[f64],
    method: &IntegrationMethod,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut out = Vec::with_capacity(nodes.len());
    out.push(y0.to_vec());
    let mut y = y0.to_vec();
    let span = nodes.last().copied().unwrap_or(0.0) - nodes.first().copied().unwrap_or(0.0);
    let mut h_guess = match method {
        IntegrationMethod::Rk45 { .. } => (span / 100.0).max(f64::MIN_POSITIVE),
        IntegrationMethod::Rk4 { step } => *step,
    };
    for w in nodes.windows(2) {
        let (t_start, t_end) = (w[0], w[1]);
        match method {
            IntegrationMethod::Rk45 { atol, rtol } => {
                h_guess = dopri5_interval(&mut deriv, &mut y, t_start, t_end, *atol, *rtol, h_guess, span)?;
            }
            IntegrationMethod::Rk4 { step } => {
                rk4_interval(&mut deriv, &mut y, t_start, t_end, *step);
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Dormand-Prince 5(4) over one interval; returns the step guess for the
/// next interval.
#[allow(clippy::too_many_arguments)]
fn dopri5_interval<F>(
    deriv: &mut F,
    y: &mut [f64],
    t_start: f64,
    t_end: f64,
    atol: f64,
    rtol: f64,
    mut h: f64,
    span: f64,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const B5: [f64; 7] =
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let dim = y.len();
    let mut t = t_start;
    let floor = MIN_STEP_FRACTION * span.max(t_end - t_start);
    let mut k = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut steps = 0usize;

    while t < t_end {
        steps += 1;
        if steps > MAX_STEPS_PER_INTERVAL {
            return Err(Error::StepUnderflow { t, step: h });
        }
        h = h.min(t_end - t);
        if h < floor {
            return Err(Error::StepUnderflow { t, step: h });
        }

        deriv(t, y, &mut k[0]);
        for s in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    acc += A[s][j] * kj[i];
                }
                stage[i] = y[i] + h * acc;
            }
            let ts = t + C[s] * h;
            deriv(ts, &stage, &mut k[s + 1]);
        }

        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc5 += B5[j] * kj[i];
                acc4 += B4[j] * kj[i];
            }
            y_new[i] = y[i] + h * acc5;
            let err = h * (acc5 - acc4);
            let scale = atol + rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (err / scale) * (err / scale);
        }
        let err_norm = if dim == 0 { 0.0 } else { (err_sq / dim as f64).sqrt() };

        if err_norm <= 1.0 {
            t += h;
            y.copy_from_slice(&y_new);
            let factor = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            h *= (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0).min(0.5);
        }
    }
    Ok(h.max(floor))
}

/// Classical fourth-order method with steps no larger than `max_step`.
fn rk4_interval<F>(deriv: &mut F, y: &mut [f64], t_start: f64, t_end: f64, max_step: f64)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let len = t_end - t_start;
    let n_steps = (len / max_step).ceil().max(1.0) as usize;
    let h = len / n_steps as f64;
    let dim = y.len();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    for step in 0..n_steps {
        let t = t_start + step as f64 * h;
        deriv(t, y, &mut k1);
        for i in 0..dim {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        deriv(t + 0.5 * h, &stage, &mut k2);
        for i in 0..dim {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        deriv(t + 0.5 * h, &stage, &mut k3);
        for i in 0..dim {
            stage[i] = y[i] + h * k3[i];
        }
        deriv(t + h, &stage, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}
