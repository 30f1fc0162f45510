//! Adaptive Runge–Kutta integration and spline interpolation.
//!
//! The shooting solver for the free-energy boundary value problem integrates
//! a two-component system whose coefficient `γ(u)` is only known on grid
//! nodes; [`CubicSpline`] supplies a `C²` interpolant so the adaptive
//! controller is not disturbed by kinks at the nodes.

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;

/// Natural cubic spline through `(x_i, y_i)` on a uniform grid.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn uniform(x0: f64, h: f64, y: &[f64]) -> Result<Self> {
        let n = y.len();
        if n < 3 {
            return Err(Error::InvalidParameter("spline needs at least three points".into()));
        }
        let inner = n - 2;
        let lower = vec![1.0; inner];
        let upper = vec![1.0; inner];
        let diag = vec![4.0; inner];
        let rhs: Vec<f64> = (1..n - 1)
            .map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h))
            .collect();
        let inner_m = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&inner_m);
        Ok(Self { x0, h, y: y.to_vec(), m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let s = ((x - self.x0) / self.h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        let a = 1.0 - t;
        let h2 = self.h * self.h;
        a * self.y[i]
            + t * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (t * t * t - t) * self.m[i + 1]) * h2 / 6.0
    }
}

/// Controls for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

/// Why an integration stopped before reaching the end of the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stopped {
    pub at: f64,
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `y' = f(x, y)` for a two-component state from `x_start` through
/// every point of `stops` (strictly increasing), recording the state at each.
///
/// `f` returns `None` when the state has left its domain; the integration then
/// halts and reports where. Steps never cross a stop, so recorded values are
/// the integrator's own solution, not an interpolant.
pub fn integrate_adaptive<F>(
    f: F,
    x_start: f64,
    y_start: [f64; 2],
    stops: &[f64],
    opts: AdaptiveOptions,
) -> std::result::Result<Vec<[f64; 2]>, Stopped>
where
    F: Fn(f64, [f64; 2]) -> Option<[f64; 2]>,
{
    let mut out = Vec::with_capacity(stops.len());
    let mut x = x_start;
    let mut y = y_start;
    let span = stops.last().map(|s| s - x_start).unwrap_or(0.0).abs().max(1e-12);
    let mut h = span * 1e-3;
    let mut steps = 0usize;
    for &stop in stops {
        while x < stop {
            if steps >= opts.max_steps {
                return Err(Stopped { at: x });
            }
            steps += 1;
            let step = h.min(stop - x);
            let mut k = [[0.0; 2]; 7];
            let mut ok = true;
            for s in 0..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    ys[0] += step * A[s][j] * kj[0];
                    ys[1] += step * A[s][j] * kj[1];
                }
                match f(x + C[s] * step, ys) {
                    Some(v) if v[0].is_finite() && v[1].is_finite() => k[s] = v,
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                // shrink and retry; give up once the step is negligible
                h = step * 0.25;
                if h < 1e-14 * span {
                    return Err(Stopped { at: x });
                }
                continue;
            }
            let mut y5 = y;
            let mut err = 0.0f64;
            for c in 0..2 {
                let mut s5 = 0.0;
                let mut s4 = 0.0;
                for s in 0..7 {
                    s5 += B5[s] * k[s][c];
                    s4 += B4[s] * k[s][c];
                }
                y5[c] = y[c] + step * s5;
                let scale = opts.atol + opts.rtol * y[c].abs().max(y5[c].abs());
                err = err.max((step * (s5 - s4)).abs() / scale);
            }
            if err <= 1.0 {
                x += step;
                if (stop - x).abs() < 1e-15 * span {
                    x = stop;
                }
                y = y5;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
            if h < 1e-14 * span {
                return Err(Stopped { at: x });
            }
        }
        out.push(y);
    }
    Ok(out)
}
