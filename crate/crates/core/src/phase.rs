//! Time-averaged current fluctuations and dynamical phase transitions.
//!
//! `U(q)` is the cost per unit time of sustaining the current `q` with a
//! time-independent profile:
//!
//! ```text
//! U(q) = inf_ρ ½ ∫ (q + D(ρ)∇ρ − χ(ρ)E)² / χ(ρ) du
//! ```
//!
//! over profiles satisfying the boundary data (or the mass constraint on the
//! ring). On the ring a traveling wave `ρ(u, t) = ρ₀(u − vt)` can carry the
//! same averaged current; continuity forces `w = vρ₀ + q − vm`, so its cost
//! per unit time is the single-profile integral
//!
//! ```text
//! ½ ∫ (v(ρ₀ − m) + q + D(ρ₀)∇ρ₀ − χ(ρ₀)E)² / χ(ρ₀) du.
//! ```
//!
//! The true cost `Φ(q)` lies below both `U` and its convex envelope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::current_ldf::rate_current;
use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridFunction, PathKind, SpaceTimePath};
use crate::linalg::{solve_cyclic_tridiagonal, solve_tridiagonal};
use crate::models::{Geometry, TransportModel};

pub const DEFAULT_CELLS: usize = 200;
pub const DEFAULT_MODES: usize = 6;
pub const DEFAULT_Q_POINTS: usize = 25;
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-6;
pub const GRADIENT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100_000;
pub const TRAVELING_WAVE_STARTS: usize = 8;
/// Barrier weights, relative to `U_constant`.
pub const BARRIER_SCHEDULE: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Cost and node gradient of one profile.
struct Evaluation {
    value: f64,
    grad: Vec<f64>,
}

/// `½ h Σ_f a_f²/χ(ρ̂_f)` with `a_f = q + v(ρ̂_f − m) + D(ρ̂_f)∇ρ_f − χ(ρ̂_f)E(u_f)`,
/// `ρ̂_f` the face midpoint. `None` when a face mobility is not positive.
fn evaluate(model: &TransportModel, grid: &Grid, rho: &[f64], q: f64, v: f64, m: f64) -> Option<Evaluation> {
    let h = grid.h();
    let cells = grid.cells();
    let mut value = 0.0;
    let mut grad = vec![0.0; cells + 1];
    for f in 0..cells {
        let (a, b) = (rho[f], rho[f + 1]);
        let mid = 0.5 * (a + b);
        let slope = (b - a) / h;
        let [d, d1, _] = model.diffusion_derivs(mid);
        let [chi, c1, _] = model.mobility_derivs(mid);
        if !(chi > 0.0) {
            return None;
        }
        let e = model.field_at(grid.face(f));
        let r = q + v * (mid - m) + d * slope - chi * e;
        value += 0.5 * h * r * r / chi;
        let da_mid = v + d1 * slope - c1 * e;
        let t_mid = h * (r * da_mid / chi - 0.5 * r * r * c1 / (chi * chi));
        let t_slope = h * r * d / chi;
        grad[f] += 0.5 * t_mid - t_slope / h;
        grad[f + 1] += 0.5 * t_mid + t_slope / h;
    }
    value.is_finite().then_some(Evaluation { value, grad })
}

/// Fixed-profile cost of sustaining `q` with `rho` (no minimisation).
pub fn profile_cost(q: f64, model: &TransportModel, rho: &GridFunction) -> Result<f64> {
    if rho.kind != FieldKind::Density {
        return Err(invalid("profile_cost needs a density profile"));
    }
    Ok(evaluate(model, &rho.grid, &rho.values, q, 0.0, 0.0)
        .map(|e| e.value)
        .unwrap_or(crate::INFINITE_COST))
}

/// `q²/(2χ(m))`, the cost of the constant profile on the ring.
pub fn u_constant(q: f64, m: f64, model: &TransportModel) -> Result<f64> {
    let chi = model.mobility(m);
    if !(chi > 0.0) {
        return Err(invalid(format!("mobility vanishes at m = {m}")));
    }
    let e = model.field;
    let drift = match e {
        crate::models::FieldFamily::Zero => 0.0,
        crate::models::FieldFamily::Constant { value } => value,
        crate::models::FieldFamily::Sine { amplitude: 0.0 } => 0.0,
        _ => return Err(invalid("constant-profile formula needs a constant field")),
    };
    let r = q - chi * drift;
    Ok(0.5 * r * r / chi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerDiagnostics {
    pub iterations: usize,
    /// `max |projected gradient| / h`.
    pub gradient_norm: f64,
    /// Boundary mismatch or mass defect.
    pub constraint_residual: f64,
    pub converged: bool,
    /// Start index (0 is the constant or linear profile).
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptimum {
    pub q: f64,
    pub profile: GridFunction,
    pub value: f64,
    pub diagnostics: OptimizerDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub cells: usize,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            cells: DEFAULT_CELLS,
            max_iterations: MAX_ITERATIONS,
            gradient_tol: GRADIENT_TOL,
            seed: 0,
        }
    }
}

/// Smooth random perturbation with at most three modes that vanishes at the
/// ends (boundary) or has zero discrete mean (ring).
fn perturbation(grid: &Grid, periodic: bool, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let coeffs: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let scale = amplitude / coeffs.iter().map(|(a, b)| a.abs() + b.abs()).sum::<f64>().max(1e-12);
    grid.nodes()
        .iter()
        .map(|u| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let k = (k + 1) as f64;
                    if periodic {
                        a * (2.0 * PI * k * u).cos() + b * (2.0 * PI * k * u).sin()
                    } else {
                        (a.abs() + b.abs()) * a.signum() * (PI * k * u).sin()
                    }
                })
                .sum::<f64>()
                * scale
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Preconditioned projected gradient descent from one start.
fn descend(
    q: f64,
    model: &TransportModel,
    grid: &Grid,
    start: Vec<f64>,
    opts: &ProfileOptions,
    index: usize,
) -> Result<ProfileOptimum> {
    let h = grid.h();
    let cells = grid.cells();
    let periodic = model.geometry.is_periodic();
    let (lo, hi) = model.range;
    let inside = |r: &[f64]| r.iter().all(|v| *v > lo && *v < hi);
    // unknowns: nodes 0..M-1 on the ring, interior nodes otherwise
    let unknowns: Vec<usize> = if periodic { (0..cells).collect() } else { (1..cells).collect() };
    let n = unknowns.len();

    // metric h(c0 − c1 Δ_h) from the coefficient scales of the start
    let c1 = median(start.iter().map(|r| model.diffusion(*r).powi(2) / model.mobility(*r)).collect());
    let c0 = c1
        + median(
            start
                .iter()
                .map(|r| {
                    let [chi, d1, d2] = model.mobility_derivs(*r);
                    0.5 * q * q * ((2.0 * d1 * d1 - chi * d2) / chi.powi(3)).abs()
                })
                .collect(),
        );
    let off = -h * c1 / (h * h);
    let diag = vec![h * c0 + 2.0 * h * c1 / (h * h); n];
    let lower = vec![off; n];
    let upper = vec![off; n];
    let precondition = |g: &[f64]| -> Result<Vec<f64>> {
        if periodic {
            solve_cyclic_tridiagonal(&lower, &diag, &upper, g)
        } else {
            solve_tridiagonal(&lower, &diag, &upper, g)
        }
    };
    let reduced = |full: &[f64]| -> Vec<f64> {
        let mut g: Vec<f64> = unknowns.iter().map(|i| full[*i]).collect();
        if periodic {
            g[0] += full[cells];
        }
        g
    };
    let eval = |r: &[f64]| evaluate(model, grid, r, q, 0.0, 0.0);

    let projected_norm = |g: &[f64]| {
        let mean = if periodic { g.iter().sum::<f64>() / n as f64 } else { 0.0 };
        g.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max) / h
    };
    let mut rho = start;
    let mut current = eval(&rho).ok_or_else(|| Error::OutOfRange("start profile has vanishing mobility".into()))?;
    let mut iterations = 0;
    let mut gradient_norm;
    loop {
        let g = reduced(&current.grad);
        gradient_norm = projected_norm(&g);
        if gradient_norm <= opts.gradient_tol || iterations >= opts.max_iterations {
            break;
        }
        let pg = precondition(&g)?;
        let mut d: Vec<f64> = pg.iter().map(|x| -x).collect();
        if periodic {
            // P-metric projection onto mass-preserving directions
            let ones = precondition(&vec![1.0; n])?;
            let lambda = pg.iter().sum::<f64>() / ones.iter().sum::<f64>();
            for (di, oi) in d.iter_mut().zip(&ones) {
                *di += lambda * oi;
            }
        }
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = rho.clone();
            for (k, i) in unknowns.iter().enumerate() {
                trial[*i] += t * d[k];
            }
            if periodic {
                trial[cells] = trial[0];
            }
            if inside(&trial) {
                if let Some(e) = eval(&trial) {
                    let armijo = e.value <= current.value + 1e-4 * t * slope;
                    // below the rounding level of the value only the gradient can tell progress
                    let flat = (e.value - current.value).abs() <= 1e-12 * current.value.abs().max(1e-300);
                    if armijo && !flat || flat && projected_norm(&reduced(&e.grad)) < gradient_norm {
                        accepted = Some((trial, e));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((r, e)) => {
                rho = r;
                current = e;
            }
            // no decrease is resolvable in floating point
            None => break,
        }
    }
    let constraint_residual = match model.geometry {
        Geometry::Boundary { alpha, beta } => (rho[0] - alpha).abs().max((rho[cells] - beta).abs()),
        Geometry::Periodic { mass } => (h * rho[..cells].iter().sum::<f64>() - mass).abs(),
    };
    Ok(ProfileOptimum {
        q,
        value: current.value,
        profile: GridFunction::new(*grid, FieldKind::Density, rho)?,
        diagnostics: OptimizerDiagnostics {
            iterations,
            gradient_norm,
            constraint_residual,
            converged: gradient_norm <= opts.gradient_tol,
            start: index,
        },
    })
}

/// Minimise the fixed-profile cost at current `q` from three starts.
pub fn u_minimize(q: f64, model: &TransportModel, opts: &ProfileOptions) -> Result<ProfileOptimum> {
    if !q.is_finite() {
        return Err(invalid(format!("current must be finite, got {q}")));
    }
    let grid = Grid::new(opts.cells)?;
    grid.require_solver_resolution()?;
    let (lo, hi) = model.range;
    let (base, room): (Vec<f64>, f64) = match model.geometry {
        Geometry::Boundary { alpha, beta } => (
            grid.nodes().iter().map(|u| alpha + (beta - alpha) * u).collect(),
            (alpha - lo).min(hi - alpha).min(beta - lo).min(hi - beta),
        ),
        Geometry::Periodic { mass } => (vec![mass; grid.nodes_len()], (mass - lo).min(hi - mass)),
    };
    let periodic = model.geometry.is_periodic();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![base.clone()];
    for _ in 0..2 {
        let p = perturbation(&grid, periodic, 0.3 * room, &mut rng);
        let mut s: Vec<f64> = base.iter().zip(&p).map(|(b, p)| b + p).collect();
        if periodic {
            let last = s.len() - 1;
            s[last] = s[0];
        }
        starts.push(s);
    }
    let results: Vec<ProfileOptimum> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| descend(q, model, &grid, s, opts, i))
        .collect::<Result<_>>()?;
    let best = results
        .iter()
        .filter(|r| r.diagnostics.converged)
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .cloned();
    best.ok_or_else(|| {
        let g = results.iter().map(|r| r.diagnostics.gradient_norm).fold(f64::INFINITY, f64::min);
        Error::NoConvergence(format!(
            "profile optimisation at q = {q}: smallest gradient norm {g:.3e} after {} iterations",
            opts.max_iterations
        ))
    })
}

fn constant_field(model: &TransportModel) -> Result<()> {
    match model.field {
        crate::models::FieldFamily::Zero | crate::models::FieldFamily::Constant { .. } => Ok(()),
        f if f.is_zero() => Ok(()),
        _ => Err(invalid("traveling waves need a constant field")),
    }
}

fn discrete_mean(values: &[f64]) -> f64 {
    let m = values.len() - 1;
    values[..m].iter().sum::<f64>() / m as f64
}

/// Cost per unit time of the traveling wave `ρ₀(u − vt)` carrying mean
/// current `q` on the ring of mass `m`.
pub fn traveling_wave_cost(q: f64, m: f64, model: &TransportModel, v: f64, rho0: &GridFunction) -> Result<f64> {
    constant_field(model)?;
    let r = &rho0.values;
    if (r[0] - r[r.len() - 1]).abs() > 1e-12 {
        return Err(Error::BoundaryMismatch("wave profile must be periodic".into()));
    }
    let mean = discrete_mean(r);
    if (mean - m).abs() > 1e-8 {
        return Err(invalid(format!("wave profile has mean {mean}, expected {m}")));
    }
    evaluate(model, &rho0.grid, r, q, v, m)
        .map(|e| e.value)
        .ok_or_else(|| Error::OutOfRange("mobility vanishes on the wave profile".into()))
}

/// Velocity minimising the traveling-wave cost for a fixed profile.
fn optimal_velocity(model: &TransportModel, grid: &Grid, rho: &[f64], q: f64, m: f64) -> f64 {
    let h = grid.h();
    let (mut num, mut den) = (0.0, 0.0);
    for f in 0..grid.cells() {
        let mid = 0.5 * (rho[f] + rho[f + 1]);
        let chi = model.mobility(mid);
        let s = mid - m;
        let b = q + model.diffusion(mid) * (rho[f + 1] - rho[f]) / h - chi * model.field_at(grid.face(f));
        num += s * b / chi;
        den += s * s / chi;
    }
    if den > 1e-300 {
        -num / den
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelingWaveOptimum {
    pub q: f64,
    pub m: f64,
    pub profile: GridFunction,
    pub velocity: f64,
    /// Cost per unit time (without the feasibility barrier).
    pub cost: f64,
    pub modes: usize,
    /// Cosine coefficients `a_1..a_K`.
    pub cos_coeffs: Vec<f64>,
    /// Sine coefficients `b_1..b_K`.
    pub sin_coeffs: Vec<f64>,
    /// `q²/(2χ(m))` for comparison.
    pub constant_cost: f64,
    pub feasible_starts: usize,
}

impl TravelingWaveOptimum {
    /// `ρ₀(u)` from the Fourier coefficients, at any `u`.
    pub fn wave(&self, u: f64) -> f64 {
        fourier(self.m, &self.cos_coeffs, &self.sin_coeffs, u)
    }

    /// Time for the wave to travel once around the ring (1 if it is at rest).
    pub fn period(&self) -> f64 {
        if self.velocity.abs() > 1e-12 {
            1.0 / self.velocity.abs()
        } else {
            1.0
        }
    }
}

fn fourier(m: f64, a: &[f64], b: &[f64], u: f64) -> f64 {
    m + a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(k, (a, b))| {
            let x = 2.0 * PI * (k + 1) as f64 * u;
            a * x.cos() + b * x.sin()
        })
        .sum::<f64>()
}

struct WaveProblem<'a> {
    model: &'a TransportModel,
    grid: Grid,
    q: f64,
    m: f64,
    modes: usize,
    /// `cos(2πku_i)` then `sin(2πku_i)` per node, `2K` columns.
    basis: Vec<Vec<f64>>,
}

impl WaveProblem<'_> {
    fn profile(&self, c: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|row| self.m + row.iter().zip(c).map(|(b, c)| b * c).sum::<f64>())
            .collect()
    }

    /// Profiled cost (velocity eliminated) plus `mu` times a log barrier.
    fn objective(&self, c: &[f64], mu: f64) -> Option<(f64, Vec<f64>)> {
        let mut rho = self.profile(c);
        let cells = self.grid.cells();
        rho[cells] = rho[0];
        let (lo, hi) = self.model.range;
        if rho.iter().any(|r| !(*r > lo && *r < hi)) {
            return None;
        }
        let v = optimal_velocity(self.model, &self.grid, &rho, self.q, self.m);
        let e = evaluate(self.model, &self.grid, &rho, self.q, v, self.m)?;
        let h = self.grid.h();
        let mut value = e.value;
        let mut g = e.grad;
        g[0] += g[cells];
        g[cells] = 0.0;
        if mu > 0.0 {
            for i in 0..cells {
                let r = rho[i];
                value -= mu * h * (r - lo).ln();
                g[i] -= mu * h / (r - lo);
                if hi.is_finite() {
                    value -= mu * h * (hi - r).ln();
                    g[i] += mu * h / (hi - r);
                }
            }
        }
        // envelope theorem: the velocity is stationary
        let grad = (0..2 * self.modes)
            .map(|j| (0..cells).map(|i| g[i] * self.basis[i][j]).sum())
            .collect();
        Some((value, grad))
    }

    fn pure(&self, c: &[f64]) -> Option<(f64, f64, Vec<f64>)> {
        let mut rho = self.profile(c);
        rho[self.grid.cells()] = rho[0];
        let v = optimal_velocity(self.model, &self.grid, &rho, self.q, self.m);
        let e = evaluate(self.model, &self.grid, &rho, self.q, v, self.m)?;
        Some((e.value, v, rho))
    }
}

/// Quasi-Newton minimisation with backtracking; `f` returns `None` outside
/// the feasible set.
fn bfgs(f: impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>, x0: Vec<f64>, max_iter: usize) -> Option<(Vec<f64>, f64)> {
    let n = x0.len();
    let (mut fx, mut g) = f(&x0)?;
    let mut x = x0;
    let mut hinv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..max_iter {
        let gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gnorm <= 1e-12 * fx.abs().max(1e-12) {
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| hinv[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] = f64::from(u8::from(i == j));
                }
            }
            d = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + t * d).collect();
            if let Some((ft, gt)) = f(&trial) {
                if ft <= fx + 1e-4 * t * slope {
                    next = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = next else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| hinv[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (1.0 + yhy * rho) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        if decrease <= 1e-15 * fx.abs() {
            break;
        }
    }
    Some((x, fx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveOptions {
    pub cells: usize,
    pub modes: usize,
    pub starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            cells: DEFAULT_CELLS,
            modes: DEFAULT_MODES,
            starts: TRAVELING_WAVE_STARTS,
            seed: 0,
            max_iterations: 400,
        }
    }
}

/// Best traveling wave with `K` Fourier modes for mean current `q` on the
/// ring of mass `m`, over several deterministic starts (the first is the
/// constant profile).
pub fn traveling_wave_search(q: f64, m: f64, model: &TransportModel, opts: &WaveOptions) -> Result<TravelingWaveOptimum> {
    if opts.modes < 2 {
        return Err(invalid(format!("traveling-wave search needs at least 2 modes, got {}", opts.modes)));
    }
    if opts.starts < 1 {
        return Err(invalid("traveling-wave search needs at least one start"));
    }
    constant_field(model)?;
    let model = model.with_geometry(Geometry::Periodic { mass: m })?;
    let grid = Grid::new(opts.cells)?;
    let k = opts.modes;
    let basis = grid
        .nodes()
        .iter()
        .map(|u| {
            let mut row = Vec::with_capacity(2 * k);
            row.extend((1..=k).map(|j| (2.0 * PI * j as f64 * u).cos()));
            row.extend((1..=k).map(|j| (2.0 * PI * j as f64 * u).sin()));
            row
        })
        .collect();
    let problem = WaveProblem {
        model: &model,
        grid,
        q,
        m,
        modes: k,
        basis,
    };
    let constant_cost = u_constant(q, m, &model)?;
    let (lo, hi) = model.range;
    let room = (m - lo).min(hi - m);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![vec![0.0; 2 * k]];
    for _ in 1..opts.starts {
        let raw: Vec<f64> = (0..2 * k)
            .map(|j| rng.gen_range(-1.0..1.0) / (1 + j % k) as f64)
            .collect();
        let amplitude = rng.gen_range(0.2..0.8) * room;
        let total: f64 = raw.iter().map(|v| v.abs()).sum();
        starts.push(raw.iter().map(|v| v * amplitude / total).collect());
    }
    let scale = constant_cost.max(1e-12);
    let results: Vec<Option<(f64, Vec<f64>)>> = starts
        .into_par_iter()
        .map(|c0| {
            let mut c = c0;
            for weight in BARRIER_SCHEDULE {
                let mu = weight * scale;
                c = bfgs(|x| problem.objective(x, mu), c, opts.max_iterations)?.0;
            }
            problem.pure(&c).map(|(value, _, _)| (value, c))
        })
        .collect();
    let feasible_starts = results.iter().filter(|r| r.is_some()).count();
    let (_, coeffs) = results
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::NoConvergence(format!("all traveling-wave starts infeasible at q = {q}")))?;
    let (cost, velocity, rho) = problem
        .pure(&coeffs)
        .ok_or_else(|| Error::NoConvergence("optimal wave left the density range".into()))?;
    Ok(TravelingWaveOptimum {
        q,
        m,
        profile: GridFunction::new(grid, FieldKind::Density, rho)?,
        velocity,
        cost,
        modes: k,
        cos_coeffs: coeffs[..k].to_vec(),
        sin_coeffs: coeffs[k..].to_vec(),
        constant_cost,
        feasible_starts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveConsistency {
    /// Single-profile formula.
    pub reduced: f64,
    /// Current rate functional over one period, divided by its length.
    pub generic: f64,
    pub horizon: f64,
    pub relative_gap: f64,
}

/// Re-evaluate a traveling wave with the space-time current rate functional.
///
/// The current `w(u, t) = vρ₀(u − vt) + q − vm` is sampled on the faces
/// over one period (at most unit time) with `steps` time steps.
pub fn traveling_wave_consistency(
    wave: &TravelingWaveOptimum,
    model: &TransportModel,
    steps: usize,
) -> Result<WaveConsistency> {
    let model = model.with_geometry(Geometry::Periodic { mass: wave.m })?;
    let grid = wave.profile.grid;
    let horizon = wave.period().min(1.0);
    let dt = horizon / steps as f64;
    let v = wave.velocity;
    let faces = grid.faces();
    let frames: Vec<Vec<f64>> = (0..=steps)
        .map(|n| {
            let t = n as f64 * dt;
            faces
                .iter()
                .map(|u| v * wave.wave(u - v * t) + wave.q - v * wave.m)
                .collect()
        })
        .collect();
    let w = SpaceTimePath::new(grid, PathKind::Current, 0.0, dt, frames)?;
    let mut start: Vec<f64> = grid.nodes().iter().map(|u| wave.wave(*u)).collect();
    let last = start.len() - 1;
    start[last] = start[0];
    let gamma = GridFunction::new(grid, FieldKind::Density, start)?;
    let generic = rate_current(&w, &gamma, &model)?.cost / horizon;
    let reduced = traveling_wave_cost(wave.q, wave.m, &model, v, &gamma)?;
    Ok(WaveConsistency {
        reduced,
        generic,
        horizon,
        relative_gap: (generic - reduced).abs() / reduced.abs().max(1e-300),
    })
}

/// Lower convex hull of `(x_i, y_i)` evaluated at the `x_i` (ascending `x`).
pub fn convex_envelope(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.is_empty() {
        return Err(invalid("envelope needs matching, non-empty abscissae and values"));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("envelope abscissae must be strictly increasing"));
    }
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..x.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = Vec::with_capacity(x.len());
    let mut seg = 0;
    for i in 0..x.len() {
        while seg + 1 < hull.len() - 1 && x[hull[seg + 1]] < x[i] {
            seg += 1;
        }
        if hull.len() == 1 {
            out.push(y[hull[0]]);
            continue;
        }
        let (a, b) = (hull[seg], hull[seg + 1]);
        let t = (x[i] - x[a]) / (x[b] - x[a]);
        out.push((y[a] + t * (y[b] - y[a])).min(y[i]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseClass {
    UniquePhase,
    Coexistence,
    TravelingWave,
}

impl PhaseClass {
    pub fn label(&self) -> &'static str {
        match self {
            PhaseClass::UniquePhase => "unique-phase",
            PhaseClass::Coexistence => "coexistence",
            PhaseClass::TravelingWave => "traveling-wave",
        }
    }
}

/// Traveling wave first, then coexistence, relative tolerance `tol`.
pub fn classify(u: f64, envelope: f64, wave: Option<f64>, tol: f64) -> PhaseClass {
    let below = |x: f64| x < u - tol * u.abs().max(1e-300);
    if wave.is_some_and(below) {
        PhaseClass::TravelingWave
    } else if below(envelope) {
        PhaseClass::Coexistence
    } else {
        PhaseClass::UniquePhase
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptions {
    pub profile: ProfileOptions,
    pub wave: WaveOptions,
    pub tol: f64,
    pub bisection_steps: usize,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        Self {
            profile: ProfileOptions::default(),
            wave: WaveOptions::default(),
            tol: DEFAULT_CLASSIFY_TOL,
            bisection_steps: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub model: String,
    pub m: f64,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub envelope: Vec<f64>,
    pub wave: Vec<f64>,
    pub velocity: Vec<f64>,
    pub class: Vec<PhaseClass>,
    /// Estimated onset of the first regime change.
    pub threshold: Option<f64>,
    pub modes: usize,
    /// Wave cost at the largest `q` with `K` and `2K` modes.
    pub mode_doubling: Option<(f64, f64)>,
}

/// Cost landscape and regime classification over a grid of currents on the
/// ring of mass `m`.
pub fn phase_report(model: &TransportModel, m: f64, q_grid: &[f64], opts: &PhaseOptions) -> Result<PhaseReport> {
    if q_grid.is_empty() || q_grid.iter().any(|q| !q.is_finite()) {
        return Err(invalid("current grid must be non-empty and finite"));
    }
    if q_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("current grid must be strictly ascending"));
    }
    let model = model.with_geometry(Geometry::Periodic { mass: m })?;
    let waves_allowed = constant_field(&model).is_ok();
    let points: Vec<(f64, Option<TravelingWaveOptimum>)> = q_grid
        .par_iter()
        .map(|q| -> Result<_> {
            let u = u_minimize(*q, &model, &opts.profile)?.value;
            let w = if waves_allowed {
                Some(traveling_wave_search(*q, m, &model, &opts.wave)?)
            } else {
                None
            };
            Ok((u, w))
        })
        .collect::<Result<_>>()?;
    let u: Vec<f64> = points.iter().map(|p| p.0).collect();
    let envelope = convex_envelope(q_grid, &u)?;
    let wave: Vec<f64> = points.iter().map(|p| p.1.as_ref().map_or(f64::NAN, |w| w.cost)).collect();
    let velocity: Vec<f64> = points.iter().map(|p| p.1.as_ref().map_or(f64::NAN, |w| w.velocity)).collect();
    let class: Vec<PhaseClass> = (0..q_grid.len())
        .map(|i| classify(u[i], envelope[i], points[i].1.as_ref().map(|w| w.cost), opts.tol))
        .collect();

    let mut threshold = None;
    if let Some(i) = (0..q_grid.len().saturating_sub(1)).find(|i| class[*i] != class[i + 1]) {
        threshold = Some(if class[i + 1] == PhaseClass::TravelingWave || class[i] == PhaseClass::TravelingWave {
            let wave_side = class[i + 1] == PhaseClass::TravelingWave;
            let (mut lo, mut hi) = (q_grid[i], q_grid[i + 1]);
            for _ in 0..opts.bisection_steps {
                let mid = 0.5 * (lo + hi);
                let u = u_minimize(mid, &model, &opts.profile)?.value;
                let w = traveling_wave_search(mid, m, &model, &opts.wave)?.cost;
                let is_wave = classify(u, u, Some(w), opts.tol) == PhaseClass::TravelingWave;
                if is_wave == wave_side {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        } else {
            // the envelope leaves U at the last grid point before the change
            q_grid[i]
        });
    }

    let mode_doubling = if waves_allowed {
        let q = q_grid[q_grid.len() - 1];
        let doubled = WaveOptions {
            modes: 2 * opts.wave.modes,
            ..opts.wave
        };
        let coarse = points[points.len() - 1].1.as_ref().map(|w| w.cost).unwrap_or(f64::NAN);
        Some((coarse, traveling_wave_search(q, m, &model, &doubled)?.cost))
    } else {
        None
    };
    Ok(PhaseReport {
        model: model.name().to_string(),
        m,
        q: q_grid.to_vec(),
        u,
        envelope,
        wave,
        velocity,
        class,
        threshold,
        modes: opts.wave.modes,
        mode_doubling,
    })
}

/// `n` equally spaced currents on `[lo, hi]`.
pub fn current_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    crate::models::density_grid(lo, hi, n)
}
