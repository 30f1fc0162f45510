//! Deterministic solvers on the macroscopic interval.
//!
//! * [`solve_heat`]: `∂ρ = ½ Δρ` with Dirichlet data, Crank–Nicolson.
//! * [`solve_hydro`]: `∂ρ = ∇(D(ρ)∇ρ) − ∇(χ(ρ)E)`, backward Euler with the
//!   diffusion coefficient lagged and the drift explicit.
//! * [`solve_continuity`]: `∂ρ + ∇w = 0` for a prescribed face current.
//! * [`stationary_profile`]: damped Newton for the stationary hydrodynamics.
//!
//! Every scheme is written in flux form on the staggered grid, so the change
//! of cell mass equals the difference of the face fluxes to rounding.

use log::debug;

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridFunction, PathKind, SpaceTimePath};
use crate::linalg::{solve_cyclic_tridiagonal, solve_tridiagonal};
use crate::models::{Geometry, TransportModel};

pub const DEFAULT_CELLS: usize = 200;
pub const DEFAULT_DT: f64 = 2.5e-5;

/// Number of steps and effective step for covering `[0, t_final]` with steps
/// no larger than `dt`.
pub fn time_steps(t_final: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(invalid(format!("final time must be nonnegative, got {t_final}")));
    }
    let steps = (t_final / dt - 1e-9).ceil().max(0.0) as usize;
    if steps == 0 {
        return Ok((0, dt));
    }
    Ok((steps, t_final / steps as f64))
}

fn check_density(gamma: &GridFunction) -> Result<()> {
    if gamma.kind != FieldKind::Density {
        return Err(invalid(format!("expected a density profile, got {:?}", gamma.kind)));
    }
    gamma.grid.require_solver_resolution()
}

/// Heat equation `∂ρ = ½ Δρ`, `ρ(0) = α`, `ρ(1) = β`, stored at every step.
pub fn solve_heat(gamma: &GridFunction, alpha: f64, beta: f64, t_final: f64, dt: f64) -> Result<SpaceTimePath> {
    solve_heat_strided(gamma, alpha, beta, t_final, dt, 1)
}

/// As [`solve_heat`], keeping every `stride`-th frame (plus the initial one).
///
/// The number of steps is rounded up to a multiple of `stride`.
pub fn solve_heat_strided(
    gamma: &GridFunction,
    alpha: f64,
    beta: f64,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<SpaceTimePath> {
    check_density(gamma)?;
    if stride == 0 {
        return Err(invalid("frame stride must be positive"));
    }
    let grid = gamma.grid;
    let tol = grid.h();
    let (v0, vm) = (gamma.values[0], gamma.values[grid.cells()]);
    if (v0 - alpha).abs() > tol || (vm - beta).abs() > tol {
        return Err(Error::BoundaryMismatch(format!(
            "initial profile ends ({v0}, {vm}) do not match boundary data ({alpha}, {beta})"
        )));
    }
    let (raw_steps, _) = time_steps(t_final, dt)?;
    let frames_out = raw_steps.div_ceil(stride);
    let steps = frames_out * stride;
    let dt_eff = if steps == 0 { dt } else { t_final / steps as f64 };

    let mut stepper = HeatStepper::new(grid, alpha, beta, dt_eff)?;
    let mut current = gamma.values.clone();
    current[0] = alpha;
    current[grid.cells()] = beta;
    let mut frames = Vec::with_capacity(frames_out + 1);
    frames.push(current.clone());
    for _ in 0..frames_out {
        for _ in 0..stride {
            current = stepper.step(&current)?;
        }
        frames.push(current.clone());
    }
    SpaceTimePath::new(grid, PathKind::Density, 0.0, dt_eff * stride as f64, frames)
}

/// One Crank–Nicolson step of `∂ρ = ½ Δρ` with fixed Dirichlet values.
pub(crate) struct HeatStepper {
    m: usize,
    alpha: f64,
    beta: f64,
    kappa: f64,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl HeatStepper {
    pub(crate) fn new(grid: Grid, alpha: f64, beta: f64, dt: f64) -> Result<Self> {
        let m = grid.cells();
        let h = grid.h();
        let kappa = 0.5 * dt / (h * h);
        let n = m - 1;
        Ok(Self {
            m,
            alpha,
            beta,
            kappa,
            lower: vec![-0.5 * kappa; n],
            diag: vec![1.0 + kappa; n],
            upper: vec![-0.5 * kappa; n],
        })
    }

    pub(crate) fn step(&mut self, rho: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let k = self.kappa;
        let mut rhs: Vec<f64> = (1..m)
            .map(|i| 0.5 * k * rho[i - 1] + (1.0 - k) * rho[i] + 0.5 * k * rho[i + 1])
            .collect();
        rhs[0] += 0.5 * k * self.alpha;
        rhs[m - 2] += 0.5 * k * self.beta;
        let inner = solve_tridiagonal(&self.lower, &self.diag, &self.upper, &rhs)?;
        let mut next = Vec::with_capacity(m + 1);
        next.push(self.alpha);
        next.extend_from_slice(&inner);
        next.push(self.beta);
        Ok(next)
    }
}

/// Hydrodynamic current `J = −D(ρ)∇ρ + χ(ρ)E` on the faces of one frame.
pub fn hydrodynamic_current(model: &TransportModel, grid: &Grid, rho: &[f64]) -> Vec<f64> {
    let h = grid.h();
    (0..grid.cells())
        .map(|i| {
            let (a, b) = (rho[i], rho[i + 1]);
            let d = model.diffusion(0.5 * (a + b));
            let e = model.field_at(grid.face(i));
            let drift = if e == 0.0 { 0.0 } else { model.face_mobility(a, b) * e };
            -d * (b - a) / h + drift
        })
        .collect()
}

/// Instantaneous hydrodynamic current of every frame of a density path.
pub fn current_of_path(model: &TransportModel, path: &SpaceTimePath) -> Result<SpaceTimePath> {
    if path.kind != PathKind::Density {
        return Err(invalid("current_of_path needs a density path"));
    }
    let frames = path
        .frames
        .iter()
        .map(|f| hydrodynamic_current(model, &path.grid, f))
        .collect();
    SpaceTimePath::new(path.grid, PathKind::Current, path.t0, path.dt, frames)
}

/// Check a density profile against the model geometry; returns the node count
/// of distinct unknowns (`M` for periodic, `M+1` otherwise).
fn check_geometry(model: &TransportModel, gamma: &GridFunction) -> Result<()> {
    let m = gamma.grid.cells();
    match model.geometry {
        Geometry::Boundary { alpha, beta } => {
            let tol = gamma.grid.h();
            if (gamma.values[0] - alpha).abs() > tol || (gamma.values[m] - beta).abs() > tol {
                return Err(Error::BoundaryMismatch(format!(
                    "profile ends ({}, {}) vs reservoirs ({alpha}, {beta})",
                    gamma.values[0], gamma.values[m]
                )));
            }
        }
        Geometry::Periodic { .. } => {
            if (gamma.values[0] - gamma.values[m]).abs() > 1e-12 {
                return Err(Error::BoundaryMismatch(
                    "periodic profile must satisfy ρ(0) = ρ(1)".into(),
                ));
            }
        }
    }
    if let Some(v) = gamma.values.iter().find(|v| !model.in_range(**v)) {
        return Err(Error::OutOfRange(format!(
            "initial density {v} outside [{}, {}]",
            model.range.0, model.range.1
        )));
    }
    Ok(())
}

/// Maximum number of step halvings in [`solve_hydro`].
pub const MAX_HALVINGS: u32 = 20;

/// Nonlinear drift-diffusion hydrodynamics, stored at every step.
pub fn solve_hydro(model: &TransportModel, gamma: &GridFunction, t_final: f64, dt: f64) -> Result<SpaceTimePath> {
    solve_hydro_strided(model, gamma, t_final, dt, 1)
}

/// As [`solve_hydro`], keeping every `stride`-th frame.
///
/// A step whose result leaves the density range is redone as two half steps,
/// recursively, up to [`MAX_HALVINGS`] times.
pub fn solve_hydro_strided(
    model: &TransportModel,
    gamma: &GridFunction,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<SpaceTimePath> {
    check_density(gamma)?;
    check_geometry(model, gamma)?;
    if stride == 0 {
        return Err(invalid("frame stride must be positive"));
    }
    let (raw_steps, _) = time_steps(t_final, dt)?;
    let frames_out = raw_steps.div_ceil(stride);
    let steps = frames_out * stride;
    let dt_eff = if steps == 0 { dt } else { t_final / steps as f64 };
    let grid = gamma.grid;
    let mut current = gamma.values.clone();
    if let Geometry::Boundary { alpha, beta } = model.geometry {
        current[0] = alpha;
        current[grid.cells()] = beta;
    }
    let mut frames = Vec::with_capacity(frames_out + 1);
    frames.push(current.clone());
    for _ in 0..frames_out {
        for _ in 0..stride {
            current = hydro_step_adaptive(model, &grid, &current, dt_eff, 0)?;
        }
        frames.push(current.clone());
    }
    SpaceTimePath::new(grid, PathKind::Density, 0.0, dt_eff * stride as f64, frames)
}

fn hydro_step_adaptive(model: &TransportModel, grid: &Grid, rho: &[f64], dt: f64, depth: u32) -> Result<Vec<f64>> {
    let next = hydro_step(model, grid, rho, dt)?;
    if next.iter().all(|v| model.in_range(*v)) {
        return Ok(next);
    }
    if depth >= MAX_HALVINGS {
        return Err(Error::OutOfRange(format!(
            "hydrodynamic step left the density range after {MAX_HALVINGS} halvings"
        )));
    }
    debug!("solve_hydro: halving step to {}", dt / 2.0);
    let half = hydro_step_adaptive(model, grid, rho, dt / 2.0, depth + 1)?;
    hydro_step_adaptive(model, grid, &half, dt / 2.0, depth + 1)
}

fn hydro_step(model: &TransportModel, grid: &Grid, rho: &[f64], dt: f64) -> Result<Vec<f64>> {
    let m = grid.cells();
    let h = grid.h();
    let r = dt / (h * h);
    // lagged face diffusion and explicit drift flux
    let d_face: Vec<f64> = (0..m).map(|i| model.diffusion(0.5 * (rho[i] + rho[i + 1]))).collect();
    let drift: Vec<f64> = (0..m)
        .map(|i| {
            let e = model.field_at(grid.face(i));
            if e == 0.0 {
                0.0
            } else {
                model.face_mobility(rho[i], rho[i + 1]) * e
            }
        })
        .collect();
    match model.geometry {
        Geometry::Boundary { alpha, beta } => {
            let n = m - 1;
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for k in 0..n {
                let i = k + 1;
                lower[k] = -r * d_face[i - 1];
                upper[k] = -r * d_face[i];
                diag[k] = 1.0 + r * (d_face[i - 1] + d_face[i]);
                rhs[k] = rho[i] - dt / h * (drift[i] - drift[i - 1]);
            }
            rhs[0] += r * d_face[0] * alpha;
            rhs[n - 1] += r * d_face[m - 1] * beta;
            let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
            let mut next = Vec::with_capacity(m + 1);
            next.push(alpha);
            next.extend_from_slice(&inner);
            next.push(beta);
            Ok(next)
        }
        Geometry::Periodic { .. } => {
            let mut lower = vec![0.0; m];
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let left = (i + m - 1) % m;
                lower[i] = -r * d_face[left];
                upper[i] = -r * d_face[i];
                diag[i] = 1.0 + r * (d_face[left] + d_face[i]);
                rhs[i] = rho[i] - dt / h * (drift[i] - drift[left]);
            }
            let mut next = solve_cyclic_tridiagonal(&lower, &diag, &upper, &rhs)?;
            next.push(next[0]);
            Ok(next)
        }
    }
}

/// Density path induced by a current path through `∂ρ + ∇w = 0`.
#[derive(Debug, Clone)]
pub struct ContinuitySolution {
    pub path: SpaceTimePath,
    /// `false` if some frame left the model's open density range.
    pub admissible: bool,
    /// First frame at which admissibility failed.
    pub first_violation: Option<usize>,
}

/// Solve the continuity equation for a face-located current path.
///
/// Update: `ρ^{n+1}_i = ρ^n_i − (Δt/h)(w̄_{i+½} − w̄_{i−½})` with `w̄` the
/// average of the currents at the two frame times (trapezoid in time).
/// Boundary nodes keep the initial values in boundary geometry; in periodic
/// geometry the ring closes through face `M−1`.
pub fn solve_continuity(
    model: &TransportModel,
    gamma: &GridFunction,
    w: &SpaceTimePath,
) -> Result<ContinuitySolution> {
    check_density(gamma)?;
    if w.kind != PathKind::Current {
        return Err(invalid("solve_continuity needs a current path"));
    }
    if w.grid != gamma.grid {
        return Err(Error::GridMismatch(format!(
            "current on {} cells vs density on {} cells",
            w.grid.cells(),
            gamma.grid.cells()
        )));
    }
    let grid = gamma.grid;
    let m = grid.cells();
    let ratio = w.dt / grid.h();
    let periodic = model.geometry.is_periodic();
    if periodic && (gamma.values[0] - gamma.values[m]).abs() > 1e-12 {
        return Err(Error::BoundaryMismatch("periodic profile must satisfy ρ(0) = ρ(1)".into()));
    }
    let mut frames = Vec::with_capacity(w.len());
    let mut current = gamma.values.clone();
    let mut first_violation = None;
    let inside = |v: &[f64]| v.iter().all(|x| model.in_open_range(*x));
    if !inside(&current) {
        first_violation = Some(0);
    }
    frames.push(current.clone());
    for n in 0..w.len() - 1 {
        let (wa, wb) = (&w.frames[n], &w.frames[n + 1]);
        let flux = |i: usize| 0.5 * (wa[i] + wb[i]);
        let mut next = current.clone();
        if periodic {
            for i in 0..m {
                let left = (i + m - 1) % m;
                next[i] = current[i] - ratio * (flux(i) - flux(left));
            }
            next[m] = next[0];
        } else {
            for i in 1..m {
                next[i] = current[i] - ratio * (flux(i) - flux(i - 1));
            }
        }
        if first_violation.is_none() && !inside(&next) {
            first_violation = Some(n + 1);
        }
        frames.push(next.clone());
        current = next;
    }
    let path = SpaceTimePath::new(grid, PathKind::Density, w.t0, w.dt, frames)?;
    Ok(ContinuitySolution {
        path,
        admissible: first_violation.is_none(),
        first_violation,
    })
}

/// Newton limits for [`stationary_profile`].
pub const NEWTON_MAX_ITER: usize = 100;
pub const NEWTON_MAX_DAMPING: usize = 10;

/// Stationary solution of `∇(D(ρ)∇ρ − χ(ρ)E) = 0` with Dirichlet data.
pub fn stationary_profile(model: &TransportModel, grid: Grid) -> Result<GridFunction> {
    grid.require_solver_resolution()?;
    let (alpha, beta) = model
        .reservoirs()
        .ok_or_else(|| invalid("stationary_profile needs boundary geometry"))?;
    let m = grid.cells();
    let h = grid.h();
    let mut rho: Vec<f64> = grid.nodes().iter().map(|u| alpha * (1.0 - u) + beta * u).collect();

    let flux = |a: f64, b: f64, i: usize| -> f64 {
        let e = model.field_at(grid.face(i));
        let drift = if e == 0.0 { 0.0 } else { model.mobility(0.5 * (a + b)) * e };
        model.diffusion(0.5 * (a + b)) * (b - a) / h - drift
    };
    let residual = |rho: &[f64]| -> Vec<f64> {
        let fl: Vec<f64> = (0..m).map(|i| flux(rho[i], rho[i + 1], i)).collect();
        (1..m).map(|i| (fl[i] - fl[i - 1]) / h).collect()
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut res = residual(&rho);
    for iter in 0..NEWTON_MAX_ITER {
        let rn = norm(&res);
        if rn <= 1e-11 {
            debug!("stationary_profile converged after {iter} Newton steps");
            return GridFunction::new(grid, FieldKind::Density, rho);
        }
        // face flux partials by central differences
        let eps = 1e-7;
        let mut dfa = vec![0.0; m];
        let mut dfb = vec![0.0; m];
        for i in 0..m {
            let (a, b) = (rho[i], rho[i + 1]);
            dfa[i] = (flux(a + eps, b, i) - flux(a - eps, b, i)) / (2.0 * eps);
            dfb[i] = (flux(a, b + eps, i) - flux(a, b - eps, i)) / (2.0 * eps);
        }
        let n = m - 1;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for k in 0..n {
            let i = k + 1;
            // r_i = (f_i(ρ_i, ρ_{i+1}) − f_{i−1}(ρ_{i−1}, ρ_i)) / h
            lower[k] = -dfa[i - 1] / h;
            diag[k] = (dfa[i] - dfb[i - 1]) / h;
            upper[k] = dfb[i] / h;
        }
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let delta = solve_tridiagonal(&lower, &diag, &upper, &neg)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_DAMPING {
            let trial: Vec<f64> = rho
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 || i == m { *v } else { v + lambda * delta[i - 1] })
                .collect();
            if trial.iter().all(|v| model.in_range(*v)) {
                let tr = residual(&trial);
                if norm(&tr) < rn {
                    rho = trial;
                    res = tr;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let rn = norm(&res);
    if rn <= 1e-9 {
        return GridFunction::new(grid, FieldKind::Density, rho);
    }
    Err(Error::NoConvergence(format!(
        "stationary_profile: residual {rn:.3e} after {NEWTON_MAX_ITER} Newton iterations"
    )))
}
