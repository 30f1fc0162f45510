//! Static and dynamical large-deviation functionals of the density.
//!
//! * [`free_energy_f0`]: the local (product-measure) functional
//!   `∫ γ log(γ/ρ̄) + (1−γ) log((1−γ)/(1−ρ̄))`.
//! * [`solve_f_bvp`]: the non-local free energy of the boundary-driven
//!   exclusion process, through the increasing solution `F` of
//!   `F'' = (γ − F) F'² / (F(1 − F))`, `F(0) = α`, `F(1) = β`.
//! * [`rate_density`]: the dynamical cost of a smooth density path, through
//!   the one-dimensional elliptic problem for the driving potential `H_t`.
//!
//! # Discretisation of the boundary value problem
//!
//! The equation is first integrated as an initial value problem for
//! `(F, 1/F')`, which stays regular where `F'` is large, and the initial
//! slope is bracketed and bisected. The node values are then polished so
//! that the fourth-order finite-difference residual vanishes to rounding;
//! the polished profile is what every other routine consumes, so that the
//! reconstruction formulas of the quasi-potential module invert it exactly.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{trapezoid, FieldKind, GridFunction, PathKind, SpaceTimePath};
use crate::linalg::solve_tridiagonal;
use crate::models::{Geometry, TransportModel};
use crate::ode::{integrate_adaptive, AdaptiveOptions, CubicSpline};
use crate::stencil::derivatives_fourth_order;
use crate::INFINITE_COST;

/// Mobility below which a path is treated as degenerate (infinite cost).
pub const MIN_MOBILITY: f64 = 1e-12;
/// Target accuracy of `F(1)` in the shooting stage.
pub const SHOOTING_TOL: f64 = 1e-10;
/// Largest accepted discrete residual of the boundary value problem.
pub const BVP_RESIDUAL_TOL: f64 = 1e-6;
/// Maximum number of continuation steps in the fallback solver.
pub const MAX_CONTINUATION_STEPS: usize = 32;

/// `g log(g/r)` with `0 log 0 = 0`; `None` when infinite.
fn xlogy_ratio(g: f64, r: f64) -> Option<f64> {
    if g == 0.0 {
        Some(0.0)
    } else if r <= 0.0 {
        None
    } else {
        Some(g * (g / r).ln())
    }
}

/// Relative entropy of Bernoulli(`g`) with respect to Bernoulli(`r`).
pub fn bernoulli_entropy(g: f64, r: f64) -> Option<f64> {
    Some(xlogy_ratio(g, r)? + xlogy_ratio(1.0 - g, 1.0 - r)?)
}

/// Local free energy `𝓕₀(γ)` relative to `rho_bar`, trapezoid rule.
///
/// Returns [`INFINITE_COST`] if `gamma` touches 0 or 1 at an interior node.
pub fn free_energy_f0(gamma: &GridFunction, rho_bar: &GridFunction) -> Result<f64> {
    if gamma.grid != rho_bar.grid || gamma.len() != rho_bar.len() || gamma.kind == FieldKind::Current {
        return Err(Error::GridMismatch("gamma and rho_bar must share a node grid".into()));
    }
    let n = gamma.len();
    let mut integrand = Vec::with_capacity(n);
    for i in 0..n {
        let (g, r) = (gamma.values[i], rho_bar.values[i]);
        if !(0.0..=1.0).contains(&g) || !(0.0..=1.0).contains(&r) {
            return Err(Error::OutOfRange(format!("density {g} or {r} outside [0, 1] at node {i}")));
        }
        let interior = i > 0 && i + 1 < n;
        if interior && (g <= 0.0 || g >= 1.0) {
            return Ok(INFINITE_COST);
        }
        match bernoulli_entropy(g, r) {
            Some(v) => integrand.push(v),
            None => return Ok(INFINITE_COST),
        }
    }
    Ok(trapezoid(&integrand, gamma.grid.h()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BvpMethod {
    Shooting,
    Continuation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvpDiagnostics {
    pub method: BvpMethod,
    /// Sup norm of the discrete residual at interior nodes.
    pub residual: f64,
    pub shooting_iterations: usize,
    pub newton_iterations: usize,
    /// Final bracket on the initial slope `F'(0)`.
    pub bracket: (f64, f64),
    pub initial_slope: f64,
    /// Every slope tried, with `F(1)` (NaN when the orbit left `(0, 1)`).
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergySolution {
    pub gamma: GridFunction,
    pub f: GridFunction,
    /// `𝓕(γ)`.
    pub value: f64,
    pub alpha: f64,
    pub beta: f64,
    pub diagnostics: BvpDiagnostics,
}

fn check_profile(gamma: &GridFunction, alpha: f64, beta: f64) -> Result<()> {
    if gamma.kind == FieldKind::Current {
        return Err(invalid("the free energy needs a node-located profile"));
    }
    gamma.grid.require_solver_resolution()?;
    if !(alpha > 0.0 && beta < 1.0 && alpha < beta) {
        if alpha == beta {
            return Err(invalid(
                "alpha = beta: the boundary value problem is singular at equilibrium; use free_energy_f0",
            ));
        }
        return Err(invalid(format!("need 0 < alpha < beta < 1, got alpha = {alpha}, beta = {beta}")));
    }
    let n = gamma.len();
    for (i, g) in gamma.values.iter().enumerate() {
        let interior = i > 0 && i + 1 < n;
        let ok = if interior { *g > 0.0 && *g < 1.0 } else { (0.0..=1.0).contains(g) };
        if !ok {
            return Err(Error::OutOfRange(format!("gamma = {g} at node {i}")));
        }
    }
    Ok(())
}

/// Fourth-order residual `F'' − (γ − F)F'²/(F(1 − F))` at interior nodes.
pub fn bvp_residual(f: &[f64], gamma: &[f64], h: f64) -> Vec<f64> {
    let (d1, d2) = derivatives_fourth_order(f, h);
    (1..f.len() - 1)
        .map(|i| {
            let fi = f[i];
            d2[i] - (gamma[i] - fi) * d1[i] * d1[i] / (fi * (1.0 - fi))
        })
        .collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn strictly_increasing(f: &[f64]) -> bool {
    f.windows(2).all(|w| w[1] > w[0])
}

/// Drive the fourth-order residual to rounding level, using the Jacobian of
/// the three-point scheme as an approximate Jacobian.
///
/// Returns the number of iterations, or `None` if the residual stalls above
/// [`BVP_RESIDUAL_TOL`].
fn polish(f: &mut [f64], gamma: &[f64], h: f64, max_iter: usize) -> Option<usize> {
    let n = f.len();
    let mut res = bvp_residual(f, gamma, h);
    let mut norm = sup(&res);
    for iter in 0..max_iter {
        if norm <= 1e-11 {
            return Some(iter);
        }
        let m = n - 2;
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            let fi = f[i];
            let chi = fi * (1.0 - fi);
            let d = (f[i + 1] - f[i - 1]) / (2.0 * h);
            let g = (gamma[i] - fi) / chi;
            let dg = (-chi - (gamma[i] - fi) * (1.0 - 2.0 * fi)) / (chi * chi);
            lower[k] = 1.0 / (h * h) + g * d / h;
            upper[k] = 1.0 / (h * h) - g * d / h;
            diag[k] = -2.0 / (h * h) - d * d * dg;
        }
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        let delta = solve_tridiagonal(&lower, &diag, &upper, &rhs).ok()?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut trial = f.to_vec();
            for k in 0..m {
                trial[k + 1] += lambda * delta[k];
            }
            if trial.iter().all(|v| *v > 0.0 && *v < 1.0) && strictly_increasing(&trial) {
                let tr = bvp_residual(&trial, gamma, h);
                let tn = sup(&tr);
                if tn < norm {
                    f.copy_from_slice(&trial);
                    res = tr;
                    norm = tn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return (norm <= BVP_RESIDUAL_TOL).then_some(iter);
        }
    }
    (norm <= BVP_RESIDUAL_TOL).then_some(max_iter)
}

enum Shot {
    /// `F(1)` and the node values.
    Landed(f64, Vec<f64>),
    /// The orbit left `0 < F < 1` or lost monotonicity before `u = 1`.
    Overshoot,
}

fn shoot(spline: &CubicSpline, alpha: f64, slope: f64, stops: &[f64]) -> Shot {
    let rhs = |u: f64, y: [f64; 2]| -> Option<[f64; 2]> {
        let (f, q) = (y[0], y[1]);
        if !(f > 0.0 && f < 1.0 && q > 0.0) {
            return None;
        }
        Some([1.0 / q, (f - spline.eval(u)) / (f * (1.0 - f))])
    };
    match integrate_adaptive(rhs, 0.0, [alpha, 1.0 / slope], stops, AdaptiveOptions::default()) {
        Ok(ys) => {
            let end = ys[ys.len() - 1];
            if end[0] > 0.0 && end[0] < 1.0 && end[1] > 0.0 {
                let mut values = vec![alpha];
                values.extend(ys.iter().map(|y| y[0]));
                Shot::Landed(end[0], values)
            } else {
                Shot::Overshoot
            }
        }
        Err(_) => Shot::Overshoot,
    }
}

struct ShootingOutcome {
    values: Vec<f64>,
    iterations: usize,
    bracket: (f64, f64),
    slope: f64,
}

fn shooting(
    gamma: &[f64],
    h: f64,
    alpha: f64,
    beta: f64,
    trace: &mut Vec<(f64, f64)>,
) -> Result<Option<ShootingOutcome>> {
    let n = gamma.len();
    let spline = CubicSpline::uniform(0.0, h, gamma)?;
    let stops: Vec<f64> = (1..n).map(|i| i as f64 * h).collect();
    let mut lo = 1e-6;
    let mut hi = (beta - alpha) * 1e3;
    let mut lo_value = match shoot(&spline, alpha, lo, &stops) {
        Shot::Landed(v, _) if v < beta => v,
        _ => return Ok(None),
    };
    trace.push((lo, lo_value));
    let mut hi_value = match shoot(&spline, alpha, hi, &stops) {
        Shot::Landed(v, _) if v <= beta => {
            trace.push((hi, v));
            return Ok(None);
        }
        Shot::Landed(v, _) => v,
        Shot::Overshoot => f64::NAN,
    };
    trace.push((hi, hi_value));
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for iter in 0..200 {
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        match shoot(&spline, alpha, mid, &stops) {
            Shot::Landed(v, values) => {
                trace.push((mid, v));
                if v < lo_value || (!hi_value.is_nan() && v > hi_value) {
                    return Err(Error::Monotonicity(format!(
                        "shooting map is not monotone: F(1) = {v} at slope {mid}, bracket values ({lo_value}, {hi_value}); trace {trace:?}"
                    )));
                }
                let err = (v - beta).abs();
                if best.as_ref().is_none_or(|b| err < (b.1 - beta).abs()) {
                    best = Some((mid, v, values));
                }
                if err <= SHOOTING_TOL {
                    break;
                }
                if v < beta {
                    lo = mid;
                    lo_value = v;
                } else {
                    hi = mid;
                    hi_value = v;
                }
            }
            Shot::Overshoot => {
                // steep orbits creep up to F = 1; a failed integration lies on the high side
                trace.push((mid, f64::NAN));
                hi = mid;
                hi_value = f64::NAN;
            }
        }
        if iter == 199 {
            debug!("shooting: iteration limit reached");
        }
    }
    Ok(best.map(|(slope, _, mut values)| {
        let last = values.len() - 1;
        values[last] = beta;
        ShootingOutcome {
            values,
            iterations: trace.len(),
            bracket: (lo, hi),
            slope,
        }
    }))
}

/// Solve the free-energy boundary value problem and evaluate `𝓕(γ)`.
pub fn solve_f_bvp(gamma: &GridFunction, alpha: f64, beta: f64) -> Result<FreeEnergySolution> {
    check_profile(gamma, alpha, beta)?;
    let grid = gamma.grid;
    let h = grid.h();
    let g = &gamma.values;
    let mut trace = Vec::new();
    let shot = shooting(g, h, alpha, beta, &mut trace)?;
    let mut method = BvpMethod::Shooting;
    let (mut values, shooting_iterations, bracket, slope) = match shot {
        Some(s) => (s.values, s.iterations, s.bracket, s.slope),
        None => (Vec::new(), trace.len(), (f64::NAN, f64::NAN), f64::NAN),
    };
    let newton_iterations;
    let polished = if values.is_empty() || !strictly_increasing(&values) {
        None
    } else {
        polish(&mut values, g, h, 200)
    };
    match polished {
        Some(it) => newton_iterations = it,
        None => {
            debug!("solve_f_bvp: shooting failed, switching to continuation");
            method = BvpMethod::Continuation;
            let (v, it) = continuation(g, h, alpha, beta, &trace)?;
            values = v;
            newton_iterations = it;
        }
    }
    let residual = sup(&bvp_residual(&values, g, h));
    if residual > BVP_RESIDUAL_TOL {
        return Err(Error::NoConvergence(format!(
            "free-energy BVP residual {residual:.3e}; slope trace {trace:?}"
        )));
    }
    if !strictly_increasing(&values) {
        return Err(Error::Monotonicity("F is not strictly increasing".into()));
    }
    let value = free_energy_value(g, &values, h, alpha, beta);
    Ok(FreeEnergySolution {
        gamma: gamma.clone(),
        f: GridFunction::new(grid, FieldKind::Node, values)?,
        value,
        alpha,
        beta,
        diagnostics: BvpDiagnostics {
            method,
            residual,
            shooting_iterations,
            newton_iterations,
            bracket,
            initial_slope: slope,
            trace,
        },
    })
}

fn continuation(gamma: &[f64], h: f64, alpha: f64, beta: f64, trace: &[(f64, f64)]) -> Result<(Vec<f64>, usize)> {
    let n = gamma.len();
    let rho_bar: Vec<f64> = (0..n).map(|i| alpha + (beta - alpha) * i as f64 * h).collect();
    let mut f = rho_bar.clone();
    let mut theta: f64 = 0.0;
    let mut step = 1.0;
    let mut total = 0;
    for _ in 0..MAX_CONTINUATION_STEPS {
        let target = (theta + step).min(1.0);
        let g: Vec<f64> = rho_bar.iter().zip(gamma).map(|(r, g)| r + target * (g - r)).collect();
        let mut trial = f.clone();
        match polish(&mut trial, &g, h, 200) {
            Some(it) => {
                total += it;
                f = trial;
                theta = target;
                if theta >= 1.0 {
                    return Ok((f, total));
                }
                step *= 2.0;
            }
            None => step *= 0.5,
        }
    }
    Err(Error::NoConvergence(format!(
        "no increasing solution found: continuation reached theta = {theta} in {MAX_CONTINUATION_STEPS} steps; shooting trace {trace:?}"
    )))
}

fn free_energy_value(gamma: &[f64], f: &[f64], h: f64, alpha: f64, beta: f64) -> f64 {
    let (d1, _) = derivatives_fourth_order(f, h);
    let integrand: Vec<f64> = (0..f.len())
        .map(|i| {
            let local = bernoulli_entropy(gamma[i], f[i]).unwrap_or(f64::INFINITY);
            local + (d1[i] / (beta - alpha)).ln()
        })
        .collect();
    trapezoid(&integrand, h)
}

/// `𝓕(γ)` for boundary densities `alpha ≤ beta`; at equilibrium the local
/// functional `𝓕₀` relative to the constant profile.
pub fn free_energy(gamma: &GridFunction, alpha: f64, beta: f64) -> Result<f64> {
    if alpha == beta {
        let flat = GridFunction::constant(gamma.grid, FieldKind::Density, alpha)?;
        return free_energy_f0(gamma, &flat);
    }
    Ok(solve_f_bvp(gamma, alpha, beta)?.value)
}

/// Dynamical cost of a density path, with the potentials that realise it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEvaluation {
    pub path: SpaceTimePath,
    /// `H_t` at the nodes, `H_t(0) = H_t(1) = 0`; absent when the cost is infinite.
    pub potential: Option<SpaceTimePath>,
    /// `χ(λ_t)∇H_t` on the faces.
    pub flux: Option<SpaceTimePath>,
    pub cost: f64,
    /// `½ ∫ χ(λ_t)(∇H_t)² du` per frame.
    pub integrand: Vec<f64>,
}

impl RateEvaluation {
    pub fn is_infinite(&self) -> bool {
        crate::is_infinite_cost(self.cost)
    }

    fn infinite(path: &SpaceTimePath) -> Self {
        Self {
            path: path.clone(),
            potential: None,
            flux: None,
            cost: INFINITE_COST,
            integrand: Vec::new(),
        }
    }

    /// Current realising the path at minimal cost: `J(λ_t) + χ(λ_t)∇H_t`.
    pub fn optimal_current(&self, model: &TransportModel) -> Option<Result<SpaceTimePath>> {
        let flux = self.flux.as_ref()?;
        let frames = self
            .path
            .frames
            .iter()
            .zip(&flux.frames)
            .map(|(lam, g)| {
                crate::pde::hydrodynamic_current(model, &self.path.grid, lam)
                    .iter()
                    .zip(g)
                    .map(|(j, g)| j + g)
                    .collect()
            })
            .collect();
        Some(SpaceTimePath::new(self.path.grid, PathKind::Current, self.path.t0, self.path.dt, frames))
    }
}

/// `∂_t` of frame `k`: centred in the interior, second-order one-sided at
/// the two ends (first order for two-frame paths).
pub(crate) fn time_derivative(frames: &[Vec<f64>], k: usize, dt: f64) -> Vec<f64> {
    let n = frames.len();
    let comb = |c: &[(usize, f64)], scale: f64| -> Vec<f64> {
        (0..frames[0].len())
            .map(|i| c.iter().map(|(j, w)| w * frames[*j][i]).sum::<f64>() / scale)
            .collect()
    };
    if n == 2 {
        return comb(&[(1, 1.0), (0, -1.0)], dt);
    }
    if k == 0 {
        comb(&[(0, -3.0), (1, 4.0), (2, -1.0)], 2.0 * dt)
    } else if k == n - 1 {
        comb(&[(n - 1, 3.0), (n - 2, -4.0), (n - 3, 1.0)], 2.0 * dt)
    } else {
        comb(&[(k + 1, 1.0), (k - 1, -1.0)], 2.0 * dt)
    }
}

struct Slice {
    energy: f64,
    flux: Vec<f64>,
    potential: Vec<f64>,
}

/// Per-frame elliptic solve. `None` signals an infinite cost.
fn slice(model: &TransportModel, path: &SpaceTimePath, k: usize) -> Option<Slice> {
    let grid = path.grid;
    let m = grid.cells();
    let h = grid.h();
    let lam = &path.frames[k];
    let dlam = time_derivative(&path.frames, k, path.dt);
    let chi: Vec<f64> = (0..m).map(|f| model.face_mobility(lam[f], lam[f + 1])).collect();
    if chi.iter().any(|c| !(*c >= MIN_MOBILITY)) {
        return None;
    }
    let j = crate::pde::hydrodynamic_current(model, &grid, lam);
    let periodic = model.geometry.is_periodic();
    // faces carry g = χ∇H; node i sits between faces i-1 and i
    let mut g = vec![0.0; m];
    let mut abs_sum = 0.0;
    let mut total = 0.0;
    if periodic {
        let r0 = dlam[0] + (j[0] - j[m - 1]) / h;
        total += r0;
        abs_sum += r0.abs();
    }
    for i in 1..m {
        let r = dlam[i] + (j[i] - j[i - 1]) / h;
        g[i] = g[i - 1] - h * r;
        total += r;
        abs_sum += r.abs();
    }
    if periodic && (h * total).abs() > 1e-7 * (1.0 + h * abs_sum) {
        // mass is not conserved: no current can produce the path
        return None;
    }
    let inv: f64 = chi.iter().map(|c| 1.0 / c).sum();
    let weighted: f64 = g.iter().zip(&chi).map(|(g, c)| g / c).sum();
    let c = -weighted / inv;
    let mut energy = 0.0;
    let mut potential = vec![0.0; m + 1];
    for f in 0..m {
        g[f] += c;
        energy += 0.5 * h * g[f] * g[f] / chi[f];
        potential[f + 1] = potential[f] + h * g[f] / chi[f];
    }
    potential[m] = 0.0;
    Some(Slice {
        energy,
        flux: g,
        potential,
    })
}

/// Cost `½ ∫dt ∫du χ(λ_t)(∇H_t)²` of a smooth density path.
///
/// For each frame the residual `r = ∂_tλ + ∇J(λ)` against the hydrodynamic
/// current `J = −D∇λ + χE` is computed in flux form, and the face flux
/// `g = χ∇H` solves `−∇g = r` with the constant fixed by `H(1) = H(0)`.
/// Frames with vanishing mobility or, in periodic geometry, non-conserved
/// mass give [`INFINITE_COST`].
pub fn rate_density(path: &SpaceTimePath, model: &TransportModel) -> Result<RateEvaluation> {
    if path.kind != PathKind::Density {
        return Err(invalid("rate_density needs a density path"));
    }
    if path.len() < 2 {
        return Err(invalid("rate_density needs at least two frames"));
    }
    path.grid.require_solver_resolution()?;
    let m = path.grid.cells();
    let tol = 1e-8;
    match model.geometry {
        Geometry::Boundary { alpha, beta } => {
            for (k, f) in path.frames.iter().enumerate() {
                if (f[0] - alpha).abs() > tol || (f[m] - beta).abs() > tol {
                    return Err(Error::BoundaryMismatch(format!(
                        "frame {k} ends ({}, {}) differ from the reservoirs ({alpha}, {beta})",
                        f[0], f[m]
                    )));
                }
            }
        }
        Geometry::Periodic { .. } => {
            for (k, f) in path.frames.iter().enumerate() {
                if (f[0] - f[m]).abs() > tol {
                    return Err(Error::BoundaryMismatch(format!("frame {k} is not periodic")));
                }
            }
        }
    }
    if path.frames.iter().flatten().any(|v| !model.in_range(*v)) {
        return Ok(RateEvaluation::infinite(path));
    }
    let slices: Vec<Option<Slice>> = (0..path.len()).into_par_iter().map(|k| slice(model, path, k)).collect();
    if slices.iter().any(Option::is_none) {
        return Ok(RateEvaluation::infinite(path));
    }
    let slices: Vec<Slice> = slices.into_iter().flatten().collect();
    let integrand: Vec<f64> = slices.iter().map(|s| s.energy).collect();
    let cost = trapezoid(&integrand, path.dt);
    let (flux, potential): (Vec<Vec<f64>>, Vec<Vec<f64>>) = slices.into_iter().map(|s| (s.flux, s.potential)).unzip();
    Ok(RateEvaluation {
        path: path.clone(),
        potential: Some(SpaceTimePath::new(path.grid, PathKind::Potential, path.t0, path.dt, potential)?),
        flux: Some(SpaceTimePath::new(path.grid, PathKind::Current, path.t0, path.dt, flux)?),
        cost,
        integrand,
    })
}
