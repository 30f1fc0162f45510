//! Quasi-potential of the boundary-driven exclusion process.
//!
//! With `F` the increasing solution of the free-energy boundary value
//! problem for a profile `γ`, the function `φ = log(F/(1 − F))` is the
//! non-local part of the derivative of the free energy:
//! `δ𝓕/δγ = log(γ/(1 − γ)) − φ`.
//!
//! The adjoint (time-reversed) hydrodynamics started from `γ` becomes the
//! heat equation under the change of variables `F_t = e^{φ_t}/(1 + e^{φ_t})`,
//! and the density is recovered from `F_t` by
//! `ρ_t = F_t + F_t(1 − F_t) ΔF_t / (∇F_t)²`.
//! Reversing the resulting relaxation in time gives the optimal path from
//! the stationary profile to `γ`, whose cost must equal `𝓕(γ)`.

use serde::{Deserialize, Serialize};

use crate::density_ldf::{free_energy_f0, rate_density, solve_f_bvp, FreeEnergySolution};
use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridFunction, PathKind, SpaceTimePath};
use crate::models::{Geometry, TransportModel};
use crate::pde::solve_heat_strided;
use crate::stencil::derivatives_fourth_order;

/// Initial horizon of the adjoint relaxation.
pub const DEFAULT_HORIZON: f64 = 5.0;
/// Largest horizon tried by the automatic doubling.
pub const MAX_HORIZON: f64 = 40.0;
/// Required `sup |F_T − ρ̄|` at the end of the relaxation.
pub const RELAXATION_TOL: f64 = 1e-4;
/// Time between stored frames of adjoint paths, per unit of mesh width.
pub const FRAME_SPACING: f64 = 0.05;
/// Stored frames per integration step in [`verify_quasipotential`].
pub const STEPS_PER_FRAME: usize = 10;
/// Largest accepted residual of the `φ` equation.
pub const PHI_RESIDUAL_TOL: f64 = 1e-5;
/// Largest accepted rounding estimate in the density reconstruction.
pub const RECONSTRUCTION_TOL: f64 = 1e-6;

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Residual of `Δφ/(∇φ)² + 1/(1 + e^φ) − γ` at the interior nodes.
pub fn phi_residual(phi: &[f64], gamma: &[f64], h: f64) -> Vec<f64> {
    let (d1, d2) = derivatives_fourth_order(phi, h);
    (1..phi.len() - 1)
        .map(|i| d2[i] / (d1[i] * d1[i]) + 1.0 / (1.0 + phi[i].exp()) - gamma[i])
        .collect()
}

fn phi_from(sol: &FreeEnergySolution) -> Result<GridFunction> {
    let values: Vec<f64> = sol.f.values.iter().map(|f| logit(*f)).collect();
    // Δφ/(∇φ)² = χ(F)ΔF/(∇F)² − (1 − 2F), so the φ equation is evaluated
    // through F, whose stencils are exact for the polished solution
    let f = &sol.f.values;
    let (d1, d2) = derivatives_fourth_order(f, sol.gamma.grid.h());
    let res = (1..f.len() - 1)
        .map(|i| {
            let chi = f[i] * (1.0 - f[i]);
            (chi * d2[i] / (d1[i] * d1[i]) - (1.0 - 2.0 * f[i]) + (1.0 - f[i]) - sol.gamma.values[i]).abs()
        })
        .fold(0.0, f64::max);
    if res > PHI_RESIDUAL_TOL {
        return Err(Error::Resolution(format!(
            "phi equation residual {res:.3e} exceeds {PHI_RESIDUAL_TOL:e}; refine the grid"
        )));
    }
    GridFunction::new(sol.gamma.grid, FieldKind::Node, values)
}

/// `φ(γ) = log(F/(1 − F))` with `F` from [`solve_f_bvp`].
pub fn solve_phi(gamma: &GridFunction, alpha: f64, beta: f64) -> Result<GridFunction> {
    phi_from(&solve_f_bvp(gamma, alpha, beta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonJacobiResidual {
    /// `⟨∇δW, χ(γ)∇δW⟩`.
    pub dissipation: f64,
    /// `⟨δW, Δγ⟩`.
    pub drift: f64,
    pub residual: f64,
}

/// Simpson's rule when the number of cells is even, trapezoid otherwise.
fn integrate_nodes(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if !(n - 1).is_multiple_of(2) {
        return crate::grid::trapezoid(values, h);
    }
    let mut s = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Hamilton–Jacobi functional for a trial derivative `delta_w` of the
/// quasi-potential at `gamma`, with the exclusion mobility.
pub fn hamilton_jacobi_terms(gamma: &GridFunction, delta_w: &[f64]) -> Result<HamiltonJacobiResidual> {
    if delta_w.len() != gamma.len() {
        return Err(Error::GridMismatch("trial derivative and profile differ in length".into()));
    }
    let h = gamma.grid.h();
    let (dw, _) = derivatives_fourth_order(delta_w, h);
    let (_, lap) = derivatives_fourth_order(&gamma.values, h);
    let first: Vec<f64> = (0..gamma.len())
        .map(|i| {
            let g = gamma.values[i];
            g * (1.0 - g) * dw[i] * dw[i]
        })
        .collect();
    let second: Vec<f64> = (0..gamma.len()).map(|i| delta_w[i] * lap[i]).collect();
    let dissipation = integrate_nodes(&first, h);
    let drift = integrate_nodes(&second, h);
    Ok(HamiltonJacobiResidual {
        dissipation,
        drift,
        residual: dissipation + drift,
    })
}

/// Hamilton–Jacobi residual at `gamma` of `δW/δγ = log(γ/(1 − γ)) − φ(γ)`.
pub fn hamilton_jacobi_residual(gamma: &GridFunction, alpha: f64, beta: f64) -> Result<HamiltonJacobiResidual> {
    let phi = solve_phi(gamma, alpha, beta)?;
    let delta_w: Vec<f64> = gamma.values.iter().zip(&phi.values).map(|(g, p)| logit(*g) - p).collect();
    hamilton_jacobi_terms(gamma, &delta_w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointSolution {
    pub gamma: GridFunction,
    pub alpha: f64,
    pub beta: f64,
    pub phi: GridFunction,
    /// `F_t`, solving the heat equation with `F_0 = e^φ/(1 + e^φ)`.
    pub f_path: SpaceTimePath,
    /// Adjoint relaxation from `γ` towards `ρ̄`.
    pub rho_path: SpaceTimePath,
    /// `rho_path` reversed: the fluctuation path from `ρ̄` to `γ`.
    pub optimal_path: SpaceTimePath,
    pub horizon: f64,
    /// `sup |F_T − ρ̄|`.
    pub relaxation_gap: f64,
    pub free_energy: FreeEnergySolution,
}

/// `F + F(1 − F) ΔF/(∇F)²` at the interior nodes, ends set to `α`, `β`.
///
/// Fails with a resolution error when the estimated rounding error of the
/// quotient exceeds [`RECONSTRUCTION_TOL`].
pub fn reconstruct_density(f: &[f64], h: f64, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    let n = f.len();
    let (d1, d2) = derivatives_fourth_order(f, h);
    let scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    // the five-point second difference amplifies rounding by (1+16+30+16+1)/12
    let d2_noise = 64.0 / 12.0 * f64::EPSILON * scale / (h * h);
    let mut rho = vec![0.0; n];
    rho[0] = alpha;
    rho[n - 1] = beta;
    for i in 1..n - 1 {
        let chi = f[i] * (1.0 - f[i]);
        let g2 = d1[i] * d1[i];
        if d1[i] <= 0.0 {
            return Err(Error::Monotonicity(format!("∇F = {} at node {i}", d1[i])));
        }
        let noise = chi * d2_noise / g2;
        if noise > RECONSTRUCTION_TOL {
            return Err(Error::Resolution(format!(
                "reconstruction rounding estimate {noise:.2e} at node {i}: ∇F = {:.3e} is too small for h = {h}",
                d1[i]
            )));
        }
        rho[i] = f[i] + chi * d2[i] / g2;
    }
    Ok(rho)
}

/// Adjoint relaxation of `gamma` and the optimal fluctuation path.
///
/// `horizon = None` starts at [`DEFAULT_HORIZON`] and doubles up to
/// [`MAX_HORIZON`] until `sup |F_T − ρ̄| ≤` [`RELAXATION_TOL`]; an explicit
/// horizon that does not relax far enough is an error.
pub fn adjoint_path(
    gamma: &GridFunction,
    alpha: f64,
    beta: f64,
    horizon: Option<f64>,
    dt: f64,
) -> Result<AdjointSolution> {
    let fe = solve_f_bvp(gamma, alpha, beta)?;
    let phi = phi_from(&fe)?;
    let grid = gamma.grid;
    let h = grid.h();
    let f0 = GridFunction::new(grid, FieldKind::Density, phi.values.iter().map(|p| expit(*p)).collect())?;
    let stride = frame_stride(h, dt);
    let rho_bar: Vec<f64> = grid.nodes().iter().map(|u| alpha + (beta - alpha) * u).collect();
    let mut t = horizon.unwrap_or(DEFAULT_HORIZON);
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {t}")));
    }
    let (heat, gap) = loop {
        let heat = solve_heat_strided(&f0, alpha, beta, t, dt, stride)?;
        let last = &heat.frames[heat.len() - 1];
        let gap = last.iter().zip(&rho_bar).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap <= RELAXATION_TOL {
            break (heat, gap);
        }
        if horizon.is_some() || t >= MAX_HORIZON {
            return Err(Error::NoConvergence(format!(
                "T too small: sup |F_T − ρ̄| = {gap:.3e} at T = {t}"
            )));
        }
        t *= 2.0;
    };
    for (k, f) in heat.frames.iter().enumerate() {
        if let Some(i) = f.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Monotonicity(format!(
                "F_t lost monotonicity at frame {k} (t = {}), cell {i}",
                heat.time(k)
            )));
        }
    }
    let rho_frames = heat
        .frames
        .iter()
        .map(|f| reconstruct_density(f, h, alpha, beta))
        .collect::<Result<Vec<_>>>()?;
    if let Some((k, v)) = rho_frames
        .iter()
        .enumerate()
        .find_map(|(k, f)| f.iter().find(|v| !(0.0..=1.0).contains(*v)).map(|v| (k, *v)))
    {
        return Err(Error::OutOfRange(format!("reconstructed density {v} at frame {k}")));
    }
    let rho_path = SpaceTimePath::new(grid, PathKind::Density, 0.0, heat.dt, rho_frames)?;
    let f_path = SpaceTimePath {
        kind: PathKind::Potential,
        ..heat
    };
    Ok(AdjointSolution {
        gamma: gamma.clone(),
        alpha,
        beta,
        phi,
        optimal_path: rho_path.reversed(),
        rho_path,
        f_path,
        horizon: t,
        relaxation_gap: gap,
        free_energy: fe,
    })
}

fn frame_stride(h: f64, dt: f64) -> usize {
    ((FRAME_SPACING * h / dt).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasipotentialCheck {
    /// Dynamical cost of the optimal path.
    pub cost: f64,
    /// `𝓕(γ)` (or `𝓕₀(γ)` at equilibrium).
    pub free_energy: f64,
    pub relative_gap: f64,
    pub horizon: f64,
}

fn relative_gap(cost: f64, value: f64) -> f64 {
    (cost - value).abs() / value.max(1e-12)
}

/// Compare the cost of the optimal fluctuation path with the free energy.
///
/// At equilibrium (`alpha == beta`) the optimal path is the reversed heat
/// relaxation and the comparison is with `𝓕₀`. Frames are spaced
/// `FRAME_SPACING · h` apart so that time and space errors shrink together.
pub fn verify_quasipotential(
    gamma: &GridFunction,
    alpha: f64,
    beta: f64,
    horizon: Option<f64>,
) -> Result<QuasipotentialCheck> {
    let model = TransportModel::ssep(Geometry::Boundary { alpha, beta })?;
    let dt = FRAME_SPACING * gamma.grid.h() / STEPS_PER_FRAME as f64;
    if alpha == beta {
        let t = horizon.unwrap_or(DEFAULT_HORIZON);
        let (cost, _) = reversed_relaxation_cost(gamma, alpha, t, dt)?;
        let flat = GridFunction::constant(gamma.grid, FieldKind::Density, alpha)?;
        let value = free_energy_f0(gamma, &flat)?;
        return Ok(QuasipotentialCheck {
            cost,
            free_energy: value,
            relative_gap: relative_gap(cost, value),
            horizon: t,
        });
    }
    let adj = adjoint_path(gamma, alpha, beta, horizon, dt)?;
    let cost = rate_density(&adj.optimal_path, &model)?.cost;
    let value = adj.free_energy.value;
    Ok(QuasipotentialCheck {
        cost,
        free_energy: value,
        relative_gap: relative_gap(cost, value),
        horizon: adj.horizon,
    })
}

/// Cost of the time-reversed heat relaxation from `gamma` over `[0, T]` at
/// equilibrium density `level`, and the reversed path itself.
pub fn reversed_relaxation_cost(
    gamma: &GridFunction,
    level: f64,
    horizon: f64,
    dt: f64,
) -> Result<(f64, SpaceTimePath)> {
    let stride = frame_stride(gamma.grid.h(), dt);
    let path = solve_heat_strided(gamma, level, level, horizon, dt, stride)?.reversed();
    let model = TransportModel::ssep(Geometry::Boundary { alpha: level, beta: level })?;
    let cost = rate_density(&path, &model)?.cost;
    Ok((cost, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConsistency {
    /// `½Δγ − ∇(χ(γ)∇φ)`: the right-hand side of the adjoint equation.
    pub via_adjoint: Vec<f64>,
    /// `−½Δγ + ∇(χ(γ)∇δW)`: hydrodynamic drift subtracted from the
    /// symmetric part.
    pub via_identity: Vec<f64>,
    /// Sup-norm difference.
    pub residual: f64,
}

/// Conservative `∇(χ_f ∇u)` at interior nodes with entropy-mean face mobility.
fn divergence_form(model: &TransportModel, gamma: &[f64], u: &[f64], grid: &Grid) -> Vec<f64> {
    let m = grid.cells();
    let h = grid.h();
    let flux: Vec<f64> = (0..m)
        .map(|f| model.face_mobility(gamma[f], gamma[f + 1]) * (u[f + 1] - u[f]) / h)
        .collect();
    (1..m).map(|i| (flux[i] - flux[i - 1]) / h).collect()
}

/// Adjoint drift at `gamma` computed two ways, for trial `phi` and trial
/// `delta_w`; the two agree when `delta_w = log(γ/(1 − γ)) − phi`.
pub fn adjoint_drift_consistency_with(gamma: &GridFunction, phi: &[f64], delta_w: &[f64]) -> Result<DriftConsistency> {
    let grid = gamma.grid;
    let m = grid.cells();
    if phi.len() != m + 1 || delta_w.len() != m + 1 {
        return Err(Error::GridMismatch("trial fields must live on the nodes of gamma's grid".into()));
    }
    let g = &gamma.values;
    let model = TransportModel::ssep(Geometry::Periodic { mass: 0.5 })?;
    let h = grid.h();
    let lap: Vec<f64> = (1..m).map(|i| (g[i + 1] - 2.0 * g[i] + g[i - 1]) / (h * h)).collect();
    let a = divergence_form(&model, g, phi, &grid);
    let b = divergence_form(&model, g, delta_w, &grid);
    let via_adjoint: Vec<f64> = lap.iter().zip(&a).map(|(l, a)| 0.5 * l - a).collect();
    let via_identity: Vec<f64> = lap.iter().zip(&b).map(|(l, b)| -0.5 * l + b).collect();
    let residual = via_adjoint
        .iter()
        .zip(&via_identity)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(DriftConsistency {
        via_adjoint,
        via_identity,
        residual,
    })
}

/// Adjoint drift consistency for `φ = φ(γ)` and `δW = log(γ/(1 − γ)) − φ`.
pub fn adjoint_drift_consistency(gamma: &GridFunction, alpha: f64, beta: f64) -> Result<DriftConsistency> {
    let phi = solve_phi(gamma, alpha, beta)?;
    let delta_w: Vec<f64> = gamma.values.iter().zip(&phi.values).map(|(g, p)| logit(*g) - p).collect();
    adjoint_drift_consistency_with(gamma, &phi.values, &delta_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rho_bar(g: Grid) -> GridFunction {
        GridFunction::density(g, |u| 0.2 + 0.6 * u).unwrap()
    }

    fn bump(g: Grid, amp: f64) -> GridFunction {
        GridFunction::density(g, |u| 0.2 + 0.6 * u + amp * u * (1.0 - u) * (2.0 * PI * u).sin()).unwrap()
    }

    #[test]
    fn logit_round_trip() {
        for p in [1e-6, 0.2, 0.5, 0.77, 1.0 - 1e-6] {
            assert!((expit(logit(p)) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn phi_of_stationary_profile() {
        let g = Grid::new(200).unwrap();
        let phi = solve_phi(&rho_bar(g), 0.2, 0.8).unwrap();
        assert!((phi.values[0] - 0.25f64.ln()).abs() < 1e-8);
        assert!((phi.values[200] - 4.0f64.ln()).abs() < 1e-8);
        for (i, p) in phi.values.iter().enumerate() {
            assert!((p - logit(0.2 + 0.6 * g.node(i))).abs() < 1e-8);
        }
    }

    #[test]
    fn hj_residual_small_and_negative_control() {
        let g = Grid::new(200).unwrap();
        let gamma = bump(g, 0.2);
        let hj = hamilton_jacobi_residual(&gamma, 0.2, 0.8).unwrap();
        assert!(hj.residual.abs() <= 1e-4, "{hj:?}");
        assert!(hj.dissipation > 1e-3);
        let local: Vec<f64> = gamma
            .values
            .iter()
            .zip(&rho_bar(g).values)
            .map(|(a, b)| logit(*a) - logit(*b))
            .collect();
        let wrong = hamilton_jacobi_terms(&gamma, &local).unwrap();
        assert!(wrong.residual.abs() > 100.0 * hj.residual.abs().max(1e-8), "{wrong:?}");
        let zero = hamilton_jacobi_residual(&rho_bar(g), 0.2, 0.8).unwrap();
        assert!(zero.residual.abs() < 1e-12 && zero.dissipation.abs() < 1e-12);
    }

    #[test]
    fn drift_consistency() {
        let g = Grid::new(200).unwrap();
        let gamma = bump(g, 0.2);
        let d = adjoint_drift_consistency(&gamma, 0.2, 0.8).unwrap();
        assert!(d.residual <= 1e-6, "{}", d.residual);
        assert!(adjoint_drift_consistency(&rho_bar(g), 0.2, 0.8).unwrap().residual < 1e-9);
        let phi = solve_phi(&gamma, 0.2, 0.8).unwrap();
        let local: Vec<f64> = gamma
            .values
            .iter()
            .zip(&rho_bar(g).values)
            .map(|(a, b)| logit(*a) - logit(*b))
            .collect();
        let wrong = adjoint_drift_consistency_with(&gamma, &phi.values, &local).unwrap();
        assert!(wrong.residual > 1e-2);
    }

    #[test]
    fn adjoint_path_properties() {
        let g = Grid::new(100).unwrap();
        let gamma = bump(g, 0.2);
        let adj = adjoint_path(&gamma, 0.2, 0.8, None, 1e-4).unwrap();
        assert_eq!(adj.horizon, 5.0);
        // starts at gamma
        let first = &adj.rho_path.frames[0];
        for (a, b) in first.iter().zip(&gamma.values) {
            assert!((a - b).abs() < 1e-6);
        }
        // optimal path starts near ρ̄ and ends at γ
        let rb = rho_bar(g);
        assert!(adj.optimal_path.first().sup_distance(&rb).unwrap() < 1e-4);
        assert!(adj.optimal_path.last().sup_distance(&gamma).unwrap() < 1e-6);
        // heat-flow contraction
        let mut prev = f64::INFINITY;
        for f in &adj.f_path.frames {
            let d = f.iter().zip(&rb.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= prev + 1e-15);
            prev = d;
        }
        // round trip through the boundary value problem
        for k in [1usize, 40, 400] {
            let rho = GridFunction::new(g, FieldKind::Density, adj.rho_path.frames[k].clone()).unwrap();
            let sol = solve_f_bvp(&rho, 0.2, 0.8).unwrap();
            let dist = sol
                .f
                .values
                .iter()
                .zip(&adj.f_path.frames[k])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dist < 1e-6, "frame {k}: {dist}");
        }
    }

    #[test]
    fn optimal_path_cost_equals_free_energy() {
        let g = Grid::new(100).unwrap();
        let check = verify_quasipotential(&bump(g, 0.15), 0.2, 0.8, None).unwrap();
        assert!(check.relative_gap <= 1e-2, "{check:?}");
        let eq = GridFunction::density(g, |u| 0.5 + 0.2 * (PI * u).sin()).unwrap();
        let check = verify_quasipotential(&eq, 0.5, 0.5, None).unwrap();
        assert!(check.relative_gap <= 1e-2, "{check:?}");
    }

    #[test]
    fn stationary_adjoint_is_constant() {
        let g = Grid::new(64).unwrap();
        let adj = adjoint_path(&rho_bar(g), 0.2, 0.8, Some(0.1), 1e-3).unwrap();
        for f in &adj.rho_path.frames {
            for (a, b) in f.iter().zip(&rho_bar(g).values) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn short_fixed_horizon_is_reported() {
        let g = Grid::new(64).unwrap();
        let r = adjoint_path(&bump(g, 0.2), 0.2, 0.8, Some(0.05), 1e-3);
        assert!(matches!(r, Err(Error::NoConvergence(_))), "{r:?}");
    }

    #[test]
    fn near_equilibrium_resolution_guard() {
        let g = Grid::new(2000).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|u| 0.5 + 1e-9 * u).collect();
        assert!(matches!(
            reconstruct_density(&f, g.h(), 0.5, 0.5 + 1e-9),
            Err(Error::Resolution(_))
        ));
    }
}
