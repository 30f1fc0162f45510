//! Large deviations of the empirical current.
//!
//! A current path `w_t` (instantaneous, on the faces) together with the
//! initial profile determines the density through `∂ρ + ∇w = 0`; the cost
//! is `½∫dt ∫du (w − J(ρ))²/χ(ρ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density_ldf::MIN_MOBILITY;
use crate::error::{invalid, Error, Result};
use crate::grid::{trapezoid, GridFunction, PathKind, SpaceTimePath};
use crate::microsim::{pair_current, InitialCondition, SimParams, Simulator};
use crate::models::TransportModel;
use crate::pde::{hydrodynamic_current, solve_continuity, solve_heat_strided, DEFAULT_DT};
use crate::stats::Estimate;
use crate::INFINITE_COST;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentRateEvaluation {
    pub current: SpaceTimePath,
    /// Density path induced by the current.
    pub density: SpaceTimePath,
    pub cost: f64,
    /// `½ ∫ (w_t − J(ρ_t))²/χ(ρ_t) du` per frame; empty when the cost is infinite.
    pub integrand: Vec<f64>,
}

impl CurrentRateEvaluation {
    pub fn is_infinite(&self) -> bool {
        crate::is_infinite_cost(self.cost)
    }

    /// Integrated current `W_t = ∫₀ᵗ w_s ds` (trapezoid in time).
    pub fn integrated_current(&self) -> SpaceTimePath {
        let w = &self.current;
        let mut acc = vec![0.0; w.frames[0].len()];
        let mut frames = vec![acc.clone()];
        for pair in w.frames.windows(2) {
            for (a, (x, y)) in acc.iter_mut().zip(pair[0].iter().zip(&pair[1])) {
                *a += 0.5 * w.dt * (x + y);
            }
            frames.push(acc.clone());
        }
        SpaceTimePath { frames, ..w.clone() }
    }
}

/// Cost of the current path `w` started from `gamma`.
pub fn rate_current(w: &SpaceTimePath, gamma: &GridFunction, model: &TransportModel) -> Result<CurrentRateEvaluation> {
    if w.kind != PathKind::Current {
        return Err(invalid("rate_current needs a current path"));
    }
    if w.grid != gamma.grid {
        return Err(Error::GridMismatch(format!(
            "current on {} cells vs profile on {} cells",
            w.grid.cells(),
            gamma.grid.cells()
        )));
    }
    let induced = solve_continuity(model, gamma, w)?;
    let density = induced.path;
    if !induced.admissible {
        return Ok(CurrentRateEvaluation {
            current: w.clone(),
            density,
            cost: INFINITE_COST,
            integrand: Vec::new(),
        });
    }
    let grid = w.grid;
    let h = grid.h();
    let slices: Vec<Option<f64>> = (0..w.len())
        .into_par_iter()
        .map(|k| {
            let rho = &density.frames[k];
            let j = hydrodynamic_current(model, &grid, rho);
            let mut e = 0.0;
            for f in 0..grid.cells() {
                let d = w.frames[k][f] - j[f];
                if d == 0.0 {
                    continue;
                }
                let chi = model.face_mobility(rho[f], rho[f + 1]);
                if !(chi >= MIN_MOBILITY) {
                    return None;
                }
                e += 0.5 * h * d * d / chi;
            }
            Some(e)
        })
        .collect();
    if slices.iter().any(Option::is_none) {
        return Ok(CurrentRateEvaluation {
            current: w.clone(),
            density,
            cost: INFINITE_COST,
            integrand: Vec::new(),
        });
    }
    let integrand: Vec<f64> = slices.into_iter().flatten().collect();
    let cost = if integrand.len() > 1 { trapezoid(&integrand, w.dt) } else { 0.0 };
    Ok(CurrentRateEvaluation {
        current: w.clone(),
        density,
        cost,
        integrand,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentLlnReport {
    pub n: usize,
    pub replicas: usize,
    pub horizon: f64,
    /// Replica mean of `⟨W^N_T, F⟩`.
    pub simulated: Estimate,
    /// `−½ ∫₀ᵀ ∫ F ∇ρ_t du dt` for the heat solution `ρ`.
    pub predicted: f64,
    pub discrepancy: f64,
    /// `discrepancy ≤ 3` standard errors.
    pub within_band: bool,
}

/// `−½ ∫₀ᵀ ∫ F ∇ρ_t du dt` along the heat flow from `gamma`.
pub fn predicted_current_pairing(
    gamma: &GridFunction,
    alpha: f64,
    beta: f64,
    horizon: f64,
    test_fn: impl Fn(f64) -> f64,
    dt: f64,
) -> Result<f64> {
    let grid = gamma.grid;
    let stride = ((1e-3 / dt).round() as usize).max(1);
    let heat = solve_heat_strided(gamma, alpha, beta, horizon, dt, stride)?;
    let weights: Vec<f64> = grid.faces().iter().map(|u| test_fn(*u)).collect();
    let per_frame: Vec<f64> = heat
        .frames
        .iter()
        .map(|rho| {
            (0..grid.cells())
                .map(|f| -0.5 * weights[f] * (rho[f + 1] - rho[f]))
                .sum::<f64>()
        })
        .collect();
    Ok(trapezoid(&per_frame, heat.dt))
}

/// Law of large numbers for the integrated current: `⟨W^N_T, F⟩` over
/// replicas started from Bernoulli(`gamma`) against the heat-equation value.
pub fn current_lln_check(
    params: &SimParams,
    gamma: &GridFunction,
    test_fn: impl Fn(f64) -> f64 + Sync,
) -> Result<CurrentLlnReport> {
    params.validate()?;
    let initial = InitialCondition::Bernoulli(gamma.clone());
    let samples: Vec<f64> = (0..params.n_replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut sim = Simulator::new(params, &initial, r)?;
            sim.advance_to(params.t_end);
            Ok(pair_current(&sim.counters(), &test_fn))
        })
        .collect::<Result<_>>()?;
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let simulated = Estimate {
        mean,
        stderr: (var / k).sqrt(),
    };
    let predicted = predicted_current_pairing(gamma, params.alpha, params.beta, params.t_end, &test_fn, DEFAULT_DT)?;
    let discrepancy = (mean - predicted).abs();
    Ok(CurrentLlnReport {
        n: params.n,
        replicas: params.n_replicas,
        horizon: params.t_end,
        simulated,
        predicted,
        discrepancy,
        within_band: simulated.within(predicted, 3.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density_ldf::rate_density;
    use crate::grid::{FieldKind, Grid};
    use crate::models::Geometry;
    use crate::pde::{current_of_path, solve_hydro_strided};
    use std::f64::consts::PI;

    fn ssep_boundary() -> TransportModel {
        TransportModel::ssep(Geometry::Boundary { alpha: 0.2, beta: 0.8 }).unwrap()
    }

    fn sine(g: Grid) -> GridFunction {
        GridFunction::density(g, |u| 0.2 + 0.6 * u + 0.15 * (PI * u).sin()).unwrap()
    }

    #[test]
    fn hydrodynamic_current_is_free() {
        let g = Grid::new(100).unwrap();
        let model = ssep_boundary();
        let rho = solve_hydro_strided(&model, &sine(g), 0.2, 1e-4, 10).unwrap();
        let w = current_of_path(&model, &rho).unwrap();
        let eval = rate_current(&w, &sine(g), &model).unwrap();
        assert!(eval.cost <= 1e-6, "{}", eval.cost);
    }

    #[test]
    fn constant_current_on_ring() {
        let g = Grid::new(50).unwrap();
        let (m, q, t) = (0.3, 0.4, 0.5);
        let model = TransportModel::ssep(Geometry::Periodic { mass: m }).unwrap();
        let gamma = GridFunction::constant(g, FieldKind::Density, m).unwrap();
        let w = SpaceTimePath::new(g, PathKind::Current, 0.0, 0.01, vec![vec![q; 50]; 51]).unwrap();
        let eval = rate_current(&w, &gamma, &model).unwrap();
        let expected = t * q * q / (2.0 * m * (1.0 - m));
        assert!((eval.cost - expected).abs() < 1e-12 * expected);
        let big = eval.integrated_current();
        assert!((big.frames[50][7] - q * t).abs() < 1e-12);
    }

    #[test]
    fn leaving_the_range_is_infinite() {
        let g = Grid::new(20).unwrap();
        let model = ssep_boundary();
        let gamma = GridFunction::density(g, |u| 0.2 + 0.6 * u).unwrap();
        let frames = vec![(0..20).map(|f| if f < 10 { 20.0 } else { 0.0 }).collect(); 11];
        let w = SpaceTimePath::new(g, PathKind::Current, 0.0, 0.01, frames).unwrap();
        assert!(rate_current(&w, &gamma, &model).unwrap().is_infinite());
        let other = Grid::new(21).unwrap();
        let w = SpaceTimePath::new(other, PathKind::Current, 0.0, 0.01, vec![vec![0.0; 21]; 2]).unwrap();
        assert!(matches!(rate_current(&w, &gamma, &model), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn contraction_of_density_cost() {
        let g = Grid::new(100).unwrap();
        let model = ssep_boundary();
        let frames: Vec<Vec<f64>> = (0..=200)
            .map(|k| {
                let t = k as f64 * 0.005;
                g.nodes()
                    .iter()
                    .map(|u| 0.2 + 0.6 * u + 0.1 * (PI * t).sin() * (PI * u).sin())
                    .collect()
            })
            .collect();
        let lam = SpaceTimePath::new(g, PathKind::Density, 0.0, 0.005, frames).unwrap();
        let dens = rate_density(&lam, &model).unwrap();
        let w = dens.optimal_current(&model).unwrap().unwrap();
        let cur = rate_current(&w, &lam.first(), &model).unwrap();
        assert!(dens.cost > 1e-3);
        assert!((cur.cost - dens.cost).abs() <= 1e-3 * dens.cost, "{} vs {}", cur.cost, dens.cost);
        let drift = cur
            .density
            .frames
            .iter()
            .zip(&lam.frames)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(drift < 1e-4, "{drift}");
    }

    #[test]
    fn quadratic_in_perturbation() {
        let g = Grid::new(100).unwrap();
        let model = ssep_boundary();
        let rho = solve_hydro_strided(&model, &sine(g), 0.2, 1e-4, 10).unwrap();
        let base = current_of_path(&model, &rho).unwrap();
        let cost = |eps: f64| {
            let frames = base
                .frames
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let t = base.time(k);
                    f.iter()
                        .zip(g.faces())
                        .map(|(w, u)| w + eps * (2.0 * PI * u).cos() * (1.0 + t))
                        .collect()
                })
                .collect();
            let w = SpaceTimePath::new(g, PathKind::Current, 0.0, base.dt, frames).unwrap();
            rate_current(&w, &sine(g), &model).unwrap().cost
        };
        let c0 = cost(0.0);
        let sym = |eps: f64| 0.5 * (cost(eps) + cost(-eps)) - c0;
        let ratio = sym(2e-2) / sym(1e-2);
        assert!((ratio - 4.0).abs() < 0.08, "{ratio}");
    }

    #[test]
    fn stationary_mean_current() {
        let g = Grid::new(100).unwrap();
        let gamma = GridFunction::density(g, |u| 0.2 + 0.6 * u).unwrap();
        let p = predicted_current_pairing(&gamma, 0.2, 0.8, 1.0, |_| 1.0, 1e-4).unwrap();
        assert!((p + 0.3).abs() < 1e-12);
        let params = SimParams {
            t_end: 1.0,
            n_replicas: 16,
            seed: 5,
            ..SimParams::new(40, 0.2, 0.8)
        };
        let report = current_lln_check(&params, &gamma, |_| 1.0).unwrap();
        assert!(report.within_band, "{report:?}");
    }
}
