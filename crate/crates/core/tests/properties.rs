use std::f64::consts::PI;

use latgas_core::current_ldf::rate_current;
use latgas_core::density_ldf::{free_energy, free_energy_f0, rate_density};
use latgas_core::io::{read_path_binary, read_path_csv, read_profile_csv, write_path_binary, write_path_csv, write_profile_csv};
use latgas_core::microsim::{simulate, InitialCondition, SimParams};
use latgas_core::pde::hydrodynamic_current;
use latgas_core::phase::{classify, convex_envelope, profile_cost, u_minimize, PhaseClass, ProfileOptions};
use latgas_core::{FieldKind, Geometry, Grid, GridFunction, PathKind, SpaceTimePath, TransportModel};
use proptest::prelude::*;

fn bump(g: Grid, alpha: f64, beta: f64, a1: f64, a2: f64) -> GridFunction {
    GridFunction::density(g, |u| {
        alpha + (beta - alpha) * u + a1 * (PI * u).sin() + a2 * (2.0 * PI * u).sin()
    })
    .unwrap()
}

fn reservoirs() -> impl Strategy<Value = (f64, f64)> {
    (0.2..0.45f64, 0.55..0.8f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn free_energy_dominates_product_functional(
        (alpha, beta) in reservoirs(),
        a1 in -0.15..0.15f64,
        a2 in -0.05..0.05f64,
    ) {
        let g = Grid::new(64).unwrap();
        let gamma = bump(g, alpha, beta, a1, a2);
        let rho_bar = bump(g, alpha, beta, 0.0, 0.0);
        let f = free_energy(&gamma, alpha, beta).unwrap();
        let f0 = free_energy_f0(&gamma, &rho_bar).unwrap();
        prop_assert!(f0 >= 0.0);
        prop_assert!(f >= f0 - 1e-10, "F = {f}, F0 = {f0}");
    }

    #[test]
    fn density_rate_is_nonnegative(
        amp in -0.2..0.2f64,
        freq in 0.5..3.0f64,
    ) {
        let g = Grid::new(32).unwrap();
        let model = TransportModel::ssep(Geometry::Boundary { alpha: 0.3, beta: 0.6 }).unwrap();
        let frames: Vec<Vec<f64>> = (0..=20)
            .map(|k| {
                let t = k as f64 * 0.01;
                g.nodes()
                    .iter()
                    .map(|u| 0.3 + 0.3 * u + amp * (PI * u).sin() * (freq * t).cos())
                    .collect()
            })
            .collect();
        let path = SpaceTimePath::new(g, PathKind::Density, 0.0, 0.01, frames).unwrap();
        let cost = rate_density(&path, &model).unwrap().cost;
        prop_assert!(cost >= 0.0);
    }

    #[test]
    fn current_rate_is_nonnegative(amp in -0.5..0.5f64, shift in -0.3..0.3f64) {
        let g = Grid::new(32).unwrap();
        let model = TransportModel::ssep(Geometry::Boundary { alpha: 0.3, beta: 0.6 }).unwrap();
        let gamma = bump(g, 0.3, 0.6, 0.0, 0.0);
        let base = hydrodynamic_current(&model, &g, &gamma.values);
        let frames: Vec<Vec<f64>> = (0..=10)
            .map(|_| {
                base.iter()
                    .zip(g.faces())
                    .map(|(j, u)| j + shift + amp * (PI * u).sin())
                    .collect()
            })
            .collect();
        let w = SpaceTimePath::new(g, PathKind::Current, 0.0, 0.005, frames).unwrap();
        let eval = rate_current(&w, &gamma, &model).unwrap();
        prop_assert!(eval.cost >= 0.0);
    }

    #[test]
    fn envelope_is_convex_minorant(values in prop::collection::vec(0.0..10.0f64, 3..30)) {
        let x: Vec<f64> = (0..values.len()).map(|i| i as f64 * 0.5).collect();
        let env = convex_envelope(&x, &values).unwrap();
        for (e, y) in env.iter().zip(&values) {
            prop_assert!(e <= &(y + 1e-12));
        }
        for i in 1..env.len() - 1 {
            prop_assert!(env[i] <= 0.5 * (env[i - 1] + env[i + 1]) + 1e-9);
        }
    }

    #[test]
    fn classification_matches_inputs(u in 0.0..5.0f64, gap in 0.0..1.0f64, wave in 0.0..5.0f64) {
        let env = u - gap;
        match classify(u, env, Some(wave), 1e-6) {
            PhaseClass::TravelingWave => prop_assert!(wave < u),
            PhaseClass::Coexistence => prop_assert!(env < u),
            PhaseClass::UniquePhase => prop_assert!(gap <= 1e-6 * u && wave >= u - 1e-6 * u),
        }
    }

    #[test]
    fn path_round_trips(values in prop::collection::vec(0.01..0.99f64, 17 * 3), t0 in -1.0..1.0f64) {
        let g = Grid::new(16).unwrap();
        let frames: Vec<Vec<f64>> = values.chunks(17).map(|c| c.to_vec()).collect();
        let path = SpaceTimePath::new(g, PathKind::Density, t0, 0.125, frames).unwrap();

        let mut bin = Vec::new();
        write_path_binary(&path, &mut bin).unwrap();
        prop_assert_eq!(read_path_binary(bin.as_slice()).unwrap(), path.clone());

        let mut text = Vec::new();
        write_path_csv(&path, &mut text).unwrap();
        let back = read_path_csv(text.as_slice(), PathKind::Density).unwrap();
        prop_assert_eq!(back.len(), path.len());
        for (a, b) in back.frames.iter().zip(&path.frames) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        let profile = path.frame(1);
        let mut text = Vec::new();
        write_profile_csv(&profile, &mut text).unwrap();
        let back = read_profile_csv(text.as_slice(), FieldKind::Density).unwrap();
        for (x, y) in back.values.iter().zip(&profile.values) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn profile_cost_even_in_current_under_symmetry(q in 0.1..2.0f64, a in -0.2..0.2f64) {
        let g = Grid::new(40).unwrap();
        let model = TransportModel::ssep(Geometry::Boundary { alpha: 0.4, beta: 0.4 }).unwrap();
        let rho = GridFunction::density(g, |u| 0.4 + a * (PI * u).sin() * (1.0 - u)).unwrap();
        let mirrored = GridFunction::density(g, |u| 0.4 + a * (PI * u).sin() * u).unwrap();
        let forward = profile_cost(q, &model, &rho).unwrap();
        let backward = profile_cost(-q, &model, &mirrored).unwrap();
        prop_assert!((forward - backward).abs() <= 1e-10 * forward.max(1.0));
    }

    #[test]
    fn minimal_cost_even_in_current(q in 0.1..2.0f64) {
        let model = TransportModel::ssep(Geometry::Boundary { alpha: 0.4, beta: 0.4 }).unwrap();
        let opts = ProfileOptions { cells: 40, ..ProfileOptions::default() };
        let up = u_minimize(q, &model, &opts).unwrap().value;
        let down = u_minimize(-q, &model, &opts).unwrap().value;
        prop_assert!((up - down).abs() <= 1e-7 * up.max(1e-3), "U({q}) = {up}, U(-{q}) = {down}");
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>()) {
        let params = SimParams {
            t_end: 0.05,
            seed,
            n_replicas: 3,
            sample_interval: 0.01,
            ..SimParams::new(20, 0.2, 0.7)
        };
        let a = simulate(&params, &InitialCondition::Linear).unwrap();
        let b = simulate(&params, &InitialCondition::Linear).unwrap();
        prop_assert_eq!(a, b);
    }
}
