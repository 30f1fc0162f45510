use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use anyhow::{Context, Result};
use latgas_core::current_ldf::rate_current;
use latgas_core::density_ldf::{free_energy, free_energy_f0, rate_density, solve_f_bvp};
use latgas_core::io::{
    read_path_csv, read_profile_csv, write_correlation_csv, write_json, write_path_csv, write_phase_csv,
    write_profile_csv, write_site_stats_csv, write_snapshots_ndjson,
};
use latgas_core::microsim::{estimate_stationary_with, simulate, InitialCondition, SimParams, StationaryOptions};
use latgas_core::pde::{current_of_path, solve_hydro_strided};
use latgas_core::phase::{current_grid, phase_report, PhaseOptions, ProfileOptions, WaveOptions};
use latgas_core::quasipotential::{adjoint_path, verify_quasipotential};
use latgas_core::{FieldKind, Geometry, Grid, GridFunction, PathKind, SpaceTimePath, TransportModel};
use serde::Serialize;
use serde_json::json;

use crate::config::{Command, CurrentSpec, ProfileSpec, RunConfig};

/// Paths written to CSV are thinned to at most this many frames.
pub const MAX_CSV_FRAMES: usize = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub description: String,
}

/// Output directory that remembers every file it hands out.
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<OutputRecord>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn create(&mut self, name: &str, description: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        self.files.push(OutputRecord {
            file: name.to_string(),
            description: description.to_string(),
        });
        Ok(BufWriter::new(file))
    }
}

fn reservoirs(model: &TransportModel) -> (f64, f64) {
    match model.geometry {
        Geometry::Boundary { alpha, beta } => (alpha, beta),
        Geometry::Periodic { mass } => (mass, mass),
    }
}

/// Initial profile described by the `[profile]` section.
pub fn build_profile(cfg: &RunConfig, model: &TransportModel) -> Result<GridFunction> {
    let grid = Grid::new(cfg.grid.cells)?;
    let periodic = model.geometry.is_periodic();
    let (alpha, beta) = reservoirs(model);
    let base = move |u: f64| alpha + (beta - alpha) * u;
    let profile = match &cfg.profile {
        ProfileSpec::Linear => GridFunction::density(grid, base)?,
        ProfileSpec::Sine { amplitude, mode } => {
            let k = *mode as f64;
            if periodic {
                GridFunction::density(grid, |u| base(u) + amplitude * (2.0 * PI * k * u).sin())?
            } else {
                GridFunction::density(grid, |u| base(u) + amplitude * (PI * k * u).sin())?
            }
        }
        ProfileSpec::Constant { value } => GridFunction::constant(grid, FieldKind::Density, *value)?,
        ProfileSpec::Table { file } => {
            let f = File::open(file).with_context(|| format!("cannot open {}", file.display()))?;
            read_profile_csv(BufReader::new(f), FieldKind::Density)?
        }
    };
    if let Some((i, v)) = profile.values.iter().enumerate().find(|(_, v)| !model.in_range(**v)) {
        return Err(latgas_core::Error::OutOfRange(format!(
            "profile value {v} at node {i} is outside the range of the {} model",
            model.name()
        ))
        .into());
    }
    Ok(profile)
}

fn sim_params(cfg: &RunConfig, model: &TransportModel) -> SimParams {
    let (alpha, beta) = reservoirs(model);
    SimParams {
        n: cfg.lattice.n,
        alpha,
        beta,
        t_end: cfg.lattice.t_end,
        seed: cfg.seed,
        n_replicas: cfg.replicas,
        sample_interval: cfg.lattice.sample_interval,
    }
}

fn thinned(path: &SpaceTimePath) -> Result<(SpaceTimePath, usize)> {
    let stride = path.len().div_ceil(MAX_CSV_FRAMES).max(1);
    Ok((path.subsample(stride)?, stride))
}

/// Run `cfg.command`, writing its artifacts into `out`.
pub fn run(cfg: &RunConfig, model: &TransportModel, gamma: &GridFunction, out: &mut Outputs) -> Result<serde_json::Value> {
    match cfg.command {
        Command::Simulate => simulate_cmd(cfg, model, gamma, out),
        Command::StationaryCheck => stationary_cmd(cfg, model, out),
        Command::FreeEnergy => free_energy_cmd(cfg, model, gamma, out),
        Command::OptimalPath => optimal_path_cmd(cfg, model, gamma, out),
        Command::CurrentRate => current_rate_cmd(cfg, model, gamma, out),
        Command::PhaseDiagram => phase_cmd(cfg, model, out),
    }
}

fn simulate_cmd(cfg: &RunConfig, model: &TransportModel, gamma: &GridFunction, out: &mut Outputs) -> Result<serde_json::Value> {
    let params = sim_params(cfg, model);
    let initial = match cfg.profile {
        ProfileSpec::Linear => InitialCondition::Linear,
        _ => InitialCondition::Bernoulli(gamma.clone()),
    };
    let trajectories = simulate(&params, &initial)?;
    let bins = Grid::new(cfg.lattice.bins)?;
    for (r, traj) in trajectories.iter().enumerate() {
        let w = out.create(
            &format!("replica_{r:04}.ndjson"),
            "snapshots: time, binned density, binned integrated current",
        )?;
        write_snapshots_ndjson(traj, bins, w)?;
    }
    let particles: Vec<usize> = trajectories
        .iter()
        .map(|t| t.last().map_or(0, |s| s.state.particles()))
        .collect();
    let summary = json!({
        "replicas": trajectories.len(),
        "snapshots_per_replica": trajectories.first().map_or(0, |t| t.len()),
        "final_particles": particles,
    });
    write_json(&summary, out.create("summary.json", "run summary")?)?;
    Ok(summary)
}

fn stationary_cmd(cfg: &RunConfig, model: &TransportModel, out: &mut Outputs) -> Result<serde_json::Value> {
    let params = sim_params(cfg, model);
    let stats = estimate_stationary_with(
        &params,
        &StationaryOptions {
            burn_in: cfg.lattice.burn_in,
            track_pairs: cfg.lattice.pairs,
        },
    )?;
    write_site_stats_csv(&stats, out.create("site_stats.csv", "site,mean,stderr of the occupation")?)?;
    if stats.correlations.is_some() {
        write_correlation_csv(&stats, out.create("correlations.csv", "x,y,corr,stderr of two-point functions")?)?;
    }
    let mut max_abs = 0.0f64;
    let mut max_z = 0.0f64;
    for x in 1..=stats.n - 1 {
        let e = stats.site_mean(x);
        let exact = stats.exact_density(x);
        max_abs = max_abs.max((e.mean - exact).abs());
        max_z = max_z.max(e.z_score(exact).abs());
    }
    let summary = json!({
        "n": stats.n,
        "alpha": stats.alpha,
        "beta": stats.beta,
        "max_abs_error": max_abs,
        "max_z": max_z,
        "mean_current": stats.mean_current,
        "batches": stats.batches,
        "batch_length": stats.batch_length,
        "measured_time": stats.measured_time,
    });
    write_json(&summary, out.create("summary.json", "comparison with the exact linear profile")?)?;
    Ok(summary)
}

fn free_energy_cmd(cfg: &RunConfig, model: &TransportModel, gamma: &GridFunction, out: &mut Outputs) -> Result<serde_json::Value> {
    let (alpha, beta) = reservoirs(model);
    let rho_bar = GridFunction::density(gamma.grid, |u| alpha + (beta - alpha) * u)?;
    let f0 = free_energy_f0(gamma, &rho_bar)?;
    let f = free_energy(gamma, alpha, beta)?;
    if alpha < beta {
        let sol = solve_f_bvp(gamma, alpha, beta)?;
        write_profile_csv(&sol.f, out.create("f_profile.csv", "u,value of the auxiliary increasing profile")?)?;
    }
    let check = verify_quasipotential(gamma, alpha, beta, cfg.grid.horizon)?;
    let summary = json!({
        "F0": f0,
        "F": f,
        "dynamical_cost": check.cost,
        "gap_to_dynamical": check.relative_gap,
        "horizon": check.horizon,
    });
    write_json(&summary, out.create("free_energy.json", "free energies and the optimal-path cost")?)?;
    Ok(summary)
}

fn optimal_path_cmd(cfg: &RunConfig, model: &TransportModel, gamma: &GridFunction, out: &mut Outputs) -> Result<serde_json::Value> {
    let (alpha, beta) = reservoirs(model);
    let adj = adjoint_path(gamma, alpha, beta, cfg.grid.horizon, cfg.grid.dt)?;
    let cost = rate_density(&adj.optimal_path, model)?.cost;
    let (path, stride) = thinned(&adj.optimal_path)?;
    write_path_csv(&path, out.create("optimal_path.csv", "t,u,value of the optimal fluctuation path")?)?;
    write_profile_csv(&adj.phi, out.create("phi.csv", "u,value of the adjoint potential")?)?;
    let summary = json!({
        "cost": cost,
        "free_energy": adj.free_energy.value,
        "relative_gap": (cost - adj.free_energy.value).abs() / adj.free_energy.value.max(1e-12),
        "horizon": adj.horizon,
        "relaxation_gap": adj.relaxation_gap,
        "frames": adj.optimal_path.len(),
        "csv_frame_stride": stride,
    });
    write_json(&summary, out.create("summary.json", "cost of the optimal path")?)?;
    Ok(summary)
}

fn current_path(cfg: &RunConfig, model: &TransportModel, gamma: &GridFunction) -> Result<SpaceTimePath> {
    let grid = gamma.grid;
    Ok(match &cfg.current {
        CurrentSpec::Hydrodynamic {
            shift,
            amplitude,
            horizon,
            dt,
        } => {
            let stride = ((dt / cfg.grid.dt).round() as usize).max(1);
            let rho = solve_hydro_strided(model, gamma, *horizon, dt / stride as f64, stride)?;
            let mut w = current_of_path(model, &rho)?;
            let faces = grid.faces();
            for frame in &mut w.frames {
                for (v, u) in frame.iter_mut().zip(&faces) {
                    *v += shift + amplitude * (PI * u).sin();
                }
            }
            w
        }
        CurrentSpec::Constant { value, horizon, dt } => {
            let steps = (horizon / dt).round().max(1.0) as usize;
            let frames = vec![vec![*value; grid.cells()]; steps + 1];
            SpaceTimePath::new(grid, PathKind::Current, 0.0, horizon / steps as f64, frames)?
        }
        CurrentSpec::Table { file } => {
            let f = File::open(file).with_context(|| format!("cannot open {}", file.display()))?;
            read_path_csv(BufReader::new(f), PathKind::Current)?
        }
    })
}

fn current_rate_cmd(cfg: &RunConfig, model: &TransportModel, gamma: &GridFunction, out: &mut Outputs) -> Result<serde_json::Value> {
    let w = current_path(cfg, model, gamma)?;
    let eval = rate_current(&w, gamma, model)?;
    let (density, stride) = thinned(&eval.density)?;
    write_path_csv(&density, out.create("density_path.csv", "t,u,value of the density induced by the current")?)?;
    let mut integrand = csv::Writer::from_writer(out.create("integrand.csv", "t,cost density per frame")?);
    integrand.write_record(["t", "integrand"])?;
    for (k, v) in eval.integrand.iter().enumerate() {
        integrand.serialize((eval.current.time(k), v))?;
    }
    integrand.flush()?;
    let summary = json!({
        "cost": if eval.is_infinite() { None } else { Some(eval.cost) },
        "infinite": eval.is_infinite(),
        "horizon": w.duration(),
        "frames": w.len(),
        "csv_frame_stride": stride,
    });
    write_json(&summary, out.create("current_rate.json", "cost of the current path")?)?;
    Ok(summary)
}

fn phase_cmd(cfg: &RunConfig, model: &TransportModel, out: &mut Outputs) -> Result<serde_json::Value> {
    let Geometry::Periodic { mass } = model.geometry else {
        anyhow::bail!("phase-diagram needs periodic geometry");
    };
    let p = &cfg.phase;
    let opts = PhaseOptions {
        profile: ProfileOptions {
            cells: cfg.grid.cells,
            seed: cfg.seed,
            ..ProfileOptions::default()
        },
        wave: WaveOptions {
            cells: cfg.grid.cells,
            modes: p.modes,
            starts: p.starts,
            seed: cfg.seed,
            ..WaveOptions::default()
        },
        tol: p.tol,
        ..PhaseOptions::default()
    };
    let q = current_grid(p.q_min, p.q_max, p.q_points);
    let report = phase_report(model, mass, &q, &opts)?;
    write_phase_csv(&report, out.create("phase.csv", "q,U,U_env,TW,class per scanned current")?)?;
    write_json(&report, out.create("phase.json", "full phase report")?)?;
    Ok(json!({
        "threshold": report.threshold,
        "mode_doubling": report.mode_doubling,
        "classes": report.class.iter().map(|c| c.label()).collect::<Vec<_>>(),
    }))
}
