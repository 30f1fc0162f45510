//! Run configuration: a flat `key = value` file split into `[sections]`.
//!
//! Parsing and validation never stop at the first problem; every violation
//! is collected with the line it came from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use latgas_core::models::{builtin_model, DiffusionFamily, FieldFamily, ModelParams, PsiFamily, DEFAULT_RHO_MAX};
use latgas_core::phase::{DEFAULT_CLASSIFY_TOL, DEFAULT_MODES, DEFAULT_Q_POINTS, TRAVELING_WAVE_STARTS};
use latgas_core::{Geometry, TransportModel};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    StationaryCheck,
    FreeEnergy,
    OptimalPath,
    CurrentRate,
    PhaseDiagram,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::StationaryCheck => "stationary-check",
            Command::FreeEnergy => "free-energy",
            Command::OptimalPath => "optimal-path",
            Command::CurrentRate => "current-rate",
            Command::PhaseDiagram => "phase-diagram",
        }
    }

    fn uses_lattice(&self) -> bool {
        matches!(self, Command::Simulate | Command::StationaryCheck)
    }
}

/// `(section, key, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run", "seed", "master seed of every random stream (default 0)"),
    ("run", "replicas", "independent replicas for simulations (default 1)"),
    ("run", "out", "output directory (default ./out)"),
    ("model", "name", "ssep | kmp | zero_range | ginzburg_landau | wasep (default ssep)"),
    ("model", "geometry", "boundary | periodic (default boundary)"),
    ("model", "alpha", "left reservoir density (boundary)"),
    ("model", "beta", "right reservoir density (boundary)"),
    ("model", "mass", "total mass on the ring (periodic)"),
    ("model", "rho_max", "truncation of unbounded density ranges (default 10)"),
    ("model", "psi", "zero_range rate family: linear | power | saturating"),
    ("model", "psi_scale", "zero_range rate scale (default 1)"),
    ("model", "psi_exponent", "exponent of the power family (default 1)"),
    ("model", "field", "external field: zero | constant | sine (default zero)"),
    ("model", "field_value", "field value or sine amplitude"),
    ("model", "gl_diffusion_a", "ginzburg_landau diffusion a + b rho^2, a (default 1)"),
    ("model", "gl_diffusion_b", "ginzburg_landau diffusion a + b rho^2, b (default 0)"),
    ("model", "gl_mobility", "ginzburg_landau constant mobility (default 1)"),
    ("lattice", "n", "lattice size N (default 50)"),
    ("lattice", "t_end", "final macroscopic time (default 1)"),
    ("lattice", "sample_interval", "time between snapshots or batch length (default 0.1)"),
    ("lattice", "burn_in", "discarded initial time for stationary estimates (default 10)"),
    ("lattice", "pairs", "estimate two-point correlations: true | false (default true)"),
    ("lattice", "bins", "cells of the snapshot grid (default N)"),
    ("grid", "cells", "cells of the macroscopic grid (default 200)"),
    ("grid", "dt", "time step of the macroscopic solvers (default 2.5e-5)"),
    ("grid", "horizon", "relaxation horizon of optimal paths (default automatic)"),
    ("profile", "family", "linear | sine | constant | table (default linear)"),
    ("profile", "amplitude", "sine perturbation amplitude (default 0.1)"),
    ("profile", "mode", "sine perturbation mode (default 1)"),
    ("profile", "value", "level of the constant family"),
    ("profile", "file", "CSV profile with columns u,value for the table family"),
    ("current", "family", "hydrodynamic | constant | table (default hydrodynamic)"),
    ("current", "value", "level of the constant family, or shift added to the hydrodynamic current"),
    ("current", "amplitude", "sin(pi u) perturbation added to the hydrodynamic current (default 0)"),
    ("current", "horizon", "duration of generated current paths (default 0.1)"),
    ("current", "dt", "frame spacing of generated current paths (default 1e-4)"),
    ("current", "file", "CSV current path with columns t,u,value for the table family"),
    ("phase", "q_min", "smallest current of the scan (default 0)"),
    ("phase", "q_max", "largest current of the scan (default 10)"),
    ("phase", "q_points", "number of currents scanned (default 25)"),
    ("phase", "modes", "Fourier modes of traveling waves (default 6)"),
    ("phase", "starts", "optimizer starts per traveling-wave search (default 8)"),
    ("phase", "tol", "relative tolerance of the regime classification (default 1e-6)"),
];

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (key = value, grouped by [section]):\n");
    let mut section = "";
    for (s, k, d) in KEYS {
        if *s != section {
            out += &format!("\n  [{s}]\n");
            section = s;
        }
        out += &format!("    {k:<16} {d}\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section.key → value` table.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), Entry>,
}

pub fn parse(text: &str) -> Result<RawConfig, ConfigErrors> {
    let mut raw = RawConfig::default();
    let mut errors = Vec::new();
    let mut section: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            match rest.strip_suffix(']').map(str::trim) {
                Some(name) if KEYS.iter().any(|(s, _, _)| *s == name) => section = Some(name.to_string()),
                Some(name) => {
                    errors.push(ConfigError {
                        line: Some(no),
                        message: format!("unknown section [{name}]"),
                    });
                    section = None;
                }
                None => errors.push(ConfigError {
                    line: Some(no),
                    message: format!("malformed section header '{line}'"),
                }),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(ConfigError {
                line: Some(no),
                message: format!("expected 'key = value', found '{line}'"),
            });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = &section else {
            errors.push(ConfigError {
                line: Some(no),
                message: format!("key '{key}' appears outside a known section"),
            });
            continue;
        };
        if !KEYS.iter().any(|(s, k, _)| s == sec && *k == key) {
            errors.push(ConfigError {
                line: Some(no),
                message: format!("unknown key '{key}' in [{sec}]"),
            });
            continue;
        }
        if value.is_empty() {
            errors.push(ConfigError {
                line: Some(no),
                message: format!("{sec}.{key} has no value"),
            });
            continue;
        }
        let slot = (sec.clone(), key.to_string());
        if let Some(prev) = raw.entries.get(&slot) {
            errors.push(ConfigError {
                line: Some(no),
                message: format!("{sec}.{key} already set on line {}", prev.line),
            });
            continue;
        }
        raw.entries.insert(
            slot,
            Entry {
                value: value.to_string(),
                line: no,
            },
        );
    }
    if errors.is_empty() {
        Ok(raw)
    } else {
        Err(ConfigErrors(errors))
    }
}

/// Values given on the command line; they take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProfileSpec {
    Linear,
    Sine { amplitude: f64, mode: u32 },
    Constant { value: f64 },
    Table { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CurrentSpec {
    Hydrodynamic { shift: f64, amplitude: f64, horizon: f64, dt: f64 },
    Constant { value: f64, horizon: f64, dt: f64 },
    Table { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub name: String,
    pub geometry: Geometry,
    pub rho_max: f64,
    pub psi: Option<PsiFamily>,
    pub field: FieldFamily,
    pub gl_diffusion: DiffusionFamily,
    pub gl_mobility: f64,
}

impl ModelConfig {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            geometry: self.geometry,
            rho_max: self.rho_max,
            psi: self.psi,
            field: self.field,
            gl_diffusion: self.gl_diffusion,
            gl_mobility: self.gl_mobility,
        }
    }

    pub fn build(&self) -> latgas_core::Result<TransportModel> {
        builtin_model(&self.name, &self.params())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeConfig {
    pub n: usize,
    pub t_end: f64,
    pub sample_interval: f64,
    pub burn_in: f64,
    pub pairs: bool,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub cells: usize,
    pub dt: f64,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub q_points: usize,
    pub modes: usize,
    pub starts: usize,
    pub tol: f64,
}

/// Normalised configuration, echoed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub replicas: usize,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub lattice: LatticeConfig,
    pub grid: GridConfig,
    pub profile: ProfileSpec,
    pub current: CurrentSpec,
    pub phase: PhaseConfig,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

struct Reader<'a> {
    raw: &'a RawConfig,
    errors: Vec<ConfigError>,
}

impl<'a> Reader<'a> {
    fn entry(&self, sec: &str, key: &str) -> Option<&'a Entry> {
        self.raw.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn line(&self, sec: &str, key: &str) -> Option<usize> {
        self.entry(sec, key).map(|e| e.line)
    }

    fn fail(&mut self, sec: &str, key: &str, message: impl Into<String>) {
        let line = self.line(sec, key);
        self.errors.push(ConfigError {
            line,
            message: message.into(),
        });
    }

    fn text(&self, sec: &str, key: &str) -> Option<&'a str> {
        self.entry(sec, key).map(|e| e.value.as_str())
    }

    fn parsed<T: std::str::FromStr>(&mut self, sec: &str, key: &str, what: &str) -> Option<T> {
        let e = self.entry(sec, key)?;
        match e.value.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.fail(sec, key, format!("{sec}.{key} must be {what}, got '{}'", e.value));
                None
            }
        }
    }

    fn float(&mut self, sec: &str, key: &str) -> Option<f64> {
        let v = self.parsed::<f64>(sec, key, "a number")?;
        if v.is_finite() {
            Some(v)
        } else {
            self.fail(sec, key, format!("{sec}.{key} must be finite"));
            None
        }
    }

    fn float_or(&mut self, sec: &str, key: &str, default: f64) -> f64 {
        self.float(sec, key).unwrap_or(default)
    }

    fn count_or(&mut self, sec: &str, key: &str, default: usize) -> usize {
        self.parsed(sec, key, "a non-negative integer").unwrap_or(default)
    }

    fn positive(&mut self, sec: &str, key: &str, value: f64) {
        if !(value > 0.0) {
            self.fail(sec, key, format!("{sec}.{key} must be positive, got {value}"));
        }
    }

    fn at_least(&mut self, sec: &str, key: &str, value: usize, min: usize) {
        if value < min {
            self.fail(sec, key, format!("{sec}.{key} must be at least {min}, got {value}"));
        }
    }

    fn choice(&mut self, sec: &str, key: &str, options: &[&str], default: &str) -> String {
        match self.text(sec, key) {
            None => default.to_string(),
            Some(v) if options.contains(&v) => v.to_string(),
            Some(v) => {
                let v = v.to_string();
                self.fail(sec, key, format!("{sec}.{key} must be one of {}, got '{v}'", options.join(" | ")));
                default.to_string()
            }
        }
    }
}

fn density_bounds(name: &str, rho_max: f64) -> (f64, f64, String) {
    match name {
        "ssep" | "wasep" => (0.0, 1.0, "(0,1)".to_string()),
        "ginzburg_landau" => (-rho_max, rho_max, format!("(-{rho_max},{rho_max})")),
        _ => (0.0, rho_max, format!("(0,{rho_max})")),
    }
}

/// Parse and validate a configuration file for `command`.
pub fn load(path: &Path, command: Command, overrides: &Overrides) -> Result<RunConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        }])
    })?;
    let raw = parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate(&raw, command, overrides, base)
}

/// Typed configuration from a parsed table; relative file names are
/// resolved against `base`.
pub fn validate(raw: &RawConfig, command: Command, overrides: &Overrides, base: &Path) -> Result<RunConfig, ConfigErrors> {
    let mut r = Reader {
        raw,
        errors: Vec::new(),
    };
    let mut warnings = Vec::new();

    let file_seed = r.parsed::<u64>("run", "seed", "a non-negative integer");
    let seed = match (overrides.seed, file_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => s,
        (None, None) => {
            if r.entry("run", "seed").is_none() {
                warnings.push("no seed given; using seed 0".to_string());
            }
            0
        }
    };
    let replicas = overrides.replicas.unwrap_or_else(|| r.count_or("run", "replicas", 1));
    if replicas == 0 {
        r.fail("run", "replicas", "replicas must be at least 1");
    }
    let out = overrides
        .out
        .clone()
        .or_else(|| r.text("run", "out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let model = read_model(&mut r, command);
    let lattice = read_lattice(&mut r);
    let grid = read_grid(&mut r);
    let profile = read_profile(&mut r, base);
    let current = read_current(&mut r, base);
    let phase = read_phase(&mut r);

    if command.uses_lattice() {
        if model.name != "ssep" || model.geometry.is_periodic() {
            r.fail("model", "name", format!("{} simulates the boundary-driven ssep only", command.name()));
        }
        if lattice.bins > lattice.n {
            r.fail("lattice", "bins", format!("lattice.bins ({}) must not exceed lattice.n ({})", lattice.bins, lattice.n));
        }
        if command == Command::StationaryCheck && lattice.burn_in >= lattice.t_end {
            r.fail("lattice", "t_end", "lattice.t_end must exceed lattice.burn_in");
        }
    }
    if matches!(command, Command::FreeEnergy | Command::OptimalPath) {
        if model.name != "ssep" || model.geometry.is_periodic() {
            r.fail("model", "name", format!("{} needs the boundary-driven ssep", command.name()));
        }
        if let Geometry::Boundary { alpha, beta } = model.geometry {
            if alpha > beta {
                r.fail("model", "alpha", format!("{} needs alpha <= beta", command.name()));
            } else if command == Command::OptimalPath && alpha == beta {
                r.fail("model", "beta", "optimal-path needs alpha < beta");
            }
        }
    }
    if command == Command::PhaseDiagram && !model.geometry.is_periodic() {
        r.fail("model", "geometry", "phase-diagram needs periodic geometry with model.mass");
    }

    if r.errors.is_empty() {
        if let Err(e) = model.build() {
            r.errors.push(ConfigError {
                line: r.line("model", "name"),
                message: format!("model: {e}"),
            });
        }
    }
    if r.errors.is_empty() {
        Ok(RunConfig {
            command,
            seed,
            replicas,
            out,
            model,
            lattice,
            grid,
            profile,
            current,
            phase,
            warnings,
        })
    } else {
        let mut errors = r.errors;
        errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        Err(ConfigErrors(errors))
    }
}

fn read_model(r: &mut Reader<'_>, command: Command) -> ModelConfig {
    let name = r.choice(
        "model",
        "name",
        &["ssep", "kmp", "zero_range", "ginzburg_landau", "wasep"],
        "ssep",
    );
    let rho_max = r.float_or("model", "rho_max", DEFAULT_RHO_MAX);
    r.positive("model", "rho_max", rho_max);
    let (lo, hi, range) = density_bounds(&name, rho_max);
    let geometry_name = r.choice("model", "geometry", &["boundary", "periodic"], "boundary");
    let inside = |r: &mut Reader<'_>, key: &str| -> f64 {
        match r.float("model", key) {
            Some(v) if v > lo && v < hi => v,
            Some(_) => {
                r.fail("model", key, format!("{key} must lie in {range}"));
                0.5 * (lo + hi)
            }
            None => {
                if r.entry("model", key).is_none() {
                    r.fail("model", key, format!("model.{key} is required for {geometry_name} geometry"));
                }
                0.5 * (lo + hi)
            }
        }
    };
    let geometry = if geometry_name == "periodic" {
        Geometry::Periodic { mass: inside(r, "mass") }
    } else {
        Geometry::Boundary {
            alpha: inside(r, "alpha"),
            beta: inside(r, "beta"),
        }
    };
    if command.uses_lattice() && geometry_name == "periodic" {
        r.fail("model", "geometry", "lattice simulations need boundary geometry");
    }
    let psi = match r.text("model", "psi") {
        None => {
            if name == "zero_range" {
                r.fail("model", "name", "zero_range needs model.psi");
            }
            None
        }
        Some(_) => {
            let family = r.choice("model", "psi", &["linear", "power", "saturating"], "linear");
            let scale = r.float_or("model", "psi_scale", 1.0);
            r.positive("model", "psi_scale", scale);
            Some(match family.as_str() {
                "power" => PsiFamily::Power {
                    scale,
                    exponent: r.float_or("model", "psi_exponent", 1.0),
                },
                "saturating" => PsiFamily::Saturating { scale },
                _ => PsiFamily::Linear { scale },
            })
        }
    };
    let field_name = r.choice("model", "field", &["zero", "constant", "sine"], "zero");
    let field_value = r.float_or("model", "field_value", 0.0);
    let field = match field_name.as_str() {
        "constant" => FieldFamily::Constant { value: field_value },
        "sine" => FieldFamily::Sine {
            amplitude: field_value,
        },
        _ => FieldFamily::Zero,
    };
    let a = r.float_or("model", "gl_diffusion_a", 1.0);
    let b = r.float_or("model", "gl_diffusion_b", 0.0);
    let gl_diffusion = if b == 0.0 {
        DiffusionFamily::Constant { value: a }
    } else {
        DiffusionFamily::Quadratic { a, b }
    };
    let gl_mobility = r.float_or("model", "gl_mobility", 1.0);
    ModelConfig {
        name,
        geometry,
        rho_max,
        psi,
        field,
        gl_diffusion,
        gl_mobility,
    }
}

fn read_lattice(r: &mut Reader<'_>) -> LatticeConfig {
    let n = r.count_or("lattice", "n", 50);
    r.at_least("lattice", "n", n, 3);
    let t_end = r.float_or("lattice", "t_end", 1.0);
    r.positive("lattice", "t_end", t_end);
    let sample_interval = r.float_or("lattice", "sample_interval", 0.1);
    r.positive("lattice", "sample_interval", sample_interval);
    if sample_interval > t_end {
        r.fail("lattice", "sample_interval", "lattice.sample_interval must not exceed lattice.t_end");
    }
    let burn_in = r.float_or("lattice", "burn_in", latgas_core::microsim::DEFAULT_BURN_IN);
    if burn_in < 0.0 {
        r.fail("lattice", "burn_in", "lattice.burn_in must be non-negative");
    }
    let pairs = r.parsed::<bool>("lattice", "pairs", "true or false").unwrap_or(true);
    let bins = r.count_or("lattice", "bins", n);
    r.at_least("lattice", "bins", bins, 1);
    LatticeConfig {
        n,
        t_end,
        sample_interval,
        burn_in,
        pairs,
        bins,
    }
}

fn read_grid(r: &mut Reader<'_>) -> GridConfig {
    let cells = r.count_or("grid", "cells", latgas_core::pde::DEFAULT_CELLS);
    r.at_least("grid", "cells", cells, 16);
    let dt = r.float_or("grid", "dt", latgas_core::pde::DEFAULT_DT);
    r.positive("grid", "dt", dt);
    let horizon = r.float("grid", "horizon");
    if let Some(t) = horizon {
        r.positive("grid", "horizon", t);
    }
    GridConfig { cells, dt, horizon }
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = PathBuf::from(file);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn read_profile(r: &mut Reader<'_>, base: &Path) -> ProfileSpec {
    let family = r.choice("profile", "family", &["linear", "sine", "constant", "table"], "linear");
    match family.as_str() {
        "sine" => {
            let amplitude = r.float_or("profile", "amplitude", 0.1);
            let mode = r.parsed::<u32>("profile", "mode", "a positive integer").unwrap_or(1);
            if mode == 0 {
                r.fail("profile", "mode", "profile.mode must be at least 1");
            }
            ProfileSpec::Sine { amplitude, mode }
        }
        "constant" => match r.float("profile", "value") {
            Some(value) => ProfileSpec::Constant { value },
            None => {
                if r.entry("profile", "value").is_none() {
                    r.fail("profile", "family", "the constant profile needs profile.value");
                }
                ProfileSpec::Linear
            }
        },
        "table" => match r.text("profile", "file") {
            Some(f) => {
                let file = resolve(base, f);
                if !file.is_file() {
                    r.fail("profile", "file", format!("profile file {} does not exist", file.display()));
                }
                ProfileSpec::Table { file }
            }
            None => {
                r.fail("profile", "family", "the table profile needs profile.file");
                ProfileSpec::Linear
            }
        },
        _ => ProfileSpec::Linear,
    }
}

fn read_current(r: &mut Reader<'_>, base: &Path) -> CurrentSpec {
    let family = r.choice("current", "family", &["hydrodynamic", "constant", "table"], "hydrodynamic");
    let horizon = r.float_or("current", "horizon", 0.1);
    r.positive("current", "horizon", horizon);
    let dt = r.float_or("current", "dt", 1e-4);
    r.positive("current", "dt", dt);
    if dt > horizon {
        r.fail("current", "dt", "current.dt must not exceed current.horizon");
    }
    match family.as_str() {
        "constant" => CurrentSpec::Constant {
            value: r.float_or("current", "value", 0.0),
            horizon,
            dt,
        },
        "table" => match r.text("current", "file") {
            Some(f) => {
                let file = resolve(base, f);
                if !file.is_file() {
                    r.fail("current", "file", format!("current file {} does not exist", file.display()));
                }
                CurrentSpec::Table { file }
            }
            None => {
                r.fail("current", "family", "the table current needs current.file");
                CurrentSpec::Constant { value: 0.0, horizon, dt }
            }
        },
        _ => CurrentSpec::Hydrodynamic {
            shift: r.float_or("current", "value", 0.0),
            amplitude: r.float_or("current", "amplitude", 0.0),
            horizon,
            dt,
        },
    }
}

fn read_phase(r: &mut Reader<'_>) -> PhaseConfig {
    let q_min = r.float_or("phase", "q_min", 0.0);
    let q_max = r.float_or("phase", "q_max", 10.0);
    if q_max <= q_min {
        r.fail("phase", "q_max", "phase.q_max must exceed phase.q_min");
    }
    let q_points = r.count_or("phase", "q_points", DEFAULT_Q_POINTS);
    r.at_least("phase", "q_points", q_points, 2);
    let modes = r.count_or("phase", "modes", DEFAULT_MODES);
    r.at_least("phase", "modes", modes, 1);
    let starts = r.count_or("phase", "starts", TRAVELING_WAVE_STARTS);
    r.at_least("phase", "starts", starts, 1);
    let tol = r.float_or("phase", "tol", DEFAULT_CLASSIFY_TOL);
    r.positive("phase", "tol", tol);
    PhaseConfig {
        q_min,
        q_max,
        q_points,
        modes,
        starts,
        tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(text: &str, command: Command) -> Result<RunConfig, ConfigErrors> {
        let raw = parse(text)?;
        validate(&raw, command, &Overrides::default(), Path::new("."))
    }

    #[test]
    fn alpha_out_of_range_is_reported() {
        let err = check("[model]\nalpha = 1.2\nbeta = 0.8\n", Command::FreeEnergy).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].line, Some(2));
        assert!(err.0[0].message.contains("alpha must lie in (0,1)"));
    }

    #[test]
    fn every_violation_is_listed() {
        let text = "[model]\nalpha = 1.2\nbeta = x\n[grid]\ncells = 4\n[bogus]\nfoo = 1\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.0.len(), 2);
        assert_eq!(err.0[0].line, Some(6));
        let raw = parse("[model]\nalpha = 1.2\nbeta = x\n[grid]\ncells = 4\ndt = -1\n").unwrap();
        let err = validate(&raw, Command::FreeEnergy, &Overrides::default(), Path::new(".")).unwrap_err();
        let lines: Vec<_> = err.0.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![Some(2), Some(3), Some(5), Some(6)]);
    }

    #[test]
    fn missing_seed_defaults_with_warning() {
        let cfg = check("[model]\nalpha = 0.2\nbeta = 0.8\n", Command::FreeEnergy).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.warnings.len(), 1);
        let cfg = check("[run]\nseed = 9\n[model]\nalpha = 0.2\nbeta = 0.8\n", Command::FreeEnergy).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.warnings.is_empty());
    }

    #[test]
    fn overrides_win() {
        let raw = parse("[run]\nseed = 9\nreplicas = 2\n[model]\nalpha = 0.2\nbeta = 0.8\n").unwrap();
        let o = Overrides {
            seed: Some(4),
            replicas: Some(7),
            out: Some(PathBuf::from("elsewhere")),
        };
        let cfg = validate(&raw, Command::Simulate, &o, Path::new(".")).unwrap();
        assert_eq!((cfg.seed, cfg.replicas), (4, 7));
        assert_eq!(cfg.out, PathBuf::from("elsewhere"));
    }

    #[test]
    fn duplicate_and_unknown_keys() {
        let err = parse("[run]\nseed = 1\nseed = 2\nspeed = 3\nloose\n").unwrap_err();
        let msgs: Vec<_> = err.0.iter().map(|e| e.to_string()).collect();
        assert_eq!(msgs.len(), 3);
        assert!(msgs[0].starts_with("line 3:") && msgs[0].contains("already set on line 2"));
        assert!(msgs[1].contains("unknown key 'speed'"));
        assert!(msgs[2].contains("expected 'key = value'"));
    }

    #[test]
    fn periodic_needs_mass_and_lattice_needs_ssep() {
        let err = check("[model]\nname = kmp\ngeometry = periodic\n", Command::PhaseDiagram).unwrap_err();
        assert!(err.0[0].message.contains("model.mass is required"));
        let err = check(
            "[model]\nname = kmp\nalpha = 0.5\nbeta = 2\n",
            Command::Simulate,
        )
        .unwrap_err();
        assert!(err.0[0].message.contains("ssep only"));
    }

    #[test]
    fn help_lists_every_key() {
        let help = keys_help();
        for (_, k, _) in KEYS {
            assert!(help.contains(k));
        }
    }
}
