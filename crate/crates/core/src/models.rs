//! Macroscopic transport models.
//!
//! A lattice gas enters the macroscopic theory only through its diffusion
//! coefficient `D(ρ)`, its mobility `χ(ρ)`, an optional external field
//! `E(u)`, the admissible density range and the geometry (reservoirs at both
//! ends, or a ring with fixed mass). The hydrodynamic current is
//!
//! ```text
//! J(ρ) = −D(ρ) ∇ρ + χ(ρ) E
//! ```
//!
//! All builtin families register closed-form first and second derivatives,
//! so [`check_conditions`] evaluates the structural conditions exactly up to
//! rounding.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default truncation of unbounded density ranges.
pub const DEFAULT_RHO_MAX: f64 = 10.0;

/// Default tolerance on condition margins.
pub const CONDITION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    /// Reservoirs at `u = 0` (density `alpha`) and `u = 1` (density `beta`).
    Boundary { alpha: f64, beta: f64 },
    /// Ring `[0, 1)` carrying total mass `mass`.
    Periodic { mass: f64 },
}

impl Geometry {
    pub fn is_periodic(&self) -> bool {
        matches!(self, Geometry::Periodic { .. })
    }
}

/// Strictly increasing `Ψ` families for the zero-range model, where
/// `D = Ψ'` and `χ = Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PsiFamily {
    /// `Ψ(ρ) = c ρ` (independent walkers when `c = 1`).
    Linear { scale: f64 },
    /// `Ψ(ρ) = c ρ^p`.
    Power { scale: f64, exponent: f64 },
    /// `Ψ(ρ) = c ρ / (1 + ρ)`.
    Saturating { scale: f64 },
}

impl PsiFamily {
    fn eval(&self, rho: f64) -> [f64; 3] {
        match *self {
            PsiFamily::Linear { scale } => [scale * rho, scale, 0.0],
            PsiFamily::Power { scale, exponent: p } => {
                if rho <= 0.0 {
                    // one-sided limits at the endpoint
                    let d1 = if p == 1.0 { scale } else if p > 1.0 { 0.0 } else { f64::INFINITY };
                    return [0.0, d1, 0.0];
                }
                [
                    scale * rho.powf(p),
                    scale * p * rho.powf(p - 1.0),
                    scale * p * (p - 1.0) * rho.powf(p - 2.0),
                ]
            }
            PsiFamily::Saturating { scale } => {
                let s = 1.0 + rho;
                [scale * rho / s, scale / (s * s), -2.0 * scale / (s * s * s)]
            }
        }
    }

    /// Third derivative, needed for `D''` of the zero-range model.
    fn third(&self, rho: f64) -> f64 {
        match *self {
            PsiFamily::Linear { .. } => 0.0,
            PsiFamily::Power { scale, exponent: p } => {
                if rho <= 0.0 {
                    0.0
                } else {
                    scale * p * (p - 1.0) * (p - 2.0) * rho.powf(p - 3.0)
                }
            }
            PsiFamily::Saturating { scale } => 6.0 * scale / (1.0 + rho).powi(4),
        }
    }
}

/// Diffusion coefficient families for the Ginzburg–Landau model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DiffusionFamily {
    Constant { value: f64 },
    /// `D(ρ) = a + b ρ²` with `a > 0`, `b ≥ 0`.
    Quadratic { a: f64, b: f64 },
}

/// External field `E(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FieldFamily {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `E(u) = amplitude · sin(2πu)`.
    Sine { amplitude: f64 },
}

impl FieldFamily {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            FieldFamily::Zero => 0.0,
            FieldFamily::Constant { value } => value,
            FieldFamily::Sine { amplitude } => amplitude * (2.0 * std::f64::consts::PI * u).sin(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            FieldFamily::Zero => true,
            FieldFamily::Constant { value } => value == 0.0,
            FieldFamily::Sine { amplitude } => amplitude == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    Ssep,
    Kmp,
    ZeroRange { psi: PsiFamily },
    GinzburgLandau { diffusion: DiffusionFamily, mobility: f64 },
    Wasep,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ssep => "ssep",
            ModelKind::Kmp => "kmp",
            ModelKind::ZeroRange { .. } => "zero_range",
            ModelKind::GinzburgLandau { .. } => "ginzburg_landau",
            ModelKind::Wasep => "wasep",
        }
    }
}

/// Parameters for [`builtin_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub geometry: Geometry,
    /// Upper truncation of unbounded ranges (KMP, zero range) and half-width
    /// of the Ginzburg–Landau range.
    pub rho_max: f64,
    pub psi: Option<PsiFamily>,
    pub field: FieldFamily,
    pub gl_diffusion: DiffusionFamily,
    pub gl_mobility: f64,
}

impl ModelParams {
    pub fn new(geometry: Geometry) -> Self {
        Self {
            geometry,
            rho_max: DEFAULT_RHO_MAX,
            psi: None,
            field: FieldFamily::Zero,
            gl_diffusion: DiffusionFamily::Constant { value: 1.0 },
            gl_mobility: 1.0,
        }
    }

    pub fn with_psi(mut self, psi: PsiFamily) -> Self {
        self.psi = Some(psi);
        self
    }

    pub fn with_field(mut self, field: FieldFamily) -> Self {
        self.field = field;
        self
    }

    pub fn with_rho_max(mut self, rho_max: f64) -> Self {
        self.rho_max = rho_max;
        self
    }
}

/// Macroscopic description of a lattice gas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportModel {
    pub kind: ModelKind,
    pub field: FieldFamily,
    /// Closed density range `[min, max]`.
    pub range: (f64, f64),
    pub geometry: Geometry,
}

impl TransportModel {
    pub fn ssep(geometry: Geometry) -> Result<Self> {
        builtin_model("ssep", &ModelParams::new(geometry))
    }

    pub fn kmp(geometry: Geometry) -> Result<Self> {
        builtin_model("kmp", &ModelParams::new(geometry))
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn with_geometry(&self, geometry: Geometry) -> Result<Self> {
        let mut model = self.clone();
        model.geometry = geometry;
        model.validate_geometry()?;
        Ok(model)
    }

    /// `D(ρ)`.
    pub fn diffusion(&self, rho: f64) -> f64 {
        self.diffusion_derivs(rho)[0]
    }

    /// `[D, D', D'']` at `rho`.
    pub fn diffusion_derivs(&self, rho: f64) -> [f64; 3] {
        match self.kind {
            ModelKind::Ssep | ModelKind::Wasep => [0.5, 0.0, 0.0],
            ModelKind::Kmp => [1.0, 0.0, 0.0],
            ModelKind::ZeroRange { psi } => {
                let [_, d1, d2] = psi.eval(rho);
                [d1, d2, psi.third(rho)]
            }
            ModelKind::GinzburgLandau { diffusion, .. } => match diffusion {
                DiffusionFamily::Constant { value } => [value, 0.0, 0.0],
                DiffusionFamily::Quadratic { a, b } => [a + b * rho * rho, 2.0 * b * rho, 2.0 * b],
            },
        }
    }

    /// `χ(ρ)`.
    pub fn mobility(&self, rho: f64) -> f64 {
        self.mobility_derivs(rho)[0]
    }

    /// `[χ, χ', χ'']` at `rho`.
    pub fn mobility_derivs(&self, rho: f64) -> [f64; 3] {
        match self.kind {
            ModelKind::Ssep | ModelKind::Wasep => [rho * (1.0 - rho), 1.0 - 2.0 * rho, -2.0],
            ModelKind::Kmp => [rho * rho, 2.0 * rho, 2.0],
            ModelKind::ZeroRange { psi } => psi.eval(rho),
            ModelKind::GinzburgLandau { mobility, .. } => [mobility, 0.0, 0.0],
        }
    }

    /// `E(u)`.
    pub fn field_at(&self, u: f64) -> f64 {
        self.field.eval(u)
    }

    /// Entropy variable `R` with `R' = 1/χ`, when a closed form exists.
    pub fn entropy_variable(&self, rho: f64) -> Option<f64> {
        match self.kind {
            ModelKind::Ssep | ModelKind::Wasep => Some((rho / (1.0 - rho)).ln()),
            ModelKind::Kmp => Some(-1.0 / rho),
            ModelKind::ZeroRange { psi: PsiFamily::Linear { scale } } => Some(rho.ln() / scale),
            ModelKind::GinzburgLandau { mobility, .. } => Some(rho / mobility),
            _ => None,
        }
    }

    /// Mobility on the face between two neighbouring nodes.
    ///
    /// Uses the entropy-consistent mean `(b − a) / (R(b) − R(a))` when the
    /// entropy variable has a closed form, so that the discrete identity
    /// `χ_f ∇_h R(ρ) = ∇_h ρ` holds exactly; the midpoint value otherwise.
    pub fn face_mobility(&self, a: f64, b: f64) -> f64 {
        let mid = self.mobility(0.5 * (a + b));
        let scale = a.abs().max(b.abs()).max(1e-300);
        if (b - a).abs() <= 1e-4 * scale {
            // second-order expansion of the entropy mean around the midpoint
            let [chi, d1, d2] = self.mobility_derivs(0.5 * (a + b));
            let delta = b - a;
            if chi > 0.0 {
                return chi + delta * delta * (d2 / 24.0 - d1 * d1 / (12.0 * chi));
            }
            return mid;
        }
        match (self.entropy_variable(a), self.entropy_variable(b)) {
            (Some(ra), Some(rb)) if ra.is_finite() && rb.is_finite() && rb != ra => {
                let value = (b - a) / (rb - ra);
                if value.is_finite() && value > 0.0 {
                    value
                } else {
                    mid
                }
            }
            _ => mid,
        }
    }

    /// `true` if `rho` lies in the closed density range.
    pub fn in_range(&self, rho: f64) -> bool {
        rho.is_finite() && rho >= self.range.0 && rho <= self.range.1
    }

    /// `true` if `rho` lies strictly inside the density range.
    pub fn in_open_range(&self, rho: f64) -> bool {
        rho.is_finite() && rho > self.range.0 && rho < self.range.1
    }

    /// Boundary densities, if the geometry is boundary driven.
    pub fn reservoirs(&self) -> Option<(f64, f64)> {
        match self.geometry {
            Geometry::Boundary { alpha, beta } => Some((alpha, beta)),
            Geometry::Periodic { .. } => None,
        }
    }

    fn validate_geometry(&self) -> Result<()> {
        match self.geometry {
            Geometry::Boundary { alpha, beta } => {
                if !self.in_open_range(alpha) || !self.in_open_range(beta) {
                    return Err(invalid(format!(
                        "boundary densities ({alpha}, {beta}) must lie strictly inside the density range [{}, {}]",
                        self.range.0, self.range.1
                    )));
                }
            }
            Geometry::Periodic { mass } => {
                if !self.in_open_range(mass) {
                    return Err(invalid(format!(
                        "mass {mass} must lie strictly inside the density range [{}, {}]",
                        self.range.0, self.range.1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Build one of the registered models by name.
///
/// Recognised names: `ssep`, `kmp`, `zero_range` (requires `params.psi`),
/// `ginzburg_landau` and `wasep` (requires a non-zero `params.field`).
pub fn builtin_model(name: &str, params: &ModelParams) -> Result<TransportModel> {
    let rho_max = params.rho_max;
    if !(rho_max.is_finite() && rho_max > 0.0) {
        return Err(invalid(format!("rho_max must be positive and finite, got {rho_max}")));
    }
    let (kind, range, field) = match name {
        "ssep" => (ModelKind::Ssep, (0.0, 1.0), params.field),
        "kmp" => (ModelKind::Kmp, (0.0, rho_max), params.field),
        "wasep" => {
            if params.field.is_zero() {
                return Err(invalid("wasep requires a non-zero field amplitude E"));
            }
            (ModelKind::Wasep, (0.0, 1.0), params.field)
        }
        "zero_range" => {
            let psi = params
                .psi
                .ok_or_else(|| invalid("zero_range requires a Ψ family"))?;
            check_psi_increasing(&psi, rho_max)?;
            (ModelKind::ZeroRange { psi }, (0.0, rho_max), params.field)
        }
        "ginzburg_landau" => {
            if !(params.gl_mobility > 0.0 && params.gl_mobility.is_finite()) {
                return Err(invalid("ginzburg_landau mobility must be a positive constant"));
            }
            match params.gl_diffusion {
                DiffusionFamily::Constant { value } if value > 0.0 => {}
                DiffusionFamily::Quadratic { a, b } if a > 0.0 && b >= 0.0 => {}
                other => return Err(invalid(format!("diffusion {other:?} is not strictly positive"))),
            }
            (
                ModelKind::GinzburgLandau {
                    diffusion: params.gl_diffusion,
                    mobility: params.gl_mobility,
                },
                (-rho_max, rho_max),
                params.field,
            )
        }
        other => return Err(invalid(format!("unknown model '{other}'"))),
    };
    let model = TransportModel {
        kind,
        field,
        range,
        geometry: params.geometry,
    };
    model.validate_geometry()?;
    Ok(model)
}

fn check_psi_increasing(psi: &PsiFamily, rho_max: f64) -> Result<()> {
    let n = 1000;
    let mut prev = psi.eval(0.0)[0];
    for i in 1..=n {
        let rho = rho_max * i as f64 / n as f64;
        let value = psi.eval(rho)[0];
        if !value.is_finite() || value <= prev {
            return Err(invalid(format!(
                "Ψ {psi:?} is not strictly increasing on [0, {rho_max}] (fails near ρ = {rho:.4})"
            )));
        }
        prev = value;
    }
    Ok(())
}

/// Outcome of [`check_conditions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `D χ'' ≤ D' χ'` everywhere on the grid (up to tolerance).
    pub gradient_condition: bool,
    /// `min (D'χ' − Dχ'')` over the grid.
    pub gradient_margin: f64,
    /// `1/χ` convex on the grid (up to tolerance).
    pub inv_chi_convex: bool,
    /// Minimum over interior grid points of the normalised second difference of `1/χ`.
    pub inv_chi_margin: f64,
    /// Grid densities where `χ'' > tolerance`.
    pub chi_convex_at: Vec<f64>,
    pub grid: Vec<f64>,
    pub tolerance: f64,
}

/// Evaluate the structural conditions on `D` and `χ` over a density grid.
///
/// The grid must be strictly increasing and lie strictly inside the density
/// range. The second difference of `1/χ` uses the three-point formula for
/// non-uniform spacing, so it approximates `(1/χ)''`.
pub fn check_conditions(model: &TransportModel, grid: &[f64]) -> Result<ConditionReport> {
    if grid.len() < 3 {
        return Err(invalid("condition grid needs at least three densities"));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(invalid("condition grid must be strictly increasing"));
        }
    }
    for &rho in grid {
        if !model.in_open_range(rho) {
            return Err(invalid(format!(
                "grid density {rho} outside the open range ({}, {})",
                model.range.0, model.range.1
            )));
        }
    }
    let tol = CONDITION_TOLERANCE;
    let mut gradient_margin = f64::INFINITY;
    let mut chi_convex_at = Vec::new();
    let mut inv_chi = Vec::with_capacity(grid.len());
    for &rho in grid {
        let [d, d1, _] = model.diffusion_derivs(rho);
        let [chi, c1, c2] = model.mobility_derivs(rho);
        let values = [d, d1, chi, c1, c2];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite coefficient at ρ = {rho}")));
        }
        gradient_margin = gradient_margin.min(d1 * c1 - d * c2);
        if c2 > tol {
            chi_convex_at.push(rho);
        }
        inv_chi.push(1.0 / chi);
    }
    let mut inv_chi_margin = f64::INFINITY;
    for i in 1..grid.len() - 1 {
        let (h0, h1) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
        let second = 2.0
            * (h0 * inv_chi[i + 1] - (h0 + h1) * inv_chi[i] + h1 * inv_chi[i - 1])
            / (h0 * h1 * (h0 + h1));
        inv_chi_margin = inv_chi_margin.min(second);
    }
    Ok(ConditionReport {
        gradient_condition: gradient_margin >= -tol,
        gradient_margin,
        inv_chi_convex: inv_chi_margin >= -tol,
        inv_chi_margin,
        chi_convex_at,
        grid: grid.to_vec(),
        tolerance: tol,
    })
}

/// Uniform density grid on `[lo, hi]` with `n` points.
pub fn density_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ssep() -> TransportModel {
        TransportModel::ssep(Geometry::Boundary { alpha: 0.2, beta: 0.8 }).unwrap()
    }

    #[test]
    fn ssep_coefficients() {
        let m = ssep();
        assert_eq!(m.diffusion(0.3), 0.5);
        assert!((m.mobility(0.3) - 0.21).abs() < 1e-15);
        assert_eq!(m.range, (0.0, 1.0));
    }

    #[test]
    fn kmp_coefficients() {
        let m = TransportModel::kmp(Geometry::Periodic { mass: 1.0 }).unwrap();
        assert_eq!(m.diffusion(2.0), 1.0);
        assert_eq!(m.mobility(2.0), 4.0);
        assert_eq!(m.range, (0.0, DEFAULT_RHO_MAX));
    }

    #[test]
    fn zero_range_identity_psi() {
        let params = ModelParams::new(Geometry::Periodic { mass: 1.0 })
            .with_psi(PsiFamily::Linear { scale: 1.0 });
        let m = builtin_model("zero_range", &params).unwrap();
        for rho in [0.1, 1.0, 3.7] {
            assert_eq!(m.diffusion(rho), 1.0);
            assert_eq!(m.mobility(rho), rho);
        }
    }

    #[test]
    fn errors() {
        let g = Geometry::Periodic { mass: 0.5 };
        assert!(builtin_model("nope", &ModelParams::new(g)).is_err());
        assert!(builtin_model("zero_range", &ModelParams::new(g)).is_err());
        assert!(builtin_model("wasep", &ModelParams::new(g)).is_err());
        let bad_psi = ModelParams::new(g).with_psi(PsiFamily::Power { scale: 1.0, exponent: -1.0 });
        assert!(builtin_model("zero_range", &bad_psi).is_err());
        let bad_bc = ModelParams::new(Geometry::Boundary { alpha: 0.2, beta: 1.2 });
        assert!(builtin_model("ssep", &bad_bc).is_err());
        let wasep = ModelParams::new(g).with_field(FieldFamily::Constant { value: 1.0 });
        assert_eq!(builtin_model("wasep", &wasep).unwrap().field_at(0.3), 1.0);
    }

    #[test]
    fn ssep_conditions() {
        let report = check_conditions(&ssep(), &density_grid(0.05, 0.95, 91)).unwrap();
        assert!(report.gradient_condition && report.inv_chi_convex);
        assert!((report.gradient_margin - 1.0).abs() < 1e-12);
        assert!(report.inv_chi_margin > 0.0);
        assert!(report.chi_convex_at.is_empty());
    }

    #[test]
    fn kmp_conditions() {
        let m = TransportModel::kmp(Geometry::Periodic { mass: 1.0 }).unwrap();
        let grid = density_grid(0.1, 5.0, 50);
        let report = check_conditions(&m, &grid).unwrap();
        assert!(report.inv_chi_convex);
        assert_eq!(report.chi_convex_at.len(), grid.len());
    }

    #[test]
    fn zero_range_gradient_equality() {
        for psi in [
            PsiFamily::Linear { scale: 1.0 },
            PsiFamily::Power { scale: 2.0, exponent: 1.5 },
            PsiFamily::Saturating { scale: 1.0 },
        ] {
            let params = ModelParams::new(Geometry::Periodic { mass: 1.0 }).with_psi(psi);
            let m = builtin_model("zero_range", &params).unwrap();
            let report = check_conditions(&m, &density_grid(0.2, 4.0, 40)).unwrap();
            assert_eq!(report.gradient_margin, 0.0, "{psi:?}");
            assert!(report.gradient_condition);
        }
    }

    #[test]
    fn condition_grid_outside_range() {
        assert!(check_conditions(&ssep(), &[0.0, 0.5, 0.9]).is_err());
        assert!(check_conditions(&ssep(), &[0.1, 0.5, 1.1]).is_err());
    }

    #[test]
    fn face_mobility_limits() {
        let m = ssep();
        // exact discrete identity χ_f ΔR = Δρ
        let (a, b) = (0.31, 0.37);
        let chi_f = m.face_mobility(a, b);
        let dr = m.entropy_variable(b).unwrap() - m.entropy_variable(a).unwrap();
        assert!((chi_f * dr - (b - a)).abs() < 1e-15);
        // continuity across the small-difference switch
        let x = 0.4;
        for d in [0.9e-4, 1.1e-4] {
            let (a, b) = (x, x * (1.0 + d));
            let exact = (b - a) / (m.entropy_variable(b).unwrap() - m.entropy_variable(a).unwrap());
            let exact_hp = {
                // logit difference via log1p keeps the oracle accurate
                let dr = ((b - a) / a).ln_1p() - (-(b - a) / (1.0 - a)).ln_1p();
                (b - a) / dr
            };
            assert!((exact - exact_hp).abs() < 1e-10);
            assert!((m.face_mobility(a, b) - exact_hp).abs() < 1e-13);
        }
        assert_eq!(m.face_mobility(x, x), m.mobility(x));
    }

    #[test]
    fn value_semantics() {
        let a = ssep();
        let b = ssep();
        assert_eq!(a, b);
        assert_eq!(a.mobility(0.42), b.mobility(0.42));
    }

    proptest! {
        #[test]
        fn builtin_coefficients_finite_and_signed(u in 0.0001f64..0.9999) {
            let g = Geometry::Periodic { mass: 0.5 };
            let models = vec![
                builtin_model("ssep", &ModelParams::new(g)).unwrap(),
                builtin_model("kmp", &ModelParams::new(g)).unwrap(),
                builtin_model("zero_range", &ModelParams::new(g).with_psi(PsiFamily::Saturating { scale: 1.0 })).unwrap(),
                builtin_model("ginzburg_landau", &ModelParams::new(g)).unwrap(),
                builtin_model("wasep", &ModelParams::new(g).with_field(FieldFamily::Constant { value: 1.0 })).unwrap(),
            ];
            for m in &models {
                let rho = m.range.0 + u * (m.range.1 - m.range.0);
                let d = m.diffusion_derivs(rho);
                let c = m.mobility_derivs(rho);
                prop_assert!(d.iter().chain(c.iter()).all(|v| v.is_finite()));
                prop_assert!(d[0] > 0.0);
                prop_assert!(c[0] > 0.0);
            }
        }
    }
}
