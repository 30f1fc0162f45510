//! Uniform staggered grids on `[0, 1]`.
//!
//! Densities and potentials live on the `M + 1` nodes `u_i = i/M`; currents
//! live on the `M` faces (cell centres) `u_{i+1/2}`. The discrete gradient
//! maps nodes to faces and the discrete divergence maps faces back to
//! interior nodes, so the finite-volume balance of every cell is exact.
//!
//! For periodic problems the node `u_M` duplicates `u_0`; solvers keep the
//! two values equal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of cells accepted by the PDE solvers.
pub const MIN_SOLVER_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    cells: usize,
}

impl Grid {
    /// A grid with `cells ≥ 1` uniform cells.
    pub fn new(cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn nodes_len(&self) -> usize {
        self.cells + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.cells as f64
    }

    pub fn face(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.cells as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.cells).map(|i| self.node(i)).collect()
    }

    pub fn faces(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.face(i)).collect()
    }

    /// Trapezoid weights for node-located values.
    pub fn node_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.cells {
            0.5 * self.h()
        } else {
            self.h()
        }
    }

    pub(crate) fn require_solver_resolution(&self) -> Result<()> {
        if self.cells < MIN_SOLVER_CELLS {
            return Err(Error::InvalidParameter(format!(
                "PDE solvers need at least {MIN_SOLVER_CELLS} cells, got {}",
                self.cells
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Density profile on the nodes.
    Density,
    /// Any other node-located profile (`F`, `φ`, `H`, binned measures).
    Node,
    /// Current on the faces.
    Current,
}

impl FieldKind {
    pub fn len_for(&self, grid: &Grid) -> usize {
        match self {
            FieldKind::Density | FieldKind::Node => grid.nodes_len(),
            FieldKind::Current => grid.cells(),
        }
    }

    pub fn position(&self, grid: &Grid, i: usize) -> f64 {
        match self {
            FieldKind::Density | FieldKind::Node => grid.node(i),
            FieldKind::Current => grid.face(i),
        }
    }
}

/// A scalar profile on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, kind: FieldKind, values: Vec<f64>) -> Result<Self> {
        let expected = kind.len_for(&grid);
        if values.len() != expected {
            return Err(Error::GridMismatch(format!(
                "{kind:?} profile on {} cells needs {expected} values, got {}",
                grid.cells(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at index {i}")));
        }
        Ok(Self { grid, kind, values })
    }

    /// Sample `f` at the grid positions of `kind`.
    pub fn from_fn(grid: Grid, kind: FieldKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..kind.len_for(&grid)).map(|i| f(kind.position(&grid, i))).collect();
        Self::new(grid, kind, values)
    }

    pub fn density(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, FieldKind::Density, f)
    }

    pub fn constant(grid: Grid, kind: FieldKind, value: f64) -> Result<Self> {
        Self::from_fn(grid, kind, |_| value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.kind.position(&self.grid, i)).collect()
    }

    /// `∫₀¹ f du`: trapezoid rule on nodes, midpoint rule on faces.
    pub fn integral(&self) -> f64 {
        match self.kind {
            FieldKind::Current => self.values.iter().sum::<f64>() * self.grid.h(),
            _ => trapezoid(&self.values, self.grid.h()),
        }
    }

    /// `⟨f, g⟩` with the same quadrature as [`GridFunction::integral`].
    pub fn pair(&self, g: impl Fn(f64) -> f64) -> f64 {
        match self.kind {
            FieldKind::Current => {
                (0..self.len()).map(|i| self.values[i] * g(self.grid.face(i))).sum::<f64>() * self.grid.h()
            }
            _ => (0..self.len())
                .map(|i| self.grid.node_weight(i) * self.values[i] * g(self.grid.node(i)))
                .sum(),
        }
    }

    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.kind != other.kind {
            return Err(Error::GridMismatch(format!(
                "{:?} on {} cells vs {:?} on {} cells",
                self.kind,
                self.grid.cells(),
                other.kind,
                other.grid.cells()
            )));
        }
        Ok(())
    }

    /// Linear interpolation at `u ∈ [0, 1]`.
    pub fn interpolate(&self, u: f64) -> f64 {
        let positions_len = self.len();
        let h = self.grid.h();
        let (offset, last) = match self.kind {
            FieldKind::Current => (0.5, positions_len - 1),
            _ => (0.0, positions_len - 1),
        };
        let s = (u / h - offset).clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return self.values[0];
        }
        let frac = s - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Trapezoid rule for node values with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Density,
    Current,
    /// Node-located auxiliary fields such as `H_t` or `F_t`.
    Potential,
}

impl PathKind {
    pub fn field_kind(&self) -> FieldKind {
        match self {
            PathKind::Density => FieldKind::Density,
            PathKind::Current => FieldKind::Current,
            PathKind::Potential => FieldKind::Node,
        }
    }
}

/// Time-indexed sequence of profiles with a uniform time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePath {
    pub grid: Grid,
    pub kind: PathKind,
    pub t0: f64,
    pub dt: f64,
    pub frames: Vec<Vec<f64>>,
}

impl SpaceTimePath {
    pub fn new(grid: Grid, kind: PathKind, t0: f64, dt: f64, frames: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("path time step must be positive, got {dt}")));
        }
        if frames.is_empty() {
            return Err(Error::InvalidParameter("path needs at least one frame".into()));
        }
        let expected = kind.field_kind().len_for(&grid);
        if let Some(k) = frames.iter().position(|f| f.len() != expected) {
            return Err(Error::GridMismatch(format!(
                "frame {k} has {} values, expected {expected}",
                frames[k].len()
            )));
        }
        Ok(Self { grid, kind, t0, dt, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    pub fn frame(&self, k: usize) -> GridFunction {
        GridFunction {
            grid: self.grid,
            kind: self.kind.field_kind(),
            values: self.frames[k].clone(),
        }
    }

    pub fn first(&self) -> GridFunction {
        self.frame(0)
    }

    pub fn last(&self) -> GridFunction {
        self.frame(self.len() - 1)
    }

    /// Same frames in reverse order, re-timed to start at `t0`.
    pub fn reversed(&self) -> SpaceTimePath {
        let mut frames = self.frames.clone();
        frames.reverse();
        SpaceTimePath { frames, ..self.clone() }
    }

    /// Keep every `stride`-th frame (and always the last one if it falls on the stride).
    pub fn subsample(&self, stride: usize) -> Result<SpaceTimePath> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be positive".into()));
        }
        let frames = self.frames.iter().step_by(stride).cloned().collect();
        SpaceTimePath::new(self.grid, self.kind, self.t0, self.dt * stride as f64, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrals() {
        let g = Grid::new(10).unwrap();
        let f = GridFunction::density(g, |u| u).unwrap();
        assert!((f.integral() - 0.5).abs() < 1e-15);
        let c = GridFunction::from_fn(g, FieldKind::Current, |u| u).unwrap();
        assert!((c.integral() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let g = Grid::new(16).unwrap();
        assert!(GridFunction::new(g, FieldKind::Density, vec![0.0; 16]).is_err());
        assert!(GridFunction::new(g, FieldKind::Current, vec![0.0; 16]).is_ok());
        assert!(GridFunction::new(g, FieldKind::Node, vec![f64::NAN; 17]).is_err());
        assert!(Grid::new(8).unwrap().require_solver_resolution().is_err());
    }

    #[test]
    fn interpolation() {
        let g = Grid::new(4).unwrap();
        let f = GridFunction::density(g, |u| 2.0 * u + 1.0).unwrap();
        assert!((f.interpolate(0.3) - 1.6).abs() < 1e-14);
        assert_eq!(f.interpolate(1.0), 3.0);
    }

    #[test]
    fn path_reverse_and_subsample() {
        let g = Grid::new(2).unwrap();
        let frames = (0..5).map(|k| vec![k as f64; 3]).collect();
        let p = SpaceTimePath::new(g, PathKind::Density, 0.0, 0.1, frames).unwrap();
        assert_eq!(p.reversed().frames[0][0], 4.0);
        let s = p.subsample(2).unwrap();
        assert_eq!(s.len(), 3);
        assert!((s.dt - 0.2).abs() < 1e-15);
    }
}
