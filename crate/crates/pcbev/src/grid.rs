//! BEV grid geometry: Cartesian and Polar partitioning of the ground plane,
//! point-to-cell assignment and continuous sample coordinates.
//!
//! All binning uses half-open intervals [low, high): a point exactly on the
//! upper bound is out of range, a point exactly on an interior boundary
//! belongs to the higher-index cell. Polar azimuth bins partition [-pi, pi)
//! and wrap circularly.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub width: usize,
    pub height: usize,
}

impl CartesianGridSpec {
    /// 512x512 over [-51.2, 51.2]^2, i.e. 0.2 m cells.
    pub fn default_bev() -> Self {
        CartesianGridSpec {
            x_min: -51.2,
            x_max: 51.2,
            y_min: -51.2,
            y_max: 51.2,
            width: 512,
            height: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::Config("cartesian grid bounds must be increasing".into()));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::Config("cartesian grid needs at least one cell".into()));
        }
        Ok(())
    }

    pub fn cell_w(&self) -> f64 {
        (self.x_max - self.x_min) / self.width as f64
    }

    pub fn cell_h(&self) -> f64 {
        (self.y_max - self.y_min) / self.height as f64
    }

    /// World coordinates of a cell center; row indexes y, col indexes x.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.cell_w(),
            self.y_min + (row as f64 + 0.5) * self.cell_h(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarGridSpec {
    pub rho_min: f64,
    pub rho_max: f64,
    pub n_rho: usize,
    pub n_phi: usize,
    /// Swap the atan2 argument order when computing azimuth (phi = atan2(x, y)
    /// instead of the default atan2(y, x)).
    #[serde(default)]
    pub swap_atan2_args: bool,
}

impl PolarGridSpec {
    /// rho in [0, 51.2] over 480 radial bins, 360 azimuth bins.
    pub fn default_bev() -> Self {
        PolarGridSpec {
            rho_min: 0.0,
            rho_max: 51.2,
            n_rho: 480,
            n_phi: 360,
            swap_atan2_args: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min >= 0.0 && self.rho_max > self.rho_min) {
            return Err(Error::Config("polar grid needs 0 <= rho_min < rho_max".into()));
        }
        if self.n_rho < 1 || self.n_phi < 1 {
            return Err(Error::Config("polar grid needs at least one bin".into()));
        }
        Ok(())
    }

    pub fn rho_step(&self) -> f64 {
        (self.rho_max - self.rho_min) / self.n_rho as f64
    }

    pub fn phi_step(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n_phi as f64
    }

    pub fn phi_of(&self, x: f64, y: f64) -> f64 {
        if self.swap_atan2_args {
            x.atan2(y)
        } else {
            y.atan2(x)
        }
    }

    /// (rho, phi) of a cell center; row indexes rho, col indexes phi.
    pub fn cell_center_polar(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.rho_min + (row as f64 + 0.5) * self.rho_step(),
            -std::f64::consts::PI + (col as f64 + 0.5) * self.phi_step(),
        )
    }

    /// World (x, y) of a cell center, honoring the atan2 convention.
    pub fn cell_center_world(&self, row: usize, col: usize) -> (f64, f64) {
        let (rho, phi) = self.cell_center_polar(row, col);
        if self.swap_atan2_args {
            (rho * phi.sin(), rho * phi.cos())
        } else {
            (rho * phi.cos(), rho * phi.sin())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Cartesian(CartesianGridSpec),
    Polar(PolarGridSpec),
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GridSpec::Cartesian(g) => g.validate(),
            GridSpec::Polar(g) => g.validate(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            GridSpec::Cartesian(g) => (g.height, g.width),
            GridSpec::Polar(g) => (g.n_rho, g.n_phi),
        }
    }

    /// World (x, y) of the center of cell (row, col).
    pub fn cell_center_world(&self, row: usize, col: usize) -> (f64, f64) {
        match self {
            GridSpec::Cartesian(g) => g.cell_center(row, col),
            GridSpec::Polar(g) => g.cell_center_world(row, col),
        }
    }
}

/// Per-point grid cell assignment. Invalid entries keep (row, col) = (0, 0)
/// and must be skipped by consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAssignment {
    pub rows: Vec<u32>,
    pub cols: Vec<u32>,
    pub valid: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

impl CellAssignment {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Locate a point in a Cartesian grid. Returns None when out of range.
pub fn cartesian_cell(g: &CartesianGridSpec, x: f64, y: f64) -> Option<(u32, u32)> {
    let col = ((x - g.x_min) / g.cell_w()).floor();
    let row = ((y - g.y_min) / g.cell_h()).floor();
    if col >= 0.0 && col < g.width as f64 && row >= 0.0 && row < g.height as f64 {
        Some((row as u32, col as u32))
    } else {
        None
    }
}

/// Locate a point in a Polar grid. Returns None when rho is out of range;
/// phi always lands in a bin (the [-pi, pi) seam wraps).
pub fn polar_cell(g: &PolarGridSpec, x: f64, y: f64) -> Option<(u32, u32)> {
    let rho = x.hypot(y);
    let rrow = ((rho - g.rho_min) / g.rho_step()).floor();
    if rrow < 0.0 || rrow >= g.n_rho as f64 {
        return None;
    }
    let phi = g.phi_of(x, y);
    let mut col = ((phi + std::f64::consts::PI) / g.phi_step()).floor() as i64;
    // atan2 returns +pi for the negative x axis; that seam belongs to bin 0
    if col >= g.n_phi as i64 {
        col -= g.n_phi as i64;
    }
    if col < 0 {
        col += g.n_phi as i64;
    }
    Some((rrow as u32, col as u32))
}

pub fn assign_cells(cloud: &PointCloud, grid: &GridSpec) -> CellAssignment {
    let (height, width) = grid.dims();
    let n = cloud.len();
    let mut rows = vec![0u32; n];
    let mut cols = vec![0u32; n];
    let mut valid = vec![false; n];
    for (k, p) in cloud.points.iter().enumerate() {
        let cell = match grid {
            GridSpec::Cartesian(g) => cartesian_cell(g, p.x as f64, p.y as f64),
            GridSpec::Polar(g) => polar_cell(g, p.x as f64, p.y as f64),
        };
        if let Some((r, c)) = cell {
            rows[k] = r;
            cols[k] = c;
            valid[k] = true;
        }
    }
    CellAssignment {
        rows,
        cols,
        valid,
        height,
        width,
    }
}

/// Per-point continuous (row, col) coordinates in a grid's index space: the
/// center of cell (r, c) maps to exactly (r, c). Validity matches the
/// half-open binning of `assign_cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSampleCoords {
    pub rows: Vec<f32>,
    pub cols: Vec<f32>,
    pub valid: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

impl ContinuousSampleCoords {
    pub fn len(&self) -> usize {
        self.valid.len()
    }
}

pub fn continuous_coords(cloud: &PointCloud, grid: &GridSpec) -> ContinuousSampleCoords {
    let (height, width) = grid.dims();
    let n = cloud.len();
    let mut rows = vec![0.0f32; n];
    let mut cols = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for (k, p) in cloud.points.iter().enumerate() {
        let (x, y) = (p.x as f64, p.y as f64);
        match grid {
            GridSpec::Cartesian(g) => {
                if cartesian_cell(g, x, y).is_some() {
                    rows[k] = ((y - g.y_min) / g.cell_h() - 0.5) as f32;
                    cols[k] = ((x - g.x_min) / g.cell_w() - 0.5) as f32;
                    valid[k] = true;
                }
            }
            GridSpec::Polar(g) => {
                if polar_cell(g, x, y).is_some() {
                    let rho = x.hypot(y);
                    let phi = g.phi_of(x, y);
                    rows[k] = ((rho - g.rho_min) / g.rho_step() - 0.5) as f32;
                    cols[k] = ((phi + std::f64::consts::PI) / g.phi_step() - 0.5) as f32;
                    valid[k] = true;
                }
            }
        }
    }
    ContinuousSampleCoords {
        rows,
        cols,
        valid,
        height,
        width,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageStats {
    pub occupied_cells: usize,
    pub occupancy_fraction: f64,
}

/// Count distinct occupied cells; this is the extent sparse point-based
/// fusion touches, versus the full H*W a dense remap fusion writes.
pub fn coverage_stats(assignment: &CellAssignment) -> CoverageStats {
    let mut occupied = vec![false; assignment.height * assignment.width];
    for k in 0..assignment.len() {
        if assignment.valid[k] {
            occupied[assignment.rows[k] as usize * assignment.width + assignment.cols[k] as usize] =
                true;
        }
    }
    let occupied_cells = occupied.iter().filter(|o| **o).count();
    CoverageStats {
        occupied_cells,
        occupancy_fraction: occupied_cells as f64 / (assignment.height * assignment.width) as f64,
    }
}
