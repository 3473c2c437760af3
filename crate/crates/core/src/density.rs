//! Kernel density surfaces of accident locations on a regular planar grid.
//!
//! The surface is evaluated at cell centers: `f(g) = (1/n) * sum_i K_h(g - p_i)`
//! with an isotropic 2D kernel of bandwidth `h` in meters. Kernels are
//! truncated at `4h` (gaussian; relative mass error < 4e-4) or `h`
//! (epanechnikov, its natural support). No boundary correction is applied:
//! mass leaking off-grid is reported, not renormalized, so grids from two
//! periods stay comparable.

pub use crate::geo::{project, unproject, PlanarPoint};

use crate::error::{Error, Result};

/// Grid geometry: a `ny` x `nx` lattice of square cells anchored at a WGS84
/// origin (the grid's lower-left corner, planar `(0, 0)`). Row 0 is the
/// southernmost row.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub cell_size_m: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub const DEFAULT_MAX_CELLS: usize = 4_000_000;

    pub fn new(
        origin_lat: f64,
        origin_lon: f64,
        width_m: f64,
        height_m: f64,
        cell_size_m: f64,
    ) -> Result<Self> {
        Self::with_cell_limit(
            origin_lat,
            origin_lon,
            width_m,
            height_m,
            cell_size_m,
            Self::DEFAULT_MAX_CELLS,
        )
    }

    pub fn with_cell_limit(
        origin_lat: f64,
        origin_lon: f64,
        width_m: f64,
        height_m: f64,
        cell_size_m: f64,
        max_cells: usize,
    ) -> Result<Self> {
        if !(cell_size_m > 0.0) {
            return Err(Error::Argument(format!(
                "cell size must be positive, got {cell_size_m}"
            )));
        }
        if !(width_m > 0.0) || !(height_m > 0.0) {
            return Err(Error::Argument(format!(
                "grid extent must be positive, got {width_m} x {height_m}"
            )));
        }
        let nx = (width_m / cell_size_m).ceil() as usize;
        let ny = (height_m / cell_size_m).ceil() as usize;
        let cells = nx.saturating_mul(ny);
        if cells > max_cells {
            return Err(Error::GridTooLarge {
                cells,
                max: max_cells,
            });
        }
        Ok(Self {
            origin_lat,
            origin_lon,
            width_m,
            height_m,
            cell_size_m,
            nx,
            ny,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area_m2(&self) -> f64 {
        self.cell_size_m * self.cell_size_m
    }

    /// Planar coordinates of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> PlanarPoint {
        PlanarPoint {
            x: (col as f64 + 0.5) * self.cell_size_m,
            y: (row as f64 + 0.5) * self.cell_size_m,
        }
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nx + col
    }

    /// Projects a WGS84 coordinate into this grid's planar frame.
    pub fn project(&self, lat: f64, lon: f64) -> Result<PlanarPoint> {
        project(lat, lon, self.origin_lat, self.origin_lon)
    }

    /// Back-projects a planar point to `(lat, lon)`.
    pub fn unproject(&self, p: PlanarPoint) -> (f64, f64) {
        unproject(p, self.origin_lat, self.origin_lon)
    }
}

/// Derives a grid covering the given WGS84 coordinates with `margin_m` of
/// padding on every side. The grid origin (its lower-left corner and the
/// projection anchor) is placed margin-southwest of the coordinate bounding
/// box, so projecting the same coordinates with [`GridSpec::project`] lands
/// them at least `margin_m` inside the grid.
pub fn grid_spec_covering(
    coords: &[(f64, f64)],
    cell_size_m: f64,
    margin_m: f64,
) -> Result<GridSpec> {
    if coords.is_empty() {
        return Err(Error::Argument(
            "cannot derive a grid from no coordinates".into(),
        ));
    }
    let mut min_lat = f64::INFINITY;
    let mut max_lat = f64::NEG_INFINITY;
    let mut min_lon = f64::INFINITY;
    let mut max_lon = f64::NEG_INFINITY;
    for &(lat, lon) in coords {
        min_lat = min_lat.min(lat);
        max_lat = max_lat.max(lat);
        min_lon = min_lon.min(lon);
        max_lon = max_lon.max(lon);
    }
    let origin_lat = min_lat - (margin_m / crate::geo::EARTH_RADIUS_M).to_degrees();
    let origin_lon = min_lon
        - (margin_m / (crate::geo::EARTH_RADIUS_M * origin_lat.to_radians().cos())).to_degrees();
    let far = project(max_lat, max_lon, origin_lat, origin_lon)?;
    GridSpec::new(
        origin_lat,
        origin_lon,
        far.x + margin_m,
        far.y + margin_m,
        cell_size_m,
    )
}

/// Isotropic 2D smoothing kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    /// Radius beyond which the kernel is treated as zero.
    pub fn truncation_radius(self, bandwidth_m: f64) -> f64 {
        match self {
            Kernel::Gaussian => 4.0 * bandwidth_m,
            Kernel::Epanechnikov => bandwidth_m,
        }
    }

    /// Kernel value at squared distance `d2`, normalized to unit mass on the
    /// untruncated plane.
    fn eval(self, d2: f64, bandwidth_m: f64) -> f64 {
        let h2 = bandwidth_m * bandwidth_m;
        match self {
            Kernel::Gaussian => (-d2 / (2.0 * h2)).exp() / (2.0 * std::f64::consts::PI * h2),
            Kernel::Epanechnikov => {
                let u2 = d2 / h2;
                if u2 >= 1.0 {
                    0.0
                } else {
                    2.0 / (std::f64::consts::PI * h2) * (1.0 - u2)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Kernel::Gaussian),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            other => Err(Error::Argument(format!("unknown kernel {other:?}"))),
        }
    }
}

/// A KDE surface: density per m^2 at each cell center, row-major with row 0
/// the southernmost row.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub bandwidth_m: f64,
    pub n_points: usize,
    pub kernel: Kernel,
}

impl DensityGrid {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[self.spec.index(row, col)]
    }

    /// Quadrature mass `sum(values) * cell_area`. Close to 1 for point sets
    /// well inside the grid; the shortfall is the off-grid leakage plus the
    /// kernel truncation loss.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area_m2()
    }
}

/// Computes the KDE of `points` on `spec`. Points may lie outside the grid;
/// only their on-grid kernel footprint contributes. Each cell accumulates
/// point contributions in input order, so the result is bit-reproducible.
pub fn kde(
    points: &[PlanarPoint],
    spec: &GridSpec,
    bandwidth_m: f64,
    kernel: Kernel,
) -> Result<DensityGrid> {
    if points.is_empty() {
        return Err(Error::Argument(
            "kde requires at least one point; handle empty windows explicitly".into(),
        ));
    }
    if !(bandwidth_m > 0.0) {
        return Err(Error::Argument(format!(
            "bandwidth must be positive, got {bandwidth_m}"
        )));
    }

    let mut acc = vec![0.0f64; spec.n_cells()];
    for p in points {
        splat(&mut acc, p, spec, bandwidth_m, kernel);
    }
    let n = points.len() as f64;
    let values = acc.into_iter().map(|v| v / n).collect();

    Ok(DensityGrid {
        spec: spec.clone(),
        values,
        bandwidth_m,
        n_points: points.len(),
        kernel,
    })
}

/// Adds one point's truncated kernel onto the accumulator. Shared by [`kde`]
/// and the permutation test's cached-footprint path so both produce identical
/// floating-point results.
pub(crate) fn splat(
    acc: &mut [f64],
    p: &PlanarPoint,
    spec: &GridSpec,
    bandwidth_m: f64,
    kernel: Kernel,
) {
    for (idx, contribution) in FootprintIter::new(p, spec, bandwidth_m, kernel) {
        acc[idx] += contribution;
    }
}

/// Iterates the (cell index, kernel value) pairs of one point's truncated
/// kernel footprint, in row-major order over the bounding box of the
/// truncation disk.
pub(crate) struct FootprintIter<'a> {
    spec: &'a GridSpec,
    p: PlanarPoint,
    bandwidth_m: f64,
    kernel: Kernel,
    radius2: f64,
    row_range: (usize, usize),
    col_range: (usize, usize),
    row: usize,
    col: usize,
    done: bool,
}

impl<'a> FootprintIter<'a> {
    pub(crate) fn new(
        p: &PlanarPoint,
        spec: &'a GridSpec,
        bandwidth_m: f64,
        kernel: Kernel,
    ) -> Self {
        let radius = kernel.truncation_radius(bandwidth_m);
        // Cell centers are at (i + 0.5) * cell; solve for the index range
        // whose centers can lie within the truncation radius.
        let lo_idx = |coord: f64| -> i64 { ((coord - radius) / spec.cell_size_m - 0.5).ceil() as i64 };
        let hi_idx = |coord: f64| -> i64 { ((coord + radius) / spec.cell_size_m - 0.5).floor() as i64 };
        let clamp = |v: i64, n: usize| -> usize { v.clamp(0, n.saturating_sub(1) as i64) as usize };

        let col_lo = lo_idx(p.x);
        let col_hi = hi_idx(p.x);
        let row_lo = lo_idx(p.y);
        let row_hi = hi_idx(p.y);
        let empty = col_hi < 0
            || row_hi < 0
            || col_lo >= spec.nx as i64
            || row_lo >= spec.ny as i64
            || col_lo > col_hi
            || row_lo > row_hi
            || spec.n_cells() == 0;

        let row_range = (clamp(row_lo, spec.ny), clamp(row_hi, spec.ny));
        let col_range = (clamp(col_lo, spec.nx), clamp(col_hi, spec.nx));
        Self {
            spec,
            p: *p,
            bandwidth_m,
            kernel,
            radius2: radius * radius,
            row_range,
            col_range,
            row: row_range.0,
            col: col_range.0,
            done: empty,
        }
    }
}

impl Iterator for FootprintIter<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        while !self.done {
            let (row, col) = (self.row, self.col);
            // advance
            if self.col == self.col_range.1 {
                self.col = self.col_range.0;
                if self.row == self.row_range.1 {
                    self.done = true;
                } else {
                    self.row += 1;
                }
            } else {
                self.col += 1;
            }

            let center = self.spec.cell_center(row, col);
            let dx = center.x - self.p.x;
            let dy = center.y - self.p.y;
            let d2 = dx * dx + dy * dy;
            if d2 <= self.radius2 {
                return Some((
                    self.spec.index(row, col),
                    self.kernel.eval(d2, self.bandwidth_m),
                ));
            }
        }
        None
    }
}

/// Bandwidth selection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `h = (2/3)^(1/6) * (sigma_x + sigma_y)/2 * n^(-1/6)`
    Silverman,
    /// `h = (sigma_x + sigma_y)/2 * n^(-1/6)`
    Scott,
    Fixed(f64),
}

/// Selects a bandwidth in meters for a 2D point set. Data-driven rules need
/// at least two points and positive spread; degenerate point sets get an
/// error suggesting `Fixed`.
pub fn select_bandwidth(points: &[PlanarPoint], rule: BandwidthRule) -> Result<f64> {
    match rule {
        BandwidthRule::Fixed(h) => {
            if !(h > 0.0) {
                return Err(Error::Argument(format!(
                    "fixed bandwidth must be positive, got {h}"
                )));
            }
            Ok(h)
        }
        BandwidthRule::Silverman | BandwidthRule::Scott => {
            let n = points.len();
            if n < 2 {
                return Err(Error::Argument(format!(
                    "data-driven bandwidth rules need at least 2 points, got {n}"
                )));
            }
            let nf = n as f64;
            let mean_x = points.iter().map(|p| p.x).sum::<f64>() / nf;
            let mean_y = points.iter().map(|p| p.y).sum::<f64>() / nf;
            let var_x =
                points.iter().map(|p| (p.x - mean_x).powi(2)).sum::<f64>() / (nf - 1.0);
            let var_y =
                points.iter().map(|p| (p.y - mean_y).powi(2)).sum::<f64>() / (nf - 1.0);
            let sigma_bar = (var_x.sqrt() + var_y.sqrt()) / 2.0;
            if !(sigma_bar > 0.0) {
                return Err(Error::DegenerateData(
                    "point set has zero spread; use a fixed bandwidth instead".into(),
                ));
            }
            let factor = match rule {
                BandwidthRule::Silverman => (2.0f64 / 3.0).powf(1.0 / 6.0),
                _ => 1.0,
            };
            Ok(factor * sigma_bar * nf.powf(-1.0 / 6.0))
        }
    }
}

impl BandwidthRule {
    pub fn name(&self) -> String {
        match self {
            BandwidthRule::Silverman => "silverman".into(),
            BandwidthRule::Scott => "scott".into(),
            BandwidthRule::Fixed(h) => format!("fixed:{h}"),
        }
    }

    /// Parses `silverman`, `scott`, or `fixed:<meters>`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "silverman" => Ok(BandwidthRule::Silverman),
            "scott" => Ok(BandwidthRule::Scott),
            other => {
                if let Some(h) = other.strip_prefix("fixed:") {
                    let h: f64 = h.parse().map_err(|_| {
                        Error::Argument(format!("unparseable fixed bandwidth {h:?}"))
                    })?;
                    Ok(BandwidthRule::Fixed(h))
                } else {
                    Err(Error::Argument(format!("unknown bandwidth rule {other:?}")))
                }
            }
        }
    }
}
