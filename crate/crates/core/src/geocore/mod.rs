//! Geodetic to local planar coordinates, grid geometry and raster storage.

mod export;

pub use export::{format_sig6, points_geojson, read_ascii_grid, write_ascii_grid, GeoJsonPoint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// Mean Earth radius used by the local projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Maximum datum distance for which the local tangent plane is trusted.
pub const MAX_PROJECTION_DISTANCE_M: f64 = 10_000.0;
/// Planar coordinate magnitude guard.
pub const MAX_PLANAR_COORD_M: f64 = 1.0e5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: latitude {lat}, longitude {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point is {distance_m:.1} m from the datum, beyond the {max_m} m local-plane limit")]
    ProjectionDomain { distance_m: f64, max_m: f64 },
    #[error("planar coordinate ({x}, {y}) outside the local frame")]
    PlanarOutOfRange { x: f64, y: f64 },
    #[error("empty extent: grid bounds have zero or negative width or height")]
    EmptyExtent,
    #[error("cell size must be positive and finite")]
    InvalidCellSize,
    #[error("cell index ({col}, {row}) outside a {n_cols}x{n_rows} grid")]
    IndexOutOfRange { col: usize, row: usize, n_cols: usize, n_rows: usize },
    #[error("raster layer has {got} cells, grid has {expected}")]
    LayerLength { expected: usize, got: usize },
    #[error("negative kriging variance at cell {index}")]
    NegativeVariance { index: usize },
    #[error("malformed ASCII grid: {0}")]
    AsciiGrid(String),
}

/// WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
}

impl GeoPoint {
    pub fn new(latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeoError> {
        let p = Self { latitude_deg, longitude_deg };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let ok = self.latitude_deg.is_finite()
            && self.longitude_deg.is_finite()
            && (-90.0..=90.0).contains(&self.latitude_deg)
            && (-180.0..=180.0).contains(&self.longitude_deg);
        if ok {
            Ok(())
        } else {
            Err(GeoError::InvalidCoordinate { lat: self.latitude_deg, lon: self.longitude_deg })
        }
    }

    /// Great-circle distance on the projection sphere.
    pub fn haversine_m(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.latitude_deg.to_radians(), other.latitude_deg.to_radians());
        let dp = p2 - p1;
        let dl = (other.longitude_deg - self.longitude_deg).to_radians();
        let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
    }
}

/// Meters east (`x_m`) and north (`y_m`) of a datum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint<T> {
    pub x_m: T,
    pub y_m: T,
}

impl<T: Scalar> PlanarPoint<T> {
    pub fn new(x_m: T, y_m: T) -> Self {
        Self { x_m, y_m }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }

    pub fn distance_sq(&self, other: &Self) -> T {
        let dx = self.x_m - other.x_m;
        let dy = self.y_m - other.y_m;
        dx * dx + dy * dy
    }

    pub fn is_valid(&self) -> bool {
        let lim = T::lit(MAX_PLANAR_COORD_M);
        self.x_m.is_finite() && self.y_m.is_finite() && self.x_m.abs() < lim && self.y_m.abs() < lim
    }
}

/// Equirectangular projection about `datum`.
pub fn project_to_plane(datum: &GeoPoint, p: &GeoPoint) -> Result<PlanarPoint<f64>, GeoError> {
    datum.validate()?;
    p.validate()?;
    let d = datum.haversine_m(p);
    if d >= MAX_PROJECTION_DISTANCE_M {
        return Err(GeoError::ProjectionDomain { distance_m: d, max_m: MAX_PROJECTION_DISTANCE_M });
    }
    let dlat = (p.latitude_deg - datum.latitude_deg).to_radians();
    let dlon = (p.longitude_deg - datum.longitude_deg).to_radians();
    Ok(PlanarPoint {
        x_m: EARTH_RADIUS_M * datum.latitude_deg.to_radians().cos() * dlon,
        y_m: EARTH_RADIUS_M * dlat,
    })
}

/// Inverse of [`project_to_plane`].
pub fn unproject(datum: &GeoPoint, p: &PlanarPoint<f64>) -> Result<GeoPoint, GeoError> {
    datum.validate()?;
    if !p.is_valid() {
        return Err(GeoError::PlanarOutOfRange { x: p.x_m, y: p.y_m });
    }
    let lat = datum.latitude_deg + (p.y_m / EARTH_RADIUS_M).to_degrees();
    let lon = datum.longitude_deg
        + (p.x_m / (EARTH_RADIUS_M * datum.latitude_deg.to_radians().cos())).to_degrees();
    GeoPoint::new(lat, lon)
}

/// Regular square-cell grid. Row 0 is the southernmost row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    /// Lower-left corner of cell (0, 0).
    pub origin: PlanarPoint<T>,
    pub cell_size_m: T,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(origin: PlanarPoint<T>, cell_size_m: T, n_cols: usize, n_rows: usize) -> Result<Self, GeoError> {
        if !(cell_size_m > T::zero()) || !cell_size_m.is_finite() {
            return Err(GeoError::InvalidCellSize);
        }
        if n_cols == 0 || n_rows == 0 {
            return Err(GeoError::EmptyExtent);
        }
        Ok(Self { origin, cell_size_m, n_cols, n_rows })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn width_m(&self) -> T {
        self.cell_size_m * T::from_usize_lossy(self.n_cols)
    }

    pub fn height_m(&self) -> T {
        self.cell_size_m * T::from_usize_lossy(self.n_rows)
    }

    /// Upper-right corner of the grid.
    pub fn max_corner(&self) -> PlanarPoint<T> {
        PlanarPoint::new(self.origin.x_m + self.width_m(), self.origin.y_m + self.height_m())
    }

    pub fn index(&self, col: usize, row: usize) -> Result<usize, GeoError> {
        if col >= self.n_cols || row >= self.n_rows {
            return Err(GeoError::IndexOutOfRange { col, row, n_cols: self.n_cols, n_rows: self.n_rows });
        }
        Ok(row * self.n_cols + col)
    }

    /// Inverse of [`GridSpec::index`].
    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.n_cols, index / self.n_cols)
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Result<PlanarPoint<T>, GeoError> {
        self.index(col, row)?;
        let half = T::lit(0.5);
        Ok(PlanarPoint::new(
            self.origin.x_m + (T::from_usize_lossy(col) + half) * self.cell_size_m,
            self.origin.y_m + (T::from_usize_lossy(row) + half) * self.cell_size_m,
        ))
    }

    /// Cell containing `p`; the upper and right grid edges belong to the last cell.
    pub fn cell_of(&self, p: &PlanarPoint<T>) -> Option<(usize, usize)> {
        let fx = (p.x_m - self.origin.x_m) / self.cell_size_m;
        let fy = (p.y_m - self.origin.y_m) / self.cell_size_m;
        let nc = T::from_usize_lossy(self.n_cols);
        let nr = T::from_usize_lossy(self.n_rows);
        if !(fx >= T::zero() && fy >= T::zero() && fx <= nc && fy <= nr) {
            return None;
        }
        let col = fx.floor().to_usize()?.min(self.n_cols - 1);
        let row = fy.floor().to_usize()?.min(self.n_rows - 1);
        Some((col, row))
    }

    /// All cell centers in storage order.
    pub fn centers(&self) -> Vec<PlanarPoint<T>> {
        (0..self.n_cells())
            .map(|i| {
                let (c, r) = self.col_row(i);
                self.cell_center(c, r).expect("index in range")
            })
            .collect()
    }
}

/// Smallest grid anchored at `min` that covers the bounding box.
pub fn grid_from_bounds<T: Scalar>(
    min: PlanarPoint<T>,
    max: PlanarPoint<T>,
    cell_size_m: T,
) -> Result<GridSpec<T>, GeoError> {
    if !(cell_size_m > T::zero()) || !cell_size_m.is_finite() {
        return Err(GeoError::InvalidCellSize);
    }
    if !(max.x_m > min.x_m) || !(max.y_m > min.y_m) {
        return Err(GeoError::EmptyExtent);
    }
    let n_cols = ((max.x_m - min.x_m) / cell_size_m).ceil().to_usize().ok_or(GeoError::EmptyExtent)?;
    let n_rows = ((max.y_m - min.y_m) / cell_size_m).ceil().to_usize().ok_or(GeoError::EmptyExtent)?;
    GridSpec::new(min, cell_size_m, n_cols.max(1), n_rows.max(1))
}

/// Grid-aligned raster of values (mS/m) with an optional variance layer.
/// `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    spec: GridSpec<T>,
    values: Vec<Option<T>>,
    variances: Option<Vec<Option<T>>>,
}

impl<T: Scalar> Raster<T> {
    pub fn new(spec: GridSpec<T>, values: Vec<Option<T>>, variances: Option<Vec<Option<T>>>) -> Result<Self, GeoError> {
        let expected = spec.n_cells();
        if values.len() != expected {
            return Err(GeoError::LayerLength { expected, got: values.len() });
        }
        if let Some(vars) = &variances {
            if vars.len() != expected {
                return Err(GeoError::LayerLength { expected, got: vars.len() });
            }
            if let Some(index) = vars.iter().position(|v| matches!(v, Some(x) if *x < T::zero())) {
                return Err(GeoError::NegativeVariance { index });
            }
        }
        Ok(Self { spec, values, variances })
    }

    pub fn from_values(spec: GridSpec<T>, values: Vec<T>) -> Result<Self, GeoError> {
        Self::new(spec, values.into_iter().map(Some).collect(), None)
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn values(&self) -> &[Option<T>] {
        &self.values
    }

    pub fn variances(&self) -> Option<&[Option<T>]> {
        self.variances.as_deref()
    }

    pub fn get(&self, col: usize, row: usize) -> Result<Option<T>, GeoError> {
        Ok(self.values[self.spec.index(col, row)?])
    }

    /// Non-missing values in storage order.
    pub fn present_values(&self) -> Vec<T> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn n_present(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Copy of the raster with `f` applied to every present value.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
            variances: self.variances.clone(),
        }
    }
}
