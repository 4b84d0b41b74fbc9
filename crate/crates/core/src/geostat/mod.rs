//! Variogram estimation and fitting, simple kriging, and raster summaries.

mod kriging;
mod raster_ops;
mod variogram;

pub use kriging::{
    dedup_points, simple_krige, KrigingConfig, KrigingResult, DEFAULT_DEDUP_RADIUS_M, DEFAULT_NEIGHBORHOOD_K,
};
pub use raster_ops::{class_of, histogram, quantile_classes, raster_pearson, raster_stats, Histogram, RasterStats};
pub use variogram::{
    empirical_variogram, fit_exponential, EmpiricalVariogram, FitStatus, VariogramBin, VariogramFit, VariogramModel,
    DEFAULT_BIN_WIDTH_M, DEFAULT_MAX_LAG_M,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geocore::{GeoError, PlanarPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeostatError {
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid variogram model: {0}")]
    InvalidModel(String),
    #[error("variogram fit did not converge (weighted residual {residual})")]
    FitNonConvergence { residual: f64 },
    #[error("raster has no non-missing cells")]
    EmptyRaster,
    #[error("rasters are on different grids")]
    ShapeMismatch,
    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,
    #[error("cannot class raster: {0}")]
    Classing(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// A measured value at a planar location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint<T> {
    pub position: PlanarPoint<T>,
    pub value: T,
}

impl<T> SamplePoint<T> {
    pub fn new(position: PlanarPoint<T>, value: T) -> Self {
        Self { position, value }
    }
}
