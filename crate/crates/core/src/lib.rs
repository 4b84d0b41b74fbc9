//! Processing toolkit for geo-referenced soil apparent electrical
//! conductivity (ECa) surveys collected by hand or by a small ground robot.
//!
//! The crate covers the whole chain from raw logger CSV files to classified
//! maps:
//!
//! * [`geocore`]: local planar projection, grid geometry, rasters and their
//!   ESRI ASCII / GeoJSON exports.
//! * [`ingest`]: survey/pose CSV parsing and stream synchronization.
//! * [`screening`]: log-domain ±2.5σ outlier rejection.
//! * [`calibration`]: robot-induced bias quantification (paired surveys and
//!   the distance-interference table).
//! * [`geostat`]: empirical variograms, exponential model fitting, simple
//!   kriging and raster statistics.
//! * [`fieldsim`]: synthetic truth fields and virtual robot/hand-held surveys.
//! * [`pipeline`] and [`render`]: end-to-end orchestration and PNG maps.
//!
//! Numerical code is generic over the floating point type through
//! [`Scalar`]; the aliases below fix it to `f64`, which is what the
//! pipeline uses.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod fieldsim;
pub mod geocore;
pub mod geostat;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod render;
pub mod scalar;
pub mod screening;
pub mod stats;

pub use scalar::Scalar;

pub type PlanarPoint = geocore::PlanarPoint<f64>;
pub type GridSpec = geocore::GridSpec<f64>;
pub type Raster = geocore::Raster<f64>;
pub type VariogramModel = geostat::VariogramModel<f64>;
pub type EmpiricalVariogram = geostat::EmpiricalVariogram<f64>;
pub type KrigingConfig = geostat::KrigingConfig<f64>;
pub type SamplePoint = geostat::SamplePoint<f64>;
pub type RasterStats = geostat::RasterStats<f64>;
pub type ScreeningReport = screening::ScreeningReport<f64>;

pub type PlanarPoint32 = geocore::PlanarPoint<f32>;
pub type GridSpec32 = geocore::GridSpec<f32>;
pub type Raster32 = geocore::Raster<f32>;
pub type VariogramModel32 = geostat::VariogramModel<f32>;
pub type SamplePoint32 = geostat::SamplePoint<f32>;

pub use geocore::GeoPoint;
pub use ingest::{Survey, SurveyRecord, SurveySource};
