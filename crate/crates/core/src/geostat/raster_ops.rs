use serde::{Deserialize, Serialize};

use super::GeostatError;
use crate::geocore::Raster;
use crate::stats::{linear_fit, mean, quantile_sorted, sample_sd, FitDegeneracy};
use crate::Scalar;

/// Map summary in the layout of a map statistics table: μ, σ, min, max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterStats<T> {
    pub mean: T,
    pub sd: T,
    pub min: T,
    pub max: T,
    pub n_cells: usize,
}

pub fn raster_stats<T: Scalar>(r: &Raster<T>) -> Result<RasterStats<T>, GeostatError> {
    let v = r.present_values();
    if v.is_empty() {
        return Err(GeostatError::EmptyRaster);
    }
    let min = v.iter().copied().fold(T::infinity(), T::min);
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(RasterStats {
        mean: mean(&v).unwrap().max(min).min(max),
        sd: sample_sd(&v).unwrap_or_else(T::zero),
        min,
        max,
        n_cells: v.len(),
    })
}

/// Pixel-wise Pearson correlation over cells present in both rasters.
pub fn raster_pearson<T: Scalar>(a: &Raster<T>, b: &Raster<T>) -> Result<T, GeostatError> {
    if a.spec() != b.spec() {
        return Err(GeostatError::ShapeMismatch);
    }
    let (xs, ys): (Vec<T>, Vec<T>) = a
        .values()
        .iter()
        .zip(b.values())
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    match linear_fit(&xs, &ys) {
        Ok(fit) => Ok(fit.pearson_r),
        Err(FitDegeneracy::TooFewPoints) => Err(GeostatError::InsufficientData { needed: 2, got: xs.len() }),
        Err(_) => Err(GeostatError::UndefinedCorrelation),
    }
}

/// Quantile class breaks at `k / n_classes`, `k = 1..n_classes-1`.
pub fn quantile_classes<T: Scalar>(r: &Raster<T>, n_classes: usize) -> Result<Vec<T>, GeostatError> {
    if n_classes < 2 {
        return Err(GeostatError::Classing("need at least 2 classes".into()));
    }
    let mut v = r.present_values();
    if v.len() < n_classes {
        return Err(GeostatError::Classing(format!("{} cells for {} classes", v.len(), n_classes)));
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut distinct = v.clone();
    distinct.dedup();
    if distinct.len() < n_classes {
        return Err(GeostatError::Classing(format!(
            "{} distinct values for {} classes",
            distinct.len(),
            n_classes
        )));
    }
    let n = T::from_usize_lossy(n_classes);
    Ok((1..n_classes).map(|k| quantile_sorted(&v, T::from_usize_lossy(k) / n)).collect())
}

/// Class of `v` given ascending breaks: values above break `k-1` and at or
/// below break `k` fall in class `k`.
pub fn class_of<T: Scalar>(v: T, breaks: &[T]) -> usize {
    breaks.partition_point(|&b| b < v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram<T> {
    pub min: T,
    pub max: T,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]`; the last bin includes `max`.
pub fn histogram<T: Scalar>(r: &Raster<T>, n_bins: usize) -> Result<Histogram<T>, GeostatError> {
    if n_bins == 0 {
        return Err(GeostatError::InvalidParameter("n_bins must be >= 1".into()));
    }
    let v = r.present_values();
    if v.is_empty() {
        return Err(GeostatError::EmptyRaster);
    }
    let min = v.iter().copied().fold(T::infinity(), T::min);
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let width = (max - min) / T::from_usize_lossy(n_bins);
    let mut counts = vec![0usize; n_bins];
    for x in v {
        let k = if width > T::zero() {
            ((x - min) / width).floor().to_usize().unwrap_or(0).min(n_bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Ok(Histogram { min, max, counts })
}
