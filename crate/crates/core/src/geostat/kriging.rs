use serde::{Deserialize, Serialize};

use super::{GeostatError, SamplePoint, VariogramModel};
use crate::geocore::{GridSpec, Raster};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::Scalar;

pub const DEFAULT_NEIGHBORHOOD_K: usize = 32;
pub const DEFAULT_DEDUP_RADIUS_M: f64 = 0.05;
const JITTER_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingConfig<T> {
    /// Known stationary mean.
    pub mean_msm: T,
    pub neighborhood_k: usize,
    pub max_search_radius_m: T,
    pub dedup_radius_m: T,
}

impl<T: Scalar> KrigingConfig<T> {
    /// Defaults: 32 neighbours within three effective ranges.
    pub fn for_model(mean_msm: T, model: &VariogramModel<T>) -> Self {
        Self {
            mean_msm,
            neighborhood_k: DEFAULT_NEIGHBORHOOD_K,
            max_search_radius_m: T::lit(3.0) * model.effective_range(),
            dedup_radius_m: T::lit(DEFAULT_DEDUP_RADIUS_M),
        }
    }

    fn validate(&self) -> Result<(), GeostatError> {
        if self.neighborhood_k == 0 {
            return Err(GeostatError::InvalidParameter("neighborhood_k must be >= 1".into()));
        }
        if !(self.max_search_radius_m > T::zero()) || !(self.dedup_radius_m > T::zero()) {
            return Err(GeostatError::InvalidParameter("radii must be positive".into()));
        }
        if !self.mean_msm.is_finite() {
            return Err(GeostatError::InvalidParameter("mean must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingResult<T> {
    /// Predictions with the kriging variance layer.
    pub raster: Raster<T>,
    /// Cells solved only after diagonal regularization.
    pub jittered_cells: Vec<usize>,
    /// Cells left missing because even the regularized system failed.
    pub failed_cells: Vec<usize>,
}

/// Greedy merge of nearby points: each point joins the first earlier kept
/// point within `radius_m` (values averaged, anchor position kept), or
/// becomes a new kept point.
pub fn dedup_points<T: Scalar>(points: &[SamplePoint<T>], radius_m: T) -> Vec<SamplePoint<T>> {
    let r2 = radius_m * radius_m;
    let mut kept: Vec<(SamplePoint<T>, T, usize)> = Vec::new();
    for p in points {
        match kept.iter_mut().find(|(k, _, _)| k.position.distance_sq(&p.position) <= r2) {
            Some((_, sum, n)) => {
                *sum += p.value;
                *n += 1;
            }
            None => kept.push((*p, p.value, 1)),
        }
    }
    kept.into_iter()
        .map(|(k, sum, n)| SamplePoint::new(k.position, sum / T::from_usize_lossy(n)))
        .collect()
}

/// Indices of the `k` nearest points within `radius`, ordered by distance
/// then input index.
fn neighbours<T: Scalar>(points: &[SamplePoint<T>], at: &crate::geocore::PlanarPoint<T>, k: usize, r2: T) -> Vec<usize> {
    let mut cand: Vec<(T, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d2 = p.position.distance_sq(at);
            (d2 <= r2).then_some((d2, i))
        })
        .collect();
    let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1));
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, i)| i).collect()
}

enum CellOutcome<T> {
    Solved(T, T),
    Jittered(T, T),
    Failed,
}

fn krige_cell<T: Scalar>(
    points: &[SamplePoint<T>],
    idx: &[usize],
    at: &crate::geocore::PlanarPoint<T>,
    model: &VariogramModel<T>,
    mean: T,
) -> CellOutcome<T> {
    let sill = model.sill();
    if sill == T::zero() {
        return CellOutcome::Solved(mean, T::zero());
    }
    let n = idx.len();
    let mut a = DenseMatrix::from_fn(n, |i, j| {
        if i == j {
            sill
        } else {
            model.covariance(points[idx[i]].position.distance(&points[idx[j]].position))
        }
    });
    let c: Vec<T> = idx.iter().map(|&i| model.covariance(points[i].position.distance(at))).collect();
    let resid: Vec<T> = idx.iter().map(|&i| points[i].value - mean).collect();
    let finish = |ch: &Cholesky<T>| {
        let w = ch.solve(&c);
        let pred = mean + w.iter().zip(&resid).map(|(&l, &r)| l * r).sum::<T>();
        let var = sill - w.iter().zip(&c).map(|(&l, &ci)| l * ci).sum::<T>();
        (pred, var.max(T::zero()).min(sill))
    };
    match Cholesky::factor(&a) {
        Ok(ch) => {
            let (p, v) = finish(&ch);
            CellOutcome::Solved(p, v)
        }
        Err(_) => {
            a.add_to_diagonal(T::lit(JITTER_REL) * sill);
            match Cholesky::factor(&a) {
                Ok(ch) => {
                    let (p, v) = finish(&ch);
                    CellOutcome::Jittered(p, v)
                }
                Err(_) => CellOutcome::Failed,
            }
        }
    }
}

/// Simple kriging of `points` at every cell center of `grid`.
///
/// Each cell uses its `k` nearest points within the search radius and
/// solves `C λ = c`; prediction is `mean + λᵀ(z − mean)` and the kriging
/// variance `sill − λᵀc`. Cells without neighbours are missing. Cells are
/// independent and evaluated in storage order.
pub fn simple_krige<T: Scalar>(
    points: &[SamplePoint<T>],
    model: &VariogramModel<T>,
    cfg: &KrigingConfig<T>,
    grid: &GridSpec<T>,
) -> Result<KrigingResult<T>, GeostatError> {
    model.validate()?;
    cfg.validate()?;
    let r2 = cfg.max_search_radius_m * cfg.max_search_radius_m;
    let mut values = Vec::with_capacity(grid.n_cells());
    let mut variances = Vec::with_capacity(grid.n_cells());
    let mut jittered = Vec::new();
    let mut failed = Vec::new();
    for (cell, at) in grid.centers().iter().enumerate() {
        let idx = neighbours(points, at, cfg.neighborhood_k, r2);
        if idx.is_empty() {
            values.push(None);
            variances.push(None);
            continue;
        }
        match krige_cell(points, &idx, at, model, cfg.mean_msm) {
            CellOutcome::Solved(p, v) => {
                values.push(Some(p));
                variances.push(Some(v));
            }
            CellOutcome::Jittered(p, v) => {
                jittered.push(cell);
                values.push(Some(p));
                variances.push(Some(v));
            }
            CellOutcome::Failed => {
                failed.push(cell);
                values.push(None);
                variances.push(None);
            }
        }
    }
    Ok(KrigingResult {
        raster: Raster::new(*grid, values, Some(variances))?,
        jittered_cells: jittered,
        failed_cells: failed,
    })
}
