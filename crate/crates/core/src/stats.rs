//! Small descriptive statistics shared by screening, calibration and geostat.

use serde::{Deserialize, Serialize};

use crate::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let sum: T = xs.iter().copied().sum();
    Some(sum / T::from_usize_lossy(xs.len()))
}

/// Sample standard deviation (n - 1 denominator). `None` for fewer than two values.
pub fn sample_sd<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some((ss / T::from_usize_lossy(xs.len() - 1)).sqrt())
}

/// Ordinary least squares fit of `y = slope * x + intercept`, with the
/// Pearson correlation of the two series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub pearson_r: T,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitDegeneracy {
    TooFewPoints,
    LengthMismatch,
    ZeroVarianceX,
    ZeroVarianceY,
}

/// OLS of `ys` on `xs`. Requires both series to vary.
pub fn linear_fit<T: Scalar>(xs: &[T], ys: &[T]) -> Result<LinearFit<T>, FitDegeneracy> {
    if xs.len() != ys.len() {
        return Err(FitDegeneracy::LengthMismatch);
    }
    if xs.len() < 2 {
        return Err(FitDegeneracy::TooFewPoints);
    }
    let mx = mean(xs).unwrap();
    let my = mean(ys).unwrap();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= T::zero() {
        return Err(FitDegeneracy::ZeroVarianceX);
    }
    if syy <= T::zero() {
        return Err(FitDegeneracy::ZeroVarianceY);
    }
    let slope = sxy / sxx;
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        pearson_r: r,
        n: xs.len(),
    })
}

/// Linear-interpolation quantile of already sorted data (`(n-1)·p` rule).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = T::from_usize_lossy(n - 1) * p;
    let lo = h.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_idx = (lo_idx + 1).min(n - 1);
    let frac = h - lo;
    sorted[lo_idx] + frac * (sorted[hi_idx] - sorted[lo_idx])
}
