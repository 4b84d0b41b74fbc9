use serde::{Deserialize, Serialize};

use super::{GeostatError, SamplePoint};
use crate::Scalar;

pub const DEFAULT_BIN_WIDTH_M: f64 = 1.0;
pub const DEFAULT_MAX_LAG_M: f64 = 25.0;

const RANGE_GRID_SIZE: usize = 16;
const IRLS_ITERATIONS: usize = 60;
const GOLDEN_ITERATIONS: usize = 80;
const POLISH_ITERATIONS: usize = 600;

/// Exponential semivariogram `γ(h) = c0 + c1·(1 − exp(−h/a))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel<T> {
    pub nugget: T,
    pub partial_sill: T,
    /// Range parameter `a`; the effective (95%) range is `3a`.
    pub range_m: T,
}

impl<T: Scalar> VariogramModel<T> {
    pub fn new(nugget: T, partial_sill: T, range_m: T) -> Result<Self, GeostatError> {
        let m = Self { nugget, partial_sill, range_m };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeostatError> {
        if !(self.nugget >= T::zero()) || !self.nugget.is_finite() {
            return Err(GeostatError::InvalidModel("nugget must be finite and >= 0".into()));
        }
        if !(self.partial_sill >= T::zero()) || !self.partial_sill.is_finite() {
            return Err(GeostatError::InvalidModel("partial sill must be finite and >= 0".into()));
        }
        if !(self.range_m > T::zero()) || !self.range_m.is_finite() {
            return Err(GeostatError::InvalidModel("range must be finite and > 0".into()));
        }
        Ok(())
    }

    pub fn sill(&self) -> T {
        self.nugget + self.partial_sill
    }

    pub fn effective_range(&self) -> T {
        T::lit(3.0) * self.range_m
    }

    /// Semivariance; zero at `h = 0`.
    pub fn gamma(&self, h: T) -> T {
        if h <= T::zero() {
            return T::zero();
        }
        self.nugget + self.partial_sill * (T::one() - (-h / self.range_m).exp())
    }

    /// Covariance `C(h) = sill − γ(h)` with `C(0) = sill`.
    pub fn covariance(&self, h: T) -> T {
        if h <= T::zero() {
            self.sill()
        } else {
            self.partial_sill * (-h / self.range_m).exp()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin<T> {
    /// Mean separation of the pairs in the bin.
    pub lag_center_m: T,
    pub gamma: T,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram<T> {
    pub bins: Vec<VariogramBin<T>>,
    pub max_lag_m: T,
    pub bin_width_m: T,
}

/// Matheron estimator. Pairs with separation `h ∈ (0, max_lag]` go to bin
/// `round(h / bin_width)`, so bin `k` collects lags near `k·bin_width`;
/// empty bins are omitted.
pub fn empirical_variogram<T: Scalar>(
    points: &[SamplePoint<T>],
    bin_width_m: T,
    max_lag_m: T,
) -> Result<EmpiricalVariogram<T>, GeostatError> {
    if points.len() < 2 {
        return Err(GeostatError::InsufficientData { needed: 2, got: points.len() });
    }
    if !(bin_width_m > T::zero()) || !(max_lag_m > T::zero()) {
        return Err(GeostatError::InvalidParameter("bin width and max lag must be positive".into()));
    }
    let n_bins = (max_lag_m / bin_width_m + T::lit(0.5)).floor().to_usize().unwrap_or(0) + 1;
    let mut sum_sq = vec![T::zero(); n_bins];
    let mut sum_h = vec![T::zero(); n_bins];
    let mut count = vec![0usize; n_bins];
    let max_sq = max_lag_m * max_lag_m;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d2 = a.position.distance_sq(&b.position);
            if d2 <= T::zero() || d2 > max_sq {
                continue;
            }
            let h = d2.sqrt();
            let k = (h / bin_width_m).round().to_usize().unwrap_or(usize::MAX);
            if k >= n_bins {
                continue;
            }
            let dz = a.value - b.value;
            sum_sq[k] += dz * dz;
            sum_h[k] += h;
            count[k] += 1;
        }
    }
    let two = T::lit(2.0);
    let bins = (0..n_bins)
        .filter(|&k| count[k] > 0)
        .map(|k| {
            let n = T::from_usize_lossy(count[k]);
            VariogramBin { lag_center_m: sum_h[k] / n, gamma: sum_sq[k] / (two * n), n_pairs: count[k] }
        })
        .collect();
    Ok(EmpiricalVariogram { bins, max_lag_m, bin_width_m })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Best fit has no spatial structure (`c1 ≈ 0`).
    NuggetOnly,
    /// Every bin has γ̂ = 0; returned model is flat with zero sill.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit<T> {
    pub model: VariogramModel<T>,
    pub status: FitStatus,
    /// Cressie-weighted residual `Σ n·(γ̂ − γ)² / γ²` at the optimum.
    pub weighted_residual: T,
}

struct Bins<T> {
    h: Vec<T>,
    g: Vec<T>,
    n: Vec<T>,
}

impl<T: Scalar> Bins<T> {
    fn cressie(&self, c0: T, c1: T, a: T) -> T {
        let floor = self.floor();
        let mut s = T::zero();
        for i in 0..self.h.len() {
            let m = (c0 + c1 * (T::one() - (-self.h[i] / a).exp())).max(floor);
            let r = self.g[i] - m;
            s += self.n[i] * r * r / (m * m);
        }
        s
    }

    fn floor(&self) -> T {
        let max_g = self.g.iter().copied().fold(T::zero(), T::max);
        max_g * T::lit(1e-12)
    }

    /// Partial sill and nugget for a fixed range by iteratively reweighted,
    /// non-negative least squares with weights `n / γ²`.
    fn fit_for_range(&self, a: T) -> (T, T) {
        let floor = self.floor();
        let f: Vec<T> = self.h.iter().map(|&h| T::one() - (-h / a).exp()).collect();
        let mut model: Vec<T> = self.g.iter().map(|&g| g.max(floor)).collect();
        let (mut c0, mut c1) = (T::zero(), T::zero());
        for iter in 0..IRLS_ITERATIONS {
            let w: Vec<T> = self.n.iter().zip(&model).map(|(&n, &m)| n / (m * m)).collect();
            let (n0, n1) = nnls2(&w, &f, &self.g);
            let done = iter > 0 && (n0 - c0).abs() <= T::epsilon() * n0.abs().max(T::one())
                && (n1 - c1).abs() <= T::epsilon() * n1.abs().max(T::one());
            c0 = n0;
            c1 = n1;
            if done {
                break;
            }
            for (m, &fi) in model.iter_mut().zip(&f) {
                *m = (c0 + c1 * fi).max(floor);
            }
        }
        (c0, c1)
    }

    fn objective(&self, a: T) -> (T, T, T) {
        let (c0, c1) = self.fit_for_range(a);
        (self.cressie(c0, c1, a), c0, c1)
    }
}

/// Weighted least squares of `y ≈ c0 + c1·f` with `c0, c1 ≥ 0`.
fn nnls2<T: Scalar>(w: &[T], f: &[T], y: &[T]) -> (T, T) {
    let (mut sw, mut swf, mut swff, mut swy, mut swfy) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..w.len() {
        sw += w[i];
        swf += w[i] * f[i];
        swff += w[i] * f[i] * f[i];
        swy += w[i] * y[i];
        swfy += w[i] * f[i] * y[i];
    }
    let sse = |c0: T, c1: T| -> T {
        (0..w.len()).map(|i| {
            let r = y[i] - c0 - c1 * f[i];
            w[i] * r * r
        }).sum()
    };
    let det = sw * swff - swf * swf;
    if det > T::epsilon() * sw * swff {
        let c0 = (swy * swff - swf * swfy) / det;
        let c1 = (sw * swfy - swf * swy) / det;
        if c0 >= T::zero() && c1 >= T::zero() {
            return (c0, c1);
        }
    }
    let mut best = (T::zero(), T::zero());
    let mut best_sse = sse(T::zero(), T::zero());
    let mut consider = |c0: T, c1: T| {
        if c0 >= T::zero() && c1 >= T::zero() {
            let s = sse(c0, c1);
            if s < best_sse {
                best_sse = s;
                best = (c0, c1);
            }
        }
    };
    if sw > T::zero() {
        consider(swy / sw, T::zero());
    }
    if swff > T::zero() {
        consider(T::zero(), swfy / swff);
    }
    best
}

/// Nelder-Mead on `(c0, c1, ln a)` from the profiled optimum. Reweighting
/// converges to a fixed point close to, but not exactly at, the minimum of
/// the Cressie objective; this closes the gap. Negative sills are clamped to
/// zero and `ln a` to `[lo, hi]`. Returns the start if nothing improves.
fn polish<T: Scalar>(bins: &Bins<T>, start: (T, T, T, T), lo: T, hi: T) -> (T, T, T, T) {
    let (j0, c0, c1, a0) = start;
    if !j0.is_finite() {
        return start;
    }
    let clamp = |p: [T; 3]| [p[0].max(T::zero()), p[1].max(T::zero()), p[2].max(lo).min(hi)];
    let eval = |p: [T; 3]| {
        let q = clamp(p);
        bins.cressie(q[0], q[1], q[2].exp())
    };
    let scale = (c0 + c1).max(T::lit(1e-12));
    let x0 = [c0, c1, a0.ln()];
    let mut simplex: Vec<([T; 3], T)> = vec![(x0, eval(x0))];
    for (k, d) in [scale * T::lit(0.05), scale * T::lit(0.05), T::lit(0.05)].into_iter().enumerate() {
        let mut x = x0;
        x[k] += d;
        simplex.push((x, eval(x)));
    }
    let centroid = |s: &[([T; 3], T)]| -> [T; 3] {
        let mut c = [T::zero(); 3];
        for (x, _) in &s[..3] {
            for k in 0..3 {
                c[k] += x[k] / T::lit(3.0);
            }
        }
        c
    };
    let along = |c: [T; 3], x: [T; 3], t: T| -> [T; 3] { std::array::from_fn(|k| c[k] + t * (x[k] - c[k])) };
    for _ in 0..POLISH_ITERATIONS {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if (simplex[3].1 - simplex[0].1).abs() <= T::epsilon() * simplex[0].1.abs().max(T::epsilon()) {
            break;
        }
        let c = centroid(&simplex);
        let worst = simplex[3];
        let r = along(c, worst.0, -T::one());
        let fr = eval(r);
        if fr < simplex[0].1 {
            let e = along(c, worst.0, T::lit(-2.0));
            let fe = eval(e);
            simplex[3] = if fe < fr { (e, fe) } else { (r, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (r, fr);
        } else {
            let t = if fr < worst.1 { T::lit(-0.5) } else { T::lit(0.5) };
            let k = along(c, worst.0, t);
            let fk = eval(k);
            if fk < worst.1.min(fr) {
                simplex[3] = (k, fk);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    v.0 = along(best, v.0, T::lit(0.5));
                    v.1 = eval(v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, j) = simplex[0];
    if j < j0 {
        let q = clamp(x);
        (j, q[0], q[1], q[2].exp())
    } else {
        start
    }
}

/// Fits an exponential model by Cressie-weighted least squares.
///
/// The range is searched on a fixed log-spaced grid between the bin width
/// and the maximum lag, then refined by golden-section search around the
/// best grid node. Nugget and partial sill are profiled out for each
/// candidate range, and a final simplex pass refines all three jointly.
/// The procedure has no random component.
pub fn fit_exponential<T: Scalar>(ev: &EmpiricalVariogram<T>) -> Result<VariogramFit<T>, GeostatError> {
    if ev.bins.len() < 3 {
        return Err(GeostatError::InsufficientData { needed: 3, got: ev.bins.len() });
    }
    let bins = Bins {
        h: ev.bins.iter().map(|b| b.lag_center_m).collect(),
        g: ev.bins.iter().map(|b| b.gamma).collect(),
        n: ev.bins.iter().map(|b| T::from_usize_lossy(b.n_pairs)).collect(),
    };
    if bins.g.iter().all(|&g| g == T::zero()) {
        let model = VariogramModel { nugget: T::zero(), partial_sill: T::zero(), range_m: ev.bin_width_m };
        return Ok(VariogramFit { model, status: FitStatus::Degenerate, weighted_residual: T::zero() });
    }
    if bins.g.iter().any(|g| !g.is_finite() || *g < T::zero()) {
        return Err(GeostatError::InvalidParameter("semivariances must be finite and non-negative".into()));
    }

    let lo = ev.bin_width_m.ln();
    let hi = ev.max_lag_m.max(ev.bin_width_m * T::lit(2.0)).ln();
    let step = (hi - lo) / T::from_usize_lossy(RANGE_GRID_SIZE - 1);
    let grid: Vec<T> = (0..RANGE_GRID_SIZE).map(|i| lo + step * T::from_usize_lossy(i)).collect();
    let mut best_i = 0;
    let mut best_j = T::infinity();
    for (i, &la) in grid.iter().enumerate() {
        let (j, _, _) = bins.objective(la.exp());
        if j < best_j {
            best_j = j;
            best_i = i;
        }
    }
    if !best_j.is_finite() {
        return Err(GeostatError::FitNonConvergence { residual: best_j.to_f64_lossy() });
    }

    // golden-section on log(a) within the neighbouring grid nodes
    let mut a_lo = grid[best_i.saturating_sub(1)];
    let mut a_hi = grid[(best_i + 1).min(RANGE_GRID_SIZE - 1)];
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let mut x1 = a_hi - inv_phi * (a_hi - a_lo);
    let mut x2 = a_lo + inv_phi * (a_hi - a_lo);
    let mut f1 = bins.objective(x1.exp()).0;
    let mut f2 = bins.objective(x2.exp()).0;
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 <= f2 {
            a_hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = a_hi - inv_phi * (a_hi - a_lo);
            f1 = bins.objective(x1.exp()).0;
        } else {
            a_lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = a_lo + inv_phi * (a_hi - a_lo);
            f2 = bins.objective(x2.exp()).0;
        }
    }
    let mut candidates = vec![grid[best_i], x1, x2];
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut best = (T::infinity(), T::zero(), T::zero(), T::zero());
    for la in candidates {
        let a = la.exp();
        let (j, c0, c1) = bins.objective(a);
        if j < best.0 {
            best = (j, c0, c1, a);
        }
    }
    let (residual, c0, c1, a) = polish(&bins, best, lo, hi);
    if !residual.is_finite() {
        return Err(GeostatError::FitNonConvergence { residual: residual.to_f64_lossy() });
    }
    let sill = c0 + c1;
    let status = if c1 <= sill * T::lit(1e-9) { FitStatus::NuggetOnly } else { FitStatus::Converged };
    Ok(VariogramFit {
        model: VariogramModel { nugget: c0, partial_sill: c1, range_m: a },
        status,
        weighted_residual: residual,
    })
}
