use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geocore::{GridSpec, PlanarPoint};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::VariogramModel;

/// Dense factorization limit.
pub const MAX_FIELD_CELLS: usize = 10_000;

/// A realized synthetic field on cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTruth {
    pub grid: GridSpec<f64>,
    /// Cell values in grid storage order.
    pub values: Vec<f64>,
    pub model: VariogramModel,
    pub field_mean: f64,
    pub seed: u64,
}

impl FieldTruth {
    /// Bilinear interpolation between cell centers. Positions outside the
    /// grid are clamped to the nearest edge; the flag reports that.
    pub fn sample(&self, p: &PlanarPoint<f64>) -> (f64, bool) {
        let g = &self.grid;
        let max = g.max_corner();
        let outside = p.x_m < g.origin.x_m || p.y_m < g.origin.y_m || p.x_m > max.x_m || p.y_m > max.y_m;
        let u = ((p.x_m - g.origin.x_m) / g.cell_size_m - 0.5).clamp(0.0, (g.n_cols - 1) as f64);
        let v = ((p.y_m - g.origin.y_m) / g.cell_size_m - 0.5).clamp(0.0, (g.n_rows - 1) as f64);
        let c0 = (u.floor() as usize).min(g.n_cols.saturating_sub(2));
        let r0 = (v.floor() as usize).min(g.n_rows.saturating_sub(2));
        let c1 = (c0 + 1).min(g.n_cols - 1);
        let r1 = (r0 + 1).min(g.n_rows - 1);
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let at = |c: usize, r: usize| self.values[r * g.n_cols + c];
        let bottom = at(c0, r0) * (1.0 - fu) + at(c1, r0) * fu;
        let top = at(c0, r1) * (1.0 - fu) + at(c1, r1) * fu;
        (bottom * (1.0 - fv) + top * fv, outside)
    }
}

/// Factorized covariance of a grid, reusable across seeds.
pub struct FieldGenerator {
    grid: GridSpec<f64>,
    model: VariogramModel,
    factor: Option<Cholesky<f64>>,
}

impl FieldGenerator {
    pub fn new(grid: GridSpec<f64>, model: VariogramModel) -> Result<Self, SimError> {
        model.validate().map_err(|e| SimError::Generation(e.to_string()))?;
        let n = grid.n_cells();
        if n > MAX_FIELD_CELLS {
            return Err(SimError::Generation(format!("{n} cells exceeds the {MAX_FIELD_CELLS}-cell dense limit")));
        }
        if model.sill() == 0.0 {
            return Ok(Self { grid, model, factor: None });
        }
        let centers = grid.centers();
        let mut cov = DenseMatrix::from_fn(n, |i, j| model.covariance(centers[i].distance(&centers[j])));
        let mut jitter = 0.0;
        for attempt in 0..6 {
            match Cholesky::factor(&cov) {
                Ok(factor) => return Ok(Self { grid, model, factor: Some(factor) }),
                Err(e) if attempt == 5 => {
                    return Err(SimError::Generation(format!(
                        "covariance not positive definite at pivot {} after jitter {jitter:e}",
                        e.pivot
                    )))
                }
                Err(_) => {
                    let next = model.sill() * 1e-10 * 10f64.powi(attempt);
                    cov.add_to_diagonal(next - jitter);
                    jitter = next;
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }

    pub fn draw(&self, mean: f64, seed: u64) -> FieldTruth {
        let values = match &self.factor {
            None => vec![mean; self.grid.n_cells()],
            Some(l) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let z: Vec<f64> = (0..l.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
                l.mul_lower(&z).into_iter().map(|x| mean + x).collect()
            }
        };
        FieldTruth { grid: self.grid, values, model: self.model, field_mean: mean, seed }
    }
}

/// Gaussian random field with the model's covariance between cell centers.
pub fn generate_field(grid: GridSpec<f64>, model: VariogramModel, mean: f64, seed: u64) -> Result<FieldTruth, SimError> {
    Ok(FieldGenerator::new(grid, model)?.draw(mean, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec<f64> {
        GridSpec::new(PlanarPoint::new(0.0, 0.0), 1.0, n, n).unwrap()
    }

    #[test]
    fn zero_sill_is_constant() {
        let f = generate_field(grid(5), VariogramModel::new(0.0, 0.0, 3.0).unwrap(), 19.0, 1).unwrap();
        assert!(f.values.iter().all(|&v| v == 19.0));
    }

    #[test]
    fn same_seed_same_field() {
        let m = VariogramModel::new(0.1, 2.0, 3.0).unwrap();
        let a = generate_field(grid(12), m, 10.0, 42).unwrap();
        let b = generate_field(grid(12), m, 10.0, 42).unwrap();
        let c = generate_field(grid(12), m, 10.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn too_many_cells() {
        let g = GridSpec::new(PlanarPoint::new(0.0, 0.0), 1.0, 101, 100).unwrap();
        assert!(matches!(
            FieldGenerator::new(g, VariogramModel::new(0.0, 1.0, 1.0).unwrap()),
            Err(SimError::Generation(_))
        ));
    }

    #[test]
    fn bilinear_sampling() {
        let g = GridSpec::new(PlanarPoint::new(0.0, 0.0), 1.0, 2, 2).unwrap();
        let f = FieldTruth {
            grid: g,
            values: vec![0.0, 1.0, 2.0, 3.0],
            model: VariogramModel::new(0.0, 1.0, 1.0).unwrap(),
            field_mean: 0.0,
            seed: 0,
        };
        assert_eq!(f.sample(&PlanarPoint::new(0.5, 0.5)), (0.0, false));
        assert_eq!(f.sample(&PlanarPoint::new(1.0, 1.0)), (1.5, false));
        assert_eq!(f.sample(&PlanarPoint::new(1.5, 0.5)), (1.0, false));
        assert_eq!(f.sample(&PlanarPoint::new(0.1, 1.9)), (2.0, false));
        assert_eq!(f.sample(&PlanarPoint::new(5.0, 1.5)), (3.0, true));
    }
}
